//! Analytic scenes with exact reference renders, camera files and view splits.

mod fixtures;
mod oracle;
mod poses;
mod protocol;

use std::path::PathBuf;

use thiserror::Error;

use crate::rendering::{Camera, Image};

pub use self::fixtures::{
    hemisphere_rig, make_fixture, Fixture, FixtureRig, CAMERA_RADIUS, FIXTURE_DENSITY, FIXTURE_FAR, FIXTURE_FOV_X, FIXTURE_NAMES,
    FIXTURE_NEAR, FIXTURE_TEST_VIEWS,
};
pub use self::oracle::{oracle_render, OracleSample, Primitive, SceneOracle, Shape};
pub use self::poses::{load_pose_file, save_pose_file, PoseFileOptions};
pub use self::protocol::{
    evenly_spaced, select_views, Protocol, Split, BLENDER_TEST_COUNT, BLENDER_TRAIN_IDS, DTU_TEST_IDS, DTU_TRAIN_IDS,
    LLFF_HOLDOUT_STRIDE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("unknown fixture {name:?} (known: {known})")]
    UnknownFixture { name: String, known: String },
    #[error("malformed camera file: {0}")]
    Malformed(String),
    #[error("image file not found: {}", .0.display())]
    MissingImage(PathBuf),
    #[error("frame {frame}: pose matrix is not invertible")]
    NonInvertiblePose { frame: usize },
    #[error("frame {frame}: {reason}")]
    InvalidPose { frame: usize, reason: String },
    #[error("view id {id} out of range for {n_images} images")]
    ViewOutOfRange { id: usize, n_images: usize },
    #[error("{requested} input views requested, protocol provides {max}")]
    TooManyViews { requested: usize, max: usize },
    #[error("views disagree on image size: {0}")]
    ImageSize(String),
    #[error("{0}")]
    Io(String),
    #[error("invalid fixture request: {0}")]
    Request(String),
}

/// One posed image. `mask` marks pixels that count for masked metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
    pub mask: Option<Vec<bool>>,
    pub file: Option<PathBuf>,
}

/// Posed images plus a train/test split over them.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub views: Vec<View>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ViewSet {
    /// All views start in the training split.
    pub fn new(views: Vec<View>) -> Result<Self, SceneError> {
        if let Some(first) = views.first() {
            for (i, v) in views.iter().enumerate() {
                if !v.image.same_shape(&first.image) || v.camera.width != v.image.width || v.camera.height != v.image.height {
                    return Err(SceneError::ImageSize(format!(
                        "view {i} is {}x{} (camera {}x{}), view 0 is {}x{}",
                        v.image.width, v.image.height, v.camera.width, v.camera.height, first.image.width, first.image.height
                    )));
                }
            }
        }
        let train = (0..views.len()).collect();
        Ok(ViewSet {
            views,
            train,
            test: Vec::new(),
        })
    }

    pub fn with_split(mut self, split: Split) -> Result<Self, SceneError> {
        let n = self.views.len();
        if let Some(&id) = split.train.iter().chain(&split.test).find(|&&id| id >= n) {
            return Err(SceneError::ViewOutOfRange { id, n_images: n });
        }
        self.train = split.train;
        self.test = split.test;
        Ok(self)
    }

    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.train.iter().map(|&i| &self.views[i])
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.test.iter().map(|&i| &self.views[i])
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }
}
