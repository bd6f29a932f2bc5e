use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use super::{SceneError, View, ViewSet};
use crate::rendering::{focal_from_fov, Camera, Image};

#[derive(Debug, Serialize, Deserialize)]
struct PoseDocument {
    camera_angle_x: f64,
    frames: Vec<PoseFrame>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFrame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseFileOptions {
    /// Integer factor applied to width, height and focal length.
    pub downsample: u32,
    pub background: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Default for PoseFileOptions {
    fn default() -> Self {
        PoseFileOptions {
            downsample: 1,
            background: [1.0; 3],
            near: 2.0,
            far: 6.0,
        }
    }
}

fn image_path(base: &Path, file_path: &str) -> PathBuf {
    let p = base.join(file_path);
    if p.extension().is_some() {
        p
    } else {
        p.with_extension("png")
    }
}

fn to_matrix(rows: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|r, c| rows[r][c])
}

/// Reads a camera file with `camera_angle_x` and `frames[]`, loading every
/// frame's image from the path relative to the file's directory.
pub fn load_pose_file(path: &Path, opts: &PoseFileOptions) -> Result<ViewSet, SceneError> {
    let text = fs::read_to_string(path).map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))?;
    let doc: PoseDocument = serde_json::from_str(&text).map_err(|e| SceneError::Malformed(format!("{}: {e}", path.display())))?;
    if !(doc.camera_angle_x > 0.0 && doc.camera_angle_x < std::f64::consts::PI) {
        return Err(SceneError::Malformed(format!("camera_angle_x {} out of (0, pi)", doc.camera_angle_x)));
    }
    let factor = opts.downsample.max(1);
    let base = path.parent().unwrap_or(Path::new("."));
    let mut views = Vec::with_capacity(doc.frames.len());
    for (i, frame) in doc.frames.iter().enumerate() {
        let pose = to_matrix(&frame.transform_matrix);
        let rot: Matrix3<f64> = pose.fixed_view::<3, 3>(0, 0).into_owned();
        if rot.determinant().abs() < 1e-9 || pose.try_inverse().is_none() {
            return Err(SceneError::NonInvertiblePose { frame: i });
        }
        let file = image_path(base, &frame.file_path);
        if !file.is_file() {
            return Err(SceneError::MissingImage(file));
        }
        let image = Image::load_png(&file, opts.background)
            .map_err(|e| SceneError::Io(e.to_string()))?
            .downsample(factor);
        let focal = focal_from_fov(image.width * factor, doc.camera_angle_x) / factor as f64;
        let camera = Camera::new(pose, image.width, image.height, focal, opts.near, opts.far)
            .map_err(|e| SceneError::InvalidPose { frame: i, reason: e.to_string() })?;
        views.push(View {
            camera,
            image,
            mask: None,
            file: Some(file),
        });
    }
    ViewSet::new(views)
}

/// Writes cameras back out in the same format. All cameras must share the
/// horizontal field of view; `file_paths` pairs with `cameras`.
pub fn save_pose_file(path: &Path, cameras: &[Camera], file_paths: &[String]) -> Result<(), SceneError> {
    let first = cameras.first().ok_or_else(|| SceneError::Malformed("no cameras to save".into()))?;
    let fov = 2.0 * (0.5 * first.width as f64 / first.focal).atan();
    let frames = cameras
        .iter()
        .zip(file_paths)
        .map(|(cam, file)| PoseFrame {
            file_path: file.clone(),
            transform_matrix: std::array::from_fn(|r| std::array::from_fn(|c| cam.pose[(r, c)])),
        })
        .collect();
    let doc = PoseDocument {
        camera_angle_x: fov,
        frames,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| SceneError::Malformed(e.to_string()))?;
    fs::write(path, text).map_err(|e| SceneError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn write_frame_png(dir: &Path, name: &str, w: u32, h: u32) {
        Image::filled(w, h, [0.25, 0.5, 0.75]).save_png(&dir.join(name)).unwrap();
    }

    fn doc(fov: f64, rows: [[f64; 4]; 4], file: &str) -> String {
        serde_json::json!({
            "camera_angle_x": fov,
            "frames": [{ "file_path": file, "transform_matrix": rows }]
        })
        .to_string()
    }

    const IDENTITY: [[f64; 4]; 4] = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];

    #[test]
    fn identity_frame_looks_down_minus_z() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_png(dir.path(), "r_0.png", 8, 8);
        let fov = 2.0 * 0.36f64.atan();
        fs::write(dir.path().join("t.json"), doc(fov, IDENTITY, "./r_0")).unwrap();
        let set = load_pose_file(&dir.path().join("t.json"), &PoseFileOptions::default()).unwrap();
        let cam = &set.views[0].camera;
        assert_eq!(cam.origin(), Vector3::zeros());
        assert!((cam.forward() - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
        assert!((cam.focal - 4.0 / 0.36).abs() < 1e-9);
    }

    #[test]
    fn downsample_halves_focal() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_png(dir.path(), "a.png", 16, 12);
        let fov = 2.0 * 0.36f64.atan();
        fs::write(dir.path().join("t.json"), doc(fov, IDENTITY, "a.png")).unwrap();
        let opts = PoseFileOptions {
            downsample: 2,
            ..Default::default()
        };
        let set = load_pose_file(&dir.path().join("t.json"), &opts).unwrap();
        let cam = &set.views[0].camera;
        assert_eq!((cam.width, cam.height), (8, 6));
        assert!((cam.focal - 0.5 * 8.0 / 0.36).abs() < 1e-9);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        fs::write(&p, "{ not json").unwrap();
        assert!(matches!(load_pose_file(&p, &Default::default()), Err(SceneError::Malformed(_))));

        fs::write(&p, doc(0.7, IDENTITY, "missing")).unwrap();
        assert!(matches!(load_pose_file(&p, &Default::default()), Err(SceneError::MissingImage(_))));

        write_frame_png(dir.path(), "a.png", 4, 4);
        let mut singular = IDENTITY;
        singular[2] = [0.0; 4];
        fs::write(&p, doc(0.7, singular, "a.png")).unwrap();
        assert!(matches!(load_pose_file(&p, &Default::default()), Err(SceneError::NonInvertiblePose { frame: 0 })));
    }

    #[test]
    fn round_trip_matrices() {
        let dir = tempfile::tempdir().unwrap();
        write_frame_png(dir.path(), "a.png", 10, 10);
        let cam = Camera::look_at(
            Vector3::new(1.3, -2.1, 0.7),
            Vector3::zeros(),
            Vector3::z(),
            10,
            10,
            12.5,
            2.0,
            6.0,
        )
        .unwrap();
        let p = dir.path().join("t.json");
        save_pose_file(&p, &[cam.clone()], &["a.png".into()]).unwrap();
        let back = load_pose_file(&p, &Default::default()).unwrap();
        let got = &back.views[0].camera;
        assert!((got.pose - cam.pose).abs().max() < 1e-9);
        assert!((got.focal - cam.focal).abs() < 1e-9);
    }
}
