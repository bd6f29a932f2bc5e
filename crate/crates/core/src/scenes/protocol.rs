use super::SceneError;

/// Blender input views (indices into the training split).
pub const BLENDER_TRAIN_IDS: [usize; 8] = [26, 86, 2, 55, 75, 93, 16, 73];
/// Number of evaluation images drawn from the Blender test split.
pub const BLENDER_TEST_COUNT: usize = 25;
/// DTU input views; the 3/6/9-view settings take a prefix.
pub const DTU_TRAIN_IDS: [usize; 9] = [25, 22, 28, 40, 44, 48, 0, 8, 13];
pub const DTU_TEST_IDS: [usize; 25] = [
    1, 2, 9, 10, 11, 12, 14, 15, 23, 24, 26, 27, 29, 30, 31, 32, 33, 34, 35, 41, 42, 43, 45, 46, 47,
];
/// Every n-th LLFF image is held out.
pub const LLFF_HOLDOUT_STRIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Protocol {
    /// Training IDs from [`BLENDER_TRAIN_IDS`]; `test_images` is the size of the
    /// separate test split that the evaluation views are drawn from.
    Blender { test_images: usize },
    Dtu,
    Llff,
    /// Exactly these views train; all others are held out.
    Explicit(Vec<usize>),
}

/// Train/test view indices. For [`Protocol::Blender`] the test indices refer to
/// the test split; otherwise both refer to the same image list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn check(ids: &[usize], n_images: usize) -> Result<(), SceneError> {
    match ids.iter().find(|&&id| id >= n_images) {
        Some(&id) => Err(SceneError::ViewOutOfRange { id, n_images }),
        None => Ok(()),
    }
}

fn round_half_even(x: f64) -> usize {
    let r = x.round();
    if (x - x.trunc()).abs() == 0.5 && r as usize % 2 == 1 {
        (r - 1.0) as usize
    } else {
        r as usize
    }
}

/// `n` indices spread evenly over `0..len` (rounded half to even).
pub fn evenly_spaced(len: usize, n: usize) -> Vec<usize> {
    match n {
        0 => Vec::new(),
        1 => vec![0],
        _ => (0..n)
            .map(|i| round_half_even(i as f64 * (len - 1) as f64 / (n - 1) as f64))
            .collect(),
    }
}

/// Splits `n_images` views into `n_train` inputs and held-out views.
pub fn select_views(n_images: usize, n_train: usize, protocol: &Protocol) -> Result<Split, SceneError> {
    let too_many = |max: usize| SceneError::TooManyViews { requested: n_train, max };
    let split = match protocol {
        Protocol::Blender { test_images } => {
            let train = BLENDER_TRAIN_IDS.get(..n_train).ok_or(too_many(BLENDER_TRAIN_IDS.len()))?.to_vec();
            check(&train, n_images)?;
            let stride = (test_images / BLENDER_TEST_COUNT).max(1);
            let test: Vec<usize> = (0..*test_images).step_by(stride).take(BLENDER_TEST_COUNT).collect();
            return Ok(Split { train, test });
        }
        Protocol::Dtu => Split {
            train: DTU_TRAIN_IDS.get(..n_train).ok_or(too_many(DTU_TRAIN_IDS.len()))?.to_vec(),
            test: DTU_TEST_IDS.to_vec(),
        },
        Protocol::Llff => {
            let test: Vec<usize> = (0..n_images).step_by(LLFF_HOLDOUT_STRIDE).collect();
            let rest: Vec<usize> = (0..n_images).filter(|i| i % LLFF_HOLDOUT_STRIDE != 0).collect();
            if n_train > rest.len() {
                return Err(too_many(rest.len()));
            }
            let train = evenly_spaced(rest.len(), n_train).into_iter().map(|i| rest[i]).collect();
            Split { train, test }
        }
        Protocol::Explicit(ids) => {
            let test = (0..n_images).filter(|i| !ids.contains(i)).collect();
            Split {
                train: ids.clone(),
                test,
            }
        }
    };
    check(&split.train, n_images)?;
    check(&split.test, n_images)?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dtu_prefixes() {
        assert_eq!(select_views(49, 3, &Protocol::Dtu).unwrap().train, vec![25, 22, 28]);
        assert_eq!(select_views(49, 6, &Protocol::Dtu).unwrap().train, vec![25, 22, 28, 40, 44, 48]);
        assert!(select_views(49, 10, &Protocol::Dtu).is_err());
        assert!(matches!(select_views(30, 3, &Protocol::Dtu), Err(SceneError::ViewOutOfRange { .. })));
    }

    #[test]
    fn llff_holdout() {
        let s = select_views(40, 3, &Protocol::Llff).unwrap();
        assert_eq!(s.test, vec![0, 8, 16, 24, 32]);
        assert!(s.train.iter().all(|i| i % 8 != 0));
        assert_eq!(s.train, vec![1, 20, 39]);
    }

    #[test]
    fn explicit_list() {
        let s = select_views(5, 2, &Protocol::Explicit(vec![1, 2])).unwrap();
        assert_eq!(s.train, vec![1, 2]);
        assert_eq!(s.test, vec![0, 3, 4]);
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_half_even(2.5), 2);
        assert_eq!(round_half_even(3.5), 4);
        assert_eq!(round_half_even(0.4), 0);
        assert_eq!(evenly_spaced(6, 3), vec![0, 2, 5]);
    }
}
