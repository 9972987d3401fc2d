use rand::seq::SliceRandom;

use super::AnnotationSet;
use crate::error::{Error, Result};
use crate::seed;

/// Disjoint train/test partition; `val` is a subset of `train`.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: AnnotationSet,
    pub val: AnnotationSet,
    pub test: AnnotationSet,
}

pub fn split_dataset(
    set: &AnnotationSet,
    train_n: usize,
    test_n: usize,
    val_n: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let total = set.images.len();
    if train_n + test_n != total {
        return Err(Error::Config(format!(
            "split {train_n}+{test_n} does not match {total} images"
        )));
    }
    if val_n > train_n {
        return Err(Error::Config(format!(
            "validation count {val_n} exceeds training count {train_n}"
        )));
    }
    let mut ids = set.image_ids();
    ids.shuffle(&mut seed::rng(seed, &[0x5811]));
    let (train_ids, test_ids) = ids.split_at(train_n);
    Ok(DatasetSplit {
        train: set.subset(train_ids),
        val: set.subset(&train_ids[..val_n]),
        test: set.subset(test_ids),
    })
}
