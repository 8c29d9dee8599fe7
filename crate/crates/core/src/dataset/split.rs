//! Seeded train/test partitioning for datasets without an official split.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AnnotatedVideo, DatasetError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitUnit {
    /// Whole videos go to one side; avoids near-duplicate frames leaking across.
    #[default]
    Video,
    /// Annotated frames are split individually; every video appears on both
    /// sides with its annotations partitioned.
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    #[serde(default)]
    pub unit: SplitUnit,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            seed: 0,
            unit: SplitUnit::Video,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTestSplit {
    pub train: Vec<AnnotatedVideo>,
    pub test: Vec<AnnotatedVideo>,
}

/// Number of training units: the fraction rounded to nearest, then clamped so
/// both sides are non-empty.
fn train_count(units: usize, fraction: f64) -> usize {
    ((units as f64 * fraction).round() as usize).clamp(1, units - 1)
}

fn shuffled(units: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..units).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

pub fn split_train_test(
    videos: &[AnnotatedVideo],
    spec: &SplitSpec,
) -> Result<TrainTestSplit, DatasetError> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(spec.train_fraction));
    }
    match spec.unit {
        SplitUnit::Video => {
            let n = videos.len();
            if n < 2 {
                return Err(DatasetError::SplitTooSmall { units: n });
            }
            let order = shuffled(n, spec.seed);
            let k = train_count(n, spec.train_fraction);
            let mut train_idx: Vec<usize> = order[..k].to_vec();
            let mut test_idx: Vec<usize> = order[k..].to_vec();
            // keep the input order on each side
            train_idx.sort_unstable();
            test_idx.sort_unstable();
            Ok(TrainTestSplit {
                train: train_idx.iter().map(|&i| videos[i].clone()).collect(),
                test: test_idx.iter().map(|&i| videos[i].clone()).collect(),
            })
        }
        SplitUnit::Frame => {
            let units: Vec<(usize, usize)> = videos
                .iter()
                .enumerate()
                .flat_map(|(vi, v)| v.annotated_frames().into_iter().map(move |f| (vi, f)))
                .collect();
            let n = units.len();
            if n < 2 {
                return Err(DatasetError::SplitTooSmall { units: n });
            }
            let order = shuffled(n, spec.seed);
            let k = train_count(n, spec.train_fraction);
            let train_units: HashSet<(usize, usize)> = order[..k].iter().map(|&i| units[i]).collect();
            let side = |want: bool| -> Vec<AnnotatedVideo> {
                videos
                    .iter()
                    .enumerate()
                    .map(|(vi, v)| v.filter_annotations(|f| train_units.contains(&(vi, f)) == want))
                    .filter(|v| !v.annotations().is_empty())
                    .collect()
            };
            Ok(TrainTestSplit {
                train: side(true),
                test: side(false),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{InstanceAnnotation, VideoSequence};
    use crate::mask::BinaryMask;
    use std::collections::BTreeMap;

    fn videos(n: usize) -> Vec<AnnotatedVideo> {
        (0..n)
            .map(|i| {
                let seq = VideoSequence::blank(format!("v{i}"), 3, 4, 4);
                let mut ann = BTreeMap::new();
                for f in 0..3 {
                    let m = BinaryMask::from_pixels(4, 4, &[(0, 0)]);
                    ann.insert(f, vec![InstanceAnnotation::new(f, 0, 1, m).unwrap()]);
                }
                AnnotatedVideo::new(seq, ann, BTreeMap::new()).unwrap()
            })
            .collect()
    }

    fn ids(v: &[AnnotatedVideo]) -> Vec<String> {
        v.iter().map(|v| v.video_id().to_string()).collect()
    }

    #[test]
    fn seventy_thirty_deterministic() {
        let vs = videos(10);
        let spec = SplitSpec {
            train_fraction: 0.7,
            seed: 17,
            unit: SplitUnit::Video,
        };
        let a = split_train_test(&vs, &spec).unwrap();
        let b = split_train_test(&vs, &spec).unwrap();
        assert_eq!((a.train.len(), a.test.len()), (7, 3));
        assert_eq!(ids(&a.train), ids(&b.train));
        let mut all = ids(&a.train);
        all.extend(ids(&a.test));
        all.sort();
        let mut expected = ids(&vs);
        expected.sort();
        assert_eq!(all, expected);
    }

    #[test]
    fn two_videos_one_each() {
        let s = split_train_test(&videos(2), &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1, 1));
    }

    #[test]
    fn too_few_units() {
        assert!(matches!(
            split_train_test(&videos(1), &SplitSpec::default()),
            Err(DatasetError::SplitTooSmall { units: 1 })
        ));
    }

    #[test]
    fn frame_unit_partitions_annotations() {
        let vs = videos(2);
        let spec = SplitSpec {
            unit: SplitUnit::Frame,
            ..SplitSpec::default()
        };
        let s = split_train_test(&vs, &spec).unwrap();
        let count = |side: &[AnnotatedVideo]| -> usize {
            side.iter().map(|v| v.annotations().len()).sum()
        };
        assert_eq!(count(&s.train) + count(&s.test), 6);
        assert_eq!(count(&s.train), 4);
        for tr in &s.train {
            for te in s.test.iter().filter(|t| t.video_id() == tr.video_id()) {
                for f in tr.annotated_frames() {
                    assert!(!te.is_annotated(f));
                }
            }
        }
    }
}
