//! Published scores shipped with the crate, for side-by-side reports.
//!
//! The table is a CSV transcription kept in `data/reference_scores.csv`. Its
//! SHA-256 is pinned here and checked whenever the table is loaded, so an
//! edited copy fails loudly instead of silently shifting comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::finetune::{trainable_label, FinetuneConfig, Regime};
use crate::prompt::{PromptKindTag, PromptStrategy, StrategyKind};
use crate::propagation::ReinitPolicy;

pub const REFERENCE_CSV: &str = include_str!("../../data/reference_scores.csv");
pub const REFERENCE_SHA256: &str = "3b838813c88f3d6060dbcbde7214f2172eecfc6bb6529afe8b1a0b8a1b0b4332";

/// Which block of the published results a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    Compared,
    Vanilla,
    FinetunedImageDense,
    FinetunedImageSparse,
    FinetunedVideoSparse,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub section: Section,
    pub method: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Miou,
    Mdice,
    Map,
}

#[derive(Debug, Deserialize)]
struct Record {
    section: Section,
    method: String,
    dataset: String,
    metric: Metric,
    value: f64,
}

/// Published scores in percent, keyed by (row, dataset, metric).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTable {
    scores: BTreeMap<(ReferenceRow, String, Metric), f64>,
}

impl ReferenceTable {
    /// The vendored table, checksum-verified.
    pub fn bundled() -> Result<Self, ExperimentError> {
        Self::from_csv(REFERENCE_CSV, REFERENCE_SHA256)
    }

    pub fn from_csv(text: &str, expected_sha256: &str) -> Result<Self, ExperimentError> {
        let actual = hex::encode(Sha256::digest(text.as_bytes()));
        if actual != expected_sha256 {
            return Err(ExperimentError::ReferenceIntegrity {
                expected: expected_sha256.to_string(),
                actual,
            });
        }
        let mut scores = BTreeMap::new();
        for rec in csv::Reader::from_reader(text.as_bytes()).deserialize() {
            let r: Record = rec.map_err(|e| ExperimentError::Reference(e.to_string()))?;
            let key = (
                ReferenceRow {
                    section: r.section,
                    method: r.method,
                },
                r.dataset,
                r.metric,
            );
            if scores.insert(key.clone(), r.value).is_some() {
                return Err(ExperimentError::Reference(format!("duplicate entry {key:?}")));
            }
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, row: &ReferenceRow, dataset: &str, metric: Metric) -> Option<f64> {
        self.scores.get(&(row.clone(), dataset.to_string(), metric)).copied()
    }
}

/// Row name used by the published vanilla-prompt block, if the combination
/// was reported there.
pub fn vanilla_row(strategy: &PromptStrategy, policy: &ReinitPolicy) -> Option<ReferenceRow> {
    if policy.new_object_trigger || !matches!(policy.interval, None | Some(30) | Some(60)) {
        return None;
    }
    let base = match (strategy.kind, strategy.point_config.positives_per_region) {
        (StrategyKind::RandomPoints, 1) if policy.is_none() => "1Point".to_string(),
        (StrategyKind::RandomPoints, 1 | 3) | (StrategyKind::Box | StrategyKind::Mask, _) => strategy.name(),
        (StrategyKind::CenterPoint(crate::prompt::CenterMode::MassCenter), _) => strategy.name(),
        _ => return None,
    };
    let method = match policy.interval {
        None => format!("SAM2-{base}"),
        Some(t) => format!("SAM2-{base}-Reinit {t}"),
    };
    Some(ReferenceRow {
        section: Section::Vanilla,
        method,
    })
}

/// Row name for a fine-tuned variant.
pub fn finetuned_row(config: &FinetuneConfig) -> ReferenceRow {
    let (section, point) = match config.regime {
        Regime::ImageDense => (Section::FinetunedImageDense, "1Point"),
        Regime::ImageSparse { .. } => (Section::FinetunedImageSparse, "Point"),
        Regime::VideoSparse { .. } => (Section::FinetunedVideoSparse, "Point"),
    };
    let prompt = match config.prompt_type {
        PromptKindTag::Point => point,
        PromptKindTag::Box => "Bbox",
        PromptKindTag::Mask => "Mask",
    };
    ReferenceRow {
        section,
        method: format!("SAM2-FT-{prompt}-{}", trainable_label(&config.trainable)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::finetune::parse_trainable;

    #[test]
    fn bundled_table_loads_and_spot_checks() {
        let t = ReferenceTable::bundled().unwrap();
        assert_eq!(t.len(), 406);
        let row = vanilla_row(&PromptStrategy::mask(), &ReinitPolicy::every(30)).unwrap();
        assert_eq!(row.method, "SAM2-Mask-Reinit 30");
        assert_eq!(t.get(&row, "EndoVis2017", Metric::Miou), Some(76.15));
        let row = vanilla_row(&PromptStrategy::mask(), &ReinitPolicy::none()).unwrap();
        assert_eq!(t.get(&row, "EndoVis2017", Metric::Miou), Some(52.63));
        assert_eq!(t.get(&row, "CholecSeg8k", Metric::Map), Some(94.32));
        // EndoVis2018 reports no Dice for vanilla rows.
        assert_eq!(t.get(&row, "EndoVis2018", Metric::Mdice), None);
    }

    #[test]
    fn tampered_table_is_rejected() {
        let edited = REFERENCE_CSV.replacen("76.15", "77.15", 1);
        assert!(matches!(
            ReferenceTable::from_csv(&edited, REFERENCE_SHA256),
            Err(ExperimentError::ReferenceIntegrity { .. })
        ));
    }

    #[test]
    fn row_names() {
        let one = PromptStrategy::one_point_random();
        assert_eq!(vanilla_row(&one, &ReinitPolicy::none()).unwrap().method, "SAM2-1Point");
        assert_eq!(
            vanilla_row(&one, &ReinitPolicy::every(60)).unwrap().method,
            "SAM2-1Point-Random-Reinit 60"
        );
        assert!(vanilla_row(&one, &ReinitPolicy::every(45)).is_none());
        let mut cfg = FinetuneConfig::new(
            parse_trainable("MD").unwrap(),
            Regime::ImageSparse { stride: 4 },
            PromptKindTag::Mask,
        );
        let t = ReferenceTable::bundled().unwrap();
        assert_eq!(t.get(&finetuned_row(&cfg), "EndoVis2017", Metric::Miou), Some(82.13));
        cfg.regime = Regime::ImageDense;
        cfg.trainable = parse_trainable("MD+PE").unwrap();
        assert_eq!(t.get(&finetuned_row(&cfg), "DSAD", Metric::Miou), Some(80.87));
    }
}
