//! Expansion of the config axes into individually keyed runs.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::ExperimentError;
use crate::prompt::PromptStrategy;
use crate::propagation::ReinitPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub dataset: String,
    pub strategy: PromptStrategy,
    pub policy: ReinitPolicy,
    /// Index into the config's `segmenters`.
    pub segmenter: usize,
    pub segmenter_label: String,
    pub seed: u64,
}

impl RunDescriptor {
    /// Unique key: dataset, strategy, policy, segmenter and seed.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|seed={}",
            self.dataset, self.strategy, self.policy, self.segmenter_label, self.seed
        )
    }

    /// The key reduced to characters that are safe in a directory name.
    pub fn dir_name(&self) -> String {
        self.key()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || "-_.+=".contains(c) { c } else { '_' })
            .collect()
    }

    /// Method label in the published naming style, e.g. `Mask-Reinit 30`.
    pub fn method(&self) -> String {
        match self.policy.table_suffix().as_str() {
            "" => self.strategy.name(),
            s => format!("{}-{s}", self.strategy.name()),
        }
    }
}

impl fmt::Display for RunDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Cartesian product in the order datasets, segmenters, strategies,
/// policies. Duplicate keys keep their first position.
pub fn expand_matrix(config: &ExperimentConfig) -> Result<Vec<RunDescriptor>, ExperimentError> {
    config.validate(false)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for d in &config.datasets {
        for (si, seg) in config.segmenters.iter().enumerate() {
            for strategy in &config.strategies {
                for policy in &config.policies {
                    let desc = RunDescriptor {
                        dataset: d.name.clone(),
                        strategy: strategy.with_seed(config.seed),
                        policy: *policy,
                        segmenter: si,
                        segmenter_label: seg.label(),
                        seed: config.seed,
                    };
                    if seen.insert(desc.key()) {
                        out.push(desc);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Conjunction of `field=value` terms separated by commas, e.g.
/// `strategy=Mask,policy=reinit-30`. Fields: dataset, strategy, policy,
/// segmenter, seed. Values compare case-insensitively; a trailing `*` makes
/// the term a prefix match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellFilter {
    terms: Vec<(String, String)>,
}

const FILTER_FIELDS: [&str; 5] = ["dataset", "strategy", "policy", "segmenter", "seed"];

impl CellFilter {
    pub fn parse(expr: &str) -> Result<Self, ExperimentError> {
        let mut terms = Vec::new();
        for term in expr.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            let (k, v) = term
                .split_once('=')
                .ok_or_else(|| ExperimentError::Filter(format!("{term:?} is not field=value")))?;
            let k = k.trim().to_ascii_lowercase();
            if !FILTER_FIELDS.contains(&k.as_str()) {
                return Err(ExperimentError::Filter(format!(
                    "unknown field {k:?}; expected one of {}",
                    FILTER_FIELDS.join(", ")
                )));
            }
            terms.push((k, v.trim().to_ascii_lowercase()));
        }
        Ok(Self { terms })
    }

    pub fn matches(&self, d: &RunDescriptor) -> bool {
        self.terms.iter().all(|(k, want)| {
            let have = match k.as_str() {
                "dataset" => d.dataset.clone(),
                "strategy" => d.strategy.name(),
                "policy" => d.policy.to_string(),
                "segmenter" => d.segmenter_label.clone(),
                _ => d.seed.to_string(),
            }
            .to_ascii_lowercase();
            match want.strip_suffix('*') {
                Some(prefix) => have.starts_with(prefix),
                None => have == *want,
            }
        })
    }

    pub fn apply(&self, descriptors: Vec<RunDescriptor>) -> Vec<RunDescriptor> {
        descriptors.into_iter().filter(|d| self.matches(d)).collect()
    }
}
