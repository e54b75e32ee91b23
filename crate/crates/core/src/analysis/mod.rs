//! Signal analysis: approximate entropy, entropy-based channel importance
//! and feature export.

pub mod apen;
pub mod export;
pub mod forest;
pub mod shapley;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrialSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use apen::{apen_table, ApEnParams};
use forest::{ForestConfig, RandomForest};
use shapley::{mc_shapley, ShapleyConfig, ShapleyValues};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportanceConfig {
    pub apen: ApEnParams,
    pub forest: ForestConfig,
    pub shapley: ShapleyConfig,
    /// Rows explained; larger sets are subsampled.
    pub max_explained: usize,
    /// Background rows for the interventional expectation.
    pub max_background: usize,
    pub seed: u64,
}

impl Default for ImportanceConfig {
    fn default() -> Self {
        ImportanceConfig {
            apen: ApEnParams::default(),
            forest: ForestConfig::default(),
            shapley: ShapleyConfig::default(),
            max_explained: 200,
            max_background: 200,
            seed: 0,
        }
    }
}

impl ImportanceConfig {
    /// Same settings with every random stream derived from `seed`.
    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.forest.seed = seed ^ 0xf0;
        self.shapley.seed = seed ^ 0x5a;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScore {
    pub index: usize,
    pub name: String,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Channels by descending mean |attribution|.
    pub ranking: Vec<ChannelScore>,
    pub shapley: ShapleyValues,
}

fn subsample(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    if n <= k {
        return (0..n).collect();
    }
    let mut idx = sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Per-channel entropy features, a forest on them, and Monte-Carlo Shapley
/// attributions of the forest's seizure probability.
pub fn channel_importance<T: Scalar>(trials: &TrialSet<T>, cfg: &ImportanceConfig) -> Result<ImportanceReport> {
    if !trials.labels.contains(&0) || !trials.labels.contains(&1) {
        return Err(Error::SingleClass("channel importance needs both classes".into()));
    }
    let table = apen_table(trials, cfg.apen)?;
    let forest = RandomForest::fit(&table, &trials.labels, &cfg.forest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let explained: Vec<Vec<f64>> =
        subsample(&mut rng, table.len(), cfg.max_explained.max(1)).into_iter().map(|i| table[i].clone()).collect();
    let background: Vec<Vec<f64>> =
        subsample(&mut rng, table.len(), cfg.max_background.max(1)).into_iter().map(|i| table[i].clone()).collect();
    let shapley = mc_shapley(|r| forest.predict(r), &explained, &background, &cfg.shapley)?;
    let mut ranking: Vec<ChannelScore> = shapley
        .mean_abs()
        .into_iter()
        .enumerate()
        .map(|(index, mean_abs)| ChannelScore { index, name: trials.channel_names[index].clone(), mean_abs })
        .collect();
    ranking.sort_by(|a, b| b.mean_abs.total_cmp(&a.mean_abs).then(a.index.cmp(&b.index)));
    Ok(ImportanceReport { ranking, shapley })
}
