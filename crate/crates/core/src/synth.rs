//! Seeded stochastic block model graphs with class-dependent sparse binary
//! features. Used by tests, benchmarks and the `generate` subcommand.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Features, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    /// Feature width; 0 means identity features.
    pub feature_dim: usize,
    /// Probability of a feature bit in a node's class-specific slice.
    pub feature_p_in: f64,
    /// Probability of any other feature bit.
    pub feature_p_out: f64,
    pub seed: u64,
}

impl SbmSpec {
    pub fn new(block_sizes: Vec<usize>, p_in: f64, p_out: f64, seed: u64) -> Self {
        SbmSpec {
            block_sizes,
            p_in,
            p_out,
            feature_dim: 0,
            feature_p_in: 0.0,
            feature_p_out: 0.0,
            seed,
        }
    }

    pub fn with_features(mut self, dim: usize, p_in: f64, p_out: f64) -> Self {
        self.feature_dim = dim;
        self.feature_p_in = p_in;
        self.feature_p_out = p_out;
        self
    }

    /// A citation-like configuration: 7 classes, 2708 nodes, about 5k edges
    /// of which roughly 80% join same-class nodes, noisy bag-of-words features.
    pub fn citation_like(seed: u64) -> Self {
        SbmSpec::new(vec![351, 217, 418, 818, 426, 298, 180], 0.0062, 0.00032, seed).with_features(700, 0.03, 0.008)
    }

    fn validate(&self) -> Result<()> {
        let probs = [self.p_in, self.p_out, self.feature_p_in, self.feature_p_out];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("probabilities must lie in [0, 1]".into()));
        }
        if self.block_sizes.is_empty() || self.block_sizes.contains(&0) {
            return Err(Error::InvalidParameter("blocks must be nonempty".into()));
        }
        Ok(())
    }
}

/// Draws the graph. Labels are block indices; no split is assigned.
pub fn sbm(spec: &SbmSpec) -> Result<Graph> {
    spec.validate()?;
    let k = spec.block_sizes.len();
    let labels: Vec<usize> = spec
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    let features = if spec.feature_dim == 0 {
        Features::identity(n)
    } else {
        let d = spec.feature_dim;
        let slice = d.div_ceil(k);
        let mut x = Array2::zeros((n, d));
        for (v, &c) in labels.iter().enumerate() {
            for f in 0..d {
                let p = if f / slice == c {
                    spec.feature_p_in
                } else {
                    spec.feature_p_out
                };
                if rng.random::<f64>() < p {
                    x[[v, f]] = 1.0;
                }
            }
        }
        Features::new(x)
    };
    Graph::new(&edges, features, labels, k, vec![false; n])
}
