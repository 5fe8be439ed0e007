//! Victim retraining over seeds, summary statistics, and the margin versus
//! gradient-norm diagnostic.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attack::Flip;
use crate::error::{Error, Result};
use crate::gradient::per_node_gradient_norms;
use crate::graph::Graph;
use crate::loss::{AttackObjective, LossSpec};
use crate::surrogate::{forward_logits, margins, train_surrogate, SurrogateHyper};
use crate::victim::{train_victim, VictimHyper};

/// Outcome of one experiment. Serialized field order is part of the report
/// format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub attack: String,
    pub loss: String,
    pub budget: usize,
    pub budget_fraction: f64,
    pub flips: Vec<Flip>,
    pub per_seed_accuracy: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
    /// Set when fewer than two seeds make the interval meaningless.
    pub ci95_degenerate: bool,
    pub wall_clock_seconds: f64,
    pub config: serde_json::Value,
}

/// Mean and 95% normal-approximation half-width `1.96·s/√n` with the sample
/// standard deviation. A single value reports a zero half-width and the
/// degenerate flag.
pub fn mean_ci95(values: &[f64]) -> (f64, f64, bool) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, 0.0, true);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0, true);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * var.sqrt() / (n as f64).sqrt(), false)
}

/// Trains one victim per seed on `poisoned` and scores it on the unlabeled
/// nodes against ground truth.
pub fn evaluate(clean: &Graph, poisoned: &Graph, victim: &VictimHyper, seeds: &[u64]) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::EmptySeeds);
    }
    if clean.n_nodes() != poisoned.n_nodes() {
        return Err(Error::SizeMismatch(clean.n_nodes(), poisoned.n_nodes()));
    }
    if clean.labels() != poisoned.labels() || clean.labeled_mask() != poisoned.labeled_mask() {
        return Err(Error::InvalidParameter(
            "clean and poisoned graphs must share labels and split".into(),
        ));
    }
    poisoned.require_split()?;
    victim.validate()?;
    let start = Instant::now();
    let accs = crate::par::map_slice(seeds, |&seed| {
        let hyper = VictimHyper { seed, ..*victim };
        train_victim(poisoned, &hyper).map(|(_, acc)| acc)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let (mean, ci95, degenerate) = mean_ci95(&accs);
    Ok(EvalReport {
        dataset: String::new(),
        attack: String::new(),
        loss: String::new(),
        budget: clean.count_flips(poisoned)?,
        budget_fraction: 0.0,
        flips: Vec::new(),
        per_seed_accuracy: accs,
        mean,
        ci95,
        ci95_degenerate: degenerate,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
        config: serde_json::Value::Null,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub node: usize,
    pub margin: f64,
    pub grad_l2: f64,
}

/// For each unlabeled node: its margin under a surrogate fit to `g`, and the
/// norm of the adjacency gradient of its own (possibly weighted) loss term.
///
/// Margins and losses use ground-truth labels so that already-misclassified
/// nodes appear with negative margins.
pub fn margin_gradient_scatter(g: &Graph, spec: &LossSpec, hyper: &SurrogateHyper) -> Result<Vec<ScatterPoint>> {
    g.require_split()?;
    let params = train_surrogate(g, hyper)?;
    let adj = g.normalize();
    let logits = forward_logits(&params, &adj, g.features())?;
    let labels = g.labels();
    let phi = margins(&logits, labels)?;
    let objective = AttackObjective::new(spec, &logits, labels, &g.unlabeled_nodes())?;
    let norms = per_node_gradient_norms(&adj, g.features(), &params, &objective)?;
    Ok(objective
        .nodes()
        .iter()
        .zip(norms)
        .map(|(&node, grad_l2)| ScatterPoint {
            node,
            margin: phi[node],
            grad_l2,
        })
        .collect())
}
