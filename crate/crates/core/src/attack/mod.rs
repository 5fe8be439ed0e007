//! Budgeted structure poisoning: a greedy gradient attack and the DICE
//! baseline, both subject to the same unnoticeability constraints.

mod constraints;
mod dice;

pub use constraints::{
    constraint_check, degree_test_statistic, ConstraintConfig, ConstraintState, Constraints, DegreeSample,
    RejectReason, Verdict, DEFAULT_DEGREE_THRESHOLD,
};
pub use dice::dice_attack;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradient::{objective_gradient, GradMatrix};
use crate::graph::Graph;
use crate::loss::{AttackObjective, LossSpec};
use crate::surrogate::{forward_logits, margins, pseudo_labels, train_surrogate, SurrogateHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlipOp {
    Add,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Flip {
    pub i: usize,
    pub j: usize,
    pub op: FlipOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub budget: usize,
    pub loss: LossSpec,
    pub retrain_every: usize,
    pub surrogate: SurrogateHyper,
    pub constraints: ConstraintConfig,
    pub seed: u64,
    pub dice_delete_prob: f64,
    pub dice_max_retries: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            budget: 0,
            loss: LossSpec::nll(),
            retrain_every: 1,
            surrogate: SurrogateHyper::default(),
            constraints: ConstraintConfig::default(),
            seed: 0,
            dice_delete_prob: 0.5,
            dice_max_retries: 1000,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self, g: &Graph) -> Result<()> {
        if self.retrain_every == 0 {
            return Err(Error::InvalidParameter("retrain_every must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dice_delete_prob) {
            return Err(Error::InvalidParameter("dice_delete_prob must lie in [0, 1]".into()));
        }
        let n = g.n_nodes();
        let pairs = n * n.saturating_sub(1) / 2;
        if self.budget > pairs {
            return Err(Error::BudgetTooLarge {
                budget: self.budget,
                pairs,
            });
        }
        self.loss.validate()
    }

    fn surrogate_hyper(&self) -> SurrogateHyper {
        SurrogateHyper {
            seed: self.seed,
            ..self.surrogate
        }
    }
}

/// Margin statistics of the attacked nodes at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginSummary {
    pub negative: usize,
    pub mean_margin: f64,
    pub mean_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub flip: Flip,
    pub score: f64,
    pub retrained: bool,
    pub objective_before: Option<f64>,
    pub objective_after: Option<f64>,
    pub margins: Option<MarginSummary>,
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub flips: Vec<Flip>,
    pub poisoned: Graph,
    pub trace: Vec<IterationTrace>,
    /// Stopped before spending the budget because no feasible flip helped.
    pub exhausted: bool,
    /// Labels the attack targeted: ground truth on labeled nodes, surrogate
    /// predictions elsewhere.
    pub target_labels: Vec<usize>,
}

/// A scored candidate flip of the unordered pair `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

impl Candidate {
    /// Ranking order: higher score first, then lexicographic `(i, j)`.
    pub fn rank(&self, other: &Candidate) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| (self.i, self.j).cmp(&(other.i, other.j)))
    }
}

/// Gain of flipping `(i, j)` in its only feasible direction.
pub fn flip_score(grad: &GradMatrix, g: &Graph, i: usize, j: usize) -> f64 {
    let sign = if g.has_edge(i, j) { -1.0 } else { 1.0 };
    grad.get(i, j) * sign
}

/// Every unordered pair, best first.
pub fn score_flips(grad: &GradMatrix, g: &Graph) -> Vec<Candidate> {
    let n = g.n_nodes();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(Candidate {
                i,
                j,
                score: flip_score(grad, g, i, j),
            });
        }
    }
    out.sort_by(Candidate::rank);
    out
}

/// The top-ranked candidate that has not been flipped yet and passes the
/// constraints. Agrees with the first admissible entry of [`score_flips`].
pub fn best_feasible(grad: &GradMatrix, g: &Graph, constraints: &Constraints, used: &[bool]) -> Option<Candidate> {
    let n = g.n_nodes();
    let state = constraints.state(g);
    let per_row = crate::par::map_range(n, |i| {
        let mut best: Option<Candidate> = None;
        for j in i + 1..n {
            if used[i * n + j] {
                continue;
            }
            let c = Candidate {
                i,
                j,
                score: flip_score(grad, g, i, j),
            };
            // the constraint check is the expensive part; only run it on improvements
            if best.is_none_or(|b| c.rank(&b) == Ordering::Less) && constraints.check_with(&state, g, i, j).is_allowed()
            {
                best = Some(c);
            }
        }
        best
    });
    per_row.into_iter().flatten().min_by(Candidate::rank)
}

fn summarize(phi: &[f64], objective: &AttackObjective) -> MarginSummary {
    let nodes = objective.nodes();
    let m: Vec<f64> = nodes.iter().map(|&v| phi[v]).collect();
    let k = m.len().max(1) as f64;
    MarginSummary {
        negative: m.iter().filter(|&&x| x < 0.0).count(),
        mean_margin: m.iter().sum::<f64>() / k,
        mean_weight: objective.weights().iter().sum::<f64>() / k,
    }
}

/// Greedy gradient poisoning with self-training targets.
///
/// Targets are fixed once from a surrogate fit to the clean graph. Every
/// `retrain_every` iterations the surrogate is refit on the current graph;
/// each iteration recomputes margins (and cost-aware weights) against the
/// fixed targets, takes the adjacency gradient with surrogate weights frozen,
/// and applies the best admissible flip. A pair is flipped at most once. The
/// loop stops early once no admissible flip has a positive score.
pub fn meta_attack(g: &Graph, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate(g)?;
    g.require_split()?;
    let n = g.n_nodes();
    let hyper = cfg.surrogate_hyper();
    let clean_params = train_surrogate(g, &hyper)?;
    let targets = pseudo_labels(&clean_params, g)?;
    let constraints = Constraints::new(g, cfg.constraints);
    let unlabeled = g.unlabeled_nodes();

    let mut current = g.clone();
    let mut params = clean_params;
    let mut used = vec![false; n * n];
    let mut flips = Vec::with_capacity(cfg.budget);
    let mut trace = Vec::with_capacity(cfg.budget);
    let mut exhausted = false;

    for iteration in 0..cfg.budget {
        let retrained = iteration % cfg.retrain_every == 0;
        if retrained && iteration > 0 {
            params = train_surrogate(&current, &hyper)?;
        }
        let adj = current.normalize();
        let logits = forward_logits(&params, &adj, current.features())?;
        let objective = AttackObjective::new(&cfg.loss, &logits, &targets, &unlabeled)?;
        let phi = margins(&logits, &targets)?;
        let before = objective.value(&logits);
        let grad = objective_gradient(&adj, current.features(), &params, &objective)?;
        let best = match best_feasible(&grad, &current, &constraints, &used) {
            Some(c) if c.score > 0.0 => c,
            _ => {
                log::debug!("no improving flip left after {iteration} iterations");
                exhausted = true;
                break;
            }
        };
        let op = if current.has_edge(best.i, best.j) {
            FlipOp::Delete
        } else {
            FlipOp::Add
        };
        current = current.flip_edge(best.i, best.j)?;
        used[best.i * n + best.j] = true;
        let after = objective.value(&forward_logits(&params, &current.normalize(), current.features())?);
        let flip = Flip {
            i: best.i,
            j: best.j,
            op,
        };
        log::trace!("iteration {iteration}: {flip:?} score {:.3e}", best.score);
        trace.push(IterationTrace {
            iteration,
            flip,
            score: best.score,
            retrained,
            objective_before: Some(before),
            objective_after: Some(after),
            margins: Some(summarize(&phi, &objective)),
        });
        flips.push(flip);
    }

    Ok(AttackResult {
        flips,
        poisoned: current,
        trace,
        exhausted,
        target_labels: targets,
    })
}

/// Replays a flip list on `g`.
pub fn apply_flips(g: &Graph, flips: &[Flip]) -> Result<Graph> {
    let mut out = g.clone();
    for f in flips {
        let expect_edge = f.op == FlipOp::Delete;
        if out.has_edge(f.i, f.j) != expect_edge {
            return Err(Error::InvalidParameter(format!(
                "flip {:?} on ({}, {}) does not match the graph",
                f.op, f.i, f.j
            )));
        }
        out = out.flip_edge(f.i, f.j)?;
    }
    Ok(out)
}
