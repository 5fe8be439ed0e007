//! Base attack losses and the margin-dependent cost-aware reweighting.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::surrogate::{argmax, margins, runner_up};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Negative log-likelihood of the softmax.
    Nll,
    /// Carlini-Wagner margin loss `max(φ, -κ)`.
    Cw,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nll" | "ce" => Ok(LossKind::Nll),
            "cw" => Ok(LossKind::Cw),
            other => Err(Error::InvalidParameter(format!("unknown loss `{other}`"))),
        }
    }
}

/// Parameters of `w(v) = α·exp(−β·φ(v)²)`, with a separate `(α, β)` pair for
/// each sign of the margin. A zero margin uses the positive pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaWeightParams {
    pub alpha1: f64,
    pub beta1: f64,
    pub alpha2: f64,
    pub beta2: f64,
}

impl CaWeightParams {
    pub fn new(alpha1: f64, beta1: f64, alpha2: f64, beta2: f64) -> Result<Self> {
        let p = CaWeightParams {
            alpha1,
            beta1,
            alpha2,
            beta2,
        };
        p.validate()?;
        Ok(p)
    }

    /// Cora and Citeseer settings.
    pub fn citation() -> Self {
        CaWeightParams {
            alpha1: 4.5,
            beta1: 1.0,
            alpha2: 1.0,
            beta2: 1.0,
        }
    }

    /// Polblogs settings.
    pub fn polblogs() -> Self {
        CaWeightParams {
            alpha1: 1.0,
            beta1: 0.5,
            alpha2: 1.0,
            beta2: 0.1,
        }
    }

    /// All weights equal to one.
    pub fn uniform() -> Self {
        CaWeightParams {
            alpha1: 1.0,
            beta1: 0.0,
            alpha2: 1.0,
            beta2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite();
        if !(ok(self.alpha1) && self.alpha1 > 0.0 && ok(self.alpha2) && self.alpha2 > 0.0) {
            return Err(Error::InvalidParameter("alpha1 and alpha2 must be positive".into()));
        }
        // β = 0 is allowed: it turns the weighting into a per-sign constant.
        if !(ok(self.beta1) && self.beta1 >= 0.0 && ok(self.beta2) && self.beta2 >= 0.0) {
            return Err(Error::InvalidParameter("beta1 and beta2 must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn weight(&self, margin: f64) -> f64 {
        if margin >= 0.0 {
            self.alpha1 * (-self.beta1 * margin * margin).exp()
        } else {
            self.alpha2 * (-self.beta2 * margin * margin).exp()
        }
    }
}

/// Which loss drives the attack, and whether it is reweighted by margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub base: LossKind,
    #[serde(default)]
    pub ca: Option<CaWeightParams>,
    #[serde(default)]
    pub cw_kappa: f64,
}

impl LossSpec {
    pub fn nll() -> Self {
        LossSpec {
            base: LossKind::Nll,
            ca: None,
            cw_kappa: 0.0,
        }
    }

    pub fn cw() -> Self {
        LossSpec {
            base: LossKind::Cw,
            ca: None,
            cw_kappa: 0.0,
        }
    }

    pub fn with_ca(self, params: CaWeightParams) -> Self {
        LossSpec {
            ca: Some(params),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cw_kappa.is_finite() && self.cw_kappa >= 0.0) {
            return Err(Error::InvalidParameter("cw_kappa must be nonnegative".into()));
        }
        match &self.ca {
            Some(p) => p.validate(),
            None => Ok(()),
        }
    }

    /// Short name such as `ca-nll` or `cw`.
    pub fn name(&self) -> String {
        let base = match self.base {
            LossKind::Nll => "nll",
            LossKind::Cw => "cw",
        };
        if self.ca.is_some() {
            format!("ca-{base}")
        } else {
            base.to_string()
        }
    }
}

/// A masked loss: per-node terms aligned with the mask, and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_node: Vec<f64>,
}

impl LossValue {
    fn from_terms(per_node: Vec<f64>) -> Self {
        LossValue {
            total: per_node.iter().sum(),
            per_node,
        }
    }
}

fn check_mask(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask);
    }
    if labels.len() != logits.nrows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.nrows()
        )));
    }
    if let Some(&v) = mask.iter().find(|&&v| v >= logits.nrows()) {
        return Err(Error::NodeOutOfRange {
            index: v,
            n_nodes: logits.nrows(),
        });
    }
    Ok(())
}

fn log_sum_exp(z: ArrayView1<f64>) -> f64 {
    let m = z.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + z.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

fn nll_term(z: ArrayView1<f64>, label: usize) -> f64 {
    log_sum_exp(z) - z[label]
}

fn cw_term(z: ArrayView1<f64>, label: usize, kappa: f64) -> f64 {
    let other = runner_up(z, label);
    (z[label] - z[other]).max(-kappa)
}

pub fn nll_loss(logits: &Array2<f64>, labels: &[usize], mask: &[usize]) -> Result<LossValue> {
    check_mask(logits, labels, mask)?;
    Ok(LossValue::from_terms(
        mask.iter().map(|&v| nll_term(logits.row(v), labels[v])).collect(),
    ))
}

pub fn cw_loss(logits: &Array2<f64>, labels: &[usize], mask: &[usize], kappa: f64) -> Result<LossValue> {
    check_mask(logits, labels, mask)?;
    if logits.ncols() < 2 {
        return Err(Error::TooFewClasses(logits.ncols()));
    }
    Ok(LossValue::from_terms(
        mask.iter().map(|&v| cw_term(logits.row(v), labels[v], kappa)).collect(),
    ))
}

pub fn ca_weights(margins: &[f64], params: &CaWeightParams) -> Vec<f64> {
    margins.iter().map(|&m| params.weight(m)).collect()
}

/// Base loss per node scaled by `w(v)` computed from the current margins.
pub fn ca_loss(
    logits: &Array2<f64>,
    labels: &[usize],
    mask: &[usize],
    params: &CaWeightParams,
    base: LossKind,
    kappa: f64,
) -> Result<LossValue> {
    let base_value = match base {
        LossKind::Nll => nll_loss(logits, labels, mask)?,
        LossKind::Cw => cw_loss(logits, labels, mask, kappa)?,
    };
    let phi = margins(logits, labels)?;
    Ok(LossValue::from_terms(
        mask.iter()
            .zip(&base_value.per_node)
            .map(|(&v, l)| params.weight(phi[v]) * l)
            .collect(),
    ))
}

/// Evaluates a loss spec as the quantity the attacker *maximizes*.
///
/// For NLL this is `Σ w(v)·nll(v)`; for CW it is `−Σ w(v)·cw(v)`, so larger is
/// always better for the attacker. Node weights are fixed when the objective
/// is built and do not move with the logits passed to later calls.
#[derive(Debug, Clone)]
pub struct AttackObjective {
    kind: LossKind,
    kappa: f64,
    labels: Vec<usize>,
    nodes: Vec<usize>,
    weights: Vec<f64>,
}

impl AttackObjective {
    /// Builds the objective over `nodes`, taking CA weights (if any) from the
    /// margins of `logits` against `labels`.
    pub fn new(spec: &LossSpec, logits: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> Result<Self> {
        spec.validate()?;
        check_mask(logits, labels, nodes)?;
        if logits.ncols() < 2 {
            return Err(Error::TooFewClasses(logits.ncols()));
        }
        let weights = match &spec.ca {
            Some(p) => {
                let phi = margins(logits, labels)?;
                nodes.iter().map(|&v| p.weight(phi[v])).collect()
            }
            None => vec![1.0; nodes.len()],
        };
        Ok(AttackObjective {
            kind: spec.base,
            kappa: spec.cw_kappa,
            labels: labels.to_vec(),
            nodes: nodes.to_vec(),
            weights,
        })
    }

    /// Same objective with explicit node weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.nodes.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} nodes",
                weights.len(),
                self.nodes.len()
            )));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Signed, weighted contribution of each node, aligned with [`Self::nodes`].
    pub fn node_values(&self, logits: &Array2<f64>) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| {
                let z = logits.row(v);
                match self.kind {
                    LossKind::Nll => w * nll_term(z, self.labels[v]),
                    LossKind::Cw => -w * cw_term(z, self.labels[v], self.kappa),
                }
            })
            .collect()
    }

    pub fn value(&self, logits: &Array2<f64>) -> f64 {
        self.node_values(logits).iter().sum()
    }

    /// Gradient of node `nodes()[idx]`'s term with respect to its logit row.
    pub fn node_logit_gradient(&self, logits: &Array2<f64>, idx: usize) -> Vec<f64> {
        let v = self.nodes[idx];
        let w = self.weights[idx];
        let z = logits.row(v);
        let label = self.labels[v];
        let mut g = vec![0.0; z.len()];
        match self.kind {
            LossKind::Nll => {
                let lse = log_sum_exp(z);
                for (gc, &zc) in g.iter_mut().zip(z) {
                    *gc = w * (zc - lse).exp();
                }
                g[label] -= w;
            }
            LossKind::Cw => {
                let other = runner_up(z, label);
                // the clamp is flat once φ ≤ −κ
                if z[label] - z[other] > -self.kappa {
                    g[label] = -w;
                    g[other] = w;
                }
            }
        }
        g
    }

    /// `∂J/∂Z`, zero outside the objective's nodes.
    pub fn logit_gradient(&self, logits: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(logits.raw_dim());
        for (idx, &v) in self.nodes.iter().enumerate() {
            let g = self.node_logit_gradient(logits, idx);
            for (o, x) in out.row_mut(v).iter_mut().zip(g) {
                *o = x;
            }
        }
        out
    }
}

/// Whether node `v` is classified as `label` under the argmax tie-break.
pub fn is_correct(logits: &Array2<f64>, v: usize, label: usize) -> bool {
    argmax(logits.row(v)) == label
}
