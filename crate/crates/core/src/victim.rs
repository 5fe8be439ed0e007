//! Two-layer GCN victim, `Â·relu(Â·X·W1 + b1)·W2 + b2`, trained with Adam.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NormalizedAdjacency, SparseRows};
use crate::surrogate::argmax;

#[derive(Debug, Clone, PartialEq)]
pub struct VictimParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VictimHyper {
    pub hidden: usize,
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for VictimHyper {
    fn default() -> Self {
        VictimHyper {
            hidden: 16,
            lr: 0.01,
            epochs: 200,
            weight_decay: 5e-4,
            dropout: 0.5,
            seed: 0,
        }
    }
}

impl VictimHyper {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::InvalidParameter("hidden width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidParameter("dropout must lie in [0, 1)".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidParameter("victim lr must be positive".into()));
        }
        Ok(())
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit))
}

impl VictimParams {
    pub fn init(d: usize, hidden: usize, k: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        VictimParams {
            w1: glorot(&mut rng, d, hidden),
            b1: Array1::zeros(hidden),
            w2: glorot(&mut rng, hidden, k),
            b2: Array1::zeros(k),
        }
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, adj: &NormalizedAdjacency, x: &SparseRows) -> Array2<f64> {
        let mut p1 = adj.propagate(&x.matmul(&self.w1));
        p1 += &self.b1;
        p1.mapv_inplace(|v| v.max(0.0));
        let mut z = adj.propagate(&p1).dot(&self.w2);
        z += &self.b2;
        z
    }
}

/// Fraction of `nodes` whose argmax prediction equals the ground-truth label.
pub fn accuracy(logits: &Array2<f64>, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes.iter().filter(|&&v| argmax(logits.row(v)) == labels[v]).count();
    hits as f64 / nodes.len() as f64
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(lr: f64, sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            v: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    fn step(&mut self, params: [&mut [f64]; 4], grads: [&[f64]; 4]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (slot, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

fn drop_sparse(x: &SparseRows, p: f64, rng: &mut ChaCha8Rng) -> SparseRows {
    if p == 0.0 {
        return x.clone();
    }
    let scale = 1.0 / (1.0 - p);
    let values = x
        .values
        .iter()
        .map(|&v| if rng.random::<f64>() < p { 0.0 } else { v * scale })
        .collect();
    SparseRows { values, ..x.clone() }
}

/// Trains the victim on the labeled nodes of `g` and reports its accuracy on
/// the unlabeled nodes against ground truth.
pub fn train_victim(g: &Graph, hyper: &VictimHyper) -> Result<(VictimParams, f64)> {
    hyper.validate()?;
    let labeled = g.labeled_nodes();
    if labeled.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    let adj = g.normalize();
    let x = g.features().sparse();
    let labels = g.labels();
    let k = g.n_classes();
    let mut params = VictimParams::init(g.features().dim(), hyper.hidden, k, hyper.seed);
    // separate stream so that init does not shift with the epoch count
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9e37_79b9_7f4a_7c15);
    let sizes = [params.w1.len(), params.b1.len(), params.w2.len(), params.b2.len()];
    let mut adam = Adam::new(hyper.lr, &sizes);
    let n_l = labeled.len() as f64;
    let p = hyper.dropout;
    let keep_scale = 1.0 / (1.0 - p);

    for _ in 0..hyper.epochs {
        let xd = drop_sparse(x, p, &mut rng);
        let mut p1 = adj.propagate(&xd.matmul(&params.w1));
        p1 += &params.b1;
        let hidden_mask: Array2<f64> = Array2::from_shape_simple_fn(p1.raw_dim(), || {
            if p > 0.0 && rng.random::<f64>() < p {
                0.0
            } else {
                keep_scale
            }
        });
        let hd = p1.mapv(|v| v.max(0.0)) * &hidden_mask;
        let q = adj.propagate(&hd);
        let mut z = q.dot(&params.w2);
        z += &params.b2;

        let mut dz = Array2::zeros(z.raw_dim());
        for &v in &labeled {
            let row = z.row(v);
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let e: Vec<f64> = row.iter().map(|&t| (t - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for (c, ec) in e.iter().enumerate() {
                dz[[v, c]] = ec / s / n_l;
            }
            dz[[v, labels[v]]] -= 1.0 / n_l;
        }
        let mut dw2 = q.t().dot(&dz);
        dw2.scaled_add(hyper.weight_decay, &params.w2);
        let db2 = dz.sum_axis(Axis(0));
        let dhd = adj.propagate(&dz.dot(&params.w2.t()));
        let mut dp1 = dhd * &hidden_mask;
        dp1.zip_mut_with(&p1, |d, &pre| {
            if pre <= 0.0 {
                *d = 0.0
            }
        });
        let db1 = dp1.sum_axis(Axis(0));
        let mut dw1 = xd.t_matmul(&adj.propagate(&dp1));
        dw1.scaled_add(hyper.weight_decay, &params.w1);

        adam.step(
            [
                params.w1.as_slice_mut().expect("contiguous"),
                params.b1.as_slice_mut().expect("contiguous"),
                params.w2.as_slice_mut().expect("contiguous"),
                params.b2.as_slice_mut().expect("contiguous"),
            ],
            [
                dw1.as_slice().expect("contiguous"),
                db1.as_slice().expect("contiguous"),
                dw2.as_slice().expect("contiguous"),
                db2.as_slice().expect("contiguous"),
            ],
        );
    }

    let logits = params.logits(&adj, x);
    let acc = accuracy(&logits, labels, &g.unlabeled_nodes());
    Ok((params, acc))
}
