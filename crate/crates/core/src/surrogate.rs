//! The linearized two-layer GCN `softmax(Â²XW)` the attacker trains as a
//! stand-in for the victim, plus argmax, margin and pseudo-label helpers.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Features, Graph, NormalizedAdjacency, SparseRows};

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(z: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (c, &x) in z.iter().enumerate().skip(1) {
        if x > z[best] {
            best = c;
        }
    }
    best
}

/// Index of the largest entry other than `label`; ties go to the smallest index.
pub fn runner_up(z: ArrayView1<f64>, label: usize) -> usize {
    let mut best = usize::MAX;
    for (c, &x) in z.iter().enumerate() {
        if c != label && (best == usize::MAX || x > z[best]) {
            best = c;
        }
    }
    best
}

/// Classification margins `z[label] − max_{c≠label} z[c]` for every row.
pub fn margins(logits: &Array2<f64>, labels: &[usize]) -> Result<Vec<f64>> {
    if logits.ncols() < 2 {
        return Err(Error::TooFewClasses(logits.ncols()));
    }
    if labels.len() != logits.nrows() {
        return Err(Error::Dimension(format!(
            "{} labels for {} logit rows",
            labels.len(),
            logits.nrows()
        )));
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(v, &y)| {
            let z = logits.row(v);
            z[y] - z[runner_up(z, y)]
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateParams {
    /// `d × K`.
    pub w: Array2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateHyper {
    /// Step size; `None` picks `1/L` from the smoothness bound of the objective.
    pub lr: Option<f64>,
    pub epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SurrogateHyper {
    fn default() -> Self {
        SurrogateHyper {
            lr: None,
            epochs: 200,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

/// Trained weights together with the training objective before each update
/// and after the last one.
#[derive(Debug, Clone)]
pub struct SurrogateFit {
    pub params: SurrogateParams,
    pub losses: Vec<f64>,
}

/// Pre-softmax scores `Â·(Â·(X·W))`.
pub fn forward_logits(params: &SurrogateParams, adj: &NormalizedAdjacency, features: &Features) -> Result<Array2<f64>> {
    if features.n_rows() != adj.n_nodes() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} nodes",
            features.n_rows(),
            adj.n_nodes()
        )));
    }
    if params.w.nrows() != features.dim() {
        return Err(Error::Dimension(format!(
            "weight has {} rows, features have {} columns",
            params.w.nrows(),
            features.dim()
        )));
    }
    let h = features.sparse().matmul(&params.w);
    Ok(adj.propagate(&adj.propagate(&h)))
}

pub fn init_weights(d: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (d.max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((d, k), || rng.random_range(-scale..scale))
}

/// Rows `nodes` of `Â²X`, kept sparse.
pub fn two_hop_features(adj: &NormalizedAdjacency, x: &SparseRows, nodes: &[usize]) -> SparseRows {
    let d = x.n_cols;
    let rows: Vec<(Vec<usize>, Vec<f64>)> = crate::par::map_slice(nodes, |&i| {
        let mut acc = vec![0.0; d];
        let mut touched = vec![false; d];
        let mut cols = Vec::new();
        for (j, a_ij) in adj.row(i) {
            for (k, a_jk) in adj.row(j) {
                let coef = a_ij * a_jk;
                for (f, v) in x.row(k) {
                    if !touched[f] {
                        touched[f] = true;
                        cols.push(f);
                    }
                    acc[f] += coef * v;
                }
            }
        }
        cols.sort_unstable();
        let vals = cols.iter().map(|&f| acc[f]).collect();
        (cols, vals)
    });
    let mut indptr = vec![0];
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (c, v) in rows {
        indices.extend(c);
        values.extend(v);
        indptr.push(indices.len());
    }
    SparseRows {
        n_cols: d,
        indptr,
        indices,
        values,
    }
}

/// Largest eigenvalue of `FᵀF` by power iteration.
fn gram_spectral_norm(f: &SparseRows, d: usize) -> f64 {
    let mut v = Array2::from_elem((d, 1), 1.0 / (d.max(1) as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..50 {
        let u = f.t_matmul(&f.matmul(&v));
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        if (norm - lambda).abs() <= 1e-9 * norm {
            return norm;
        }
        lambda = norm;
        v = u / norm;
    }
    lambda
}

/// `1/L` for the mean softmax NLL over rows of `f` plus `wd/2·‖W‖²`. The
/// softmax Hessian is bounded by `½I`, so `L ≤ λ_max(FᵀF)/(2n) + wd` and
/// gradient descent at this step never increases the loss.
pub fn auto_step(f: &SparseRows, weight_decay: f64) -> f64 {
    let n = f.n_rows().max(1) as f64;
    1.0 / (gram_spectral_norm(f, f.n_cols) / (2.0 * n) + weight_decay)
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    row.iter_mut().for_each(|x| *x /= s);
}

/// Full-batch gradient descent on the mean labeled-node NLL plus
/// `weight_decay/2 · ‖W‖²`.
pub fn train_surrogate_traced(g: &Graph, hyper: &SurrogateHyper) -> Result<SurrogateFit> {
    let labeled = g.labeled_nodes();
    if labeled.is_empty() {
        return Err(Error::NoLabeledNodes);
    }
    if g.n_classes() < 2 {
        return Err(Error::TooFewClasses(g.n_classes()));
    }
    let adj = g.normalize();
    let f = two_hop_features(&adj, g.features().sparse(), &labeled);
    let k = g.n_classes();
    let d = g.features().dim();
    let labels = g.labels();
    let n_l = labeled.len() as f64;
    let mut w = init_weights(d, k, hyper.seed);
    let mut losses = Vec::with_capacity(hyper.epochs + 1);

    let objective = |w: &Array2<f64>, grad: Option<&mut Array2<f64>>| -> f64 {
        let mut z = f.matmul(w);
        let mut nll = 0.0;
        for (r, &v) in labeled.iter().enumerate() {
            let mut row = z.row_mut(r);
            let row = row.as_slice_mut().expect("contiguous row");
            let y = labels[v];
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            nll += lse - row[y];
            softmax_in_place(row);
            row[y] -= 1.0;
        }
        let reg = 0.5 * hyper.weight_decay * w.iter().map(|x| x * x).sum::<f64>();
        if let Some(grad) = grad {
            z.mapv_inplace(|x| x / n_l);
            *grad = f.t_matmul(&z);
            grad.scaled_add(hyper.weight_decay, w);
        }
        nll / n_l + reg
    };

    let lr = hyper.lr.unwrap_or_else(|| auto_step(&f, hyper.weight_decay));
    let mut grad = Array2::zeros((d, k));
    for _ in 0..hyper.epochs {
        losses.push(objective(&w, Some(&mut grad)));
        w.scaled_add(-lr, &grad);
    }
    losses.push(objective(&w, None));
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("surrogate diverged at lr {lr}")));
    }
    Ok(SurrogateFit {
        params: SurrogateParams { w },
        losses,
    })
}

pub fn train_surrogate(g: &Graph, hyper: &SurrogateHyper) -> Result<SurrogateParams> {
    train_surrogate_traced(g, hyper).map(|fit| fit.params)
}

/// Ground truth on labeled nodes, surrogate argmax elsewhere.
pub fn pseudo_labels(params: &SurrogateParams, g: &Graph) -> Result<Vec<usize>> {
    let logits = forward_logits(params, &g.normalize(), g.features())?;
    Ok(pseudo_labels_from_logits(&logits, g))
}

pub fn pseudo_labels_from_logits(logits: &Array2<f64>, g: &Graph) -> Vec<usize> {
    (0..g.n_nodes())
        .map(|v| {
            if g.labeled_mask()[v] {
                g.labels()[v]
            } else {
                argmax(logits.row(v))
            }
        })
        .collect()
}
