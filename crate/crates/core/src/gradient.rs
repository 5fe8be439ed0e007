//! Gradients of the attack objective with respect to the adjacency matrix.
//!
//! With `H = XW`, `S = ÂH` and logits `Z = ÂS`, the objective `J(Z)` has
//!
//! ```text
//! ∂J/∂Â       = Ḡ = G·Sᵀ + (Â·G)·Hᵀ,                  G = ∂J/∂Z
//! ∂J/∂Ã_ij    = Ḡ_ij·s_i·s_j − r_i / (2·d_i),          s = d^{-1/2}
//! r_i         = Σ_l (Ḡ_il + Ḡ_li)·Â_il
//! ```
//!
//! where `Ã = A + I` and `d` are its row sums. The second term is the path
//! through the degree normalization. Surrogate weights stay fixed, and so do
//! any cost-aware node weights baked into the [`AttackObjective`].
//!
//! The returned [`GradMatrix`] is `(M + Mᵀ)/2` with a zero diagonal, which is
//! the derivative with respect to one entry of a symmetric pair: moving
//! `A_ij` and `A_ji` together by `t` changes `J` by `2t·grad[i][j]`.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{Features, Graph, NormalizedAdjacency};
use crate::loss::{AttackObjective, LossSpec};
use crate::surrogate::{forward_logits, SurrogateParams};

/// Symmetric gradient of the attack objective over adjacency entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMatrix {
    matrix: Array2<f64>,
}

impl GradMatrix {
    /// Symmetrizes `raw` and clears its diagonal.
    pub fn from_raw(raw: &Array2<f64>) -> Self {
        let n = raw.nrows();
        let matrix = Array2::from_shape_fn(
            (n, n),
            |(i, j)| {
                if i == j {
                    0.0
                } else {
                    0.5 * (raw[[i, j]] + raw[[j, i]])
                }
            },
        );
        GradMatrix { matrix }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[[i, j]]
    }

    pub fn n_nodes(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Intermediate products of the surrogate forward pass.
pub struct Forward {
    pub h: Array2<f64>,
    pub s: Array2<f64>,
    pub z: Array2<f64>,
}

impl Forward {
    pub fn new(adj: &NormalizedAdjacency, features: &Features, params: &SurrogateParams) -> Result<Self> {
        if features.n_rows() != adj.n_nodes() || params.w.nrows() != features.dim() {
            return Err(Error::Dimension(format!(
                "features {}×{}, weights {}×{}, graph of {} nodes",
                features.n_rows(),
                features.dim(),
                params.w.nrows(),
                params.w.ncols(),
                adj.n_nodes()
            )));
        }
        let h = features.sparse().matmul(&params.w);
        let s = adj.propagate(&h);
        let z = adj.propagate(&s);
        Ok(Forward { h, s, z })
    }
}

fn dot(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `∂J/∂Ã` for an arbitrary logit gradient `g = ∂J/∂Z`, before symmetrization.
pub fn raw_from_logit_gradient(adj: &NormalizedAdjacency, fwd: &Forward, g: &Array2<f64>) -> Array2<f64> {
    let n = adj.n_nodes();
    let p = adj.propagate(g);
    let mut gbar = Array2::zeros((n, n));
    crate::par::for_each_row(gbar.as_slice_mut().expect("standard layout"), n, |i, row| {
        let (gi, pi) = (g.row(i), p.row(i));
        for (j, out) in row.iter_mut().enumerate() {
            *out = dot(gi, fwd.s.row(j)) + dot(pi, fwd.h.row(j));
        }
    });
    let s = adj.inv_sqrt_degrees();
    let d = adj.degrees();
    let c: Vec<f64> = (0..n)
        .map(|i| {
            let r: f64 = adj.row(i).map(|(l, a)| (gbar[[i, l]] + gbar[[l, i]]) * a).sum();
            r / (2.0 * d[i])
        })
        .collect();
    crate::par::for_each_row(gbar.as_slice_mut().expect("standard layout"), n, |i, row| {
        for (j, x) in row.iter_mut().enumerate() {
            *x = *x * s[i] * s[j] - c[i];
        }
    });
    gbar
}

/// Pre-symmetrization gradient of `objective` with respect to `A`.
pub fn raw_gradient(
    adj: &NormalizedAdjacency,
    features: &Features,
    params: &SurrogateParams,
    objective: &AttackObjective,
) -> Result<Array2<f64>> {
    let fwd = Forward::new(adj, features, params)?;
    let g = objective.logit_gradient(&fwd.z);
    Ok(raw_from_logit_gradient(adj, &fwd, &g))
}

/// Symmetric gradient of `objective` with respect to `A`.
pub fn objective_gradient(
    adj: &NormalizedAdjacency,
    features: &Features,
    params: &SurrogateParams,
    objective: &AttackObjective,
) -> Result<GradMatrix> {
    let fwd = Forward::new(adj, features, params)?;
    let g = objective.logit_gradient(&fwd.z);
    Ok(symmetric_from_logit_gradient(adj, &fwd, &g))
}

/// `GradMatrix::from_raw(raw_from_logit_gradient(..))`, symmetrized row-parallel.
fn symmetric_from_logit_gradient(adj: &NormalizedAdjacency, fwd: &Forward, g: &Array2<f64>) -> GradMatrix {
    let raw = raw_from_logit_gradient(adj, fwd, g);
    let n = raw.nrows();
    let mut matrix = Array2::zeros((n, n));
    crate::par::for_each_row(matrix.as_slice_mut().expect("standard layout"), n, |i, row| {
        for (j, x) in row.iter_mut().enumerate() {
            if i != j {
                *x = 0.5 * (raw[[i, j]] + raw[[j, i]]);
            }
        }
    });
    GradMatrix { matrix }
}

/// Objective over the unlabeled nodes of `g`, with cost-aware weights taken
/// from the current margins against `labels`.
pub fn unlabeled_objective(
    g: &Graph,
    adj: &NormalizedAdjacency,
    params: &SurrogateParams,
    spec: &LossSpec,
    labels: &[usize],
) -> Result<AttackObjective> {
    let logits = forward_logits(params, adj, g.features())?;
    AttackObjective::new(spec, &logits, labels, &g.unlabeled_nodes())
}

/// Gradient of the attack loss over the unlabeled nodes of `g`, surrogate
/// weights held fixed.
pub fn attack_gradient(g: &Graph, params: &SurrogateParams, spec: &LossSpec, labels: &[usize]) -> Result<GradMatrix> {
    let adj = g.normalize();
    let objective = unlabeled_objective(g, &adj, params, spec, labels)?;
    objective_gradient(&adj, g.features(), params, &objective)
}

/// Pre-symmetrization gradient of node `objective.nodes()[idx]`'s own term.
pub fn per_node_raw_gradient(
    adj: &NormalizedAdjacency,
    features: &Features,
    params: &SurrogateParams,
    objective: &AttackObjective,
    idx: usize,
) -> Result<Array2<f64>> {
    let fwd = Forward::new(adj, features, params)?;
    let v = objective.nodes()[idx];
    let mut g = Array2::zeros(fwd.z.raw_dim());
    for (o, x) in g.row_mut(v).iter_mut().zip(objective.node_logit_gradient(&fwd.z, idx)) {
        *o = x;
    }
    Ok(raw_from_logit_gradient(adj, &fwd, &g))
}

/// Frobenius norm of each node's symmetrized, zero-diagonal gradient matrix,
/// aligned with `objective.nodes()`.
///
/// A single node's `Ḡ` is nonzero only on the rows of its closed
/// neighborhood, and the degree correction only reaches one hop further, so
/// each norm costs `O(|2-hop ball| · N)` instead of `O(N²)`.
pub fn per_node_gradient_norms(
    adj: &NormalizedAdjacency,
    features: &Features,
    params: &SurrogateParams,
    objective: &AttackObjective,
) -> Result<Vec<f64>> {
    let fwd = Forward::new(adj, features, params)?;
    let n = adj.n_nodes();
    let s = adj.inv_sqrt_degrees();
    let d = adj.degrees();
    let nodes = objective.nodes();
    let norms = crate::par::map_range(nodes.len(), |idx| {
        let v = nodes[idx];
        let gv = objective.node_logit_gradient(&fwd.z, idx);
        let gv = ndarray::ArrayView1::from(&gv[..]);
        let a: Vec<f64> = (0..n).map(|j| dot(fwd.s.row(j), gv)).collect();
        let b: Vec<f64> = (0..n).map(|j| dot(fwd.h.row(j), gv)).collect();
        // rv[i] = Â_iv, nonzero on the closed neighborhood of v
        let mut rv = vec![0.0; n];
        let mut in_ball = vec![false; n];
        let mut ball = Vec::new();
        for (i, x) in adj.row(v) {
            rv[i] = x;
        }
        for (i, _) in adj.row(v) {
            for (l, _) in adj.row(i) {
                if !in_ball[l] {
                    in_ball[l] = true;
                    ball.push(l);
                }
            }
        }
        let gbar = |i: usize, j: usize| {
            let mut x = rv[i] * b[j];
            if i == v {
                x += a[j];
            }
            x
        };
        let mut c = vec![0.0; n];
        for &i in &ball {
            let r: f64 = adj.row(i).map(|(l, x)| (gbar(i, l) + gbar(l, i)) * x).sum();
            c[i] = r / (2.0 * d[i]);
        }
        let mut total = 0.0;
        for &i in &ball {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let e = 0.5 * (s[i] * s[j] * (gbar(i, j) + gbar(j, i)) - c[i] - c[j]);
                let e2 = e * e;
                total += if in_ball[j] { e2 } else { 2.0 * e2 };
            }
        }
        total.sqrt()
    });
    Ok(norms)
}

/// `(node, ‖g_v‖₂)` for every unlabeled node of `g`.
pub fn per_node_gradients(
    g: &Graph,
    params: &SurrogateParams,
    spec: &LossSpec,
    labels: &[usize],
) -> Result<Vec<(usize, f64)>> {
    let adj = g.normalize();
    let objective = unlabeled_objective(g, &adj, params, spec, labels)?;
    let norms = per_node_gradient_norms(&adj, g.features(), params, &objective)?;
    Ok(objective.nodes().iter().copied().zip(norms).collect())
}

/// Central differences of a fixed objective on the relaxed adjacency: each
/// symmetric pair is moved by `±h` together and the difference halved, so the
/// result is directly comparable to [`objective_gradient`]. Quadratic in the
/// node count; meant for small graphs.
pub fn finite_difference_for_objective(
    g: &Graph,
    params: &SurrogateParams,
    objective: &AttackObjective,
    h: f64,
) -> Result<GradMatrix> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {h}")));
    }
    let n = g.n_nodes();
    let base = g.adjacency_dense();
    let eval = |i: usize, j: usize, delta: f64| -> Result<f64> {
        let mut a = base.clone();
        a[[i, j]] += delta;
        a[[j, i]] += delta;
        let adj = NormalizedAdjacency::from_weighted(&a)?;
        Ok(objective.value(&forward_logits(params, &adj, g.features())?))
    };
    let mut matrix = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let diff = (eval(i, j, h)? - eval(i, j, -h)?) / (4.0 * h);
            matrix[[i, j]] = diff;
            matrix[[j, i]] = diff;
        }
    }
    Ok(GradMatrix { matrix })
}

/// Finite-difference counterpart of [`attack_gradient`]; cost-aware weights
/// are frozen at the unperturbed graph.
pub fn finite_difference_gradient(
    g: &Graph,
    params: &SurrogateParams,
    spec: &LossSpec,
    labels: &[usize],
    h: f64,
) -> Result<GradMatrix> {
    let adj = g.normalize();
    let objective = unlabeled_objective(g, &adj, params, spec, labels)?;
    finite_difference_for_objective(g, params, &objective, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Features;
    use crate::loss::CaWeightParams;
    use ndarray::array;

    fn path_graph() -> Graph {
        let f = Features::new(array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [0.5, 0.0], [0.0, 2.0]]);
        Graph::new(
            &[(0, 1), (1, 2), (2, 3), (3, 4)],
            f,
            vec![0, 1, 0, 1, 1],
            2,
            vec![true, false, true, false, false],
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_zero_gradient() {
        let g = path_graph();
        let p = SurrogateParams {
            w: Array2::zeros((2, 2)),
        };
        let grad = attack_gradient(&g, &p, &LossSpec::nll(), g.labels()).unwrap();
        assert!(grad.matrix().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn symmetric_zero_diagonal() {
        let g = path_graph();
        let p = SurrogateParams {
            w: array![[0.3, -0.2], [0.1, 0.4]],
        };
        let grad = attack_gradient(&g, &p, &LossSpec::nll(), g.labels()).unwrap();
        let m = grad.matrix();
        for i in 0..5 {
            assert_eq!(m[[i, i]], 0.0);
            for j in 0..5 {
                assert_eq!(m[[i, j]], m[[j, i]]);
            }
        }
    }

    #[test]
    fn matches_finite_differences_on_a_path() {
        let g = path_graph();
        let p = SurrogateParams {
            w: array![[0.3, -0.2], [0.1, 0.4]],
        };
        for spec in [
            LossSpec::nll(),
            LossSpec::cw(),
            LossSpec::nll().with_ca(CaWeightParams::citation()),
        ] {
            let an = attack_gradient(&g, &p, &spec, g.labels()).unwrap();
            let fd = finite_difference_gradient(&g, &p, &spec, g.labels(), 1e-5).unwrap();
            let scale = fd.matrix().iter().fold(0.0f64, |m, x| m.max(x.abs()));
            for (x, y) in an.matrix().iter().zip(fd.matrix()) {
                assert!((x - y).abs() <= 1e-6 * scale.max(1e-12), "{spec:?}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn nonpositive_step_rejected() {
        let g = path_graph();
        let p = SurrogateParams {
            w: Array2::zeros((2, 2)),
        };
        assert!(finite_difference_gradient(&g, &p, &LossSpec::nll(), g.labels(), 0.0).is_err());
    }

    #[test]
    fn fast_norms_match_dense_per_node_matrices() {
        let g = path_graph();
        let p = SurrogateParams {
            w: array![[0.3, -0.2], [0.1, 0.4]],
        };
        let adj = g.normalize();
        let obj = unlabeled_objective(&g, &adj, &p, &LossSpec::nll(), g.labels()).unwrap();
        let fast = per_node_gradient_norms(&adj, g.features(), &p, &obj).unwrap();
        for (idx, norm) in fast.iter().enumerate() {
            let raw = per_node_raw_gradient(&adj, g.features(), &p, &obj, idx).unwrap();
            let dense = GradMatrix::from_raw(&raw)
                .matrix()
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt();
            assert!((norm - dense).abs() <= 1e-12 * dense.max(1e-300), "{norm} vs {dense}");
        }
    }
}
