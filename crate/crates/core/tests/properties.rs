mod common;

use ca_attack::attack::{dice_attack, meta_attack, AttackConfig, FlipOp};
use ca_attack::graph::{Features, Graph};
use ca_attack::loss::{ca_weights, AttackObjective, CaWeightParams, LossSpec};
use ca_attack::surrogate::{argmax, forward_logits, margins, SurrogateHyper, SurrogateParams};
use ca_attack::synth::SbmSpec;
use ndarray::Array2;
use proptest::prelude::*;

fn arb_graph() -> impl Strategy<Value = Graph> {
    (2usize..16).prop_flat_map(|n| {
        let pairs = proptest::collection::vec((0..n, 0..n), 0..3 * n);
        pairs.prop_map(move |ps| {
            let edges: Vec<_> = ps.into_iter().filter(|(i, j)| i != j).collect();
            let labels = (0..n).map(|v| v % 2).collect();
            Graph::new(&edges, Features::identity(n), labels, 2, vec![false; n]).unwrap()
        })
    })
}

fn fast_surrogate() -> SurrogateHyper {
    SurrogateHyper {
        epochs: 60,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flip_is_an_involution(g in arb_graph(), a in 0usize..16, b in 0usize..16) {
        let n = g.n_nodes();
        let (i, j) = (a % n, b % n);
        prop_assume!(i != j);
        let once = g.flip_edge(i, j).unwrap();
        prop_assert_ne!(once.has_edge(i, j), g.has_edge(i, j));
        prop_assert_eq!(once.count_flips(&g).unwrap(), 1);
        prop_assert_eq!(once.flip_edge(j, i).unwrap(), g);
    }

    #[test]
    fn normalized_adjacency_is_symmetric_and_bounded(g in arb_graph()) {
        let a = g.normalize().to_dense();
        let n = g.n_nodes();
        for i in 0..n {
            prop_assert!(a[[i, i]] > 0.0 && a[[i, i]] <= 1.0);
            for j in 0..n {
                prop_assert_eq!(a[[i, j]], a[[j, i]]);
                prop_assert!(a[[i, j]] >= 0.0 && a[[i, j]] <= 1.0);
                prop_assert_eq!(a[[i, j]] > 0.0, i == j || g.has_edge(i, j));
            }
        }
    }

    #[test]
    fn lcc_is_connected_and_idempotent(g in arb_graph()) {
        let l = g.largest_connected_component();
        prop_assert_eq!(l.connected_components().len(), 1);
        prop_assert_eq!(l.largest_connected_component(), l.clone());
        let biggest = g.connected_components().iter().map(Vec::len).max().unwrap();
        prop_assert_eq!(l.n_nodes(), biggest);
    }

    #[test]
    fn logits_are_linear_in_weights(
        g in arb_graph(),
        c in -3.0f64..3.0,
        seed in 0u64..1000,
    ) {
        let n = g.n_nodes();
        let w1 = ca_attack::surrogate::init_weights(n, 2, seed);
        let w2 = ca_attack::surrogate::init_weights(n, 2, seed + 1);
        let adj = g.normalize();
        let z = |w: Array2<f64>| forward_logits(&SurrogateParams { w }, &adj, g.features()).unwrap();
        let lhs = z(&w1 * c + &w2);
        let rhs = z(w1.clone()) * c + z(w2.clone());
        for (x, y) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn margin_sign_matches_argmax(rows in proptest::collection::vec(proptest::collection::vec(-5.0f64..5.0, 3), 1..20), pick in 0usize..3) {
        let n = rows.len();
        let z = Array2::from_shape_vec((n, 3), rows.concat()).unwrap();
        let labels = vec![pick; n];
        let phi = margins(&z, &labels).unwrap();
        for (v, &p) in phi.iter().enumerate() {
            if p > 0.0 {
                prop_assert_eq!(argmax(z.row(v)), pick);
            }
            if p < 0.0 {
                prop_assert_ne!(argmax(z.row(v)), pick);
            }
        }
    }

    #[test]
    fn ca_weights_are_bounded_by_alpha(m in proptest::collection::vec(-10.0f64..10.0, 1..30)) {
        let p = CaWeightParams::citation();
        for (w, phi) in ca_weights(&m, &p).into_iter().zip(&m) {
            let alpha = if *phi >= 0.0 { p.alpha1 } else { p.alpha2 };
            prop_assert!(w > 0.0 || phi.abs() > 5.0);
            prop_assert!(w <= alpha);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn meta_attack_keeps_graph_invariants(seed in 0u64..10_000, budget in 0usize..8, cw in any::<bool>()) {
        let g = common::split_sbm(&SbmSpec::new(vec![12, 12], 0.35, 0.05, seed));
        let loss = if cw { LossSpec::cw() } else { LossSpec::nll() };
        let cfg = AttackConfig {
            budget,
            loss: loss.with_ca(CaWeightParams::citation()),
            surrogate: fast_surrogate(),
            seed,
            ..Default::default()
        };
        let r = meta_attack(&g, &cfg).unwrap();
        check_poisoned(&g, &r.poisoned, &r.flips, budget)?;
        // chosen flips have strictly positive gain
        prop_assert!(r.trace.iter().all(|t| t.score > 0.0));
    }

    #[test]
    fn dice_keeps_graph_invariants(seed in 0u64..10_000, budget in 0usize..10) {
        let g = common::split_sbm(&SbmSpec::new(vec![12, 12], 0.35, 0.05, seed));
        let cfg = AttackConfig { budget, surrogate: fast_surrogate(), seed, ..Default::default() };
        let r = dice_attack(&g, &cfg).unwrap();
        check_poisoned(&g, &r.poisoned, &r.flips, budget)?;
        prop_assert_eq!(r.flips.len(), budget);
        let t = &r.target_labels;
        for f in &r.flips {
            match f.op {
                FlipOp::Delete => prop_assert_eq!(t[f.i], t[f.j]),
                FlipOp::Add => prop_assert_ne!(t[f.i], t[f.j]),
            }
        }
    }
}

fn check_poisoned(
    clean: &Graph,
    poisoned: &Graph,
    flips: &[ca_attack::Flip],
    budget: usize,
) -> Result<(), TestCaseError> {
    prop_assert!(flips.len() <= budget);
    prop_assert_eq!(clean.count_flips(poisoned).unwrap(), flips.len());
    let a = poisoned.adjacency_dense();
    prop_assert_eq!(a.t(), a.view());
    for v in 0..poisoned.n_nodes() {
        prop_assert_eq!(a[[v, v]], 0.0);
        prop_assert!(poisoned.degree(v) > 0, "node {v} isolated");
    }
    Ok(())
}

#[test]
fn objective_signs_follow_loss_kind() {
    let z = ndarray::array![[2.0, 0.0], [0.0, 1.0]];
    let labels = [0, 0];
    let nll = AttackObjective::new(&LossSpec::nll(), &z, &labels, &[0, 1]).unwrap();
    let cw = AttackObjective::new(&LossSpec::cw(), &z, &labels, &[0, 1]).unwrap();
    assert!(nll.value(&z) > 0.0);
    // cw objective is minus the clamped margins: -(2) - max(-1, 0) = -2
    assert_eq!(cw.value(&z), -2.0);
}
