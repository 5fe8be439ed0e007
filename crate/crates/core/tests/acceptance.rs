//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.
//!
//! The citation-benchmark criteria read the Cora dataset from
//! `$CA_ATTACK_CORA_DIR`, falling back to `data/cora` at the workspace root.
//! Either the LINQS layout (`cora.content`, `cora.cites`) or the plain text
//! layout is accepted.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use ca_attack::attack::{dice_attack, meta_attack, AttackConfig, FlipOp};
use ca_attack::eval::{evaluate, margin_gradient_scatter};
use ca_attack::gradient::{
    finite_difference_for_objective, objective_gradient, per_node_gradient_norms, per_node_raw_gradient,
    unlabeled_objective,
};
use ca_attack::graph::Graph;
use ca_attack::io::{budget_for, load_dataset, run_experiment, DatasetFormat, ExperimentConfig, SplitSpec};
use ca_attack::loss::{ca_loss, cw_loss, nll_loss, CaWeightParams, LossKind, LossSpec};
use ca_attack::surrogate::{forward_logits, train_surrogate, SurrogateHyper};
use ca_attack::synth::SbmSpec;
use ca_attack::victim::VictimHyper;
use rand::{Rng, SeedableRng};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Largest entrywise gap relative to the largest magnitude in `reference`.
fn max_rel_error(got: &ndarray::Array2<f64>, reference: &ndarray::Array2<f64>) -> f64 {
    let scale = reference.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gap = (got - reference).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        gap
    } else {
        gap / scale
    }
}

fn reduction_identity() -> Outcome {
    let g = common::two_blocks(50, 0);
    check(g.n_nodes() == 100, format!("SBM LCC has {} nodes", g.n_nodes()))?;
    let uniform = CaWeightParams::uniform();
    let params = train_surrogate(&g, &SurrogateHyper::default()).map_err(|e| e.to_string())?;
    let adj = g.normalize();
    let z = forward_logits(&params, &adj, g.features()).unwrap();
    let nodes = g.unlabeled_nodes();
    let labels = g.labels();
    let mut worst = 0.0f64;
    for base in [LossKind::Nll, LossKind::Cw] {
        let plain = match base {
            LossKind::Nll => nll_loss(&z, labels, &nodes).unwrap(),
            LossKind::Cw => cw_loss(&z, labels, &nodes, 0.0).unwrap(),
        };
        let ca = ca_loss(&z, labels, &nodes, &uniform, base, 0.0).unwrap();
        check(
            rel_close(ca.total, plain.total, 1e-12),
            format!("{base:?} loss {} vs {}", ca.total, plain.total),
        )?;

        let spec = LossSpec {
            base,
            ca: None,
            cw_kappa: 0.0,
        };
        let ob = unlabeled_objective(&g, &adj, &params, &spec, labels).unwrap();
        let oc = unlabeled_objective(&g, &adj, &params, &spec.with_ca(uniform), labels).unwrap();
        let gb = objective_gradient(&adj, g.features(), &params, &ob).unwrap();
        let gc = objective_gradient(&adj, g.features(), &params, &oc).unwrap();
        let e = max_rel_error(gc.matrix(), gb.matrix());
        worst = worst.max(e);
        check(e <= 1e-12, format!("{base:?} gradient rel error {e:e}"))?;

        let cfg = AttackConfig {
            budget: budget_for(0.1, g.n_edges()),
            loss: spec,
            ..Default::default()
        };
        let rb = meta_attack(&g, &cfg).unwrap();
        let rc = meta_attack(
            &g,
            &AttackConfig {
                loss: spec.with_ca(uniform),
                ..cfg
            },
        )
        .unwrap();
        check(rb.flips == rc.flips, format!("{base:?} flip sequences differ"))?;
        for (a, b) in rb.trace.iter().zip(&rc.trace) {
            check(
                rel_close(a.objective_before.unwrap(), b.objective_before.unwrap(), 1e-12),
                "trace objectives differ",
            )?;
        }
    }
    Ok(format!(
        "loss, gradient (max rel {worst:.1e}) and flips identical for NLL and CW"
    ))
}

fn gradient_oracle() -> Outcome {
    let h = 1e-5;
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let g = common::random_small_graph(8, 3, 4, 100 + seed);
        let params = train_surrogate(&g, &SurrogateHyper::default()).unwrap();
        let adj = g.normalize();
        let labels = g.labels().to_vec();
        for spec in [
            LossSpec::nll(),
            LossSpec::cw(),
            LossSpec::nll().with_ca(CaWeightParams::citation()),
            LossSpec::cw().with_ca(CaWeightParams::citation()),
        ] {
            let ob = unlabeled_objective(&g, &adj, &params, &spec, &labels).unwrap();
            let exact = objective_gradient(&adj, g.features(), &params, &ob).unwrap();
            let fd = finite_difference_for_objective(&g, &params, &ob, h).unwrap();
            let e = max_rel_error(fd.matrix(), exact.matrix());
            check(e < 1e-4, format!("graph {seed}, {}: rel error {e:e}", spec.name()))?;
            worst = worst.max(e);
        }
    }
    Ok(format!("max relative error {worst:.2e} over 5 graphs x 4 losses"))
}

fn scaling_identity() -> Outcome {
    let g = common::random_small_graph(30, 3, 6, 7);
    let params = train_surrogate(&g, &SurrogateHyper::default()).unwrap();
    let adj = g.normalize();
    let labels = g.labels().to_vec();
    let ca_params = CaWeightParams::citation();
    let mut worst = 0.0f64;
    for base in [LossSpec::nll(), LossSpec::cw()] {
        let ob = unlabeled_objective(&g, &adj, &params, &base, &labels).unwrap();
        let oc = unlabeled_objective(&g, &adj, &params, &base.with_ca(ca_params), &labels).unwrap();
        let nb = per_node_gradient_norms(&adj, g.features(), &params, &ob).unwrap();
        let nc = per_node_gradient_norms(&adj, g.features(), &params, &oc).unwrap();
        for idx in 0..ob.nodes().len() {
            let w = oc.weights()[idx];
            check(
                rel_close(nc[idx], w * nb[idx], 1e-10) || nb[idx] == 0.0 && nc[idx] == 0.0,
                format!("node {}: norm {} vs w·base {}", ob.nodes()[idx], nc[idx], w * nb[idx]),
            )?;
            let gb = per_node_raw_gradient(&adj, g.features(), &params, &ob, idx).unwrap();
            let gc = per_node_raw_gradient(&adj, g.features(), &params, &oc, idx).unwrap();
            for (c, b) in gc.iter().zip(gb.iter()) {
                let scaled = w * b;
                check(
                    rel_close(*c, scaled, 1e-10) || (c - scaled).abs() < 1e-300,
                    format!("entry {c} vs {scaled}"),
                )?;
                if scaled != 0.0 {
                    worst = worst.max((c - scaled).abs() / scaled.abs());
                }
            }
        }
    }
    Ok(format!(
        "per-node norms and entries scale by w(v); max rel gap {worst:.1e}"
    ))
}

fn invariants() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
    let mut flips_seen = 0;
    for case in 0..50 {
        let k = rng.random_range(2..=4);
        let sizes: Vec<usize> = (0..k).map(|_| rng.random_range(8..=20)).collect();
        let spec = SbmSpec::new(sizes, rng.random_range(0.2..0.5), rng.random_range(0.0..0.05), case).with_features(
            if case % 2 == 0 { 0 } else { 16 },
            0.4,
            0.05,
        );
        let g = common::split_sbm(&spec);
        let budget = budget_for(rng.random_range(0.0..0.2), g.n_edges());
        let loss = match case % 4 {
            0 => LossSpec::nll(),
            1 => LossSpec::cw(),
            2 => LossSpec::nll().with_ca(CaWeightParams::citation()),
            _ => LossSpec::cw().with_ca(CaWeightParams::polblogs()),
        };
        let cfg = AttackConfig {
            budget,
            loss,
            retrain_every: 1 + (case as usize % 3),
            seed: case,
            surrogate: SurrogateHyper {
                epochs: 100,
                ..Default::default()
            },
            ..Default::default()
        };
        for (name, r) in [("meta", meta_attack(&g, &cfg)), ("dice", dice_attack(&g, &cfg))] {
            let r = r.map_err(|e| format!("case {case} {name}: {e}"))?;
            let p = &r.poisoned;
            check(
                r.flips.len() <= budget,
                format!("case {case} {name}: {} flips > {budget}", r.flips.len()),
            )?;
            check(
                g.count_flips(p).unwrap() == r.flips.len(),
                format!("case {case} {name}: flip count"),
            )?;
            let a = p.adjacency_dense();
            check(a == a.t(), format!("case {case} {name}: asymmetric"))?;
            check(
                (0..p.n_nodes()).all(|v| a[[v, v]] == 0.0),
                format!("case {case} {name}: diagonal"),
            )?;
            check(
                (0..p.n_nodes()).all(|v| p.degree(v) > 0),
                format!("case {case} {name}: isolated node"),
            )?;
            if name == "dice" {
                let t = &r.target_labels;
                for f in &r.flips {
                    let ok = match f.op {
                        FlipOp::Delete => t[f.i] == t[f.j],
                        FlipOp::Add => t[f.i] != t[f.j],
                    };
                    check(ok, format!("case {case}: DICE flip {f:?} breaks the label rule"))?;
                }
            }
            flips_seen += r.flips.len();
        }
    }
    Ok(format!("50 configs, {flips_seen} flips checked"))
}

fn cora_dir() -> PathBuf {
    std::env::var_os("CA_ATTACK_CORA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cora"))
}

fn load_cora() -> Result<Graph, String> {
    let dir = cora_dir();
    if !dir.is_dir() {
        return Err(format!(
            "Cora dataset not found at {} (set CA_ATTACK_CORA_DIR)",
            dir.display()
        ));
    }
    let linqs = std::fs::read_dir(&dir)
        .map_err(|e| e.to_string())?
        .any(|e| e.is_ok_and(|e| e.path().extension().is_some_and(|x| x == "content")));
    let format = if linqs {
        DatasetFormat::Linqs
    } else {
        DatasetFormat::Text
    };
    load_dataset(&dir, format, &SplitSpec::default()).map_err(|e| e.to_string())
}

const SEEDS: [u64; 10] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9];

fn clean_accuracy(cora: &Result<Graph, String>) -> Outcome {
    let g = cora.as_ref().map_err(Clone::clone)?;
    let r = evaluate(g, g, &VictimHyper::default(), &SEEDS).map_err(|e| e.to_string())?;
    let msg = format!("clean accuracy {:.2} ± {:.2}", 100.0 * r.mean, 100.0 * r.ci95);
    check(r.mean >= 0.80, format!("{msg}, below 80"))?;
    Ok(msg)
}

fn attack_trends(cora: &Result<Graph, String>) -> Outcome {
    let g = cora.as_ref().map_err(Clone::clone)?;
    let victim = VictimHyper::default();
    let budget = budget_for(0.05, g.n_edges());
    let acc = |p: &Graph| {
        evaluate(g, p, &victim, &SEEDS)
            .map(|r| 100.0 * r.mean)
            .map_err(|e| e.to_string())
    };
    let clean = acc(g)?;
    let base = AttackConfig {
        budget,
        ..Default::default()
    };
    let ce = acc(&meta_attack(g, &base).map_err(|e| e.to_string())?.poisoned)?;
    let ca_ce = acc(&meta_attack(
        g,
        &AttackConfig {
            loss: LossSpec::nll().with_ca(CaWeightParams::citation()),
            ..base
        },
    )
    .map_err(|e| e.to_string())?
    .poisoned)?;
    let dice = acc(&dice_attack(g, &base).map_err(|e| e.to_string())?.poisoned)?;
    let msg = format!("clean {clean:.2}, DICE {dice:.2}, CE {ce:.2}, CA-CE {ca_ce:.2} (budget {budget})");
    check(ce - ca_ce >= 3.0, format!("{msg}: CA-CE gap {:.2} < 3", ce - ca_ce))?;
    check(ce < dice, format!("{msg}: CE not below DICE"))?;
    check(
        clean - ce >= 2.0 && clean - ca_ce >= 2.0,
        format!("{msg}: a gradient attack is within 2 of clean"),
    )?;
    Ok(msg)
}

fn bin_means(points: &[ca_attack::ScatterPoint]) -> (f64, f64, usize, usize) {
    let mean = |f: &dyn Fn(f64) -> bool| {
        let xs: Vec<f64> = points.iter().filter(|p| f(p.margin)).map(|p| p.grad_l2).collect();
        (xs.iter().sum::<f64>() / xs.len().max(1) as f64, xs.len())
    };
    let (neg, nn) = mean(&|m| m < -0.1);
    let (pos, np) = mean(&|m| m > 0.0 && m < 0.3);
    (neg, pos, nn, np)
}

fn figure_one(cora: &Result<Graph, String>) -> Outcome {
    let g = cora.as_ref().map_err(Clone::clone)?;
    let hyper = SurrogateHyper::default();
    let ca = margin_gradient_scatter(g, &LossSpec::nll().with_ca(CaWeightParams::citation()), &hyper)
        .map_err(|e| e.to_string())?;
    let nll = margin_gradient_scatter(g, &LossSpec::nll(), &hyper).map_err(|e| e.to_string())?;
    let (ca_neg, ca_pos, nn, np) = bin_means(&ca);
    let (nll_neg, nll_pos, _, _) = bin_means(&nll);
    let msg = format!(
        "CA: neg {ca_neg:.3e} vs small-pos {ca_pos:.3e}; NLL: neg {nll_neg:.3e} vs small-pos {nll_pos:.3e} ({nn}/{np} nodes)"
    );
    check(nn > 0 && np > 0, format!("{msg}: empty margin bin"))?;
    check(ca_neg < ca_pos, format!("{msg}: CA ordering fails"))?;
    check(nll_neg >= nll_pos, format!("{msg}: NLL already shows the CA ordering"))?;
    Ok(msg)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let g = ca_attack::synth::sbm(&SbmSpec::new(vec![30, 30, 30], 0.15, 0.01, 4).with_features(24, 0.3, 0.05)).unwrap();
    let data = tmp.path().join("sbm");
    ca_attack::io::write_text_dataset(&g, &data, true).unwrap();
    let cfg = ExperimentConfig {
        dataset: data.clone(),
        ca_enabled: true,
        budget_fraction: 0.05,
        seeds: vec![0, 1, 2],
        output: tmp.path().join("report.json"),
        ..Default::default()
    };
    let run = || -> Result<(String, Vec<u8>), String> {
        run_experiment(&cfg).map_err(|e| e.to_string())?;
        let mut v: serde_json::Value = serde_json::from_slice(&std::fs::read(&cfg.output).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("wall_clock_seconds");
        let flips = std::fs::read(ca_attack::io::flips_path(&cfg.output)).unwrap();
        Ok((serde_json::to_string_pretty(&v).unwrap(), flips))
    };
    // both runs must write where we read
    std::env::remove_var("CA_ATTACK_OUTPUT_DIR");
    let (ra, fa) = run()?;
    let (rb, fb) = run()?;
    check(fa == fb, "flip files differ")?;
    check(ra == rb, "reports differ beyond wall-clock time")?;
    Ok(format!("two runs byte-identical ({} flip bytes)", fa.len()))
}

type Criterion<'a> = Box<dyn Fn() -> Outcome + 'a>;

fn main() {
    let started = Instant::now();
    let cora = load_cora();
    let criteria: Vec<(&str, Criterion<'_>)> = vec![
        ("1 reduction identity", Box::new(reduction_identity)),
        ("2 gradient oracle", Box::new(gradient_oracle)),
        ("3 scaling identity", Box::new(scaling_identity)),
        ("4 budget and constraint invariants", Box::new(invariants)),
        ("5 clean accuracy on Cora", Box::new(|| clean_accuracy(&cora))),
        ("6 attack trends on Cora", Box::new(|| attack_trends(&cora))),
        ("7 margin/gradient ordering on Cora", Box::new(|| figure_one(&cora))),
        ("8 determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (name, f) in &criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        criteria.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
