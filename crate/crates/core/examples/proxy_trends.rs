//! Clean, DICE, CE and CA-CE accuracy on a citation-sized block model, plus
//! the margin/gradient-norm bins. Prints a table; asserts nothing.
//!
//!     cargo run --release --example proxy_trends -- [budget_fraction] [seed]

use ca_attack::attack::{dice_attack, meta_attack, AttackConfig};
use ca_attack::eval::{evaluate, margin_gradient_scatter};
use ca_attack::io::{budget_for, random_split, SplitSpec};
use ca_attack::loss::{CaWeightParams, LossSpec};
use ca_attack::surrogate::SurrogateHyper;
use ca_attack::synth::{sbm, SbmSpec};
use ca_attack::victim::VictimHyper;
use ca_attack::ScatterPoint;

fn bins(points: &[ScatterPoint]) -> (f64, f64) {
    let mean = |lo: f64, hi: f64| {
        let xs: Vec<f64> = points
            .iter()
            .filter(|p| p.margin > lo && p.margin < hi)
            .map(|p| p.grad_l2)
            .collect();
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    };
    (mean(f64::NEG_INFINITY, -0.1), mean(0.0, 0.3))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let fraction: f64 = args.get(1).map_or(Ok(0.05), |s| s.parse())?;
    let seed: u64 = args.get(2).map_or(Ok(0), |s| s.parse())?;

    let g = sbm(&SbmSpec::citation_like(seed))?.largest_connected_component();
    let g = g.with_labeled_mask(random_split(
        g.n_nodes(),
        &SplitSpec {
            labeled_fraction: 0.1,
            seed,
        },
    )?)?;
    let budget = budget_for(fraction, g.n_edges());
    println!("{} nodes, {} edges, budget {budget}", g.n_nodes(), g.n_edges());

    let seeds: Vec<u64> = (0..10).collect();
    let victim = VictimHyper::default();
    let acc = |p: &ca_attack::Graph| evaluate(&g, p, &victim, &seeds).map(|r| (100.0 * r.mean, 100.0 * r.ci95));
    let base = AttackConfig {
        budget,
        seed,
        ..Default::default()
    };
    let ca = LossSpec::nll().with_ca(CaWeightParams::citation());
    let rows = [
        ("clean", g.clone()),
        ("DICE", dice_attack(&g, &base)?.poisoned),
        ("CE", meta_attack(&g, &base)?.poisoned),
        ("CA-CE", meta_attack(&g, &AttackConfig { loss: ca, ..base })?.poisoned),
    ];
    for (name, p) in &rows {
        let (m, ci) = acc(p)?;
        println!("{name:>6}  {m:6.2} ± {ci:.2}");
    }

    let hyper = SurrogateHyper::default();
    for (name, spec) in [("NLL", LossSpec::nll()), ("CA-NLL", ca)] {
        let (neg, pos) = bins(&margin_gradient_scatter(&g, &spec, &hyper)?);
        println!("{name:>6}  mean |g| margin < -0.1: {neg:.3}   margin in (0, 0.3): {pos:.3}");
    }
    Ok(())
}
