use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AttackConfig, AttackResult, Constraints, Flip, FlipOp, IterationTrace};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::surrogate::{pseudo_labels, train_surrogate};

/// DICE: "delete internally, connect externally".
///
/// Each step flips a seeded coin: with probability `dice_delete_prob` remove
/// a uniformly chosen edge whose endpoints share a target label, otherwise
/// add a uniformly chosen non-edge whose endpoints differ. Targets are the
/// surrogate's pseudo-labels. Draws that hit a used pair or fail a
/// constraint are retried, up to `dice_max_retries` per step.
pub fn dice_attack(g: &Graph, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate(g)?;
    if cfg.budget == 0 {
        return Ok(AttackResult {
            flips: Vec::new(),
            poisoned: g.clone(),
            trace: Vec::new(),
            exhausted: false,
            target_labels: g.labels().to_vec(),
        });
    }
    g.require_split()?;
    let n = g.n_nodes();
    let params = train_surrogate(g, &cfg.surrogate_hyper())?;
    let targets = pseudo_labels(&params, g)?;
    let constraints = Constraints::new(g, cfg.constraints);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // same-label edges are the only deletion candidates, and deletions never create new ones
    let mut internal: Vec<(usize, usize)> = g
        .edges()
        .into_iter()
        .filter(|&(i, j)| targets[i] == targets[j])
        .collect();
    let mut used = vec![false; n * n];
    let mut current = g.clone();
    let mut flips = Vec::with_capacity(cfg.budget);
    let mut trace = Vec::with_capacity(cfg.budget);

    for iteration in 0..cfg.budget {
        let state = constraints.state(&current);
        let mut chosen = None;
        for _ in 0..cfg.dice_max_retries {
            let delete = rng.random::<f64>() < cfg.dice_delete_prob;
            let pick = if delete {
                if internal.is_empty() {
                    continue;
                }
                let k = rng.random_range(0..internal.len());
                Some((k, internal[k], FlipOp::Delete))
            } else {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                let (i, j) = (i.min(j), i.max(j));
                (i != j && !current.has_edge(i, j) && targets[i] != targets[j]).then_some((
                    usize::MAX,
                    (i, j),
                    FlipOp::Add,
                ))
            };
            let Some((k, (i, j), op)) = pick else { continue };
            if used[i * n + j] || !constraints.check_with(&state, &current, i, j).is_allowed() {
                continue;
            }
            if op == FlipOp::Delete {
                internal.swap_remove(k);
            }
            chosen = Some(Flip { i, j, op });
            break;
        }
        let flip = chosen.ok_or(Error::NoFeasibleFlip(cfg.dice_max_retries))?;
        current = current.flip_edge(flip.i, flip.j)?;
        used[flip.i * n + flip.j] = true;
        trace.push(IterationTrace {
            iteration,
            flip,
            score: 0.0,
            retrained: false,
            objective_before: None,
            objective_after: None,
            margins: None,
        });
        flips.push(flip);
    }

    Ok(AttackResult {
        flips,
        poisoned: current,
        trace,
        exhausted: false,
        target_labels: targets,
    })
}
