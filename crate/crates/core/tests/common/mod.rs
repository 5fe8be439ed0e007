#![allow(dead_code)]

use ca_attack::graph::{Features, Graph};
use ca_attack::io::{random_split, SplitSpec};
use ca_attack::synth::{sbm, SbmSpec};

/// LCC of a block model with a seeded 10% split.
pub fn split_sbm(spec: &SbmSpec) -> Graph {
    let g = sbm(spec).unwrap().largest_connected_component();
    let mask = random_split(
        g.n_nodes(),
        &SplitSpec {
            labeled_fraction: 0.1,
            seed: spec.seed,
        },
    )
    .unwrap();
    g.with_labeled_mask(mask).unwrap()
}

pub fn two_blocks(per_block: usize, seed: u64) -> Graph {
    split_sbm(&SbmSpec::new(vec![per_block, per_block], 0.2, 0.01, seed))
}

/// A connected graph on `n` nodes: a random spanning tree plus extra edges,
/// with random dense features and labels.
pub fn random_small_graph(n: usize, k: usize, d: usize, seed: u64) -> Graph {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
    for _ in 0..n {
        let (i, j) = (rng.random_range(0..n), rng.random_range(0..n));
        if i != j {
            edges.push((i, j));
        }
    }
    let x = ndarray::Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
    let mut labels: Vec<usize> = (0..n).map(|v| v % k).collect();
    labels.swap(0, n - 1);
    let labeled: Vec<bool> = (0..n).map(|v| v % 3 == 0).collect();
    Graph::new(&edges, Features::new(x), labels, k, labeled).unwrap()
}
