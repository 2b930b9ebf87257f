#![allow(dead_code)]

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tvflow::sfde::DeltaMeasure;
use tvflow::stepfn::{Boundary, StepFunction};

/// Compactly supported data on `n` consecutive cells starting left of 0.
pub fn random_step(rng: &mut ChaCha8Rng, max_intervals: usize, nonnegative: bool) -> StepFunction {
    let n = rng.gen_range(1..=max_intervals);
    let mut edges = vec![rng.gen_range(-2.0..0.0)];
    for _ in 0..n {
        let last = *edges.last().unwrap();
        edges.push(last + rng.gen_range(0.1..1.5));
    }
    let heights: Vec<f64> = (0..n)
        .map(|_| {
            if nonnegative {
                rng.gen_range(0.0..3.0)
            } else {
                rng.gen_range(-3.0..3.0)
            }
        })
        .collect();
    StepFunction::from_cells(&edges, &heights).unwrap()
}

/// Step function on `[0, L]` with `n` intervals.
pub fn random_neumann(rng: &mut ChaCha8Rng, max_intervals: usize) -> StepFunction {
    let n = rng.gen_range(1..=max_intervals);
    let mut x = 0.0;
    let mut bps = Vec::new();
    for _ in 0..n - 1 {
        x += rng.gen_range(0.1..1.5);
        bps.push(x);
    }
    let b = x + rng.gen_range(0.1..1.5);
    let values = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    StepFunction::new(Boundary::neumann(0.0, b).unwrap(), bps, values).unwrap()
}

pub fn random_deltas(rng: &mut ChaCha8Rng, max_atoms: usize) -> DeltaMeasure {
    let n = rng.gen_range(1..=max_atoms);
    let mut x = rng.gen_range(-2.0..0.0);
    let atoms = (0..n)
        .map(|_| {
            x += rng.gen_range(0.1..1.5);
            (x, rng.gen_range(-2.0..2.0))
        })
        .collect();
    DeltaMeasure::new(atoms).unwrap()
}

/// `∫ u` computed cell by cell.
pub fn cell_mass(u: &StepFunction) -> f64 {
    let v = u.values();
    u.breakpoints()
        .windows(2)
        .enumerate()
        .map(|(k, w)| (w[1] - w[0]) * v[k + 1])
        .sum()
}

pub fn step_strategy(max_intervals: usize, nonnegative: bool) -> impl Strategy<Value = StepFunction> {
    let lo = if nonnegative { 0.0 } else { -3.0 };
    (1..=max_intervals)
        .prop_flat_map(move |n| {
            (
                -2.0..0.0f64,
                prop::collection::vec(0.1..1.5f64, n),
                prop::collection::vec(lo..3.0f64, n),
            )
        })
        .prop_map(|(start, widths, heights)| {
            let mut edges = vec![start];
            for w in widths {
                let last = *edges.last().unwrap();
                edges.push(last + w);
            }
            StepFunction::from_cells(&edges, &heights).unwrap()
        })
}

pub fn neumann_strategy(max_intervals: usize) -> impl Strategy<Value = StepFunction> {
    (1..=max_intervals)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.1..1.5f64, n),
                prop::collection::vec(-3.0..3.0f64, n),
            )
        })
        .prop_map(|(widths, values)| {
            let mut x = 0.0;
            let mut edges = Vec::new();
            for w in &widths {
                x += w;
                edges.push(x);
            }
            let b = edges.pop().unwrap();
            StepFunction::new(Boundary::neumann(0.0, b).unwrap(), edges, values).unwrap()
        })
}

pub fn deltas_strategy(max_atoms: usize) -> impl Strategy<Value = DeltaMeasure> {
    (1..=max_atoms)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0.1..1.5f64, n),
                prop::collection::vec(-2.0..2.0f64, n),
            )
        })
        .prop_map(|(gaps, weights)| {
            let mut x = -1.0;
            let atoms = gaps
                .iter()
                .zip(weights)
                .map(|(g, w)| {
                    x += g;
                    (x, w)
                })
                .collect();
            DeltaMeasure::new(atoms).unwrap()
        })
}
