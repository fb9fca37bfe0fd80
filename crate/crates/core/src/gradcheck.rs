//! Central-difference gradient checking against the tape's backward pass.
//!
//! Checking runs in f64. A derivative passes when the analytic and
//! numeric values agree within [`REL_TOL`] relative error, or within
//! [`ABS_FLOOR`] absolutely for pairs too near zero for a relative
//! comparison to mean anything.

use crate::tensor::{Graph, Result, Tensor};

/// Finite-difference step.
pub const STEP: f64 = 1e-4;
/// Relative agreement bound.
pub const REL_TOL: f64 = 1e-3;
/// Absolute fallback bound for near-zero derivative pairs.
pub const ABS_FLOOR: f64 = 1e-6;

/// One disagreeing derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff < (REL_TOL * analytic.abs().max(numeric.abs())).max(ABS_FLOOR)
}

/// Compare the backward pass of the scalar loss built by `build` against
/// central differences, for every element of every listed input. `build`
/// must reconstruct the same loss from the current input values on each
/// call. Returns the disagreements; an empty list is a pass. Input
/// gradients are cleared before and after.
pub fn check(
    inputs: &[Tensor<f64>],
    build: impl Fn(&mut Graph<f64>) -> Result<Tensor<f64>>,
) -> Result<Vec<Mismatch>> {
    let elements: Vec<Vec<usize>> = inputs.iter().map(|t| (0..t.numel()).collect()).collect();
    check_elements(inputs, &elements, build)
}

/// Like [`check`] but probing only up to `per_input` randomly chosen
/// elements of each input, so whole models stay checkable in bounded
/// time. Sampling is seeded and deterministic.
pub fn check_sampled(
    inputs: &[Tensor<f64>],
    per_input: usize,
    seed: u64,
    build: impl Fn(&mut Graph<f64>) -> Result<Tensor<f64>>,
) -> Result<Vec<Mismatch>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let elements: Vec<Vec<usize>> = inputs
        .iter()
        .map(|t| {
            let n = t.numel();
            if n <= per_input {
                (0..n).collect()
            } else {
                let mut picked = rand::seq::index::sample(&mut rng, n, per_input).into_vec();
                picked.sort_unstable();
                picked
            }
        })
        .collect();
    check_elements(inputs, &elements, build)
}

fn check_elements(
    inputs: &[Tensor<f64>],
    elements: &[Vec<usize>],
    build: impl Fn(&mut Graph<f64>) -> Result<Tensor<f64>>,
) -> Result<Vec<Mismatch>> {
    for t in inputs {
        t.zero_grad();
    }
    let mut graph = Graph::new();
    let loss = build(&mut graph)?;
    graph.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut mismatches = Vec::new();
    for (ti, t) in inputs.iter().enumerate() {
        let base = t.data();
        for &e in &elements[ti] {
            let mut bumped = base.clone();
            bumped[e] += STEP;
            t.set_data(bumped);
            let f_plus = build(&mut Graph::new())?.item();
            let mut bumped = base.clone();
            bumped[e] -= STEP;
            t.set_data(bumped);
            let f_minus = build(&mut Graph::new())?.item();
            t.set_data(base.clone());

            let numeric = (f_plus - f_minus) / (2.0 * STEP);
            if !agrees(analytic[ti][e], numeric) {
                mismatches.push(Mismatch {
                    input: ti,
                    element: e,
                    analytic: analytic[ti][e],
                    numeric,
                });
            }
        }
    }
    for t in inputs {
        t.zero_grad();
    }
    Ok(mismatches)
}
