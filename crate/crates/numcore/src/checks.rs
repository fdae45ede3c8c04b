//! Finite-difference checks for every differentiable kernel on the tape.
//!
//! Each case draws small random inputs from a seed, contracts the kernel
//! output against a random constant (so upstream gradients are not uniform)
//! and runs [`grad_check`] over all coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{grad_check, CoordSelection, GradCheckReport};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

pub const KERNEL_CASES: &[&str] = &[
    "matmul",
    "elementwise",
    "add_bias",
    "repeat_rows",
    "layer_norm",
    "layer_norm_affine",
    "gelu",
    "silu",
    "softmax",
    "attention",
    "reshape_narrow_sum_axis",
    "gather",
    "mean_mse",
];

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// `sum(out ⊙ r)` for a fixed random `r`.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let r = rand_tensor(g.shape(out), &mut rng, 1.0);
    let r = g.constant(r);
    let prod = g.mul(out, r)?;
    g.sum(prod)
}

/// Runs the named kernel case at `seed`.
pub fn check_kernel(name: &str, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all = CoordSelection::All;
    match name {
        "matmul" => {
            let a = rand_tensor(&[3, 4], &mut rng, 1.0);
            let b = rand_tensor(&[4, 5], &mut rng, 1.0);
            grad_check(
                |g, v| {
                    let o = g.matmul(v[0], v[1])?;
                    project(g, o, seed)
                },
                &[a, b],
                epsilon,
                all,
            )
        }
        "elementwise" => {
            let a = rand_tensor(&[2, 3], &mut rng, 1.0);
            let b = rand_tensor(&[2, 3], &mut rng, 1.0);
            grad_check(
                |g, v| {
                    let p = g.mul(v[0], v[1])?;
                    let s = g.sub(p, v[0])?;
                    let t = g.add(s, v[1])?;
                    let u = g.scale(t, -1.7)?;
                    let w = g.add_scalar(u, 0.3)?;
                    let w = g.mul(w, w)?;
                    project(g, w, seed)
                },
                &[a, b],
                epsilon,
                all,
            )
        }
        "add_bias" => {
            let x = rand_tensor(&[4, 3], &mut rng, 1.0);
            let b = rand_tensor(&[3], &mut rng, 1.0);
            grad_check(
                |g, v| {
                    let o = g.add_bias(v[0], v[1])?;
                    let o = g.mul(o, o)?;
                    project(g, o, seed)
                },
                &[x, b],
                epsilon,
                all,
            )
        }
        "repeat_rows" => {
            let x = rand_tensor(&[2, 3], &mut rng, 1.0);
            grad_check(
                |g, v| {
                    let o = g.repeat_rows(v[0], 3)?;
                    let o = g.mul(o, o)?;
                    project(g, o, seed)
                },
                &[x],
                epsilon,
                all,
            )
        }
        "layer_norm" => {
            let x = rand_tensor(&[3, 5], &mut rng, 2.0);
            grad_check(
                |g, v| {
                    let o = g.layer_norm(v[0], None, 1e-6)?;
                    project(g, o, seed)
                },
                &[x],
                epsilon,
                all,
            )
        }
        "layer_norm_affine" => {
            let x = rand_tensor(&[3, 5], &mut rng, 2.0);
            let gain = rand_tensor(&[5], &mut rng, 1.5);
            let offset = rand_tensor(&[5], &mut rng, 1.0);
            grad_check(
                |g, v| {
                    let o = g.layer_norm(v[0], Some((v[1], v[2])), 1e-6)?;
                    project(g, o, seed)
                },
                &[x, gain, offset],
                epsilon,
                all,
            )
        }
        "gelu" => {
            let x = rand_tensor(&[8], &mut rng, 3.0);
            grad_check(
                |g, v| {
                    let o = g.gelu(v[0])?;
                    project(g, o, seed)
                },
                &[x],
                epsilon,
                all,
            )
        }
        "silu" => {
            let x = rand_tensor(&[8], &mut rng, 3.0);
            grad_check(
                |g, v| {
                    let o = g.silu(v[0])?;
                    project(g, o, seed)
                },
                &[x],
                epsilon,
                all,
            )
        }
        "softmax" => {
            let x = rand_tensor(&[2, 3, 4], &mut rng, 2.0);
            grad_check(
                |g, v| {
                    let a = g.softmax(v[0], 1)?;
                    let b = g.softmax(v[0], 2)?;
                    let o = g.add(a, b)?;
                    project(g, o, seed)
                },
                &[x],
                epsilon,
                all,
            )
        }
        "attention" => {
            let q = rand_tensor(&[6, 4], &mut rng, 1.0);
            let k = rand_tensor(&[6, 4], &mut rng, 1.0);
            let v = rand_tensor(&[6, 4], &mut rng, 1.0);
            grad_check(
                |g, vars| {
                    let o = g.attention(vars[0], vars[1], vars[2], 2, 2)?;
                    project(g, o, seed)
                },
                &[q, k, v],
                epsilon,
                all,
            )
        }
        "reshape_narrow_sum_axis" => {
            let x = rand_tensor(&[2, 6], &mut rng, 1.0);
            grad_check(
                |g, v| {
                    let r = g.reshape(v[0], &[2, 3, 2])?;
                    let n = g.narrow(r, 1, 1, 2)?;
                    let n = g.mul(n, n)?;
                    let s = g.sum_axis(n, 1)?;
                    project(g, s, seed)
                },
                &[x],
                epsilon,
                all,
            )
        }
        "gather" => {
            let x = rand_tensor(&[6], &mut rng, 1.0);
            grad_check(
                |g, v| {
                    let o = g.gather(v[0], vec![5, 0, 3, 3, 1, 2, 4, 0], &[2, 4])?;
                    let o = g.mul(o, o)?;
                    project(g, o, seed)
                },
                &[x],
                epsilon,
                all,
            )
        }
        "mean_mse" => {
            let a = rand_tensor(&[3, 3], &mut rng, 1.0);
            let b = rand_tensor(&[3, 3], &mut rng, 1.0);
            grad_check(
                |g, v| {
                    let m = g.mse(v[0], v[1])?;
                    let sq = g.mul(v[0], v[1])?;
                    let mean = g.mean(sq)?;
                    g.add(m, mean)
                },
                &[a, b],
                epsilon,
                all,
            )
        }
        other => Err(crate::error::NumError::Contract(format!("unknown kernel case `{}`", other))),
    }
}

/// Worst report for `name` across seeds `0..seeds`.
pub fn check_kernel_seeds(name: &str, seeds: u64, epsilon: f64) -> Result<GradCheckReport> {
    let mut worst: Option<GradCheckReport> = None;
    for seed in 0..seeds {
        let r = check_kernel(name, seed, epsilon)?;
        if worst.as_ref().map_or(true, |w| r.max_rel_error > w.max_rel_error) {
            worst = Some(r);
        }
    }
    Ok(worst.expect("at least one seed"))
}
