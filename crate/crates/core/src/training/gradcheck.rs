//! Finite-difference check of the full gate + blend + MSE composite with
//! respect to every parameter tensor, on a shrunken architecture.

use numcore::{grad_check, CoordSelection, GradCheckReport, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::batch_loss;
use crate::error::Result;
use crate::gating::{Bound, GateConfig, GateNetwork};

fn tiny_gate(noise_dim: usize) -> GateConfig {
    GateConfig {
        n_experts: 2,
        channels: 2,
        height: 8,
        width: 8,
        patch_size: 4,
        hidden_size: 8,
        depth: 2,
        heads: 2,
        mlp_ratio: 2.0,
        lead_set: vec![3, 15],
        noise_dim,
    }
}

/// Worst relative error over a sample of coordinates in every parameter
/// tensor, for random (non-zero) parameters, inputs and lead at `seed`.
pub fn composite_gradcheck(seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_gate((seed % 2) as usize * 3);
    let mut net = GateNetwork::<f64>::init(cfg.clone(), seed)?;
    for t in net.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.4..0.4);
        }
    }
    let shape = [cfg.n_experts, cfg.channels, cfg.height, cfg.width];
    let experts: Vec<Tensor<f64>> =
        (0..2).map(|_| Tensor::from_fn(&shape, |_| rng.gen_range(-1.5..1.5))).collect();
    let truth: Vec<Tensor<f64>> =
        (0..2).map(|_| Tensor::from_fn(&shape[1..], |_| rng.gen_range(-1.5..1.5))).collect();
    let leads = [rng.gen_range(3.0..15.0), rng.gen_range(3.0..15.0)];
    let noise: Option<Vec<Vec<f64>>> = (cfg.noise_dim > 0)
        .then(|| (0..2).map(|_| (0..cfg.noise_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect());
    let point: Vec<Tensor<f64>> = net.params().tensors().to_vec();
    let report = grad_check(
        |g: &mut Graph<f64>, vars| {
            let bound = Bound { vars: vars.to_vec() };
            batch_loss(&net, g, &bound, &experts, &truth, &leads, noise.as_deref())
                .map_err(|e| numcore::NumError::Contract(e.to_string()))
        },
        &point,
        epsilon,
        CoordSelection::Sample {
            per_input: 12,
            seed: seed ^ 0x5eed,
        },
    )?;
    Ok(report)
}

/// Worst report over seeds `0..seeds`.
pub fn composite_gradcheck_seeds(seeds: u64, epsilon: f64) -> Result<GradCheckReport> {
    let mut worst: Option<GradCheckReport> = None;
    for s in 0..seeds {
        let r = composite_gradcheck(s, epsilon)?;
        if worst.as_ref().map_or(true, |w| r.max_rel_error > w.max_rel_error) {
            worst = Some(r);
        }
    }
    Ok(worst.expect("at least one seed"))
}
