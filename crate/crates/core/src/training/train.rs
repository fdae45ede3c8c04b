use std::path::Path;
use std::sync::mpsc;

use log::info;
use numcore::{adam_step, AdamState, Graph, Scalar, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::{save_checkpoint, storable, Checkpoint};
use super::config::{Precision, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::blend_graph;
use crate::gating::{Bound, GateConfig, GateInputs, GateNetwork};
use crate::synthdata::{derive_seed, sample_batch, Batch, Dataset, DatasetManifest, Split};

/// Mean squared difference of two same-shaped fields.
pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::Contract(format!(
            "mse_loss shapes differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let n = pred.numel().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / n)
}

/// Refuses data that cannot train `gate`.
pub fn check_compatible(gate: &GateConfig, m: &DatasetManifest) -> Result<()> {
    let want = [gate.n_experts, gate.channels, gate.height, gate.width];
    let have = [m.n_experts, m.channels, m.height, m.width];
    if want != have {
        return Err(Error::Config(format!(
            "gate dims [N, C, H, W] = {:?} do not match dataset dims {:?}",
            want, have
        )));
    }
    if let Some(l) = gate.lead_set.iter().find(|l| !m.leads.contains(l)) {
        return Err(Error::Config(format!(
            "gate lead {}h missing from dataset leads {:?}",
            l, m.leads
        )));
    }
    Ok(())
}

/// Batch loss on a graph: gate, softmax blend plus bias, MSE against truth.
/// Returns the loss node.
pub fn batch_loss<T: Scalar>(
    net: &GateNetwork<T>,
    g: &mut Graph<T>,
    bound: &Bound,
    experts: &[Tensor<T>],
    truth: &[Tensor<T>],
    leads: &[f64],
    noise: Option<&[Vec<T>]>,
) -> Result<Var> {
    let cfg = net.config();
    let refs: Vec<&Tensor<T>> = experts.iter().collect();
    let inputs = GateInputs::new(cfg, &refs, leads, noise)?;
    let out = net.forward_graph(g, bound, &inputs)?;
    let b = experts.len();
    let (n, c, h, w) = (cfg.n_experts, cfg.channels, cfg.height, cfg.width);
    let stack = Tensor::new(&[b, n, c, h, w], experts.iter().flat_map(|e| e.data().iter().copied()).collect())?;
    let stack = g.constant(stack);
    let pred = blend_graph(g, out, stack, n)?;
    let target = Tensor::new(&[b, c, h, w], truth.iter().flat_map(|t| t.data().iter().copied()).collect())?;
    let target = g.constant(target);
    Ok(g.mse(pred, target)?)
}

fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v.as_f64().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

/// One optimization step; returns the pre-update batch loss.
fn train_step<T: Scalar>(
    net: &mut GateNetwork<T>,
    adam: &mut AdamState<T>,
    batch: &Batch,
    noise: Option<&[Vec<T>]>,
    clip: Option<f64>,
) -> Result<f64> {
    let experts: Vec<Tensor<T>> = batch.experts.iter().map(|t| t.cast::<T>()).collect();
    let truth: Vec<Tensor<T>> = batch.truth.iter().map(|t| t.cast::<T>()).collect();
    let leads: Vec<f64> = batch.leads.iter().map(|&l| l as f64).collect();
    let mut g = Graph::new();
    let bound = net.bind(&mut g, true);
    let loss = batch_loss(net, &mut g, &bound, &experts, &truth, &leads, noise)?;
    let value = g.value(loss).data()[0].as_f64();
    let grads = g.backward(loss)?;
    let mut flat: Vec<Tensor<T>> = bound
        .vars
        .iter()
        .map(|&v| grads.get(v).cloned().expect("every bound parameter has a gradient"))
        .collect();
    drop(grads);
    drop(g);
    if let Some(max) = clip {
        clip_global_norm(&mut flat, max);
    }
    adam_step(net.params_mut().tensors_mut(), &flat, adam)?;
    Ok(value)
}

/// Trains from scratch on `data`. When `out` is given the checkpoint is
/// written there every `checkpoint_every` steps and at the end. `on_step`
/// sees `(step, loss)` after each update.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    out: Option<&Path>,
    mut on_step: impl FnMut(u32, f64),
) -> Result<Checkpoint> {
    cfg.validate()?;
    let m = data.manifest();
    if m.split != Split::Train {
        return Err(Error::Config(format!(
            "training needs a train split, {} is tagged `{}`",
            data.path().display(),
            m.split.name()
        )));
    }
    check_compatible(&cfg.gate, m)?;
    match cfg.precision {
        Precision::F32 => run::<f32>(cfg, data, out, &mut on_step),
        Precision::F64 => run::<f64>(cfg, data, out, &mut on_step),
    }
}

fn snapshot<T: Scalar>(
    cfg: &TrainConfig,
    net: &GateNetwork<T>,
    adam: &AdamState<T>,
    step: u32,
    hash: [u8; 32],
    losses: &[f32],
) -> Checkpoint {
    let (config, adam_config) = storable(cfg.gate.clone(), adam.config);
    Checkpoint {
        config,
        params: net.params().cast::<f32>(),
        adam: AdamState {
            config: adam_config,
            step: adam.step,
            first_moment: adam.first_moment.iter().map(|t| t.cast::<f32>()).collect(),
            second_moment: adam.second_moment.iter().map(|t| t.cast::<f32>()).collect(),
        },
        step,
        dataset_hash: hash,
        loss_history: losses.to_vec(),
    }
}

/// Seed of the batch-sampling stream used by [`train`] for a run seed.
pub fn batch_seed(seed: u64) -> u64 {
    derive_seed(seed, &[0x6261_7463])
}

fn run<T: Scalar>(
    cfg: &TrainConfig,
    data: &Dataset,
    out: Option<&Path>,
    on_step: &mut dyn FnMut(u32, f64),
) -> Result<Checkpoint> {
    let hash = data.manifest().family_hash();
    let mut net = GateNetwork::<T>::init(cfg.gate.clone(), derive_seed(cfg.seed, &[0x696e_6974]))?;
    let mut adam = AdamState::new(cfg.adam, net.params().tensors());
    let mut batch_rng = ChaCha8Rng::seed_from_u64(batch_seed(cfg.seed));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[0x6e6f_6973]));
    let nz = cfg.gate.noise_dim;
    let mut losses = Vec::with_capacity(cfg.steps as usize);
    info!("training {} parameters\n{}", net.params().scalar_count(), cfg.describe());

    let mut body = |next: &mut dyn FnMut() -> Result<Batch>| -> Result<()> {
        for step in 0..cfg.steps {
            let batch = next()?;
            let noise: Option<Vec<Vec<T>>> = (nz > 0).then(|| {
                (0..batch.len())
                    .map(|_| {
                        (0..nz)
                            .map(|_| T::from_f64_lossy(StandardNormal.sample(&mut noise_rng)))
                            .collect()
                    })
                    .collect()
            });
            let loss = train_step(&mut net, &mut adam, &batch, noise.as_deref(), cfg.clip_norm)?;
            if !loss.is_finite() {
                return Err(Error::Invariant(format!("non-finite loss at step {}", step)));
            }
            losses.push(loss as f32);
            on_step(step, loss);
            let done = step + 1;
            if let Some(path) = out {
                if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
                    save_checkpoint(path, &snapshot(cfg, &net, &adam, done, hash, &losses))?;
                    info!("checkpoint at step {} -> {}", done, path.display());
                }
            }
        }
        Ok(())
    };

    if cfg.deterministic {
        body(&mut || sample_batch(data, cfg.batch_size, &mut batch_rng))?;
    } else {
        // The producer consumes the same rng stream in the same order, so the
        // batches are identical to the serial path.
        std::thread::scope(|s| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel::<Result<Batch>>(2);
            let steps = cfg.steps;
            let rng = &mut batch_rng;
            s.spawn(move || {
                for _ in 0..steps {
                    if tx.send(sample_batch(data, cfg.batch_size, rng)).is_err() {
                        break;
                    }
                }
            });
            let r = body(&mut || {
                rx.recv()
                    .map_err(|_| Error::Invariant("batch producer stopped early".into()))?
            });
            drop(rx);
            r
        })?;
    }

    let ckpt = snapshot(cfg, &net, &adam, cfg.steps, hash, &losses);
    if let Some(path) = out {
        save_checkpoint(path, &ckpt)?;
    }
    Ok(ckpt)
}

/// Step-0 check helper: MSE of the plain expert mean on a batch, in
/// standardized units.
pub fn mean_baseline_loss(batch: &Batch) -> Result<f64> {
    let mut total = 0.0;
    for (e, t) in batch.experts.iter().zip(&batch.truth) {
        let mean = crate::fusion::mean_blend(e)?;
        total += mse_loss(&mean, t)?;
    }
    Ok(total / batch.len() as f64)
}
