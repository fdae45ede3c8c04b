mod common;

use mowe::gating::GateNetwork;
use mowe::synthdata::{sample_batch, Dataset};
use mowe::training::{
    batch_loss, batch_seed, load_checkpoint, mean_baseline_loss, mse_loss, save_checkpoint, train, Checkpoint,
    Precision, TrainConfig, TrainSettings,
};
use mowe::Error;
use numcore::{AdamConfig, Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn smoke_train_config(data: &Dataset, steps: u32) -> TrainConfig {
    let mut cfg = TrainSettings {
        steps: Some(steps),
        batch: Some(2),
        seed: Some(5),
        ..TrainSettings::default()
    }
    .resolve(data.manifest())
    .unwrap();
    cfg.gate = common::tiny_gate(data.manifest());
    cfg.deterministic = true;
    cfg
}

#[test]
fn mse_examples() {
    let a = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32 * 0.25 - 1.0);
    assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
    let b = Tensor::<f32>::from_fn(&[2, 3, 4], |i| a.data()[i] - 2.0);
    assert_eq!(mse_loss(&a, &b).unwrap(), 4.0);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = Tensor::<f64>::from_fn(&[3, 5, 7], |_| rng.gen_range(-3.0..3.0));
    let t = Tensor::<f64>::from_fn(&[3, 5, 7], |_| rng.gen_range(-3.0..3.0));
    let mut acc = 0.0;
    for c in 0..3 {
        for i in 0..5 {
            for j in 0..7 {
                let k = (c * 5 + i) * 7 + j;
                acc += (p.data()[k] - t.data()[k]) * (p.data()[k] - t.data()[k]);
            }
        }
    }
    assert!((mse_loss(&p, &t).unwrap() - acc / 105.0).abs() < 1e-10);

    let short = Tensor::<f64>::zeros(&[3, 5, 6]);
    assert!(matches!(mse_loss(&p, &short), Err(Error::Contract(_))));
}

#[test]
fn fresh_gate_loss_is_the_mean_baseline_loss() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let batch = sample_batch(&ds, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let want = mean_baseline_loss(&batch).unwrap();
    let leads: Vec<f64> = batch.leads.iter().map(|&l| l as f64).collect();

    let net = GateNetwork::<f32>::init(common::tiny_gate(ds.manifest()), 4).unwrap();
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let loss = batch_loss(&net, &mut g, &bound, &batch.experts, &batch.truth, &leads, None).unwrap();
    let got = g.value(loss).data()[0] as f64;
    assert!((got - want).abs() < 1e-6, "{} vs {}", got, want);

    let net = GateNetwork::<f64>::init(common::tiny_gate(ds.manifest()), 4).unwrap();
    let experts: Vec<Tensor<f64>> = batch.experts.iter().map(|t| t.cast()).collect();
    let truth: Vec<Tensor<f64>> = batch.truth.iter().map(|t| t.cast()).collect();
    let mut g = Graph::new();
    let bound = net.bind(&mut g, false);
    let loss = batch_loss(&net, &mut g, &bound, &experts, &truth, &leads, None).unwrap();
    assert!((g.value(loss).data()[0] - want).abs() < 1e-6);
}

#[test]
fn first_training_loss_is_the_mean_baseline_loss() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let cfg = smoke_train_config(&ds, 1);
    let ckpt = train(&cfg, &ds, None, |_, _| {}).unwrap();
    let batch = sample_batch(&ds, 2, &mut ChaCha8Rng::seed_from_u64(batch_seed(cfg.seed))).unwrap();
    let want = mean_baseline_loss(&batch).unwrap();
    assert!((ckpt.loss_history[0] as f64 - want).abs() < 1e-6);
}

#[test]
fn deterministic_replay_and_prefetch_agree_bit_for_bit() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let cfg = smoke_train_config(&ds, 6);
    let mut seen = Vec::new();
    let a = train(&cfg, &ds, None, |s, l| seen.push((s, l))).unwrap();
    let b = train(&cfg, &ds, None, |_, _| {}).unwrap();
    let mut prefetch = cfg.clone();
    prefetch.deterministic = false;
    let c = train(&prefetch, &ds, None, |_, _| {}).unwrap();
    assert_eq!(a.encode().unwrap(), b.encode().unwrap());
    assert_eq!(a.encode().unwrap(), c.encode().unwrap());
    assert_eq!(seen.len(), 6);
    assert!(seen.iter().enumerate().all(|(i, &(s, l))| s as usize == i && l as f32 == a.loss_history[i]));
    assert_eq!(a.step, 6);
    assert_eq!(a.adam.step, 6);
}

#[test]
fn double_precision_training_runs() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let mut cfg = smoke_train_config(&ds, 3);
    cfg.precision = Precision::F64;
    cfg.clip_norm = Some(1.0);
    let ckpt = train(&cfg, &ds, None, |_, _| {}).unwrap();
    assert_eq!(ckpt.loss_history.len(), 3);
    assert!(ckpt.loss_history.iter().all(|l| l.is_finite()));
}

#[test]
fn training_refuses_wrong_split_and_dims_before_any_step() {
    let d = common::smoke_data();
    let train_ds = Dataset::open(&d.train).unwrap();
    let test_ds = Dataset::open(&d.test).unwrap();
    let cfg = smoke_train_config(&train_ds, 2);
    let mut steps = 0;
    assert!(matches!(train(&cfg, &test_ds, None, |_, _| steps += 1), Err(Error::Config(_))));

    let mut wide = cfg.clone();
    wide.gate.width = 64;
    match train(&wide, &train_ds, None, |_, _| steps += 1) {
        Err(e @ Error::Config(_)) => assert!(e.to_string().contains("[3, 2, 16, 64]"), "{}", e),
        other => panic!("expected config error, got {:?}", other.map(|_| ())),
    }
    assert_eq!(steps, 0);
}

#[test]
fn preset_flags_resolve_to_the_published_sizes() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let base = TrainSettings { size: Some("base".into()), ..TrainSettings::default() }.resolve(ds.manifest()).unwrap();
    let g = &base.gate;
    assert_eq!((g.patch_size, g.hidden_size, g.depth, g.heads, g.mlp_ratio), (8, 384, 6, 6, 4.0));
    let small = TrainSettings::default().resolve(ds.manifest()).unwrap();
    let g = &small.gate;
    assert_eq!((g.patch_size, g.hidden_size, g.depth, g.heads, g.mlp_ratio), (8, 256, 3, 4, 4.0));
    assert_eq!((small.adam.lr, small.adam.beta1, small.adam.beta2, small.adam.eps), (3e-4, 0.9, 0.999, 1e-8));
    assert_eq!(small.clip_norm, None);
    assert!(TrainSettings { size: Some("huge".into()), ..TrainSettings::default() }.resolve(ds.manifest()).is_err());
    assert!(matches!(
        TrainSettings { steps: Some(0), ..TrainSettings::default() }.resolve(ds.manifest()),
        Err(Error::Config(_))
    ));
}

#[test]
fn flags_override_file_settings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.toml");
    std::fs::write(&path, "steps = 10\nbatch = 8\nlr = 0.001\n").unwrap();
    let file = TrainSettings::load(&path).unwrap();
    let merged = file.overlay(TrainSettings { batch: Some(2), ..TrainSettings::default() });
    assert_eq!((merged.steps, merged.batch, merged.lr), (Some(10), Some(2), Some(0.001)));
    std::fs::write(&path, "stepz = 10\n").unwrap();
    assert!(matches!(TrainSettings::load(&path), Err(Error::Config(_))));
}

fn trained_checkpoint() -> (common::SmokeData, Checkpoint) {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let ckpt = train(&smoke_train_config(&ds, 3), &ds, None, |_, _| {}).unwrap();
    (d, ckpt)
}

#[test]
fn save_load_save_is_byte_identical_and_inference_is_unchanged() {
    let (d, ckpt) = trained_checkpoint();
    let p1 = d.dir.path().join("a.ckpt");
    let p2 = d.dir.path().join("b.ckpt");
    save_checkpoint(&p1, &ckpt).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    assert_eq!(loaded, ckpt);
    save_checkpoint(&p2, &loaded).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    let ds = Dataset::open(&d.test).unwrap();
    let stack = ds.standardized_at(1, 2).unwrap().experts;
    let before = ckpt.network().unwrap().forward(&stack, 18.0, None).unwrap();
    let after = loaded.network().unwrap().forward(&stack, 18.0, None).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before.expert_logits), bits(&after.expert_logits));
    assert_eq!(bits(&before.bias_field), bits(&after.bias_field));
    assert!(before.expert_logits.data().iter().any(|&v| v != 0.0));
}

#[test]
fn truncated_checkpoints_name_the_tensor() {
    let (_, ckpt) = trained_checkpoint();
    let bytes = ckpt.encode().unwrap();
    let names: Vec<String> = ckpt.params.names().to_vec();
    // Locate the first head weight by its encoded name and cut inside its data.
    let needle = names.iter().find(|n| n.contains("head.weight")).unwrap();
    let at = bytes.windows(needle.len()).position(|w| w == needle.as_bytes()).unwrap();
    let cut = at + needle.len() + 40;
    match Checkpoint::decode(&bytes[..cut]) {
        Err(e @ Error::Format { .. }) => {
            assert!(e.to_string().contains(needle.as_str()), "{}", e);
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("expected format error, got {:?}", other.map(|_| ())),
    }
    for n in [0, 7, 11, 50, bytes.len() - 1] {
        assert!(matches!(Checkpoint::decode(&bytes[..n]), Err(Error::Format { .. })), "prefix {}", n);
    }
    let mut long = bytes.clone();
    long.push(1);
    assert!(matches!(Checkpoint::decode(&long), Err(Error::Format { .. })));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { offset: 0, .. })));
    let mut bad = bytes;
    bad[8] = 2;
    assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format { offset: 8, .. })));
}

#[test]
fn mismatched_parameter_shapes_are_refused_by_name() {
    let (_, ckpt) = trained_checkpoint();
    let mut bytes = ckpt.encode().unwrap();
    // Bump the stored hidden size: every tensor shape disagrees from the first.
    let hidden_at = 8 + 4 + 5 * 4;
    bytes[hidden_at] += 4;
    match Checkpoint::decode(&bytes) {
        Err(e @ Error::Format { .. }) => assert!(e.to_string().contains("x_embed.weight"), "{}", e),
        other => panic!("expected format error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn fresh_checkpoints_round_trip() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let ckpt = Checkpoint::fresh(common::tiny_gate(ds.manifest()), 1, AdamConfig::default(), [7; 32]).unwrap();
    assert_eq!(Checkpoint::decode(&ckpt.encode().unwrap()).unwrap(), ckpt);
    assert_eq!(ckpt.id().unwrap().len(), 16);
}
