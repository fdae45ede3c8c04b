mod common;

use mowe::eval::{
    evaluate_leads, export_weight_maps, fit_oracle, oracle_blend, pct_diff, rmse, score_dataset, weight_statistics,
    ScoreTable, Weighting, DEFAULT_RIDGE, MEAN, MOWE, ORACLE,
};
use mowe::synthdata::{Dataset, Split};
use mowe::training::Checkpoint;
use mowe::Error;
use numcore::{AdamConfig, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn fresh_checkpoint(data: &Dataset, seed: u64) -> Checkpoint {
    let m = data.manifest();
    Checkpoint::fresh(common::tiny_gate(m), seed, AdamConfig::default(), m.family_hash()).unwrap()
}

#[test]
fn rmse_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = Tensor::<f32>::from_fn(&[2, 3, 5], |_| StandardNormal.sample(&mut rng));
    assert_eq!(rmse(&t, &t, &Weighting::Uniform).unwrap(), vec![0.0, 0.0]);

    let shifted = Tensor::<f32>::from_fn(&[2, 3, 5], |i| t.data()[i] + 3.0);
    for v in rmse(&shifted, &t, &Weighting::Uniform).unwrap() {
        assert!((v - 3.0).abs() < 1e-6);
    }

    let p = Tensor::<f32>::from_fn(&[2, 3, 5], |_| StandardNormal.sample(&mut rng));
    let got = rmse(&p, &t, &Weighting::Uniform).unwrap();
    for c in 0..2 {
        let mut acc = 0.0f32;
        for i in 0..15 {
            let d = p.data()[c * 15 + i] - t.data()[c * 15 + i];
            acc += d * d;
        }
        let want = (acc / 15.0).sqrt();
        assert!((got[c] - want as f64).abs() < 1e-6, "{} vs {}", got[c], want);
    }
}

#[test]
fn coslat_weighting_needs_latitudes() {
    assert!(matches!(Weighting::parse("coslat", None), Err(Error::Config(_))));
    assert!(matches!(Weighting::parse("area", None), Err(Error::Config(_))));
    let w = Weighting::parse("coslat", Some(vec![-60.0, 0.0, 60.0])).unwrap();
    let a = Tensor::<f32>::new(&[1, 3, 1], vec![1.0, 1.0, 1.0]).unwrap();
    let b = Tensor::<f32>::new(&[1, 3, 1], vec![0.0, 1.0, 1.0]).unwrap();
    // Only the -60 row errs: weight 0.5 out of a total of 2.
    let got = rmse(&a, &b, &w).unwrap()[0];
    assert!((got - 0.25f64.sqrt()).abs() < 1e-12);
}

#[test]
fn mean_row_matches_a_physical_unit_recomputation() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.test).unwrap();
    let m = ds.manifest().clone();
    let table = score_dataset(&ds, None, &Weighting::Uniform, 1).unwrap();
    let (n, f, plane) = (m.n_experts, m.field_len(), m.plane());
    for &lead in &m.leads {
        let mut sq = vec![0.0; m.channels];
        for init in 0..m.n_inits {
            let s = ds.sample(init, lead).unwrap();
            for j in 0..f {
                let mean = (0..n).map(|i| s.experts.data()[i * f + j] as f64).sum::<f64>() / n as f64;
                sq[j / plane] += (mean - s.truth.data()[j] as f64).powi(2);
            }
        }
        for (c, v) in sq.iter().enumerate() {
            let want = (v / (m.n_inits * plane) as f64).sqrt();
            let got = table.rmse(MEAN, c, lead).unwrap();
            assert!((got - want).abs() <= 1e-6 * want, "lead {} channel {}: {} vs {}", lead, c, got, want);
        }
    }
}

#[test]
fn untrained_gate_scores_like_the_mean() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.test).unwrap();
    let ckpt = fresh_checkpoint(&ds, 5);
    let table = evaluate_leads(&ckpt, &ds, &Weighting::Uniform, 1).unwrap();
    assert_eq!(table.checkpoint.as_deref(), Some(ckpt.id().unwrap().as_str()));
    let m = ds.manifest();
    for &lead in &m.leads {
        for c in 0..m.channels {
            let a = table.rmse(MOWE, c, lead).unwrap();
            let b = table.rmse(MEAN, c, lead).unwrap();
            assert!((a - b).abs() / m.stats.std[c] <= 1e-5, "lead {} channel {}", lead, c);
        }
    }
}

#[test]
fn expert_rows_grow_with_lead() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.test).unwrap();
    let table = score_dataset(&ds, None, &Weighting::Uniform, 1).unwrap();
    let m = ds.manifest();
    let (first, last) = (m.leads[0], *m.leads.last().unwrap());
    for e in &m.expert_names {
        assert!(table.normalized(e, first).unwrap() <= table.normalized(e, last).unwrap(), "{}", e);
    }
}

#[test]
fn scores_are_deterministic_across_thread_counts() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.test).unwrap();
    let ckpt = fresh_checkpoint(&ds, 1);
    let a = evaluate_leads(&ckpt, &ds, &Weighting::Uniform, 1).unwrap();
    let b = evaluate_leads(&ckpt, &ds, &Weighting::Uniform, 3).unwrap();
    assert_eq!(a.to_tsv(), b.to_tsv());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(ScoreTable::from_json(&a.to_json()).unwrap(), a);
}

#[test]
fn score_files_are_written_side_by_side() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.test).unwrap();
    let table = score_dataset(&ds, None, &Weighting::Uniform, 1).unwrap();
    let out = d.dir.path().join("scores.tsv");
    table.write(&out).unwrap();
    let tsv = std::fs::read_to_string(&out).unwrap();
    let header = tsv.lines().find(|l| !l.starts_with('#')).unwrap();
    assert_eq!(header, "model\tchannel\tlead_hours\trmse");
    let rows = tsv.lines().filter(|l| !l.starts_with('#')).count() - 1;
    let m = ds.manifest();
    assert_eq!(rows, (1 + m.n_experts) * m.channels * m.leads.len());
    let json = std::fs::read_to_string(mowe::eval::json_path(&out)).unwrap();
    assert_eq!(ScoreTable::from_json(&json).unwrap(), table);
}

#[test]
fn evaluation_refuses_mismatched_pairs() {
    let d = common::smoke_data();
    let test = Dataset::open(&d.test).unwrap();
    let train = Dataset::open(&d.train).unwrap();
    let mut ckpt = fresh_checkpoint(&test, 0);
    assert!(matches!(evaluate_leads(&ckpt, &train, &Weighting::Uniform, 1), Err(Error::Config(_))));

    ckpt.dataset_hash[0] ^= 1;
    assert!(matches!(evaluate_leads(&ckpt, &test, &Weighting::Uniform, 1), Err(Error::Config(_))));

    let mut other = common::smoke_config();
    other.height = 32;
    let o = common::smoke_data_with(&other);
    let big = Dataset::open(&o.test).unwrap();
    let ckpt = fresh_checkpoint(&test, 0);
    match evaluate_leads(&ckpt, &big, &Weighting::Uniform, 1) {
        Err(e @ Error::Config(_)) => {
            let msg = e.to_string();
            assert!(msg.contains("[3, 2, 16, 32]") && msg.contains("[3, 2, 32, 32]"), "{}", msg);
            assert_eq!(e.exit_code(), 1);
        }
        other => panic!("expected config error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn missing_trained_leads_are_a_gap_error() {
    let d = common::smoke_data();
    let test = Dataset::open(&d.test).unwrap();
    let mut ckpt = fresh_checkpoint(&test, 0);
    ckpt.config.lead_set.push(24);
    assert!(matches!(evaluate_leads(&ckpt, &test, &Weighting::Uniform, 1), Err(Error::Dataset(m)) if m.contains("24")));
}

fn noise(rng: &mut ChaCha8Rng, len: usize, sigma: f64) -> Vec<f32> {
    (0..len).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        (sigma * z) as f32
    }).collect()
}

#[test]
fn oracle_recovers_a_perfect_expert() {
    let dir = tempfile::tempdir().unwrap();
    let shape = [2, 1, 8, 8];
    let f = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut make = |_: usize, _: usize| {
        let t = noise(&mut rng, f, 1.0);
        let mut e = t.clone();
        e.extend(t.iter().zip(noise(&mut rng, f, 0.7)).map(|(a, b)| a + b));
        (t, e)
    };
    common::write_synthetic(&dir.path().join("train.mowe"), Split::Train, shape, 40, &[6], &mut make);
    common::write_synthetic(&dir.path().join("test.mowe"), Split::Test, shape, 10, &[6], &mut make);
    let train = Dataset::open(&dir.path().join("train.mowe")).unwrap();
    let test = Dataset::open(&dir.path().join("test.mowe")).unwrap();
    let (fit, table) = oracle_blend(&train, &test, 1e-9, &Weighting::Uniform, 1).unwrap();
    let w = fit.spatial_mean_weights(6).unwrap();
    assert!((w[0] - 1.0).abs() < 1e-3, "{:?}", w);
    assert!(table.rmse(ORACLE, 0, 6).unwrap() < 1e-3);
}

#[test]
fn identical_experts_give_the_expert_score_and_need_a_ridge() {
    let dir = tempfile::tempdir().unwrap();
    let shape = [3, 1, 8, 8];
    let f = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut make = |_: usize, _: usize| {
        let t = noise(&mut rng, f, 1.0);
        let e: Vec<f32> = t.iter().zip(noise(&mut rng, f, 0.5)).map(|(a, b)| a + b).collect();
        (t, [e.clone(), e.clone(), e].concat())
    };
    common::write_synthetic(&dir.path().join("train.mowe"), Split::Train, shape, 60, &[6], &mut make);
    common::write_synthetic(&dir.path().join("test.mowe"), Split::Test, shape, 30, &[6], &mut make);
    let train = Dataset::open(&dir.path().join("train.mowe")).unwrap();
    let test = Dataset::open(&dir.path().join("test.mowe")).unwrap();

    assert!(matches!(fit_oracle(&train, 0.0, 1), Err(Error::Domain(m)) if m.contains("ridge")));

    let (_, table) = oracle_blend(&train, &test, DEFAULT_RIDGE, &Weighting::Uniform, 1).unwrap();
    let expert = score_dataset(&test, None, &Weighting::Uniform, 1).unwrap().rmse("e0", 0, 6).unwrap();
    let oracle = table.rmse(ORACLE, 0, 6).unwrap();
    // The fitted bias adds estimation noise of relative size 1/(2·60).
    assert!((oracle / expert - 1.0).abs() < 0.02, "{} vs {}", oracle, expert);
}

#[test]
fn two_expert_oracle_matches_inverse_variance_weights() {
    let dir = tempfile::tempdir().unwrap();
    let shape = [2, 1, 8, 8];
    let f = 64;
    let (s1, s2) = (0.5, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut make = |_: usize, _: usize| {
        let t = noise(&mut rng, f, 1.0);
        let a: Vec<f32> = t.iter().zip(noise(&mut rng, f, s1)).map(|(x, n)| x + n).collect();
        let b: Vec<f32> = t.iter().zip(noise(&mut rng, f, s2)).map(|(x, n)| x + n).collect();
        (t, [a, b].concat())
    };
    common::write_synthetic(&dir.path().join("train.mowe"), Split::Train, shape, 200, &[6], &mut make);
    let train = Dataset::open(&dir.path().join("train.mowe")).unwrap();
    let fit = fit_oracle(&train, DEFAULT_RIDGE, 1).unwrap();
    let want = s2 * s2 / (s1 * s1 + s2 * s2);
    let w = fit.spatial_mean_weights(6).unwrap();
    assert!((w[0] - want).abs() < 0.02, "{:?} vs {}", w, want);
    assert!((w[0] + w[1] - 1.0).abs() < 1e-12);
}

#[test]
fn oracle_rejects_mismatched_families() {
    let d = common::smoke_data();
    let mut cfg = common::smoke_config();
    cfg.seed += 1;
    let o = common::smoke_data_with(&cfg);
    let train = Dataset::open(&d.train).unwrap();
    let test = Dataset::open(&o.test).unwrap();
    assert!(matches!(
        oracle_blend(&train, &test, DEFAULT_RIDGE, &Weighting::Uniform, 1),
        Err(Error::Config(_))
    ));
}

#[test]
fn pct_diff_reference_rows() {
    assert!((pct_diff(0.6810, 0.6803).unwrap() - 0.10).abs() <= 0.01);
    assert!((pct_diff(45.9691, 45.6734).unwrap() - 0.65).abs() <= 0.01);
    assert_eq!(pct_diff(1.234, 1.234).unwrap(), 0.0);
    assert!(matches!(pct_diff(1.0, 0.0), Err(Error::Domain(_))));
    assert!(matches!(pct_diff(1.0, -2.0), Err(Error::Domain(_))));
}

#[test]
fn untrained_weight_maps_are_uniform() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.test).unwrap();
    let ckpt = fresh_checkpoint(&ds, 2);
    let net = ckpt.network().unwrap();
    let out = d.dir.path().join("maps");
    let rows = export_weight_maps(&net, &ds, 1, &[6, 18], &out).unwrap();
    let m = ds.manifest();
    let third = 1.0f32 / 3.0;
    for (row, lead) in rows.iter().zip([6, 18]) {
        assert_eq!(row.lead, lead);
        assert!(row.max_unit_sum_error <= 1e-5);
        assert!((row.mean_entropy - 3f64.ln()).abs() < 1e-6);
        let bytes = std::fs::read(out.join(format!("weights_{}h.f32", lead))).unwrap();
        assert_eq!(bytes.len(), 4 * m.n_experts * m.field_len());
        assert!(bytes.chunks_exact(4).all(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) == third));
        let bias = std::fs::read(out.join(format!("bias_{}h.f32", lead))).unwrap();
        assert!(bias.chunks_exact(4).all(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) == 0.0));
    }
    let summary = std::fs::read_to_string(out.join("weights.txt")).unwrap();
    assert!(summary.contains("mean_w_sharp") && summary.contains("[N=3, C=2, H=16, W=32]"));

    assert!(matches!(export_weight_maps(&net, &ds, 99, &[6], &out), Err(Error::Domain(_))));
    assert!(matches!(export_weight_maps(&net, &ds, 0, &[7], &out), Err(Error::Domain(_))));
    let stats = weight_statistics(&net, &ds, &[0, 1, 2], &[12]).unwrap();
    assert!(stats[0].mean_weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-7));
}

const REFERENCE_ROWS: &[(f64, f64, f64)] = &[
    (0.6803, 0.6810, 0.10),
    (0.7663, 0.7664, 0.01),
    (45.6734, 45.9691, 0.65),
];

proptest! {
    #[test]
    fn pct_diff_is_antisymmetric_for_small_changes(b in 0.01..1e3f64, rel in -0.01..0.01f64) {
        let a = b * (1.0 + rel);
        // Small relative to either value taken as the reference.
        prop_assume!((a - b).abs() < 0.01 * a.min(b));
        let forward = pct_diff(a, b).unwrap();
        let back = pct_diff(b, a).unwrap();
        prop_assert!((forward + back).abs() <= 0.01);
        // The residual is the second-order term 100·r²/(1 + r).
        prop_assert!((forward + back - 100.0 * rel * rel / (1.0 + rel)).abs() < 1e-9);
    }

    #[test]
    fn pct_diff_is_scale_invariant(k in 0.001..1e3f64, i in 0usize..3) {
        let (base, small, _) = REFERENCE_ROWS[i];
        let a = pct_diff(small, base).unwrap();
        let b = pct_diff(k * small, k * base).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }
}
