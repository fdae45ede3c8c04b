mod common;

use std::collections::BTreeMap;

use mowe::stats::ChannelStats;
use mowe::synthdata::{
    check_stats_integrity, generate, sample_batch, write_dataset, Dataset, DatasetManifest, MaskSpec, Ramp, Split,
    TruthSimulator, DATASET_VERSION,
};
use mowe::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_manifest() -> DatasetManifest {
    DatasetManifest {
        version: DATASET_VERSION,
        n_experts: 2,
        channels: 2,
        height: 4,
        width: 8,
        n_inits: 2,
        leads: vec![6, 12],
        expert_names: vec!["first".into(), "second".into()],
        stats: ChannelStats {
            mean: vec![10.0, -3.0],
            std: vec![2.0, 0.25],
        },
        split: Split::Train,
    }
}

#[test]
fn toy_write_read_round_trip_is_bit_exact() {
    let m = toy_manifest();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let records: Vec<(Vec<f32>, Vec<f32>)> = (0..4)
        .map(|_| {
            let t = (0..m.field_len()).map(|_| rng.gen::<f32>() * 100.0 - 50.0).collect();
            let e = (0..2 * m.field_len()).map(|_| rng.gen::<f32>() * 100.0 - 50.0).collect();
            (t, e)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.mowe");
    write_dataset(&path, &m, "", |sink| {
        for (t, e) in &records {
            sink.push(t, e)?;
        }
        Ok(())
    })
    .unwrap();
    let ds = Dataset::open(&path).unwrap();
    assert_eq!(ds.manifest(), &m);
    for init in 0..2 {
        for k in 0..2 {
            let s = ds.sample_at(init, k).unwrap();
            let (t, e) = &records[init * 2 + k];
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(s.truth.data()), bits(t));
            assert_eq!(bits(s.experts.data()), bits(e));
        }
    }
}

#[test]
fn record_count_mismatch_is_refused_and_leaves_no_file() {
    let m = toy_manifest();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.mowe");
    let r = write_dataset(&path, &m, "", |sink| sink.push(&vec![0.0; m.field_len()], &vec![0.0; 2 * m.field_len()]));
    assert!(matches!(r, Err(Error::Contract(_))));
    assert!(!path.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn generation_is_deterministic_and_independent_of_thread_count() {
    let cfg = common::smoke_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    generate(&cfg, a.path(), 1).unwrap();
    generate(&cfg, b.path(), 3).unwrap();
    for name in ["train.mowe", "test.mowe", "train.mowe.manifest"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{} differs", name);
    }
}

#[test]
fn truncated_and_corrupt_files_are_format_errors() {
    let d = common::smoke_data();
    let bytes = std::fs::read(&d.train).unwrap();
    let m = Dataset::open(&d.train).unwrap().manifest().clone();
    let bad = d.dir.path().join("bad.mowe");

    let cut = m.header_len() as usize + m.record_len() * 4 * 3 + 17;
    std::fs::write(&bad, &bytes[..cut]).unwrap();
    match Dataset::open(&bad) {
        Err(e @ Error::Format { offset, .. }) => {
            assert_eq!(offset, m.header_len() + 3 * m.record_len() as u64 * 4);
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("expected format error, got {:?}", other.map(|_| ())),
    }

    for n in [0, 5, 12, m.header_len() as usize - 1] {
        std::fs::write(&bad, &bytes[..n]).unwrap();
        assert!(matches!(Dataset::open(&bad), Err(Error::Format { .. })), "prefix {}", n);
    }

    let mut corrupt = bytes.clone();
    corrupt[2] ^= 0xff;
    std::fs::write(&bad, &corrupt).unwrap();
    assert!(matches!(Dataset::open(&bad), Err(Error::Format { offset: 0, .. })));

    let mut corrupt = bytes.clone();
    corrupt[8] = 9;
    std::fs::write(&bad, &corrupt).unwrap();
    assert!(matches!(Dataset::open(&bad), Err(Error::Format { offset: 8, .. })));

    let mut long = bytes;
    long.push(0);
    std::fs::write(&bad, &long).unwrap();
    assert!(matches!(Dataset::open(&bad), Err(Error::Format { .. })));
}

#[test]
fn declared_statistics_match_a_two_pass_recomputation() {
    let cfg = common::smoke_config();
    let d = common::smoke_data_with(&cfg);
    let m = Dataset::open(&d.train).unwrap().manifest().clone();
    let test_m = Dataset::open(&d.test).unwrap().manifest().clone();
    assert_eq!(m.stats, test_m.stats);

    // Two-pass mean/variance of the f32-stored lead-0 truth.
    let sim = TruthSimulator::new(cfg.height, cfg.width, cfg.channels.len(), cfg.dynamics.clone()).unwrap();
    let plane = cfg.height * cfg.width;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); cfg.channels.len()];
    for init in 0..cfg.train_inits as u64 {
        let ic = sim.initial_condition(cfg.seed, init);
        for (i, v) in ic.iter().enumerate() {
            let c = i / plane;
            values[c].push((cfg.channel_mean[c] + cfg.channel_scale[c] * v) as f32 as f64);
        }
    }
    for (c, vs) in values.iter().enumerate() {
        let mean = vs.iter().sum::<f64>() / vs.len() as f64;
        let var = vs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vs.len() as f64;
        let std = var.sqrt();
        assert!((m.stats.mean[c] - mean).abs() / std < 1e-5, "channel {} mean", c);
        assert!((m.stats.std[c] - std).abs() / std < 1e-5, "channel {} std", c);
    }
    assert!(check_stats_integrity(&d.train, &m).unwrap() <= 1e-5);
}

#[test]
fn tampered_statistics_fail_the_integrity_check() {
    let d = common::smoke_data();
    let mut m = Dataset::open(&d.train).unwrap().manifest().clone();
    m.stats.std[0] *= 1.001;
    assert!(check_stats_integrity(&d.train, &m).unwrap() > 1e-5);
}

#[test]
fn batches_are_seeded_and_lead_closed() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let a = sample_batch(&ds, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = sample_batch(&ds, 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a.leads, b.leads);
    assert_eq!(a.inits, b.inits);
    assert_eq!(a.truth, b.truth);
    assert_eq!(a.experts, b.experts);
    assert!(a.leads.iter().all(|l| ds.manifest().leads.contains(l)));
    assert!(matches!(
        sample_batch(&ds, 0, &mut ChaCha8Rng::seed_from_u64(9)),
        Err(Error::Contract(_))
    ));
}

#[test]
fn batches_are_standardized_with_manifest_statistics() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let m = ds.manifest();
    let batch = sample_batch(&ds, 2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let raw = ds.sample(batch.inits[0], batch.leads[0]).unwrap();
    let plane = m.plane();
    for (i, (&z, &x)) in batch.truth[0].data().iter().zip(raw.truth.data()).enumerate() {
        let c = i / plane;
        let want = (x as f64 - m.stats.mean[c]) / m.stats.std[c];
        assert!((z as f64 - want).abs() < 1e-4);
    }
}

#[test]
fn lead_draws_are_uniform_within_five_percent() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let leads = ds.manifest().leads.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    let draws = 10_000;
    for _ in 0..draws / 50 {
        for l in sample_batch(&ds, 50, &mut rng).unwrap().leads {
            *counts.entry(l).or_default() += 1;
        }
    }
    let expected = draws as f64 / leads.len() as f64;
    for l in &leads {
        let got = counts[l] as f64;
        assert!((got - expected).abs() / expected < 0.05, "lead {}: {} vs {}", l, got, expected);
    }
}

#[test]
fn generated_expert_error_grows_with_lead() {
    let d = common::smoke_data();
    let ds = Dataset::open(&d.train).unwrap();
    let m = ds.manifest().clone();
    let rmse = |k: usize, e: usize| {
        let mut acc = 0.0;
        let mut n = 0usize;
        for init in 0..m.n_inits {
            let s = ds.standardized_at(init, k).unwrap();
            let f = m.field_len();
            for (p, t) in s.experts.data()[e * f..(e + 1) * f].iter().zip(s.truth.data()) {
                acc += ((p - t) as f64).powi(2);
                n += 1;
            }
        }
        (acc / n as f64).sqrt()
    };
    for e in 0..m.n_experts {
        let first = rmse(0, e);
        let last = rmse(m.leads.len() - 1, e);
        assert!(last >= first, "expert {}: {} -> {}", m.expert_names[e], first, last);
    }
}

proptest! {
    #[test]
    fn ramps_are_monotone(start in 0.0..2.0f64, extra in 0.0..2.0f64, power in 0.1..4.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let r = Ramp { start, end: start + extra, power };
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(r.at(lo) <= r.at(hi) + 1e-12);
        prop_assert!((r.at(0.0) - start).abs() < 1e-12);
        prop_assert!((r.at(1.0) - (start + extra)).abs() < 1e-12);
    }

    #[test]
    fn blob_masks_stay_in_unit_interval(
        cx in 0.0..1.0f64, cy in 0.0..1.0f64, radius in 0.01..0.8f64, inside in 0.0..=1.0f64, outside in 0.0..=1.0f64
    ) {
        let mask = MaskSpec::Blob { center_x: cx, center_y: cy, radius, inside, outside };
        for v in mask.render(16, 32) {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn standardize_round_trips(mean in -1e4..1e4f64, std in 0.01..1e3f64, x in proptest::collection::vec(-1e4..1e4f32, 8)) {
        let stats = ChannelStats { mean: vec![mean, -mean], std: vec![std, 2.0 * std] };
        let mut y = x.clone();
        stats.standardize(&mut y, 4);
        stats.destandardize(&mut y, 4);
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-3 * (1.0 + a.abs()));
        }
    }
}
