use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use promptfuse::audio::{log_spectrogram, SpectrogramConfig, Waveform};
use promptfuse::dataset::{
    class_distribution, few_shot_sample, make_splits, DatasetSplit, FewShotSpec, Label,
    ManifestEntry,
};
use promptfuse::fusion::{contrastive_loss, fuse, temporal_pool, SimilarityMatrix};
use promptfuse::train::frame_indices;

fn entries(malicious: usize, benign: usize) -> Vec<ManifestEntry> {
    let make = |i: usize, label| ManifestEntry {
        id: format!("e{i}"),
        label,
        frames_dir: PathBuf::from(format!("f/{i}")),
        audio_path: PathBuf::from(format!("a/{i}.wav")),
        split: None,
    };
    (0..malicious)
        .map(|i| make(i, Label::Malicious))
        .chain((0..benign).map(|i| make(malicious + i, Label::Benign)))
        .collect()
}

fn ids(split: &DatasetSplit) -> Vec<String> {
    split.entries.iter().map(|e| e.id.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_partition_the_input(m in 1usize..40, b in 1usize..40, frac in 0.0f64..=1.0, seed: u64) {
        let all = entries(m, b);
        let (train, test) = make_splits(&all, frac, seed).unwrap();
        let mut union: Vec<String> = ids(&train).into_iter().chain(ids(&test)).collect();
        union.sort();
        let mut expected: Vec<String> = all.iter().map(|e| e.id.clone()).collect();
        expected.sort();
        prop_assert_eq!(union, expected);
        let train_ids: HashSet<String> = ids(&train).into_iter().collect();
        prop_assert!(ids(&test).iter().all(|id| !train_ids.contains(id)));

        let whole = class_distribution(&all);
        for label in Label::ALL {
            prop_assert_eq!(train.class_counts[&label] + test.class_counts[&label], whole[&label]);
        }
        let again = make_splits(&all, frac, seed).unwrap();
        prop_assert_eq!(ids(&again.0), ids(&train));
    }

    #[test]
    fn few_shot_is_a_balanced_subset(m in 16usize..40, b in 16usize..40, k in 0usize..=16, seed: u64) {
        let train = DatasetSplit::new(entries(m, b));
        let picked = few_shot_sample(&train, FewShotSpec { k, seed }).unwrap();
        for label in Label::ALL {
            prop_assert_eq!(picked.class_counts[&label], k);
        }
        let pool: HashSet<String> = ids(&train).into_iter().collect();
        let chosen = ids(&picked);
        prop_assert!(chosen.iter().all(|id| pool.contains(id)));
        prop_assert_eq!(chosen.iter().collect::<HashSet<_>>().len(), chosen.len());
    }

    #[test]
    fn frame_indices_follow_uniform_spacing(available in 1usize..200, count in 1usize..64) {
        let idx = frame_indices(available, count);
        prop_assert_eq!(idx.len(), count);
        for (i, &j) in idx.iter().enumerate() {
            // Integer form of floor(i * N / T).
            prop_assert_eq!(j, i * available / count);
            prop_assert!(j < available);
        }
        prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn louder_signal_lifts_every_cell(c in 1.01f64..20.0, seed in 0u64..1000) {
        let cfg = SpectrogramConfig { n_fft: 256, hop: 128, ..SpectrogramConfig::default() };
        let samples: Vec<f64> = (0..2000)
            .map(|i| 0.05 * ((i as f64 * 0.013 * (1 + seed % 7) as f64).sin() + ((i * 31 + seed as usize) % 17) as f64 / 17.0 - 0.5))
            .collect();
        let base = log_spectrogram(&Waveform::new(samples.clone(), 16_000), &cfg);
        let loud = log_spectrogram(&Waveform::new(samples.iter().map(|v| v * c).collect(), 16_000), &cfg);
        let floor = cfg.log_floor.ln();
        for (a, b) in base.values.iter().zip(loud.values.iter()) {
            prop_assert!(b >= a);
            if *a > floor {
                prop_assert!((b - a - 2.0 * c.ln()).abs() <= 1e-9, "{} -> {}", a, b);
            }
        }
    }

    #[test]
    fn delaying_by_one_hop_shifts_columns(seed in 0u64..1000) {
        let cfg = SpectrogramConfig { n_fft: 256, hop: 64, ..SpectrogramConfig::default() };
        let n = 3000;
        let signal: Vec<f64> = (0..n)
            .map(|i| ((i as f64) * (0.02 + (seed % 13) as f64 * 0.01)).sin() * 0.5)
            .collect();
        let mut delayed = vec![0.0; cfg.hop];
        delayed.extend_from_slice(&signal);
        let a = log_spectrogram(&Waveform::new(signal, 8000), &cfg);
        let b = log_spectrogram(&Waveform::new(delayed, 8000), &cfg);
        prop_assert_eq!(b.time_frames(), a.time_frames() + 1);
        // Columns whose window never reaches past the original signal.
        let interior = (n - cfg.n_fft / 2) / cfg.hop;
        for t in 0..interior {
            for f in 0..a.freq_bins() {
                prop_assert!((a.values[[f, t]] - b.values[[f, t + 1]]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn pooling_ignores_row_order(rows in 1usize..24, seed: u64) {
        let m = Array2::from_shape_fn((rows, 16), |(r, c)| ((r * 16 + c) as f64 * 0.917 + seed as f64 * 1e-3).sin());
        let mut order: Vec<usize> = (0..rows).collect();
        order.reverse();
        order.rotate_left((seed % rows as u64) as usize);
        let permuted = m.select(ndarray::Axis(0), &order);
        let a = temporal_pool(&m).unwrap();
        let b = temporal_pool(&permuted).unwrap();
        prop_assert!(a.iter().zip(b.iter()).all(|(x, y)| (x - y).abs() <= 1e-12));
    }

    #[test]
    fn fused_feature_has_unit_norm(seed: u64, audio_on: bool) {
        let v = Array1::from_shape_fn(512, |i| ((i as u64 ^ seed) as f64 * 0.37).sin());
        let a = Array1::from_shape_fn(512, |i| ((i as u64).wrapping_mul(seed | 1) as f64 * 1e-3).cos());
        let f = fuse(&v, &a, audio_on).unwrap();
        prop_assert!((f.dot(&f).sqrt() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn ten_entry_class_is_sampled_uniformly() {
    let train = DatasetSplit::new(entries(10, 10));
    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    for seed in 0..1000 {
        let picked = few_shot_sample(&train, FewShotSpec { k: 1, seed }).unwrap();
        for e in picked.entries.iter().filter(|e| e.label == Label::Malicious) {
            *hits.entry(e.id.clone()).or_default() += 1;
        }
    }
    assert_eq!(hits.len(), 10);
    let mut chi2 = 0.0;
    for (id, &n) in &hits {
        let freq = n as f64 / 1000.0;
        assert!((freq - 0.1).abs() <= 0.03, "{id} picked {freq}");
        chi2 += (n as f64 - 100.0).powi(2) / 100.0;
    }
    // 99th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 21.666, "chi-square {chi2}");
}

#[test]
fn short_class_is_named_in_the_error() {
    let train = DatasetSplit::new(entries(5, 20));
    let err = few_shot_sample(&train, FewShotSpec { k: 16, seed: 0 }).unwrap_err();
    assert!(err.to_string().contains("malicious"), "{err}");
}

#[test]
fn zero_logits_give_ln_two() {
    let sim = SimilarityMatrix {
        logits: Array2::zeros((3, 2)),
        logit_scale: 1.0,
    };
    let loss = contrastive_loss(&sim, &[0, 1, 1]).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() <= 1e-9);
}
