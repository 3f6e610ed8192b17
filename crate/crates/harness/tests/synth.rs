use trisleep_harness::{prepare_recording, synth_generate, PipelineConfig, SynthSpec, NATIVE_RATES};
use trisleep_sync::io::write_chunked;
use trisleep_sync::{zero_fill, Modality, SLEEP, WAKE};

fn short(seed: u64, family: u32) -> SynthSpec {
    SynthSpec {
        seed,
        family,
        duration_secs: 90.0,
        ..SynthSpec::default()
    }
}

fn bytes(rec: &trisleep_harness::Recording) -> Vec<u8> {
    let mut out = Vec::new();
    for (_, s) in rec.streams.iter() {
        write_chunked(&mut out, s).unwrap();
    }
    out
}

#[test]
fn fixed_seed_is_bit_identical() {
    let a = synth_generate(&short(7, 2)).unwrap();
    let b = synth_generate(&short(7, 2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(bytes(&a), bytes(&b));
    let c = synth_generate(&short(8, 2)).unwrap();
    assert_ne!(bytes(&a), bytes(&c));
}

#[test]
fn streams_use_native_rates_and_valid_chunks() {
    let rec = synth_generate(&short(1, 0)).unwrap();
    for (m, s) in rec.streams.iter() {
        assert_eq!(s.sample_rate, *NATIVE_RATES.get(m));
        assert_eq!(s.channels, m.channels());
        s.validate().unwrap();
        let missing: u64 = s
            .chunks
            .iter()
            .map(|c| (((c.t_end - c.t_start) * s.sample_rate as f64).round() as u64) - (c.s_end - c.s_start))
            .sum();
        assert!(missing > 0, "{m} has no missing-sample tails");
    }
    let starts: Vec<f64> = rec.streams.iter().map(|(_, s)| s.chunks[0].t_start).collect();
    assert!(starts.iter().any(|&t| t != starts[0]), "span offsets should differ");
}

#[test]
fn without_missing_samples_zero_fill_is_identity() {
    let spec = SynthSpec {
        max_missing_frac: 0.0,
        ..short(3, 1)
    };
    let rec = synth_generate(&spec).unwrap();
    for (m, s) in rec.streams.iter() {
        let dense = zero_fill(s).unwrap();
        let raw: Vec<f32> = s.chunks.iter().flat_map(|c| c.samples.iter().copied()).collect();
        assert_eq!(dense.samples, raw, "{m}");
    }
}

#[test]
fn short_duration_is_rejected() {
    let spec = SynthSpec {
        duration_secs: 59.0,
        ..SynthSpec::default()
    };
    assert!(synth_generate(&spec).is_err());
}

/// Long-run sleep share of an alternating renewal process whose dwell
/// times have the given means.
fn stationary_sleep_share(mean_sleep: f64, mean_wake: f64) -> f64 {
    mean_sleep / (mean_sleep + mean_wake)
}

#[test]
fn one_hour_occupies_both_states_near_the_stationary_share() {
    let spec = SynthSpec::default();
    assert_eq!(spec.duration_secs, 3600.0);
    let oracle = stationary_sleep_share(spec.mean_dwell_sleep_secs, spec.mean_dwell_wake_secs);
    assert!((spec.stationary_sleep_fraction() - oracle).abs() < 1e-12);
    let mut shares = Vec::new();
    for seed in 0..3 {
        let rec = synth_generate(&SynthSpec { seed, ..spec.clone() }).unwrap();
        let mut time = [0.0f64; 2];
        for iv in &rec.labels.intervals {
            time[iv.label as usize] += iv.t_end - iv.t_start;
        }
        let total = time[0] + time[1];
        assert!((total - 3600.0).abs() < 1e-6);
        let sleep = time[SLEEP as usize] / total;
        let wake = time[WAKE as usize] / total;
        assert!(sleep >= 0.2 && wake >= 0.2, "seed {seed}: sleep {sleep:.3} wake {wake:.3}");
        shares.push(sleep);
    }
    let mean = shares.iter().sum::<f64>() / shares.len() as f64;
    assert!((mean - oracle).abs() < 0.06, "mean sleep share {mean:.3} vs stationary {oracle:.3}");
}

#[test]
fn emissions_differ_between_states() {
    let spec = SynthSpec {
        duration_secs: 600.0,
        ..short(5, 0)
    };
    let rec = synth_generate(&spec).unwrap();
    let batch = prepare_recording(
        &rec,
        &PipelineConfig {
            window_secs: 2.0,
            ..PipelineConfig::default()
        },
    )
    .unwrap();
    // Per state: audio RMS, gyro RMS, ECG beats per second.
    let mut sums = [[0.0f64; 3]; 2];
    let mut counts = [0usize; 2];
    for s in &batch.segments {
        let sig = &s.segment.signals;
        let rms = |x: &[f32]| (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        let audio = rms(sig.get(Modality::Audio).data());
        let imu = sig.get(Modality::Imu);
        let gyro: Vec<f32> = (3..6).flat_map(|c| imu.row(c).to_vec()).collect();
        let ecg = sig.get(Modality::Ecg).data();
        let mut beats = 0;
        let mut last = usize::MAX;
        for (i, w) in ecg.windows(2).enumerate() {
            if w[0] < 0.5 && w[1] >= 0.5 && (last == usize::MAX || i - last > 3200) {
                beats += 1;
                last = i;
            }
        }
        let l = s.label as usize;
        sums[l][0] += audio;
        sums[l][1] += rms(&gyro);
        sums[l][2] += beats as f64 / 2.0;
        counts[l] += 1;
    }
    assert!(counts[0] > 20 && counts[1] > 20);
    let mean = |l: usize, k: usize| sums[l][k] / counts[l] as f64;
    let (w, s) = (WAKE as usize, SLEEP as usize);
    assert!(mean(w, 0) > 1.3 * mean(s, 0), "audio {} vs {}", mean(w, 0), mean(s, 0));
    assert!(mean(w, 1) > 2.0 * mean(s, 1), "gyro {} vs {}", mean(w, 1), mean(s, 1));
    assert!(mean(w, 2) > mean(s, 2), "heart rate {} vs {}", mean(w, 2), mean(s, 2));
}
