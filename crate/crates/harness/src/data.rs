//! From raw chunked recordings to labeled, split model inputs.

use std::collections::BTreeSet;

use log::info;
use rand::seq::SliceRandom;
use trisleep_core::Example;
use trisleep_numcore::{par, Execution, SeedStream};
use trisleep_sync::{
    align_overlap, assign_labels, resample, segment, zero_fill, ChunkedStream, LabelTrack, LabeledSegment, SegmentBatch,
    SegmentOptions, Trimodal,
};

use crate::error::{HarnessError, Result};
use crate::synth::{synth_generate, Recording, SynthSpec};

/// Model input rates: waveforms at 16 kHz, IMU at its native 150 Hz.
pub const INPUT_RATES: Trimodal<u32> = Trimodal {
    audio: 16000,
    ecg: 16000,
    imu: 150,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub input_rates: Trimodal<u32>,
    pub window_secs: f64,
    pub drop_all_zero: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_rates: INPUT_RATES,
            window_secs: 30.0,
            drop_all_zero: true,
        }
    }
}

/// zero-fill → resample → overlap truncation → windowing → majority labels.
pub fn prepare(
    streams: &Trimodal<ChunkedStream>,
    labels: &LabelTrack,
    family: Option<u32>,
    cfg: &PipelineConfig,
) -> Result<SegmentBatch> {
    let dense = Trimodal::try_from_fn(|m| zero_fill(streams.get(m)))?;
    let resampled = dense.map(|m, s| resample(s, *cfg.input_rates.get(m)));
    let aligned = align_overlap(&resampled);
    let windows = segment(
        &aligned,
        cfg.window_secs,
        SegmentOptions {
            drop_all_zero: cfg.drop_all_zero,
        },
    )?;
    let mut segments = assign_labels(windows, labels, cfg.window_secs);
    for s in &mut segments {
        s.family = family;
    }
    Ok(SegmentBatch {
        sample_rates: cfg.input_rates,
        window_secs: cfg.window_secs,
        segments,
    })
}

pub fn prepare_recording(rec: &Recording, cfg: &PipelineConfig) -> Result<SegmentBatch> {
    prepare(&rec.streams, &rec.labels, Some(rec.family), cfg)
}

/// Several synthetic families, each one recording, pushed through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub spec: SynthSpec,
    /// Families `first_family .. first_family + families` are generated.
    pub first_family: u32,
    pub families: u32,
    pub pipeline: PipelineConfig,
}

impl Benchmark {
    pub fn build(&self, exec: Execution) -> Result<SegmentBatch> {
        if self.families == 0 {
            return Err(HarnessError::Invalid("benchmark needs at least one family".into()));
        }
        let batches = par::map_range(exec, self.families as usize, |f| -> Result<SegmentBatch> {
            let spec = SynthSpec {
                family: self.first_family + f as u32,
                ..self.spec.clone()
            };
            prepare_recording(&synth_generate(&spec)?, &self.pipeline)
        });
        let mut segments = Vec::new();
        for b in batches {
            segments.extend(b?.segments);
        }
        info!("benchmark: {} segments from {} families", segments.len(), self.families);
        Ok(SegmentBatch {
            sample_rates: self.pipeline.input_rates,
            window_secs: self.pipeline.window_secs,
            segments,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            val_frac: 0.15,
            test_frac: 0.25,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<LabeledSegment>,
    pub val: Vec<LabeledSegment>,
    pub test: Vec<LabeledSegment>,
}

impl Splits {
    pub fn examples(set: &[LabeledSegment]) -> Vec<Example<'_>> {
        set.iter().map(|s| (&s.segment.signals, s.label)).collect()
    }
}

/// Proportional `(train, val, test)` sizes of `n` units, with train and test non-empty.
fn split_counts(n: usize, cfg: &SplitConfig) -> Result<(usize, usize, usize)> {
    if n < 2 {
        return Err(HarnessError::Data(format!("cannot split {n} unit(s) into train and test")));
    }
    let test = ((cfg.test_frac * n as f64).round() as usize).clamp(1, n - 1);
    let val = ((cfg.val_frac * n as f64).round() as usize).min(n - 1 - test);
    Ok((n - val - test, val, test))
}

/// Splits by family when every segment carries one, so no family appears in
/// two splits; otherwise splits the time-ordered segments into contiguous
/// blocks.
pub fn split(segments: Vec<LabeledSegment>, cfg: &SplitConfig, seed: SeedStream) -> Result<Splits> {
    if !(cfg.val_frac >= 0.0 && cfg.test_frac > 0.0 && cfg.val_frac + cfg.test_frac < 1.0) {
        return Err(HarnessError::Invalid("split fractions must be non-negative and sum below 1".into()));
    }
    let mut out = Splits::default();
    if !segments.is_empty() && segments.iter().all(|s| s.family.is_some()) {
        let mut families: Vec<u32> = segments
            .iter()
            .filter_map(|s| s.family)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        families.shuffle(&mut seed.rng());
        let (train, val, _) = split_counts(families.len(), cfg)?;
        let which = |f: u32| {
            let pos = families.iter().position(|&x| x == f).expect("collected above");
            if pos < train {
                0
            } else if pos < train + val {
                1
            } else {
                2
            }
        };
        for s in segments {
            match which(s.family.expect("checked above")) {
                0 => out.train.push(s),
                1 => out.val.push(s),
                _ => out.test.push(s),
            }
        }
    } else {
        let mut segments = segments;
        segments.sort_by(|a, b| a.segment.t_start.total_cmp(&b.segment.t_start));
        let (train, val, _) = split_counts(segments.len(), cfg)?;
        out.test = segments.split_off(train + val);
        out.val = segments.split_off(train);
        out.train = segments;
    }
    Ok(out)
}
