//! Fixed-length windowing of aligned streams and majority-duration labeling.

use trisleep_numcore::Tensor;

use crate::error::{Result, SyncError};
use crate::modality::{Modality, Trimodal};
use crate::stream::DenseStream;

/// Wake = 0, sleep = 1.
pub const WAKE: u8 = 0;
pub const SLEEP: u8 = 1;

/// Durations closer than this (seconds) count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelInterval {
    pub t_start: f64,
    pub t_end: f64,
    pub label: u8,
}

/// Annotated sleep/wake intervals of one recording.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelTrack {
    pub intervals: Vec<LabelInterval>,
}

impl LabelTrack {
    pub fn new(mut intervals: Vec<LabelInterval>) -> Result<Self> {
        intervals.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));
        let track = Self { intervals };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, iv) in self.intervals.iter().enumerate() {
            if iv.label > SLEEP {
                return Err(SyncError::Labels(format!("interval {i} has label {}", iv.label)));
            }
            if !(iv.t_end > iv.t_start) {
                return Err(SyncError::Labels(format!("interval {i} is empty or inverted")));
            }
            if i > 0 && iv.t_start < self.intervals[i - 1].t_end {
                return Err(SyncError::Labels(format!("interval {i} overlaps its predecessor")));
            }
        }
        Ok(())
    }

    /// Seconds of `(wake, sleep)` inside `[t0, t1)`.
    pub fn durations(&self, t0: f64, t1: f64) -> (f64, f64) {
        let mut acc = [0.0f64; 2];
        for iv in &self.intervals {
            let overlap = iv.t_end.min(t1) - iv.t_start.max(t0);
            if overlap > 0.0 {
                acc[iv.label as usize] += overlap;
            }
        }
        (acc[0], acc[1])
    }
}

/// One window of all three modalities; each tensor is `[channels, samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub signals: Trimodal<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub segment: Segment,
    pub label: u8,
    /// Recording/family the segment came from, when known.
    pub family: Option<u32>,
}

/// Labeled windows plus the sampling layout they share.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch {
    pub sample_rates: Trimodal<u32>,
    pub window_secs: f64,
    pub segments: Vec<LabeledSegment>,
}

impl SegmentBatch {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Samples per channel for each modality.
    pub fn samples_per_window(&self) -> Trimodal<usize> {
        self.sample_rates
            .map(|_, &r| (r as f64 * self.window_secs).round() as usize)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.segments.iter().map(|s| s.label).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentOptions {
    /// Drop windows whose samples are all zero in every modality.
    pub drop_all_zero: bool,
}

/// Cuts aligned streams into consecutive non-overlapping windows; a trailing
/// partial window is discarded.
pub fn segment(streams: &Trimodal<DenseStream>, window_secs: f64, opts: SegmentOptions) -> Result<Vec<Segment>> {
    if !(window_secs > 0.0) {
        return Err(SyncError::Alignment(format!("window length {window_secs} must be positive")));
    }
    let reference = &streams.audio;
    let tol = 1.0
        / Modality::ALL
            .iter()
            .map(|&m| streams.get(m).sample_rate)
            .min()
            .unwrap_or(1) as f64
        + 1e-9;
    for (m, s) in streams.iter() {
        if s.channels == 0 {
            return Err(SyncError::Alignment(format!("{m} stream has no channels")));
        }
        if (s.t0 - reference.t0).abs() > tol || (s.duration() - reference.duration()).abs() > tol {
            return Err(SyncError::Alignment(format!(
                "{m} spans [{:.6}, {:.6}] but audio spans [{:.6}, {:.6}]",
                s.t0,
                s.t_end(),
                reference.t0,
                reference.t_end()
            )));
        }
    }
    let duration = Modality::ALL
        .iter()
        .map(|&m| streams.get(m).duration())
        .fold(f64::INFINITY, f64::min);
    let count = (duration / window_secs + 1e-9).floor().max(0.0) as usize;
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let signals = streams.map(|_, s| {
            let len = (s.sample_rate as f64 * window_secs).round() as usize;
            let frames = s.frames();
            let mut start = (s.sample_rate as f64 * w as f64 * window_secs).round() as usize;
            if start + len > frames {
                start = frames.saturating_sub(len);
            }
            let ch = s.channels;
            let mut data = vec![0.0f32; ch * len];
            for t in 0..len.min(frames - start) {
                for c in 0..ch {
                    data[c * len + t] = s.samples[(start + t) * ch + c];
                }
            }
            Tensor::new(vec![ch, len], data).expect("sized above")
        });
        if opts.drop_all_zero && signals.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)) {
            continue;
        }
        out.push(Segment {
            t_start: reference.t0 + w as f64 * window_secs,
            signals,
        });
    }
    Ok(out)
}

/// Majority-duration label per window: sleep only if it strictly outlasts
/// wake (ties go to wake); windows without any annotation are dropped.
pub fn assign_labels(segments: Vec<Segment>, labels: &LabelTrack, window_secs: f64) -> Vec<LabeledSegment> {
    segments
        .into_iter()
        .filter_map(|segment| {
            let (wake, sleep) = labels.durations(segment.t_start, segment.t_start + window_secs);
            if wake <= 0.0 && sleep <= 0.0 {
                return None;
            }
            let label = if sleep - wake > TIE_TOLERANCE { SLEEP } else { WAKE };
            Some(LabeledSegment {
                segment,
                label,
                family: None,
            })
        })
        .collect()
}
