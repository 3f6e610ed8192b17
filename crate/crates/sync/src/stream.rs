//! Chunked recordings, gap-free dense streams, and the transformations
//! between them: zero-filling, overlap truncation and resampling.

use log::warn;

use crate::error::{Result, SyncError};
use crate::modality::{Modality, Trimodal};

/// One contiguous write of a device: UTC span plus the samples it actually holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub t_start: f64,
    pub t_end: f64,
    pub s_start: u64,
    pub s_end: u64,
    /// Frame-interleaved samples, `(s_end - s_start) * channels` values.
    pub samples: Vec<f32>,
}

impl Chunk {
    pub fn recorded(&self) -> usize {
        (self.s_end - self.s_start) as usize
    }
}

/// A modality's raw recording as written by the device.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedStream {
    pub modality: Modality,
    pub sample_rate: u32,
    pub channels: usize,
    pub chunks: Vec<Chunk>,
}

/// Samples between `t0` and `t` on a `rate` Hz grid, rounded to nearest.
pub fn sample_offset(rate: u32, t0: f64, t: f64) -> i64 {
    (rate as f64 * (t - t0)).round() as i64
}

impl ChunkedStream {
    /// Checks the per-chunk and ordering invariants.
    pub fn validate(&self) -> Result<()> {
        let mut prev_end: Option<(f64, f64)> = None;
        for (i, c) in self.chunks.iter().enumerate() {
            if !(c.t_end > c.t_start) || !c.t_start.is_finite() || !c.t_end.is_finite() {
                return Err(SyncError::CorruptChunk {
                    index: i,
                    detail: format!("empty or inverted span [{}, {}]", c.t_start, c.t_end),
                });
            }
            if c.s_end < c.s_start {
                return Err(SyncError::CorruptChunk {
                    index: i,
                    detail: format!("sample range {}..{} is inverted", c.s_start, c.s_end),
                });
            }
            if c.samples.len() != c.recorded() * self.channels {
                return Err(SyncError::CorruptChunk {
                    index: i,
                    detail: format!(
                        "buffer holds {} values, sample range needs {}",
                        c.samples.len(),
                        c.recorded() * self.channels
                    ),
                });
            }
            let expected = sample_offset(self.sample_rate, c.t_start, c.t_end);
            if c.recorded() as i64 > expected {
                return Err(SyncError::CorruptChunk {
                    index: i,
                    detail: format!("{} samples recorded but the UTC span only holds {expected}", c.recorded()),
                });
            }
            if let Some((prev_start, prev_end)) = prev_end {
                if c.t_start < prev_start {
                    return Err(SyncError::Unsorted { index: i });
                }
                if c.t_start < prev_end {
                    return Err(SyncError::Overlap { index: i });
                }
            }
            prev_end = Some((c.t_start, c.t_end));
        }
        Ok(())
    }
}

/// Gap-free uniformly sampled stream starting at UTC time `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStream {
    pub modality: Modality,
    pub sample_rate: u32,
    pub channels: usize,
    pub t0: f64,
    /// Frame-interleaved samples.
    pub samples: Vec<f32>,
}

impl DenseStream {
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.duration()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// The stream as a single complete chunk.
    pub fn to_chunked(&self) -> ChunkedStream {
        ChunkedStream {
            modality: self.modality,
            sample_rate: self.sample_rate,
            channels: self.channels,
            chunks: if self.is_empty() {
                Vec::new()
            } else {
                vec![Chunk {
                    t_start: self.t0,
                    t_end: self.t_end(),
                    s_start: 0,
                    s_end: self.frames() as u64,
                    samples: self.samples.clone(),
                }]
            },
        }
    }

    fn empty_like(&self, t0: f64) -> Self {
        Self {
            t0,
            samples: Vec::new(),
            ..self.clone()
        }
    }
}

/// Expands a chunked recording onto a gap-free timeline.
///
/// Chunk boundaries are rounded to the nearest sample of the stream's grid
/// (anchored at the first chunk's start). Recorded samples are placed at the
/// start of their chunk's slot; the missing tail and any gap between chunks
/// stay zero. The result holds `round(rate * (last_end - first_start))` frames.
pub fn zero_fill(stream: &ChunkedStream) -> Result<DenseStream> {
    stream.validate()?;
    let ch = stream.channels;
    let Some(first) = stream.chunks.first() else {
        return Ok(DenseStream {
            modality: stream.modality,
            sample_rate: stream.sample_rate,
            channels: ch,
            t0: 0.0,
            samples: Vec::new(),
        });
    };
    let t0 = first.t_start;
    let last_end = stream.chunks.last().map_or(t0, |c| c.t_end);
    let total = sample_offset(stream.sample_rate, t0, last_end).max(0) as usize;
    let mut samples = vec![0.0f32; total * ch];
    for c in &stream.chunks {
        let a = sample_offset(stream.sample_rate, t0, c.t_start).max(0) as usize;
        let b = (sample_offset(stream.sample_rate, t0, c.t_end).max(0) as usize).min(total);
        let n = c.recorded().min(b.saturating_sub(a));
        samples[a * ch..(a + n) * ch].copy_from_slice(&c.samples[..n * ch]);
    }
    Ok(DenseStream {
        modality: stream.modality,
        sample_rate: stream.sample_rate,
        channels: ch,
        t0,
        samples,
    })
}

/// Truncates all streams to their common UTC interval.
///
/// Each stream keeps `round(rate * overlap)` frames starting at the sample
/// nearest the common start. Disjoint spans give empty streams and a warning.
pub fn align_overlap(streams: &Trimodal<DenseStream>) -> Trimodal<DenseStream> {
    let start = Modality::ALL
        .iter()
        .map(|&m| streams.get(m).t0)
        .fold(f64::NEG_INFINITY, f64::max);
    let end = Modality::ALL
        .iter()
        .map(|&m| streams.get(m).t_end())
        .fold(f64::INFINITY, f64::min);
    if !(end > start) {
        warn!("streams do not overlap: common span [{start}, {end}] is empty");
        return streams.map(|_, s| s.empty_like(start));
    }
    streams.map(|_, s| {
        let first = sample_offset(s.sample_rate, s.t0, start).max(0) as usize;
        let count = sample_offset(s.sample_rate, start, end).max(0) as usize;
        let ch = s.channels;
        let mut samples = vec![0.0f32; count * ch];
        let avail = s.frames().saturating_sub(first).min(count);
        samples[..avail * ch].copy_from_slice(&s.samples[first * ch..(first + avail) * ch]);
        DenseStream {
            t0: s.t0 + first as f64 / s.sample_rate as f64,
            samples,
            ..s.clone()
        }
    })
}

/// Linear interpolation onto a `target_rate` grid with the last sample held.
///
/// Output frame `j` sits at `t0 + j / target_rate`; the result has
/// `round(duration * target_rate)` frames.
pub fn resample(stream: &DenseStream, target_rate: u32) -> DenseStream {
    assert!(target_rate > 0, "target rate must be positive");
    if target_rate == stream.sample_rate {
        return stream.clone();
    }
    let n_in = stream.frames();
    let n_out = (stream.duration() * target_rate as f64).round() as usize;
    let ch = stream.channels;
    let mut samples = vec![0.0f32; n_out * ch];
    if n_in > 0 {
        let ratio = stream.sample_rate as f64 / target_rate as f64;
        for j in 0..n_out {
            let p = j as f64 * ratio;
            let i0 = (p.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let f = if i0 == n_in - 1 { 0.0 } else { p - i0 as f64 };
            for c in 0..ch {
                let a = stream.samples[i0 * ch + c] as f64;
                let b = stream.samples[i1 * ch + c] as f64;
                samples[j * ch + c] = (a + (b - a) * f) as f32;
            }
        }
    }
    DenseStream {
        sample_rate: target_rate,
        samples,
        ..stream.clone()
    }
}
