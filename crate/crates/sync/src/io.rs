//! Binary chunked-stream files, label CSVs and segment archives.
//!
//! All binary formats are little-endian; see FORMATS.md for layouts.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use trisleep_numcore::Tensor;

use crate::error::{Result, SyncError};
use crate::modality::{Modality, Trimodal};
use crate::segment::{LabelInterval, LabelTrack, LabeledSegment, Segment, SegmentBatch};
use crate::stream::{Chunk, ChunkedStream};

pub const CHUNKED_MAGIC: &[u8; 4] = b"LBCS";
pub const SEGMENT_MAGIC: &[u8; 4] = b"LBSG";
pub const SEGMENT_VERSION: u32 = 1;
const NO_FAMILY: u32 = u32::MAX;

fn read_magic(r: &mut impl Read, magic: &[u8; 4]) -> Result<()> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(SyncError::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(&buf)
        )));
    }
    Ok(())
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; n];
    r.read_f32_into::<LE>(&mut out)?;
    Ok(out)
}

fn write_f32s(w: &mut impl Write, data: &[f32]) -> Result<()> {
    for &v in data {
        w.write_f32::<LE>(v)?;
    }
    Ok(())
}

pub fn write_chunked(w: &mut impl Write, stream: &ChunkedStream) -> Result<()> {
    w.write_all(CHUNKED_MAGIC)?;
    w.write_u8(stream.modality.code())?;
    w.write_u32::<LE>(stream.sample_rate)?;
    w.write_u8(stream.channels as u8)?;
    w.write_u32::<LE>(stream.chunks.len() as u32)?;
    for c in &stream.chunks {
        w.write_f64::<LE>(c.t_start)?;
        w.write_f64::<LE>(c.t_end)?;
        w.write_u64::<LE>(c.s_start)?;
        w.write_u64::<LE>(c.s_end)?;
        write_f32s(w, &c.samples)?;
    }
    Ok(())
}

/// Reads a chunked stream and checks its invariants.
pub fn read_chunked(r: &mut impl Read) -> Result<ChunkedStream> {
    read_magic(r, CHUNKED_MAGIC)?;
    let code = r.read_u8()?;
    let modality = Modality::from_code(code).ok_or_else(|| SyncError::Format(format!("unknown modality code {code}")))?;
    let sample_rate = r.read_u32::<LE>()?;
    if sample_rate == 0 {
        return Err(SyncError::Format("sample rate is zero".into()));
    }
    let channels = r.read_u8()? as usize;
    if channels == 0 {
        return Err(SyncError::Format("channel count is zero".into()));
    }
    let count = r.read_u32::<LE>()? as usize;
    let mut chunks = Vec::with_capacity(count.min(1 << 16));
    for index in 0..count {
        let t_start = r.read_f64::<LE>()?;
        let t_end = r.read_f64::<LE>()?;
        let s_start = r.read_u64::<LE>()?;
        let s_end = r.read_u64::<LE>()?;
        if s_end < s_start {
            return Err(SyncError::CorruptChunk {
                index,
                detail: format!("sample range {s_start}..{s_end} is inverted"),
            });
        }
        let samples = read_f32s(r, (s_end - s_start) as usize * channels)?;
        chunks.push(Chunk {
            t_start,
            t_end,
            s_start,
            s_end,
            samples,
        });
    }
    let stream = ChunkedStream {
        modality,
        sample_rate,
        channels,
        chunks,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn save_chunked(path: &Path, stream: &ChunkedStream) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_chunked(&mut w, stream)?;
    w.flush()?;
    Ok(())
}

pub fn load_chunked(path: &Path) -> Result<ChunkedStream> {
    read_chunked(&mut BufReader::new(File::open(path)?))
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    t_start: f64,
    t_end: f64,
    label: u8,
}

pub fn write_labels(w: impl Write, track: &LabelTrack) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for iv in &track.intervals {
        csv.serialize(LabelRow {
            t_start: iv.t_start,
            t_end: iv.t_end,
            label: iv.label,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_labels(r: impl Read) -> Result<LabelTrack> {
    let mut csv = csv::Reader::from_reader(r);
    let headers = csv.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_start", "t_end", "label"] {
        return Err(SyncError::Labels(format!("unexpected header {:?}", headers)));
    }
    let mut intervals = Vec::new();
    for row in csv.deserialize() {
        let row: LabelRow = row?;
        intervals.push(LabelInterval {
            t_start: row.t_start,
            t_end: row.t_end,
            label: row.label,
        });
    }
    LabelTrack::new(intervals)
}

pub fn save_labels(path: &Path, track: &LabelTrack) -> Result<()> {
    write_labels(File::create(path)?, track)
}

pub fn load_labels(path: &Path) -> Result<LabelTrack> {
    read_labels(BufReader::new(File::open(path)?))
}

pub fn write_segments(w: &mut impl Write, batch: &SegmentBatch) -> Result<()> {
    let lens = batch.samples_per_window();
    w.write_all(SEGMENT_MAGIC)?;
    w.write_u32::<LE>(SEGMENT_VERSION)?;
    for m in Modality::ALL {
        w.write_u32::<LE>(*batch.sample_rates.get(m))?;
    }
    for m in Modality::ALL {
        w.write_u8(m.channels() as u8)?;
    }
    w.write_f64::<LE>(batch.window_secs)?;
    w.write_u32::<LE>(batch.segments.len() as u32)?;
    for m in Modality::ALL {
        w.write_u64::<LE>(*lens.get(m) as u64)?;
    }
    for (i, s) in batch.segments.iter().enumerate() {
        w.write_f64::<LE>(s.segment.t_start)?;
        w.write_u8(s.label)?;
        w.write_u32::<LE>(s.family.unwrap_or(NO_FAMILY))?;
        for m in Modality::ALL {
            let t = s.segment.signals.get(m);
            if t.shape() != [m.channels(), *lens.get(m)] {
                return Err(SyncError::Format(format!(
                    "segment {i}: {m} tensor has shape {:?}, archive expects [{}, {}]",
                    t.shape(),
                    m.channels(),
                    lens.get(m)
                )));
            }
            write_f32s(w, t.data())?;
        }
    }
    Ok(())
}

pub fn read_segments(r: &mut impl Read) -> Result<SegmentBatch> {
    read_magic(r, SEGMENT_MAGIC)?;
    let version = r.read_u32::<LE>()?;
    if version != SEGMENT_VERSION {
        return Err(SyncError::Format(format!("unsupported segment archive version {version}")));
    }
    let rates = Trimodal::new(r.read_u32::<LE>()?, r.read_u32::<LE>()?, r.read_u32::<LE>()?);
    for m in Modality::ALL {
        let ch = r.read_u8()? as usize;
        if ch != m.channels() {
            return Err(SyncError::Format(format!("{m} has {ch} channels, expected {}", m.channels())));
        }
    }
    let window_secs = r.read_f64::<LE>()?;
    let count = r.read_u32::<LE>()? as usize;
    let lens = Trimodal::new(
        r.read_u64::<LE>()? as usize,
        r.read_u64::<LE>()? as usize,
        r.read_u64::<LE>()? as usize,
    );
    let mut segments = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let t_start = r.read_f64::<LE>()?;
        let label = r.read_u8()?;
        if label > 1 {
            return Err(SyncError::Format(format!("label {label} is not 0 or 1")));
        }
        let family = match r.read_u32::<LE>()? {
            NO_FAMILY => None,
            f => Some(f),
        };
        let signals = Trimodal::try_from_fn(|m| -> Result<Tensor> {
            let len = *lens.get(m);
            let data = read_f32s(r, m.channels() * len)?;
            Tensor::new(vec![m.channels(), len], data).map_err(|e| SyncError::Format(e.to_string()))
        })?;
        segments.push(LabeledSegment {
            segment: Segment { t_start, signals },
            label,
            family,
        });
    }
    let batch = SegmentBatch {
        sample_rates: rates,
        window_secs,
        segments,
    };
    if batch.samples_per_window() != lens {
        return Err(SyncError::Format("window lengths disagree with rates and window".into()));
    }
    Ok(batch)
}

pub fn save_segments(path: &Path, batch: &SegmentBatch) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_segments(&mut w, batch)?;
    w.flush()?;
    Ok(())
}

pub fn load_segments(path: &Path) -> Result<SegmentBatch> {
    read_segments(&mut BufReader::new(File::open(path)?))
}
