//! Reconstruction of time-aligned trimodal recordings: zero-filling of
//! chunked device streams, overlap truncation, resampling, fixed-window
//! segmentation and majority-duration labeling.

pub mod error;
pub mod io;
pub mod modality;
pub mod segment;
pub mod stream;

pub use error::{Result, SyncError};
pub use modality::{Modality, Trimodal};
pub use segment::{
    assign_labels, segment, LabelInterval, LabelTrack, LabeledSegment, Segment, SegmentBatch, SegmentOptions, SLEEP,
    TIE_TOLERANCE, WAKE,
};
pub use stream::{align_overlap, resample, sample_offset, zero_fill, Chunk, ChunkedStream, DenseStream};
