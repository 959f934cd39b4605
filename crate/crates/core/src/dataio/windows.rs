use super::MotionSequence;
use crate::error::{Error, Result};

pub const DEFAULT_INPUT_LEN: usize = 50;
pub const DEFAULT_OUTPUT_LEN: usize = 10;
pub const MAX_EXTENDED: usize = 30;
pub const DEFAULT_STRIDE: usize = 10;

/// One sample: `K` observed frames, `L` target frames, and up to 30 further
/// ground-truth frames for rollout losses. Frames are flat `J·3` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitWindow {
    pub observed: Vec<Vec<f64>>,
    pub target: Vec<Vec<f64>>,
    pub extended_future: Vec<Vec<f64>>,
    pub action: String,
    pub start: usize,
}

impl UnitWindow {
    pub fn joints(&self) -> usize {
        self.observed.first().map_or(0, |f| f.len() / 3)
    }

    /// Target followed by the extended frames.
    pub fn future(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.target.iter().chain(&self.extended_future)
    }

    pub fn future_len(&self) -> usize {
        self.target.len() + self.extended_future.len()
    }
}

/// Windows starting at `0, stride, 2·stride, ...` wherever `K + L` frames
/// fit. Sequences shorter than `K + L` yield no windows.
pub fn make_windows(
    seq: &MotionSequence,
    input_len: usize,
    output_len: usize,
    extended: usize,
    stride: usize,
) -> Result<Vec<UnitWindow>> {
    if input_len == 0 || output_len == 0 || stride == 0 {
        return Err(Error::Config("window lengths and stride must be at least 1".into()));
    }
    let extended = extended.min(MAX_EXTENDED);
    let total = seq.num_frames();
    let span = input_len + output_len;
    let mut windows = Vec::new();
    let mut start = 0;
    while start + span <= total {
        let frame = |i: usize| seq.flat_frame(i);
        let ext = extended.min(total - start - span);
        windows.push(UnitWindow {
            observed: (start..start + input_len).map(frame).collect(),
            target: (start + input_len..start + span).map(frame).collect(),
            extended_future: (start + span..start + span + ext).map(frame).collect(),
            action: seq.name.clone(),
            start,
        });
        start += stride;
    }
    Ok(windows)
}
