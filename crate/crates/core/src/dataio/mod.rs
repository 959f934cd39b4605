//! Motion sequences, the MTF text format, per-action normalization, window
//! extraction, and the synthetic generator.

pub mod mtf;
pub mod normalize;
pub mod synth;
pub mod windows;

use std::fs;
use std::path::{Path, PathBuf};

pub use mtf::{parse_mtf, parse_mtf_str, to_mtf_string, write_mtf};
pub use normalize::{denormalize, normalize_action, normalize_with, NormStats};
pub use synth::{synth_dataset, synth_generate, SynthSpec};
pub use windows::{make_windows, UnitWindow};

use crate::error::{Error, Result};

/// A named action: `frames × joints × (x, y, z)` at a fixed frame rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    pub name: String,
    pub fps: f64,
    pub joints: usize,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl MotionSequence {
    pub fn new(name: String, fps: f64, joints: usize, frames: Vec<Vec<[f64; 3]>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Data(format!("sequence `{name}` has no frames")));
        }
        if joints == 0 || !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Data(format!("sequence `{name}` needs positive joints and fps")));
        }
        for (i, pose) in frames.iter().enumerate() {
            if pose.len() != joints {
                return Err(Error::Data(format!("frame {i} of `{name}` has {} joints, expected {joints}", pose.len())));
            }
            if pose.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("frame {i} of `{name}` has a non-finite coordinate")));
            }
        }
        Ok(MotionSequence {
            name,
            fps,
            joints,
            frames,
        })
    }

    /// Builds a sequence from flat `J·3` rows.
    pub fn from_flat(name: String, fps: f64, joints: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let frames = rows
            .iter()
            .map(|r| {
                if r.len() != joints * 3 {
                    return Err(Error::Data(format!("flat frame has {} values, expected {}", r.len(), joints * 3)));
                }
                Ok(r.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        MotionSequence::new(name, fps, joints, frames)
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn flat_frame(&self, i: usize) -> Vec<f64> {
        self.frames[i].iter().flatten().copied().collect()
    }
}

/// Reads every `*.mtf` file in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<MotionSequence>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "mtf"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no .mtf files in {}", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let file = fs::File::open(p)?;
            parse_mtf(std::io::BufReader::new(file)).map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", p.display()),
                },
                other => other,
            })
        })
        .collect()
}
