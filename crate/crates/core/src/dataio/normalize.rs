use super::MotionSequence;
use crate::error::{Error, Result};

const AXES: [char; 3] = ['x', 'y', 'z'];

/// Per-axis extrema of one action, in source units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl NormStats {
    pub fn of(seq: &MotionSequence) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for pose in &seq.frames {
            for p in pose {
                for a in 0..3 {
                    min[a] = min[a].min(p[a]);
                    max[a] = max[a].max(p[a]);
                }
            }
        }
        NormStats { min, max }
    }

    /// Stats that map `[-1, 1]` onto itself.
    pub fn identity() -> Self {
        NormStats {
            min: [-1.0; 3],
            max: [1.0; 3],
        }
    }

    pub fn midpoint(&self, axis: usize) -> f64 {
        (self.max[axis] + self.min[axis]) / 2.0
    }

    pub fn half_range(&self, axis: usize) -> f64 {
        (self.max[axis] - self.min[axis]).abs() / 2.0
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|a| self.max[a] == self.min[a])
    }

    pub fn check(&self) -> Result<()> {
        for a in 0..3 {
            if self.max[a] == self.min[a] {
                return Err(Error::DegenerateRange {
                    axis: AXES[a],
                    value: self.max[a],
                });
            }
            if self.max[a] < self.min[a] {
                return Err(Error::Data(format!("axis {} has max < min", AXES[a])));
            }
        }
        Ok(())
    }

    /// Source units to normalized units (no clamping).
    pub fn apply(&self, v: f64, axis: usize) -> f64 {
        (v - self.midpoint(axis)) / self.half_range(axis)
    }

    pub fn invert(&self, v: f64, axis: usize) -> f64 {
        v * self.half_range(axis) + self.midpoint(axis)
    }

    /// Applies [`NormStats::apply`] to a flat `x y z x y z ...` frame.
    pub fn apply_flat(&self, frame: &mut [f64]) {
        for (i, v) in frame.iter_mut().enumerate() {
            *v = self.apply(*v, i % 3);
        }
    }

    pub fn invert_flat(&self, frame: &mut [f64]) {
        for (i, v) in frame.iter_mut().enumerate() {
            *v = self.invert(*v, i % 3);
        }
    }
}

/// Centers each axis on the midpoint of its extrema and divides by the
/// half-range, over the whole action. The extrema land on exactly ±1.
pub fn normalize_action(seq: &MotionSequence) -> Result<(MotionSequence, NormStats)> {
    let stats = NormStats::of(seq);
    stats.check()?;
    let mut out = seq.clone();
    for pose in &mut out.frames {
        for p in pose.iter_mut() {
            for a in 0..3 {
                p[a] = if p[a] == stats.max[a] {
                    1.0
                } else if p[a] == stats.min[a] {
                    -1.0
                } else {
                    stats.apply(p[a], a).clamp(-1.0, 1.0)
                };
            }
        }
    }
    Ok((out, stats))
}

/// Normalizes with externally supplied statistics (e.g. those stored in a model).
pub fn normalize_with(seq: &MotionSequence, stats: &NormStats) -> Result<MotionSequence> {
    stats.check()?;
    let mut out = seq.clone();
    for pose in &mut out.frames {
        for p in pose.iter_mut() {
            for a in 0..3 {
                p[a] = stats.apply(p[a], a);
            }
        }
    }
    Ok(out)
}

pub fn denormalize(seq: &MotionSequence, stats: &NormStats) -> MotionSequence {
    let mut out = seq.clone();
    for pose in &mut out.frames {
        for p in pose.iter_mut() {
            for a in 0..3 {
                p[a] = stats.invert(p[a], a);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(points: &[[f64; 3]]) -> MotionSequence {
        MotionSequence::new("a".into(), 25.0, 1, points.iter().map(|p| vec![*p]).collect()).unwrap()
    }

    #[test]
    fn symmetric_unit_range_is_unchanged() {
        let s = seq(&[[-1.0, 1.0, 0.5], [1.0, -1.0, -1.0], [0.25, 0.0, 1.0]]);
        let (n, _) = normalize_action(&s).unwrap();
        assert_eq!(n, s);
    }

    #[test]
    fn two_point_axis() {
        let s = seq(&[[0.0, 0.0, 0.0], [2.0, 4.0, -6.0]]);
        let (n, stats) = normalize_action(&s).unwrap();
        assert_eq!(n.frames[0][0], [-1.0, -1.0, 1.0]);
        assert_eq!(n.frames[1][0], [1.0, 1.0, -1.0]);
        assert_eq!(stats.midpoint(0), 1.0);
        assert_eq!(stats.half_range(0), 1.0);
    }

    #[test]
    fn denormalize_known_values() {
        let ident = seq(&[[0.3, -0.2, 0.9]]);
        let st = NormStats {
            min: [-1.0; 3],
            max: [1.0; 3],
        };
        assert_eq!(denormalize(&ident, &st), ident);
        let st = NormStats {
            min: [0.0; 3],
            max: [2.0; 3],
        };
        let back = denormalize(&seq(&[[-1.0, 1.0, -1.0]]), &st);
        assert_eq!(back.frames[0][0], [0.0, 2.0, 0.0]);
    }

    #[test]
    fn degenerate_axis_is_an_error() {
        let s = seq(&[[0.0, 1.0, 3.0], [1.0, 1.0, 4.0]]);
        assert!(matches!(normalize_action(&s), Err(Error::DegenerateRange { axis: 'y', .. })));
    }
}
