use super::{FeatureGrid, Result, SignalError};

/// Endpoint-aligned linear interpolation from `src_len` to `dst_len` frames.
///
/// Output row `i` samples the source at `i * (src_len - 1) / (dst_len - 1)`
/// (position 0 when `dst_len == 1`). The plan is a linear map on the time
/// axis, so [`InterpPlan::apply_transpose`] is its exact adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpPlan {
    src_len: usize,
    taps: Vec<(usize, usize, f64)>,
}

impl InterpPlan {
    pub fn new(src_len: usize, dst_len: usize) -> Result<Self> {
        if src_len == 0 {
            return Err(SignalError::InvalidGrid("cannot interpolate an empty grid".into()));
        }
        if dst_len == 0 {
            return Err(SignalError::InvalidLength(dst_len));
        }
        let taps = (0..dst_len)
            .map(|i| {
                if dst_len == 1 || src_len == 1 {
                    return (0, 0, 0.0);
                }
                if src_len == dst_len {
                    return (i, i, 0.0);
                }
                let pos = i as f64 * (src_len - 1) as f64 / (dst_len - 1) as f64;
                let lo = (pos.floor() as usize).min(src_len - 1);
                let hi = (lo + 1).min(src_len - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect();
        Ok(Self { src_len, taps })
    }

    pub fn src_len(&self) -> usize {
        self.src_len
    }

    pub fn dst_len(&self) -> usize {
        self.taps.len()
    }

    /// Interpolates `src` (`src_len x dim`, row-major) into a `dst_len x dim` buffer.
    pub fn apply(&self, src: &[f64], dim: usize) -> Vec<f64> {
        debug_assert_eq!(src.len(), self.src_len * dim);
        let mut out = Vec::with_capacity(self.taps.len() * dim);
        for &(lo, hi, frac) in &self.taps {
            let a = &src[lo * dim..(lo + 1) * dim];
            if frac == 0.0 {
                out.extend_from_slice(a);
            } else {
                let b = &src[hi * dim..(hi + 1) * dim];
                out.extend(a.iter().zip(b).map(|(&x, &y)| (1.0 - frac) * x + frac * y));
            }
        }
        out
    }

    /// Adjoint map: scatters a `dst_len x dim` gradient back onto `src_len x dim`.
    pub fn apply_transpose(&self, grad: &[f64], dim: usize) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.taps.len() * dim);
        let mut out = vec![0.0; self.src_len * dim];
        for (i, &(lo, hi, frac)) in self.taps.iter().enumerate() {
            let g = &grad[i * dim..(i + 1) * dim];
            for (j, &v) in g.iter().enumerate() {
                if frac == 0.0 {
                    out[lo * dim + j] += v;
                } else {
                    out[lo * dim + j] += (1.0 - frac) * v;
                    out[hi * dim + j] += frac * v;
                }
            }
        }
        out
    }

    pub fn apply_grid(&self, grid: &FeatureGrid) -> Result<FeatureGrid> {
        if grid.frames() != self.src_len {
            return Err(SignalError::LengthMismatch(grid.frames(), self.src_len));
        }
        FeatureGrid::new(self.apply(grid.data(), grid.dim()), self.dst_len(), grid.dim())
    }
}

/// `floor(frames / k)`, but at least one frame when the input is nonempty.
pub fn downsampled_len(frames: usize, k: usize) -> usize {
    if frames == 0 {
        0
    } else {
        (frames / k.max(1)).max(1)
    }
}

pub fn downsample_frames(grid: &FeatureGrid, k: usize) -> Result<FeatureGrid> {
    if k == 0 {
        return Err(SignalError::InvalidStride(k));
    }
    if grid.frames() == 0 {
        return Err(SignalError::InvalidGrid("cannot down-sample an empty grid".into()));
    }
    if k == 1 {
        return Ok(grid.clone());
    }
    InterpPlan::new(grid.frames(), downsampled_len(grid.frames(), k))?.apply_grid(grid)
}

pub fn upsample_frames(grid: &FeatureGrid, target: usize) -> Result<FeatureGrid> {
    if target == 0 {
        return Err(SignalError::InvalidLength(target));
    }
    if target == grid.frames() {
        return Ok(grid.clone());
    }
    InterpPlan::new(grid.frames(), target)?.apply_grid(grid)
}
