//! Spatial layers: im2col convolution, 2×2 pooling, bilinear resize.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::conv_macs;
use crate::tensor::{Distribution, FeatureMap, Matrix, SeededRng};

/// `k×k` convolution evaluated as one matrix product over im2col patches.
///
/// The weight is `(C_in·k²)×C_out`; patch columns are ordered
/// `(channel, ky, kx)`. Zero padding, no bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Matrix,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    /// Weights from `U(−b, b)` with `b = 1/√(C_in·k²)`.
    pub fn seeded(c_in: usize, c_out: usize, kernel: usize, stride: usize, rng: &mut SeededRng) -> Self {
        let fan_in = c_in * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: rng.matrix(fan_in, c_out, Distribution::symmetric(bound)),
            c_in,
            c_out,
            kernel,
            stride,
            padding: kernel / 2,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let out = |x: usize| (x + 2 * self.padding - self.kernel) / self.stride + 1;
        (out(h), out(w))
    }

    pub fn macs(&self, h_in: usize, w_in: usize) -> u64 {
        let (ho, wo) = self.output_size(h_in, w_in);
        conv_macs(self.c_in, self.c_out, self.kernel, ho, wo)
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        if x.channels() != self.c_in {
            return Err(Error::shape(
                "Conv2d",
                format!("{} input channels", self.c_in),
                format!("{} input channels", x.channels()),
            ));
        }
        let (h, w) = (x.height(), x.width());
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::shape("Conv2d", format!("input at least {0}x{0}", self.kernel), format!("{h}x{w}")));
        }
        let (ho, wo) = self.output_size(h, w);
        let k = self.kernel;
        let patch = self.c_in * k * k;
        let mut cols = Vec::with_capacity(ho * wo * patch);
        for oy in 0..ho {
            for ox in 0..wo {
                for c in 0..self.c_in {
                    let plane = x.channel(c);
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                            cols.push(if inside { plane[iy as usize * w + ix as usize] } else { 0.0 });
                        }
                    }
                }
            }
        }
        let cols = Matrix::from_vec(ho * wo, patch, cols)?;
        FeatureMap::unflatten(&cols.matmul(&self.weight)?, ho, wo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Max,
    Avg,
}

/// 2×2 pooling with stride 2. Requires even height and width.
pub fn pool2x2(x: &FeatureMap, kind: PoolKind) -> Result<FeatureMap> {
    let (c, h, w) = x.dims();
    if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
        return Err(Error::shape("pool2x2", "even height and width", format!("{h}x{w}")));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let vals = [
                    x.get(ch, 2 * y, 2 * xx),
                    x.get(ch, 2 * y, 2 * xx + 1),
                    x.get(ch, 2 * y + 1, 2 * xx),
                    x.get(ch, 2 * y + 1, 2 * xx + 1),
                ];
                out.push(match kind {
                    PoolKind::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    PoolKind::Avg => vals.iter().sum::<f64>() / 4.0,
                });
            }
        }
    }
    FeatureMap::new(c, ho, wo, out)
}

/// Bilinear resize with half-pixel centers (`align_corners = false`).
///
/// Output pixel `y` samples source coordinate `(y + ½)·H_in/H_out − ½`,
/// clamped below at 0; the upper neighbour is clamped to the last row.
/// Columns are handled the same way.
pub fn resize_bilinear(x: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::shape("resize_bilinear", "positive output size", format!("{out_h}x{out_w}")));
    }
    let (c, h, w) = x.dims();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let (ty, tx) = (taps(out_h, h), taps(out_w, w));
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        for &(y0, y1, ly) in &ty {
            for &(x0, x1, lx) in &tx {
                let top = x.get(ch, y0, x0) * (1.0 - lx) + x.get(ch, y0, x1) * lx;
                let bottom = x.get(ch, y1, x0) * (1.0 - lx) + x.get(ch, y1, x1) * lx;
                out.push(top * (1.0 - ly) + bottom * ly);
            }
        }
    }
    FeatureMap::new(c, out_h, out_w, out)
}

/// Repeated ×2 bilinear steps until `(h, w)` is reached. The target must be
/// a power-of-two multiple of the input size.
pub fn upsample_pow2(x: &FeatureMap, h: usize, w: usize) -> Result<FeatureMap> {
    let mut cur = x.clone();
    while (cur.height(), cur.width()) != (h, w) {
        if cur.height() * 2 > h || cur.width() * 2 > w {
            return Err(Error::shape(
                "upsample_pow2",
                format!("power-of-two multiple of {}x{}", x.height(), x.width()),
                format!("{h}x{w}"),
            ));
        }
        cur = resize_bilinear(&cur, cur.height() * 2, cur.width() * 2)?;
    }
    Ok(cur)
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    x.map(|v| v.max(0.0))
}
