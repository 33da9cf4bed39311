//! Deterministic stand-in for a real detector.
//!
//! Features: per-pixel stack `[value, d/dx, d/dy, 3x3 mean]` (central
//! differences and box mean with edge replication), average-pooled at the
//! three strides. In [`ToyColor::Luma`] mode the stack is built from BT.709
//! luminance (4 channels); in [`ToyColor::Rgb`] mode from each colour plane
//! (12 channels). Both are linear in the input.
//!
//! Detections: one class per colour channel; a pixel belongs to class `c` when
//! `v_c - max(other channels) >= DOMINANCE_THRESHOLD`. 8-connected components
//! of at least `MIN_COMPONENT_AREA` pixels become boxes whose confidence is the
//! mean chroma (`max - min`) of the component.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{
    check_threshold, finalize_detections, validate_strides, BBox, Capabilities, Detection,
    DetectorBackend, FeaturePyramid, DEFAULT_STRIDES,
};
use crate::{Error, Frame, Real, Result, Tensor};

pub const DOMINANCE_THRESHOLD: f64 = 0.6;
pub const MIN_COMPONENT_AREA: usize = 9;

const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum ToyColor {
    #[default]
    Luma,
    Rgb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackend {
    strides: [usize; 3],
    color: ToyColor,
}

impl Default for ToyBackend {
    fn default() -> Self {
        Self {
            strides: DEFAULT_STRIDES,
            color: ToyColor::Luma,
        }
    }
}

/// Per-component statistics feeding [`ToyBackend::confidence`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ComponentStats {
    pub pixel_count: usize,
    pub saturation_sum: f64,
}

impl ToyBackend {
    pub fn new(strides: [usize; 3], color: ToyColor) -> Result<Self> {
        validate_strides(&strides)?;
        Ok(Self { strides, color })
    }

    pub fn with_color(color: ToyColor) -> Self {
        Self {
            color,
            ..Self::default()
        }
    }

    pub fn strides(&self) -> [usize; 3] {
        self.strides
    }

    pub fn color(&self) -> ToyColor {
        self.color
    }

    /// Confidence of a component: its mean saturation, clipped to `[0, 1]`.
    pub fn confidence(stats: &ComponentStats) -> f64 {
        if stats.pixel_count == 0 {
            return 0.0;
        }
        (stats.saturation_sum / stats.pixel_count as f64).clamp(0.0, 1.0)
    }

    fn source_planes<T: Real>(&self, input: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        if input.channels() != 3 {
            return Err(Error::Shape(format!(
                "toy backbone needs 3 channels, got {}",
                input.channels()
            )));
        }
        Ok(match self.color {
            ToyColor::Luma => {
                let (r, g, b) = (input.plane(0), input.plane(1), input.plane(2));
                let k = LUMA.map(T::lit);
                vec![r
                    .iter()
                    .zip(g)
                    .zip(b)
                    .map(|((&r, &g), &b)| k[0] * r + k[1] * g + k[2] * b)
                    .collect()]
            }
            ToyColor::Rgb => (0..3).map(|c| input.plane(c).to_vec()).collect(),
        })
    }

    /// Full-resolution feature stack before pooling. Accepts any real-valued
    /// 3-channel tensor so linearity can be checked outside `[0, 1]`.
    pub fn feature_stack<T: Real>(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = (input.height(), input.width());
        let half = T::lit(0.5);
        let ninth = T::lit(1.0 / 9.0);
        let planes = self.source_planes(input)?;
        let mut out = Vec::with_capacity(planes.len() * 4 * h * w);
        for p in &planes {
            let at = |y: usize, x: usize| p[y * w + x];
            out.extend_from_slice(p);
            for y in 0..h {
                for x in 0..w {
                    out.push((at(y, (x + 1).min(w - 1)) - at(y, x.saturating_sub(1))) * half);
                }
            }
            for y in 0..h {
                for x in 0..w {
                    out.push((at((y + 1).min(h - 1), x) - at(y.saturating_sub(1), x)) * half);
                }
            }
            for y in 0..h {
                for x in 0..w {
                    let mut s = T::zero();
                    for yy in [y.saturating_sub(1), y, (y + 1).min(h - 1)] {
                        for xx in [x.saturating_sub(1), x, (x + 1).min(w - 1)] {
                            s = s + at(yy, xx);
                        }
                    }
                    out.push(s * ninth);
                }
            }
        }
        Tensor::from_vec(planes.len() * 4, h, w, out)
    }

    /// Pyramid of an arbitrary 3-channel tensor (see [`feature_stack`]).
    ///
    /// [`feature_stack`]: ToyBackend::feature_stack
    pub fn pyramid_of<T: Real>(&self, input: &Tensor<T>) -> Result<FeaturePyramid<T>> {
        let stack = self.feature_stack(input)?;
        let maps = self.strides.map(|s| avg_pool(&stack, s));
        FeaturePyramid::new(maps, self.strides, input.height(), input.width())
    }

    fn pyramid_vjp<T: Real>(&self, input: &Tensor<T>, grad: &FeaturePyramid<T>) -> Result<Tensor<T>> {
        let (h, w) = (input.height(), input.width());
        let n_planes = match self.color {
            ToyColor::Luma => 1,
            ToyColor::Rgb => 3,
        };
        if grad.strides() != self.strides
            || grad.maps().iter().any(|m| m.channels() != n_planes * 4)
        {
            return Err(Error::Shape(format!(
                "pyramid gradient does not match backend geometry {:?}",
                self.strides
            )));
        }
        let mut dstack = Tensor::<T>::zeros(n_planes * 4, h, w);
        for (map, &s) in grad.maps().iter().zip(&self.strides) {
            avg_pool_vjp(map, s, &mut dstack);
        }
        let half = T::lit(0.5);
        let ninth = T::lit(1.0 / 9.0);
        let mut dplanes = vec![vec![T::zero(); h * w]; n_planes];
        for (p, dp) in dplanes.iter_mut().enumerate() {
            let dv = dstack.plane(p * 4);
            let dgx = dstack.plane(p * 4 + 1);
            let dgy = dstack.plane(p * 4 + 2);
            let dmean = dstack.plane(p * 4 + 3);
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    dp[i] = dp[i] + dv[i];
                    let g = dgx[i] * half;
                    let (r, l) = (y * w + (x + 1).min(w - 1), y * w + x.saturating_sub(1));
                    dp[r] = dp[r] + g;
                    dp[l] = dp[l] - g;
                    let g = dgy[i] * half;
                    let (d, u) = ((y + 1).min(h - 1) * w + x, y.saturating_sub(1) * w + x);
                    dp[d] = dp[d] + g;
                    dp[u] = dp[u] - g;
                    let g = dmean[i] * ninth;
                    for yy in [y.saturating_sub(1), y, (y + 1).min(h - 1)] {
                        for xx in [x.saturating_sub(1), x, (x + 1).min(w - 1)] {
                            dp[yy * w + xx] = dp[yy * w + xx] + g;
                        }
                    }
                }
            }
        }
        let mut out = Tensor::<T>::zeros(3, h, w);
        match self.color {
            ToyColor::Luma => {
                for c in 0..3 {
                    let k = T::lit(LUMA[c]);
                    for (o, &d) in out.plane_mut(c).iter_mut().zip(&dplanes[0]) {
                        *o = k * d;
                    }
                }
            }
            ToyColor::Rgb => {
                for (c, dp) in dplanes.iter().enumerate() {
                    out.plane_mut(c).copy_from_slice(dp);
                }
            }
        }
        Ok(out)
    }

    fn components<T: Real>(&self, frame: &Frame<T>) -> Vec<Detection> {
        let (h, w) = (frame.height(), frame.width());
        let px = |c: usize, i: usize| frame.plane(c)[i].to_f64_lossy();
        let mut dets = Vec::new();
        let mut seen = vec![false; h * w];
        let mut stack = Vec::new();
        for class in 0..3usize {
            let others = [(class + 1) % 3, (class + 2) % 3];
            let mask: Vec<bool> = (0..h * w)
                .map(|i| px(class, i) - px(others[0], i).max(px(others[1], i)) >= DOMINANCE_THRESHOLD)
                .collect();
            seen.fill(false);
            for start in 0..h * w {
                if !mask[start] || seen[start] {
                    continue;
                }
                seen[start] = true;
                stack.push(start);
                let mut stats = ComponentStats::default();
                let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
                while let Some(i) = stack.pop() {
                    let (y, x) = (i / w, i % w);
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x);
                    y1 = y1.max(y);
                    let (r, g, b) = (px(0, i), px(1, i), px(2, i));
                    stats.pixel_count += 1;
                    stats.saturation_sum += r.max(g).max(b) - r.min(g).min(b);
                    for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                        for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                            let j = ny * w + nx;
                            if mask[j] && !seen[j] {
                                seen[j] = true;
                                stack.push(j);
                            }
                        }
                    }
                }
                if stats.pixel_count < MIN_COMPONENT_AREA {
                    continue;
                }
                let bbox = BBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64);
                dets.push(Detection {
                    class_id: class as u32,
                    bbox,
                    confidence: Self::confidence(&stats),
                });
            }
        }
        dets
    }
}

/// Average pooling with `ceil` output size; border windows average only the
/// pixels they cover.
fn avg_pool<T: Real>(input: &Tensor<T>, stride: usize) -> Tensor<T> {
    let (c, h, w) = input.shape();
    let (oh, ow) = (h.div_ceil(stride), w.div_ceil(stride));
    let mut out = Tensor::zeros(c, oh, ow);
    for ch in 0..c {
        let plane = input.plane(ch);
        for oy in 0..oh {
            let (ya, yb) = (oy * stride, ((oy + 1) * stride).min(h));
            for ox in 0..ow {
                let (xa, xb) = (ox * stride, ((ox + 1) * stride).min(w));
                let mut s = T::zero();
                for y in ya..yb {
                    s = s + plane[y * w + xa..y * w + xb].iter().copied().sum::<T>();
                }
                let n = T::lit(((yb - ya) * (xb - xa)) as f64);
                out.set(ch, oy, ox, s / n);
            }
        }
    }
    out
}

fn avg_pool_vjp<T: Real>(grad: &Tensor<T>, stride: usize, acc: &mut Tensor<T>) {
    let (c, h, w) = acc.shape();
    for ch in 0..c {
        for oy in 0..grad.height() {
            let (ya, yb) = (oy * stride, ((oy + 1) * stride).min(h));
            for ox in 0..grad.width() {
                let (xa, xb) = (ox * stride, ((ox + 1) * stride).min(w));
                let g = grad.get(ch, oy, ox) / T::lit(((yb - ya) * (xb - xa)) as f64);
                let plane = acc.plane_mut(ch);
                for y in ya..yb {
                    for v in &mut plane[y * w + xa..y * w + xb] {
                        *v = *v + g;
                    }
                }
            }
        }
    }
}

impl<T: Real> DetectorBackend<T> for ToyBackend {
    fn name(&self) -> &str {
        match self.color {
            ToyColor::Luma => "toy",
            ToyColor::Rgb => "toy:rgb",
        }
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            features: true,
            detection: true,
            differentiable: true,
        }
    }

    fn extract_features(&self, frame: &Frame<T>) -> Result<FeaturePyramid<T>> {
        self.pyramid_of(frame.tensor())
    }

    fn features_vjp(&self, frame: &Frame<T>, grad: &FeaturePyramid<T>) -> Result<Tensor<T>> {
        self.pyramid_vjp(frame.tensor(), grad)
    }

    fn detect(&self, frame: &Frame<T>, conf_threshold: f64) -> Result<Vec<Detection>> {
        check_threshold(conf_threshold)?;
        if frame.channels() != 3 {
            return Err(Error::Shape(format!(
                "toy detector needs 3 channels, got {}",
                frame.channels()
            )));
        }
        Ok(finalize_detections(self.components(frame), conf_threshold))
    }
}
