//! Detector backends: a three-map feature pyramid for the training loss and
//! thresholded detections for evaluation.

mod toy;

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::cmp::Ordering;

pub use toy::{ToyBackend, ToyColor, DOMINANCE_THRESHOLD, MIN_COMPONENT_AREA};

use crate::{Error, Frame, Real, Result, Tensor};

pub const DEFAULT_STRIDES: [usize; 3] = [8, 16, 32];

/// Axis-aligned box in pixel coordinates, `min` inclusive and `max` exclusive
/// edges.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub const fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// True when both extents are strictly positive and finite.
    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.x_min.is_finite()
            && self.x_max.is_finite()
            && self.y_min.is_finite()
            && self.y_max.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detection {
    pub class_id: u32,
    pub bbox: BBox,
    pub confidence: f64,
}

impl Detection {
    pub fn new(class_id: u32, bbox: BBox, confidence: f64) -> Result<Self> {
        if !bbox.is_valid() {
            return Err(Error::Validation(format!("degenerate detection box {bbox:?}")));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::Validation(format!(
                "detection confidence {confidence} outside [0, 1]"
            )));
        }
        Ok(Self {
            class_id,
            bbox,
            confidence,
        })
    }
}

/// Output ordering: confidence descending, then `x_min`, `y_min`, class.
pub fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
        .then(a.class_id.cmp(&b.class_id))
        .then(a.bbox.x_max.total_cmp(&b.bbox.x_max))
        .then(a.bbox.y_max.total_cmp(&b.bbox.y_max))
}

/// Drops detections below `conf_threshold` and sorts the rest by
/// [`detection_order`].
pub fn finalize_detections(mut dets: Vec<Detection>, conf_threshold: f64) -> Vec<Detection> {
    dets.retain(|d| d.confidence >= conf_threshold);
    dets.sort_by(detection_order);
    dets
}

/// Three feature maps at strictly increasing strides.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid<T> {
    maps: [Tensor<T>; 3],
    strides: [usize; 3],
}

impl<T: Real> FeaturePyramid<T> {
    /// Checks the stride ordering and that map `k` is
    /// `ceil(H / s_k) x ceil(W / s_k)` for a `height x width` source.
    pub fn new(
        maps: [Tensor<T>; 3],
        strides: [usize; 3],
        height: usize,
        width: usize,
    ) -> Result<Self> {
        validate_strides(&strides)?;
        for (k, (m, &s)) in maps.iter().zip(&strides).enumerate() {
            let want = (height.div_ceil(s), width.div_ceil(s));
            if (m.height(), m.width()) != want {
                return Err(Error::Shape(format!(
                    "pyramid map {k} is {}x{}, stride {s} on {height}x{width} needs {}x{}",
                    m.height(),
                    m.width(),
                    want.0,
                    want.1
                )));
            }
        }
        Ok(Self { maps, strides })
    }

    pub fn maps(&self) -> &[Tensor<T>; 3] {
        &self.maps
    }

    pub fn strides(&self) -> [usize; 3] {
        self.strides
    }

    pub(crate) fn maps_mut(&mut self) -> &mut [Tensor<T>; 3] {
        &mut self.maps
    }

    pub fn same_geometry(&self, other: &Self) -> bool {
        self.strides == other.strides
            && self.maps.iter().zip(&other.maps).all(|(a, b)| a.same_shape(b))
    }
}

pub(crate) fn validate_strides(strides: &[usize; 3]) -> Result<()> {
    if strides[0] == 0 || !(strides[0] < strides[1] && strides[1] < strides[2]) {
        return Err(Error::Config {
            field: "strides",
            reason: format!("must be positive and strictly increasing, got {strides:?}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Capabilities {
    pub features: bool,
    pub detection: bool,
    pub differentiable: bool,
}

/// A detector that can supply backbone features, detections, or both.
///
/// Implementations must be deterministic for fixed inputs and are shared
/// read-only across threads.
pub trait DetectorBackend<T: Real>: Send + Sync {
    fn name(&self) -> &str;

    fn capabilities(&self) -> Capabilities;

    fn extract_features(&self, frame: &Frame<T>) -> Result<FeaturePyramid<T>> {
        let _ = frame;
        Err(self.unsupported("feature extraction"))
    }

    /// Vector-Jacobian product of [`extract_features`] at `frame`: maps a
    /// gradient on the pyramid to a gradient on the frame.
    ///
    /// [`extract_features`]: DetectorBackend::extract_features
    fn features_vjp(&self, frame: &Frame<T>, grad: &FeaturePyramid<T>) -> Result<Tensor<T>> {
        let _ = (frame, grad);
        Err(self.unsupported("feature gradients"))
    }

    /// Detections with confidence at least `conf_threshold`, ordered by
    /// [`detection_order`].
    fn detect(&self, frame: &Frame<T>, conf_threshold: f64) -> Result<Vec<Detection>> {
        let _ = (frame, conf_threshold);
        Err(self.unsupported("detection"))
    }

    #[doc(hidden)]
    fn unsupported(&self, capability: &'static str) -> Error {
        Error::Capability {
            backend: self.name().to_string(),
            capability,
        }
    }
}

pub(crate) fn check_threshold(conf_threshold: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::Usage(format!(
            "confidence threshold {conf_threshold} outside [0, 1]"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    struct Nothing;

    impl DetectorBackend<f32> for Nothing {
        fn name(&self) -> &str {
            "nothing"
        }
        fn capabilities(&self) -> Capabilities {
            Capabilities::default()
        }
    }

    #[test]
    fn missing_capabilities_are_reported() {
        let frame = Frame::filled(3, 4, 4, 0.5f32).unwrap();
        assert!(matches!(
            Nothing.extract_features(&frame),
            Err(Error::Capability { capability: "feature extraction", .. })
        ));
        assert!(matches!(
            Nothing.detect(&frame, 0.25),
            Err(Error::Capability { capability: "detection", .. })
        ));
    }

    #[test]
    fn pyramid_geometry_is_checked() {
        let maps = [
            Tensor::<f32>::zeros(4, 8, 8),
            Tensor::zeros(4, 4, 4),
            Tensor::zeros(4, 2, 2),
        ];
        assert!(FeaturePyramid::new(maps.clone(), [8, 16, 32], 64, 64).is_ok());
        assert!(FeaturePyramid::new(maps.clone(), [8, 16, 32], 65, 64).is_err());
        assert!(FeaturePyramid::new(maps, [8, 8, 32], 64, 64).is_err());
    }

    #[test]
    fn finalize_sorts_and_thresholds() {
        let d = |c, x, conf| Detection::new(c, BBox::new(x, 0.0, x + 1.0, 1.0), conf).unwrap();
        let out = finalize_detections(
            vec![d(0, 5.0, 0.5), d(1, 1.0, 0.9), d(0, 2.0, 0.5), d(2, 0.0, 0.1)],
            0.25,
        );
        let xs: Vec<f64> = out.iter().map(|d| d.bbox.x_min).collect();
        assert_eq!(xs, vec![1.0, 2.0, 5.0]);
    }

    #[test]
    fn detection_validation() {
        assert!(Detection::new(0, BBox::new(1.0, 0.0, 1.0, 2.0), 0.5).is_err());
        assert!(Detection::new(0, BBox::new(0.0, 0.0, 1.0, 2.0), 1.5).is_err());
    }
}
