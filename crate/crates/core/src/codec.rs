//! BT.709 limited-range 4:2:0 conversion, the mock quantizing codec and
//! bitrate arithmetic.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Frame, Real, Result, Tensor};

const KR: f64 = 0.2126;
const KB: f64 = 0.0722;
const KG: f64 = 1.0 - KR - KB;
const CB_SCALE: f64 = 2.0 * (1.0 - KB); // 1.8556
const CR_SCALE: f64 = 2.0 * (1.0 - KR); // 1.5748

/// Quantizer lossless at this QP and below.
pub const LOSSLESS_QP: u8 = 4;
pub const MAX_QP: u8 = 63;

/// Planar 8-bit 4:2:0 picture. Chroma planes are `(w/2) x (h/2)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Yuv420Frame {
    width: usize,
    height: usize,
    y: Vec<u8>,
    u: Vec<u8>,
    v: Vec<u8>,
}

impl Yuv420Frame {
    pub fn new(width: usize, height: usize, y: Vec<u8>, u: Vec<u8>, v: Vec<u8>) -> Result<Self> {
        check_even(width, height)?;
        let c = (width / 2) * (height / 2);
        if y.len() != width * height || u.len() != c || v.len() != c {
            return Err(Error::Format(format!(
                "plane sizes {}/{}/{} do not fit {width}x{height} 4:2:0",
                y.len(),
                u.len(),
                v.len()
            )));
        }
        Ok(Self {
            width,
            height,
            y,
            u,
            v,
        })
    }

    /// Parses the concatenated `Y U V` planes of one frame.
    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        check_even(width, height)?;
        let luma = width * height;
        let chroma = luma / 4;
        if bytes.len() != luma + 2 * chroma {
            return Err(Error::Format(format!(
                "{} bytes is not one {width}x{height} 4:2:0 frame",
                bytes.len()
            )));
        }
        Self::new(
            width,
            height,
            bytes[..luma].to_vec(),
            bytes[luma..luma + chroma].to_vec(),
            bytes[luma + chroma..].to_vec(),
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn u(&self) -> &[u8] {
        &self.u
    }

    pub fn v(&self) -> &[u8] {
        &self.v
    }

    pub fn planes(&self) -> [&[u8]; 3] {
        [&self.y, &self.u, &self.v]
    }

    /// Size in bytes of one frame of these dimensions.
    pub fn frame_len(width: usize, height: usize) -> usize {
        width * height * 3 / 2
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::frame_len(self.width, self.height));
        out.extend_from_slice(&self.y);
        out.extend_from_slice(&self.u);
        out.extend_from_slice(&self.v);
        out
    }

    fn map_planes(&self, mut f: impl FnMut(u8) -> u8) -> Self {
        Self {
            width: self.width,
            height: self.height,
            y: self.y.iter().map(|&p| f(p)).collect(),
            u: self.u.iter().map(|&p| f(p)).collect(),
            v: self.v.iter().map(|&p| f(p)).collect(),
        }
    }
}

fn check_even(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "4:2:0 needs positive even dimensions, got {width}x{height}"
        )));
    }
    Ok(())
}

#[inline]
fn to_u8(v: f64) -> u8 {
    libm::round(v).clamp(0.0, 255.0) as u8
}

/// RGB in `[0, 1]` to BT.709 limited-range 4:2:0; chroma is the 2x2 box
/// average of the full-resolution chroma values.
pub fn rgb_to_yuv420<T: Real>(frame: &Frame<T>) -> Result<Yuv420Frame> {
    if frame.channels() != 3 {
        return Err(Error::Shape(format!(
            "colour conversion needs 3 channels, got {}",
            frame.channels()
        )));
    }
    let (h, w) = (frame.height(), frame.width());
    check_even(w, h)?;
    let (r, g, b) = (frame.plane(0), frame.plane(1), frame.plane(2));
    let mut y = Vec::with_capacity(w * h);
    let mut pb = vec![0.0f64; w * h];
    let mut pr = vec![0.0f64; w * h];
    for i in 0..w * h {
        let (rv, gv, bv) = (r[i].to_f64_lossy(), g[i].to_f64_lossy(), b[i].to_f64_lossy());
        let luma = KR * rv + KG * gv + KB * bv;
        y.push(to_u8(16.0 + 219.0 * luma));
        pb[i] = (bv - luma) / CB_SCALE;
        pr[i] = (rv - luma) / CR_SCALE;
    }
    let (cw, ch) = (w / 2, h / 2);
    let mut u = Vec::with_capacity(cw * ch);
    let mut v = Vec::with_capacity(cw * ch);
    for cy in 0..ch {
        for cx in 0..cw {
            let idx = [
                2 * cy * w + 2 * cx,
                2 * cy * w + 2 * cx + 1,
                (2 * cy + 1) * w + 2 * cx,
                (2 * cy + 1) * w + 2 * cx + 1,
            ];
            let mb = idx.iter().map(|&i| pb[i]).sum::<f64>() / 4.0;
            let mr = idx.iter().map(|&i| pr[i]).sum::<f64>() / 4.0;
            u.push(to_u8(128.0 + 224.0 * mb));
            v.push(to_u8(128.0 + 224.0 * mr));
        }
    }
    Yuv420Frame::new(w, h, y, u, v)
}

/// Inverse BT.709 limited-range transform with nearest-neighbour chroma
/// upsampling; output is clipped to `[0, 1]`.
pub fn yuv420_to_rgb<T: Real>(yuv: &Yuv420Frame) -> Result<Frame<T>> {
    let (w, h) = (yuv.width, yuv.height);
    let mut t = Tensor::<T>::zeros(3, h, w);
    for yy in 0..h {
        for xx in 0..w {
            let c = (yy / 2) * (w / 2) + xx / 2;
            let luma = (yuv.y[yy * w + xx] as f64 - 16.0) / 219.0;
            let pb = (yuv.u[c] as f64 - 128.0) / 224.0;
            let pr = (yuv.v[c] as f64 - 128.0) / 224.0;
            let r = luma + CR_SCALE * pr;
            let b = luma + CB_SCALE * pb;
            let g = (luma - KR * r - KB * b) / KG;
            for (ch, val) in [r, g, b].into_iter().enumerate() {
                t.set(ch, yy, xx, T::lit(val.clamp(0.0, 1.0)));
            }
        }
    }
    Ok(Frame::clamped(t))
}

fn check_qp(qp: u8) -> Result<()> {
    if qp > MAX_QP {
        return Err(Error::Usage(format!("qp {qp} outside [0, {MAX_QP}]")));
    }
    Ok(())
}

/// Quantizer step on the 0-255 scale: doubles every 6 QP, never below 1.
pub fn quant_step(qp: u8) -> Result<u32> {
    check_qp(qp)?;
    let step = libm::round(libm::pow(2.0, (qp as f64 - 4.0) / 6.0));
    Ok(step.max(1.0) as u32)
}

/// `step * round(p / step)` clipped to 255; ties round up.
#[inline]
pub fn quantize_sample(p: u8, step: u32) -> u8 {
    let level = (p as u32 + step / 2) / step;
    (level * step).min(255) as u8
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCodecOutput {
    pub decoded: Vec<Yuv420Frame>,
    /// Lossless coding of the quantization levels; its length is the
    /// reported size.
    pub bitstream: Vec<u8>,
}

impl MockCodecOutput {
    pub fn size_bytes(&self) -> usize {
        self.bitstream.len()
    }
}

const BITSTREAM_MAGIC: &[u8; 4] = b"VCMQ";

/// Deterministic stand-in for a real encoder/decoder pair.
///
/// Every plane sample is quantized with [`quant_step`]. The bitstream holds a
/// small header followed by the deflate-compressed left-neighbour residuals of
/// the quantization levels, so coarser steps code to fewer bytes.
pub fn mock_codec(frames: &[Yuv420Frame], qp: u8) -> Result<MockCodecOutput> {
    let step = quant_step(qp)?;
    if let Some(first) = frames.first() {
        if let Some(bad) = frames
            .iter()
            .position(|f| (f.width, f.height) != (first.width, first.height))
        {
            return Err(Error::Format(format!(
                "frame {bad} size differs from frame 0 in mock codec input"
            )));
        }
    }
    let decoded: Vec<Yuv420Frame> = frames
        .iter()
        .map(|f| f.map_planes(|p| quantize_sample(p, step)))
        .collect();

    let mut residuals = Vec::new();
    for f in frames {
        for (plane, pw) in f.planes().into_iter().zip([f.width, f.width / 2, f.width / 2]) {
            for row in plane.chunks(pw) {
                let mut prev = 0u8;
                for &p in row {
                    let level = ((p as u32 + step / 2) / step) as u8;
                    residuals.push(level.wrapping_sub(prev));
                    prev = level;
                }
            }
        }
    }
    let mut bitstream = Vec::with_capacity(16);
    bitstream.extend_from_slice(BITSTREAM_MAGIC);
    bitstream.push(qp);
    let (w, h) = frames.first().map_or((0, 0), |f| (f.width, f.height));
    bitstream.extend_from_slice(&(w as u16).to_le_bytes());
    bitstream.extend_from_slice(&(h as u16).to_le_bytes());
    bitstream.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    bitstream.extend_from_slice(&miniz_oxide::deflate::compress_to_vec(&residuals, 9));
    Ok(MockCodecOutput { decoded, bitstream })
}

/// `size * 8 / (frames / fps) / 1000`.
pub fn measure_bitrate(size_bytes: u64, frame_count: usize, fps: f64) -> Result<f64> {
    if frame_count == 0 {
        return Err(Error::Usage(String::from("bitrate needs at least one frame")));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::Usage(format!("fps must be positive, got {fps}")));
    }
    let seconds = frame_count as f64 / fps;
    Ok(size_bytes as f64 * 8.0 / seconds / 1000.0)
}

/// Mean squared error between two pictures over all three planes, 0-255 scale.
pub fn plane_mse(a: &Yuv420Frame, b: &Yuv420Frame) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pa, pb) in a.planes().into_iter().zip(b.planes()) {
        for (&x, &y) in pa.iter().zip(pb) {
            let d = x as f64 - y as f64;
            sum += d * d;
        }
        n += pa.len();
    }
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(rgb: [f64; 3]) -> Frame<f64> {
        Frame::from_fn(3, 4, 6, |c, _, _| rgb[c]).unwrap()
    }

    #[test]
    fn white_black_gray_conversion() {
        let white = rgb_to_yuv420(&solid([1.0; 3])).unwrap();
        assert!(white.y().iter().all(|&v| v == 235));
        assert!(white.u().iter().chain(white.v()).all(|&v| v == 128));
        let black = rgb_to_yuv420(&solid([0.0; 3])).unwrap();
        assert!(black.y().iter().all(|&v| v == 16));
        assert!(black.u().iter().chain(black.v()).all(|&v| v == 128));
        let gray = rgb_to_yuv420(&solid([0.5; 3])).unwrap();
        assert!(gray.u().iter().chain(gray.v()).all(|&v| v == 128));
    }

    #[test]
    fn inverse_of_reference_levels() {
        let white = Yuv420Frame::new(2, 2, vec![235; 4], vec![128], vec![128]).unwrap();
        let rgb: Frame<f64> = yuv420_to_rgb(&white).unwrap();
        assert!(rgb.as_slice().iter().all(|&v| (v - 1.0).abs() <= 1.0 / 255.0));
        let black = Yuv420Frame::new(2, 2, vec![16; 4], vec![128], vec![128]).unwrap();
        let rgb: Frame<f64> = yuv420_to_rgb(&black).unwrap();
        assert!(rgb.as_slice().iter().all(|&v| v.abs() <= 1.0 / 255.0));
    }

    #[test]
    fn odd_dimensions_are_rejected() {
        let f = Frame::filled(3, 3, 4, 0.5f32).unwrap();
        assert!(matches!(rgb_to_yuv420(&f), Err(Error::Dimension(_))));
        assert!(matches!(Yuv420Frame::new(4, 2, vec![0; 8], vec![0; 2], vec![0; 1]), Err(Error::Format(_))));
        assert!(Yuv420Frame::from_bytes(4, 2, &[0; 11]).is_err());
    }

    #[test]
    fn quantizer_examples() {
        assert_eq!(quant_step(4).unwrap(), 1);
        assert_eq!(quant_step(0).unwrap(), 1);
        assert_eq!(quant_step(10).unwrap(), 2);
        assert_eq!(quant_step(40).unwrap(), 64);
        assert_eq!(quant_step(46).unwrap(), 128);
        assert!(quant_step(64).is_err());
        assert_eq!(quantize_sample(101, 2), 102);
        assert_eq!(quantize_sample(100, 2), 100);
        assert_eq!(quantize_sample(250, 64), 255);
        for p in 0..=255u8 {
            assert_eq!(quantize_sample(p, 1), p);
        }
    }

    fn picture(seed: u64) -> Yuv420Frame {
        let mut s = seed;
        let mut bytes = vec![0u8; Yuv420Frame::frame_len(16, 8)];
        for b in bytes.iter_mut() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *b = (s >> 56) as u8;
        }
        Yuv420Frame::from_bytes(16, 8, &bytes).unwrap()
    }

    #[test]
    fn lossless_at_qp4() {
        let frames = vec![picture(1), picture(2)];
        let out = mock_codec(&frames, 4).unwrap();
        assert_eq!(out.decoded, frames);
        assert_eq!(out.size_bytes(), out.bitstream.len());
    }

    #[test]
    fn bitrate_examples() {
        assert_eq!(measure_bitrate(1_000_000, 150, 30.0).unwrap(), 1600.0);
        assert_eq!(measure_bitrate(0, 150, 30.0).unwrap(), 0.0);
        assert_eq!(measure_bitrate(2_000_000, 150, 30.0).unwrap(), 3200.0);
        assert!(measure_bitrate(10, 150, 0.0).is_err());
        assert!(measure_bitrate(10, 0, 30.0).is_err());
    }

    proptest! {
        #[test]
        fn quantizer_idempotent(p in 0u8..=255, qp in 0u8..=63) {
            let step = quant_step(qp).unwrap();
            let once = quantize_sample(p, step);
            prop_assert_eq!(quantize_sample(once, step), once);
        }

        #[test]
        fn mock_codec_idempotent(seed in 0u64..1000, qp in 0u8..=63) {
            let frames = vec![picture(seed)];
            let once = mock_codec(&frames, qp).unwrap();
            let twice = mock_codec(&once.decoded, qp).unwrap();
            prop_assert_eq!(once.decoded, twice.decoded);
        }

        #[test]
        fn round_trip_within_two_levels(rgb in proptest::collection::vec(0.0f64..=1.0, 3 * 4)) {
            // chroma is constant on each 2x2 block
            let frame = Frame::from_fn(3, 4, 4, |c, y, x| rgb[c * 4 + (y / 2) * 2 + x / 2]).unwrap();
            let back: Frame<f64> = yuv420_to_rgb(&rgb_to_yuv420(&frame).unwrap()).unwrap();
            for (a, b) in frame.as_slice().iter().zip(back.as_slice()) {
                prop_assert!((a - b).abs() <= 2.0 / 255.0);
            }
        }
    }
}
