//! Sequence IO: 8-bit 4:2:0 Y4M files and directories of numbered PNG frames
//! with an `fps.txt` sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use vcm_core::codec::{rgb_to_yuv420, yuv420_to_rgb, Yuv420Frame};
use vcm_core::{Frame, Tensor};

use crate::error::{IoContext, Result, VcmError};

pub const FPS_SIDECAR: &str = "fps.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<Frame<f32>>,
    pub fps: f64,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width)` of the first frame.
    pub fn size(&self) -> Option<(usize, usize)> {
        self.frames.first().map(|f| (f.height(), f.width()))
    }

    pub fn to_yuv420(&self) -> Result<Vec<Yuv420Frame>> {
        Ok(self
            .frames
            .iter()
            .map(rgb_to_yuv420)
            .collect::<vcm_core::Result<_>>()?)
    }

    /// Converts to RGB on the 8-bit grid, the form a detector reads from an
    /// image decoder; saving the result as PNG is then lossless.
    pub fn from_yuv420(frames: &[Yuv420Frame], fps: f64) -> Result<Self> {
        Ok(Self {
            frames: frames
                .iter()
                .map(|f| Ok(quantize_rgb8(&yuv420_to_rgb(f)?)))
                .collect::<vcm_core::Result<_>>()?,
            fps,
        })
    }
}

pub fn quantize_rgb8(frame: &Frame<f32>) -> Frame<f32> {
    Frame::clamped(frame.tensor().map(|v| (v * 255.0).round() / 255.0))
}

fn is_y4m(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("y4m"))
}

/// Loads a Y4M file or a PNG directory. A Y4M header's frame rate wins over
/// `fps`; for PNG directories `fps` wins over the sidecar.
pub fn load_sequence(path: &Path, fps: Option<f64>) -> Result<VideoSequence> {
    if path.is_dir() {
        let frames = load_png_dir(path)?;
        let fps = match fps {
            Some(f) => f,
            None => read_fps_sidecar(path)?,
        };
        Ok(VideoSequence { frames, fps })
    } else if is_y4m(path) {
        let (frames, fps) = read_y4m(path)?;
        VideoSequence::from_yuv420(&frames, fps)
    } else if !path.exists() {
        Err(VcmError::Ingestion(vec![path.to_path_buf()]))
    } else {
        Err(VcmError::format(path, "expected a .y4m file or a PNG directory"))
    }
}

/// Loads the 4:2:0 planes of a sequence; PNG frames are converted.
pub fn load_yuv420(path: &Path, fps: Option<f64>) -> Result<(Vec<Yuv420Frame>, f64)> {
    if is_y4m(path) && path.is_file() {
        read_y4m(path)
    } else {
        let seq = load_sequence(path, fps)?;
        Ok((seq.to_yuv420()?, seq.fps))
    }
}

fn read_fps_sidecar(dir: &Path) -> Result<f64> {
    let p = dir.join(FPS_SIDECAR);
    let text = std::fs::read_to_string(&p).at(&p)?;
    let fps: f64 = text
        .trim()
        .parse()
        .map_err(|_| VcmError::format(&p, format!("invalid fps `{}`", text.trim())))?;
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(VcmError::format(&p, format!("fps must be positive, got {fps}")));
    }
    Ok(fps)
}

fn png_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

fn load_png_dir(dir: &Path) -> Result<Vec<Frame<f32>>> {
    let paths = png_paths(dir)?;
    if paths.is_empty() {
        return Err(VcmError::format(dir, "no PNG frames found"));
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut unreadable = Vec::new();
    for p in &paths {
        match load_png(p) {
            Ok(f) => frames.push(f),
            Err(_) => unreadable.push(p.clone()),
        }
    }
    if !unreadable.is_empty() {
        return Err(VcmError::Ingestion(unreadable));
    }
    let first = frames[0].shape();
    if let Some(i) = frames.iter().position(|f| f.shape() != first) {
        return Err(VcmError::format(
            &paths[i],
            format!(
                "frame is {}x{}, earlier frames are {}x{}",
                frames[i].width(),
                frames[i].height(),
                first.2,
                first.1
            ),
        ));
    }
    Ok(frames)
}

pub fn load_png(path: &Path) -> Result<Frame<f32>> {
    let img = image::open(path)
        .map_err(|e| VcmError::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let t = Tensor::from_fn(3, h, w, |c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0);
    Ok(Frame::new(t)?)
}

pub fn to_rgb8(frame: &Frame<f32>) -> Vec<u8> {
    let (h, w) = (frame.height(), frame.width());
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out.push((frame.get(c, y, x) * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

pub fn save_png(path: &Path, frame: &Frame<f32>) -> Result<()> {
    if frame.channels() != 3 {
        return Err(VcmError::format(path, "PNG output needs 3 channels"));
    }
    image::save_buffer(
        path,
        &to_rgb8(frame),
        frame.width() as u32,
        frame.height() as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| VcmError::format(path, e.to_string()))
}

/// Frame file name inside a PNG directory.
pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.png")
}

/// Writes `dir/000000.png ...` plus the fps sidecar. Existing PNG frames in
/// `dir` are removed first so stale frames never survive.
pub fn save_png_dir(dir: &Path, seq: &VideoSequence) -> Result<()> {
    std::fs::create_dir_all(dir).at(dir)?;
    for p in png_paths(dir)? {
        std::fs::remove_file(&p).at(&p)?;
    }
    for (i, f) in seq.frames.iter().enumerate() {
        save_png(&dir.join(frame_file_name(i)), f)?;
    }
    let p = dir.join(FPS_SIDECAR);
    std::fs::write(&p, format!("{}\n", seq.fps)).at(&p)
}

fn y4m_err(path: &Path, e: y4m::Error) -> VcmError {
    match e {
        y4m::Error::IoError(io) => VcmError::io(path, io),
        other => VcmError::format(path, other.to_string()),
    }
}

pub fn read_y4m(path: &Path) -> Result<(Vec<Yuv420Frame>, f64)> {
    let file = File::open(path).at(path)?;
    let mut dec = y4m::decode(BufReader::new(file)).map_err(|e| y4m_err(path, e))?;
    match dec.get_colorspace() {
        y4m::Colorspace::C420
        | y4m::Colorspace::C420jpeg
        | y4m::Colorspace::C420paldv
        | y4m::Colorspace::C420mpeg2 => {}
        other => {
            return Err(VcmError::format(
                path,
                format!("only 8-bit 4:2:0 is supported, found {other:?}"),
            ))
        }
    }
    let (w, h) = (dec.get_width(), dec.get_height());
    let rate = dec.get_framerate();
    if rate.num == 0 || rate.den == 0 {
        return Err(VcmError::format(path, "frame rate must be positive"));
    }
    let fps = rate.num as f64 / rate.den as f64;
    let mut frames = Vec::new();
    loop {
        match dec.read_frame() {
            Ok(f) => frames.push(Yuv420Frame::new(
                w,
                h,
                f.get_y_plane().to_vec(),
                f.get_u_plane().to_vec(),
                f.get_v_plane().to_vec(),
            )?),
            Err(y4m::Error::EOF) => break,
            Err(e) => return Err(y4m_err(path, e)),
        }
    }
    if frames.is_empty() {
        return Err(VcmError::format(path, "no frames"));
    }
    Ok((frames, fps))
}

fn fps_ratio(fps: f64) -> y4m::Ratio {
    if (fps - fps.round()).abs() < 1e-9 {
        y4m::Ratio::new(fps.round() as usize, 1)
    } else {
        y4m::Ratio::new((fps * 1000.0).round() as usize, 1000)
    }
}

pub fn write_y4m(path: &Path, frames: &[Yuv420Frame], fps: f64) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| VcmError::format(path, "cannot write an empty sequence"))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    let file = File::create(path).at(path)?;
    let range = y4m::VendorExtensionString::new(b"COLORRANGE=LIMITED".to_vec())
        .expect("no spaces in extension");
    let mut enc = y4m::encode(first.width(), first.height(), fps_ratio(fps))
        .with_colorspace(y4m::Colorspace::C420jpeg)
        .append_vendor_extension(range)
        .write_header(BufWriter::new(file))
        .map_err(|e| y4m_err(path, e))?;
    for f in frames {
        if (f.width(), f.height()) != (first.width(), first.height()) {
            return Err(VcmError::format(path, "frames differ in size"));
        }
        enc.write_frame(&y4m::Frame::new([f.y(), f.u(), f.v()], None))
            .map_err(|e| y4m_err(path, e))?;
    }
    Ok(())
}

/// Raw planar 4:2:0 bytes, the usual input of reference encoders.
pub fn write_yuv(path: &Path, frames: &[Yuv420Frame]) -> Result<()> {
    let mut bytes = Vec::new();
    for f in frames {
        bytes.extend_from_slice(&f.to_bytes());
    }
    std::fs::write(path, bytes).at(path)
}

pub fn read_yuv(path: &Path, width: usize, height: usize) -> Result<Vec<Yuv420Frame>> {
    let bytes = std::fs::read(path).at(path)?;
    let n = Yuv420Frame::frame_len(width, height);
    if n == 0 || bytes.len() % n != 0 {
        return Err(VcmError::format(
            path,
            format!("{} bytes is not a whole number of {width}x{height} frames", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(n)
        .map(|c| Yuv420Frame::from_bytes(width, height, c))
        .collect::<vcm_core::Result<_>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq() -> VideoSequence {
        VideoSequence {
            frames: (0..3)
                .map(|i| {
                    Frame::from_fn(3, 6, 8, |c, y, x| ((i + c * 5 + y * 8 + x) % 11) as f32 / 10.0)
                        .unwrap()
                })
                .collect(),
            fps: 25.0,
        }
    }

    #[test]
    fn png_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = seq();
        save_png_dir(dir.path(), &s).unwrap();
        let back = load_sequence(dir.path(), None).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.fps, 25.0);
        for (a, b) in s.frames.iter().zip(&back.frames) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
        assert_eq!(load_sequence(dir.path(), Some(50.0)).unwrap().fps, 50.0);
    }

    #[test]
    fn y4m_round_trip_and_header_fps() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.y4m");
        let yuv = seq().to_yuv420().unwrap();
        write_y4m(&p, &yuv, 29.97).unwrap();
        let (back, fps) = read_y4m(&p).unwrap();
        assert_eq!(back, yuv);
        assert!((fps - 29.97).abs() < 1e-9);
        assert_eq!(load_sequence(&p, Some(10.0)).unwrap().fps, fps);
    }

    #[test]
    fn mixed_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_png_dir(dir.path(), &seq()).unwrap();
        save_png(&dir.path().join("000009.png"), &Frame::filled(3, 4, 4, 0.5).unwrap()).unwrap();
        assert!(matches!(load_sequence(dir.path(), None), Err(VcmError::Format { .. })));
    }

    #[test]
    fn unreadable_frames_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        save_png_dir(dir.path(), &seq()).unwrap();
        std::fs::write(dir.path().join("000001.png"), b"junk").unwrap();
        match load_sequence(dir.path(), None) {
            Err(VcmError::Ingestion(p)) => assert!(p[0].ends_with("000001.png")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn raw_yuv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.yuv");
        let yuv = seq().to_yuv420().unwrap();
        write_yuv(&p, &yuv).unwrap();
        assert_eq!(read_yuv(&p, 8, 6).unwrap(), yuv);
        assert!(read_yuv(&p, 8, 8).is_err());
    }
}
