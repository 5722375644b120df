//! PNG frames as pixel snapshots, and a directory watcher for frames produced
//! while a simulation runs.
//!
//! # Stream directory layout
//!
//! A producer writes `frame_000000.png`, `frame_000001.png`, … into one
//! directory. Each frame is first written under a hidden temporary name and
//! then renamed, so a reader never sees a partial file. When the run is over
//! the producer creates an empty `END_OF_STREAM` file.

use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec.709 luminance weights for R, G, B.
pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];

pub const END_OF_STREAM: &str = "END_OF_STREAM";

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Inverse of [`frame_name`].
pub fn frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channels {
    Gray8,
    Rgb8,
}

/// Sub-rectangle of a frame, in pixels from the top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Geometry of a frame and how it maps to a snapshot vector.
///
/// Pixels are flattened row by row and scaled to `[0, 1]`. With a crop only
/// the cropped rectangle becomes part of the vector, and frames written back
/// from a vector have the crop's size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub width: usize,
    pub height: usize,
    pub channels: Channels,
    pub crop: Option<Crop>,
}

impl FrameSpec {
    pub fn new(width: usize, height: usize, channels: Channels) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!("frame size {width}x{height} is empty")));
        }
        Ok(Self {
            width,
            height,
            channels,
            crop: None,
        })
    }

    pub fn gray(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, Channels::Gray8)
    }

    pub fn with_crop(mut self, crop: Crop) -> Result<Self> {
        if crop.width == 0
            || crop.height == 0
            || crop.x + crop.width > self.width
            || crop.y + crop.height > self.height
        {
            return Err(Error::InvalidArgument(format!(
                "crop {crop:?} does not fit a {}x{} frame",
                self.width, self.height
            )));
        }
        self.crop = Some(crop);
        Ok(self)
    }

    /// Width and height of the vectorized region.
    pub fn vector_dims(&self) -> (usize, usize) {
        match self.crop {
            Some(c) => (c.width, c.height),
            None => (self.width, self.height),
        }
    }

    pub fn vector_len(&self) -> usize {
        let (w, h) = self.vector_dims();
        w * h
    }
}

/// Width, height and channel layout of an encoded PNG, without decoding pixels.
pub fn probe_frame(bytes: &[u8]) -> Result<FrameSpec> {
    let reader = png::Decoder::new(io::Cursor::new(bytes))
        .read_info()
        .map_err(|e| Error::DecodeFailure(e.to_string()))?;
    let info = reader.info();
    let channels = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => Channels::Gray8,
        _ => Channels::Rgb8,
    };
    FrameSpec::new(info.width as usize, info.height as usize, channels)
}

/// Decodes a PNG into a luminance vector in `[0, 1]`.
pub fn frame_to_vector(bytes: &[u8], spec: &FrameSpec) -> Result<Vec<f64>> {
    let mut decoder = png::Decoder::new(io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::DecodeFailure(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::DecodeFailure("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::DecodeFailure(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    if w != spec.width {
        return Err(Error::DimensionMismatch {
            expected: spec.width,
            found: w,
        });
    }
    if h != spec.height {
        return Err(Error::DimensionMismatch {
            expected: spec.height,
            found: h,
        });
    }
    let stride = info.line_size;
    let luma = |px: &[u8]| -> f64 {
        match info.color_type {
            png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => px[0] as f64 / 255.0,
            _ => (LUMA[0] * px[0] as f64 + LUMA[1] * px[1] as f64 + LUMA[2] * px[2] as f64) / 255.0,
        }
    };
    let samples = info.color_type.samples();
    let crop = spec.crop.unwrap_or(Crop {
        x: 0,
        y: 0,
        width: w,
        height: h,
    });
    let mut out = Vec::with_capacity(crop.width * crop.height);
    for row in crop.y..crop.y + crop.height {
        let line = &buf[row * stride..row * stride + w * samples];
        for col in crop.x..crop.x + crop.width {
            out.push(luma(&line[col * samples..(col + 1) * samples]).min(1.0));
        }
    }
    Ok(out)
}

/// Encodes a vector as an 8-bit PNG of the spec's (cropped) size. Values are
/// clamped to `[0, 1]`; RGB output repeats the gray level in every channel.
pub fn vector_to_frame(v: &[f64], spec: &FrameSpec) -> Result<Vec<u8>> {
    let (w, h) = spec.vector_dims();
    if v.len() != w * h {
        return Err(Error::DimensionMismatch {
            expected: w * h,
            found: v.len(),
        });
    }
    let gray = v.iter().map(|&x| {
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        (x * 255.0).round() as u8
    });
    let (color, data): (png::ColorType, Vec<u8>) = match spec.channels {
        Channels::Gray8 => (png::ColorType::Grayscale, gray.collect()),
        Channels::Rgb8 => (png::ColorType::Rgb, gray.flat_map(|g| [g, g, g]).collect()),
    };
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, w as u32, h as u32);
        encoder.set_color(color);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::DecodeFailure(e.to_string()))?;
        writer
            .write_image_data(&data)
            .map_err(|e| Error::DecodeFailure(e.to_string()))?;
    }
    Ok(out)
}

/// Writes `bytes` as frame `index` of a stream directory, atomically.
pub fn write_frame(dir: impl AsRef<Path>, index: usize, bytes: &[u8]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let name = frame_name(index);
    let tmp = dir.join(format!(".{name}.tmp"));
    let dest = dir.join(name);
    {
        let mut f = BufWriter::new(fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?);
        io::Write::write_all(&mut f, bytes).map_err(|e| Error::io(&tmp, e))?;
        io::Write::flush(&mut f).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))?;
    Ok(dest)
}

/// Marks a stream directory as complete.
pub fn finish_stream(dir: impl AsRef<Path>) -> Result<()> {
    let path = dir.as_ref().join(END_OF_STREAM);
    fs::write(&path, b"").map_err(|e| Error::io(&path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WatchOptions {
    pub dt: f64,
    pub t0: f64,
    pub poll: Duration,
    /// Give up when no new frame and no end marker shows up for this long.
    pub idle_timeout: Option<Duration>,
}

impl WatchOptions {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            t0: 0.0,
            poll: Duration::from_millis(5),
            idle_timeout: None,
        }
    }
}

/// Frames of a stream directory in index order, each with its timestamp
/// `t0 + k·dt`. Blocks while the next frame has not arrived yet.
pub struct FrameWatcher {
    dir: PathBuf,
    spec: FrameSpec,
    options: WatchOptions,
    next: usize,
    done: bool,
}

pub fn watch_stream(dir: impl AsRef<Path>, spec: FrameSpec, options: WatchOptions) -> FrameWatcher {
    FrameWatcher {
        dir: dir.as_ref().to_path_buf(),
        spec,
        options,
        next: 0,
        done: false,
    }
}

impl FrameWatcher {
    /// Index of the next frame to be yielded.
    pub fn position(&self) -> usize {
        self.next
    }

    fn lowest_index_after(&self, k: usize) -> Result<Option<usize>> {
        let entries = fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let mut lowest = None;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&self.dir, e))?;
            if let Some(i) = entry.file_name().to_str().and_then(frame_index) {
                if i > k && lowest.is_none_or(|l| i < l) {
                    lowest = Some(i);
                }
            }
        }
        Ok(lowest)
    }

    fn read(&self, path: &Path) -> Result<(Vec<f64>, f64)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let v = frame_to_vector(&bytes, &self.spec)?;
        Ok((v, self.options.t0 + self.next as f64 * self.options.dt))
    }

    fn step(&mut self) -> Result<Option<(Vec<f64>, f64)>> {
        let started = Instant::now();
        loop {
            let path = self.dir.join(frame_name(self.next));
            if path.exists() {
                let item = self.read(&path)?;
                self.next += 1;
                return Ok(Some(item));
            }
            let ended = self.dir.join(END_OF_STREAM).exists();
            if let Some(found) = self.lowest_index_after(self.next)? {
                // frames land in order, so a later frame means ours either
                // arrived meanwhile or never will
                if !path.exists() {
                    return Err(Error::OutOfOrderFrame {
                        expected: self.next,
                        found,
                    });
                }
                continue;
            }
            if ended {
                return Ok(None);
            }
            if let Some(limit) = self.options.idle_timeout {
                if started.elapsed() > limit {
                    return Err(Error::io(
                        &path,
                        io::Error::new(io::ErrorKind::TimedOut, "no frame or end marker arrived"),
                    ));
                }
            }
            thread::sleep(self.options.poll);
        }
    }
}

impl Iterator for FrameWatcher {
    type Item = Result<(Vec<f64>, f64)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = self.step().transpose();
        if !matches!(item, Some(Ok(_))) {
            self.done = true;
        }
        item
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb_png(w: u32, h: u32, px: [u8; 3]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let data: Vec<u8> = (0..w * h).flat_map(|_| px).collect();
            enc.write_header().unwrap().write_image_data(&data).unwrap();
        }
        out
    }

    #[test]
    fn luma_weights_sum_to_one() {
        assert!((LUMA.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn black_and_white() {
        let spec = FrameSpec::gray(5, 3).unwrap();
        let black = vector_to_frame(&[0.0; 15], &spec).unwrap();
        assert!(frame_to_vector(&black, &spec).unwrap().iter().all(|&v| v == 0.0));
        let white = vector_to_frame(&[1.0; 15], &spec).unwrap();
        assert!(frame_to_vector(&white, &spec).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rgb_white_is_one() {
        let spec = FrameSpec::new(4, 2, Channels::Rgb8).unwrap();
        let v = frame_to_vector(&rgb_png(4, 2, [255, 255, 255]), &spec).unwrap();
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        let red = frame_to_vector(&rgb_png(4, 2, [255, 0, 0]), &spec).unwrap();
        assert!((red[0] - LUMA[0]).abs() < 1e-15);
    }

    #[test]
    fn probe_reads_header() {
        let spec = probe_frame(&rgb_png(7, 3, [1, 2, 3])).unwrap();
        assert_eq!((spec.width, spec.height, spec.channels), (7, 3, Channels::Rgb8));
        assert!(probe_frame(b"nope").is_err());
    }

    #[test]
    fn large_frames() {
        let spec = FrameSpec::gray(499, 51).unwrap();
        let bytes = vector_to_frame(&vec![0.25; 499 * 51], &spec).unwrap();
        assert_eq!(frame_to_vector(&bytes, &spec).unwrap().len(), 25449);
        let spec = FrameSpec::gray(148, 296).unwrap();
        assert!(vector_to_frame(&vec![0.5; 148 * 296], &spec).is_ok());
    }

    #[test]
    fn mid_gray_is_uniform() {
        let spec = FrameSpec::gray(6, 6).unwrap();
        let v = frame_to_vector(&vector_to_frame(&[0.5; 36], &spec).unwrap(), &spec).unwrap();
        assert!(v.iter().all(|&x| x == v[0]));
        assert!((v[0] - 0.5).abs() <= 0.5 / 255.0);
    }

    #[test]
    fn roundtrip_within_quantization() {
        let spec = FrameSpec::gray(13, 7).unwrap();
        let v: Vec<f64> = (0..91).map(|i| ((i * 37) % 91) as f64 / 90.0).collect();
        let back = frame_to_vector(&vector_to_frame(&v, &spec).unwrap(), &spec).unwrap();
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn crop_selects_rectangle() {
        let spec = FrameSpec::gray(4, 3).unwrap();
        let v: Vec<f64> = (0..12).map(|i| i as f64 / 255.0).collect();
        let bytes = vector_to_frame(&v, &spec).unwrap();
        let cropped = spec
            .with_crop(Crop {
                x: 1,
                y: 1,
                width: 2,
                height: 2,
            })
            .unwrap();
        let out = frame_to_vector(&bytes, &cropped).unwrap();
        let want: Vec<f64> = [5.0, 6.0, 9.0, 10.0].iter().map(|i| i / 255.0).collect();
        assert_eq!(out, want);
        assert!(spec.with_crop(Crop { x: 3, y: 0, width: 2, height: 1 }).is_err());
    }

    #[test]
    fn wrong_size_and_garbage() {
        let bytes = vector_to_frame(&[0.0; 6], &FrameSpec::gray(3, 2).unwrap()).unwrap();
        assert!(matches!(
            frame_to_vector(&bytes, &FrameSpec::gray(2, 3).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            frame_to_vector(b"not a png", &FrameSpec::gray(2, 3).unwrap()),
            Err(Error::DecodeFailure(_))
        ));
        assert!(vector_to_frame(&[0.0; 5], &FrameSpec::gray(3, 2).unwrap()).is_err());
    }

    #[test]
    fn names() {
        assert_eq!(frame_name(42), "frame_000042.png");
        assert_eq!(frame_index("frame_000042.png"), Some(42));
        assert_eq!(frame_index("frame_1234567.png"), Some(1234567));
        assert_eq!(frame_index(".frame_000042.png.tmp"), None);
        assert_eq!(frame_index("frame_42.png"), None);
    }

    fn write_frames(dir: &Path, indices: &[usize], spec: &FrameSpec) {
        for &i in indices {
            let v = vec![i as f64 / 10.0; spec.vector_len()];
            write_frame(dir, i, &vector_to_frame(&v, spec).unwrap()).unwrap();
        }
    }

    #[test]
    fn watch_complete_directory() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FrameSpec::gray(3, 3).unwrap();
        write_frames(dir.path(), &[0, 1, 2, 3], &spec);
        finish_stream(dir.path()).unwrap();
        let got: Vec<(Vec<f64>, f64)> = watch_stream(dir.path(), spec, WatchOptions::new(0.5))
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(got.len(), 4);
        for (k, (v, t)) in got.iter().enumerate() {
            assert_eq!(*t, 0.5 * k as f64);
            assert!((v[0] - k as f64 / 10.0).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn watch_gap_is_error() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FrameSpec::gray(2, 2).unwrap();
        write_frames(dir.path(), &[0, 1, 3], &spec);
        let mut w = watch_stream(dir.path(), spec, WatchOptions::new(1.0));
        assert!(w.next().unwrap().is_ok());
        assert!(w.next().unwrap().is_ok());
        assert!(matches!(
            w.next().unwrap(),
            Err(Error::OutOfOrderFrame { expected: 2, found: 3 })
        ));
        assert!(w.next().is_none());
    }

    #[test]
    fn watch_times_out() {
        let dir = tempfile::tempdir().unwrap();
        let mut opts = WatchOptions::new(1.0);
        opts.idle_timeout = Some(Duration::from_millis(20));
        let mut w = watch_stream(dir.path(), FrameSpec::gray(2, 2).unwrap(), opts);
        assert!(matches!(w.next().unwrap(), Err(Error::IoFailure { .. })));
    }

    #[test]
    fn watch_concurrent_producer() {
        let dir = tempfile::tempdir().unwrap();
        let spec = FrameSpec::gray(4, 4).unwrap();
        let producer_dir = dir.path().to_path_buf();
        let producer = thread::spawn(move || {
            for i in 0..30 {
                let v = vec![(i % 10) as f64 / 10.0; 16];
                write_frame(&producer_dir, i, &vector_to_frame(&v, &spec).unwrap()).unwrap();
                if i % 7 == 0 {
                    thread::sleep(Duration::from_millis(3));
                }
            }
            finish_stream(&producer_dir).unwrap();
        });
        let got: Vec<_> = watch_stream(dir.path(), spec, WatchOptions::new(1.0))
            .collect::<Result<Vec<_>>>()
            .unwrap();
        producer.join().unwrap();
        assert_eq!(got.len(), 30);
    }

    mod props {
        use super::*;
        use proptest::prelude::{proptest, prop_assert};

        proptest! {
            #[test]
            fn quantization_roundtrip(w in 1usize..20, h in 1usize..20, seed in 0u64..1000) {
                let spec = FrameSpec::gray(w, h).unwrap();
                let v: Vec<f64> = (0..w * h)
                    .map(|i| ((i as u64 * 2654435761 + seed) % 1000) as f64 / 999.0)
                    .collect();
                let back = frame_to_vector(&vector_to_frame(&v, &spec).unwrap(), &spec).unwrap();
                for (a, b) in v.iter().zip(&back) {
                    prop_assert!((a - b).abs() <= 1.0 / 255.0);
                }
            }
        }
    }
}
