//! Dataset ingestion and bit-exact file IO.
//!
//! Three on-disk formats, all deliberately small:
//!
//! * Manifests: CSV with header `path,label`, UTF-8, LF or CRLF line
//!   endings, no quoting (paths must not contain commas). Relative paths
//!   are resolved against the manifest's directory.
//! * Tensor files: magic `FLTN`, version `1` (u16), dtype code `1`
//!   (f32), ndim (u8), one u32 per dimension, then the row-major f32
//!   payload. Everything little-endian. Round-trips are byte-exact.
//! * Frame directories: PNG frames named by a zero-padded 0-based index,
//!   default pattern `frame_%05d.png`. 8-bit channels map to f32 as
//!   `v / 255`; frames are held as f32 everywhere else so the transforms
//!   stay exactly invertible.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, ArrayD, ArrayViewD, IxDyn};

use crate::error::{Error, Result};
use crate::grid::{FlatImage, FrameSequence};

pub const TENSOR_MAGIC: [u8; 4] = *b"FLTN";
pub const TENSOR_VERSION: u16 = 1;
pub const DTYPE_F32_LE: u8 = 1;

/// Default frame-file pattern for frame directories.
pub const DEFAULT_FRAME_PATTERN: &str = "frame_%05d.png";

// ---------------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------------

/// One dataset row: a clip location and its class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_path: PathBuf,
    pub label: usize,
    /// Cached frame count, filled lazily by callers that have opened the
    /// clip; never stored in the CSV.
    pub frame_count: Option<usize>,
}

impl ManifestEntry {
    pub fn new(clip_path: impl Into<PathBuf>, label: usize) -> Self {
        ManifestEntry {
            clip_path: clip_path.into(),
            label,
            frame_count: None,
        }
    }
}

/// Loads a manifest CSV, preserving file order. Every malformed line is
/// reported with its 1-based line number.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == "path,label" => {}
        Some((_, header)) => {
            return Err(Error::Manifest {
                path: path.into(),
                line: 1,
                reason: format!("expected header \"path,label\", got {header:?}"),
            })
        }
        None => {
            return Err(Error::Manifest {
                path: path.into(),
                line: 1,
                reason: "empty file (missing header)".into(),
            })
        }
    }
    for (idx, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let (clip, label) = line.split_once(',').ok_or_else(|| Error::Manifest {
            path: path.into(),
            line: idx + 1,
            reason: "expected \"path,label\"".into(),
        })?;
        if clip.is_empty() {
            return Err(Error::Manifest {
                path: path.into(),
                line: idx + 1,
                reason: "empty path".into(),
            });
        }
        let label: usize = label.trim().parse().map_err(|_| Error::Manifest {
            path: path.into(),
            line: idx + 1,
            reason: format!("invalid label {label:?}"),
        })?;
        entries.push(ManifestEntry::new(clip, label));
    }
    Ok(entries)
}

/// Writes a manifest CSV (LF line endings).
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::from("path,label\n");
    for e in entries {
        out.push_str(&format!("{},{}\n", e.clip_path.display(), e.label));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Resolves a manifest entry's path relative to the manifest file.
pub fn resolve_clip_path(manifest_path: &Path, entry: &ManifestEntry) -> PathBuf {
    if entry.clip_path.is_absolute() {
        entry.clip_path.clone()
    } else {
        manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&entry.clip_path)
    }
}

// ---------------------------------------------------------------------------
// Tensor files
// ---------------------------------------------------------------------------

/// Writes an n-dimensional f32 array in the `FLTN` format.
pub fn write_tensor(path: &Path, array: &ArrayViewD<'_, f32>) -> Result<()> {
    if array.ndim() > u8::MAX as usize {
        return Err(Error::DimOverflow);
    }
    let mut buf = Vec::with_capacity(12 + array.len() * 4);
    buf.extend_from_slice(&TENSOR_MAGIC);
    buf.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    buf.push(DTYPE_F32_LE);
    buf.push(array.ndim() as u8);
    for &d in array.shape() {
        let d32: u32 = d.try_into().map_err(|_| Error::DimOverflow)?;
        buf.extend_from_slice(&d32.to_le_bytes());
    }
    // Row-major payload regardless of the in-memory layout.
    if let Some(slice) = array.as_slice() {
        for v in slice {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    } else {
        for v in array.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

/// Reads an `FLTN` tensor file, validating magic, version, dtype, and
/// payload length.
pub fn read_tensor(path: &Path) -> Result<ArrayD<f32>> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    parse_tensor(&bytes)
}

fn parse_tensor(bytes: &[u8]) -> Result<ArrayD<f32>> {
    if bytes.len() < 8 {
        return Err(Error::BadMagic);
    }
    if bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TENSOR_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = bytes[6];
    if dtype != DTYPE_F32_LE {
        return Err(Error::UnsupportedDtype(dtype));
    }
    let ndim = bytes[7] as usize;
    let header_len = 8 + ndim * 4;
    if bytes.len() < header_len {
        return Err(Error::Truncated {
            expected: header_len,
            got: bytes.len(),
        });
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for i in 0..ndim {
        let off = 8 + i * 4;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        count = count.checked_mul(d).ok_or(Error::DimOverflow)?;
        dims.push(d);
    }
    let payload_len = count.checked_mul(4).ok_or(Error::DimOverflow)?;
    let got = bytes.len() - header_len;
    if got != payload_len {
        return Err(Error::Truncated {
            expected: payload_len,
            got,
        });
    }
    let mut values = Vec::with_capacity(count);
    for chunk in bytes[header_len..].chunks_exact(4) {
        values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    ArrayD::from_shape_vec(IxDyn(&dims), values).map_err(|e| Error::ShapeMismatch(e.to_string()))
}

/// Writes a clip as a 4-dim `(t, c, h, w)` tensor file.
pub fn write_clip_tensor(path: &Path, seq: &FrameSequence) -> Result<()> {
    write_tensor(path, &seq.data().view().into_dyn())
}

/// Reads a 4-dim `(t, c, h, w)` tensor file as a clip.
pub fn read_clip_tensor(path: &Path) -> Result<FrameSequence> {
    let arr = read_tensor(path)?;
    let arr: Array4<f32> = arr.into_dimensionality().map_err(|_| {
        Error::ShapeMismatch("clip tensor must be 4-dimensional (t, c, h, w)".into())
    })?;
    FrameSequence::new(arr)
}

/// Writes a composite as a 3-dim `(c, H, W)` tensor file.
pub fn write_flat_tensor(path: &Path, img: &FlatImage) -> Result<()> {
    write_tensor(path, &img.pixels.view().into_dyn())
}

/// Reads a 3-dim `(c, H, W)` tensor file as a composite.
pub fn read_flat_tensor(path: &Path) -> Result<FlatImage> {
    let arr = read_tensor(path)?;
    let arr: Array3<f32> = arr.into_dimensionality().map_err(|_| {
        Error::ShapeMismatch("composite tensor must be 3-dimensional (c, h, w)".into())
    })?;
    Ok(FlatImage::new(arr))
}

// ---------------------------------------------------------------------------
// Frame directories and PNG output
// ---------------------------------------------------------------------------

/// A `prefix%0Nd suffix` frame-name pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePattern {
    prefix: String,
    width: usize,
    suffix: String,
}

impl FramePattern {
    /// Parses a pattern containing exactly one `%0Nd` placeholder.
    pub fn parse(pattern: &str) -> Result<Self> {
        let start = pattern.find("%0").ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "frame pattern {pattern:?} lacks a %0Nd placeholder"
            ))
        })?;
        let rest = &pattern[start + 2..];
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        let after = &rest[digits.len()..];
        if digits.is_empty() || !after.starts_with('d') {
            return Err(Error::ShapeMismatch(format!(
                "frame pattern {pattern:?} lacks a %0Nd placeholder"
            )));
        }
        Ok(FramePattern {
            prefix: pattern[..start].to_string(),
            width: digits.parse().unwrap(),
            suffix: after[1..].to_string(),
        })
    }

    pub fn file_name(&self, index: usize) -> String {
        format!(
            "{}{:0width$}{}",
            self.prefix,
            index,
            self.suffix,
            width = self.width
        )
    }

    /// Index encoded in `name`, if it matches the pattern.
    pub fn match_index(&self, name: &str) -> Option<usize> {
        let digits = name
            .strip_prefix(&self.prefix)?
            .strip_suffix(&self.suffix)?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok()
    }
}

fn decode_frame(path: &Path) -> Result<Array3<f32>> {
    let img = image::open(path)?;
    let gray = matches!(
        img.color(),
        image::ColorType::L8
            | image::ColorType::L16
            | image::ColorType::La8
            | image::ColorType::La16
    );
    if gray {
        let buf = img.to_luma8();
        let (w, h) = buf.dimensions();
        Ok(Array3::from_shape_fn(
            (1, h as usize, w as usize),
            |(_, y, x)| buf.get_pixel(x as u32, y as u32)[0] as f32 / 255.0,
        ))
    } else {
        let buf = img.to_rgb8();
        let (w, h) = buf.dimensions();
        Ok(Array3::from_shape_fn(
            (3, h as usize, w as usize),
            |(c, y, x)| buf.get_pixel(x as u32, y as u32)[c] as f32 / 255.0,
        ))
    }
}

/// Reads a directory of PNG frames named by a zero-padded 0-based index.
/// The run of indices must be gapless starting at 0, and every frame must
/// share the first frame's dimensions.
pub fn read_frame_dir(dir: &Path, pattern: &str) -> Result<FrameSequence> {
    let pattern = FramePattern::parse(pattern)?;
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if let Some(idx) = entry
            .file_name()
            .to_str()
            .and_then(|n| pattern.match_index(n))
        {
            indices.push(idx);
        }
    }
    if indices.is_empty() {
        return Err(Error::NoFrames {
            dir: dir.into(),
            pattern: pattern.file_name(0),
        });
    }
    indices.sort_unstable();
    let max = *indices.last().unwrap();
    let mut present = vec![false; max + 1];
    for &i in &indices {
        present[i] = true;
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::MissingFrame(missing));
    }

    let first = decode_frame(&dir.join(pattern.file_name(0)))?;
    let (c, h, w) = first.dim();
    let mut data = Array4::zeros((max + 1, c, h, w));
    data.index_axis_mut(ndarray::Axis(0), 0).assign(&first);
    for k in 1..=max {
        let frame = decode_frame(&dir.join(pattern.file_name(k)))?;
        if frame.dim() != (c, h, w) {
            let (gc, gh, gw) = frame.dim();
            return Err(Error::FrameDimsMismatch {
                index: k,
                want_c: c,
                want_h: h,
                want_w: w,
                got_c: gc,
                got_h: gh,
                got_w: gw,
            });
        }
        data.index_axis_mut(ndarray::Axis(0), k).assign(&frame);
    }
    FrameSequence::new(data)
}

/// How float pixels are mapped to 8-bit for PNG output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Clamp to `[0, 1]`, then scale to `0..=255` (round half up).
    Clip01,
    /// Affinely map the observed min..max to `0..=255`; a constant image
    /// maps to 0.
    MinMax,
}

fn to_u8_plane(values: &Array3<f32>, norm: Normalization) -> Vec<u8> {
    let (lo, hi) = match norm {
        Normalization::Clip01 => (0.0f32, 1.0f32),
        Normalization::MinMax => values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            }),
    };
    let span = hi - lo;
    let (c, h, w) = values.dim();
    let mut out = Vec::with_capacity(c * h * w);
    // Interleaved channel order (PNG expects RGB tuples per pixel).
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = values[[ch, y, x]];
                let scaled = if span > 0.0 {
                    ((v - lo) / span).clamp(0.0, 1.0) * 255.0
                } else {
                    0.0
                };
                out.push(scaled.round() as u8);
            }
        }
    }
    out
}

fn write_png(path: &Path, pixels: &Array3<f32>, norm: Normalization) -> Result<()> {
    let (c, h, w) = pixels.dim();
    let raw = to_u8_plane(pixels, norm);
    match c {
        1 => {
            let buf = image::GrayImage::from_raw(w as u32, h as u32, raw)
                .expect("buffer length matches dimensions");
            buf.save(path)?;
        }
        3 => {
            let buf = image::RgbImage::from_raw(w as u32, h as u32, raw)
                .expect("buffer length matches dimensions");
            buf.save(path)?;
        }
        other => return Err(Error::UnsupportedChannels(other)),
    }
    Ok(())
}

/// Writes a composite image as a lossless PNG (1 or 3 channels).
pub fn write_composite_png(img: &FlatImage, path: &Path, norm: Normalization) -> Result<()> {
    write_png(path, &img.pixels, norm)
}

/// Writes every frame of a clip as PNG files under `dir` using `pattern`.
pub fn write_frame_dir(
    dir: &Path,
    seq: &FrameSequence,
    pattern: &str,
    norm: Normalization,
) -> Result<()> {
    let pattern = FramePattern::parse(pattern)?;
    fs::create_dir_all(dir)?;
    for k in 0..seq.len() {
        write_png(
            &dir.join(pattern.file_name(k)),
            &seq.frame(k).to_owned(),
            norm,
        )?;
    }
    Ok(())
}

/// Byte content of a file, for hashing/diffing in callers and tests.
pub fn file_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Writes `bytes` to `path`, creating parent directories as needed.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = fs::File::create(path)?;
    file.write_all(bytes)?;
    Ok(())
}
