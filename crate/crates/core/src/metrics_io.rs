//! PSNR and the on-disk formats: binary PGM frames, raw planar YUV 4:2:0
//! sequences (luma only) and the CSV concealment report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::concealment::ConcealmentReport;
use crate::error::{Error, Result};
use crate::imaging::{quantize, Frame, PixelMask};

/// Returned by [`psnr`] when the two frames are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

const PEAK: f64 = 255.0;

fn ensure_same(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch {
            expected: a,
            actual: b,
        });
    }
    Ok(())
}

fn psnr_from_sse(sse: f64, count: usize) -> f64 {
    if sse == 0.0 {
        return PSNR_CAP_DB;
    }
    10.0 * (PEAK * PEAK * count as f64 / sse).log10()
}

/// `10 log10(255^2 M N / ||w - w_hat||^2)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(original: &Frame, restored: &Frame) -> Result<f64> {
    ensure_same(original.dims(), restored.dims())?;
    let sse: f64 = original
        .data()
        .iter()
        .zip(restored.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(psnr_from_sse(sse, original.data().len()))
}

/// PSNR restricted to the pixels set in `region`; the cap when the region is empty.
pub fn psnr_in_region(original: &Frame, restored: &Frame, region: &PixelMask) -> Result<f64> {
    ensure_same(original.dims(), restored.dims())?;
    ensure_same(original.dims(), region.dims())?;
    let (sse, n) = original
        .data()
        .iter()
        .zip(restored.data())
        .zip(region.bits())
        .filter(|(_, &inside)| inside)
        .fold((0.0, 0usize), |(s, n), ((a, b), _)| {
            (s + (a - b) * (a - b), n + 1)
        });
    if n == 0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(psnr_from_sse(sse, n))
}

fn header_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Parses a binary (P5) PGM with maxval 255.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<Frame> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(header_error(path, "expected binary PGM magic `P5`"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and `#` comments may separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(header_error(path, "missing numeric header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| header_error(path, "header field out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(header_error(path, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(header_error(path, "zero width or height"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(header_error(
            path,
            "header must end with a single whitespace byte",
        ));
    }
    pos += 1;
    let need = width * height;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: need,
            found: raster.len(),
        });
    }
    Frame::new(
        width,
        height,
        raster[..need].iter().map(|&b| b as f64).collect(),
    )
}

pub fn read_pgm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, path)
}

/// Encodes as P5, quantizing to `[0, 255]` with round-half-away-from-zero.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.data().iter().map(|&x| quantize(x)));
    out
}

pub fn write_pgm(frame: &Frame, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(frame)).map_err(|e| Error::io(path, e))
}

/// Bytes per 4:2:0 frame; chroma planes are `ceil(w/2) x ceil(h/2)`.
pub fn yuv420_frame_bytes(width: usize, height: usize) -> usize {
    width * height + 2 * width.div_ceil(2) * height.div_ceil(2)
}

/// Reads the Y plane of frame `frame_index` from a raw planar 4:2:0 file.
pub fn read_yuv420_luma(
    path: &Path,
    width: usize,
    height: usize,
    frame_index: usize,
) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    luma_from_bytes(&bytes, path, width, height, frame_index)
}

fn luma_from_bytes(
    bytes: &[u8],
    path: &Path,
    width: usize,
    height: usize,
    frame_index: usize,
) -> Result<Frame> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: "raw geometry must be at least 1x1",
        });
    }
    let frame_bytes = yuv420_frame_bytes(width, height);
    let count = bytes.len() / frame_bytes;
    if frame_index >= count {
        if !bytes.len().is_multiple_of(frame_bytes) && frame_index == count {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: (frame_index + 1) * frame_bytes,
                found: bytes.len(),
            });
        }
        return Err(Error::FrameOutOfRange {
            index: frame_index,
            count,
        });
    }
    let start = frame_index * frame_bytes;
    Frame::new(
        width,
        height,
        bytes[start..start + width * height]
            .iter()
            .map(|&b| b as f64)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceFormat {
    PgmDirectory,
    RawYuv420,
}

/// A readable frame sequence: a directory of PGM files in name order, or a
/// raw 4:2:0 file of known geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSource {
    pub format: SequenceFormat,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    path: PathBuf,
    files: Vec<PathBuf>,
}

impl SequenceSource {
    pub fn pgm_directory(dir: &Path) -> Result<Self> {
        let files = list_pgm_files(dir)?;
        let first = files
            .first()
            .ok_or_else(|| Error::Input(format!("no .pgm files in {}", dir.display())))?;
        let frame = read_pgm(first)?;
        Ok(Self {
            format: SequenceFormat::PgmDirectory,
            width: frame.width(),
            height: frame.height(),
            frame_count: files.len(),
            path: dir.to_path_buf(),
            files,
        })
    }

    /// The file size must be an exact multiple of the 4:2:0 frame size.
    pub fn raw_yuv420(path: &Path, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions {
                width,
                height,
                reason: "raw geometry must be at least 1x1",
            });
        }
        let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize;
        let frame_bytes = yuv420_frame_bytes(width, height);
        if len == 0 || !len.is_multiple_of(frame_bytes) {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected: len.div_ceil(frame_bytes).max(1) * frame_bytes,
                found: len,
            });
        }
        Ok(Self {
            format: SequenceFormat::RawYuv420,
            width,
            height,
            frame_count: len / frame_bytes,
            path: path.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read_frame(&self, index: usize) -> Result<Frame> {
        if index >= self.frame_count {
            return Err(Error::FrameOutOfRange {
                index,
                count: self.frame_count,
            });
        }
        match self.format {
            SequenceFormat::RawYuv420 => {
                read_yuv420_luma(&self.path, self.width, self.height, index)
            }
            SequenceFormat::PgmDirectory => {
                let frame = read_pgm(&self.files[index])?;
                if frame.dims() != (self.width, self.height) {
                    return Err(Error::ShapeMismatch {
                        expected: (self.width, self.height),
                        actual: frame.dims(),
                    });
                }
                Ok(frame)
            }
        }
    }

    /// Reads the first `limit` frames (all when `None`).
    pub fn read_all(&self, limit: Option<usize>) -> Result<Vec<Frame>> {
        let n = limit.map_or(self.frame_count, |l| l.min(self.frame_count));
        (0..n).map(|i| self.read_frame(i)).collect()
    }
}

/// `.pgm` files of a directory sorted by file name.
pub fn list_pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    Ok(files)
}

pub const REPORT_HEADER: &str = "frame,method,psnr_db,lost_mbs,outer_iters,final_q";

/// CSV text for `reports`, rows ordered by frame then method name.
pub fn format_report(reports: &[ConcealmentReport]) -> String {
    let mut rows: Vec<&ConcealmentReport> = reports.iter().collect();
    rows.sort_by(|a, b| {
        a.frame_index
            .cmp(&b.frame_index)
            .then_with(|| a.method.name().cmp(b.method.name()))
    });
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let final_q = r.final_q.map(|q| format!("{q:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},{:.6},{},{},{}",
            r.frame_index, r.method, r.psnr_db, r.lost_mb_count, r.solver_outer_iters, final_q
        )
        .unwrap();
    }
    out
}

pub fn write_report(reports: &[ConcealmentReport], path: &Path) -> Result<()> {
    fs::write(path, format_report(reports)).map_err(|e| Error::io(path, e))
}
