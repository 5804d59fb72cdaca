use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::PixelMask;

pub const DEFAULT_MB_SIZE: usize = 16;

/// Lost / received status of every macroblock, addressed row-major (MBA).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossMask {
    mb_size: usize,
    mb_cols: usize,
    mb_rows: usize,
    lost: Vec<bool>,
}

impl LossMask {
    pub fn new(mb_size: usize, mb_cols: usize, mb_rows: usize) -> Result<Self> {
        if mb_size == 0 || mb_cols == 0 || mb_rows == 0 {
            return Err(Error::InvalidParameter {
                name: "mask",
                reason: format!("degenerate macroblock grid {mb_cols}x{mb_rows} of size {mb_size}"),
            });
        }
        Ok(Self {
            mb_size,
            mb_cols,
            mb_rows,
            lost: vec![false; mb_cols * mb_rows],
        })
    }

    /// Empty mask covering a `width x height` frame.
    pub fn for_frame(width: usize, height: usize, mb_size: usize) -> Result<Self> {
        if mb_size == 0 {
            return Err(Error::InvalidParameter {
                name: "mb_size",
                reason: "must be at least 1".into(),
            });
        }
        Self::new(mb_size, width.div_ceil(mb_size), height.div_ceil(mb_size))
    }

    #[inline]
    pub fn mb_size(&self) -> usize {
        self.mb_size
    }

    #[inline]
    pub fn mb_cols(&self) -> usize {
        self.mb_cols
    }

    #[inline]
    pub fn mb_rows(&self) -> usize {
        self.mb_rows
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.lost.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.lost.is_empty()
    }

    #[inline]
    pub fn is_lost(&self, mba: usize) -> bool {
        self.lost[mba]
    }

    #[inline]
    pub fn is_lost_at(&self, col: usize, row: usize) -> bool {
        self.lost[row * self.mb_cols + col]
    }

    pub fn set_lost(&mut self, mba: usize, lost: bool) -> Result<()> {
        if mba >= self.lost.len() {
            return Err(Error::InvalidParameter {
                name: "mba",
                reason: format!("{mba} outside [0, {})", self.lost.len()),
            });
        }
        self.lost[mba] = lost;
        Ok(())
    }

    pub fn lost_count(&self) -> usize {
        self.lost.iter().filter(|&&l| l).count()
    }

    pub fn lost_addresses(&self) -> impl Iterator<Item = usize> + '_ {
        self.lost
            .iter()
            .enumerate()
            .filter(|(_, &l)| l)
            .map(|(i, _)| i)
    }

    /// Whether this grid is the one a `width x height` frame requires.
    pub fn matches_frame(&self, width: usize, height: usize) -> bool {
        self.mb_cols == width.div_ceil(self.mb_size)
            && self.mb_rows == height.div_ceil(self.mb_size)
    }

    pub(crate) fn ensure_frame(&self, width: usize, height: usize) -> Result<()> {
        if !self.matches_frame(width, height) {
            return Err(Error::ShapeMismatch {
                expected: (width.div_ceil(self.mb_size), height.div_ceil(self.mb_size)),
                actual: (self.mb_cols, self.mb_rows),
            });
        }
        Ok(())
    }

    /// MBA of the block containing pixel `(h, v)`.
    #[inline]
    pub fn mba_of_pixel(&self, h: usize, v: usize) -> usize {
        (v / self.mb_size) * self.mb_cols + h / self.mb_size
    }

    #[inline]
    pub fn pixel_lost(&self, h: usize, v: usize) -> bool {
        self.lost[self.mba_of_pixel(h, v)]
    }

    /// Per-pixel legitimacy: `true` where the pixel's macroblock arrived.
    pub fn legit_pixels(&self, width: usize, height: usize) -> PixelMask {
        PixelMask::from_fn(width, height, |h, v| !self.pixel_lost(h, v))
    }

    /// Pixel rectangle `(h0, v0, h1, v1)` (exclusive ends) of a block, clipped to the frame.
    pub fn block_bounds(
        &self,
        col: usize,
        row: usize,
        width: usize,
        height: usize,
    ) -> (usize, usize, usize, usize) {
        let h0 = col * self.mb_size;
        let v0 = row * self.mb_size;
        (
            h0,
            v0,
            (h0 + self.mb_size).min(width),
            (v0 + self.mb_size).min(height),
        )
    }

    /// Text form: `mb_size cols rows`, then one lost MBA per line, ascending.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {} {}\n", self.mb_size, self.mb_cols, self.mb_rows);
        for mba in self.lost_addresses() {
            writeln!(out, "{mba}").unwrap();
        }
        out
    }

    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::MalformedMask {
            path: origin.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
        let fields: Vec<usize> = header
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| bad(format!("bad header token `{t}`")))
            })
            .collect::<Result<_>>()?;
        let [mb_size, cols, rows] = fields[..] else {
            return Err(bad(format!(
                "header needs 3 fields, found {}",
                fields.len()
            )));
        };
        let mut mask = Self::new(mb_size, cols, rows).map_err(|e| bad(e.to_string()))?;
        let mut last: Option<usize> = None;
        for (n, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mba: usize = line
                .parse()
                .map_err(|_| bad(format!("line {}: `{line}` is not an MBA", n + 2)))?;
            if last.is_some_and(|l| mba <= l) {
                return Err(bad(format!(
                    "line {}: addresses must be strictly ascending",
                    n + 2
                )));
            }
            mask.set_lost(mba, true).map_err(|e| bad(e.to_string()))?;
            last = Some(mba);
        }
        Ok(mask)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Marks each macroblock lost independently with probability `loss_rate`.
///
/// The generator is ChaCha8 seeded with `seed`, drawn once per MBA in
/// ascending order, so the mask is a pure function of its arguments.
pub fn simulate_loss(
    mb_rows: usize,
    mb_cols: usize,
    mb_size: usize,
    loss_rate: f64,
    seed: u64,
) -> Result<LossMask> {
    if !(0.0..=1.0).contains(&loss_rate) {
        return Err(Error::InvalidParameter {
            name: "loss_rate",
            reason: format!("{loss_rate} is outside [0, 1]"),
        });
    }
    let mut mask = LossMask::new(mb_size, mb_cols, mb_rows)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for lost in mask.lost.iter_mut() {
        *lost = rng.gen::<f64>() < loss_rate;
    }
    Ok(mask)
}
