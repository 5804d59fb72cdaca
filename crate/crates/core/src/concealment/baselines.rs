use super::LossMask;
use crate::error::{Error, Result};
use crate::imaging::{DisplacementVector, MotionField};

/// Mean of the valid vectors inside one macroblock, `None` if it has none.
fn block_mean(
    field: &MotionField,
    mask: &LossMask,
    col: usize,
    row: usize,
) -> Option<DisplacementVector> {
    let (w, h) = field.dims();
    let (h0, v0, h1, v1) = mask.block_bounds(col, row, w, h);
    let (mut sum_h, mut sum_v, mut n) = (0.0, 0.0, 0usize);
    for v in v0..v1 {
        for x in h0..h1 {
            if field.is_valid(x, v) {
                let d = field.get(x, v);
                sum_h += d.dh;
                sum_v += d.dv;
                n += 1;
            }
        }
    }
    (n > 0).then(|| DisplacementVector::new(sum_h / n as f64, sum_v / n as f64))
}

/// AVGN: every lost block takes the average of its available neighbours'
/// block-mean vectors (8-neighbourhood). A block with no available neighbour
/// gets the zero vector.
///
/// A neighbour is available when it arrived and holds at least one valid
/// vector. Received blocks are returned unchanged.
pub fn avgn_conceal(field: &MotionField, mask: &LossMask) -> Result<MotionField> {
    let (w, h) = field.dims();
    mask.ensure_frame(w, h)?;
    let (cols, rows) = (mask.mb_cols(), mask.mb_rows());

    let means: Vec<Option<DisplacementVector>> = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (c, r)))
        .map(|(c, r)| {
            if mask.is_lost_at(c, r) {
                None
            } else {
                block_mean(field, mask, c, r)
            }
        })
        .collect();

    let mut out = field.clone();
    for mba in mask.lost_addresses() {
        let (col, row) = (mba % cols, mba / cols);
        let (mut sum_h, mut sum_v, mut n) = (0.0, 0.0, 0usize);
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (c, r) = (col as isize + dc, row as isize + dr);
                if c < 0 || r < 0 || c >= cols as isize || r >= rows as isize {
                    continue;
                }
                if let Some(m) = means[r as usize * cols + c as usize] {
                    sum_h += m.dh;
                    sum_v += m.dv;
                    n += 1;
                }
            }
        }
        let fill = if n == 0 {
            DisplacementVector::ZERO
        } else {
            DisplacementVector::new(sum_h / n as f64, sum_v / n as f64)
        };
        let (h0, v0, h1, v1) = mask.block_bounds(col, row, w, h);
        for v in v0..v1 {
            for x in h0..h1 {
                out.set(x, v, fill, true);
            }
        }
    }
    Ok(out)
}

/// Zero motion everywhere: lost blocks are copied from the co-located
/// block of the previous frame.
pub fn copy_conceal(mask: &LossMask, width: usize, height: usize) -> Result<MotionField> {
    mask.ensure_frame(width, height)?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: "frame must be at least 1x1",
        });
    }
    Ok(MotionField::zeros(width, height, true))
}
