use rand::seq::index;

use crate::error::{Error, Result};
use crate::numcore::{SeededRng, Tensor};

/// Binary `M×D` selection of masked cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
    count: usize,
}

impl MaskMatrix {
    pub fn from_cells(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::shape("MaskMatrix::from_cells", &[rows, cols], &[cells.len()]));
        }
        let count = cells.iter().filter(|&&c| c).count();
        Ok(Self {
            rows,
            cols,
            cells,
            count,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of masked cells.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn get(&self, t: usize, d: usize) -> bool {
        self.cells[t * self.cols + d]
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    fn check(&self, op: &'static str, t: &Tensor) -> Result<()> {
        if t.shape() != [self.rows, self.cols] {
            return Err(Error::shape(op, &[self.rows, self.cols], t.shape()));
        }
        Ok(())
    }
}

/// Masks exactly `round(rate·M·D)` cells, chosen uniformly without replacement.
pub fn sample_mask(m: usize, d: usize, rate: f64, rng: &mut SeededRng) -> Result<MaskMatrix> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidArgument(format!("mask rate must be in (0,1), got {rate}")));
    }
    let total = m * d;
    let k = (rate * total as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "mask rate {rate} selects no cells of a {m}x{d} grid"
        )));
    }
    let mut cells = vec![false; total];
    for i in index::sample(rng, total, k) {
        cells[i] = true;
    }
    Ok(MaskMatrix {
        rows: m,
        cols: d,
        cells,
        count: k,
    })
}

/// Zeroes the masked cells; unmasked entries are copied unchanged.
pub fn corrupt(s: &Tensor, mask: &MaskMatrix) -> Result<Tensor> {
    mask.check("corrupt", s)?;
    let mut out = s.clone();
    for (v, &m) in out.data_mut().iter_mut().zip(&mask.cells) {
        if m {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Sum of squared errors over masked cells.
pub(crate) fn masked_sse(pred: &[f64], target: &[f64], cells: &[bool]) -> f64 {
    pred.iter()
        .zip(target)
        .zip(cells)
        .filter(|(_, &m)| m)
        .map(|((a, b), _)| (a - b) * (a - b))
        .sum()
}

/// Mean squared reconstruction error over the masked cells only.
pub fn msm_loss(s_hat: &Tensor, s: &Tensor, mask: &MaskMatrix) -> Result<f64> {
    mask.check("msm_loss", s_hat)?;
    mask.check("msm_loss", s)?;
    if mask.count == 0 {
        return Err(Error::InvalidArgument("msm_loss needs at least one masked cell".into()));
    }
    Ok(masked_sse(s_hat.data(), s.data(), &mask.cells) / mask.count as f64)
}
