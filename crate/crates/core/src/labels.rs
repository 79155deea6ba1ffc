//! Label encoding shared by ground-truth, partial and blended targets.
//!
//! Entries are stored as `f64`: `+1` present, `-1` absent, `0` unknown, and
//! a soft target `t` in `(0, 1)` for blended entries.

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LabelValue {
    Positive,
    Negative,
    Unknown,
    Soft(f64),
}

impl LabelValue {
    pub fn from_f64(v: f64) -> Result<Self> {
        match v {
            1.0 => Ok(Self::Positive),
            -1.0 => Ok(Self::Negative),
            0.0 => Ok(Self::Unknown),
            t if t > 0.0 && t < 1.0 => Ok(Self::Soft(t)),
            other => Err(Error::Data(format!("invalid label value {other}"))),
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            Self::Positive => 1.0,
            Self::Negative => -1.0,
            Self::Unknown => 0.0,
            Self::Soft(t) => t,
        }
    }

    /// Cross-entropy target, or `None` for unknown entries.
    pub fn target(self) -> Option<f64> {
        match self {
            Self::Positive => Some(1.0),
            Self::Negative => Some(0.0),
            Self::Unknown => None,
            Self::Soft(t) => Some(t),
        }
    }

    /// Inverse of [`LabelValue::target`] for a convex-combined target.
    pub fn from_target(t: f64) -> Self {
        if t >= 1.0 {
            Self::Positive
        } else if t <= 0.0 {
            Self::Negative
        } else {
            Self::Soft(t)
        }
    }
}

/// Cross-entropy target of a raw encoded entry (`+1 -> 1`, `-1 -> 0`,
/// soft `t -> t`, unknown `-> 0` with zero weight).
pub fn target_of(v: f64) -> f64 {
    if v < 0.0 {
        0.0
    } else {
        v
    }
}

pub fn is_known(v: f64) -> bool {
    v != 0.0
}

/// Row-major `rows x cols` label matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl LabelMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Data(format!(
                "label matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        for &v in &values {
            LabelValue::from_f64(v)?;
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Data("ragged label rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    /// Cross-entropy targets as a flat vector.
    pub fn targets(&self) -> Vec<f64> {
        self.values.iter().map(|&v| target_of(v)).collect()
    }

    /// 1 at known or soft entries, 0 at unknown entries.
    pub fn weights(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(u8::from(is_known(v)))).collect()
    }

    pub fn known_count(&self) -> usize {
        self.values.iter().filter(|&&v| is_known(v)).count()
    }

    /// Selects a subset of rows in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let values = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self {
            rows: indices.len(),
            cols: self.cols,
            values,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_round_trips() {
        for v in [1.0, -1.0, 0.0, 0.25] {
            assert_eq!(LabelValue::from_f64(v).unwrap().to_f64(), v);
        }
        assert!(LabelValue::from_f64(1.5).is_err());
        assert_eq!(LabelValue::Soft(0.3).target(), Some(0.3));
        assert_eq!(LabelValue::Unknown.target(), None);
    }

    #[test]
    fn weights_mask_unknown_entries() {
        let m = LabelMatrix::from_rows(&[vec![1.0, 0.0, -1.0], vec![0.5, 0.0, 0.0]]).unwrap();
        assert_eq!(m.weights(), vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.targets(), vec![1.0, 0.0, 0.0, 0.5, 0.0, 0.0]);
        assert_eq!(m.known_count(), 3);
    }
}
