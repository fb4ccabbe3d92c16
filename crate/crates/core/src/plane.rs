use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// One depth slice of RF data: rows are receive channels, columns are
/// transmit events (or scan lines). Dropped samples are carried as explicit
/// `missing` flags and hold the value 0.
#[derive(Debug, Clone, PartialEq)]
pub struct RxXmitPlane {
    values: DMatrix<f64>,
    missing: DMatrix<bool>,
}

impl RxXmitPlane {
    /// A fully measured plane.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        let missing = DMatrix::from_element(values.nrows(), values.ncols(), false);
        Self::with_missing(values, missing)
    }

    pub fn with_missing(mut values: DMatrix<f64>, missing: DMatrix<bool>) -> Result<Self> {
        if values.shape() != missing.shape() {
            return Err(Error::shape(
                format!("{:?}", values.shape()),
                format!("{:?}", missing.shape()),
            ));
        }
        for (v, &m) in values.iter_mut().zip(missing.iter()) {
            if m {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Numerical("non-finite measured sample".into()));
            }
        }
        Ok(RxXmitPlane { values, missing })
    }

    pub fn zeros(n1: usize, n2: usize) -> Self {
        RxXmitPlane {
            values: DMatrix::zeros(n1, n2),
            missing: DMatrix::from_element(n1, n2, false),
        }
    }

    pub fn from_fn(n1: usize, n2: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = DMatrix::from_fn(n1, n2, f);
        let missing = DMatrix::from_element(n1, n2, false);
        RxXmitPlane { values, missing }
    }

    pub fn n1(&self) -> usize {
        self.values.nrows()
    }

    pub fn n2(&self) -> usize {
        self.values.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn missing(&self) -> &DMatrix<bool> {
        &self.missing
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.missing[(i, j)]
    }

    pub fn has_missing(&self) -> bool {
        self.missing.iter().any(|&m| m)
    }

    pub fn measured_count(&self) -> usize {
        self.missing.iter().filter(|&&m| !m).count()
    }

    /// Frobenius norm of the stored values (missing entries are zero).
    pub fn norm(&self) -> f64 {
        self.values.norm()
    }

    /// Drop the missing flags, keeping zeros where samples were absent.
    pub fn zero_filled(&self) -> RxXmitPlane {
        RxXmitPlane {
            values: self.values.clone(),
            missing: DMatrix::from_element(self.n1(), self.n2(), false),
        }
    }
}
