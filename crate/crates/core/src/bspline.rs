//! Clamped cubic B-splines with equidistant interior knots.

use crate::error::{Error, Result};

pub const DEGREE: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
    n_basis: usize,
}

impl BSplineBasis {
    /// `n_basis` cubic functions on `[lo, hi]`; boundary knots repeated four times.
    pub fn new(lo: f64, hi: f64, n_basis: usize) -> Result<Self> {
        if n_basis < DEGREE + 1 {
            return Err(Error::Argument(format!(
                "a cubic B-spline basis needs at least 4 functions, got {n_basis}"
            )));
        }
        if !(lo.is_finite() && hi.is_finite() && hi > lo) {
            return Err(Error::Degenerate(format!("empty spline domain [{lo}, {hi}]")));
        }
        let intervals = n_basis - DEGREE;
        let mut knots = vec![lo; DEGREE + 1];
        for i in 1..intervals {
            knots.push(lo + (hi - lo) * i as f64 / intervals as f64);
        }
        knots.extend(std::iter::repeat_n(hi, DEGREE + 1));
        Ok(BSplineBasis { lo, hi, knots, n_basis })
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn span(&self, x: f64) -> usize {
        let last = self.n_basis - 1;
        if x >= self.hi {
            return last;
        }
        // knots[span] <= x < knots[span + 1]
        let upper = self.knots[DEGREE + 1..=last + 1].partition_point(|k| *k <= x);
        DEGREE + upper
    }

    /// Index of the first nonzero function and the four values at `x`,
    /// or `None` outside the domain.
    pub fn eval_local(&self, x: f64) -> Option<(usize, [f64; 4])> {
        if !(x >= self.lo && x <= self.hi) {
            return None;
        }
        let span = self.span(x);
        let u = &self.knots;
        let mut n = [0.0; 4];
        let mut left = [0.0; 4];
        let mut right = [0.0; 4];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = x - u[span + 1 - j];
            right[j] = u[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Some((span - DEGREE, n))
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n_basis];
        if let Some((first, vals)) = self.eval_local(x) {
            row[first..first + 4].copy_from_slice(&vals);
        }
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knot_vector_is_clamped() {
        let b = BSplineBasis::new(1.0, 52.0, 12).unwrap();
        assert_eq!(b.knots().len(), 16);
        assert_eq!(&b.knots()[..4], &[1.0; 4]);
        assert_eq!(&b.knots()[12..], &[52.0; 4]);
    }

    #[test]
    fn endpoints_interpolate() {
        let b = BSplineBasis::new(0.0, 1.0, 6).unwrap();
        assert_eq!(b.eval(0.0), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(b.eval(1.0), vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(b.eval(1.5).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn too_few_functions() {
        assert!(matches!(BSplineBasis::new(0.0, 1.0, 3), Err(Error::Argument(_))));
    }
}
