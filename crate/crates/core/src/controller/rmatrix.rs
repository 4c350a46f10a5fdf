//! Second-order transition matrix between basis states at u = 0.

use nalgebra::DMatrix;

use super::derivatives::ChannelDerivatives;
use crate::error::{Error, Result};
use crate::tolerances;

#[derive(Debug, Clone, PartialEq)]
pub struct RMatrix {
    pub mat: DMatrix<f64>,
    pub trace: f64,
}

impl RMatrix {
    /// Wraps a matrix after checking the rate-matrix invariants.
    pub fn new(mat: DMatrix<f64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::Dimension("R must be square".into()));
        }
        let scale = mat.amax();
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::RMatrix(format!("degenerate R (max |entry| = {scale})")));
        }
        let d = mat.nrows();
        for i in 0..d {
            for j in 0..d {
                if i != j && mat[(i, j)] < -tolerances::R_OFFDIAG * scale {
                    return Err(Error::RMatrix(format!("negative off-diagonal R[{i},{j}] = {}", mat[(i, j)])));
                }
            }
            let rs = mat.row(i).sum();
            if rs.abs() > tolerances::R_ROW_SUM * scale.max(1.0) {
                return Err(Error::RMatrix(format!("row {i} sums to {rs}")));
            }
        }
        let trace = mat.trace();
        Ok(Self { mat, trace })
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    /// `I - R / Tr(R)`, row-stochastic when the invariants hold.
    pub fn stochastic(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.mat / self.trace
    }

    /// Largest deviation of a row sum of [`RMatrix::stochastic`] from one.
    pub fn stochastic_defect(&self) -> f64 {
        self.stochastic().row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Probability-weighted average, used when T is random.
    pub fn mixture(parts: &[(f64, RMatrix)]) -> Result<Self> {
        let d = parts.first().ok_or_else(|| Error::RMatrix("empty mixture".into()))?.1.dim();
        let mut acc = DMatrix::zeros(d, d);
        for (w, r) in parts {
            acc += &r.mat * *w;
        }
        Self::new(acc)
    }
}

/// `R[n1,n2] = sum_mu 2|<n2|M'_mu|n1>|^2 + 2 delta Re(conj(c_mu,n1) <n1|M''_mu|n1>)`.
///
/// `R[n1, n2]` is the second u-derivative of the probability of moving from
/// basis state `n1` to `n2` in one round.
pub fn build_r(derivs: &ChannelDerivatives) -> Result<RMatrix> {
    RMatrix::new(lemma_matrix(derivs)?)
}

/// The matrix of [`build_r`] before the invariant checks.
pub fn lemma_matrix(derivs: &ChannelDerivatives) -> Result<DMatrix<f64>> {
    let d = derivs.members.first().ok_or_else(|| Error::RMatrix("empty operator family".into()))?.m0.nrows();
    let mut r = DMatrix::zeros(d, d);
    for mem in &derivs.members {
        for n1 in 0..d {
            for n2 in 0..d {
                r[(n1, n2)] += 2.0 * mem.d1[(n2, n1)].norm_sqr();
            }
            let c = mem.m0[(n1, n1)];
            r[(n1, n1)] += 2.0 * (c.conj() * mem.d2[(n1, n1)]).re;
        }
    }
    Ok(r)
}
