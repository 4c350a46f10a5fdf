//! Dense complex matrices, density operators and the state-action basis.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tolerances;

pub type ComplexMatrix = DMatrix<Complex64>;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);
pub const I: Complex64 = Complex64::new(0.0, 1.0);

/// Shape of the joint state-action space. Flat indices are state-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub n: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BasisIndex {
    pub state: usize,
    pub action: usize,
    pub flat: usize,
}

impl Basis {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::InvalidParameter(format!("n = {n}, m = {m} must be positive")));
        }
        Ok(Self { n, m })
    }

    pub fn dim(&self) -> usize {
        self.n * self.m
    }

    pub fn index(&self, state: usize, action: usize) -> Result<BasisIndex> {
        if state >= self.n {
            return Err(Error::Index { index: state, dim: self.n });
        }
        if action >= self.m {
            return Err(Error::Index { index: action, dim: self.m });
        }
        Ok(BasisIndex { state, action, flat: state * self.m + action })
    }

    pub fn from_flat(&self, flat: usize) -> Result<BasisIndex> {
        if flat >= self.dim() {
            return Err(Error::Index { index: flat, dim: self.dim() });
        }
        Ok(BasisIndex { state: flat / self.m, action: flat % self.m, flat })
    }

    pub fn state_of(&self, flat: usize) -> usize {
        flat / self.m
    }

    pub fn action_of(&self, flat: usize) -> usize {
        flat % self.m
    }

    pub fn indices(&self) -> impl Iterator<Item = BasisIndex> + '_ {
        (0..self.dim()).map(move |flat| BasisIndex { state: flat / self.m, action: flat % self.m, flat })
    }

    /// Flat indices belonging to `action` across every state.
    pub fn action_block(&self, action: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).map(move |s| s * self.m + action)
    }
}

/// Projector onto the subspace `a (x) X`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub action: usize,
    pub mat: ComplexMatrix,
}

impl Projector {
    pub fn new(basis: &Basis, action: usize) -> Result<Self> {
        if action >= basis.m {
            return Err(Error::Index { index: action, dim: basis.m });
        }
        let d = basis.dim();
        let mut mat = ComplexMatrix::zeros(d, d);
        for r in basis.action_block(action) {
            mat[(r, r)] = ONE;
        }
        Ok(Self { action, mat })
    }

    pub fn all(basis: &Basis) -> Vec<Projector> {
        (0..basis.m).map(|a| Projector::new(basis, a).expect("action in range")).collect()
    }
}

/// Validated psychological state.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    mat: ComplexMatrix,
}

impl DensityOperator {
    pub fn new(mat: ComplexMatrix) -> Result<Self> {
        let rep = validate_density(&mat, 0.0)?;
        if rep.hermitian_defect > tolerances::HERMITIAN
            || rep.trace_defect > tolerances::TRACE
            || rep.min_eigenvalue < -tolerances::PSD
        {
            return Err(Error::InvalidDensity(rep.to_string()));
        }
        Ok(Self { mat })
    }

    /// Checks against a caller supplied tolerance instead of the defaults.
    pub fn with_tolerance(mat: ComplexMatrix, tol: f64) -> Result<Self> {
        let rep = validate_density(&mat, tol)?;
        if !rep.passed {
            return Err(Error::InvalidDensity(rep.to_string()));
        }
        Ok(Self { mat })
    }

    pub fn maximally_mixed(d: usize) -> Self {
        Self { mat: ComplexMatrix::identity(d, d) / Complex64::from(d as f64) }
    }

    pub fn pure_basis(d: usize, r: usize) -> Result<Self> {
        if r >= d {
            return Err(Error::Index { index: r, dim: d });
        }
        let mut mat = ComplexMatrix::zeros(d, d);
        mat[(r, r)] = ONE;
        Ok(Self { mat })
    }

    /// Diagonal state with the given populations.
    pub fn diagonal(pops: &[f64]) -> Result<Self> {
        let d = pops.len();
        let mut mat = ComplexMatrix::zeros(d, d);
        for (r, p) in pops.iter().enumerate() {
            mat[(r, r)] = Complex64::from(*p);
        }
        Self::new(mat)
    }

    pub fn mat(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_mat(self) -> ComplexMatrix {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|r| self.mat[(r, r)].re).collect()
    }
}

/// `<b_r| rho |b_r>`.
pub fn population(rho: &DensityOperator, r: usize) -> Result<f64> {
    if r >= rho.dim() {
        return Err(Error::Index { index: r, dim: rho.dim() });
    }
    let z = rho.mat[(r, r)];
    if z.im.abs() > tolerances::POPULATION_IMAG {
        return Err(Error::InvalidDensity(format!("diagonal entry {r} has imaginary part {}", z.im)));
    }
    Ok(z.re)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityReport {
    pub hermitian_defect: f64,
    pub trace_defect: f64,
    pub min_eigenvalue: f64,
    pub passed: bool,
}

impl std::fmt::Display for DensityReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "hermitian defect {:e}, trace defect {:e}, min eigenvalue {:e}",
            self.hermitian_defect, self.trace_defect, self.min_eigenvalue
        )
    }
}

pub fn validate_density(rho: &ComplexMatrix, tol: f64) -> Result<DensityReport> {
    if !rho.is_square() {
        return Err(Error::Dimension(format!("{}x{} is not square", rho.nrows(), rho.ncols())));
    }
    if rho.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Ok(DensityReport {
            hermitian_defect: f64::INFINITY,
            trace_defect: f64::INFINITY,
            min_eigenvalue: f64::NEG_INFINITY,
            passed: false,
        });
    }
    let hermitian_defect = frobenius_norm(&(rho - dagger(rho)));
    let trace_defect = (trace(rho) - ONE).norm();
    let min_eigenvalue = min_hermitian_eigenvalue(rho);
    let passed = hermitian_defect <= tol && trace_defect <= tol && min_eigenvalue >= -tol;
    Ok(DensityReport { hermitian_defect, trace_defect, min_eigenvalue, passed })
}

/// Smallest eigenvalue of the Hermitian part of `a`.
pub fn min_hermitian_eigenvalue(a: &ComplexMatrix) -> f64 {
    let h = (a + dagger(a)) * Complex64::from(0.5);
    h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

fn check_same(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<()> {
    if a.shape() != b.shape() || !a.is_square() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn commutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same(a, b)?;
    Ok(a * b - b * a)
}

pub fn anticommutator(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix> {
    check_same(a, b)?;
    Ok(a * b + b * a)
}

pub fn frobenius_norm(a: &ComplexMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(a: &ComplexMatrix) -> Complex64 {
    a.diagonal().iter().sum()
}

pub fn dagger(a: &ComplexMatrix) -> ComplexMatrix {
    a.adjoint()
}

/// Spectral norm bound used for smoothness scans (max absolute row sum).
pub fn inf_norm(a: &ComplexMatrix) -> f64 {
    a.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

pub fn is_diagonal(a: &ComplexMatrix, tol: f64) -> bool {
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            if i != j && a[(i, j)].norm() > tol {
                return false;
            }
        }
    }
    true
}

pub fn real_to_complex(a: &DMatrix<f64>) -> ComplexMatrix {
    a.map(Complex64::from)
}
