//! u-derivatives at zero of the measurement operator family `P_a K_nu S^{-1/2}`.
//!
//! `S = sum K^dagger K` is the completeness operator of the Euler set; the
//! right factor `S^{-1/2}` makes the family exactly complete so that the
//! transition probabilities between basis states sum to one for every u.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lindblad_model::{hamiltonian_u2_coefficient, kraus_set, ControlInput, Model, Posterior};
use crate::quantum_core::{ComplexMatrix, I, ZERO};

/// One operator of the family with its value and one-sided derivatives at u = 0.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub action: usize,
    pub m0: ComplexMatrix,
    pub d1: ComplexMatrix,
    pub d2: ComplexMatrix,
}

#[derive(Debug, Clone)]
pub struct ChannelDerivatives {
    pub t: u32,
    pub members: Vec<FamilyMember>,
}

/// Jumps that can carry weight for some u: same state or same action.
fn structural_jumps(model: &Model) -> Vec<(usize, usize)> {
    let b = model.basis;
    let d = b.dim();
    let mut out = Vec::new();
    for j in 0..d {
        for k in 0..d {
            if b.state_of(k) == b.state_of(j) || b.action_of(k) == b.action_of(j) {
                out.push((k, j));
            }
        }
    }
    out
}

fn inverse_sqrt_hermitian(s: &ComplexMatrix) -> Result<ComplexMatrix> {
    let eig = s.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter("completeness operator is not positive definite".into()));
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| Complex64::from(1.0 / v.sqrt())));
    let q = &eig.eigenvectors;
    Ok(q * inv * q.adjoint())
}

fn rank_one(d: usize, k: usize, j: usize, amp: f64) -> ComplexMatrix {
    let mut x = ComplexMatrix::zeros(d, d);
    x[(k, j)] = Complex64::from(amp);
    x
}

fn project_rows(model: &Model, x: &ComplexMatrix, action: usize) -> ComplexMatrix {
    let b = model.basis;
    let mut out = x.clone();
    for r in 0..b.dim() {
        if b.action_of(r) != action {
            out.row_mut(r).fill(ZERO);
        }
    }
    out
}

/// The family `(a, P_a K_nu S^{-1/2})` at a given control, with a fixed
/// operator ordering that does not depend on u.
pub fn normalized_family(model: &Model, alpha: &Posterior, u: f64, t: u32) -> Result<Vec<(usize, ComplexMatrix)>> {
    let p = &model.params;
    let d = model.dim();
    let tau = t as f64 * p.dt;
    let cu = ControlInput::new(u, p.u_bar)?;
    let c = model.cognitive(alpha, cu, None)?;
    let h = model.hamiltonian(cu);
    let jumps = structural_jumps(model);
    let mut esc = vec![0.0; d];
    for &(k, j) in &jumps {
        esc[j] += c[(k, j)];
    }
    let mut gen = &h * (I * (1.0 - p.phi1));
    for j in 0..d {
        gen[(j, j)] += Complex64::from(0.5 * p.phi1 * esc[j]);
    }
    let k0 = ComplexMatrix::identity(d, d) - gen * Complex64::from(tau);
    let mut s = k0.adjoint() * &k0;
    for j in 0..d {
        s[(j, j)] += Complex64::from(tau * p.phi1 * esc[j]);
    }
    let s_half = inverse_sqrt_hermitian(&s)?;
    let mut fam = Vec::with_capacity(p.m + jumps.len());
    let k0n = &k0 * &s_half;
    for a in 0..p.m {
        fam.push((a, project_rows(model, &k0n, a)));
    }
    for &(k, j) in &jumps {
        let amp = (tau * p.phi1 * c[(k, j)].max(0.0)).sqrt();
        fam.push((model.basis.action_of(k), rank_one(d, k, j, amp) * &s_half));
    }
    Ok(fam)
}

/// Forward three-point differences over `u in {0, h, 2h}`.
pub fn channel_derivatives(model: &Model, alpha: &Posterior, t: u32, h: f64) -> Result<ChannelDerivatives> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("step {h} must be positive")));
    }
    if 2.0 * h > model.params.u_bar {
        return Err(Error::StepTooLarge(format!("2h = {} exceeds the control bound", 2.0 * h)));
    }
    let far = ControlInput::new(2.0 * h, model.params.u_bar)?;
    let ks = kraus_set(model, alpha, far, t).map_err(|e| Error::StepTooLarge(e.to_string()))?;
    if ks.completeness_residual() > ks.residual_bound() * (1.0 + 1e-9) + 1e-15 {
        return Err(Error::StepTooLarge(format!("completeness residual {} at 2h", ks.completeness_residual())));
    }
    let f0 = normalized_family(model, alpha, 0.0, t)?;
    let f1 = normalized_family(model, alpha, h, t)?;
    let f2 = normalized_family(model, alpha, 2.0 * h, t)?;
    let members = f0
        .into_iter()
        .zip(f1)
        .zip(f2)
        .map(|(((a, x0), (_, x1)), (_, x2))| {
            let d1 = (&x0 * Complex64::from(-3.0) + &x1 * Complex64::from(4.0) - &x2) / Complex64::from(2.0 * h);
            let d2 = (&x0 - &x1 * Complex64::from(2.0) + &x2) / Complex64::from(h * h);
            FamilyMember { action: a, m0: x0, d1, d2 }
        })
        .collect();
    Ok(ChannelDerivatives { t, members })
}

/// Closed-form right derivatives at u = 0 of the same family.
///
/// Uses `H = I + u^2 H2 + O(u^4)`, `C = I + u^2 Pi2^T + O(u^4)` and the fact
/// that all escape rates equal one up to `O(u^4)` when `l >= 2`.
pub fn analytic_derivatives(model: &Model, alpha: &Posterior, t: u32) -> Result<ChannelDerivatives> {
    let p = &model.params;
    let b = model.basis;
    let d = b.dim();
    let tau = t as f64 * p.dt;
    let a0 = (tau * p.phi1).sqrt();
    let kappa = Complex64::new(1.0 - 0.5 * tau * p.phi1, -tau * (1.0 - p.phi1));
    let s0 = kappa.norm_sqr() + tau * p.phi1;
    let h2 = hamiltonian_u2_coefficient(&b).map(Complex64::from);
    let k0_2 = &h2 * (I * (-2.0 * tau * (1.0 - p.phi1)));
    let jumps = structural_jumps(model);

    // amplitude value, first and second right derivatives for each jump
    let amps: Vec<(f64, f64, f64)> = jumps
        .iter()
        .map(|&(k, j)| {
            let (sk, sj) = (b.state_of(k), b.state_of(j));
            let th = |r: usize| model.theta[(b.action_of(r), b.state_of(r))];
            if k == j {
                (a0, 0.0, -a0 * (1.0 - th(j)) / th(j))
            } else if sk == sj {
                (0.0, a0 * (th(k) / th(j)).sqrt(), 0.0)
            } else if p.l == 2 {
                (0.0, 0.0, 2.0 * a0 * alpha.probs()[sj].sqrt())
            } else {
                (0.0, 0.0, 0.0)
            }
        })
        .collect();

    // S'' = sum (K''^dagger K + 2 K'^dagger K' + K^dagger K'')
    let k0_0 = ComplexMatrix::identity(d, d) * kappa;
    let mut s2 = k0_2.adjoint() * &k0_0 + k0_0.adjoint() * &k0_2;
    for (&(_, j), &(v, v1, v2)) in jumps.iter().zip(&amps) {
        s2[(j, j)] += Complex64::from(2.0 * v2 * v + 2.0 * v1 * v1);
    }
    let inv0 = 1.0 / s0.sqrt();
    let inv2 = &s2 * Complex64::from(-0.5 * s0.powf(-1.5));

    let mut members = Vec::with_capacity(p.m + jumps.len());
    for a in 0..p.m {
        let m0 = project_rows(model, &(&k0_0 * Complex64::from(inv0)), a);
        let d2 = project_rows(model, &(&k0_2 * Complex64::from(inv0) + &k0_0 * &inv2), a);
        members.push(FamilyMember { action: a, m0, d1: ComplexMatrix::zeros(d, d), d2 });
    }
    for (&(k, j), &(v, v1, v2)) in jumps.iter().zip(&amps) {
        let m0 = rank_one(d, k, j, v * inv0);
        let d1 = rank_one(d, k, j, v1 * inv0);
        let d2 = rank_one(d, k, j, v2 * inv0) + rank_one(d, k, j, v) * &inv2;
        members.push(FamilyMember { action: b.action_of(k), m0, d1, d2 });
    }
    Ok(ChannelDerivatives { t, members })
}
