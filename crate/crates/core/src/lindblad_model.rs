//! Controlled Lindbladian, its Euler Kraus discretisation and the action
//! measurement that closes each interaction round.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantum_core::{dagger, frobenius_norm, Basis, ComplexMatrix, DensityOperator, I, ONE, ZERO};
use crate::tolerances;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub n: usize,
    pub m: usize,
    pub phi1: f64,
    pub phi2: f64,
    /// Exponent in `phi3 = u^(2l)`.
    pub l: u32,
    /// Objective utilities, `m x n` (rows are actions, columns are states).
    pub zeta: DMatrix<f64>,
    pub dt: f64,
    pub u_bar: f64,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        Basis::new(self.n, self.m)?;
        if self.zeta.nrows() != self.m || self.zeta.ncols() != self.n {
            return Err(Error::Dimension(format!(
                "zeta is {}x{}, expected {}x{}",
                self.zeta.nrows(),
                self.zeta.ncols(),
                self.m,
                self.n
            )));
        }
        if !(0.0..=1.0).contains(&self.phi1) {
            return Err(Error::InvalidParameter(format!("phi1 = {} outside [0, 1]", self.phi1)));
        }
        if !(self.phi2 >= 0.0 && self.phi2.is_finite()) {
            return Err(Error::InvalidParameter(format!("phi2 = {} must be >= 0", self.phi2)));
        }
        if self.l < 2 {
            return Err(Error::InvalidParameter(format!("l = {} must be >= 2", self.l)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt = {} must be > 0", self.dt)));
        }
        if !(self.u_bar > 0.0 && self.u_bar <= 1.0) {
            return Err(Error::InvalidParameter(format!("u_bar = {} must lie in (0, 1]", self.u_bar)));
        }
        Ok(())
    }

    pub fn basis(&self) -> Basis {
        Basis { n: self.n, m: self.m }
    }
}

/// Model parameters together with the derived subjective utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub theta: DMatrix<f64>,
    pub basis: Basis,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let theta = subjective_utility(&params.zeta, params.phi2)?;
        let basis = params.basis();
        Ok(Self { params, theta, basis })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn hamiltonian(&self, u: ControlInput) -> ComplexMatrix {
        hamiltonian(&self.params, u)
    }

    pub fn cognitive(&self, alpha: &Posterior, u: ControlInput, phi3_override: Option<f64>) -> Result<DMatrix<f64>> {
        cognitive_matrix(&self.theta, alpha, u, &self.params, phi3_override)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posterior(Vec<f64>);

impl Posterior {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs, tolerances::SIMPLEX)?;
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, k: usize) -> Result<Self> {
        if k >= n {
            return Err(Error::Index { index: k, dim: n });
        }
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        Ok(Self(v))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn check_simplex(p: &[f64], tol: f64) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidParameter("empty probability vector".into()));
    }
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidParameter(format!("negative or non-finite probability in {p:?}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::InvalidParameter(format!("probabilities sum to {s}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct ControlInput(f64);

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput(0.0);

    pub fn new(u: f64, u_bar: f64) -> Result<Self> {
        if !u.is_finite() || u.abs() > u_bar {
            return Err(Error::InvalidParameter(format!("control {u} outside [-{u_bar}, {u_bar}]")));
        }
        Ok(Self(u))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// `theta[i, j] = zeta(a_i, E_j)^phi2 / sum_i zeta(a_i, E_j)^phi2`.
pub fn subjective_utility(zeta: &DMatrix<f64>, phi2: f64) -> Result<DMatrix<f64>> {
    if let Some(bad) = zeta.iter().find(|z| !(**z > 0.0 && z.is_finite())) {
        return Err(Error::InvalidParameter(format!("zeta entry {bad} must be positive")));
    }
    let mut theta = zeta.clone();
    for mut col in theta.column_iter_mut() {
        let top = col.max();
        // exponentiate relative to the column maximum so large phi2 cannot overflow
        for z in col.iter_mut() {
            *z = (phi2 * (*z / top).ln()).exp();
        }
        let s = col.sum();
        col /= s;
        if col.iter().any(|t| *t <= 0.0) {
            return Err(Error::InvalidParameter("subjective utility underflowed to zero".into()));
        }
    }
    Ok(theta)
}

fn f_of(u: f64) -> f64 {
    u * u
}

/// `J` minus `(m + n - 2) I`, the u^2 coefficient of the Hamiltonian.
pub fn hamiltonian_u2_coefficient(basis: &Basis) -> DMatrix<f64> {
    let d = basis.dim();
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            -((basis.m + basis.n) as f64 - 2.0)
        } else if basis.state_of(i) == basis.state_of(j) || basis.action_of(i) == basis.action_of(j) {
            1.0
        } else {
            0.0
        }
    })
}

pub fn hamiltonian_real(basis: &Basis, u: f64) -> DMatrix<f64> {
    let f = f_of(u);
    let z = (basis.m + basis.n) as f64 - 3.0;
    let z = z * f + 1.0;
    let d = basis.dim();
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            (1.0 - f) / z
        } else if basis.state_of(i) == basis.state_of(j) || basis.action_of(i) == basis.action_of(j) {
            f / z
        } else {
            0.0
        }
    })
}

pub fn hamiltonian(params: &ModelParams, u: ControlInput) -> ComplexMatrix {
    hamiltonian_real(&params.basis(), u.value()).map(Complex64::from)
}

/// Block diagonal utility comparison matrix; each block is row-stochastic.
pub fn pi_matrix(theta: &DMatrix<f64>, g: f64) -> Result<DMatrix<f64>> {
    let (m, n) = theta.shape();
    let d = n * m;
    let mut pi = DMatrix::zeros(d, d);
    for s in 0..n {
        for k in 0..m {
            let tk = theta[(k, s)];
            // tk + (1 - 2 tk) g with 1 - tk summed from the other entries, so a column
            // with tk rounding to 1 keeps a positive normaliser at g = 1
            let rest: f64 = (0..m).filter(|&l| l != k).map(|l| theta[(l, s)]).sum();
            let z = tk * (1.0 - g) + rest * g;
            if z <= 0.0 {
                return Err(Error::InvalidParameter(format!("z = {z} <= 0 in block {s}, row {k}")));
            }
            for l in 0..m {
                pi[(s * m + k, s * m + l)] = if k == l { tk * (1.0 - g) / z } else { theta[(l, s)] * g / z };
            }
        }
    }
    Ok(pi)
}

/// `B[(j,i),(j',i')] = alpha_j delta_{i,i'}`; columns sum to one.
pub fn b_matrix(alpha: &Posterior, m: usize) -> DMatrix<f64> {
    let n = alpha.len();
    let d = n * m;
    DMatrix::from_fn(d, d, |r, c| if r % m == c % m { alpha.probs()[r / m] } else { 0.0 })
}

pub fn phi3_of(u: f64, l: u32) -> f64 {
    u.abs().powi(2 * l as i32)
}

pub fn cognitive_matrix(
    theta: &DMatrix<f64>,
    alpha: &Posterior,
    u: ControlInput,
    params: &ModelParams,
    phi3_override: Option<f64>,
) -> Result<DMatrix<f64>> {
    if alpha.len() != params.n || theta.shape() != (params.m, params.n) {
        return Err(Error::Dimension("theta or alpha does not match (n, m)".into()));
    }
    let phi3 = match phi3_override {
        Some(p) if (0.0..=1.0).contains(&p) => p,
        Some(p) => return Err(Error::InvalidParameter(format!("phi3 override {p} outside [0, 1]"))),
        None => phi3_of(u.value(), params.l),
    };
    let g = f_of(u.value());
    let pi = pi_matrix(theta, g)?;
    let b = b_matrix(alpha, params.m);
    Ok(pi.transpose() * (1.0 - phi3) + b.transpose() * phi3)
}

/// Column sums of `C`, i.e. the total escape rate out of each basis state.
pub fn escape_rates(c: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(c.ncols(), c.column_iter().map(|col| col.sum()))
}

/// Right-hand side of the master equation for an arbitrary (not necessarily
/// valid) matrix argument.
pub fn lindblad_generator(
    rho: &ComplexMatrix,
    h: &ComplexMatrix,
    c: &DMatrix<f64>,
    phi1: f64,
) -> Result<ComplexMatrix> {
    let d = rho.nrows();
    if h.shape() != (d, d) || c.shape() != (d, d) || !rho.is_square() {
        return Err(Error::Dimension(format!("rho {:?}, H {:?}, C {:?}", rho.shape(), h.shape(), c.shape())));
    }
    let comm = h * rho - rho * h;
    let mut out = comm * (-I * (1.0 - phi1));
    if phi1 == 0.0 {
        return Ok(out);
    }
    let esc = escape_rates(c);
    for k in 0..d {
        let mut gain = 0.0;
        for j in 0..d {
            gain += c[(k, j)] * rho[(j, j)].re;
        }
        out[(k, k)] += Complex64::from(phi1 * gain);
    }
    for i in 0..d {
        for j in 0..d {
            out[(i, j)] -= rho[(i, j)] * (0.5 * phi1 * (esc[i] + esc[j]));
        }
    }
    Ok(out)
}

pub fn lindblad_apply(rho: &DensityOperator, h: &ComplexMatrix, c: &DMatrix<f64>, phi1: f64) -> Result<ComplexMatrix> {
    lindblad_generator(rho.mat(), h, c, phi1)
}

fn rk4_step(rho: &ComplexMatrix, h: &ComplexMatrix, c: &DMatrix<f64>, phi1: f64, step: f64) -> Result<ComplexMatrix> {
    let half = Complex64::from(step / 2.0);
    let full = Complex64::from(step);
    let k1 = lindblad_generator(rho, h, c, phi1)?;
    let k2 = lindblad_generator(&(rho + &k1 * half), h, c, phi1)?;
    let k3 = lindblad_generator(&(rho + &k2 * half), h, c, phi1)?;
    let k4 = lindblad_generator(&(rho + &k3 * full), h, c, phi1)?;
    Ok(rho + (k1 + k2 * Complex64::from(2.0) + k3 * Complex64::from(2.0) + k4) * Complex64::from(step / 6.0))
}

/// Fixed-step RK4 integrator of the master equation.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub h: ComplexMatrix,
    pub c: DMatrix<f64>,
    pub phi1: f64,
    pub step: f64,
}

impl Integrator {
    pub fn new(h: ComplexMatrix, c: DMatrix<f64>, phi1: f64) -> Self {
        let esc = escape_rates(&c).max();
        let rate = (1.0 - phi1) * 2.0 * crate::quantum_core::inf_norm(&h) + phi1 * 2.0 * esc.max(c.max());
        let step = if rate > 0.0 { (0.5 / rate).min(0.1) } else { 0.1 };
        Self { h, c, phi1, step }
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step = step;
        self
    }

    pub fn advance(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        rk4_step(rho, &self.h, &self.c, self.phi1, self.step)
    }

    pub fn residual(&self, rho: &ComplexMatrix) -> Result<f64> {
        Ok(frobenius_norm(&lindblad_generator(rho, &self.h, &self.c, self.phi1)?))
    }
}

/// Long-time state of the master equation, integrated from `I/nm`.
pub fn steady_state(
    model: &Model,
    alpha: &Posterior,
    u: ControlInput,
    phi3_override: Option<f64>,
) -> Result<DensityOperator> {
    let h = model.hamiltonian(u);
    let c = model.cognitive(alpha, u, phi3_override)?;
    let integ = Integrator::new(h, c, model.params.phi1);
    let d = model.dim();
    let mut rho = DensityOperator::maximally_mixed(d).into_mat();
    let mut residual = integ.residual(&rho)?;
    let mut steps = 0;
    while residual > tolerances::STEADY_RESIDUAL {
        if steps >= tolerances::STEADY_MAX_STEPS {
            return Err(Error::NoSteadyState { steps, residual });
        }
        for _ in 0..50 {
            rho = integ.advance(&rho)?;
        }
        steps += 50;
        residual = integ.residual(&rho)?;
    }
    // remove round-off drift in trace and hermiticity
    let herm = (&rho + dagger(&rho)) * Complex64::from(0.5);
    let tr = crate::quantum_core::trace(&herm);
    DensityOperator::new(herm / tr)
}

/// One rank-one jump `amplitude |target><source|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Jump {
    pub source: usize,
    pub target: usize,
    pub amplitude: f64,
}

impl Jump {
    pub fn operator(&self, d: usize) -> ComplexMatrix {
        let mut k = ComplexMatrix::zeros(d, d);
        k[(self.target, self.source)] = Complex64::from(self.amplitude);
        k
    }
}

/// A quantum channel acting on density matrices.
pub trait Channel: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix;
}

/// Euler discretisation over one interaction round of `T` steps.
#[derive(Debug, Clone)]
pub struct TStepKrausSet {
    pub k0: ComplexMatrix,
    pub jumps: Vec<Jump>,
    pub t: u32,
    pub u: ControlInput,
    /// `C` in `||sum K^dagger K - I||_F <= C (T dt)^2`.
    pub residual_constant: f64,
    pub tau: f64,
}

pub fn kraus_set(model: &Model, alpha: &Posterior, u: ControlInput, t: u32) -> Result<TStepKrausSet> {
    kraus_set_with(model, alpha, u, t, None)
}

pub fn kraus_set_with(
    model: &Model,
    alpha: &Posterior,
    u: ControlInput,
    t: u32,
    phi3_override: Option<f64>,
) -> Result<TStepKrausSet> {
    if t == 0 {
        return Err(Error::InvalidParameter("T must be positive".into()));
    }
    let p = &model.params;
    let tau = t as f64 * p.dt;
    let c = model.cognitive(alpha, u, phi3_override)?;
    let gamma_max = c.max();
    let load = tau * p.phi1 * gamma_max;
    if load >= tolerances::EULER_STABILITY {
        return Err(Error::Stability(load));
    }
    let d = model.dim();
    let mut jumps = Vec::new();
    let mut esc = vec![0.0; d];
    for j in 0..d {
        for k in 0..d {
            let g = c[(k, j)];
            if g > tolerances::JUMP_PRUNE {
                esc[j] += g;
                if p.phi1 > 0.0 {
                    jumps.push(Jump { source: j, target: k, amplitude: (tau * p.phi1 * g).sqrt() });
                }
            }
        }
    }
    let h = model.hamiltonian(u);
    let mut gen = &h * (I * (1.0 - p.phi1));
    for j in 0..d {
        gen[(j, j)] += Complex64::from(0.5 * p.phi1 * esc[j]);
    }
    let residual_constant = frobenius_norm(&(dagger(&gen) * &gen));
    let k0 = ComplexMatrix::identity(d, d) - gen * Complex64::from(tau);
    Ok(TStepKrausSet { k0, jumps, t, u, residual_constant, tau })
}

impl TStepKrausSet {
    pub fn operators(&self) -> Vec<ComplexMatrix> {
        let d = self.k0.nrows();
        std::iter::once(self.k0.clone()).chain(self.jumps.iter().map(|j| j.operator(d))).collect()
    }

    pub fn completeness(&self) -> ComplexMatrix {
        let mut s = dagger(&self.k0) * &self.k0;
        for j in &self.jumps {
            s[(j.source, j.source)] += Complex64::from(j.amplitude * j.amplitude);
        }
        s
    }

    pub fn completeness_residual(&self) -> f64 {
        let d = self.k0.nrows();
        frobenius_norm(&(self.completeness() - ComplexMatrix::identity(d, d)))
    }

    pub fn residual_bound(&self) -> f64 {
        self.residual_constant * self.tau * self.tau
    }
}

impl Channel for TStepKrausSet {
    fn dim(&self) -> usize {
        self.k0.nrows()
    }

    fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut out = &self.k0 * rho * self.k0.adjoint();
        for j in &self.jumps {
            out[(j.target, j.target)] += rho[(j.source, j.source)] * (j.amplitude * j.amplitude);
        }
        out
    }
}

/// `T` single-step Euler channels composed in sequence.
#[derive(Debug, Clone)]
pub struct ComposedChannel {
    pub single: TStepKrausSet,
    pub steps: u32,
}

pub fn composed_channel(model: &Model, alpha: &Posterior, u: ControlInput, t: u32) -> Result<ComposedChannel> {
    Ok(ComposedChannel { single: kraus_set(model, alpha, u, 1)?, steps: t })
}

impl Channel for ComposedChannel {
    fn dim(&self) -> usize {
        self.single.dim()
    }

    fn apply(&self, rho: &ComplexMatrix) -> ComplexMatrix {
        let mut r = rho.clone();
        for _ in 0..self.steps {
            r = self.single.apply(&r);
        }
        r
    }
}

/// Unnormalised weight of each action block after the channel.
fn block_weights(basis: &Basis, evolved: &ComplexMatrix) -> Vec<f64> {
    let mut w = vec![0.0; basis.m];
    for r in 0..basis.dim() {
        w[basis.action_of(r)] += evolved[(r, r)].re;
    }
    w
}

pub fn action_distribution(basis: &Basis, rho: &DensityOperator, channel: &dyn Channel) -> Result<Vec<f64>> {
    let evolved = channel.apply(rho.mat());
    distribution_from(basis, &evolved).map(|(p, _)| p)
}

fn distribution_from(basis: &Basis, evolved: &ComplexMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = block_weights(basis, evolved);
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || w.iter().any(|x| !x.is_finite()) {
        return Err(Error::DegenerateWeight(total));
    }
    let mut p: Vec<f64> = w.iter().map(|x| (x / total).max(0.0)).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= s);
    Ok((p, w))
}

fn project(basis: &Basis, evolved: &ComplexMatrix, action: usize, weight: f64) -> ComplexMatrix {
    let d = basis.dim();
    ComplexMatrix::from_fn(d, d, |i, j| {
        if basis.action_of(i) == action && basis.action_of(j) == action {
            evolved[(i, j)] / weight
        } else {
            ZERO
        }
    })
}

fn finish_post(mat: ComplexMatrix) -> Result<DensityOperator> {
    let herm = (&mat + mat.adjoint()) * Complex64::from(0.5);
    DensityOperator::with_tolerance(herm, tolerances::POST_MEASURE)
}

/// Samples an action by inverse CDF and returns the collapsed state.
pub fn measure(
    basis: &Basis,
    rho: &DensityOperator,
    channel: &dyn Channel,
    draw: f64,
) -> Result<(usize, DensityOperator)> {
    let evolved = channel.apply(rho.mat());
    let (p, w) = distribution_from(basis, &evolved)?;
    let mut acc = 0.0;
    let mut action = None;
    for (a, pa) in p.iter().enumerate() {
        if *pa <= 0.0 {
            continue;
        }
        acc += pa;
        if draw < acc {
            action = Some(a);
            break;
        }
    }
    // draw may exceed the rounded cumulative sum by an ulp
    let action = action.unwrap_or_else(|| p.iter().rposition(|x| *x > 0.0).expect("some positive weight"));
    let post = finish_post(project(basis, &evolved, action, w[action]))?;
    Ok((action, post))
}

/// Every outcome with its probability, for exact expectations.
pub fn outcomes(
    basis: &Basis,
    rho: &DensityOperator,
    channel: &dyn Channel,
) -> Result<Vec<(f64, Option<DensityOperator>)>> {
    let evolved = channel.apply(rho.mat());
    let (p, w) = distribution_from(basis, &evolved)?;
    p.iter()
        .enumerate()
        .map(
            |(a, pa)| {
                if *pa > 0.0 {
                    Ok((*pa, Some(finish_post(project(basis, &evolved, a, w[a]))?)))
                } else {
                    Ok((0.0, None))
                }
            },
        )
        .collect()
}

/// Populations after the channel and the block weights, without forming post states.
pub fn evolved_populations(rho: &ComplexMatrix, channel: &dyn Channel) -> Vec<f64> {
    let e = channel.apply(rho);
    (0..e.nrows()).map(|r| e[(r, r)].re).collect()
}

pub fn identity(d: usize) -> ComplexMatrix {
    ComplexMatrix::from_diagonal_element(d, d, ONE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum_core::{is_diagonal, population, trace, validate_density};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn zeta_from(seed: u64, m: usize, n: usize) -> DMatrix<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.gen_range(0.5..10.0))
    }

    fn model(n: usize, m: usize, phi1: f64, phi2: f64, seed: u64) -> Model {
        Model::new(ModelParams { n, m, phi1, phi2, l: 2, zeta: zeta_from(seed, m, n), dt: 0.01, u_bar: 1.0 }).unwrap()
    }

    fn random_density(seed: u64, d: usize) -> DensityOperator {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = ComplexMatrix::from_fn(d, d, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let g = &a * a.adjoint();
        DensityOperator::new(&g / trace(&g)).unwrap()
    }

    #[test]
    fn subjective_utility_examples() {
        let z = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 1.0, 4.0]);
        let t0 = subjective_utility(&z, 0.0).unwrap();
        assert!(t0.iter().all(|x| (x - 0.5).abs() < 1e-15));
        let t1 = subjective_utility(&z, 1.0).unwrap();
        assert!((t1[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t1[(1, 0)] - 1.0 / 3.0).abs() < 1e-15);
        let col = DMatrix::from_row_slice(2, 1, &[2.0, 1.0]);
        let big = subjective_utility(&col, 1000.0);
        // 2^-1000 underflows: only the dominant action survives
        match big {
            Ok(t) => assert!((t[(0, 0)] - 1.0).abs() < 1e-12),
            Err(Error::InvalidParameter(_)) => {}
            Err(e) => panic!("{e}"),
        }
        let t100 = subjective_utility(&col, 100.0).unwrap();
        assert!((t100[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(subjective_utility(&DMatrix::from_row_slice(1, 1, &[0.0]), 1.0).is_err());
    }

    #[test]
    fn hamiltonian_examples() {
        let p = model(2, 3, 0.5, 1.0, 0).params;
        let h0 = hamiltonian_real(&p.basis(), 0.0);
        assert_eq!(h0, DMatrix::identity(6, 6));
        let h = hamiltonian_real(&p.basis(), 0.5);
        assert!((h[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((h[(0, 1)] - 1.0 / 6.0).abs() < 1e-15);
        assert!((h[(0, 3)] - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(h[(0, 4)], 0.0);
        assert_eq!(h, h.transpose());
        for i in 0..=100 {
            let u = -1.0 + 0.02 * i as f64;
            let h = hamiltonian_real(&p.basis(), u);
            for r in h.row_iter() {
                assert!((r.sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cognitive_matrix_examples() {
        let md = model(2, 3, 0.5, 2.0, 3);
        let alpha = Posterior::new(vec![0.3, 0.7]).unwrap();
        let c0 = md.cognitive(&alpha, ControlInput::ZERO, None).unwrap();
        assert_eq!(c0, DMatrix::identity(6, 6));
        let one = ControlInput::new(1.0, 1.0).unwrap();
        let c1 = md.cognitive(&alpha, one, None).unwrap();
        let bt = b_matrix(&alpha, 3).transpose();
        assert!((c1.clone() - &bt).abs().max() < 1e-15);
        for r in bt.row_iter() {
            assert!((r.sum() - 1.0).abs() < 1e-15);
        }
        for i in 1..=20 {
            let g = i as f64 / 20.0;
            let pi = pi_matrix(&md.theta, g).unwrap();
            for r in pi.row_iter() {
                assert!((r.sum() - 1.0).abs() < 1e-12);
            }
            let c = md.cognitive(&alpha, ControlInput::new(g.sqrt(), 1.0).unwrap(), None).unwrap();
            assert!(c.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn b_matrix_links_identical_actions() {
        let alpha = Posterior::new(vec![0.25, 0.75]).unwrap();
        let b = b_matrix(&alpha, 2);
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.25, 0.0, 0.25, 0.0, //
                0.0, 0.25, 0.0, 0.25, //
                0.75, 0.0, 0.75, 0.0, //
                0.0, 0.75, 0.0, 0.75,
            ],
        );
        assert_eq!(b, expect);
        for col in b.column_iter() {
            assert!((col.sum() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lindblad_apply_examples() {
        let md = model(2, 2, 0.4, 3.0, 1);
        let alpha = Posterior::uniform(2);
        let h = md.hamiltonian(ControlInput::ZERO);
        let c = md.cognitive(&alpha, ControlInput::ZERO, None).unwrap();
        let mixed = DensityOperator::maximally_mixed(4);
        assert!(frobenius_norm(&lindblad_apply(&mixed, &h, &c, 0.4).unwrap()) < 1e-15);

        let u = ControlInput::new(0.6, 1.0).unwrap();
        let h = md.hamiltonian(u);
        let c = md.cognitive(&alpha, u, None).unwrap();
        for seed in 0..20 {
            let rho = random_density(seed, 4);
            let out = lindblad_apply(&rho, &h, &c, 0.4).unwrap();
            assert!(trace(&out).norm() < 1e-10);
            assert!(frobenius_norm(&(&out - out.adjoint())) < 1e-12);
            let other = md.hamiltonian(ControlInput::new(0.1, 1.0).unwrap());
            let a = lindblad_apply(&rho, &h, &c, 1.0).unwrap();
            let b = lindblad_apply(&rho, &other, &c, 1.0).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn dissipator_matches_explicit_jump_sum() {
        // independent route: build every L_kj densely and sum the textbook terms
        let md = model(2, 2, 0.7, 2.0, 5);
        let alpha = Posterior::new(vec![0.6, 0.4]).unwrap();
        let u = ControlInput::new(0.8, 1.0).unwrap();
        let h = md.hamiltonian(u);
        let c = md.cognitive(&alpha, u, None).unwrap();
        let rho = random_density(11, 4);
        let fast = lindblad_apply(&rho, &h, &c, 0.7).unwrap();
        let r = rho.mat();
        let mut slow = (&h * r - r * &h) * (-I * 0.3);
        for k in 0..4 {
            for j in 0..4 {
                let mut l = ComplexMatrix::zeros(4, 4);
                l[(k, j)] = ONE;
                let ll = l.adjoint() * &l;
                let term = &l * r * l.adjoint() - (&ll * r + r * &ll) * Complex64::from(0.5);
                slow += term * Complex64::from(0.7 * c[(k, j)]);
            }
        }
        assert!(frobenius_norm(&(fast - slow)) < 1e-14);
    }

    #[test]
    fn steady_state_examples() {
        let md = model(2, 2, 1.0, 2.0, 2);
        let alpha = Posterior::uniform(2);
        let ss = steady_state(&md, &alpha, ControlInput::ZERO, None).unwrap();
        assert!(frobenius_norm(&(ss.mat() - DensityOperator::maximally_mixed(4).mat())) < 1e-12);

        let md = model(2, 2, 0.5, 2.0, 2);
        let u = ControlInput::new(0.5, 1.0).unwrap();
        let alpha = Posterior::new(vec![0.3, 0.7]).unwrap();
        let ss = steady_state(&md, &alpha, u, Some(0.4)).unwrap();
        let h = md.hamiltonian(u);
        let c = md.cognitive(&alpha, u, Some(0.4)).unwrap();
        assert!(frobenius_norm(&lindblad_apply(&ss, &h, &c, 0.5).unwrap()) <= 1e-9);
    }

    #[test]
    fn kraus_set_is_diagonal_at_zero_control() {
        let md = model(2, 4, 0.8, 10.0, 4);
        let alpha = Posterior::one_hot(2, 0).unwrap();
        let ks = kraus_set(&md, &alpha, ControlInput::ZERO, 10).unwrap();
        for k in ks.operators() {
            assert!(is_diagonal(&k, 0.0));
        }
        assert_eq!(ks.jumps.len(), 8);
    }

    #[test]
    fn kraus_completeness_is_quadratic() {
        let md = model(2, 2, 0.6, 3.0, 8);
        let alpha = Posterior::new(vec![0.2, 0.8]).unwrap();
        let u = ControlInput::new(0.7, 1.0).unwrap();
        let ks = kraus_set(&md, &alpha, u, 5).unwrap();
        assert!(ks.completeness_residual() <= ks.residual_bound() * (1.0 + 1e-12));
        let mut half = md.clone();
        half.params.dt /= 2.0;
        let ks2 = kraus_set(&half, &alpha, u, 5).unwrap();
        let ratio = ks.completeness_residual() / ks2.completeness_residual();
        assert!((ratio - 4.0).abs() < 1e-6, "ratio {ratio}");
    }

    #[test]
    fn kraus_k0_is_linear_in_t() {
        let md = model(2, 3, 0.5, 2.0, 6);
        let alpha = Posterior::uniform(2);
        let u = ControlInput::new(0.3, 1.0).unwrap();
        let k1 = kraus_set(&md, &alpha, u, 1).unwrap();
        let k7 = kraus_set(&md, &alpha, u, 7).unwrap();
        let id = identity(6);
        let g = (&id - &k1.k0) / Complex64::from(md.params.dt);
        let expect = &id - g * Complex64::from(7.0 * md.params.dt);
        assert!(frobenius_norm(&(k7.k0 - expect)) < 1e-13);
    }

    #[test]
    fn kraus_stability_guard() {
        let mut md = model(2, 2, 1.0, 1.0, 0);
        md.params.dt = 0.1;
        let alpha = Posterior::uniform(2);
        assert!(matches!(kraus_set(&md, &alpha, ControlInput::ZERO, 10), Err(Error::Stability(_))));
    }

    #[test]
    fn action_distribution_at_zero_control() {
        let md = model(2, 4, 0.8, 10.0, 1);
        let alpha = Posterior::one_hot(2, 1).unwrap();
        let ks = kraus_set(&md, &alpha, ControlInput::ZERO, 10).unwrap();
        let tol = (ks.tau * 0.8 * 1.0_f64).powi(2);
        let p = action_distribution(&md.basis, &DensityOperator::maximally_mixed(8), &ks).unwrap();
        for pa in &p {
            assert!((pa - 0.25).abs() <= tol);
        }
        assert_eq!(p.iter().sum::<f64>(), 1.0);
        let pure = DensityOperator::pure_basis(8, 6).unwrap();
        let p = action_distribution(&md.basis, &pure, &ks).unwrap();
        assert!(p[2] >= 1.0 - tol);
    }

    #[test]
    fn measure_examples() {
        let md = model(2, 2, 0.5, 2.0, 9);
        let alpha = Posterior::uniform(2);
        let u = ControlInput::new(0.4, 1.0).unwrap();
        let ks = kraus_set(&md, &alpha, u, 10).unwrap();
        let rho = random_density(3, 4);
        let (a, post) = measure(&md.basis, &rho, &ks, 0.0).unwrap();
        assert_eq!(a, 0);
        let again = measure(&md.basis, &rho, &ks, 0.0).unwrap();
        assert_eq!(again.1, post);
        let (a, post) = measure(&md.basis, &rho, &ks, 0.999).unwrap();
        assert_eq!(a, 1);
        for r in md.basis.action_block(0) {
            assert!(population(&post, r).unwrap().abs() <= 1e-12);
        }
        assert!(validate_density(post.mat(), 1e-8).unwrap().passed);
    }

    #[test]
    fn substep_channel_is_close_to_single_step() {
        let md = model(2, 2, 0.5, 2.0, 9);
        let alpha = Posterior::uniform(2);
        let u = ControlInput::new(0.4, 1.0).unwrap();
        let one = kraus_set(&md, &alpha, u, 10).unwrap();
        let many = composed_channel(&md, &alpha, u, 10).unwrap();
        let rho = random_density(5, 4);
        let a = one.apply(rho.mat());
        let b = many.apply(rho.mat());
        // both approximate exp(T dt L); they differ at second order in T dt
        assert!(frobenius_norm(&(a - b)) < 0.05);
    }

    proptest! {
        #[test]
        fn channel_preserves_density_set(seed in 0u64..1000, u in -1.0f64..1.0, t in 1u32..15) {
            let md = model(2, 2, 0.6, 4.0, seed % 7);
            let alpha = Posterior::new(vec![0.35, 0.65]).unwrap();
            let ks = kraus_set(&md, &alpha, ControlInput::new(u, 1.0).unwrap(), t).unwrap();
            let rho = random_density(seed, 4);
            for draw in [0.1, 0.5, 0.9] {
                let (_, post) = measure(&md.basis, &rho, &ks, draw).unwrap();
                prop_assert!(validate_density(post.mat(), 1e-8).unwrap().passed);
            }
        }

        #[test]
        fn lindbladian_traceless_hermitian(seed in 0u64..1000, u in -1.0f64..1.0, phi1 in 0.0f64..1.0) {
            let md = model(2, 3, phi1, 5.0, seed % 5);
            let alpha = Posterior::new(vec![0.5, 0.5]).unwrap();
            let cu = ControlInput::new(u, 1.0).unwrap();
            let h = md.hamiltonian(cu);
            let c = md.cognitive(&alpha, cu, None).unwrap();
            let rho = random_density(seed, 6);
            let out = lindblad_apply(&rho, &h, &c, phi1).unwrap();
            prop_assert!(trace(&out).norm() <= 1e-10);
            prop_assert!(frobenius_norm(&(&out - out.adjoint())) <= 1e-12);
        }
    }
}
