//! Nature sampling, Bayesian sensors, interaction intervals and target selection.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad_model::check_simplex;
use crate::tolerances;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NatureModel {
    pub prior: Vec<f64>,
    /// `p(y | s)`, one row per state.
    pub likelihood_y: DMatrix<f64>,
    /// `p(z | s)`, one row per state.
    pub likelihood_z: DMatrix<f64>,
}

fn check_rows(name: &str, mat: &DMatrix<f64>, n: usize) -> Result<()> {
    if mat.nrows() != n || mat.ncols() == 0 {
        return Err(Error::Dimension(format!("{name} is {}x{}, need {n} rows", mat.nrows(), mat.ncols())));
    }
    for (i, row) in mat.row_iter().enumerate() {
        let v: Vec<f64> = row.iter().copied().collect();
        check_simplex(&v, tolerances::LIKELIHOOD_ROW)
            .map_err(|e| Error::InvalidParameter(format!("{name} row {i}: {e}")))?;
    }
    Ok(())
}

impl NatureModel {
    pub fn new(prior: Vec<f64>, likelihood_y: DMatrix<f64>, likelihood_z: DMatrix<f64>) -> Result<Self> {
        let nm = Self { prior, likelihood_y, likelihood_z };
        nm.validate()?;
        Ok(nm)
    }

    pub fn validate(&self) -> Result<()> {
        check_simplex(&self.prior, tolerances::LIKELIHOOD_ROW)?;
        let n = self.prior.len();
        check_rows("likelihood_y", &self.likelihood_y, n)?;
        check_rows("likelihood_z", &self.likelihood_z, n)
    }

    /// Uniform prior with noiseless sensors.
    pub fn identity(n: usize) -> Self {
        Self {
            prior: vec![1.0 / n as f64; n],
            likelihood_y: DMatrix::identity(n, n),
            likelihood_z: DMatrix::identity(n, n),
        }
    }

    /// Symmetric sensor that reports the true state with probability `1 - noise`.
    pub fn symmetric(n: usize, noise_y: f64, noise_z: f64) -> Result<Self> {
        let sym = |e: f64| {
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    1.0 - e
                } else if n > 1 {
                    e / (n - 1) as f64
                } else {
                    0.0
                }
            })
        };
        Self::new(vec![1.0 / n as f64; n], sym(noise_y), sym(noise_z))
    }

    pub fn n(&self) -> usize {
        self.prior.len()
    }
}

/// Inverse-CDF draw from a probability vector.
pub fn inverse_cdf(p: &[f64], draw: f64) -> usize {
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        if *pi <= 0.0 {
            continue;
        }
        acc += pi;
        if draw < acc {
            return i;
        }
    }
    p.iter().rposition(|x| *x > 0.0).unwrap_or(0)
}

pub fn sample_state<R: Rng + ?Sized>(nature: &NatureModel, rng: &mut R) -> usize {
    inverse_cdf(&nature.prior, rng.gen())
}

pub fn sample_observation<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    inverse_cdf(row, rng.gen())
}

pub fn bayes_update(belief: &[f64], likelihood: &[f64]) -> Result<Vec<f64>> {
    if belief.len() != likelihood.len() {
        return Err(Error::Dimension(format!("belief {} vs likelihood {}", belief.len(), likelihood.len())));
    }
    let mut post: Vec<f64> = belief.iter().zip(likelihood).map(|(b, l)| b * l).collect();
    let total: f64 = post.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    post.iter_mut().for_each(|x| *x /= total);
    Ok(post)
}

/// Likelihood of observing `symbol` under each state.
pub fn likelihood_column(mat: &DMatrix<f64>, symbol: usize) -> Vec<f64> {
    mat.column(symbol).iter().copied().collect()
}

/// Bayesian expected utility argmax; ties go to the smallest index.
pub fn target_action(beta: &[f64], zeta: &DMatrix<f64>) -> Result<usize> {
    if zeta.ncols() != beta.len() {
        return Err(Error::Dimension(format!("zeta has {} states, beta {}", zeta.ncols(), beta.len())));
    }
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for a in 0..zeta.nrows() {
        let v: f64 = (0..beta.len()).map(|s| zeta[(a, s)] * beta[s]).sum();
        if v > best_val {
            best = a;
            best_val = v;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TDistribution {
    support: Vec<u32>,
    probs: Vec<f64>,
}

impl TDistribution {
    pub fn new(support: Vec<u32>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidParameter("T distribution needs matching non-empty support and probs".into()));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) || support[0] == 0 {
            return Err(Error::InvalidParameter(format!(
                "T support {support:?} must be positive, sorted and distinct"
            )));
        }
        check_simplex(&probs, tolerances::SIMPLEX)?;
        Ok(Self { support, probs })
    }

    pub fn fixed(t: u32) -> Result<Self> {
        Self::new(vec![t], vec![1.0])
    }

    pub fn uniform(support: Vec<u32>) -> Result<Self> {
        let k = support.len().max(1);
        Self::new(support, vec![1.0 / k as f64; k])
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn max(&self) -> u32 {
        *self.support.last().expect("non-empty")
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support.iter().copied().zip(self.probs.iter().copied())
    }
}

pub fn sample_t<R: Rng + ?Sized>(tdist: &TDistribution, rng: &mut R) -> u32 {
    tdist.support[inverse_cdf(&tdist.probs, rng.gen())]
}
