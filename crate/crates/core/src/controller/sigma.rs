//! Weights of the Lyapunov function from the second-order transition matrix.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::rmatrix::RMatrix;
use crate::error::{Error, Result};
use crate::tolerances;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaWeights {
    pub sigma: Vec<f64>,
    pub epsilon: f64,
    pub n_bar: usize,
    pub offset: f64,
    /// `R sigma` as solved, for diagnostics.
    pub lambda: Vec<f64>,
}

impl SigmaWeights {
    pub fn new(sigma: Vec<f64>, epsilon: f64, n_bar: usize) -> Result<Self> {
        if n_bar >= sigma.len() {
            return Err(Error::Index { index: n_bar, dim: sigma.len() });
        }
        if sigma.iter().any(|s| !(*s >= 0.0)) || sigma[n_bar] != 0.0 {
            return Err(Error::Sigma("weights must be nonnegative with sigma[n_bar] = 0".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::Sigma(format!("epsilon {epsilon} must be positive")));
        }
        let d = sigma.len();
        Ok(Self { sigma, epsilon, n_bar, offset: epsilon / 2.0, lambda: vec![f64::NAN; d] })
    }

    pub fn dim(&self) -> usize {
        self.sigma.len()
    }
}

fn reachable(adj: &[Vec<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    let mut stack = vec![start];
    seen[start] = true;
    while let Some(v) = stack.pop() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    seen
}

fn adjacency(r: &DMatrix<f64>) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let d = r.nrows();
    let mut fwd = vec![Vec::new(); d];
    let mut bwd = vec![Vec::new(); d];
    for i in 0..d {
        for j in 0..d {
            if i != j && r[(i, j)] != 0.0 {
                fwd[i].push(j);
                bwd[j].push(i);
            }
        }
    }
    (fwd, bwd)
}

/// Strongly connected class of `v` in the graph with an edge `i -> j` where `R[i,j] != 0`.
pub fn class_of(r: &DMatrix<f64>, v: usize) -> Vec<usize> {
    let (fwd, bwd) = adjacency(r);
    let a = reachable(&fwd, v);
    let b = reachable(&bwd, v);
    (0..r.nrows()).filter(|&i| a[i] && b[i]).collect()
}

pub fn strongly_connected(r: &DMatrix<f64>) -> bool {
    r.nrows() > 0 && class_of(r, 0).len() == r.nrows()
}

fn without(v: &[usize], skip: usize) -> Vec<usize> {
    v.iter().copied().filter(|&x| x != skip).collect()
}

/// Single-class solve on an index set: returns sigma (zero at `n_bar`) and lambda.
fn solve_on(r: &DMatrix<f64>, idx: &[usize], n_bar: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let rest = without(idx, n_bar);
    let k = rest.len();
    if k == 0 {
        return Ok((vec![0.0], vec![0.0]));
    }
    // left null vector: R^T e = 0 with e[n_bar] = 1
    let a = DMatrix::from_fn(k, k, |i, j| r[(rest[j], rest[i])]);
    let rhs = DVector::from_fn(k, |i, _| -r[(n_bar, rest[i])]);
    let e = a.lu().solve(&rhs).ok_or(Error::Singular)?;
    let lambda_bar: f64 = e.iter().sum();
    let red = DMatrix::from_fn(k, k, |i, j| r[(rest[i], rest[j])]);
    let sol = red.lu().solve(&DVector::from_element(k, -1.0)).ok_or(Error::Singular)?;
    let mut sigma = Vec::with_capacity(idx.len());
    let mut lambda = Vec::with_capacity(idx.len());
    let mut it = sol.iter();
    for &i in idx {
        if i == n_bar {
            sigma.push(0.0);
            lambda.push(lambda_bar);
        } else {
            sigma.push(*it.next().expect("one value per index"));
            lambda.push(-1.0);
        }
    }
    // componentwise backward error over the whole index set, including the n_bar row;
    // R spans many decades when utilities are sharply peaked, so an absolute residual is not attainable
    let mut worst: f64 = 0.0;
    for (row, &i) in idx.iter().enumerate() {
        let (v, mag) = idx
            .iter()
            .zip(&sigma)
            .fold((0.0, 0.0), |(v, mag), (&j, s)| (v + r[(i, j)] * s, mag + (r[(i, j)] * s).abs()));
        let err = (v - lambda[row]).abs() / (mag + lambda[row].abs()).max(1.0);
        worst = worst.max(err);
    }
    if worst > tolerances::SIGMA_RESIDUAL {
        return Err(Error::Sigma(format!("relative residual {worst:e} of R sigma = lambda")));
    }
    if let Some((i, s)) = idx.iter().zip(&sigma).find(|(&i, s)| i != n_bar && !(**s > 0.0)) {
        return Err(Error::Sigma(format!("sigma[{i}] = {s} is not positive")));
    }
    Ok((sigma, lambda))
}

/// Weights with `R sigma = lambda`, `lambda_r = -1` off the target.
///
/// Requires the graph of `R` to be strongly connected.
pub fn solve_sigma(r: &RMatrix, n_bar: usize) -> Result<SigmaWeights> {
    let d = r.dim();
    if n_bar >= d {
        return Err(Error::Index { index: n_bar, dim: d });
    }
    if !strongly_connected(&r.mat) {
        return Err(Error::NotStronglyConnected);
    }
    let idx: Vec<usize> = (0..d).collect();
    let (sigma, lambda) = solve_on(&r.mat, &idx, n_bar)?;
    let epsilon = default_epsilon(&sigma, n_bar).unwrap_or(1.0);
    let mut w = SigmaWeights::new(sigma, epsilon, n_bar)?;
    w.lambda = lambda;
    Ok(w)
}

fn default_epsilon(sigma: &[f64], n_bar: usize) -> Option<f64> {
    sigma.iter().enumerate().filter(|(i, _)| *i != n_bar).map(|(_, s)| *s).reduce(f64::min)
}

/// Weights for an `R` that splits into closed classes.
///
/// The class of the target is solved as in [`solve_sigma`]. Every other
/// class gets the constant weight `max + 2 eps`, which makes the
/// second-order drift vanish there; the fourth-order leakage into the
/// target class then lowers the linear part by more than the concave
/// part rises. `eps` is the smallest solved weight, capped at the unit
/// of `lambda` so that the gap to the outside weight stays small against
/// the second-order drift of the solved class.
pub fn solve_sigma_blockwise(r: &RMatrix, n_bar: usize) -> Result<SigmaWeights> {
    let d = r.dim();
    if n_bar >= d {
        return Err(Error::Index { index: n_bar, dim: d });
    }
    if strongly_connected(&r.mat) {
        return solve_sigma(r, n_bar);
    }
    let class = class_of(&r.mat, n_bar);
    let inside: Vec<bool> = (0..d).map(|i| class.contains(&i)).collect();
    for i in 0..d {
        for j in 0..d {
            if i != j && inside[i] != inside[j] && r.mat[(i, j)] != 0.0 {
                return Err(Error::NotStronglyConnected);
            }
        }
    }
    let (sub_sigma, sub_lambda) = solve_on(&r.mat, &class, n_bar)?;
    let (lo, hi) = sub_sigma
        .iter()
        .zip(&class)
        .filter(|(_, &i)| i != n_bar)
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), (s, _)| (lo.min(*s), hi.max(*s)));
    let epsilon = if lo.is_finite() { lo.min(1.0) } else { 0.5 };
    let outside = if lo.is_finite() { hi + 2.0 * epsilon } else { 1.0 };
    let mut sigma = vec![outside; d];
    let mut lambda = vec![0.0; d];
    for ((&i, s), l) in class.iter().zip(&sub_sigma).zip(&sub_lambda) {
        sigma[i] = *s;
        lambda[i] = *l;
    }
    let mut w = SigmaWeights::new(sigma, epsilon, n_bar)?;
    w.lambda = lambda;
    Ok(w)
}
