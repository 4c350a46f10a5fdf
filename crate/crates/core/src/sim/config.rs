//! JSON experiment configuration.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream, Stream};
use crate::error::{Error, Result};
use crate::lindblad_model::{Model, ModelParams, Posterior};
use crate::quantum_core::{ComplexMatrix, DensityOperator};
use crate::sensor::{NatureModel, TDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ZetaSpec {
    /// `m` rows (actions) of `n` utilities (states).
    Matrix(Vec<Vec<f64>>),
    /// `uniform_random(lo=0, hi=10, seed)`; a bare `seed` redraws per run, `seed=N` pins it.
    Random(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TLaw {
    Fixed(u32),
    Distribution { support: Vec<u32>, probs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSpec {
    Index(usize),
    Named(String),
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Named("auto".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NatureSpec {
    pub prior: Vec<f64>,
    pub likelihood_y: Vec<Vec<f64>>,
    pub likelihood_z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rho0Spec {
    Named(String),
    Pure { pure: usize },
    Populations { populations: Vec<f64> },
    Matrix { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
}

fn default_l() -> u32 {
    2
}
fn default_dt() -> f64 {
    0.01
}
fn default_u_bar() -> f64 {
    1.0
}
fn default_grid() -> usize {
    201
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub m: usize,
    pub phi1: f64,
    pub phi2: f64,
    #[serde(default = "default_l")]
    pub l: u32,
    pub zeta: ZetaSpec,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_law: TLaw,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub target: TargetSpec,
    #[serde(default)]
    pub nature: Option<NatureSpec>,
    #[serde(default)]
    pub phi3_sweep: Option<Vec<f64>>,
    #[serde(default = "default_u_bar")]
    pub u_bar: f64,
    /// Points of the control grid searched by the argmin.
    #[serde(default = "default_grid")]
    pub grid_points: usize,
    /// Fixed control held during uncontrolled experiments.
    #[serde(default)]
    pub coupling: Option<f64>,
    #[serde(default)]
    pub rho0: Option<Rho0Spec>,
    #[serde(default)]
    pub substep: bool,
    /// phi1 values for the STP surface (defaults to the single `phi1`).
    #[serde(default)]
    pub phi1_grid: Option<Vec<f64>>,
    /// Mixed posterior used as the uncertain condition of the STP surface.
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    /// Fixed phi3 for the oscillation experiment (defaults to `u^(2l)` of the coupling).
    #[serde(default)]
    pub phi3: Option<f64>,
    /// Continuous-time horizon of the oscillation experiment.
    #[serde(default)]
    pub horizon: Option<f64>,
}

fn parse_random(spec: &str) -> Result<(f64, f64, Option<u64>)> {
    let s: String = spec.chars().filter(|c| !c.is_whitespace()).collect();
    let inner = s
        .strip_prefix("uniform_random(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| Error::Config(format!("unrecognised zeta spec {spec:?}")))?;
    let (mut lo, mut hi, mut seed) = (None, None, None);
    for part in inner.split(',') {
        match part.split_once('=') {
            Some(("lo", v)) => lo = v.parse().ok(),
            Some(("hi", v)) => hi = v.parse().ok(),
            Some(("seed", v)) => {
                seed = Some(Some(v.parse().map_err(|_| Error::Config(format!("bad zeta seed {v:?}")))?))
            }
            None if part == "seed" => seed = Some(None),
            _ => return Err(Error::Config(format!("unrecognised zeta argument {part:?}"))),
        }
    }
    let (lo, hi) = match (lo, hi) {
        (Some(lo), Some(hi)) if lo >= 0.0 && hi > lo => (lo, hi),
        _ => return Err(Error::Config(format!("zeta spec {spec:?} needs 0 <= lo < hi"))),
    };
    Ok((lo, hi, seed.unwrap_or(None)))
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Config("n and m must be positive".into()));
        }
        match &self.zeta {
            ZetaSpec::Matrix(rows) => {
                matrix_from_rows(rows, self.m, self.n, "zeta")?;
            }
            ZetaSpec::Random(s) => {
                parse_random(s)?;
            }
        }
        self.tdist()?;
        self.nature()?;
        if self.grid_points < 3 || self.grid_points % 2 == 0 {
            return Err(Error::Config("grid_points must be odd and >= 3".into()));
        }
        if let TargetSpec::Named(s) = &self.target {
            if s != "auto" {
                return Err(Error::Config(format!("target must be \"auto\" or an index, got {s:?}")));
            }
        }
        if let TargetSpec::Index(i) = self.target {
            if i >= self.n * self.m {
                return Err(Error::Config(format!("target index {i} out of range")));
            }
        }
        if let Some(g) = &self.gamma {
            Posterior::new(g.clone()).map_err(|e| Error::Config(format!("gamma: {e}")))?;
        }
        self.model_for_seed(self.seeds.first().copied().unwrap_or(0))?;
        self.rho0()?;
        Ok(())
    }

    pub fn tdist(&self) -> Result<TDistribution> {
        match &self.t_law {
            TLaw::Fixed(t) => TDistribution::fixed(*t),
            TLaw::Distribution { support, probs } => TDistribution::new(support.clone(), probs.clone()),
        }
        .map_err(|e| Error::Config(format!("t_law: {e}")))
    }

    pub fn nature(&self) -> Result<NatureModel> {
        match &self.nature {
            None => Ok(NatureModel::identity(self.n)),
            Some(spec) => {
                let ny = spec.likelihood_y.first().map_or(0, |r| r.len());
                let nz = spec.likelihood_z.first().map_or(0, |r| r.len());
                NatureModel::new(
                    spec.prior.clone(),
                    matrix_from_rows(&spec.likelihood_y, self.n, ny, "likelihood_y")?,
                    matrix_from_rows(&spec.likelihood_z, self.n, nz, "likelihood_z")?,
                )
                .map_err(|e| Error::Config(format!("nature: {e}")))
            }
        }
    }

    /// Objective utilities for a run; random specs draw from the run's zeta stream.
    pub fn zeta_for_seed(&self, seed: u64) -> Result<DMatrix<f64>> {
        match &self.zeta {
            ZetaSpec::Matrix(rows) => matrix_from_rows(rows, self.m, self.n, "zeta"),
            ZetaSpec::Random(s) => {
                let (lo, hi, pinned) = parse_random(s)?;
                let mut rng = stream(pinned.unwrap_or(seed), Stream::Zeta);
                Ok(DMatrix::from_fn(self.m, self.n, |_, _| loop {
                    let z: f64 = rng.gen_range(lo..hi);
                    if z > 0.0 {
                        break z;
                    }
                }))
            }
        }
    }

    pub fn params_for_seed(&self, seed: u64) -> Result<ModelParams> {
        Ok(ModelParams {
            n: self.n,
            m: self.m,
            phi1: self.phi1,
            phi2: self.phi2,
            l: self.l,
            zeta: self.zeta_for_seed(seed)?,
            dt: self.dt,
            u_bar: self.u_bar,
        })
    }

    pub fn model_for_seed(&self, seed: u64) -> Result<Model> {
        Model::new(self.params_for_seed(seed)?).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn rho0(&self) -> Result<DensityOperator> {
        let d = self.n * self.m;
        let rho = match &self.rho0 {
            None => DensityOperator::maximally_mixed(d),
            Some(Rho0Spec::Named(s)) if s == "uniform" => DensityOperator::maximally_mixed(d),
            Some(Rho0Spec::Named(s)) => return Err(Error::Config(format!("unknown rho0 {s:?}"))),
            Some(Rho0Spec::Pure { pure }) => DensityOperator::pure_basis(d, *pure)?,
            Some(Rho0Spec::Populations { populations }) => {
                if populations.len() != d {
                    return Err(Error::Config(format!("rho0 populations need {d} entries")));
                }
                DensityOperator::diagonal(populations)?
            }
            Some(Rho0Spec::Matrix { re, im }) => {
                let re = matrix_from_rows(re, d, d, "rho0.re")?;
                let im = matrix_from_rows(im, d, d, "rho0.im")?;
                let mat = ComplexMatrix::from_fn(d, d, |i, j| Complex64::new(re[(i, j)], im[(i, j)]));
                DensityOperator::new(mat)?
            }
        };
        Ok(rho)
    }
}
