//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembly::ModelParams;
use crate::certification::RhoFormula;
use crate::error::{Error, Result};
use crate::mesh::{generate_cavity_mesh, generate_step_mesh, Mesh, StepGeometry};
use crate::truth::{Inflow, SolverConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Benchmark {
    /// Unit square with the lid `y = 1` driven, `n x n` cells.
    Cavity { n: usize },
    /// Backward-facing step with `resolution` cells across the step.
    Step {
        resolution: usize,
        #[serde(default)]
        geometry: StepGeometry,
    },
    /// Mesh file in the text format.
    Mesh { path: PathBuf },
}

impl Benchmark {
    pub fn build_mesh(&self, base: &Path) -> Result<Mesh> {
        match self {
            Benchmark::Cavity { n } => generate_cavity_mesh(*n),
            Benchmark::Step { resolution, geometry } => generate_step_mesh(*resolution, geometry),
            Benchmark::Mesh { path } => Mesh::load(&base.join(path)),
        }
    }

    pub fn default_inflow(&self) -> Inflow {
        match self {
            Benchmark::Cavity { .. } => Inflow::Lid { velocity: [1.0, 0.0] },
            Benchmark::Step { .. } => Inflow::Parabolic { mean: 1.0 },
            Benchmark::Mesh { .. } => Inflow::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub benchmark: Benchmark,
    /// Inflow data; defaults to the benchmark's own.
    #[serde(default)]
    pub inflow: Option<Inflow>,
    /// Reynolds number range `[min, max]`.
    pub mu_range: [f64; 2],
    #[serde(default = "default_cs")]
    pub cs: f64,
    #[serde(default)]
    pub force: [f64; 2],
}

fn default_cs() -> f64 {
    ModelParams::default().cs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EimConfig {
    pub train_points: usize,
    pub tol: f64,
    pub max_terms: usize,
}

impl Default for EimConfig {
    fn default() -> Self {
        EimConfig {
            train_points: 100,
            tol: 5e-4,
            max_terms: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificationConfig {
    /// Uniform samples of the inf-sup factor before adaptive refinement.
    pub beta_samples: usize,
    /// Total number of inf-sup samples.
    pub beta_budget: usize,
    /// Relative disagreement at which refinement stops.
    pub beta_tol: f64,
    /// Parameters at which the continuity factor is estimated.
    pub gamma_samples: usize,
    pub rho_formula: RhoFormula,
    pub inverse_samples: usize,
    pub inverse_safety: f64,
    pub sobolev_tol: f64,
    pub sobolev_max_iter: usize,
}

impl Default for CertificationConfig {
    fn default() -> Self {
        CertificationConfig {
            beta_samples: 20,
            beta_budget: 40,
            beta_tol: 1e-2,
            gamma_samples: 3,
            rho_formula: RhoFormula::Squared,
            inverse_samples: 200,
            inverse_safety: 1.2,
            sobolev_tol: 1e-8,
            sobolev_max_iter: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbConfig {
    pub train_points: usize,
    pub tol: f64,
    /// POD modes in the seed space; 0 starts from the smallest parameter.
    pub n_pod: usize,
    pub max_basis: usize,
    pub online_tol: f64,
    pub online_max_steps: usize,
}

impl Default for RbConfig {
    fn default() -> Self {
        RbConfig {
            train_points: 100,
            tol: 5e-5,
            n_pod: 10,
            max_basis: 30,
            online_tol: 1e-10,
            online_max_steps: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Seed of the Monte-Carlo probes.
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
    pub verification_points: usize,
    pub output: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 0,
            jobs: 0,
            verification_points: 12,
            output: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub truth: SolverConfig,
    #[serde(default)]
    pub eim: EimConfig,
    #[serde(default)]
    pub certification: CertificationConfig,
    #[serde(default)]
    pub rb: RbConfig,
    #[serde(default)]
    pub run: RunSection,
}

/// `n` uniformly spaced points over `[lo, hi]` (the midpoint when `n = 1`).
pub fn uniform_grid(range: [f64; 2], n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (range[0] + range[1])],
        _ => (0..n)
            .map(|i| range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [lo, hi] = self.problem.mu_range;
        if !(lo > 0.0 && lo < hi && hi.is_finite()) {
            return bad(format!("mu_range must satisfy 0 < min < max, got [{lo}, {hi}]"));
        }
        if !(self.problem.cs >= 0.0) {
            return bad(format!("cs must be nonnegative, got {}", self.problem.cs));
        }
        match &self.problem.benchmark {
            Benchmark::Cavity { n } if *n == 0 => return bad("cavity n must be positive".into()),
            Benchmark::Step { resolution, .. } if *resolution == 0 => return bad("step resolution must be positive".into()),
            _ => {}
        }
        self.truth.validate().map_err(|e| Error::Config(e.to_string()))?;
        let positive = [
            ("eim.tol", self.eim.tol),
            ("certification.beta_tol", self.certification.beta_tol),
            ("certification.inverse_safety", self.certification.inverse_safety),
            ("certification.sobolev_tol", self.certification.sobolev_tol),
            ("rb.tol", self.rb.tol),
            ("rb.online_tol", self.rb.online_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let nonempty = [
            ("eim.train_points", self.eim.train_points),
            ("eim.max_terms", self.eim.max_terms),
            ("certification.beta_samples", self.certification.beta_samples),
            ("rb.train_points", self.rb.train_points),
            ("rb.max_basis", self.rb.max_basis),
            ("rb.online_max_steps", self.rb.online_max_steps),
            ("run.verification_points", self.run.verification_points),
            ("certification.sobolev_max_iter", self.certification.sobolev_max_iter),
        ];
        for (name, v) in nonempty {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.certification.beta_samples < 2 {
            return bad("certification.beta_samples must be at least 2".into());
        }
        if self.certification.beta_budget < self.certification.beta_samples {
            return bad("certification.beta_budget must be at least beta_samples".into());
        }
        if self.rb.n_pod > self.eim.train_points {
            return bad(format!(
                "rb.n_pod = {} exceeds the {} EIM snapshots it is computed from",
                self.rb.n_pod, self.eim.train_points
            ));
        }
        Ok(())
    }

    pub fn model_params(&self) -> ModelParams {
        ModelParams {
            cs: self.problem.cs,
            force: self.problem.force,
            ..Default::default()
        }
    }

    pub fn inflow(&self) -> Inflow {
        self.problem.inflow.clone().unwrap_or_else(|| self.problem.benchmark.default_inflow())
    }

    pub fn online_solver(&self) -> SolverConfig {
        SolverConfig {
            dt: self.truth.dt,
            tol: self.rb.online_tol,
            max_steps: self.rb.online_max_steps,
        }
    }

    pub fn eim_grid(&self) -> Vec<f64> {
        uniform_grid(self.problem.mu_range, self.eim.train_points)
    }

    pub fn train_grid(&self) -> Vec<f64> {
        uniform_grid(self.problem.mu_range, self.rb.train_points)
    }

    /// Verification points placed between the training points.
    pub fn verification_grid(&self) -> Vec<f64> {
        let [lo, hi] = self.problem.mu_range;
        let n = self.run.verification_points;
        (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
    }

    pub fn in_range(&self, mu: f64) -> bool {
        let [lo, hi] = self.problem.mu_range;
        mu >= lo && mu <= hi
    }
}
