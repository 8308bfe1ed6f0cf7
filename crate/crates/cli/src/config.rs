//! The JSON pipeline configuration. Every section is optional; commands
//! check that the sections they need are present.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use penlink_core::bench::ExperimentConfig;
use penlink_core::comparison::ComparisonSchema;
use penlink_core::mcmc::MoveMix;
use penlink_core::mixture::DirichletPrior;
use penlink_core::records::LoadOptions;
use penlink_core::synth::SynthConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: InputConfig,
    pub schema: Option<ComparisonSchema>,
    pub estimator: EstimatorConfig,
    pub blocking: BlockingConfig,
    pub mcmc: McmcConfig,
    pub synth: Option<SynthSection>,
    pub experiment: Option<ExperimentConfig>,
    pub output: Option<PathBuf>,
    pub seed: u64,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub file_a: Option<PathBuf>,
    pub file_b: Option<PathBuf>,
    /// Delimiter, id column, blocking column and compared columns, shared
    /// by both files. Compared columns default to the schema's field names.
    pub load: LoadOptions,
    /// Compare only pairs sharing a blocking key.
    pub blocking: bool,
    /// Known true links (`a_index,b_index`), used for pairs completeness.
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Agreement-heavy m, disagreement-heavy u.
    Default,
    /// m as in `Default`, u from the observed level frequencies.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub theta: f64,
    /// Fellegi-Sunter upper threshold.
    pub lambda: f64,
    /// Fellegi-Sunter lower threshold and EM+LSAP deletion threshold.
    pub mu: f64,
    /// Starting parameters; EM defaults to `default`, the penalized fit to
    /// `marginal`.
    pub init: Option<InitKind>,
    /// Dirichlet concentrations; absent means the experiment prior.
    pub prior: Option<PriorConfig>,
    pub theta_grid: Vec<f64>,
    pub max_outer: usize,
    pub em_tol: f64,
    pub em_max_iter: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            theta: 0.0,
            lambda: 0.0,
            mu: 0.0,
            init: None,
            prior: None,
            theta_grid: (0..=7).map(f64::from).collect(),
            max_outer: 50,
            em_tol: 1e-6,
            em_max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub alpha_m: Vec<Vec<f64>>,
    pub alpha_u: Vec<Vec<f64>>,
    /// Overrides the default `alpha - 1` pseudocounts.
    #[serde(default)]
    pub pseudo_m: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub pseudo_u: Option<Vec<Vec<f64>>>,
}

impl PriorConfig {
    pub fn build(&self) -> penlink_core::Result<DirichletPrior> {
        let prior = DirichletPrior::from_alphas(self.alpha_m.clone(), self.alpha_u.clone())?;
        match (&self.pseudo_m, &self.pseudo_u) {
            (None, None) => Ok(prior),
            (m, u) => {
                let m = m.clone().unwrap_or_else(|| prior.pseudo_m.clone());
                let u = u.clone().unwrap_or_else(|| prior.pseudo_u.clone());
                prior.with_pseudocounts(m, u)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockingConfig {
    /// Fixed threshold, used when no budget is set.
    pub w0: f64,
    /// Largest admissible block size in pairs; selects w0 from `grid`.
    pub budget: Option<usize>,
    pub grid: Vec<f64>,
}

impl Default for BlockingConfig {
    fn default() -> Self {
        BlockingConfig {
            w0: 0.0,
            budget: None,
            grid: (-20..=40).map(|i| f64::from(i) * 0.5).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    /// Defaults to a value derived from the top-level seed.
    pub seed: Option<u64>,
    pub gibbs_cap: usize,
    pub move_mix: MoveMix,
    pub moves_per_sweep: Option<usize>,
    /// Link penalty in the prior; defaults to the estimator's theta.
    pub theta: Option<f64>,
    pub update_params: bool,
    /// Start from the penalized fit's matching when one is on disk.
    pub init_from_fit: bool,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 1000,
            burn_in: 100,
            seed: None,
            gibbs_cap: 64,
            move_mix: MoveMix::default(),
            moves_per_sweep: None,
            theta: None,
            update_params: true,
            init_from_fit: true,
        }
    }
}

/// A synthetic draw; `copies > 1` stacks independent draws under distinct
/// blocking keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSection {
    #[serde(flatten)]
    pub config: SynthConfig,
    #[serde(default = "one")]
    pub copies: usize,
}

fn one() -> usize {
    1
}

fn invalid(msg: impl Into<String>) -> penlink_core::Error {
    penlink_core::Error::Config(msg.into())
}

impl PipelineConfig {
    /// Checks every section that is present. Command-specific requirements
    /// (which sections must exist) are checked by the commands.
    pub fn validate(&self) -> penlink_core::Result<()> {
        if let Some(schema) = &self.schema {
            schema.validate()?;
        }
        let e = &self.estimator;
        if !e.theta.is_finite() {
            return Err(invalid("estimator.theta must be finite"));
        }
        if !e.lambda.is_finite() || !e.mu.is_finite() {
            return Err(invalid("estimator.lambda and estimator.mu must be finite"));
        }
        if e.lambda < e.mu {
            return Err(penlink_core::Error::ThresholdOrder {
                lambda: e.lambda,
                mu: e.mu,
            });
        }
        if e.theta_grid.iter().any(|t| !t.is_finite()) {
            return Err(invalid("estimator.theta_grid values must be finite"));
        }
        if e.max_outer == 0 || e.em_max_iter == 0 {
            return Err(invalid("iteration limits must be positive"));
        }
        if !(e.em_tol.is_finite() && e.em_tol >= 0.0) {
            return Err(invalid("estimator.em_tol must be a nonnegative number"));
        }
        if let Some(prior) = &e.prior {
            let built = prior.build()?;
            if let Some(schema) = &self.schema {
                if built.level_counts() != schema.level_counts() {
                    return Err(invalid("estimator.prior shape does not match the schema"));
                }
            }
        }
        let b = &self.blocking;
        if !b.w0.is_finite() {
            return Err(invalid("blocking.w0 must be finite"));
        }
        if let Some(budget) = b.budget {
            if budget < 1 {
                return Err(invalid("blocking.budget must be at least 1"));
            }
            if b.grid.is_empty() || b.grid.iter().any(|w| w.is_nan()) {
                return Err(invalid("blocking.grid must be a nonempty list of numbers"));
            }
        }
        self.mcmc_options(0)?.validate()?;
        if let Some(theta) = self.mcmc.theta {
            if !theta.is_finite() {
                return Err(invalid("mcmc.theta must be finite"));
            }
        }
        if let Some(s) = &self.synth {
            s.config.validate()?;
            if s.copies == 0 {
                return Err(invalid("synth.copies must be at least 1"));
            }
        }
        if let Some(x) = &self.experiment {
            x.validate()?;
        }
        if self.workers == Some(0) {
            return Err(invalid("workers must be at least 1"));
        }
        Ok(())
    }

    pub fn mcmc_options(&self, seed: u64) -> penlink_core::Result<penlink_core::mcmc::McmcOptions> {
        let m = &self.mcmc;
        Ok(penlink_core::mcmc::McmcOptions {
            iterations: m.iterations,
            burn_in: m.burn_in,
            seed: m.seed.unwrap_or(seed),
            gibbs_cap: m.gibbs_cap,
            move_mix: m.move_mix,
            moves_per_sweep: m.moves_per_sweep,
            update_params: m.update_params,
        })
    }
}
