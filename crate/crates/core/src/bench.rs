//! Scoring against ground truth and the estimator comparison experiment.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocking::post_hoc_blocks;
use crate::comparison::{compare_files, Comparator, ComparisonSchema, Comparisons};
use crate::error::{Error, Result};
use crate::estimators::{
    em_lsap_estimate, pair_weights, penalized_likelihood_fit, PenalizedOptions,
};
use crate::matching::Matching;
use crate::mcmc::{bayes_estimate, run_chain, LinkagePrior, McmcOptions};
use crate::mixture::{DirichletPrior, EmOptions, MixtureParams};
use crate::seed::derive_seed;
use crate::synth::{generate, GroundTruth, SynthConfig};

/// Precision and recall are absent when their denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub estimated_links: usize,
    pub true_links: usize,
    pub correct_links: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

pub fn score(estimate: &Matching, truth: &Matching) -> ScoreReport {
    let correct = estimate
        .links()
        .iter()
        .filter(|&&(a, b)| truth.contains(a, b))
        .count();
    let ratio = |den: usize| (den > 0).then(|| correct as f64 / den as f64);
    ScoreReport {
        estimated_links: estimate.len(),
        true_links: truth.len(),
        correct_links: correct,
        precision: ratio(estimate.len()),
        recall: ratio(truth.len()),
    }
}

/// Link penalty used when a scenario does not set one: 0 at full overlap,
/// 5 around one half, 7 at low overlap.
pub fn default_theta(overlap: f64) -> f64 {
    if overlap >= 0.75 {
        0.0
    } else if overlap >= 0.3 {
        5.0
    } else {
        7.0
    }
}

/// Prior for the experiment: four-level string fields get m concentrations
/// rising toward agreement, `(1, 2, 5, 10)`, and a flat u with no
/// pseudocounts; every other field gets one pseudocount per cell.
pub fn experiment_prior(schema: &ComparisonSchema) -> DirichletPrior {
    let mut alpha_m = Vec::new();
    let mut alpha_u = Vec::new();
    for f in &schema.fields {
        let k = f.levels();
        match &f.comparator {
            Comparator::Levenshtein { .. } if k == 4 => {
                alpha_m.push(vec![1.0, 2.0, 5.0, 10.0]);
                alpha_u.push(vec![1.0; 4]);
            }
            _ => {
                alpha_m.push(vec![2.0; k]);
                alpha_u.push(vec![2.0; k]);
            }
        }
    }
    DirichletPrior::from_alphas(alpha_m, alpha_u).expect("positive concentrations")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub overlap: f64,
    pub errors: usize,
    /// Overrides the overlap-based default.
    #[serde(default)]
    pub theta: Option<f64>,
}

impl Scenario {
    pub fn new(n: usize, overlap: f64, errors: usize) -> Self {
        Scenario {
            n,
            overlap,
            errors,
            theta: None,
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta.unwrap_or_else(|| default_theta(self.overlap))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMcmc {
    pub iterations: usize,
    pub burn_in: usize,
    pub w0: f64,
}

impl Default for ExperimentMcmc {
    fn default() -> Self {
        ExperimentMcmc {
            iterations: 1000,
            burn_in: 100,
            w0: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenarios: Vec<Scenario>,
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    /// Threshold applied after the complete assignment in EM+LSAP.
    #[serde(default)]
    pub mu: f64,
    /// When absent the Bayes estimate is skipped.
    #[serde(default)]
    pub mcmc: Option<ExperimentMcmc>,
    #[serde(default = "default_max_outer")]
    pub max_outer: usize,
    /// Record wall-clock times; off for byte-reproducible output.
    #[serde(default = "yes")]
    pub timings: bool,
}

fn default_max_outer() -> usize {
    50
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn new(scenarios: Vec<Scenario>, replicates: usize, seed: u64) -> Self {
        ExperimentConfig {
            scenarios,
            replicates,
            seed,
            mu: 0.0,
            mcmc: Some(ExperimentMcmc::default()),
            max_outer: 50,
            timings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("scenario grid is empty".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("at least one replicate is required".into()));
        }
        if let Some(m) = &self.mcmc {
            if m.burn_in >= m.iterations {
                return Err(Error::Config(
                    "MCMC burn-in must be below the iteration count".into(),
                ));
            }
        }
        for s in &self.scenarios {
            SynthConfig::four_field(s.n, s.overlap, s.errors, 0).validate()?;
            if !s.theta().is_finite() {
                return Err(Error::Config("scenario theta must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn estimators(&self) -> Vec<Estimator> {
        let mut out = vec![Estimator::Penlik, Estimator::EmLsap];
        if self.mcmc.is_some() {
            out.push(Estimator::Bayes);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Penlik,
    EmLsap,
    Bayes,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Penlik => "penlik",
            Estimator::EmLsap => "em_lsap",
            Estimator::Bayes => "bayes",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: usize,
    pub n: usize,
    pub overlap: f64,
    pub errors: usize,
    pub replicate: usize,
    pub seed: u64,
    pub estimator: Estimator,
    pub theta: f64,
    pub score: Option<ScoreReport>,
    pub wall_time_ms: Option<f64>,
    /// Set when the replicate failed; the metrics are then absent.
    pub error: Option<String>,
    /// Largest `sum_b freq(a, b)` over records, for the Bayes rows.
    pub max_row_frequency: Option<f64>,
    pub retained_samples: Option<usize>,
}

struct Outcome {
    estimator: Estimator,
    result: Result<(Matching, Option<(f64, usize)>)>,
    millis: f64,
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

fn fit_all(
    comparisons: &Comparisons,
    schema: &ComparisonSchema,
    theta: f64,
    config: &ExperimentConfig,
    seed: u64,
) -> Vec<Outcome> {
    let prior = experiment_prior(schema);
    let inits = MixtureParams::default_for(schema)
        .and_then(|em| Ok((em, MixtureParams::marginal_for(schema, &comparisons.table)?)));
    let (em_init, init) = match inits {
        Ok(p) => p,
        Err(e) => {
            let msg = e.to_string();
            return config
                .estimators()
                .into_iter()
                .map(|estimator| Outcome {
                    estimator,
                    result: Err(Error::InvalidParams(msg.clone())),
                    millis: 0.0,
                })
                .collect();
        }
    };
    let mut out = Vec::new();

    let (penlik, ms) = timed(|| {
        let opts = PenalizedOptions {
            max_outer: config.max_outer,
            ..PenalizedOptions::new(theta)
        };
        penalized_likelihood_fit(comparisons, &prior, &init, opts)
    });
    let fit = penlik.as_ref().ok().cloned();
    out.push(Outcome {
        estimator: Estimator::Penlik,
        result: penlik.map(|f| (f.matching, None)),
        millis: ms,
    });

    let (em, ms) =
        timed(|| em_lsap_estimate(comparisons, &em_init, config.mu, EmOptions::default()));
    out.push(Outcome {
        estimator: Estimator::EmLsap,
        result: em.map(|r| (r.matching, None)),
        millis: ms,
    });

    if let Some(mc) = &config.mcmc {
        let (bayes, ms) = timed(|| -> Result<(Matching, Option<(f64, usize)>)> {
            let fit = fit.ok_or_else(|| Error::InvalidParams("penalized fit failed".into()))?;
            let weights = pair_weights(comparisons, &fit.params)?;
            let blocks = post_hoc_blocks(&comparisons.pairs, &weights, mc.w0)?;
            let options = McmcOptions {
                iterations: mc.iterations,
                burn_in: mc.burn_in,
                seed,
                ..McmcOptions::default()
            };
            let linkage = LinkagePrior::new(theta, prior.clone())?;
            let summary = run_chain(
                &blocks,
                comparisons,
                linkage,
                &fit.params,
                Some(&fit.matching),
                options,
            )?;
            let worst = summary
                .row_sums()
                .into_iter()
                .chain(summary.col_sums())
                .fold(0.0, f64::max);
            Ok((bayes_estimate(&summary), Some((worst, summary.samples))))
        });
        out.push(Outcome {
            estimator: Estimator::Bayes,
            result: bayes,
            millis: ms,
        });
    }
    out
}

type ScoredOutcome = (
    Estimator,
    Result<(Matching, Option<(f64, usize)>)>,
    f64,
    Option<GroundTruth>,
);

/// Generates, compares and fits one replicate of one scenario.
pub fn run_replicate(
    config: &ExperimentConfig,
    scenario_idx: usize,
    replicate: usize,
) -> Vec<ResultRow> {
    let scenario = config.scenarios[scenario_idx];
    let seed = derive_seed(
        config.seed,
        &format!("scenario/{scenario_idx}/replicate/{replicate}"),
    );
    let synth = SynthConfig::four_field(
        scenario.n,
        scenario.overlap,
        scenario.errors,
        derive_seed(seed, "synth"),
    );
    let schema = synth.schema();
    let theta = scenario.theta();

    let prepared = generate(&synth)
        .and_then(|(a, b, truth)| Ok((compare_files(&a, &b, &schema, false)?, truth)));
    let outcomes: Vec<ScoredOutcome> = match prepared {
        Ok((comparisons, truth)) => fit_all(
            &comparisons,
            &schema,
            theta,
            config,
            derive_seed(seed, "mcmc"),
        )
        .into_iter()
        .map(|o| (o.estimator, o.result, o.millis, Some(truth.clone())))
        .collect(),
        Err(e) => config
            .estimators()
            .into_iter()
            .map(|est| (est, Err(Error::InvalidParams(e.to_string())), 0.0, None))
            .collect(),
    };

    outcomes
        .into_iter()
        .map(|(estimator, result, millis, truth)| {
            let (score, error, extra) = match (result, truth) {
                (Ok((m, extra)), Some(t)) => (Some(score(&m, &t.matching)), None, extra),
                (Err(e), _) => (None, Some(e.to_string()), None),
                (Ok(_), None) => (None, Some("missing ground truth".into()), None),
            };
            ResultRow {
                scenario: scenario_idx,
                n: scenario.n,
                overlap: scenario.overlap,
                errors: scenario.errors,
                replicate,
                seed,
                estimator,
                theta,
                score,
                wall_time_ms: config.timings.then_some(millis),
                error,
                max_row_frequency: extra.map(|e| e.0),
                retained_samples: extra.map(|e| e.1),
            }
        })
        .collect()
}

/// Runs every (scenario, replicate) in parallel. Rows come back in scenario,
/// replicate, estimator order regardless of scheduling; failed replicates
/// produce rows carrying the error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..config.scenarios.len())
        .flat_map(|s| (0..config.replicates).map(move |r| (s, r)))
        .collect();
    Ok(jobs
        .par_iter()
        .flat_map_iter(|&(s, r)| run_replicate(config, s, r))
        .collect())
}
