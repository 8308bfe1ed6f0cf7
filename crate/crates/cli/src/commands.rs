//! The pipeline commands. Each reads its upstream artifacts from the output
//! directory and writes its own next to them.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use penlink_core::bench::{experiment_prior, run_experiment, ResultRow};
use penlink_core::blocking::{
    diagnostics, post_hoc_blocks, select_w0, BlockingDiagnostics, PostHocBlocks,
};
use penlink_core::comparison::{compare_files, ComparisonSchema, Comparisons};
use penlink_core::estimators::{
    em_lsap_estimate, fs_decide, pair_weights, penalized_likelihood_fit, theta_sweep, Decision,
    PenalizedOptions,
};
use penlink_core::io::{self, ComparisonMeta};
use penlink_core::matching::Matching;
use penlink_core::mcmc::{bayes_estimate, run_chain, AcceptanceRates, LinkagePrior, MoveStats};
use penlink_core::mixture::{em_fit, weight_table, DirichletPrior, EmOptions, MixtureParams};
use penlink_core::records::{load_records, FileId};
use penlink_core::seed::derive_seed;
use penlink_core::synth::{generate, generate_stacked};

use crate::config::{InitKind, PipelineConfig};
use crate::{invalid, Command, Failure, Method};

pub const COMPARISON_META: &str = "comparison.json";
pub const PATTERNS: &str = "patterns.csv";
pub const PAIRS: &str = "pairs.csv";
pub const PARAMS: &str = "params.json";
pub const WEIGHTS: &str = "weights.csv";
pub const MATCHING: &str = "matching.csv";
pub const FS_DECISIONS: &str = "fs_decisions.csv";
pub const FIT_META: &str = "fit_meta.json";
pub const THETA_SWEEP: &str = "theta_sweep.csv";
pub const BLOCKS: &str = "blocks.csv";
pub const BLOCK_CURVE: &str = "block_curve.csv";
pub const BLOCK_META: &str = "block_meta.json";
pub const POSTERIOR: &str = "posterior.csv";
pub const L_TRACE: &str = "l_trace.csv";
pub const MCMC_META: &str = "mcmc_meta.json";
pub const BAYES_MATCHING: &str = "bayes_matching.csv";
pub const RESULTS: &str = "results.csv";
pub const FILE_A: &str = "file_a.csv";
pub const FILE_B: &str = "file_b.csv";
pub const TRUTH: &str = "truth.csv";
pub const SYNTH_META: &str = "synth.json";

const DEFAULT_OUT: &str = "out";

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Compare => "compare",
        Command::Fit { .. } => "fit",
        Command::Block => "block",
        Command::Mcmc => "mcmc",
        Command::Eval => "eval",
        Command::Synth => "synth",
    }
}

pub fn out_dir(config: &PipelineConfig) -> PathBuf {
    config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn open(dir: &Path, name: &str, producer: &str) -> Result<BufReader<File>> {
    let path = dir.join(name);
    let file = File::open(&path).with_context(|| {
        format!(
            "missing upstream artifact {}; run `penlink {producer}` first",
            path.display()
        )
    })?;
    Ok(BufReader::new(file))
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

/// Checks that the configuration holds what `command` needs before any
/// work starts.
pub fn check_requirements(command: &Command, config: &PipelineConfig) -> Result<(), Failure> {
    match command {
        Command::Compare => {
            if config.schema.is_none() {
                return Err(invalid("compare needs a `schema` section"));
            }
            for (label, path) in [
                ("file_a", &config.input.file_a),
                ("file_b", &config.input.file_b),
            ] {
                let path = path
                    .as_ref()
                    .ok_or_else(|| invalid(format!("compare needs input.{label}")))?;
                if !path.is_file() {
                    return Err(invalid(format!(
                        "input.{label} {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Command::Eval if config.experiment.is_none() => {
            return Err(invalid("eval needs an `experiment` section"));
        }
        Command::Synth if config.synth.is_none() => {
            return Err(invalid("synth needs a `synth` section"));
        }
        Command::Block => {
            if let Some(truth) = &config.input.truth {
                if !truth.is_file() {
                    return Err(invalid(format!(
                        "input.truth {} does not exist",
                        truth.display()
                    )));
                }
            }
        }
        _ => {}
    }
    Ok(())
}

/// Runs an already validated command and stores the resolved
/// configuration next to its outputs.
pub fn run(command: &Command, config: &PipelineConfig) -> Result<(), Failure> {
    let dir = out_dir(config);
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let w = create(&dir, &format!("{}.config.json", command_name(command)))?;
    io::write_json(w, config)?;
    match command {
        Command::Compare => cmd_compare(config, &dir),
        Command::Fit { method } => cmd_fit(config, &dir, *method),
        Command::Block => cmd_block(config, &dir),
        Command::Mcmc => cmd_mcmc(config, &dir),
        Command::Eval => cmd_eval(config, &dir),
        Command::Synth => cmd_synth(config, &dir),
    }
    .map_err(Failure::Runtime)
}

pub fn cmd_compare(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let schema = config
        .schema
        .as_ref()
        .ok_or_else(|| anyhow!("missing schema"))?;
    let mut load = config.input.load.clone();
    if load.fields.is_empty() {
        load.fields = schema.fields.iter().map(|f| f.name.clone()).collect();
    }
    let path_a = config
        .input
        .file_a
        .as_ref()
        .ok_or_else(|| anyhow!("missing input.file_a"))?;
    let path_b = config
        .input
        .file_b
        .as_ref()
        .ok_or_else(|| anyhow!("missing input.file_b"))?;
    let file_a = load_records(path_a, FileId::A, &load)?;
    let file_b = load_records(path_b, FileId::B, &load)?;
    for (label, file) in [("A", &file_a), ("B", &file_b)] {
        if file.is_empty() {
            warn(format!(
                "file {label} has no records; the pair set is empty"
            ));
        }
    }
    let cmp = compare_files(&file_a, &file_b, schema, config.input.blocking)?;
    io::write_pattern_table(create(dir, PATTERNS)?, &cmp.table)?;
    io::write_pairs(create(dir, PAIRS)?, &cmp)?;
    let meta = ComparisonMeta {
        n_a: file_a.len(),
        n_b: file_b.len(),
        schema: schema.clone(),
        blocking: config.input.blocking,
    };
    io::write_json(create(dir, COMPARISON_META)?, &meta)?;
    println!(
        "compared {} x {} records: {} pairs, {} patterns",
        meta.n_a,
        meta.n_b,
        cmp.len(),
        cmp.table.len()
    );
    Ok(())
}

/// Rebuilds the comparisons written by `compare`.
pub fn load_comparisons(dir: &Path) -> Result<(ComparisonMeta, Comparisons)> {
    let meta: ComparisonMeta = io::read_json(open(dir, COMPARISON_META, "compare")?)?;
    let table =
        io::read_pattern_table(open(dir, PATTERNS, "compare")?, &meta.schema.level_counts())?;
    let pairs = io::read_pairs(open(dir, PAIRS, "compare")?)?;
    let cmp =
        io::assemble_comparisons(&meta, table, pairs).context("comparison artifacts disagree")?;
    Ok((meta, cmp))
}

fn prior_for(config: &PipelineConfig, schema: &ComparisonSchema) -> Result<DirichletPrior> {
    let prior = match &config.estimator.prior {
        Some(p) => p.build()?,
        None => experiment_prior(schema),
    };
    if prior.level_counts() != schema.level_counts() {
        bail!("estimator.prior shape does not match the compared schema");
    }
    Ok(prior)
}

fn initial_params(
    kind: InitKind,
    schema: &ComparisonSchema,
    cmp: &Comparisons,
) -> Result<MixtureParams> {
    Ok(match kind {
        InitKind::Default => MixtureParams::default_for(schema)?,
        InitKind::Marginal => MixtureParams::marginal_for(schema, &cmp.table)?,
    })
}

fn em_options(config: &PipelineConfig) -> EmOptions {
    EmOptions {
        tol: config.estimator.em_tol,
        max_iter: config.estimator.em_max_iter,
    }
}

fn penalized_options(config: &PipelineConfig, theta: f64) -> PenalizedOptions {
    PenalizedOptions {
        max_outer: config.estimator.max_outer,
        ..PenalizedOptions::new(theta)
    }
}

/// Run summary written next to every fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMeta {
    pub method: String,
    pub theta: Option<f64>,
    pub lambda: Option<f64>,
    pub mu: Option<f64>,
    pub pairs: usize,
    pub links: Option<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// EM log-likelihood or penalized objective per iteration.
    pub trace: Vec<f64>,
}

fn weighted_links(
    cmp: &Comparisons,
    weights: &[f64],
    matching: &Matching,
) -> Vec<(usize, usize, f64)> {
    let index: HashMap<(usize, usize), usize> = cmp
        .pairs
        .pairs
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, i))
        .collect();
    matching
        .links()
        .iter()
        .map(|&(a, b)| (a, b, index.get(&(a, b)).map_or(f64::NAN, |&i| weights[i])))
        .collect()
}

fn write_fit(
    dir: &Path,
    cmp: &Comparisons,
    params: &MixtureParams,
    matching: Option<&Matching>,
) -> Result<()> {
    io::write_params(create(dir, PARAMS)?, params)?;
    let table = weight_table(&cmp.table, params)?;
    io::write_weight_table(create(dir, WEIGHTS)?, &cmp.table, &table)?;
    if let Some(m) = matching {
        let weights = pair_weights(cmp, params)?;
        io::write_matching(create(dir, MATCHING)?, &weighted_links(cmp, &weights, m))?;
    }
    Ok(())
}

pub fn cmd_fit(config: &PipelineConfig, dir: &Path, method: Method) -> Result<()> {
    let (meta, cmp) = load_comparisons(dir)?;
    if cmp.is_empty() {
        bail!("there are no candidate pairs to fit");
    }
    let schema = &meta.schema;
    let est = &config.estimator;
    let fit_meta = match method {
        Method::Fs => {
            let init = initial_params(est.init.unwrap_or(InitKind::Default), schema, &cmp)?;
            let em = em_fit(&cmp.table, &init, em_options(config))?;
            let weights = pair_weights(&cmp, &em.params)?;
            let decision = fs_decide(&weights, est.lambda, est.mu)?;
            write_fit(dir, &cmp, &em.params, None)?;
            let rows: Vec<_> = decision
                .decisions
                .iter()
                .enumerate()
                .filter(|(_, d)| **d != Decision::NonLink)
                .map(|(i, &d)| (cmp.pairs.pairs[i].0, cmp.pairs.pairs[i].1, weights[i], d))
                .collect();
            io::write_fs_decisions(create(dir, FS_DECISIONS)?, &rows)?;
            let links = rows.iter().filter(|r| r.3 == Decision::Link).count();
            FitMeta {
                method: "fs".into(),
                theta: None,
                lambda: Some(est.lambda),
                mu: Some(est.mu),
                pairs: cmp.len(),
                links: Some(links),
                iterations: em.iterations,
                converged: em.converged,
                trace: em.trace,
            }
        }
        Method::EmLsap => {
            let init = initial_params(est.init.unwrap_or(InitKind::Default), schema, &cmp)?;
            let fit = em_lsap_estimate(&cmp, &init, est.mu, em_options(config))?;
            write_fit(dir, &cmp, &fit.em.params, Some(&fit.matching))?;
            FitMeta {
                method: "em_lsap".into(),
                theta: None,
                lambda: None,
                mu: Some(est.mu),
                pairs: cmp.len(),
                links: Some(fit.matching.len()),
                iterations: fit.em.iterations,
                converged: fit.em.converged,
                trace: fit.em.trace,
            }
        }
        Method::Penlik => {
            let init = initial_params(est.init.unwrap_or(InitKind::Marginal), schema, &cmp)?;
            let prior = prior_for(config, schema)?;
            let fit = penalized_likelihood_fit(
                &cmp,
                &prior,
                &init,
                penalized_options(config, est.theta),
            )?;
            if !fit.converged {
                warn(format!(
                    "penalized fit stopped after {} iterations without converging",
                    fit.iterations
                ));
            }
            write_fit(dir, &cmp, &fit.params, Some(&fit.matching))?;
            FitMeta {
                method: "penlik".into(),
                theta: Some(est.theta),
                lambda: None,
                mu: None,
                pairs: cmp.len(),
                links: Some(fit.matching.len()),
                iterations: fit.iterations,
                converged: fit.converged,
                trace: fit.trace,
            }
        }
        Method::ThetaSweep => {
            let init = initial_params(est.init.unwrap_or(InitKind::Marginal), schema, &cmp)?;
            let prior = prior_for(config, schema)?;
            let mut grid = est.theta_grid.clone();
            grid.sort_by(f64::total_cmp);
            let points = theta_sweep(&cmp, &prior, &init, &grid, penalized_options(config, 0.0))?;
            let rows: Vec<(f64, usize, f64)> = points
                .iter()
                .map(|p| {
                    (
                        p.theta,
                        p.link_count,
                        p.fit.trace.last().copied().unwrap_or(f64::NAN),
                    )
                })
                .collect();
            io::write_theta_sweep(create(dir, THETA_SWEEP)?, &rows)?;
            FitMeta {
                method: "theta_sweep".into(),
                theta: None,
                lambda: None,
                mu: None,
                pairs: cmp.len(),
                links: None,
                iterations: points.iter().map(|p| p.fit.iterations).sum(),
                converged: points.iter().all(|p| p.fit.converged),
                trace: rows.iter().map(|r| r.1 as f64).collect(),
            }
        }
    };
    println!(
        "fit {}: {} pairs, {} links, {} iterations",
        fit_meta.method,
        fit_meta.pairs,
        fit_meta.links.map_or("-".to_string(), |l| l.to_string()),
        fit_meta.iterations
    );
    io::write_json(create(dir, FIT_META)?, &fit_meta)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockMeta {
    pub w0: f64,
    pub budget: Option<usize>,
    /// Absent when w0 was fixed rather than selected.
    pub within_budget: Option<bool>,
    pub diagnostics: BlockingDiagnostics,
}

fn load_params(dir: &Path, cmp: &Comparisons) -> Result<MixtureParams> {
    let params = io::read_params(open(dir, PARAMS, "fit")?)?;
    params
        .check_table(&cmp.table)
        .context("params.json does not fit the pattern table")?;
    Ok(params)
}

fn load_truth(config: &PipelineConfig, meta: &ComparisonMeta) -> Result<Option<Matching>> {
    let Some(path) = &config.input.truth else {
        return Ok(None);
    };
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(Some(io::read_links(
        BufReader::new(file),
        meta.n_a,
        meta.n_b,
    )?))
}

pub fn cmd_block(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let (meta, cmp) = load_comparisons(dir)?;
    let params = load_params(dir, &cmp)?;
    let weights = pair_weights(&cmp, &params)?;
    let truth = load_truth(config, &meta)?;
    let b = &config.blocking;
    let (w0, within_budget, curve) = match b.budget {
        Some(budget) => {
            let sel = select_w0(&cmp.pairs, &weights, budget, &b.grid, truth.as_ref())?;
            if !sel.within_budget {
                warn(format!(
                    "no grid threshold keeps every block within {budget} pairs; using the largest, {}",
                    sel.w0
                ));
            }
            (sel.w0, Some(sel.within_budget), sel.curve)
        }
        None => (b.w0, None, Vec::new()),
    };
    let blocks = post_hoc_blocks(&cmp.pairs, &weights, w0)?;
    let diag = diagnostics(&blocks, cmp.len(), truth.as_ref())?;
    let curve = if curve.is_empty() {
        vec![diag.clone()]
    } else {
        curve
    };
    io::write_blocks(create(dir, BLOCKS)?, &blocks)?;
    io::write_block_curve(create(dir, BLOCK_CURVE)?, &curve)?;
    println!(
        "blocked at w0 = {w0}: {} blocks, {} of {} pairs retained, largest block {} pairs",
        diag.n_blocks,
        diag.retained_pairs,
        diag.candidate_pairs,
        blocks.max_block_pairs()
    );
    let block_meta = BlockMeta {
        w0,
        budget: b.budget,
        within_budget,
        diagnostics: diag,
    };
    io::write_json(create(dir, BLOCK_META)?, &block_meta)?;
    Ok(())
}

/// Blocks implied by the current parameters, checked against `blocks.csv`.
fn load_blocks(dir: &Path, cmp: &Comparisons, weights: &[f64]) -> Result<(f64, PostHocBlocks)> {
    let meta: BlockMeta = io::read_json(open(dir, BLOCK_META, "block")?)?;
    let blocks = post_hoc_blocks(&cmp.pairs, weights, meta.w0)?;
    let on_disk = io::read_blocks(open(dir, BLOCKS, "block")?, cmp.n_a(), cmp.n_b())?;
    let (a, b) = blocks.membership();
    if on_disk.a != a || on_disk.b != b {
        bail!(
            "blocks.csv does not match the fitted weights at w0 = {}; rerun `penlink block`",
            meta.w0
        );
    }
    Ok((meta.w0, blocks))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcMeta {
    pub seed: u64,
    pub theta: f64,
    pub w0: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub blocks: usize,
    pub retained_pairs: usize,
    pub initial_links: usize,
    pub bayes_links: usize,
    pub moves: MoveStats,
    pub acceptance: AcceptanceRates,
    pub final_params: MixtureParams,
}

pub fn cmd_mcmc(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let (meta, cmp) = load_comparisons(dir)?;
    let params = load_params(dir, &cmp)?;
    let weights = pair_weights(&cmp, &params)?;
    let (w0, blocks) = load_blocks(dir, &cmp, &weights)?;
    let theta = config.mcmc.theta.unwrap_or(config.estimator.theta);
    let prior = LinkagePrior::new(theta, prior_for(config, &meta.schema)?)?;
    let init = if config.mcmc.init_from_fit && dir.join(MATCHING).is_file() {
        Some(io::read_matching(open(dir, MATCHING, "fit")?, cmp.n_a(), cmp.n_b())?.0)
    } else {
        None
    };
    let options = config.mcmc_options(derive_seed(config.seed, "mcmc"))?;
    let summary = run_chain(&blocks, &cmp, prior, &params, init.as_ref(), options)?;
    let bayes = bayes_estimate(&summary);

    io::write_posterior(create(dir, POSTERIOR)?, &summary)?;
    io::write_l_trace(create(dir, L_TRACE)?, &summary.l_trace)?;
    io::write_matching(
        create(dir, BAYES_MATCHING)?,
        &weighted_links(&cmp, &weights, &bayes),
    )?;
    let mcmc_meta = McmcMeta {
        seed: options.seed,
        theta,
        w0,
        iterations: options.iterations,
        burn_in: options.burn_in,
        samples: summary.samples,
        blocks: blocks.blocks.len(),
        retained_pairs: blocks.retained_pairs(),
        initial_links: init.as_ref().map_or(0, Matching::len),
        bayes_links: bayes.len(),
        moves: summary.moves,
        acceptance: summary.acceptance,
        final_params: summary.params.clone(),
    };
    io::write_json(create(dir, MCMC_META)?, &mcmc_meta)?;
    println!(
        "sampled {} sweeps over {} blocks ({} pairs); Bayes estimate has {} links",
        options.iterations,
        mcmc_meta.blocks,
        mcmc_meta.retained_pairs,
        bayes.len()
    );
    Ok(())
}

pub fn cmd_eval(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let mut experiment = config
        .experiment
        .clone()
        .ok_or_else(|| anyhow!("missing experiment"))?;
    experiment.seed = derive_seed(config.seed, "eval");
    let rows = run_experiment(&experiment)?;
    io::write_results(create(dir, RESULTS)?, &rows)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        warn(format!("{failed} result rows come from failed replicates"));
    }
    for (s, scenario) in experiment.scenarios.iter().enumerate() {
        for est in experiment.estimators() {
            let of: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.scenario == s && r.estimator == est)
                .collect();
            let mean = |f: fn(&ResultRow) -> Option<f64>| {
                let v: Vec<f64> = of.iter().filter_map(|r| f(r)).collect();
                if v.is_empty() {
                    "-".to_string()
                } else {
                    format!("{:.3}", v.iter().sum::<f64>() / v.len() as f64)
                }
            };
            println!(
                "n={} overlap={} errors={} {:<8} precision {} recall {}",
                scenario.n,
                scenario.overlap,
                scenario.errors,
                est.name(),
                mean(|r| r.score.and_then(|x| x.precision)),
                mean(|r| r.score.and_then(|x| x.recall)),
            );
        }
    }
    Ok(())
}

pub fn cmd_synth(config: &PipelineConfig, dir: &Path) -> Result<()> {
    let mut section = config
        .synth
        .clone()
        .ok_or_else(|| anyhow!("missing synth"))?;
    section.config.seed = derive_seed(config.seed, "synth");
    let (a, b, truth) = if section.copies > 1 {
        generate_stacked(&section.config, section.copies)?
    } else {
        generate(&section.config)?
    };
    io::write_records(create(dir, FILE_A)?, &a)?;
    io::write_records(create(dir, FILE_B)?, &b)?;
    io::write_links(create(dir, TRUTH)?, &truth.matching)?;
    io::write_json(create(dir, SYNTH_META)?, &section)?;
    println!(
        "generated {} + {} records with {} true matches",
        a.len(),
        b.len(),
        truth.matching.len()
    );
    Ok(())
}
