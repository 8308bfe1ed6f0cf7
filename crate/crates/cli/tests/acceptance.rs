//! Acceptance criteria 1-11, one test per criterion. Each prints a single
//! pass/fail line; run with `--nocapture` to see them.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use penlink_core::assignment::{solve_lsap, solve_thresholded, WeightMatrix};
use penlink_core::bench::experiment_prior;
use penlink_core::blocking::{diagnostics, post_hoc_blocks};
use penlink_core::comparison::{compare_files, Comparisons};
use penlink_core::estimators::{
    pair_weights, penalized_likelihood_fit, theta_sweep, PenalizedOptions,
};
use penlink_core::mcmc::{run_chain, Chain, LinkagePrior, McmcOptions, PosteriorSummary};
use penlink_core::mixture::{em_fit, DirichletPrior, EmOptions, MixtureParams};
use penlink_core::synth::{generate, GroundTruth, SynthConfig};

fn report(id: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {id:>2} [{}] {name}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {id} failed: {detail}");
}

fn disjoint_event_bound(summary: &PosteriorSummary) -> bool {
    let tol = 1.0 + 2.0 / (summary.samples as f64).sqrt();
    summary.row_sums().iter().all(|&s| s <= tol) && summary.col_sums().iter().all(|&s| s <= tol)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-10.0..=10.0)).collect())
        .collect()
}

fn synthetic(config: &SynthConfig) -> (Comparisons, GroundTruth) {
    let (a, b, truth) = generate(config).unwrap();
    (
        compare_files(&a, &b, &config.schema(), false).unwrap(),
        truth,
    )
}

fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k)
        .map(|_| -rng.random::<f64>().max(1e-12).ln())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

#[test]
fn criterion_01_lsap_matches_exhaustive_search() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (rows, cols) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let w = random_matrix(&mut rng, rows, cols);
        let got = solve_lsap(&WeightMatrix::from_rows(&w).unwrap());
        assert_eq!(got.len(), rows.min(cols));
        let value: f64 = got.pairs.iter().map(|&(r, c)| w[r][c]).sum();
        worst = worst.max((value - common::brute_lsap(&w)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "LSAP equals exhaustive permutation search",
        worst <= 1e-9 && secs < 10.0,
        &format!("1000 matrices up to 7x7, max objective gap {worst:.2e}, {secs:.2}s"),
    );
}

#[test]
fn criterion_02_thresholded_lsap_matches_partial_matchings() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (rows, cols) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let w = random_matrix(&mut rng, rows, cols);
        let theta = rng.random_range(-10.0..=10.0);
        let got = solve_thresholded(&WeightMatrix::from_rows(&w).unwrap(), theta);
        let value: f64 = got.pairs.iter().map(|&(r, c)| w[r][c] - theta).sum();
        worst = worst.max((value - common::brute_thresholded(&w, theta)).abs());
    }
    report(
        2,
        "soft-thresholded LSAP equals best partial matching",
        worst <= 1e-9,
        &format!("500 instances up to 6x6, max gap {worst:.2e}"),
    );
}

#[test]
fn criterion_03_penalized_likelihood_monotone() {
    let mut worst_drop: f64 = 0.0;
    let mut weak_links = 0;
    let mut total_links = 0;
    for fit_id in 0..100u64 {
        let overlap = [0.1, 0.5, 1.0][(fit_id % 3) as usize];
        let errors = 1 + (fit_id / 3 % 3) as usize;
        let config = SynthConfig::four_field(100, overlap, errors, 300 + fit_id);
        let (cmp, _) = synthetic(&config);
        let theta = penlink_core::bench::default_theta(overlap);
        let init = MixtureParams::marginal_for(&config.schema(), &cmp.table).unwrap();
        let fit = penalized_likelihood_fit(
            &cmp,
            &experiment_prior(&config.schema()),
            &init,
            PenalizedOptions::new(theta),
        )
        .unwrap();
        for w in fit.trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
        let weights = pair_weights(&cmp, &fit.params).unwrap();
        for &(a, b) in fit.matching.links() {
            let i = cmp.pairs.pairs.binary_search(&(a, b)).unwrap();
            total_links += 1;
            if weights[i] <= theta {
                weak_links += 1;
            }
        }
    }
    report(
        3,
        "penalized objective non-decreasing; links exceed theta",
        worst_drop <= 1e-9 && weak_links == 0,
        &format!("100 fits, largest decrease {worst_drop:.2e}, {weak_links} of {total_links} links at or below theta"),
    );
}

#[test]
fn criterion_04_em_monotone() {
    let config = SynthConfig::four_field(120, 0.5, 2, 400);
    let (cmp, _) = synthetic(&config);
    let table = &cmp.table;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_drop: f64 = 0.0;
    for _ in 0..100 {
        let m = table
            .level_counts
            .iter()
            .map(|&k| random_simplex(&mut rng, k))
            .collect();
        let u = table
            .level_counts
            .iter()
            .map(|&k| random_simplex(&mut rng, k))
            .collect();
        let init = MixtureParams::new(m, u, rng.random_range(0.01..0.99)).unwrap();
        let fit = em_fit(table, &init, EmOptions::default()).unwrap();
        for w in fit.trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    report(
        4,
        "EM log-likelihood non-decreasing",
        table.total_pairs >= 10_000 && worst_drop <= 1e-9,
        &format!(
            "100 random starts on {} pairs, largest decrease {worst_drop:.2e}",
            table.total_pairs
        ),
    );
}

#[test]
fn criterion_05_restricted_mcmc_exactness() {
    let start = Instant::now();
    let cmp = common::distinct_pattern_problem(3, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let raw: Vec<f64> = (0..9).map(|_| rng.random_range(-2.0..2.0)).collect();
    let params = common::params_for_weights(&raw);
    let weights = pair_weights(&cmp, &params).unwrap();
    let theta = weights.iter().sum::<f64>() / 9.0;
    let prior = LinkagePrior::new(theta, DirichletPrior::flat(&[9])).unwrap();
    let blocks = post_hoc_blocks(&cmp.pairs, &weights, f64::NEG_INFINITY).unwrap();

    let matchings = common::partial_matchings(3, 3, &cmp.pairs.pairs);
    let mass: Vec<f64> = matchings
        .iter()
        .map(|m| {
            m.iter()
                .map(|&(a, b)| weights[a * 3 + b] - theta)
                .sum::<f64>()
                .exp()
        })
        .collect();
    let z: f64 = mass.iter().sum();
    let exact: HashMap<Vec<(usize, usize)>, f64> = matchings
        .iter()
        .cloned()
        .zip(mass.iter().map(|p| p / z))
        .collect();
    let mut exact_pair = [0.0; 9];
    for (m, p) in &exact {
        for &(a, b) in m {
            exact_pair[a * 3 + b] += p;
        }
    }

    let sweeps = 100_000;
    let mut worst_tv: f64 = 0.0;
    let mut worst_pair: f64 = 0.0;
    let mut bound_ok = true;
    for gibbs_cap in [0, 64] {
        let options = McmcOptions {
            iterations: sweeps,
            burn_in: 0,
            seed: 55,
            gibbs_cap,
            update_params: false,
            ..McmcOptions::default()
        };
        let mut chain = Chain::new(&blocks, &cmp, prior.clone(), &params, None, options).unwrap();
        let mut seen: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
        for _ in 0..sweeps {
            chain.step();
            *seen.entry(chain.matching().links().to_vec()).or_default() += 1;
        }
        let tv = 0.5
            * exact
                .iter()
                .map(|(m, p)| (seen.get(m).copied().unwrap_or(0) as f64 / sweeps as f64 - p).abs())
                .sum::<f64>();
        worst_tv = worst_tv.max(tv);

        let summary = run_chain(&blocks, &cmp, prior.clone(), &params, None, options).unwrap();
        for p in &summary.pairs {
            worst_pair = worst_pair.max((p.frequency - exact_pair[p.a * 3 + p.b]).abs());
        }
        bound_ok &= disjoint_event_bound(&summary);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_tv <= 0.02 && worst_pair <= 0.01 && secs < 60.0;
    report(
        5,
        "restricted MCMC matches enumerated posterior",
        ok,
        &format!("TV {worst_tv:.4}, max pair error {worst_pair:.4}, {secs:.1}s"),
    );
    report(
        11,
        "disjoint-event bound (criterion 5 runs)",
        bound_ok,
        "row and column sums within 1 + 2/sqrt(S)",
    );
}

#[test]
fn criterion_06_figure_one_blocks() {
    use penlink_core::comparison::CandidatePairSet;

    let pairs: Vec<(usize, usize)> = (0..5).flat_map(|a| (0..5).map(move |b| (a, b))).collect();
    let edges = [(0, 2), (1, 0), (1, 3), (2, 1), (3, 3)];
    let weights: Vec<f64> = pairs
        .iter()
        .map(|p| if edges.contains(p) { 1.0 } else { -1.0 })
        .collect();
    let set = CandidatePairSet {
        n_a: 5,
        n_b: 5,
        pairs,
        groups: Vec::new(),
    };
    let blocks = post_hoc_blocks(&set, &weights, 0.0).unwrap();
    let got: Vec<(Vec<usize>, Vec<usize>)> = blocks
        .blocks
        .iter()
        .map(|b| (b.a.clone(), b.b.clone()))
        .collect();
    let want = vec![
        (vec![0], vec![2]),
        (vec![1, 3], vec![0, 3]),
        (vec![2], vec![1]),
    ];
    let ok = got == want && blocks.unblocked_a == vec![4] && blocks.unblocked_b == vec![4];
    report(
        6,
        "example edge set yields three blocks with a5 and b5 unblocked",
        ok,
        &format!(
            "blocks {got:?}, unblocked a {:?}, b {:?}",
            blocks.unblocked_a, blocks.unblocked_b
        ),
    );
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[test]
fn criterion_07_simulation_direction_of_effect() {
    use penlink_core::bench::{run_experiment, Estimator, ExperimentConfig, ResultRow, Scenario};

    let start = Instant::now();
    let scenarios = (1..=3)
        .map(|errors| Scenario {
            theta: Some(7.0),
            ..Scenario::new(500, 0.1, errors)
        })
        .collect();
    let config = ExperimentConfig::new(scenarios, 20, 2024);
    let rows = run_experiment(&config).unwrap();
    let failures: Vec<&ResultRow> = rows.iter().filter(|r| r.error.is_some()).collect();
    let pick = |est: Estimator, errors: usize, f: fn(&ResultRow) -> Option<f64>| {
        let vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.estimator == est && r.errors == errors)
            .filter_map(f)
            .collect();
        (mean(vals.iter().copied()), vals.len())
    };
    let precision = |r: &ResultRow| r.score.and_then(|s| s.precision);
    let recall = |r: &ResultRow| r.score.and_then(|s| s.recall);

    let (pen_p, pen_n) = pick(Estimator::Penlik, 3, precision);
    let (em_p, em_n) = pick(Estimator::EmLsap, 3, precision);
    let mut recall_ok = true;
    let mut recall_text = Vec::new();
    for est in [Estimator::Penlik, Estimator::EmLsap] {
        let r: Vec<f64> = (1..=3).map(|e| pick(est, e, recall).0).collect();
        recall_ok &= r[0] >= r[1] && r[1] >= r[2];
        recall_text.push(format!(
            "{} {:.3}/{:.3}/{:.3}",
            est.name(),
            r[0],
            r[1],
            r[2]
        ));
    }
    let bayes_p = pick(Estimator::Bayes, 3, precision).0;
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    let ok = failures.is_empty() && pen_p > em_p && recall_ok && minutes < 30.0;
    report(
        7,
        "penalized likelihood beats EM+LSAP on precision; recall falls with errors",
        ok,
        &format!(
            "precision penlik {pen_p:.3} (n={pen_n}) vs em_lsap {em_p:.3} (n={em_n}), bayes {bayes_p:.3}; recall by errors {}; {} failed replicates; {minutes:.1} min",
            recall_text.join(", "),
            failures.len()
        ),
    );

    let bound_ok = rows
        .iter()
        .filter(|r| r.estimator == Estimator::Bayes)
        .all(|r| match (r.max_row_frequency, r.retained_samples) {
            (Some(worst), Some(s)) => worst <= 1.0 + 2.0 / (s as f64).sqrt(),
            _ => false,
        });
    report(
        11,
        "disjoint-event bound (criterion 7 runs)",
        bound_ok,
        "row and column sums within 1 + 2/sqrt(S)",
    );
}

#[test]
fn criterion_08_blocking_monotone_in_threshold() {
    let config = SynthConfig::four_field(200, 0.5, 2, 800);
    let (cmp, truth) = synthetic(&config);
    let init = MixtureParams::marginal_for(&config.schema(), &cmp.table).unwrap();
    let fit = penalized_likelihood_fit(
        &cmp,
        &experiment_prior(&config.schema()),
        &init,
        PenalizedOptions::new(5.0),
    )
    .unwrap();
    let weights = pair_weights(&cmp, &fit.params).unwrap();
    let true_weights: Vec<f64> = truth
        .matching
        .links()
        .iter()
        .map(|p| weights[cmp.pairs.pairs.binary_search(p).unwrap()])
        .collect();
    let min_true = true_weights.iter().copied().fold(f64::INFINITY, f64::min);
    let lo = weights
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .floor()
        - 1.0;
    let hi = weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .ceil()
        + 1.0;
    let grid: Vec<f64> = (0..)
        .map(|i| lo + 0.25 * i as f64)
        .take_while(|&w| w <= hi)
        .collect();

    let curve: Vec<_> = grid
        .iter()
        .map(|&w0| {
            let blocks = post_hoc_blocks(&cmp.pairs, &weights, w0).unwrap();
            diagnostics(&blocks, cmp.len(), Some(&truth.matching)).unwrap()
        })
        .collect();
    let rr_ok = curve
        .windows(2)
        .all(|w| w[1].reduction_ratio >= w[0].reduction_ratio);
    let pc = |d: &penlink_core::blocking::BlockingDiagnostics| d.pairs_completeness.unwrap();
    let pc_ok = curve.windows(2).all(|w| pc(&w[1]) <= pc(&w[0]));
    let below: Vec<f64> = curve.iter().filter(|d| d.w0 < min_true).map(pc).collect();
    let full_ok = !below.is_empty() && below.iter().all(|&p| p == 1.0);
    report(
        8,
        "reduction ratio rises and pairs completeness falls with w0",
        rr_ok && pc_ok && full_ok,
        &format!(
            "{} grid points from {lo} to {hi}; minimum true-link weight {min_true:.3}; completeness 1 at all {} points below it",
            grid.len(),
            below.len()
        ),
    );
}

#[test]
fn criterion_09_mcmc_deterministic_across_workers() {
    use serde_json::json;

    let tmp = tempfile::TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let lev = |name: &str| json!({"name": name, "comparator": {"kind": "levenshtein", "cuts": [0.0, 0.25, 0.5, 1.0]}});
    let exact = |name: &str| json!({"name": name, "comparator": {"kind": "exact"}});
    let config = json!({
        "input": {"file_a": out.join("file_a.csv"), "file_b": out.join("file_b.csv")},
        "schema": {"fields": [lev("given_name"), lev("family_name"), exact("age"), exact("occupation")]},
        "synth": serde_json::to_value(SynthConfig::four_field(200, 0.5, 2, 0)).unwrap(),
        "estimator": {"theta": 5.0},
        "seed": 9
    });
    let cfg = tmp.path().join("config.json");
    std::fs::write(&cfg, config.to_string()).unwrap();
    let run = |args: &[&str]| {
        let mut argv = vec![
            "penlink",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        argv.extend_from_slice(args);
        penlink_cli::run(argv)
    };
    for step in [
        &["synth"][..],
        &["compare"],
        &["fit", "--method", "penlik"],
        &["block"],
    ] {
        assert_eq!(run(step), 0, "{step:?}");
    }
    let mut outputs = Vec::new();
    for workers in ["1", "8"] {
        assert_eq!(run(&["--workers", workers, "mcmc"]), 0);
        outputs.push(std::fs::read(out.join("posterior.csv")).unwrap());
    }
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("mcmc_meta.json")).unwrap())
            .unwrap();
    let ok = outputs[0] == outputs[1] && !outputs[0].is_empty();
    report(
        9,
        "posterior CSV byte-identical for 1 and 8 workers",
        ok,
        &format!(
            "{} bytes, {} blocks, {} sweeps",
            outputs[0].len(),
            meta["blocks"],
            meta["iterations"]
        ),
    );
}

#[test]
fn criterion_10_census_analogue() {
    let config = SynthConfig::census_like(10);
    let (cmp, _) = synthetic(&config);
    let schema = config.schema();
    let prior =
        DirichletPrior::from_alphas(vec![vec![3.0, 20.0]; 3], vec![vec![20.0, 3.0]; 3]).unwrap();
    let init = MixtureParams::marginal_for(&schema, &cmp.table).unwrap();
    let grid: Vec<f64> = (0..=70).map(|i| i as f64 * 0.1).collect();
    let sweep = theta_sweep(&cmp, &prior, &init, &grid, PenalizedOptions::new(0.0)).unwrap();
    let counts: Vec<usize> = sweep.iter().map(|p| p.link_count).collect();
    let sweep_ok = counts.windows(2).all(|w| w[1] <= w[0]);

    let fit = penalized_likelihood_fit(&cmp, &prior, &init, PenalizedOptions::new(2.0)).unwrap();
    let weights = pair_weights(&cmp, &fit.params).unwrap();
    let blocks = post_hoc_blocks(&cmp.pairs, &weights, 0.0).unwrap();
    let linkage = LinkagePrior::new(2.0, prior).unwrap();
    let options = McmcOptions {
        seed: 10,
        ..McmcOptions::default()
    };
    let summary = run_chain(
        &blocks,
        &cmp,
        linkage,
        &fit.params,
        Some(&fit.matching),
        options,
    )
    .unwrap();
    let retained = blocks.retained_pairs();
    let share = retained as f64 / cmp.len() as f64;
    let ok = cmp.len() == 1530
        && cmp.table.len() <= 8
        && sweep_ok
        && share <= 0.10
        && summary.samples == 900;
    let mut steps = Vec::new();
    for (i, c) in counts.iter().enumerate() {
        if i == 0 || counts[i - 1] != *c {
            steps.push(format!("{c}@{:.1}", grid[i]));
        }
    }
    report(
        10,
        "census-scale link curve non-increasing; MCMC keeps at most 10% of pairs",
        ok,
        &format!(
            "{} pairs, {} patterns; links by theta {}; {retained} pairs ({:.1}%) retained at w0 = 0 in {} blocks",
            cmp.len(),
            cmp.table.len(),
            steps.join(" "),
            100.0 * share,
            blocks.blocks.len()
        ),
    );
}
