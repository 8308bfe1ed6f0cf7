//! The m/u mixture over comparison patterns under conditional independence.
//!
//! `m[j][h]` is the probability that a matching pair shows level `h + 1` on
//! field `j`, `u[j][h]` the same for a non-matching pair. Pattern
//! probabilities are products over fields, and the weight of a pattern is
//! `log m(g) - log u(g)`.

use serde::{Deserialize, Serialize};

use crate::comparison::{ComparisonPattern, ComparisonSchema, PatternTable};
use crate::error::{Error, Result};

/// Probabilities below this are clamped before taking logs, which caps
/// single-field log ratios at about 23 in magnitude.
pub const PROB_FLOOR: f64 = 1e-10;

pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Validated m/u probability tables and match proportion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams")]
pub struct MixtureParams {
    m: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    pi: f64,
}

#[derive(Deserialize)]
struct RawParams {
    m: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    #[serde(default = "default_pi")]
    pi: f64,
}

fn default_pi() -> f64 {
    0.1
}

impl TryFrom<RawParams> for MixtureParams {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        MixtureParams::new(raw.m, raw.u, raw.pi)
    }
}

fn normalized(name: char, j: usize, v: Vec<f64>) -> Result<Vec<f64>> {
    if v.len() < 2 {
        return Err(Error::InvalidParams(format!(
            "{name}[{j}] needs at least two levels"
        )));
    }
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidParams(format!(
            "{name}[{j}] has a negative or non-finite entry"
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParams(format!(
            "{name}[{j}] sums to {total}, not 1"
        )));
    }
    Ok(v.into_iter().map(|p| p / total).collect())
}

impl MixtureParams {
    /// Validates shapes and normalization (within 1e-6, then renormalized).
    pub fn new(m: Vec<Vec<f64>>, u: Vec<Vec<f64>>, pi: f64) -> Result<Self> {
        if m.is_empty() || m.len() != u.len() {
            return Err(Error::InvalidParams(format!(
                "m has {} fields and u has {}",
                m.len(),
                u.len()
            )));
        }
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::InvalidParams(format!("pi = {pi} outside [0, 1]")));
        }
        let mut mm = Vec::with_capacity(m.len());
        let mut uu = Vec::with_capacity(u.len());
        for (j, (mj, uj)) in m.into_iter().zip(u).enumerate() {
            if mj.len() != uj.len() {
                return Err(Error::InvalidParams(format!(
                    "field {j}: m and u level counts differ"
                )));
            }
            mm.push(normalized('m', j, mj)?);
            uu.push(normalized('u', j, uj)?);
        }
        Ok(MixtureParams { m: mm, u: uu, pi })
    }

    pub fn uniform(level_counts: &[usize], pi: f64) -> Result<Self> {
        let flat: Vec<Vec<f64>> = level_counts
            .iter()
            .map(|&k| vec![1.0 / k as f64; k])
            .collect();
        MixtureParams::new(flat.clone(), flat, pi)
    }

    /// Default starting point: m puts 0.8 on the top agreement level, u puts
    /// 0.8 on the strongest disagreement level, the rest spread evenly, and
    /// pi = 0.1. `lowest` gives the 1-based strongest-disagreement level of
    /// each field (2 when a missing level occupies level 1).
    pub fn default_init(level_counts: &[usize], lowest: &[u8]) -> Result<Self> {
        let spread = |k: usize, peak: usize| -> Vec<f64> {
            let rest = 0.2 / (k - 1) as f64;
            (0..k).map(|h| if h == peak { 0.8 } else { rest }).collect()
        };
        let m = level_counts.iter().map(|&k| spread(k, k - 1)).collect();
        let u = level_counts
            .iter()
            .zip(lowest)
            .map(|(&k, &lo)| spread(k, lo as usize - 1))
            .collect();
        MixtureParams::new(m, u, 0.1)
    }

    pub fn default_for(schema: &ComparisonSchema) -> Result<Self> {
        let lowest: Vec<u8> = schema
            .fields
            .iter()
            .map(|f| f.lowest_agreement_level())
            .collect();
        Self::default_init(&schema.level_counts(), &lowest)
    }

    /// Like [`MixtureParams::default_for`], but with u set to the observed
    /// level frequencies over all pairs (plus one half per cell). Almost all
    /// candidate pairs are non-matches, so these are close to the true u.
    pub fn marginal_for(schema: &ComparisonSchema, table: &PatternTable) -> Result<Self> {
        let base = Self::default_for(schema)?;
        base.check_table(table)?;
        let u = table
            .level_totals()
            .iter()
            .map(|t| {
                let total: f64 = t.iter().map(|&c| c as f64 + 0.5).sum();
                t.iter().map(|&c| (c as f64 + 0.5) / total).collect()
            })
            .collect();
        MixtureParams::new(base.m, u, base.pi)
    }

    pub fn m(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn u(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn pi(&self) -> f64 {
        self.pi
    }

    pub fn fields(&self) -> usize {
        self.m.len()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// Exchanges the roles of the two components.
    pub fn swapped(&self) -> Self {
        MixtureParams {
            m: self.u.clone(),
            u: self.m.clone(),
            pi: 1.0 - self.pi,
        }
    }

    pub(crate) fn from_parts_unchecked(m: Vec<Vec<f64>>, u: Vec<Vec<f64>>, pi: f64) -> Self {
        MixtureParams { m, u, pi }
    }

    pub fn check_table(&self, table: &PatternTable) -> Result<()> {
        if self.level_counts() != table.level_counts {
            return Err(Error::InvalidParams(format!(
                "parameters have level counts {:?}, pattern table has {:?}",
                self.level_counts(),
                table.level_counts
            )));
        }
        Ok(())
    }

    /// Floored log tables for fast repeated weight evaluation.
    pub fn log_tables(&self) -> LogTables {
        let ln = |t: &[Vec<f64>]| {
            t.iter()
                .map(|v| v.iter().map(|&p| floored_ln(p)).collect())
                .collect()
        };
        LogTables {
            log_m: ln(&self.m),
            log_u: ln(&self.u),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogTables {
    pub log_m: Vec<Vec<f64>>,
    pub log_u: Vec<Vec<f64>>,
}

impl LogTables {
    /// Unchecked: levels must already be in range.
    pub fn log_likelihoods(&self, pattern: &ComparisonPattern) -> (f64, f64) {
        pattern
            .levels()
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(lm, lu), (j, &h)| {
                let h = h as usize - 1;
                (lm + self.log_m[j][h], lu + self.log_u[j][h])
            })
    }

    pub fn weight(&self, pattern: &ComparisonPattern) -> f64 {
        let (lm, lu) = self.log_likelihoods(pattern);
        lm - lu
    }
}

/// `(log m(g), log u(g))` under conditional independence, each factor floored.
pub fn pattern_log_likelihoods(
    pattern: &ComparisonPattern,
    params: &MixtureParams,
) -> Result<(f64, f64)> {
    pattern.check(&params.level_counts())?;
    let mut log_m = 0.0;
    let mut log_u = 0.0;
    for (j, &h) in pattern.levels().iter().enumerate() {
        let h = h as usize - 1;
        log_m += floored_ln(params.m[j][h]);
        log_u += floored_ln(params.u[j][h]);
    }
    Ok((log_m, log_u))
}

pub fn weight_of_pattern(pattern: &ComparisonPattern, params: &MixtureParams) -> Result<f64> {
    let (lm, lu) = pattern_log_likelihoods(pattern, params)?;
    Ok(lm - lu)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub log_m: f64,
    pub log_u: f64,
    pub weight: f64,
}

/// One row per pattern-table entry, in table order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTable {
    pub rows: Vec<WeightRow>,
}

impl WeightTable {
    pub fn weights(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.weight).collect()
    }
}

pub fn weight_table(table: &PatternTable, params: &MixtureParams) -> Result<WeightTable> {
    params.check_table(table)?;
    let logs = params.log_tables();
    let rows = table
        .entries
        .iter()
        .map(|e| {
            let (log_m, log_u) = logs.log_likelihoods(&e.pattern);
            WeightRow {
                log_m,
                log_u,
                weight: log_m - log_u,
            }
        })
        .collect();
    Ok(WeightTable { rows })
}

/// Dirichlet concentrations for m and u, plus the pseudocounts used to
/// regularize penalized-likelihood M-steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletPrior {
    pub alpha_m: Vec<Vec<f64>>,
    pub alpha_u: Vec<Vec<f64>>,
    pub pseudo_m: Vec<Vec<f64>>,
    pub pseudo_u: Vec<Vec<f64>>,
}

impl DirichletPrior {
    /// Dirichlet(2, ..., 2) everywhere, i.e. one pseudocount per cell.
    pub fn flat(level_counts: &[usize]) -> Self {
        Self::from_alphas(
            level_counts.iter().map(|&k| vec![2.0; k]).collect(),
            level_counts.iter().map(|&k| vec![2.0; k]).collect(),
        )
        .expect("flat prior is valid")
    }

    /// Pseudocounts are set to `alpha - 1` (floored at zero), so the
    /// penalized-likelihood maximum is the posterior mode.
    pub fn from_alphas(alpha_m: Vec<Vec<f64>>, alpha_u: Vec<Vec<f64>>) -> Result<Self> {
        let mode = |a: &Vec<Vec<f64>>| {
            a.iter()
                .map(|v| v.iter().map(|x| (x - 1.0).max(0.0)).collect())
                .collect()
        };
        let prior = DirichletPrior {
            pseudo_m: mode(&alpha_m),
            pseudo_u: mode(&alpha_u),
            alpha_m,
            alpha_u,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn with_pseudocounts(
        mut self,
        pseudo_m: Vec<Vec<f64>>,
        pseudo_u: Vec<Vec<f64>>,
    ) -> Result<Self> {
        self.pseudo_m = pseudo_m;
        self.pseudo_u = pseudo_u;
        self.validate()?;
        Ok(self)
    }

    /// Zero pseudocounts: the unregularized penalized likelihood.
    pub fn without_pseudocounts(mut self) -> Self {
        for v in self.pseudo_m.iter_mut().chain(self.pseudo_u.iter_mut()) {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
        self
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.alpha_m.iter().map(Vec::len).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.level_counts();
        for (name, t) in [
            ("alpha_u", &self.alpha_u),
            ("pseudo_m", &self.pseudo_m),
            ("pseudo_u", &self.pseudo_u),
        ] {
            if t.iter().map(Vec::len).collect::<Vec<_>>() != shape {
                return Err(Error::InvalidParams(format!(
                    "{name} shape differs from alpha_m"
                )));
            }
        }
        let all = |t: &Vec<Vec<f64>>, ok: fn(f64) -> bool| {
            t.iter().flatten().all(|&x| x.is_finite() && ok(x))
        };
        if !all(&self.alpha_m, |x| x > 0.0) || !all(&self.alpha_u, |x| x > 0.0) {
            return Err(Error::InvalidParams(
                "Dirichlet concentrations must be positive".into(),
            ));
        }
        if !all(&self.pseudo_m, |x| x >= 0.0) || !all(&self.pseudo_u, |x| x >= 0.0) {
            return Err(Error::InvalidParams(
                "pseudocounts must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Stop once the log-likelihood improves by less than this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-6,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub params: MixtureParams,
    /// Observed-data log-likelihood at the start and after every iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    let hi = a.max(b);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

fn exact_ln_pattern(table: &[Vec<f64>], pattern: &ComparisonPattern) -> f64 {
    pattern
        .levels()
        .iter()
        .enumerate()
        .map(|(j, &h)| table[j][h as usize - 1].ln())
        .sum()
}

/// Per-pattern match responsibilities and the mixture log-likelihood
/// `sum_g count(g) log[pi m(g) + (1 - pi) u(g)]`.
fn e_step(table: &PatternTable, params: &MixtureParams) -> (Vec<f64>, f64) {
    let ln_pi = params.pi.ln();
    let ln_not_pi = (1.0 - params.pi).ln();
    let mut loglik = 0.0;
    let resp = table
        .entries
        .iter()
        .map(|e| {
            let a = ln_pi + exact_ln_pattern(&params.m, &e.pattern);
            let b = ln_not_pi + exact_ln_pattern(&params.u, &e.pattern);
            let total = log_add_exp(a, b);
            loglik += e.count as f64 * total;
            if total == f64::NEG_INFINITY {
                params.pi
            } else {
                (a - total).exp()
            }
        })
        .collect();
    (resp, loglik)
}

fn m_step(table: &PatternTable, resp: &[f64], prev: &MixtureParams) -> MixtureParams {
    let mut num_m: Vec<Vec<f64>> = table.level_counts.iter().map(|&k| vec![0.0; k]).collect();
    let mut num_u = num_m.clone();
    let mut matched = 0.0;
    for (e, &r) in table.entries.iter().zip(resp) {
        let n = e.count as f64;
        matched += n * r;
        for (j, &h) in e.pattern.levels().iter().enumerate() {
            num_m[j][h as usize - 1] += n * r;
            num_u[j][h as usize - 1] += n * (1.0 - r);
        }
    }
    let finish = |num: Vec<Vec<f64>>, old: &[Vec<f64>]| -> Vec<Vec<f64>> {
        num.into_iter()
            .zip(old)
            .map(|(v, o)| {
                let total: f64 = v.iter().sum();
                if total > 0.0 {
                    v.iter().map(|x| x / total).collect()
                } else {
                    o.clone()
                }
            })
            .collect()
    };
    let pi = if table.total_pairs > 0 {
        (matched / table.total_pairs as f64).clamp(0.0, 1.0)
    } else {
        prev.pi
    };
    MixtureParams::from_parts_unchecked(finish(num_m, &prev.m), finish(num_u, &prev.u), pi)
}

/// Fits the two-component mixture by EM, treating every pattern
/// occurrence as an independent observation.
pub fn em_fit(table: &PatternTable, init: &MixtureParams, options: EmOptions) -> Result<EmFit> {
    init.check_table(table)?;
    if table.is_empty() {
        return Err(Error::InvalidParams(
            "EM needs a nonempty pattern table".into(),
        ));
    }
    let mut params = init.clone();
    let (mut resp, mut loglik) = e_step(table, &params);
    let mut trace = vec![loglik];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iter {
        params = m_step(table, &resp, &params);
        let (next_resp, next_ll) = e_step(table, &params);
        iterations += 1;
        trace.push(next_ll);
        let gain = next_ll - loglik;
        resp = next_resp;
        loglik = next_ll;
        if gain < options.tol {
            converged = true;
            break;
        }
    }
    Ok(EmFit {
        params,
        trace,
        iterations,
        converged,
    })
}
