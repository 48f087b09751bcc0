use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::propensity::estimate_propensity_scores;
use super::rdd::normal_p;
use crate::data::DataTable;
use crate::error::{EconError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    Ate,
    Atet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingOptions {
    pub estimand: Estimand,
    /// Neighbours per unit.
    pub ratio: usize,
    pub with_replacement: bool,
    /// Bootstrap replications for the standard error; 0 skips the bootstrap.
    pub bootstrap_reps: usize,
    pub seed: u64,
}

impl Default for MatchingOptions {
    fn default() -> Self {
        Self { estimand: Estimand::Ate, ratio: 1, with_replacement: true, bootstrap_reps: 0, seed: 0 }
    }
}

/// A unit, one of its matched neighbours from the other group, and the
/// absolute score distance between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub unit: usize,
    pub matched: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub estimand: Estimand,
    pub point_estimate: f64,
    pub bootstrap_se: Option<f64>,
    /// Normal-reference p-value from the bootstrap standard error.
    pub p_value: Option<f64>,
    pub bootstrap_reps_used: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub matches: Vec<MatchPair>,
    pub notes: Vec<String>,
}

/// The `ratio` nearest candidates to `score`; ties go to the lowest index.
fn nearest(score: f64, candidates: &[(usize, f64)], ratio: usize, used: Option<&[bool]>) -> Vec<usize> {
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(ratio + 1);
    for &(idx, s) in candidates {
        if used.is_some_and(|u| u[idx]) {
            continue;
        }
        let d = (score - s).abs();
        let pos = best.partition_point(|&(bd, bi)| bd < d || (bd == d && bi < idx));
        if pos < ratio {
            best.insert(pos, (d, idx));
            best.truncate(ratio);
        }
    }
    best.into_iter().map(|(_, i)| i).collect()
}

/// Nearest-neighbour matching on precomputed scores.
///
/// Indices in the returned pairs refer to positions in `scores`. ATET matches
/// each treated unit to controls; ATE also imputes the treated outcome for each
/// control and averages the signed contrasts over all units.
pub fn match_on_scores(
    scores: &[f64],
    treated: &[bool],
    outcomes: &[f64],
    estimand: Estimand,
    ratio: usize,
    with_replacement: bool,
) -> Result<(f64, Vec<MatchPair>)> {
    if ratio == 0 {
        return Err(EconError::InvalidArgument("matching ratio must be at least 1".into()));
    }
    let group = |flag: bool| -> Vec<(usize, f64)> {
        (0..scores.len()).filter(|&i| treated[i] == flag).map(|i| (i, scores[i])).collect()
    };
    let t = group(true);
    let c = group(false);
    if t.is_empty() {
        return Err(EconError::EmptyGroup("treated".into()));
    }
    if c.is_empty() {
        return Err(EconError::EmptyGroup("control".into()));
    }

    let match_side = |units: &[(usize, f64)], pool: &[(usize, f64)], label: &str| {
        let mut used = (!with_replacement).then(|| vec![false; scores.len()]);
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::with_capacity(units.len());
        for &(i, s) in units {
            let m = nearest(s, pool, ratio, used.as_deref());
            if m.len() < ratio {
                return Err(EconError::InvalidArgument(format!(
                    "not enough {label} units to match without replacement"
                )));
            }
            if let Some(u) = used.as_mut() {
                m.iter().for_each(|&j| u[j] = true);
            }
            groups.push((i, m));
        }
        Ok(groups)
    };
    let mean_of = |idx: &[usize]| idx.iter().map(|&j| outcomes[j]).sum::<f64>() / idx.len() as f64;

    let mut groups = match_side(&t, &c, "control")?;
    let mut total: f64 = groups.iter().map(|(u, m)| outcomes[*u] - mean_of(m)).sum();
    let mut count = groups.len();
    if estimand == Estimand::Ate {
        let back = match_side(&c, &t, "treated")?;
        total += back.iter().map(|(u, m)| mean_of(m) - outcomes[*u]).sum::<f64>();
        count += back.len();
        groups.extend(back);
    }
    let pairs = groups
        .into_iter()
        .flat_map(|(u, m)| {
            m.into_iter()
                .map(move |j| MatchPair { unit: u, matched: j, distance: (scores[u] - scores[j]).abs() })
        })
        .collect();
    Ok((total / count as f64, pairs))
}

struct Sample {
    scores: Vec<f64>,
    treated: Vec<bool>,
    outcomes: Vec<f64>,
    rows: Vec<usize>,
}

fn score_sample(
    table: &DataTable,
    treatment: &str,
    outcome: &str,
    covariates: &[String],
    categorical: &[String],
) -> Result<Sample> {
    let ps = estimate_propensity_scores(table, treatment, covariates, categorical)?;
    let d = table.numeric(treatment)?;
    let y = table.numeric(outcome)?;
    let mut s = Sample { scores: vec![], treated: vec![], outcomes: vec![], rows: vec![] };
    for r in 0..table.row_count() {
        if let (Some(p), Some(d), Some(y)) = (ps.scores[r], d[r], y[r]) {
            s.scores.push(p);
            s.treated.push(d == 1.0);
            s.outcomes.push(y);
            s.rows.push(r);
        }
    }
    Ok(s)
}

/// Propensity-score nearest-neighbour matching with an optional bootstrap
/// standard error. Each replication resamples rows, refits the score model and
/// rematches; replication `b` draws from stream `b` of a ChaCha generator
/// seeded with `options.seed`, so results do not depend on thread scheduling.
pub fn ps_matching(
    table: &DataTable,
    treatment: &str,
    outcome: &str,
    covariates: &[String],
    categorical: &[String],
    options: &MatchingOptions,
) -> Result<MatchResult> {
    let s = score_sample(table, treatment, outcome, covariates, categorical)?;
    let (estimate, pairs) = match_on_scores(
        &s.scores,
        &s.treated,
        &s.outcomes,
        options.estimand,
        options.ratio,
        options.with_replacement,
    )?;
    let matches = pairs
        .into_iter()
        .map(|p| MatchPair { unit: s.rows[p.unit], matched: s.rows[p.matched], distance: p.distance })
        .collect();
    let n_treated = s.treated.iter().filter(|&&t| t).count();
    let mut notes = vec![format!(
        "{} nearest-neighbour matching on the propensity score, ratio {}, {} replacement",
        match options.estimand {
            Estimand::Ate => "ATE",
            Estimand::Atet => "ATET",
        },
        options.ratio,
        if options.with_replacement { "with" } else { "without" }
    )];

    let (bootstrap_se, used) = if options.bootstrap_reps > 0 {
        let n = table.row_count();
        let draws: Vec<Option<f64>> = (0..options.bootstrap_reps)
            .into_par_iter()
            .map(|b| {
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                rng.set_stream(b as u64);
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let resampled = table.select_rows(&rows);
                let bs = score_sample(&resampled, treatment, outcome, covariates, categorical).ok()?;
                match_on_scores(
                    &bs.scores,
                    &bs.treated,
                    &bs.outcomes,
                    options.estimand,
                    options.ratio,
                    options.with_replacement,
                )
                .ok()
                .map(|r| r.0)
            })
            .collect();
        let ok: Vec<f64> = draws.into_iter().flatten().collect();
        if ok.len() < options.bootstrap_reps {
            notes.push(format!(
                "{} of {} bootstrap replication(s) failed and were skipped",
                options.bootstrap_reps - ok.len(),
                options.bootstrap_reps
            ));
        }
        let se = (ok.len() >= 2).then(|| {
            let m = ok.iter().sum::<f64>() / ok.len() as f64;
            (ok.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
        });
        notes.push(format!("bootstrap standard error from {} replication(s), seed {}", ok.len(), options.seed));
        (se, ok.len())
    } else {
        (None, 0)
    };

    Ok(MatchResult {
        estimand: options.estimand,
        point_estimate: estimate,
        bootstrap_se,
        p_value: bootstrap_se.map(|se| normal_p(estimate, se)),
        bootstrap_reps_used: used,
        n_treated,
        n_control: s.treated.len() - n_treated,
        matches,
        notes,
    })
}
