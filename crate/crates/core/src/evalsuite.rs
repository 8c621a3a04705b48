//! Offline evaluation: per-user concordance (the AUC building block of
//! GAUC), impression-weighted GAUC aggregation, the interaction-probability-
//! per-unit-time transform, and a budget-constrained session replay that
//! demonstrates the decoupling between per-item interaction probability and
//! session-total interactions.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use thiserror::Error;

use crate::domain::{ObjectiveId, Request};
use crate::features;
use crate::ranknet::{self, ModelParams};

/// Watch-time floor for the IPUT division, in seconds.
pub const IPUT_MIN_WATCHTIME_S: f64 = 0.5;

static IPUT_CLAMP_COUNT: AtomicU64 = AtomicU64::new(0);

/// How many times [`iput_transform`] clamped a sub-floor watch time.
pub fn iput_clamp_count() -> u64 {
    IPUT_CLAMP_COUNT.load(Ordering::Relaxed)
}

/// Interaction probability per unit time: `pxtr / p_watchtime`. Watch times
/// below [`IPUT_MIN_WATCHTIME_S`] are clamped to the floor and counted.
pub fn iput_transform(pxtr: f64, p_watchtime: f64) -> f64 {
    let t = if p_watchtime < IPUT_MIN_WATCHTIME_S {
        IPUT_CLAMP_COUNT.fetch_add(1, Ordering::Relaxed);
        IPUT_MIN_WATCHTIME_S
    } else {
        p_watchtime
    };
    pxtr / t
}

/// Reference values of one objective over a request's candidates, with the
/// IPUT transform applied to interaction objectives when requested.
pub fn objective_values(request: &Request, obj: ObjectiveId, use_iput: bool) -> Vec<f64> {
    request
        .candidates
        .iter()
        .map(|c| {
            let raw = c.pxtrs.get(obj);
            if use_iput && obj.is_interaction() {
                iput_transform(raw, c.pxtrs.get(ObjectiveId::Pvtr))
            } else {
                raw
            }
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need at least 2 aligned values, got {0}")]
    TooFewValues(usize),
    #[error("score/reference length mismatch: {scores} vs {references}")]
    LengthMismatch { scores: usize, references: usize },
    #[error("empty per-user list")]
    EmptyUserList,
    #[error("non-positive impression count")]
    BadImpressions,
    #[error("request '{request_id}': {message}")]
    Request { request_id: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Concordant-plus-half-tied pair mass and valid pair count between a score
/// vector and a reference vector. Pairs with tied references are excluded;
/// tied scores count one half.
pub fn concordance_counts(scores: &[f64], references: &[f64]) -> (f64, u64) {
    let n = scores.len();
    let mut num = 0.0;
    let mut den = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dr = references[i] - references[j];
            if dr == 0.0 {
                continue;
            }
            den += 1;
            let ds = scores[i] - scores[j];
            if ds == 0.0 {
                num += 0.5;
            } else if ds * dr > 0.0 {
                num += 1.0;
            }
        }
    }
    (num, den)
}

/// Concordance index between scores and references; 0.5 when no pair with
/// distinct reference values exists.
pub fn pairwise_auc(scores: &[f64], references: &[f64]) -> Result<f64, EvalError> {
    if scores.len() != references.len() {
        return Err(EvalError::LengthMismatch { scores: scores.len(), references: references.len() });
    }
    if scores.len() < 2 {
        return Err(EvalError::TooFewValues(scores.len()));
    }
    let (num, den) = concordance_counts(scores, references);
    if den == 0 {
        Ok(0.5)
    } else {
        Ok(num / den as f64)
    }
}

/// Impression-weighted mean of per-user AUC values.
pub fn gauc(per_user: &[(u64, f64)]) -> Result<f64, EvalError> {
    if per_user.is_empty() {
        return Err(EvalError::EmptyUserList);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(impressions, auc) in per_user {
        if impressions == 0 {
            return Err(EvalError::BadImpressions);
        }
        num += impressions as f64 * auc;
        den += impressions as f64;
    }
    Ok(num / den)
}

/// Walks `ordering` over `(p_watchtime, p_interaction)` items, consuming the
/// watch-time budget. An item is credited only when it fully fits; the walk
/// stops at the first item that does not.
pub fn session_replay(candidates: &[(f64, f64)], ordering: &[usize], budget_s: f64) -> f64 {
    let mut remaining = budget_s;
    let mut expected = 0.0;
    for &idx in ordering {
        let (watch, interact) = candidates[idx];
        if watch > remaining {
            break;
        }
        remaining -= watch;
        expected += interact;
    }
    expected
}

/// GAUC columns of the consistency table: one per raw objective, one per
/// IPUT-transformed interaction objective.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyTable {
    pub raw: [f64; ObjectiveId::COUNT],
    pub iput: [f64; 4],
}

impl ConsistencyTable {
    /// Mean over all reported consistency values (8 raw + 4 IPUT).
    pub fn mean_gauc(&self) -> f64 {
        let sum: f64 = self.raw.iter().chain(self.iput.iter()).sum();
        sum / (self.raw.len() + self.iput.len()) as f64
    }

    pub fn mean_raw_gauc(&self) -> f64 {
        self.raw.iter().sum::<f64>() / self.raw.len() as f64
    }
}

#[derive(Default)]
struct UserAccumulator {
    impressions: u64,
    raw: [(f64, u64); ObjectiveId::COUNT],
    iput: [(f64, u64); 4],
}

/// Builds the per-objective GAUC consistency table for an arbitrary scorer.
///
/// Per-user AUC pools concordance counts over that user's requests (pairs are
/// compared only within a request's candidate set); users are then weighted
/// by their total candidate counts.
pub fn consistency_table<F>(log: &[Request], mut score: F, include_iput: bool) -> Result<ConsistencyTable, EvalError>
where
    F: FnMut(&Request) -> Result<Vec<f64>, EvalError>,
{
    let mut users: std::collections::BTreeMap<&str, UserAccumulator> = Default::default();
    for request in log {
        let scores = score(request)?;
        if scores.len() != request.candidates.len() {
            return Err(EvalError::Request {
                request_id: request.request_id.clone(),
                message: format!(
                    "scorer returned {} scores for {} candidates",
                    scores.len(),
                    request.candidates.len()
                ),
            });
        }
        let acc = users.entry(request.user_id.as_str()).or_default();
        acc.impressions += request.candidates.len() as u64;
        for obj in ObjectiveId::ALL {
            let refs = objective_values(request, obj, false);
            let (num, den) = concordance_counts(&scores, &refs);
            acc.raw[obj.index()].0 += num;
            acc.raw[obj.index()].1 += den;
        }
        if include_iput {
            for (slot, obj) in ObjectiveId::INTERACTION.iter().enumerate() {
                let refs = objective_values(request, *obj, true);
                let (num, den) = concordance_counts(&scores, &refs);
                acc.iput[slot].0 += num;
                acc.iput[slot].1 += den;
            }
        }
    }
    if users.is_empty() {
        return Err(EvalError::EmptyUserList);
    }
    let auc_of = |(num, den): (f64, u64)| if den == 0 { 0.5 } else { num / den as f64 };
    let mut raw = [0.0; ObjectiveId::COUNT];
    let mut iput = [0.0; 4];
    for k in 0..ObjectiveId::COUNT {
        let per_user: Vec<(u64, f64)> =
            users.values().map(|u| (u.impressions, auc_of(u.raw[k]))).collect();
        raw[k] = gauc(&per_user)?;
    }
    if include_iput {
        for k in 0..4 {
            let per_user: Vec<(u64, f64)> =
                users.values().map(|u| (u.impressions, auc_of(u.iput[k]))).collect();
            iput[k] = gauc(&per_user)?;
        }
    }
    Ok(ConsistencyTable { raw, iput })
}

/// Evaluation knobs and report metadata.
#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub k: usize,
    pub seed: u64,
    /// Session watch-time budget for the replay oracle, seconds.
    pub budget_s: f64,
    /// Zero the comparative rank features (isolation ablation models).
    pub zero_ranks: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 6,
            seed: 0,
            budget_s: 60.0,
            zero_ranks: false,
        }
    }
}

/// Per-objective GAUC table plus the session-replay summary.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub table: ConsistencyTable,
    pub replay_expected_interactions: f64,
    pub k: usize,
    pub seed: u64,
}

/// Scores a request under a model checkpoint's parameters.
pub fn model_scores(
    model: &ModelParams,
    request: &Request,
    zero_ranks: bool,
) -> Result<Vec<f64>, EvalError> {
    let feats = features::encode_with(request, zero_ranks);
    let scores = ranknet::forward(model, &feats.view()).map_err(|e| EvalError::Request {
        request_id: request.request_id.clone(),
        message: e.to_string(),
    })?;
    Ok(scores.0)
}

/// Sums the interaction-objective probabilities of a candidate: the expected
/// number of distinct interactions if the item is fully watched.
fn expected_interactions(request: &Request, idx: usize) -> f64 {
    ObjectiveId::INTERACTION
        .iter()
        .map(|o| request.candidates[idx].pxtrs.get(*o))
        .sum()
}

/// Replays the exposed slate of each request under the given per-request
/// score vectors (aligned with `log`) and returns the mean expected
/// interactions per request.
pub fn replay_log(log: &[Request], scores_per_request: &[Vec<f64>], budget_s: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0u64;
    for (request, scores) in log.iter().zip(scores_per_request) {
        let exposed = request.exposed_indices();
        if exposed.is_empty() {
            continue;
        }
        let items: Vec<(f64, f64)> = exposed
            .iter()
            .map(|&i| (request.candidates[i].pxtrs.get(ObjectiveId::Pvtr), expected_interactions(request, i)))
            .collect();
        let mut ordering: Vec<usize> = (0..items.len()).collect();
        ordering.sort_by(|&a, &b| {
            scores[exposed[b]]
                .partial_cmp(&scores[exposed[a]])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        total += session_replay(&items, &ordering, budget_s);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Full offline evaluation of a model against a log. Each request is scored
/// once and feeds both the consistency table and the replay summary.
pub fn evaluate(model: &ModelParams, log: &[Request], cfg: &EvalConfig) -> Result<EvalReport, EvalError> {
    let mut cached: Vec<Vec<f64>> = Vec::with_capacity(log.len());
    let table = consistency_table(
        log,
        |r| {
            let scores = model_scores(model, r, cfg.zero_ranks)?;
            cached.push(scores.clone());
            Ok(scores)
        },
        true,
    )?;
    let replay = replay_log(log, &cached, cfg.budget_s);
    Ok(EvalReport {
        table,
        replay_expected_interactions: replay,
        k: cfg.k,
        seed: cfg.seed,
    })
}

impl EvalReport {
    /// One row per (objective, metric, value); metadata rows carry `-` in the
    /// objective column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("objective,metric,value\n");
        for obj in ObjectiveId::ALL {
            writeln!(out, "{},gauc,{}", obj.name(), self.table.raw[obj.index()]).unwrap();
        }
        for (slot, obj) in ObjectiveId::INTERACTION.iter().enumerate() {
            writeln!(out, "{},gauc_iput,{}", obj.name(), self.table.iput[slot]).unwrap();
        }
        writeln!(out, "-,replay_expected_interactions,{}", self.replay_expected_interactions).unwrap();
        writeln!(out, "-,mean_gauc,{}", self.table.mean_gauc()).unwrap();
        writeln!(out, "-,k,{}", self.k).unwrap();
        writeln!(out, "-,seed,{}", self.seed).unwrap();
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), EvalError> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}
