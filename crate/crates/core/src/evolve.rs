//! Self-Evolving weight scheme: rank-quality metrics over a request's
//! candidate set, the Advantage Evaluator ratio of a lagged snapshot against
//! the current model, and the snapshot policy that maintains the lag.

use thiserror::Error;

use crate::domain::{ObjectiveId, Request};
use crate::evalsuite::objective_values;
use crate::features;
use crate::ranknet::{self, ModelParams};

/// Lower clamp bound for objective weights.
pub const W_MIN: f64 = 0.1;
/// Upper clamp bound for objective weights.
pub const W_MAX: f64 = 10.0;
const METRIC_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error("K={k} exceeds candidate count {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("K must be positive")]
    ZeroK,
    #[error("scores ({scores}) and pxtr values ({values}) differ in length")]
    LengthMismatch { scores: usize, values: usize },
    #[error("model error: {0}")]
    Model(#[from] ranknet::RankNetError),
}

/// Rank-quality metric family used by the Advantage Evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricKind {
    HitRate,
    Mean,
    Dcg,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::HitRate => "hitrate",
            MetricKind::Mean => "mean",
            MetricKind::Dcg => "dcg",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "hitrate" => Some(MetricKind::HitRate),
            "mean" => Some(MetricKind::Mean),
            "dcg" => Some(MetricKind::Dcg),
            _ => None,
        }
    }
}

/// Indices 0..n ordered by `values` descending, ties broken by index
/// ascending.
fn ranked_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    idx
}

/// Quality of the score ranking measured against one objective's values:
/// HitRate@K (top-K overlap fraction), MEAN@K (mean value among the score
/// top-K), or DCG@K (log-discounted value sum in score order).
pub fn rank_metric(
    kind: MetricKind,
    scores: &[f64],
    pxtr_values: &[f64],
    k: usize,
) -> Result<f64, EvolveError> {
    if k == 0 {
        return Err(EvolveError::ZeroK);
    }
    if k > scores.len() {
        return Err(EvolveError::KTooLarge { k, n: scores.len() });
    }
    if scores.len() != pxtr_values.len() {
        return Err(EvolveError::LengthMismatch { scores: scores.len(), values: pxtr_values.len() });
    }
    let by_score = ranked_indices(scores);
    Ok(match kind {
        MetricKind::HitRate => {
            let by_value = ranked_indices(pxtr_values);
            let top_value: std::collections::HashSet<usize> =
                by_value[..k].iter().copied().collect();
            let hits = by_score[..k].iter().filter(|i| top_value.contains(i)).count();
            hits as f64 / k as f64
        }
        MetricKind::Mean => {
            by_score[..k].iter().map(|&i| pxtr_values[i]).sum::<f64>() / k as f64
        }
        MetricKind::Dcg => by_score[..k]
            .iter()
            .enumerate()
            .map(|(r, &i)| pxtr_values[i] / ((r + 2) as f64).log2())
            .sum(),
    })
}

/// Eq. 9 ratio Metric(Θ_{t-1}) / Metric(Θ_t), clamped to [W_MIN, W_MAX].
/// Exactly 1.0 when the two metrics coincide (including both zero);
/// above 1 when the current model regressed on this objective.
pub fn advantage_evaluator(metric_prev: f64, metric_curr: f64) -> f64 {
    if metric_prev == metric_curr {
        return 1.0;
    }
    (metric_prev / metric_curr.max(METRIC_EPS)).clamp(W_MIN, W_MAX)
}

/// Per-objective loss weights for one request.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub w: [f64; ObjectiveId::COUNT],
}

impl ObjectiveWeights {
    pub fn ones() -> Self {
        ObjectiveWeights { w: [1.0; ObjectiveId::COUNT] }
    }

    pub fn get(&self, obj: ObjectiveId) -> f64 {
        self.w[obj.index()]
    }
}

/// Per-request Advantage Evaluator weights given score vectors already
/// computed under the current and the snapshot parameters.
pub fn compute_weights_from_scores(
    request: &Request,
    current_scores: &[f64],
    previous_scores: &[f64],
    kind: MetricKind,
    k: usize,
    use_iput: bool,
) -> Result<ObjectiveWeights, EvolveError> {
    let mut w = [1.0; ObjectiveId::COUNT];
    for obj in ObjectiveId::ALL {
        let values = objective_values(request, obj, use_iput);
        let curr = rank_metric(kind, current_scores, &values, k)?;
        let prev = rank_metric(kind, previous_scores, &values, k)?;
        w[obj.index()] = advantage_evaluator(prev, curr);
    }
    Ok(ObjectiveWeights { w })
}

/// Scores the request under both parameter sets, then applies the Advantage
/// Evaluator per objective.
pub fn compute_weights(
    request: &Request,
    current: &ModelParams,
    previous: &ModelParams,
    kind: MetricKind,
    k: usize,
    use_iput: bool,
) -> Result<ObjectiveWeights, EvolveError> {
    let feats = features::encode(request);
    let curr = ranknet::forward(current, &feats.view())?;
    let prev = ranknet::forward(previous, &feats.view())?;
    compute_weights_from_scores(request, &curr.0, &prev.0, kind, k, use_iput)
}

/// Desk-scale stand-in for the serving/training model pair: a copy of the
/// parameters refreshed every `interval_steps` optimizer steps.
#[derive(Clone, Debug)]
pub struct SnapshotPolicy {
    pub interval_steps: usize,
    pub previous_params: ModelParams,
    last_snapshot_step: usize,
}

impl SnapshotPolicy {
    pub fn new(interval_steps: usize, initial: ModelParams) -> Self {
        SnapshotPolicy { interval_steps, previous_params: initial, last_snapshot_step: 0 }
    }

    /// Called once per optimizer step before the update; refreshes the
    /// snapshot whenever the configured interval has elapsed. The snapshot's
    /// age never exceeds `interval_steps`.
    pub fn maybe_snapshot(&mut self, step: usize, current: &ModelParams) {
        if step == 0 || step - self.last_snapshot_step >= self.interval_steps {
            self.previous_params = current.clone();
            self.last_snapshot_step = step;
        }
    }

    pub fn staleness(&self, step: usize) -> usize {
        step - self.last_snapshot_step
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Candidate, Pxtrs};
    use crate::ranknet::ModelConfig;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_rankings_hitrate_one() {
        let scores = [5.0, 4.0, 3.0, 2.0];
        let values = [0.9, 0.7, 0.5, 0.3];
        for k in 1..=4 {
            assert_eq!(rank_metric(MetricKind::HitRate, &scores, &values, k).unwrap(), 1.0);
        }
    }

    #[test]
    fn dcg_at_one_is_top_value() {
        let scores = [1.0, 9.0, 3.0];
        let values = [0.2, 0.8, 0.4];
        assert_eq!(rank_metric(MetricKind::Dcg, &scores, &values, 1).unwrap(), 0.8);
    }

    #[test]
    fn dcg_hand_example() {
        let scores = [3.0, 2.0, 1.0];
        let values = [1.0, 0.5, 0.25];
        let dcg = rank_metric(MetricKind::Dcg, &scores, &values, 3).unwrap();
        let expected = 1.0 + 0.5 / 3f64.log2() + 0.25 / 2.0;
        assert!((dcg - expected).abs() < 1e-12);
        assert!((dcg - 1.440465).abs() < 1e-6);
    }

    #[test]
    fn mean_at_k_matches_hand_computation() {
        let scores = [1.0, 3.0, 2.0];
        let values = [0.1, 0.9, 0.5];
        let m = rank_metric(MetricKind::Mean, &scores, &values, 2).unwrap();
        assert!((m - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_index_ascending() {
        let scores = [1.0, 1.0, 1.0];
        let values = [0.2, 0.9, 0.4];
        // Score ties keep original order, so the "top" item is index 0.
        assert_eq!(rank_metric(MetricKind::Dcg, &scores, &values, 1).unwrap(), 0.2);
    }

    #[test]
    fn k_larger_than_n_rejected() {
        assert!(matches!(
            rank_metric(MetricKind::Dcg, &[1.0], &[0.5], 2),
            Err(EvolveError::KTooLarge { k: 2, n: 1 })
        ));
        assert!(matches!(rank_metric(MetricKind::Dcg, &[1.0], &[0.5], 0), Err(EvolveError::ZeroK)));
    }

    #[test]
    fn advantage_evaluator_examples() {
        assert_eq!(advantage_evaluator(0.5, 0.5), 1.0);
        assert_eq!(advantage_evaluator(0.5, 0.25), 2.0);
        assert_eq!(advantage_evaluator(0.5, 0.0), W_MAX);
        assert_eq!(advantage_evaluator(0.0, 0.0), 1.0);
        assert_eq!(advantage_evaluator(0.0, 0.5), W_MIN);
    }

    fn plain_request(seed: u64, n: usize) -> Request {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let candidates = (0..n)
            .map(|i| {
                let mut vals = [0.0; 8];
                vals[0] = 1.0 + rng.random::<f64>() * 100.0;
                for v in vals.iter_mut().skip(1) {
                    *v = rng.random::<f64>();
                }
                Candidate {
                    item_id: format!("i{i}"),
                    pxtrs: Pxtrs::new(vals),
                    exposed: false,
                    feedback: None,
                }
            })
            .collect();
        Request { request_id: "r".into(), user_id: "u".into(), timestamp: 0, candidates }
    }

    #[test]
    fn identical_params_give_unit_weights() {
        let params = ranknet::init(3, ModelConfig::default()).unwrap();
        let r = plain_request(1, 10);
        let w = compute_weights(&r, &params, &params, MetricKind::Dcg, 6, true).unwrap();
        assert_eq!(w, ObjectiveWeights::ones());
    }

    #[test]
    fn single_candidate_gives_unit_weights() {
        let a = ranknet::init(3, ModelConfig::default()).unwrap();
        let b = ranknet::init(4, ModelConfig::default()).unwrap();
        let r = plain_request(2, 1);
        let w = compute_weights(&r, &a, &b, MetricKind::Dcg, 1, true).unwrap();
        assert_eq!(w, ObjectiveWeights::ones());
    }

    #[test]
    fn improved_current_model_is_downweighted() {
        // Current scores sort pctr exactly descending; previous scores are a
        // fixed shuffle whose DCG is strictly lower, so w_pctr < 1.
        let r = plain_request(5, 20);
        let values = objective_values(&r, ObjectiveId::Pctr, false);
        let current: Vec<f64> = values.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let previous: Vec<f64> = (0..20).map(|_| rng.random::<f64>()).collect();
        let curr_dcg = rank_metric(MetricKind::Dcg, &current, &values, 6).unwrap();
        let prev_dcg = rank_metric(MetricKind::Dcg, &previous, &values, 6).unwrap();
        assert!(prev_dcg < curr_dcg, "seeded shuffle must not be the perfect ranking");
        let w =
            compute_weights_from_scores(&r, &current, &previous, MetricKind::Dcg, 6, false).unwrap();
        assert!(w.get(ObjectiveId::Pctr) < 1.0);
    }

    #[test]
    fn snapshot_staleness_is_bounded() {
        let params = ranknet::init(1, ModelConfig::default()).unwrap();
        let mut policy = SnapshotPolicy::new(10, params.clone());
        for step in 0..53 {
            policy.maybe_snapshot(step, &params);
            assert!(policy.staleness(step) <= 10, "stale at step {step}");
        }
        assert_eq!(policy.staleness(52), 2);
    }

    proptest! {
        #[test]
        fn weights_always_in_bounds(seed in 0u64..200, n in 2usize..12, k in 1usize..4) {
            let k = k.min(n);
            let r = plain_request(seed, n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let current: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let previous: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let w = compute_weights_from_scores(&r, &current, &previous, MetricKind::Dcg, k, true).unwrap();
            for obj in ObjectiveId::ALL {
                prop_assert!(w.get(obj) >= W_MIN && w.get(obj) <= W_MAX);
            }
        }

        #[test]
        fn dcg_ratio_weight_is_scale_invariant(seed in 0u64..100, c in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            let current: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let previous: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let curr_a = rank_metric(MetricKind::Dcg, &current, &values, 4).unwrap();
            let prev_a = rank_metric(MetricKind::Dcg, &previous, &values, 4).unwrap();
            let curr_b = rank_metric(MetricKind::Dcg, &current, &scaled, 4).unwrap();
            let prev_b = rank_metric(MetricKind::Dcg, &previous, &scaled, 4).unwrap();
            let wa = advantage_evaluator(prev_a, curr_a);
            let wb = advantage_evaluator(prev_b, curr_b);
            prop_assert!((wa - wb).abs() < 1e-9);
        }

        #[test]
        fn hitrate_in_unit_interval(seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(3..15usize);
            let k = rng.random_range(1..=n);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let h = rank_metric(MetricKind::HitRate, &scores, &values, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&h));
            prop_assert!((h * k as f64).fract().abs() < 1e-9);
        }
    }
}
