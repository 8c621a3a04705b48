//! Pairwise supervision: the posterior relative-advantage loss over exposed
//! candidates, the per-objective prior AUC surrogate losses over the whole
//! candidate set, and their weighted combination with exact score gradients.

use rand_chacha::ChaCha8Rng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::domain::{satisfaction_level, ObjectiveId, Request};
use crate::evalsuite::objective_values;
use crate::evolve::ObjectiveWeights;
use crate::features;
use crate::ranknet::{self, Cache, ModelParams};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("objective weight for {0} must be strictly positive")]
    NonPositiveWeight(ObjectiveId),
    #[error("pair index {index} out of range for {count} candidates")]
    PairIndexOutOfRange { index: usize, count: usize },
    #[error("model error: {0}")]
    Model(#[from] ranknet::RankNetError),
}

/// Ordered preference pairs (winner, loser) within one request. `objective`
/// is set for prior pairs and absent for posterior pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub objective: Option<ObjectiveId>,
}

impl PairBatch {
    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

fn fnv1a64(s: &str) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn pair_rng(seed: u64, request_id: &str, tag: u64) -> ChaCha8Rng {
    let mixed = seed
        .wrapping_add(fnv1a64(request_id))
        .wrapping_add(tag.wrapping_mul(0x9E3779B97F4A7C15));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Uniform reservoir of `max_pairs` pairs over a lazily enumerated ground
/// set, so the full O(n^2) pair list is never materialized.
struct PairReservoir {
    pairs: Vec<(usize, usize)>,
    cap: usize,
    seen: u64,
    rng: ChaCha8Rng,
}

impl PairReservoir {
    fn new(cap: usize, rng: ChaCha8Rng) -> Self {
        PairReservoir { pairs: Vec::with_capacity(cap.min(4096)), cap, seen: 0, rng }
    }

    fn offer(&mut self, pair: (usize, usize)) {
        self.seen += 1;
        if self.pairs.len() < self.cap {
            self.pairs.push(pair);
        } else {
            let slot = self.rng.random_range(0..self.seen);
            if (slot as usize) < self.cap {
                self.pairs[slot as usize] = pair;
            }
        }
    }
}

/// All (winner, loser) pairs among exposed candidates whose satisfaction
/// levels strictly differ, subsampled to `max_pairs` by seed. Requests with
/// no strict ordering yield an empty batch.
pub fn build_posterior_pairs(request: &Request, max_pairs: usize, seed: u64) -> PairBatch {
    let exposed: Vec<(usize, i32)> = request
        .candidates
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.feedback.as_ref().map(|fb| (i, satisfaction_level(fb).0)))
        .collect();
    let mut reservoir = PairReservoir::new(max_pairs, pair_rng(seed, &request.request_id, u64::MAX));
    for a in 0..exposed.len() {
        for b in (a + 1)..exposed.len() {
            let (i, li) = exposed[a];
            let (j, lj) = exposed[b];
            if li > lj {
                reservoir.offer((i, j));
            } else if lj > li {
                reservoir.offer((j, i));
            }
        }
    }
    PairBatch { pairs: reservoir.pairs, objective: None }
}

/// All (winner, loser) pairs over the full candidate set where the
/// objective's value (IPUT-transformed for interaction objectives when
/// `use_iput`) strictly differs, subsampled to `max_pairs` by seed.
pub fn build_prior_pairs(
    request: &Request,
    objective: ObjectiveId,
    max_pairs: usize,
    use_iput: bool,
    seed: u64,
) -> PairBatch {
    let values = objective_values(request, objective, use_iput);
    let mut reservoir =
        PairReservoir::new(max_pairs, pair_rng(seed, &request.request_id, objective.index() as u64));
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            if values[i] > values[j] {
                reservoir.offer((i, j));
            } else if values[j] > values[i] {
                reservoir.offer((j, i));
            }
        }
    }
    PairBatch { pairs: reservoir.pairs, objective: Some(objective) }
}

/// Mean pairwise logistic loss `-log sigmoid(s_i - s_j)` over the batch,
/// computed in the numerically stable softplus form, plus the loss gradient
/// with respect to every candidate score. An empty batch contributes zero
/// loss and zero gradients.
pub fn pairwise_logistic_loss(scores: &[f64], batch: &PairBatch) -> Result<(f64, Vec<f64>), LossError> {
    let mut grads = vec![0.0; scores.len()];
    if batch.pairs.is_empty() {
        return Ok((0.0, grads));
    }
    for &(i, j) in &batch.pairs {
        let bad = [i, j].into_iter().find(|&x| x >= scores.len());
        if let Some(index) = bad {
            return Err(LossError::PairIndexOutOfRange { index, count: scores.len() });
        }
    }
    let m = batch.pairs.len() as f64;
    let mut loss = 0.0;
    for &(i, j) in &batch.pairs {
        let d = scores[i] - scores[j];
        // softplus(-d) = max(-d, 0) + ln(1 + exp(-|d|))
        loss += (-d).max(0.0) + (-d.abs()).exp().ln_1p();
        let slope = 1.0 / (1.0 + d.exp()); // sigmoid(-d)
        grads[i] -= slope / m;
        grads[j] += slope / m;
    }
    Ok((loss / m, grads))
}

/// Loss pipeline switches; defaults match the full training variant.
#[derive(Clone, Debug)]
pub struct LossConfig {
    pub max_pairs: usize,
    pub use_iput: bool,
    pub use_posterior: bool,
    pub use_prior: bool,
    pub zero_ranks: bool,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            max_pairs: 256,
            use_iput: true,
            use_posterior: true,
            use_prior: true,
            zero_ranks: false,
            seed: 0,
        }
    }
}

/// Loss components of one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub posterior_loss: f64,
    pub per_objective: [f64; ObjectiveId::COUNT],
    pub prior_loss: f64,
    pub total: f64,
}

/// Composite request loss and its exact parameter gradients: the posterior
/// relative-advantage term plus the weighted mean of the per-objective prior
/// surrogate losses.
pub fn total_loss(
    params: &ModelParams,
    request: &Request,
    weights: &ObjectiveWeights,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Vec<f64>), LossError> {
    let feats = features::encode_with(request, cfg.zero_ranks);
    let (scores, cache) = ranknet::forward_cached(params, &feats.view())?;
    total_loss_with_forward(params, request, weights, cfg, &scores.0, &cache)
}

/// As [`total_loss`], reusing a forward pass the caller already ran on this
/// request's features (the trainer shares it with the advantage evaluator).
pub(crate) fn total_loss_with_forward(
    params: &ModelParams,
    request: &Request,
    weights: &ObjectiveWeights,
    cfg: &LossConfig,
    scores: &[f64],
    cache: &Cache,
) -> Result<(LossBreakdown, Vec<f64>), LossError> {
    for obj in ObjectiveId::ALL {
        if !(weights.get(obj) > 0.0) {
            return Err(LossError::NonPositiveWeight(obj));
        }
    }
    let mut dscores = vec![0.0; scores.len()];

    let posterior_loss = if cfg.use_posterior {
        let batch = build_posterior_pairs(request, cfg.max_pairs, cfg.seed);
        let (loss, grads) = pairwise_logistic_loss(scores, &batch)?;
        for (d, g) in dscores.iter_mut().zip(&grads) {
            *d += g;
        }
        loss
    } else {
        0.0
    };

    let n_objectives = ObjectiveId::COUNT as f64;
    let mut per_objective = [0.0; ObjectiveId::COUNT];
    let mut prior_loss = 0.0;
    if cfg.use_prior {
        for obj in ObjectiveId::ALL {
            let batch = build_prior_pairs(request, obj, cfg.max_pairs, cfg.use_iput, cfg.seed);
            let (loss, grads) = pairwise_logistic_loss(scores, &batch)?;
            per_objective[obj.index()] = loss;
            let w = weights.get(obj);
            prior_loss += w * loss / n_objectives;
            let coeff = w / n_objectives;
            for (d, g) in dscores.iter_mut().zip(&grads) {
                *d += coeff * g;
            }
        }
    }

    let total = posterior_loss + prior_loss;
    let grads = ranknet::backward(params, cache, &dscores)?;
    Ok((LossBreakdown { posterior_loss, per_objective, prior_loss, total }, grads))
}
