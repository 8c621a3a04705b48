//! Candidate-set feature encoding: raw per-objective scores, comparative
//! normalized-rank features, and a log watch-time term. Encoding is purely
//! pre-exposure; feedback never enters the feature matrix.

use ndarray::Array2;

use crate::domain::{ObjectiveId, Request};

/// Columns per candidate: 8 raw pxtrs, 8 normalized ranks, log(1 + pvtr).
pub const FEATURE_DIM: usize = 17;

/// Per-objective normalized rank features for every candidate.
///
/// For each objective, candidates are sorted descending by that objective's
/// pxtr (ties broken by `item_id` ascending) and the 1-based rank `r` maps to
/// `r / n`, so values lie in `(0, 1]` with `1/n` marking the top item.
pub fn normalized_ranks(request: &Request) -> Vec<[f64; ObjectiveId::COUNT]> {
    let n = request.candidates.len();
    let mut ranks = vec![[0.0; ObjectiveId::COUNT]; n];
    let mut order: Vec<usize> = (0..n).collect();
    for obj in ObjectiveId::ALL {
        order.sort_by(|&a, &b| {
            let va = request.candidates[a].pxtrs.get(obj);
            let vb = request.candidates[b].pxtrs.get(obj);
            vb.partial_cmp(&va)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| request.candidates[a].item_id.cmp(&request.candidates[b].item_id))
        });
        for (r, &idx) in order.iter().enumerate() {
            ranks[idx][obj.index()] = (r + 1) as f64 / n as f64;
        }
    }
    ranks
}

/// Encodes a request into its `n x 17` model input.
pub fn encode(request: &Request) -> Array2<f64> {
    encode_with(request, false)
}

/// Encoding with an option to zero the comparative rank features, used by
/// the isolation ablation where each candidate is scored without set context.
pub fn encode_with(request: &Request, zero_ranks: bool) -> Array2<f64> {
    let n = request.candidates.len();
    let ranks = if zero_ranks { None } else { Some(normalized_ranks(request)) };
    let mut out = Array2::zeros((n, FEATURE_DIM));
    for (i, cand) in request.candidates.iter().enumerate() {
        for obj in ObjectiveId::ALL {
            out[[i, obj.index()]] = cand.pxtrs.get(obj);
            if let Some(r) = &ranks {
                out[[i, 8 + obj.index()]] = r[i][obj.index()];
            }
        }
        out[[i, 16]] = cand.pxtrs.get(ObjectiveId::Pvtr).ln_1p();
    }
    out
}
