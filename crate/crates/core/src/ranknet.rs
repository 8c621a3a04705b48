//! Transformer-based set scorer: maps a request's feature matrix to one
//! scalar score per candidate. Forward and reverse passes are hand-written
//! in f64 so parameter gradients are exact (finite-difference checkable).
//!
//! Architecture: input projection (17 -> d_model), `layers` pre-norm blocks
//! of multi-head self-attention over the candidate set plus a SiLU
//! feed-forward of width 4*d_model, a final layer norm, and a scalar head.
//! There is no positional encoding over candidate index: the candidate set
//! is a set, and order information enters only through the normalized-rank
//! features.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;
use rand::{RngCore, SeedableRng};
use thiserror::Error;

use crate::features::FEATURE_DIM;

const LN_EPS: f64 = 1e-6;
const CKPT_MAGIC: &[u8; 8] = b"EMERCKP1";
const CKPT_VERSION: u32 = 1;
const FLAG_ATTENTION: u32 = 1;

#[derive(Debug, Error)]
pub enum RankNetError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("non-finite input at row {row}, column {col}")]
    NonFiniteInput { row: usize, col: usize },
    #[error("upstream gradient length {got} does not match {expect} candidates")]
    GradientShapeMismatch { got: usize, expect: usize },
    #[error("checkpoint {path}: {reason}")]
    CheckpointFormat { path: String, reason: String },
    #[error("checkpoint {path}: {source}")]
    CheckpointIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Scorer hyperparameters. `attention: false` disables the self-attention
/// sublayer entirely, turning the model into an isolated per-candidate
/// feed-forward scorer (used by the comparison ablation).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d_model: 32, layers: 2, heads: 4, attention: true }
    }
}

#[derive(Clone, Copy)]
struct Span {
    off: usize,
    rows: usize,
    cols: usize,
}

impl Span {
    fn len(&self) -> usize {
        self.rows * self.cols
    }
}

struct BlockLayout {
    ln1_g: Span,
    ln1_b: Span,
    wq: Span,
    bq: Span,
    wk: Span,
    bk: Span,
    wv: Span,
    bv: Span,
    wo: Span,
    bo: Span,
    ln2_g: Span,
    ln2_b: Span,
    w1: Span,
    b1: Span,
    w2: Span,
    b2: Span,
}

/// Fixed declared parameter order; checkpoints serialize `data` verbatim.
struct Layout {
    input_w: Span,
    input_b: Span,
    blocks: Vec<BlockLayout>,
    final_g: Span,
    final_b: Span,
    head_w: Span,
    head_b: Span,
    total: usize,
}

impl Layout {
    fn new(cfg: &ModelConfig) -> Layout {
        let d = cfg.d_model;
        let ff = 4 * d;
        let mut off = 0;
        let mut take = |rows: usize, cols: usize| {
            let span = Span { off, rows, cols };
            off += rows * cols;
            span
        };
        let input_w = take(FEATURE_DIM, d);
        let input_b = take(d, 1);
        let blocks = (0..cfg.layers)
            .map(|_| BlockLayout {
                ln1_g: take(d, 1),
                ln1_b: take(d, 1),
                wq: take(d, d),
                bq: take(d, 1),
                wk: take(d, d),
                bk: take(d, 1),
                wv: take(d, d),
                bv: take(d, 1),
                wo: take(d, d),
                bo: take(d, 1),
                ln2_g: take(d, 1),
                ln2_b: take(d, 1),
                w1: take(d, ff),
                b1: take(ff, 1),
                w2: take(ff, d),
                b2: take(d, 1),
            })
            .collect();
        let final_g = take(d, 1);
        let final_b = take(d, 1);
        let head_w = take(d, 1);
        let head_b = take(1, 1);
        Layout { input_w, input_b, blocks, final_g, final_b, head_w, head_b, total: off }
    }
}

fn mat<'a>(data: &'a [f64], span: &Span) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((span.rows, span.cols), &data[span.off..span.off + span.len()]).unwrap()
}

fn vec1<'a>(data: &'a [f64], span: &Span) -> ArrayView1<'a, f64> {
    ArrayView1::from_shape(span.len(), &data[span.off..span.off + span.len()]).unwrap()
}

fn add_mat(grads: &mut [f64], span: &Span, m: &Array2<f64>) {
    let dst = &mut grads[span.off..span.off + span.len()];
    for (d, s) in dst.iter_mut().zip(m.iter()) {
        *d += s;
    }
}

fn add_colsum(grads: &mut [f64], span: &Span, m: &Array2<f64>) {
    let dst = &mut grads[span.off..span.off + span.len()];
    for row in m.rows() {
        for (d, s) in dst.iter_mut().zip(row.iter()) {
            *d += s;
        }
    }
}

/// All learnable parameters, stored flat in the layout's declared order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    data: Vec<f64>,
}

/// One score per candidate.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVector(pub Vec<f64>);

/// Deterministic initialization: weights uniform in (-1/sqrt(fan_in),
/// 1/sqrt(fan_in)), all biases zero, layer-norm gains one.
pub fn init(seed: u64, config: ModelConfig) -> Result<ModelParams, RankNetError> {
    if config.d_model == 0 || config.heads == 0 || config.layers == 0 {
        return Err(RankNetError::InvalidShape(format!(
            "d_model={}, layers={}, heads={} must all be positive",
            config.d_model, config.layers, config.heads
        )));
    }
    if config.d_model % config.heads != 0 {
        return Err(RankNetError::InvalidShape(format!(
            "d_model={} not divisible by heads={}",
            config.d_model, config.heads
        )));
    }
    let layout = Layout::new(&config);
    let mut data = vec![0.0; layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Bit-stable uniform in [0,1): top 53 bits of a u64.
    let mut unit = move || (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let mut fill_weight = |data: &mut [f64], span: &Span, fan_in: usize| {
        let scale = 1.0 / (fan_in as f64).sqrt();
        for v in &mut data[span.off..span.off + span.len()] {
            *v = (2.0 * unit() - 1.0) * scale;
        }
    };
    fill_weight(&mut data, &layout.input_w, FEATURE_DIM);
    let d = config.d_model;
    for b in &layout.blocks {
        fill_weight(&mut data, &b.wq, d);
        fill_weight(&mut data, &b.wk, d);
        fill_weight(&mut data, &b.wv, d);
        fill_weight(&mut data, &b.wo, d);
        fill_weight(&mut data, &b.w1, d);
        fill_weight(&mut data, &b.w2, 4 * d);
        data[b.ln1_g.off..b.ln1_g.off + d].fill(1.0);
        data[b.ln2_g.off..b.ln2_g.off + d].fill(1.0);
    }
    data[layout.final_g.off..layout.final_g.off + d].fill(1.0);
    fill_weight(&mut data, &layout.head_w, d);
    Ok(ModelParams { config, data })
}

impl ModelParams {
    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn from_raw(config: ModelConfig, data: Vec<f64>) -> Result<ModelParams, RankNetError> {
        let layout = Layout::new(&config);
        if data.len() != layout.total {
            return Err(RankNetError::InvalidShape(format!(
                "raw parameter count {} does not match layout total {}",
                data.len(),
                layout.total
            )));
        }
        Ok(ModelParams { config, data })
    }

    /// Writes the versioned checkpoint: header (dims, flags, count) followed
    /// by the parameters in the declared layout order, little-endian f64.
    pub fn save(&self, path: &Path) -> Result<(), RankNetError> {
        let io_err = |e| RankNetError::CheckpointIo { path: path.display().to_string(), source: e };
        let mut buf = Vec::with_capacity(40 + self.data.len() * 8);
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.config.d_model as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.layers as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.heads as u32).to_le_bytes());
        let flags = if self.config.attention { FLAG_ATTENTION } else { 0 };
        buf.extend_from_slice(&flags.to_le_bytes());
        buf.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ModelParams, RankNetError> {
        let io_err = |e| RankNetError::CheckpointIo { path: path.display().to_string(), source: e };
        let fmt_err = |reason: String| RankNetError::CheckpointFormat {
            path: path.display().to_string(),
            reason,
        };
        let mut buf = Vec::new();
        fs::File::open(path).map_err(io_err)?.read_to_end(&mut buf).map_err(io_err)?;
        if buf.len() < 36 || &buf[..8] != CKPT_MAGIC {
            return Err(fmt_err("not an EMER checkpoint".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != CKPT_VERSION {
            return Err(fmt_err(format!("unsupported version {version}")));
        }
        let config = ModelConfig {
            d_model: u32_at(12) as usize,
            layers: u32_at(16) as usize,
            heads: u32_at(20) as usize,
            attention: u32_at(24) & FLAG_ATTENTION != 0,
        };
        let count = u64::from_le_bytes(buf[28..36].try_into().unwrap()) as usize;
        let layout = Layout::new(&config);
        if count != layout.total {
            return Err(fmt_err(format!(
                "parameter count {count} does not match architecture ({} expected)",
                layout.total
            )));
        }
        if buf.len() != 36 + count * 8 {
            return Err(fmt_err(format!(
                "payload length {} does not match parameter count {count}",
                buf.len() - 36
            )));
        }
        let data: Vec<f64> = buf[36..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ModelParams { config, data })
    }
}

struct LnCache {
    xhat: Array2<f64>,
    inv_sigma: Array1<f64>,
}

struct LayerCache {
    // Attention sublayer caches; absent when attention is disabled.
    ln1: Option<LnCache>,
    a: Option<Array2<f64>>,
    q: Option<Array2<f64>>,
    k: Option<Array2<f64>>,
    v: Option<Array2<f64>>,
    probs: Option<Vec<Array2<f64>>>,
    // Feed-forward sublayer caches.
    ln2: LnCache,
    o: Option<Array2<f64>>,
    b_in: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

/// Intermediate activations needed for an exact reverse pass.
pub struct Cache {
    x: Array2<f64>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    z: Array2<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let (n, d) = x.dim();
    let mut xhat = Array2::zeros((n, d));
    let mut inv_sigma = Array1::zeros(n);
    let mut out = Array2::zeros((n, d));
    for i in 0..n {
        let row = x.row(i);
        let mu = row.mean().unwrap();
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_sigma[i] = inv;
        for j in 0..d {
            let h = (x[[i, j]] - mu) * inv;
            xhat[[i, j]] = h;
            out[[i, j]] = h * gain[j] + bias[j];
        }
    }
    (out, LnCache { xhat, inv_sigma })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: ArrayView1<f64>,
    grads: &mut [f64],
    g_span: &Span,
    b_span: &Span,
) -> Array2<f64> {
    let (n, d) = dy.dim();
    let mut dx = Array2::zeros((n, d));
    for i in 0..n {
        let mut m1 = 0.0; // mean of dy*g
        let mut m2 = 0.0; // mean of dy*g*xhat
        for j in 0..d {
            let dyg = dy[[i, j]] * gain[j];
            m1 += dyg;
            m2 += dyg * cache.xhat[[i, j]];
            grads[g_span.off + j] += dy[[i, j]] * cache.xhat[[i, j]];
            grads[b_span.off + j] += dy[[i, j]];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let inv = cache.inv_sigma[i];
        for j in 0..d {
            let dyg = dy[[i, j]] * gain[j];
            dx[[i, j]] = inv * (dyg - m1 - cache.xhat[[i, j]] * m2);
        }
    }
    dx
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn add_row_bias(m: &mut Array2<f64>, bias: ArrayView1<f64>) {
    for mut row in m.rows_mut() {
        for (v, b) in row.iter_mut().zip(bias.iter()) {
            *v += b;
        }
    }
}

fn check_input(features: &ArrayView2<f64>) -> Result<(), RankNetError> {
    if features.nrows() == 0 || features.ncols() != FEATURE_DIM {
        return Err(RankNetError::InvalidShape(format!(
            "feature matrix {}x{} (expected n x {FEATURE_DIM} with n >= 1)",
            features.nrows(),
            features.ncols()
        )));
    }
    for ((r, c), v) in features.indexed_iter() {
        if !v.is_finite() {
            return Err(RankNetError::NonFiniteInput { row: r, col: c });
        }
    }
    Ok(())
}

/// Scores every candidate in the set. Deterministic and permutation
/// equivariant over rows.
pub fn forward(params: &ModelParams, features: &ArrayView2<f64>) -> Result<ScoreVector, RankNetError> {
    forward_cached(params, features).map(|(s, _)| s)
}

pub fn forward_cached(
    params: &ModelParams,
    features: &ArrayView2<f64>,
) -> Result<(ScoreVector, Cache), RankNetError> {
    check_input(features)?;
    let layout = Layout::new(&params.config);
    let data = &params.data;
    let d = params.config.d_model;
    let heads = params.config.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let n = features.nrows();

    let mut h = features.dot(&mat(data, &layout.input_w));
    add_row_bias(&mut h, vec1(data, &layout.input_b));

    let mut layer_caches = Vec::with_capacity(params.config.layers);
    for bl in &layout.blocks {
        let (ln1, a, q, k, v, probs, o) = if params.config.attention {
            let (a, ln1) = layer_norm(&h, vec1(data, &bl.ln1_g), vec1(data, &bl.ln1_b));
            let mut q = a.dot(&mat(data, &bl.wq));
            add_row_bias(&mut q, vec1(data, &bl.bq));
            let mut k = a.dot(&mat(data, &bl.wk));
            add_row_bias(&mut k, vec1(data, &bl.bk));
            let mut v = a.dot(&mat(data, &bl.wv));
            add_row_bias(&mut v, vec1(data, &bl.bv));
            let mut o = Array2::zeros((n, d));
            let mut probs = Vec::with_capacity(heads);
            for m in 0..heads {
                let cols = s![.., m * dh..(m + 1) * dh];
                let qm = q.slice(cols);
                let km = k.slice(cols);
                let vm = v.slice(cols);
                let mut p = qm.dot(&km.t());
                p *= scale;
                for mut row in p.rows_mut() {
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for val in row.iter_mut() {
                        *val = (*val - mx).exp();
                        sum += *val;
                    }
                    row.mapv_inplace(|x| x / sum);
                }
                let om = p.dot(&vm);
                o.slice_mut(cols).assign(&om);
                probs.push(p);
            }
            let mut m_out = o.dot(&mat(data, &bl.wo));
            add_row_bias(&mut m_out, vec1(data, &bl.bo));
            h += &m_out;
            (Some(ln1), Some(a), Some(q), Some(k), Some(v), Some(probs), Some(o))
        } else {
            (None, None, None, None, None, None, None)
        };

        let (b_in, ln2) = layer_norm(&h, vec1(data, &bl.ln2_g), vec1(data, &bl.ln2_b));
        let mut u = b_in.dot(&mat(data, &bl.w1));
        add_row_bias(&mut u, vec1(data, &bl.b1));
        let g = u.mapv(silu);
        let mut f = g.dot(&mat(data, &bl.w2));
        add_row_bias(&mut f, vec1(data, &bl.b2));
        h += &f;

        layer_caches.push(LayerCache { ln1, a, q, k, v, probs, ln2, o, b_in, u, g });
    }

    let (z, lnf) = layer_norm(&h, vec1(data, &layout.final_g), vec1(data, &layout.final_b));
    let head_w = vec1(data, &layout.head_w);
    let head_b = data[layout.head_b.off];
    let scores: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&head_w) + head_b).collect();
    Ok((ScoreVector(scores), Cache { x: features.to_owned(), layers: layer_caches, lnf, z }))
}

/// Exact reverse-mode gradients of a scalar loss with respect to every
/// parameter, given the loss gradient per candidate score. Returns a flat
/// gradient vector in the same layout as [`ModelParams::as_slice`].
pub fn backward(
    params: &ModelParams,
    cache: &Cache,
    dscores: &[f64],
) -> Result<Vec<f64>, RankNetError> {
    let n = cache.x.nrows();
    if dscores.len() != n {
        return Err(RankNetError::GradientShapeMismatch { got: dscores.len(), expect: n });
    }
    let layout = Layout::new(&params.config);
    let data = &params.data;
    let d = params.config.d_model;
    let heads = params.config.heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut grads = vec![0.0; layout.total];

    // Head: scores = Z . w + b
    let head_w = vec1(data, &layout.head_w).to_owned();
    let mut dz = Array2::zeros((n, d));
    for i in 0..n {
        grads[layout.head_b.off] += dscores[i];
        for j in 0..d {
            grads[layout.head_w.off + j] += cache.z[[i, j]] * dscores[i];
            dz[[i, j]] = dscores[i] * head_w[j];
        }
    }
    let mut dh_acc = layer_norm_backward(
        &dz,
        &cache.lnf,
        vec1(data, &layout.final_g),
        &mut grads,
        &layout.final_g,
        &layout.final_b,
    );

    for (bl, lc) in layout.blocks.iter().zip(cache.layers.iter()).rev() {
        // Feed-forward sublayer: H_out = H2 + silu(LN2(H2) W1 + b1) W2 + b2
        let df = dh_acc.clone();
        let dg = df.dot(&mat(data, &bl.w2).t());
        add_mat(&mut grads, &bl.w2, &lc.g.t().dot(&df));
        add_colsum(&mut grads, &bl.b2, &df);
        let mut du = dg;
        du.zip_mut_with(&lc.u, |dv, &u| *dv *= silu_grad(u));
        add_mat(&mut grads, &bl.w1, &lc.b_in.t().dot(&du));
        add_colsum(&mut grads, &bl.b1, &du);
        let db = du.dot(&mat(data, &bl.w1).t());
        let dh2_ln =
            layer_norm_backward(&db, &lc.ln2, vec1(data, &bl.ln2_g), &mut grads, &bl.ln2_g, &bl.ln2_b);
        dh_acc += &dh2_ln;

        if params.config.attention {
            // Attention sublayer: H2 = H + MHA(LN1(H)) Wo + bo
            let dm = dh_acc.clone();
            let o = lc.o.as_ref().unwrap();
            let d_o = dm.dot(&mat(data, &bl.wo).t());
            add_mat(&mut grads, &bl.wo, &o.t().dot(&dm));
            add_colsum(&mut grads, &bl.bo, &dm);

            let q = lc.q.as_ref().unwrap();
            let k = lc.k.as_ref().unwrap();
            let v = lc.v.as_ref().unwrap();
            let probs = lc.probs.as_ref().unwrap();
            let mut dq = Array2::zeros((n, d));
            let mut dk = Array2::zeros((n, d));
            let mut dv = Array2::zeros((n, d));
            for m in 0..heads {
                let cols = s![.., m * dh..(m + 1) * dh];
                let p = &probs[m];
                let dom = d_o.slice(cols);
                let vm = v.slice(cols);
                let mut dp = dom.dot(&vm.t());
                dv.slice_mut(cols).assign(&p.t().dot(&dom));
                // Softmax backward per row, with the 1/sqrt(dh) scale folded in.
                for i in 0..n {
                    let dot: f64 = (0..n).map(|j| dp[[i, j]] * p[[i, j]]).sum();
                    for j in 0..n {
                        dp[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                    }
                }
                let qm = q.slice(cols);
                let km = k.slice(cols);
                dq.slice_mut(cols).assign(&dp.dot(&km));
                dk.slice_mut(cols).assign(&dp.t().dot(&qm));
            }
            let a = lc.a.as_ref().unwrap();
            add_mat(&mut grads, &bl.wq, &a.t().dot(&dq));
            add_colsum(&mut grads, &bl.bq, &dq);
            add_mat(&mut grads, &bl.wk, &a.t().dot(&dk));
            add_colsum(&mut grads, &bl.bk, &dk);
            add_mat(&mut grads, &bl.wv, &a.t().dot(&dv));
            add_colsum(&mut grads, &bl.bv, &dv);
            let da = dq.dot(&mat(data, &bl.wq).t())
                + dk.dot(&mat(data, &bl.wk).t())
                + dv.dot(&mat(data, &bl.wv).t());
            let dh_ln = layer_norm_backward(
                &da,
                lc.ln1.as_ref().unwrap(),
                vec1(data, &bl.ln1_g),
                &mut grads,
                &bl.ln1_g,
                &bl.ln1_b,
            );
            dh_acc += &dh_ln;
        }
    }

    // Input projection: H0 = X Win + bin
    add_mat(&mut grads, &layout.input_w, &cache.x.t().dot(&dh_acc));
    add_colsum(&mut grads, &layout.input_b, &dh_acc);
    Ok(grads)
}

/// Closed-form parameter count for a given architecture.
pub fn param_count(cfg: &ModelConfig) -> usize {
    Layout::new(cfg).total
}
