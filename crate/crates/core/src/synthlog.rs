//! Synthetic request-log generator with known ground truth, plus the
//! line-delimited text format used to persist logs and the truth sidecar.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::domain::{Candidate, DomainError, FeedbackRecord, ObjectiveId, Pxtrs, Request};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("line {line}: field {field}: {message}")]
    MalformedLine { line: usize, field: String, message: String },
    #[error("line {line}: {source}")]
    InvalidRecord {
        line: usize,
        #[source]
        source: DomainError,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Shape and randomness of one generated log.
#[derive(Clone, Debug)]
pub struct GeneratorConfig {
    pub n_users: usize,
    pub requests_per_user: usize,
    pub candidates_per_request: usize,
    pub exposure_k: usize,
    pub seed: u64,
    pub noise_sigma: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_users: 100,
            requests_per_user: 20,
            candidates_per_request: 500,
            exposure_k: 6,
            seed: 0,
            noise_sigma: 0.15,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), LogError> {
        if self.n_users == 0 || self.requests_per_user == 0 || self.candidates_per_request == 0 {
            return Err(LogError::InvalidConfig("counts must be positive".into()));
        }
        if self.exposure_k == 0 || self.exposure_k > self.candidates_per_request {
            return Err(LogError::InvalidConfig(format!(
                "exposure_k {} must be in 1..={}",
                self.exposure_k, self.candidates_per_request
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(LogError::InvalidConfig("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

const TASTE_DIM: usize = 16;

/// Per-user latent state: a taste vector steering item affinity and one
/// propensity per objective controlling how satisfaction is expressed.
#[derive(Clone, Debug)]
pub struct LatentProfile {
    pub user_taste: [f64; TASTE_DIM],
    pub behavior_propensity: [f64; ObjectiveId::COUNT],
}

/// Hidden ground truth for one candidate, keyed like the log.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateTruth {
    pub request_id: String,
    pub item_id: String,
    /// True expected value per objective: watch time in seconds for pvtr,
    /// probabilities elsewhere.
    pub truth: [f64; ObjectiveId::COUNT],
}

/// A generated log together with its ground-truth sidecar. The sidecar is
/// persisted separately and never enters the training log.
#[derive(Clone, Debug)]
pub struct GeneratedLog {
    pub requests: Vec<Request>,
    pub truths: Vec<CandidateTruth>,
}

/// Uniform in [0, 1) with exactly 53 random mantissa bits, so the stream is
/// bit-stable across platforms.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit(rng)
}

/// Standard normal via Box-Muller on the bit-stable uniform stream.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = unit(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logit-space shift per objective, setting each channel's base rate.
const OBJECTIVE_BIAS: [f64; ObjectiveId::COUNT] = [
    0.0,  // pvtr (bias applied in watch-time space below)
    -0.5, // pctr
    -1.0, // plvtr
    -1.5, // pcpr
    -1.35, // pltr
    -1.8, // pwtr
    -1.7, // pcmtr
    -1.8, // pftr
];

/// Weight of the per-objective idiosyncratic latent against the shared
/// quality factor. Slot 0 (pvtr) is unused: watch time has its own pair of
/// weights below.
const IDIO_WEIGHT: [f64; ObjectiveId::COUNT] = [0.6, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8, 0.8];
/// Per-objective coupling to the shared quality factor. Completion (pcpr)
/// is anti-correlated with it: short, shallow items are finished more often
/// than deep, engaging ones. This is the genuinely conflicting objective
/// that exercises the adaptive loss weighting.
const QUALITY_WEIGHT: [f64; ObjectiveId::COUNT] = [1.0, 1.0, 1.0, -0.4, 1.0, 1.0, 1.0, 1.0];
/// Watch time tracks shared quality only partially, so watch-time-normalized
/// (IPUT) orderings genuinely differ from raw pxtr orderings.
const WATCH_QUALITY_WEIGHT: f64 = 0.8;
const WATCH_IDIO_WEIGHT: f64 = 0.6;
/// Compresses the watch-time sigmoid so typical sessions span a few items
/// within a one-minute budget.
const WATCH_SCALE: f64 = 0.35;
const WATCH_SHIFT: f64 = -1.0;

/// Deterministically generates the full log and its truth sidecar. Each
/// candidate's pxtrs are noisy monotone transforms of its latent
/// per-objective truth; the top `exposure_k` candidates by pctr (a
/// deliberately narrow heuristic, so the log carries exposure bias) receive
/// Bernoulli feedback at the true interaction probabilities.
pub fn generate(cfg: &GeneratorConfig) -> Result<GeneratedLog, LogError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut requests = Vec::with_capacity(cfg.n_users * cfg.requests_per_user);
    let mut truths =
        Vec::with_capacity(cfg.n_users * cfg.requests_per_user * cfg.candidates_per_request);
    let base_ts: i64 = 1_700_000_000;

    for u in 0..cfg.n_users {
        let mut taste = [0.0; TASTE_DIM];
        for t in taste.iter_mut() {
            *t = normal(&mut rng);
        }
        let mut propensity = [0.0; ObjectiveId::COUNT];
        for p in propensity.iter_mut() {
            *p = uniform_in(&mut rng, 0.3, 1.0);
        }
        let profile = LatentProfile { user_taste: taste, behavior_propensity: propensity };

        for r in 0..cfg.requests_per_user {
            let request_id = format!("u{u:04}_r{r:04}");
            let user_id = format!("u{u:04}");
            let ts = base_ts + (u * cfg.requests_per_user + r) as i64 * 60;
            let (request, mut truth_rows) =
                generate_request(cfg, &profile, &mut rng, request_id, user_id, ts);
            requests.push(request);
            truths.append(&mut truth_rows);
        }
    }
    Ok(GeneratedLog { requests, truths })
}

fn generate_request(
    cfg: &GeneratorConfig,
    profile: &LatentProfile,
    rng: &mut ChaCha8Rng,
    request_id: String,
    user_id: String,
    ts: i64,
) -> (Request, Vec<CandidateTruth>) {
    let n = cfg.candidates_per_request;
    let sigma = cfg.noise_sigma;
    let mut candidates = Vec::with_capacity(n);
    let mut truth_rows = Vec::with_capacity(n);

    for c in 0..n {
        let item_id = format!("{request_id}_i{c:04}");
        // Shared quality factor: intrinsic item quality plus user affinity.
        let mut affinity = 0.0;
        for t in &profile.user_taste {
            affinity += t * normal(rng);
        }
        affinity /= (TASTE_DIM as f64).sqrt();
        let quality = normal(rng) + 0.5 * affinity;

        let mut truth = [0.0; ObjectiveId::COUNT];
        let mut pxtrs = [0.0; ObjectiveId::COUNT];
        for obj in ObjectiveId::ALL {
            let i = obj.index();
            if obj == ObjectiveId::Pvtr {
                let latent = WATCH_SCALE
                    * (WATCH_QUALITY_WEIGHT * quality + WATCH_IDIO_WEIGHT * normal(rng))
                    + WATCH_SHIFT;
                truth[i] = 1.0 + 119.0 * sigmoid(latent);
                pxtrs[i] = 1.0 + 119.0 * sigmoid(latent + WATCH_SCALE * sigma * normal(rng));
            } else {
                let latent = QUALITY_WEIGHT[i] * quality + IDIO_WEIGHT[i] * normal(rng)
                    + OBJECTIVE_BIAS[i];
                let prop = if obj.is_interaction() { profile.behavior_propensity[i] } else { 1.0 };
                truth[i] = prop * sigmoid(latent);
                pxtrs[i] = prop * sigmoid(latent + sigma * normal(rng));
            }
        }

        truth_rows.push(CandidateTruth {
            request_id: request_id.clone(),
            item_id: item_id.clone(),
            truth,
        });
        candidates.push(Candidate {
            item_id,
            pxtrs: Pxtrs::new(pxtrs),
            exposed: false,
            feedback: None,
        });
    }

    // Exposure heuristic: top-k by pctr alone.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let pa = candidates[a].pxtrs.get(ObjectiveId::Pctr);
        let pb = candidates[b].pxtrs.get(ObjectiveId::Pctr);
        pb.partial_cmp(&pa).unwrap().then(candidates[a].item_id.cmp(&candidates[b].item_id))
    });
    for &idx in order.iter().take(cfg.exposure_k.min(n)) {
        let truth = &truth_rows[idx].truth;
        let rate = |obj: ObjectiveId| truth[obj.index()];
        let like = unit(rng) < rate(ObjectiveId::Pltr);
        let follow = unit(rng) < rate(ObjectiveId::Pwtr);
        let comment = unit(rng) < rate(ObjectiveId::Pcmtr);
        let forward = unit(rng) < rate(ObjectiveId::Pftr);
        let long_view = unit(rng) < rate(ObjectiveId::Plvtr);
        // Dislike only fires when no positive signal exists, so positive
        // channels stay exactly Bernoulli at their latent rates.
        let any_positive = like || follow || comment || forward || long_view;
        let dislike =
            !any_positive && unit(rng) < 0.5 * (1.0 - rate(ObjectiveId::Plvtr));
        // Uniform(0.5, 1.5) multiplier keeps the conditional mean at the
        // latent true watch time.
        let watch_time_s = truth[ObjectiveId::Pvtr.index()] * uniform_in(rng, 0.5, 1.5);
        candidates[idx].exposed = true;
        candidates[idx].feedback = Some(FeedbackRecord {
            like,
            follow,
            comment,
            forward,
            long_view,
            dislike,
            watch_time_s,
        });
    }

    (Request { request_id, user_id, timestamp: ts, candidates }, truth_rows)
}

fn fmt_bool(b: bool) -> &'static str {
    if b { "1" } else { "0" }
}

fn candidate_to_field(c: &Candidate) -> String {
    let mut s = format!("item_id={}", c.item_id);
    for obj in ObjectiveId::ALL {
        s.push_str(&format!(",{}={}", obj.name(), c.pxtrs.get(obj)));
    }
    s.push_str(&format!(",exposed={}", fmt_bool(c.exposed)));
    if let Some(fb) = &c.feedback {
        s.push_str(&format!(
            ",like={},follow={},comment={},forward={},long_view={},dislike={},watch_time_s={}",
            fmt_bool(fb.like),
            fmt_bool(fb.follow),
            fmt_bool(fb.comment),
            fmt_bool(fb.forward),
            fmt_bool(fb.long_view),
            fmt_bool(fb.dislike),
            fb.watch_time_s
        ));
    }
    s
}

/// Writes one request per line: `request_id=.. user_id=.. ts=..
/// candidates=<c>|<c>|..` where each candidate is a comma-separated `k=v`
/// record. Floats use shortest round-trip formatting, so read-back is exact.
pub fn write_log(path: &Path, requests: &[Request]) -> Result<(), LogError> {
    let mut out = BufWriter::new(File::create(path)?);
    for req in requests {
        let cands: Vec<String> = req.candidates.iter().map(candidate_to_field).collect();
        writeln!(
            out,
            "request_id={} user_id={} ts={} candidates={}",
            req.request_id,
            req.user_id,
            req.timestamp,
            cands.join("|")
        )?;
    }
    out.flush()?;
    Ok(())
}

fn malformed(line: usize, field: &str, message: impl Into<String>) -> LogError {
    LogError::MalformedLine { line, field: field.into(), message: message.into() }
}

fn take_kv<'a>(token: &'a str, key: &str, line: usize) -> Result<&'a str, LogError> {
    token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| malformed(line, key, format!("expected `{key}=...`, found `{token}`")))
}

fn parse_f64(value: &str, field: &str, line: usize) -> Result<f64, LogError> {
    value.parse::<f64>().map_err(|e| malformed(line, field, format!("bad number `{value}`: {e}")))
}

fn parse_bool01(value: &str, field: &str, line: usize) -> Result<bool, LogError> {
    match value {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(malformed(line, field, format!("expected 0 or 1, found `{other}`"))),
    }
}

fn parse_candidate(text: &str, line: usize) -> Result<Candidate, LogError> {
    let mut item_id = None;
    let mut pxtrs = [f64::NAN; ObjectiveId::COUNT];
    let mut exposed = None;
    let mut fb = FeedbackRecord::default();
    let mut has_feedback = false;

    for kv in text.split(',') {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| malformed(line, "candidates", format!("token `{kv}` is not k=v")))?;
        match key {
            "item_id" => item_id = Some(value.to_string()),
            "exposed" => exposed = Some(parse_bool01(value, key, line)?),
            "like" | "follow" | "comment" | "forward" | "long_view" | "dislike" => {
                has_feedback = true;
                let b = parse_bool01(value, key, line)?;
                match key {
                    "like" => fb.like = b,
                    "follow" => fb.follow = b,
                    "comment" => fb.comment = b,
                    "forward" => fb.forward = b,
                    "long_view" => fb.long_view = b,
                    _ => fb.dislike = b,
                }
            }
            "watch_time_s" => {
                has_feedback = true;
                fb.watch_time_s = parse_f64(value, key, line)?;
            }
            other => {
                let obj = ObjectiveId::from_name(other)
                    .ok_or_else(|| malformed(line, other, "unknown candidate field"))?;
                pxtrs[obj.index()] = parse_f64(value, other, line)?;
            }
        }
    }

    let item_id = item_id.ok_or_else(|| malformed(line, "item_id", "missing"))?;
    let exposed = exposed.ok_or_else(|| malformed(line, "exposed", "missing"))?;
    for obj in ObjectiveId::ALL {
        if pxtrs[obj.index()].is_nan() {
            return Err(malformed(line, obj.name(), "missing"));
        }
    }
    Ok(Candidate {
        item_id,
        pxtrs: Pxtrs::new(pxtrs),
        exposed,
        feedback: has_feedback.then_some(fb),
    })
}

/// Reads a log written by [`write_log`], validating every request. Errors
/// name the 1-based line number and the offending field.
pub fn read_log(path: &Path) -> Result<Vec<Request>, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut requests = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let mut parts = text.splitn(4, ' ');
        let request_id =
            take_kv(parts.next().unwrap_or(""), "request_id", line_no)?.to_string();
        let user_id = take_kv(
            parts.next().ok_or_else(|| malformed(line_no, "user_id", "missing"))?,
            "user_id",
            line_no,
        )?
        .to_string();
        let ts_text = take_kv(
            parts.next().ok_or_else(|| malformed(line_no, "ts", "missing"))?,
            "ts",
            line_no,
        )?;
        let timestamp = ts_text
            .parse::<i64>()
            .map_err(|e| malformed(line_no, "ts", format!("bad integer `{ts_text}`: {e}")))?;
        let cand_text = take_kv(
            parts.next().ok_or_else(|| malformed(line_no, "candidates", "missing"))?,
            "candidates",
            line_no,
        )?;
        let candidates = cand_text
            .split('|')
            .map(|c| parse_candidate(c, line_no))
            .collect::<Result<Vec<_>, _>>()?;
        let request = Request { request_id, user_id, timestamp, candidates };
        request
            .validate()
            .map_err(|source| LogError::InvalidRecord { line: line_no, source })?;
        requests.push(request);
    }
    Ok(requests)
}

/// Writes the ground-truth sidecar: one candidate per line, keyed by
/// request_id and item_id.
pub fn write_truth(path: &Path, truths: &[CandidateTruth]) -> Result<(), LogError> {
    let mut out = BufWriter::new(File::create(path)?);
    for t in truths {
        let mut line = format!("request_id={} item_id={}", t.request_id, t.item_id);
        for obj in ObjectiveId::ALL {
            line.push_str(&format!(" {}={}", obj.name(), t.truth[obj.index()]));
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Vec<CandidateTruth>, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut truths = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let mut tokens = text.split(' ');
        let request_id =
            take_kv(tokens.next().unwrap_or(""), "request_id", line_no)?.to_string();
        let item_id = take_kv(
            tokens.next().ok_or_else(|| malformed(line_no, "item_id", "missing"))?,
            "item_id",
            line_no,
        )?
        .to_string();
        let mut truth = [0.0; ObjectiveId::COUNT];
        for obj in ObjectiveId::ALL {
            let token = tokens
                .next()
                .ok_or_else(|| malformed(line_no, obj.name(), "missing"))?;
            truth[obj.index()] = parse_f64(take_kv(token, obj.name(), line_no)?, obj.name(), line_no)?;
        }
        truths.push(CandidateTruth { request_id, item_id, truth });
    }
    Ok(truths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::satisfaction_level;
    use crate::evalsuite::concordance_counts;
    use std::io::Read;

    fn small_cfg() -> GeneratorConfig {
        GeneratorConfig {
            n_users: 4,
            requests_per_user: 3,
            candidates_per_request: 30,
            exposure_k: 6,
            seed: 7,
            noise_sigma: 0.15,
        }
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small_cfg();
        cfg.exposure_k = 31;
        assert!(matches!(generate(&cfg), Err(LogError::InvalidConfig(_))));
        cfg = small_cfg();
        cfg.n_users = 0;
        assert!(matches!(generate(&cfg), Err(LogError::InvalidConfig(_))));
        cfg = small_cfg();
        cfg.noise_sigma = -0.1;
        assert!(matches!(generate(&cfg), Err(LogError::InvalidConfig(_))));
    }

    #[test]
    fn generation_is_deterministic_and_byte_identical() {
        let cfg = small_cfg();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.log");
        let pb = dir.path().join("b.log");
        write_log(&pa, &a.requests).unwrap();
        write_log(&pb, &b.requests).unwrap();
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        File::open(&pa).unwrap().read_to_end(&mut ba).unwrap();
        File::open(&pb).unwrap().read_to_end(&mut bb).unwrap();
        assert!(!ba.is_empty());
        assert_eq!(ba, bb);
    }

    #[test]
    fn structure_matches_config() {
        let cfg = small_cfg();
        let log = generate(&cfg).unwrap();
        assert_eq!(log.requests.len(), 12);
        assert_eq!(log.truths.len(), 12 * 30);
        for req in &log.requests {
            req.validate().unwrap();
            assert_eq!(req.candidates.len(), 30);
            let exposed = req.candidates.iter().filter(|c| c.exposed).count();
            assert_eq!(exposed, 6);
            for c in &req.candidates {
                assert_eq!(c.exposed, c.feedback.is_some());
            }
        }
    }

    #[test]
    fn exposure_is_top_k_by_pctr() {
        let cfg = small_cfg();
        let log = generate(&cfg).unwrap();
        for req in &log.requests {
            let min_exposed_pctr = req
                .candidates
                .iter()
                .filter(|c| c.exposed)
                .map(|c| c.pxtrs.get(ObjectiveId::Pctr))
                .fold(f64::INFINITY, f64::min);
            for c in req.candidates.iter().filter(|c| !c.exposed) {
                assert!(c.pxtrs.get(ObjectiveId::Pctr) <= min_exposed_pctr);
            }
        }
    }

    #[test]
    fn zero_noise_gives_perfect_truth_concordance() {
        let mut cfg = small_cfg();
        cfg.noise_sigma = 0.0;
        let log = generate(&cfg).unwrap();
        let mut truth_iter = log.truths.iter();
        for req in &log.requests {
            let truths: Vec<&CandidateTruth> =
                (0..req.candidates.len()).map(|_| truth_iter.next().unwrap()).collect();
            for obj in ObjectiveId::ALL {
                let scores: Vec<f64> =
                    req.candidates.iter().map(|c| c.pxtrs.get(obj)).collect();
                let refs: Vec<f64> = truths.iter().map(|t| t.truth[obj.index()]).collect();
                let (correct, pairs) = concordance_counts(&scores, &refs);
                assert!(pairs > 0);
                assert_eq!(correct, pairs as f64, "objective {obj} not concordant");
            }
        }
    }

    #[test]
    fn like_rate_matches_latent_probability() {
        // Smaller than the acceptance-scale log but enough exposed items
        // (4800) for the Monte-Carlo bound.
        let cfg = GeneratorConfig {
            n_users: 40,
            requests_per_user: 20,
            candidates_per_request: 60,
            exposure_k: 6,
            seed: 11,
            noise_sigma: 0.15,
        };
        let log = generate(&cfg).unwrap();
        let mut truth_idx = std::collections::HashMap::new();
        for t in &log.truths {
            truth_idx.insert((t.request_id.clone(), t.item_id.clone()), t.truth);
        }
        let mut likes = 0.0;
        let mut expected = 0.0;
        let mut count = 0.0;
        for req in &log.requests {
            for c in req.candidates.iter().filter(|c| c.exposed) {
                let truth = truth_idx[&(req.request_id.clone(), c.item_id.clone())];
                likes += c.feedback.as_ref().unwrap().like as u8 as f64;
                expected += truth[ObjectiveId::Pltr.index()];
                count += 1.0;
            }
        }
        assert!((likes / count - expected / count).abs() < 0.02);
    }

    #[test]
    fn dislike_never_coexists_with_positives() {
        let log = generate(&small_cfg()).unwrap();
        for req in &log.requests {
            for c in &req.candidates {
                if let Some(fb) = &c.feedback {
                    if fb.dislike {
                        assert_eq!(satisfaction_level(fb).0, -1);
                        assert!(!fb.like && !fb.follow && !fb.comment && !fb.forward && !fb.long_view);
                    }
                }
            }
        }
    }

    #[test]
    fn round_trip_identity() {
        let log = generate(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.txt");
        write_log(&path, &log.requests).unwrap();
        let back = read_log(&path).unwrap();
        assert_eq!(back, log.requests);
    }

    #[test]
    fn empty_log_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.txt");
        write_log(&path, &[]).unwrap();
        assert!(read_log(&path).unwrap().is_empty());
    }

    #[test]
    fn truth_sidecar_round_trips_and_is_disjoint() {
        let log = generate(&small_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let tpath = dir.path().join("truth.txt");
        write_truth(&tpath, &log.truths).unwrap();
        assert_eq!(read_truth(&tpath).unwrap(), log.truths);
        // No truth values leak into the log file itself.
        let lpath = dir.path().join("log.txt");
        write_log(&lpath, &log.requests).unwrap();
        let text = std::fs::read_to_string(&lpath).unwrap();
        let t = &log.truths[0];
        assert!(!text.contains(&format!("{}", t.truth[0])));
    }

    #[test]
    fn out_of_range_probability_names_field_and_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        let line = "request_id=r1 user_id=u1 ts=0 candidates=item_id=a,pvtr=5,pctr=1.3,plvtr=0.5,pcpr=0.5,pltr=0.5,pwtr=0.5,pcmtr=0.5,pftr=0.5,exposed=0";
        std::fs::write(&path, format!("{line}\n")).unwrap();
        let err = read_log(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 1"), "{msg}");
        assert!(msg.contains("probability") && msg.contains("pctr"), "{msg}");
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(
            &path,
            "request_id=r1 user_id=u1 ts=0 candidates=item_id=a,pqtr=0.5,exposed=0\n",
        )
        .unwrap();
        let err = read_log(&path).unwrap_err();
        assert!(matches!(err, LogError::MalformedLine { line: 1, ref field, .. } if field == "pqtr"));
    }

    #[test]
    fn malformed_ts_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.txt");
        std::fs::write(&path, "request_id=r1 user_id=u1 ts=abc candidates=x\n").unwrap();
        let err = read_log(&path).unwrap_err();
        assert!(matches!(err, LogError::MalformedLine { line: 1, ref field, .. } if field == "ts"));
    }

    #[test]
    fn watch_time_stays_near_truth() {
        let log = generate(&small_cfg()).unwrap();
        let mut truth_idx = std::collections::HashMap::new();
        for t in &log.truths {
            truth_idx.insert((t.request_id.clone(), t.item_id.clone()), t.truth);
        }
        for req in &log.requests {
            for c in req.candidates.iter().filter(|c| c.exposed) {
                let truth = truth_idx[&(req.request_id.clone(), c.item_id.clone())];
                let w = c.feedback.as_ref().unwrap().watch_time_s;
                let t = truth[ObjectiveId::Pvtr.index()];
                assert!(w >= 0.5 * t - 1e-9 && w <= 1.5 * t + 1e-9);
            }
        }
    }
}
