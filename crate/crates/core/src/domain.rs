//! Core data types shared by every other module: the objective taxonomy,
//! candidates with their predicted objective scores, per-request training
//! samples, and the posterior-feedback satisfaction hierarchy.

use std::fmt;

use thiserror::Error;

/// The closed, ordered set of eight prediction objectives.
///
/// `pvtr` is a predicted watch time in seconds; all other objectives are
/// predicted probabilities in `[0, 1]`. The interaction subgroup
/// (`pltr`, `pwtr`, `pcmtr`, `pftr`) covers explicit user actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectiveId {
    Pvtr,
    Pctr,
    Plvtr,
    Pcpr,
    Pltr,
    Pwtr,
    Pcmtr,
    Pftr,
}

impl ObjectiveId {
    /// All objectives in their stable index order (0..7).
    pub const ALL: [ObjectiveId; 8] = [
        ObjectiveId::Pvtr,
        ObjectiveId::Pctr,
        ObjectiveId::Plvtr,
        ObjectiveId::Pcpr,
        ObjectiveId::Pltr,
        ObjectiveId::Pwtr,
        ObjectiveId::Pcmtr,
        ObjectiveId::Pftr,
    ];

    /// The distinguished explicit-interaction subgroup.
    pub const INTERACTION: [ObjectiveId; 4] = [
        ObjectiveId::Pltr,
        ObjectiveId::Pwtr,
        ObjectiveId::Pcmtr,
        ObjectiveId::Pftr,
    ];

    pub const COUNT: usize = 8;

    /// Stable index in `0..8`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<ObjectiveId> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveId::Pvtr => "pvtr",
            ObjectiveId::Pctr => "pctr",
            ObjectiveId::Plvtr => "plvtr",
            ObjectiveId::Pcpr => "pcpr",
            ObjectiveId::Pltr => "pltr",
            ObjectiveId::Pwtr => "pwtr",
            ObjectiveId::Pcmtr => "pcmtr",
            ObjectiveId::Pftr => "pftr",
        }
    }

    pub fn from_name(name: &str) -> Option<ObjectiveId> {
        Self::ALL.iter().copied().find(|o| o.name() == name)
    }

    /// True for the explicit-interaction subgroup.
    pub fn is_interaction(self) -> bool {
        matches!(
            self,
            ObjectiveId::Pltr | ObjectiveId::Pwtr | ObjectiveId::Pcmtr | ObjectiveId::Pftr
        )
    }

    /// True for probability-typed objectives (everything but `pvtr`).
    pub fn is_probability(self) -> bool {
        self != ObjectiveId::Pvtr
    }
}

impl fmt::Display for ObjectiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense per-objective score vector, indexed by [`ObjectiveId`].
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pxtrs([f64; ObjectiveId::COUNT]);

impl Pxtrs {
    pub fn new(values: [f64; ObjectiveId::COUNT]) -> Pxtrs {
        Pxtrs(values)
    }

    pub fn get(&self, obj: ObjectiveId) -> f64 {
        self.0[obj.index()]
    }

    pub fn set(&mut self, obj: ObjectiveId, value: f64) {
        self.0[obj.index()] = value;
    }

    pub fn as_array(&self) -> &[f64; ObjectiveId::COUNT] {
        &self.0
    }
}

/// Observed post-exposure user signals for one candidate.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct FeedbackRecord {
    pub like: bool,
    pub follow: bool,
    pub comment: bool,
    pub forward: bool,
    pub long_view: bool,
    pub dislike: bool,
    /// Observed watch time in seconds, `>= 0`.
    pub watch_time_s: f64,
}

impl FeedbackRecord {
    /// Count of positive signals set, ignoring dislike.
    pub fn positive_count(&self) -> i32 {
        [self.like, self.follow, self.comment, self.forward, self.long_view]
            .iter()
            .filter(|&&b| b)
            .count() as i32
    }
}

/// One item in a request's candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub item_id: String,
    pub pxtrs: Pxtrs,
    pub exposed: bool,
    /// Present iff `exposed`.
    pub feedback: Option<FeedbackRecord>,
}

/// One user interaction carrying the full candidate set (exposed and
/// unexposed): the unit training sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Request {
    pub request_id: String,
    pub user_id: String,
    /// Epoch seconds.
    pub timestamp: i64,
    /// Upstream retrieval order.
    pub candidates: Vec<Candidate>,
}

impl Request {
    pub fn exposed_indices(&self) -> Vec<usize> {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(_, c)| c.exposed)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Position of a feedback record in the Many > Single > No Positive
/// hierarchy. `-1` for explicit dislike, else the positive-signal count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SatisfactionLevel(pub i32);

/// Maps posterior feedback to its satisfaction level. Dislike dominates:
/// a record with dislike set maps to level -1 regardless of other bits.
pub fn satisfaction_level(fb: &FeedbackRecord) -> SatisfactionLevel {
    if fb.dislike {
        SatisfactionLevel(-1)
    } else {
        SatisfactionLevel(fb.positive_count())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("field '{field}': probability out of range ({value})")]
    ProbabilityOutOfRange { field: &'static str, value: f64 },
    #[error("field '{field}': negative value ({value})")]
    NegativeValue { field: &'static str, value: f64 },
    #[error("candidate '{item_id}': feedback present iff exposed violated")]
    FeedbackExposureMismatch { item_id: String },
    #[error("request '{request_id}': empty candidate set")]
    EmptyCandidates { request_id: String },
    #[error("request '{request_id}': duplicate item_id '{item_id}'")]
    DuplicateItem { request_id: String, item_id: String },
}

impl Candidate {
    pub fn validate(&self) -> Result<(), DomainError> {
        for obj in ObjectiveId::ALL {
            let v = self.pxtrs.get(obj);
            if obj.is_probability() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(DomainError::ProbabilityOutOfRange { field: obj.name(), value: v });
                }
            } else if !(v >= 0.0) {
                return Err(DomainError::NegativeValue { field: obj.name(), value: v });
            }
        }
        if self.exposed != self.feedback.is_some() {
            return Err(DomainError::FeedbackExposureMismatch { item_id: self.item_id.clone() });
        }
        if let Some(fb) = &self.feedback {
            if !(fb.watch_time_s >= 0.0) {
                return Err(DomainError::NegativeValue {
                    field: "watch_time_s",
                    value: fb.watch_time_s,
                });
            }
        }
        Ok(())
    }
}

impl Request {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.candidates.is_empty() {
            return Err(DomainError::EmptyCandidates { request_id: self.request_id.clone() });
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.candidates {
            c.validate()?;
            if !seen.insert(c.item_id.as_str()) {
                return Err(DomainError::DuplicateItem {
                    request_id: self.request_id.clone(),
                    item_id: c.item_id.clone(),
                });
            }
        }
        Ok(())
    }
}
