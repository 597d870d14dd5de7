//! Rule-based rewards for generated optimization solutions.
//!
//! A candidate completion earns up to three points:
//!
//! * format: the fraction of the six scaffold markers present in the text,
//! * valid code: the extracted program reached the solver and terminated normally,
//! * voting: its objective value agrees with the group's majority-voted value.
//!
//! Every function here is pure.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::exec::{ExecOutcome, OutcomeKind};
use crate::tolerance::Tolerance;

/// The scaffold markers, matched verbatim and case-sensitively.
pub const FORMAT_MARKERS: [&str; 6] = [
    "## Mathematical Model:",
    "## Decision Variables:",
    "## Objective Function:",
    "## Constraints:",
    "## Python Code Solution Using `coptpy`:",
    "```python",
];

pub const CODE_FENCE_OPEN: &str = "```python";
pub const CODE_FENCE_CLOSE: &str = "```";

/// Index into [`FORMAT_MARKERS`].
pub type MarkerId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateOutput {
    pub problem_id: String,
    pub slot: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExtractedCode {
    pub source: String,
    pub found: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    /// Number of distinct markers found, `0..=6`; `r_format` is this over six.
    pub fields_found: u8,
    pub r_format: f64,
    pub r_code: f64,
    pub r_voting: f64,
    pub r_total: f64,
}

impl RewardBreakdown {
    pub fn new(fields_found: u8, code_ok: bool, vote_ok: bool) -> Self {
        debug_assert!(fields_found as usize <= FORMAT_MARKERS.len());
        let r_format = fields_found as f64 / FORMAT_MARKERS.len() as f64;
        let r_code = if code_ok { 1.0 } else { 0.0 };
        let r_voting = if vote_ok { 1.0 } else { 0.0 };
        Self {
            fields_found,
            r_format,
            r_code,
            r_voting,
            r_total: r_format + r_code + r_voting,
        }
    }
}

/// One cluster of agreeing objective values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteCount {
    /// Smallest member of the cluster.
    pub value: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusResult {
    pub label: Option<f64>,
    /// Clusters ordered by ascending representative.
    pub votes: Vec<VoteCount>,
    pub eligible_count: usize,
}

impl ConsensusResult {
    pub fn winning_count(&self) -> usize {
        self.votes.iter().map(|v| v.count).max().unwrap_or(0)
    }
}

pub fn detect_format_fields(text: &str) -> BTreeSet<MarkerId> {
    FORMAT_MARKERS
        .iter()
        .enumerate()
        .filter(|(_, marker)| text.contains(*marker))
        .map(|(id, _)| id)
        .collect()
}

pub fn format_reward(text: &str) -> f64 {
    detect_format_fields(text).len() as f64 / FORMAT_MARKERS.len() as f64
}

/// Returns the body of the first complete ```` ```python ```` block.
///
/// The body starts on the line after the opening marker and ends before the
/// first subsequent line that is exactly ```` ``` ```` (trailing whitespace allowed).
pub fn extract_code(text: &str) -> ExtractedCode {
    let Some(open) = text.find(CODE_FENCE_OPEN) else {
        return ExtractedCode::default();
    };
    let after_marker = &text[open + CODE_FENCE_OPEN.len()..];
    // the rest of the opening line is an info string, not code
    let Some(newline) = after_marker.find('\n') else {
        return ExtractedCode::default();
    };
    let body = &after_marker[newline + 1..];

    let mut offset = 0;
    for line in body.split_inclusive('\n') {
        if line.trim_end() == CODE_FENCE_CLOSE {
            let source = body[..offset].strip_suffix('\n').unwrap_or(&body[..offset]);
            let source = source.strip_suffix('\r').unwrap_or(source);
            return ExtractedCode {
                source: source.to_string(),
                found: true,
            };
        }
        offset += line.len();
    }
    ExtractedCode::default()
}

pub fn valid_code_reward(outcome: &ExecOutcome) -> f64 {
    let normal = matches!(
        outcome.kind,
        OutcomeKind::Value(_) | OutcomeKind::NoSolution
    );
    if outcome.solver_invoked && normal {
        1.0
    } else {
        0.0
    }
}

/// Tolerance-clustered plurality vote over the normal numeric outcomes.
///
/// Values are visited in ascending order. Each joins the first cluster whose
/// representative it matches, otherwise it opens a new cluster represented
/// by itself. The label is the representative of the largest cluster, with
/// ties going to the smallest representative.
pub fn majority_vote<'a, I>(outcomes: I, tol: &Tolerance) -> ConsensusResult
where
    I: IntoIterator<Item = &'a ExecOutcome>,
{
    let values: Vec<f64> = outcomes.into_iter().filter_map(|o| o.value()).collect();
    vote_values(&values, tol)
}

pub(crate) fn vote_values(values: &[f64], tol: &Tolerance) -> ConsensusResult {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);

    let mut votes: Vec<VoteCount> = Vec::new();
    for value in &sorted {
        match votes.iter_mut().find(|c| tol.matches(*value, c.value)) {
            Some(cluster) => cluster.count += 1,
            None => votes.push(VoteCount {
                value: *value,
                count: 1,
            }),
        }
    }

    // clusters are in ascending order, so the first maximum is the smallest
    let mut label: Option<VoteCount> = None;
    for cluster in &votes {
        if label.is_none_or(|best| cluster.count > best.count) {
            label = Some(*cluster);
        }
    }

    ConsensusResult {
        label: label.map(|c| c.value),
        votes,
        eligible_count: sorted.len(),
    }
}

pub fn voting_reward(candidate: Option<f64>, consensus: &ConsensusResult, tol: &Tolerance) -> f64 {
    match (candidate, consensus.label) {
        (Some(value), Some(label)) if tol.matches(value, label) => 1.0,
        _ => 0.0,
    }
}

pub fn composite_reward(
    text: &str,
    outcome: &ExecOutcome,
    consensus: &ConsensusResult,
    tol: &Tolerance,
) -> RewardBreakdown {
    let fields = detect_format_fields(text).len() as u8;
    let code_ok = valid_code_reward(outcome) == 1.0;
    let vote_ok = voting_reward(outcome.value(), consensus, tol) == 1.0;
    RewardBreakdown::new(fields, code_ok, vote_ok)
}
