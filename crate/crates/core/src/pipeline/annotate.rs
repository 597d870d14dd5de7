//! Voting, scoring and advantage annotation of candidate groups.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{check_unique_ids, Problem};
use crate::exec::{ExecOutcome, ExecRecord, OutcomeRecord};
use crate::grpo::compute_advantages;
use crate::reward::{composite_reward, majority_vote, CandidateOutput, ConsensusResult, RewardBreakdown, VoteCount};
use crate::tolerance::Tolerance;

/// One problem's candidates joined with their execution outcomes, in slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateGroup {
    pub problem_id: String,
    pub texts: Vec<String>,
    pub outcomes: Vec<ExecOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedGroup {
    pub problem_id: String,
    pub candidates: Vec<String>,
    pub exec: Vec<OutcomeRecord>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    pub consensus: ConsensusResult,
}

/// Row of the vote artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub problem_id: String,
    pub consensus: ConsensusResult,
}

/// Row of the score artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub problem_id: String,
    pub slot: usize,
    #[serde(flatten)]
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabel {
    pub problem_id: String,
    pub pseudo_label: f64,
    pub votes: Vec<VoteCount>,
    pub eligible_count: usize,
}

/// Joins candidates and exec records into complete groups of `group_size`.
///
/// Groups follow the order of `problems`. A problem missing any slot, or
/// carrying a duplicate or out-of-range slot, is an error naming it.
pub fn collect_groups(
    problems: &[Problem],
    candidates: &[CandidateOutput],
    exec: &[ExecRecord],
    group_size: usize,
) -> Result<Vec<CandidateGroup>> {
    if group_size == 0 {
        return Err(Error::invalid("group size must be positive"));
    }
    check_unique_ids(problems)?;
    let index: HashMap<&str, usize> = problems
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();

    let mut texts: Vec<Vec<Option<String>>> = vec![vec![None; group_size]; problems.len()];
    for c in candidates {
        let slot = slot_ref(&index, &mut texts, &c.problem_id, c.slot, "candidate")?;
        *slot = Some(c.text.clone());
    }
    let mut outcomes: Vec<Vec<Option<ExecOutcome>>> = vec![vec![None; group_size]; problems.len()];
    for r in exec {
        let outcome = r.to_outcome().map_err(|e| {
            Error::invalid(format!("exec record {}/{}: {e}", r.problem_id, r.slot))
        })?;
        let slot = slot_ref(&index, &mut outcomes, &r.problem_id, r.slot, "exec record")?;
        *slot = Some(outcome);
    }

    problems
        .iter()
        .zip(texts.into_iter().zip(outcomes))
        .map(|(p, (texts, outcomes))| {
            let texts: Option<Vec<String>> = texts.into_iter().collect();
            let outcomes: Option<Vec<ExecOutcome>> = outcomes.into_iter().collect();
            match (texts, outcomes) {
                (Some(texts), Some(outcomes)) => Ok(CandidateGroup {
                    problem_id: p.id.clone(),
                    texts,
                    outcomes,
                }),
                (None, _) => Err(incomplete(&p.id, "candidates", group_size)),
                (_, None) => Err(incomplete(&p.id, "exec results", group_size)),
            }
        })
        .collect()
}

fn incomplete(problem_id: &str, what: &str, group_size: usize) -> Error {
    Error::invalid(format!(
        "incomplete group for problem '{problem_id}': expected {group_size} {what}"
    ))
}

fn slot_ref<'a, T>(
    index: &HashMap<&str, usize>,
    table: &'a mut [Vec<Option<T>>],
    problem_id: &str,
    slot: usize,
    what: &str,
) -> Result<&'a mut Option<T>> {
    let &row = index
        .get(problem_id)
        .ok_or_else(|| Error::invalid(format!("{what} for unknown problem '{problem_id}'")))?;
    let cells = &mut table[row];
    let g = cells.len();
    let cell = cells.get_mut(slot).ok_or_else(|| {
        Error::invalid(format!(
            "{what} for problem '{problem_id}' has slot {slot}, group size is {g}"
        ))
    })?;
    if cell.is_some() {
        return Err(Error::invalid(format!(
            "duplicate {what} for problem '{problem_id}' slot {slot}"
        )));
    }
    Ok(cell)
}

pub fn vote(groups: &[CandidateGroup], tol: &Tolerance) -> Vec<VoteRecord> {
    groups
        .iter()
        .map(|g| VoteRecord {
            problem_id: g.problem_id.clone(),
            consensus: majority_vote(&g.outcomes, tol),
        })
        .collect()
}

pub fn score_group(group: &CandidateGroup, consensus: &ConsensusResult, tol: &Tolerance) -> Vec<RewardBreakdown> {
    group
        .texts
        .iter()
        .zip(&group.outcomes)
        .map(|(text, outcome)| composite_reward(text, outcome, consensus, tol))
        .collect()
}

/// Scores every group against a previously computed vote artifact.
pub fn score(groups: &[CandidateGroup], votes: &[VoteRecord], tol: &Tolerance) -> Result<Vec<ScoreRecord>> {
    let by_id: BTreeMap<&str, &ConsensusResult> = votes
        .iter()
        .map(|v| (v.problem_id.as_str(), &v.consensus))
        .collect();
    let mut rows = Vec::new();
    for group in groups {
        let consensus = by_id.get(group.problem_id.as_str()).ok_or_else(|| {
            Error::invalid(format!("no vote record for problem '{}'", group.problem_id))
        })?;
        for (slot, reward) in score_group(group, consensus, tol).into_iter().enumerate() {
            rows.push(ScoreRecord {
                problem_id: group.problem_id.clone(),
                slot,
                reward,
            });
        }
    }
    Ok(rows)
}

/// Votes, scores and standardizes each group in one pass.
pub fn annotate(groups: &[CandidateGroup], tol: &Tolerance, std_floor: f64) -> Result<Vec<AnnotatedGroup>> {
    groups
        .iter()
        .map(|group| {
            let consensus = majority_vote(&group.outcomes, tol);
            let rewards = score_group(group, &consensus, tol);
            let totals: Vec<f64> = rewards.iter().map(|r| r.r_total).collect();
            let advantages = compute_advantages(&totals, std_floor)?;
            Ok(AnnotatedGroup {
                problem_id: group.problem_id.clone(),
                candidates: group.texts.clone(),
                exec: group.outcomes.iter().map(OutcomeRecord::from).collect(),
                rewards,
                advantages,
                consensus,
            })
        })
        .collect()
}

/// One row per group with a consensus label; groups without one are omitted.
pub fn export_pseudo_labels(groups: &[AnnotatedGroup]) -> Vec<PseudoLabel> {
    groups
        .iter()
        .filter_map(|g| {
            g.consensus.label.map(|label| PseudoLabel {
                problem_id: g.problem_id.clone(),
                pseudo_label: label,
                votes: g.consensus.votes.clone(),
                eligible_count: g.consensus.eligible_count,
            })
        })
        .collect()
}
