//! Solution accuracy and Pass@k against ground-truth optimal values.
//!
//! Problems without a ground truth (and, in reports, problems without any
//! executed candidate) are ungraded and excluded from the denominator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecOutcome;
use crate::reward::{majority_vote, ConsensusResult};
use crate::tolerance::Tolerance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub question: String,
    pub ground_truth: Option<f64>,
    #[serde(default)]
    pub tags: Vec<String>,
}

pub fn check_unique_ids(problems: &[Problem]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for p in problems {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::invalid(format!("duplicate problem id '{}'", p.id)));
        }
    }
    Ok(())
}

fn is_correct(prediction: Option<f64>, truth: f64, tol: &Tolerance) -> bool {
    prediction.is_some_and(|p| tol.matches(p, truth))
}

fn ensure_known<'a, I>(problems: &[Problem], ids: I, what: &str) -> Result<()>
where
    I: IntoIterator<Item = &'a String>,
{
    let known: BTreeSet<&str> = problems.iter().map(|p| p.id.as_str()).collect();
    for id in ids {
        if !known.contains(id.as_str()) {
            return Err(Error::invalid(format!("{what} for unknown problem '{id}'")));
        }
    }
    Ok(())
}

/// Fraction of graded problems whose prediction matches the ground truth.
pub fn solution_accuracy(
    problems: &[Problem],
    predictions: &HashMap<String, Option<f64>>,
    tol: &Tolerance,
) -> Result<f64> {
    ensure_known(problems, predictions.keys(), "prediction")?;
    let mut graded = 0usize;
    let mut correct = 0usize;
    for p in problems {
        let Some(truth) = p.ground_truth else { continue };
        graded += 1;
        if is_correct(predictions.get(&p.id).copied().flatten(), truth, tol) {
            correct += 1;
        }
    }
    if graded == 0 {
        return Err(Error::invalid("no gradable problems"));
    }
    Ok(correct as f64 / graded as f64)
}

/// Fraction of graded problems where any of the first `k` samples is correct.
pub fn pass_at_k(
    problems: &[Problem],
    samples: &HashMap<String, Vec<Option<f64>>>,
    k: usize,
    tol: &Tolerance,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    ensure_known(problems, samples.keys(), "samples")?;
    let mut graded = 0usize;
    let mut hits = 0usize;
    for p in problems {
        let Some(truth) = p.ground_truth else { continue };
        let pool = samples.get(&p.id).map(Vec::as_slice).unwrap_or(&[]);
        if pool.len() < k {
            return Err(Error::invalid(format!(
                "problem '{}' has {} samples, fewer than k = {k}",
                p.id,
                pool.len()
            )));
        }
        graded += 1;
        if pool[..k].iter().any(|s| is_correct(*s, truth, tol)) {
            hits += 1;
        }
    }
    if graded == 0 {
        return Err(Error::invalid("no gradable problems"));
    }
    Ok(hits as f64 / graded as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRow {
    pub id: String,
    pub graded: bool,
    pub ground_truth: Option<f64>,
    /// Objective values in slot order; `None` where the candidate produced no value.
    pub predictions: Vec<Option<f64>>,
    pub correct: Vec<bool>,
    pub consensus: Option<f64>,
    pub consensus_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Number of graded problems.
    pub n_problems: usize,
    pub n_ungraded: usize,
    /// Accuracy of the slot-0 prediction.
    pub solution_accuracy: f64,
    pub pass_at_k: BTreeMap<usize, f64>,
    /// How often the majority-voted value equals the ground truth.
    pub consensus_agreement: f64,
    pub per_problem: Vec<ProblemRow>,
}

impl EvalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>14} {:>6} {:>14}", "problem", "truth", "pass", "consensus");
        for row in &self.per_problem {
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v}"));
            let pass = if !row.graded {
                "skip".to_string()
            } else {
                format!("{}/{}", row.correct.iter().filter(|c| **c).count(), row.correct.len())
            };
            let _ = writeln!(
                out,
                "{:<24} {:>14} {:>6} {:>14}",
                row.id,
                fmt(row.ground_truth),
                pass,
                fmt(row.consensus)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "graded problems      {}", self.n_problems);
        let _ = writeln!(out, "ungraded problems    {}", self.n_ungraded);
        let _ = writeln!(out, "solution accuracy    {:.4}", self.solution_accuracy);
        for (k, v) in &self.pass_at_k {
            let _ = writeln!(out, "pass@{:<15} {:.4}", k, v);
        }
        let _ = writeln!(out, "consensus agreement  {:.4}", self.consensus_agreement);
        out
    }
}

/// Aggregates per-candidate execution results into an [`EvalReport`].
///
/// `exec` maps problem ids to outcomes in slot order. Missing consensus
/// entries are computed from `exec` with [`majority_vote`].
pub fn build_report(
    problems: &[Problem],
    exec: &BTreeMap<String, Vec<ExecOutcome>>,
    consensus: &BTreeMap<String, ConsensusResult>,
    ks: &[usize],
    tol: &Tolerance,
) -> Result<EvalReport> {
    check_unique_ids(problems)?;
    ensure_known(problems, exec.keys(), "execution results")?;
    ensure_known(problems, consensus.keys(), "consensus")?;

    let mut rows = Vec::with_capacity(problems.len());
    for p in problems {
        let outcomes = exec.get(&p.id).map(Vec::as_slice).unwrap_or(&[]);
        let predictions: Vec<Option<f64>> = outcomes.iter().map(ExecOutcome::value).collect();
        let graded = p.ground_truth.is_some() && !outcomes.is_empty();
        let consensus_label = match consensus.get(&p.id) {
            Some(c) => c.label,
            None if outcomes.is_empty() => None,
            None => majority_vote(outcomes, tol).label,
        };
        let (correct, consensus_correct) = match p.ground_truth {
            Some(truth) if graded => (
                predictions.iter().map(|v| is_correct(*v, truth, tol)).collect(),
                is_correct(consensus_label, truth, tol),
            ),
            _ => (Vec::new(), false),
        };
        rows.push(ProblemRow {
            id: p.id.clone(),
            graded,
            ground_truth: p.ground_truth,
            predictions,
            correct,
            consensus: consensus_label,
            consensus_correct,
        });
    }

    let graded: Vec<&ProblemRow> = rows.iter().filter(|r| r.graded).collect();
    let n = graded.len();
    if n == 0 {
        return Err(Error::invalid("no gradable problems"));
    }
    let first_correct = graded.iter().filter(|r| r.correct[0]).count();
    let agreement = graded.iter().filter(|r| r.consensus_correct).count();

    let mut pass = BTreeMap::new();
    for &k in ks {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let mut hits = 0;
        for r in &graded {
            if r.correct.len() < k {
                return Err(Error::invalid(format!(
                    "problem '{}' has {} samples, fewer than k = {k}",
                    r.id,
                    r.correct.len()
                )));
            }
            if r.correct[..k].iter().any(|c| *c) {
                hits += 1;
            }
        }
        pass.insert(k, hits as f64 / n as f64);
    }

    Ok(EvalReport {
        n_problems: n,
        n_ungraded: rows.len() - n,
        solution_accuracy: first_correct as f64 / n as f64,
        pass_at_k: pass,
        consensus_agreement: agreement as f64 / n as f64,
        per_problem: rows,
    })
}
