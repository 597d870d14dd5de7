use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A synthetic question set with one correct answer index per question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTask {
    pub num_questions: usize,
    pub answers_per_question: usize,
    pub true_answer: Vec<usize>,
    /// Share of supervised demonstrations that carry the true answer.
    pub answerability: Vec<f64>,
    /// Share of supervised demonstrations that use the full scaffold.
    pub format_rate: Vec<f64>,
}

impl ToyTask {
    /// Draws a task with per-question rates uniform in the given ranges.
    pub fn random(
        num_questions: usize,
        answers_per_question: usize,
        answerability: (f64, f64),
        format_rate: (f64, f64),
        seed: u64,
    ) -> Result<Self> {
        for (name, (lo, hi)) in [("answerability", answerability), ("format rate", format_rate)] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::invalid(format!("{name} range [{lo}, {hi}] is not inside [0, 1]")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut task = Self {
            num_questions,
            answers_per_question,
            true_answer: Vec::with_capacity(num_questions),
            answerability: Vec::with_capacity(num_questions),
            format_rate: Vec::with_capacity(num_questions),
        };
        if answers_per_question == 0 {
            return Err(Error::invalid("answers_per_question must be positive"));
        }
        for _ in 0..num_questions {
            task.true_answer.push(rng.gen_range(0..answers_per_question));
            task.answerability.push(lerp(answerability, rng.gen()));
            task.format_rate.push(lerp(format_rate, rng.gen()));
        }
        task.validate()?;
        Ok(task)
    }

    /// The seeded task used by the default toy run and its checks.
    pub fn reference() -> Self {
        Self::random(64, 4, (0.45, 0.75), (0.3, 0.8), 7).expect("reference task parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_questions == 0 || self.answers_per_question == 0 {
            return Err(Error::invalid("toy task needs at least one question and one answer"));
        }
        let n = self.num_questions;
        if self.true_answer.len() != n || self.answerability.len() != n || self.format_rate.len() != n {
            return Err(Error::invalid(format!(
                "toy task tables must all have {n} rows"
            )));
        }
        if let Some(q) = self.true_answer.iter().position(|&a| a >= self.answers_per_question) {
            return Err(Error::invalid(format!(
                "question {q}: true answer {} is outside [0, {})",
                self.true_answer[q], self.answers_per_question
            )));
        }
        let in_unit = |x: &f64| (0.0..=1.0).contains(x);
        if !self.answerability.iter().all(in_unit) || !self.format_rate.iter().all(in_unit) {
            return Err(Error::invalid("answerability and format rates must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn check_question(&self, q: usize) -> Result<()> {
        if q >= self.num_questions {
            return Err(Error::invalid(format!(
                "unknown question id {q}; the task has {}",
                self.num_questions
            )));
        }
        Ok(())
    }
}

fn lerp((lo, hi): (f64, f64), t: f64) -> f64 {
    lo + (hi - lo) * t
}
