use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{ExecOutcome, OutcomeKind};
use crate::reward::{extract_code, FORMAT_MARKERS};

/// Format categorical index of "emit the scaffold".
pub const FORMAT_EMIT: usize = 0;
/// Format categorical index of "bare answer".
pub const FORMAT_OMIT: usize = 1;

/// Tabular policy: an answer categorical and a format categorical per question.
///
/// The parameter vector lists every answer logit row by row, followed by every
/// format logit row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub logits_answer: Vec<Vec<f64>>,
    pub logits_format: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyOutput {
    pub question_id: usize,
    pub answer_index: usize,
    pub format_flag: bool,
    pub rendered_text: String,
}

impl ToyOutput {
    pub fn new(question_id: usize, answer_index: usize, format_flag: bool) -> Self {
        Self {
            question_id,
            answer_index,
            format_flag,
            rendered_text: render(answer_index, format_flag),
        }
    }

    pub fn format_index(&self) -> usize {
        if self.format_flag {
            FORMAT_EMIT
        } else {
            FORMAT_OMIT
        }
    }
}

/// Objective value reported by the program for an answer index.
pub fn answer_value(answer_index: usize) -> f64 {
    answer_index as f64
}

/// The full scaffold with a program printing the answer, or just the number.
pub fn render(answer_index: usize, format_flag: bool) -> String {
    let value = answer_value(answer_index);
    if !format_flag {
        return format!("{value}");
    }
    format!(
        "{}\nChoose the candidate with the best objective.\n\
         {}\nx in {{0, 1}} for each candidate.\n\
         {}\nmaximize the value of the chosen candidate.\n\
         {}\nexactly one candidate is chosen.\n\
         {}\n{}\nimport coptpy\nprint({value:?})\n```\n",
        FORMAT_MARKERS[0], FORMAT_MARKERS[1], FORMAT_MARKERS[2], FORMAT_MARKERS[3], FORMAT_MARKERS[4], FORMAT_MARKERS[5],
    )
}

/// Stand-in for the sandbox: the printed number is the objective value.
pub fn toy_execute(text: &str) -> ExecOutcome {
    let code = extract_code(text);
    if !code.found {
        return ExecOutcome::error("no code block");
    }
    let printed = code.source.lines().find_map(|line| {
        line.trim()
            .strip_prefix("print(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|inner| inner.trim().parse::<f64>().ok())
    });
    match printed {
        Some(v) if v.is_finite() => ExecOutcome::new(OutcomeKind::Value(v), true),
        _ => ExecOutcome::error("program printed no objective"),
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits[i] - lse
}

fn argmax(xs: &[f64]) -> usize {
    // first maximum, so ties resolve to the lowest index
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

impl ToyPolicy {
    pub fn uniform(num_questions: usize, answers_per_question: usize) -> Self {
        Self {
            logits_answer: vec![vec![0.0; answers_per_question]; num_questions],
            logits_format: vec![[0.0; 2]; num_questions],
        }
    }

    pub fn num_questions(&self) -> usize {
        self.logits_answer.len()
    }

    pub fn answers_per_question(&self) -> usize {
        self.logits_answer.first().map_or(0, Vec::len)
    }

    pub fn num_params(&self) -> usize {
        self.num_questions() * (self.answers_per_question() + 2)
    }

    fn answer_offset(&self, q: usize) -> usize {
        q * self.answers_per_question()
    }

    fn format_offset(&self, q: usize) -> usize {
        self.num_questions() * self.answers_per_question() + 2 * q
    }

    pub fn params(&self) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.num_params());
        for row in &self.logits_answer {
            theta.extend_from_slice(row);
        }
        for row in &self.logits_format {
            theta.extend_from_slice(row);
        }
        theta
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "parameter vector has {} entries, policy needs {}",
                theta.len(),
                self.num_params()
            )));
        }
        let k = self.answers_per_question();
        let (answers, formats) = theta.split_at(self.num_questions() * k);
        for (row, chunk) in self.logits_answer.iter_mut().zip(answers.chunks(k)) {
            row.copy_from_slice(chunk);
        }
        for (row, chunk) in self.logits_format.iter_mut().zip(formats.chunks(2)) {
            row.copy_from_slice(chunk);
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.logits_answer.iter().flatten().all(|x| x.is_finite())
            && self.logits_format.iter().flatten().all(|x| x.is_finite())
    }

    pub fn check_question(&self, q: usize) -> Result<()> {
        if q >= self.num_questions() {
            return Err(Error::invalid(format!(
                "unknown question id {q}; the policy covers {}",
                self.num_questions()
            )));
        }
        Ok(())
    }

    fn check_output(&self, output: &ToyOutput) -> Result<()> {
        self.check_question(output.question_id)?;
        if output.answer_index >= self.answers_per_question() {
            return Err(Error::invalid(format!(
                "answer index {} is outside [0, {})",
                output.answer_index,
                self.answers_per_question()
            )));
        }
        Ok(())
    }

    pub fn answer_probs(&self, q: usize) -> Vec<f64> {
        softmax(&self.logits_answer[q])
    }

    pub fn format_probs(&self, q: usize) -> [f64; 2] {
        let p = softmax(&self.logits_format[q]);
        [p[0], p[1]]
    }

    /// Whole-output log-probability `ln P(answer) + ln P(format)`.
    pub fn log_prob(&self, q: usize, answer_index: usize, format_index: usize) -> f64 {
        log_softmax_at(&self.logits_answer[q], answer_index) + log_softmax_at(&self.logits_format[q], format_index)
    }

    pub fn output_log_prob(&self, output: &ToyOutput) -> f64 {
        self.log_prob(output.question_id, output.answer_index, output.format_index())
    }

    /// Adds `weight · ∇θ ln P(output)` into `grad`.
    pub fn add_grad_log_prob(&self, output: &ToyOutput, weight: f64, grad: &mut [f64]) {
        let q = output.question_id;
        let a0 = self.answer_offset(q);
        for (j, p) in self.answer_probs(q).into_iter().enumerate() {
            let indicator = if j == output.answer_index { 1.0 } else { 0.0 };
            grad[a0 + j] += weight * (indicator - p);
        }
        let f0 = self.format_offset(q);
        let f = output.format_index();
        for (j, p) in self.format_probs(q).into_iter().enumerate() {
            let indicator = if j == f { 1.0 } else { 0.0 };
            grad[f0 + j] += weight * (indicator - p);
        }
    }

    pub fn grad_log_prob(&self, output: &ToyOutput) -> Vec<f64> {
        let mut grad = vec![0.0; self.num_params()];
        self.add_grad_log_prob(output, 1.0, &mut grad);
        grad
    }

    /// The single most likely output; ties go to the lowest index.
    pub fn argmax_output(&self, q: usize) -> ToyOutput {
        let answer = argmax(&self.logits_answer[q]);
        let format = argmax(&self.logits_format[q]);
        ToyOutput::new(q, answer, format == FORMAT_EMIT)
    }

    /// Total-variation distance between this policy's and `other`'s output
    /// distributions on question `q`.
    pub fn total_variation(&self, other: &ToyPolicy, q: usize) -> f64 {
        let (pa, qa) = (self.answer_probs(q), other.answer_probs(q));
        let (pf, qf) = (self.format_probs(q), other.format_probs(q));
        let mut tv = 0.0;
        for a in 0..pa.len() {
            for f in 0..2 {
                tv += (pa[a] * pf[f] - qa[a] * qf[f]).abs();
            }
        }
        tv / 2.0
    }
}

/// Draws `g` i.i.d. outputs for question `q`; equal seeds give equal samples.
pub fn sample_group(policy: &ToyPolicy, q: usize, g: usize, seed: u64) -> Result<Vec<ToyOutput>> {
    if g < 2 {
        return Err(Error::invalid(format!("group size must be at least 2, got {g}")));
    }
    policy.check_question(q)?;
    let answers = WeightedIndex::new(policy.answer_probs(q))
        .map_err(|e| Error::invalid(format!("question {q}: answer distribution: {e}")))?;
    let formats = WeightedIndex::new(policy.format_probs(q))
        .map_err(|e| Error::invalid(format!("question {q}: format distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..g)
        .map(|_| {
            let a = answers.sample(&mut rng);
            let f = formats.sample(&mut rng);
            ToyOutput::new(q, a, f == FORMAT_EMIT)
        })
        .collect())
}

/// Mean negative log-likelihood of the targets and its gradient over θ.
pub fn sft_loss(policy: &ToyPolicy, dataset: &[ToyOutput]) -> Result<(f64, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::invalid("supervised dataset is empty"));
    }
    let n = dataset.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; policy.num_params()];
    for target in dataset {
        policy.check_output(target)?;
        loss -= policy.output_log_prob(target);
        policy.add_grad_log_prob(target, -1.0 / n, &mut grad);
    }
    Ok((loss / n, grad))
}

/// Plain gradient descent on [`sft_loss`]; returns the loss before each step.
pub fn sft_train(policy: &mut ToyPolicy, dataset: &[ToyOutput], learning_rate: f64, steps: usize) -> Result<Vec<f64>> {
    if !(learning_rate.is_finite() && learning_rate >= 0.0) {
        return Err(Error::invalid(format!("learning rate must be >= 0, got {learning_rate}")));
    }
    let mut losses = Vec::with_capacity(steps);
    let mut theta = policy.params();
    for _ in 0..steps {
        let (loss, grad) = sft_loss(policy, dataset)?;
        losses.push(loss);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= learning_rate * g;
        }
        policy.set_params(&theta)?;
    }
    Ok(losses)
}
