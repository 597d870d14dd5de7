use std::io::Write;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::ExecOutcome;
use crate::grpo::{compute_advantages, group_objective, kl_estimate, logp_weights, Group, GrpoConfig, PolicyEval};
use crate::reward::{composite_reward, majority_vote, RewardBreakdown};
use crate::tolerance::Tolerance;

use super::policy::{answer_value, sample_group, sft_train, toy_execute, ToyOutput, ToyPolicy};
use super::task::ToyTask;

/// Separates the probe's random stream from the training stream.
const PROBE_STREAM: u64 = 0x5052_4f42_45;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub examples_per_question: usize,
    /// Step size per question; the step on the dataset mean is this times the question count.
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            examples_per_question: 20,
            learning_rate: 0.5,
            steps: 300,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyTrainConfig {
    pub grpo: GrpoConfig,
    pub learning_rate: f64,
    pub steps: usize,
    pub questions_per_step: usize,
    /// Gradient steps taken on each sampled batch before resampling.
    pub updates_per_batch: usize,
    pub seed: u64,
}

impl Default for ToyTrainConfig {
    fn default() -> Self {
        Self {
            grpo: GrpoConfig::default(),
            learning_rate: 0.1,
            steps: 500,
            questions_per_step: 16,
            updates_per_batch: 1,
            seed: 0,
        }
    }
}

impl ToyTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.grpo.validate()?;
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::invalid(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.questions_per_step == 0 {
            return Err(Error::invalid("questions_per_step must be at least 1"));
        }
        if self.updates_per_batch == 0 {
            return Err(Error::invalid("updates_per_batch must be at least 1"));
        }
        Ok(())
    }
}

/// One row of the training series. Row 0 describes the starting policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub mean_r_format: f64,
    pub mean_r_code: f64,
    pub mean_r_voting: f64,
    pub pass_at_1: f64,
    pub pass_at_g: f64,
    pub objective: f64,
    pub kl_mean: f64,
}

pub const METRICS_HEADER: &str = "step,mean_r_format,mean_r_code,mean_r_voting,pass_at_1,pass_at_G,objective,kl_mean";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.step,
            self.mean_r_format,
            self.mean_r_code,
            self.mean_r_voting,
            self.pass_at_1,
            self.pass_at_g,
            self.objective,
            self.kl_mean
        )
    }
}

pub trait MetricsSink {
    fn record(&mut self, metrics: &StepMetrics) -> Result<()>;
}

impl MetricsSink for Vec<StepMetrics> {
    fn record(&mut self, metrics: &StepMetrics) -> Result<()> {
        self.push(*metrics);
        Ok(())
    }
}

/// Discards every row.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _metrics: &StepMetrics) -> Result<()> {
        Ok(())
    }
}

/// Writes the header on construction and one line per row.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_HEADER}")?;
        Ok(Self { out })
    }

    pub fn into_inner(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, metrics: &StepMetrics) -> Result<()> {
        writeln!(self.out, "{}", metrics.csv_row())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub metrics: Vec<StepMetrics>,
}

/// Supervised demonstrations whose answer and format shares follow the task rates.
///
/// The true answer appears in `round(answerability · n)` examples; the rest
/// are drawn from a per-question skewed distribution over the wrong answers.
pub fn sft_dataset(task: &ToyTask, examples_per_question: usize, seed: u64) -> Result<Vec<ToyOutput>> {
    task.validate()?;
    if examples_per_question == 0 {
        return Err(Error::invalid("examples_per_question must be positive"));
    }
    let k = task.answers_per_question;
    let n = examples_per_question;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(task.num_questions * n);
    for q in 0..task.num_questions {
        let truth = task.true_answer[q];
        let n_true = if k == 1 { n } else { (task.answerability[q] * n as f64).round() as usize };
        let n_emit = (task.format_rate[q] * n as f64).round() as usize;
        let wrong: Vec<usize> = (0..k).filter(|&a| a != truth).collect();
        let weights: Vec<f64> = wrong.iter().map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = weights.iter().sum();
        for i in 0..n {
            let answer = if i < n_true {
                truth
            } else {
                let mut u = rng.gen::<f64>() * total;
                let mut pick = wrong[wrong.len() - 1];
                for (a, w) in wrong.iter().zip(&weights) {
                    if u < *w {
                        pick = *a;
                        break;
                    }
                    u -= w;
                }
                pick
            };
            // format flags are interleaved independently of the answers
            let emit = (i * 7919 + q) % n < n_emit;
            data.push(ToyOutput::new(q, answer, emit));
        }
    }
    Ok(data)
}

/// The supervised starting point: a uniform policy fitted to [`sft_dataset`].
pub fn sft_policy(task: &ToyTask, cfg: &SftConfig, seed: u64) -> Result<ToyPolicy> {
    let data = sft_dataset(task, cfg.examples_per_question, seed)?;
    let mut policy = ToyPolicy::uniform(task.num_questions, task.answers_per_question);
    // each question's rows see 1/num_questions of the mean loss
    let lr = cfg.learning_rate * task.num_questions as f64;
    sft_train(&mut policy, &data, lr, cfg.steps)?;
    Ok(policy)
}

struct ScoredGroup {
    outputs: Vec<ToyOutput>,
    outcomes: Vec<ExecOutcome>,
    rewards: Vec<RewardBreakdown>,
}

fn score_outputs(outputs: Vec<ToyOutput>, tol: &Tolerance) -> ScoredGroup {
    let outcomes: Vec<ExecOutcome> = outputs.iter().map(|o| toy_execute(&o.rendered_text)).collect();
    let consensus = majority_vote(&outcomes, tol);
    let rewards = outputs
        .iter()
        .zip(&outcomes)
        .map(|(o, e)| composite_reward(&o.rendered_text, e, &consensus, tol))
        .collect();
    ScoredGroup {
        outputs,
        outcomes,
        rewards,
    }
}

fn is_correct(outcome: &ExecOutcome, truth: usize, tol: &Tolerance) -> bool {
    outcome.value().is_some_and(|v| tol.matches(v, answer_value(truth)))
}

/// Reward means over `G` fresh samples per question, Pass@1 of the argmax
/// output and Pass@G of those samples. Ground truth is used here only.
fn probe(
    policy: &ToyPolicy,
    task: &ToyTask,
    g: usize,
    rng: &mut ChaCha8Rng,
    tol: &Tolerance,
) -> Result<(f64, f64, f64, f64, f64)> {
    let mut sums = [0.0; 3];
    let mut count = 0usize;
    let mut pass1 = 0usize;
    let mut pass_g = 0usize;
    for q in 0..task.num_questions {
        let truth = task.true_answer[q];
        let greedy = policy.argmax_output(q);
        if is_correct(&toy_execute(&greedy.rendered_text), truth, tol) {
            pass1 += 1;
        }
        let scored = score_outputs(sample_group(policy, q, g, rng.gen())?, tol);
        if scored.outcomes.iter().any(|o| is_correct(o, truth, tol)) {
            pass_g += 1;
        }
        for r in &scored.rewards {
            sums[0] += r.r_format;
            sums[1] += r.r_code;
            sums[2] += r.r_voting;
            count += 1;
        }
    }
    let n = task.num_questions as f64;
    let c = count as f64;
    Ok((sums[0] / c, sums[1] / c, sums[2] / c, pass1 as f64 / n, pass_g as f64 / n))
}

/// Test-time GRPO on the task's questions, without their labels.
///
/// Each step samples a batch of questions and `G` outputs per question from a
/// snapshot of the current policy, scores them through the reward engine, and
/// takes `updates_per_batch` gradient-ascent steps on the sum of the group
/// objectives. The reference policy is the starting policy throughout.
/// After every step the whole question set is probed with its labels.
pub fn tgrpo_train(
    policy: &ToyPolicy,
    task: &ToyTask,
    cfg: &ToyTrainConfig,
    sink: &mut dyn MetricsSink,
) -> Result<TrainOutcome> {
    let questions: Vec<usize> = (0..task.num_questions).collect();
    train_on(policy, task, &questions, cfg, sink)
}

fn train_on(
    policy: &ToyPolicy,
    task: &ToyTask,
    questions: &[usize],
    cfg: &ToyTrainConfig,
    sink: &mut dyn MetricsSink,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    task.validate()?;
    if policy.num_questions() != task.num_questions || policy.answers_per_question() != task.answers_per_question {
        return Err(Error::invalid(format!(
            "policy shape {}x{} does not match task {}x{}",
            policy.num_questions(),
            policy.answers_per_question(),
            task.num_questions,
            task.answers_per_question
        )));
    }
    if questions.is_empty() {
        return Err(Error::invalid("no training questions"));
    }
    for &q in questions {
        task.check_question(q)?;
    }

    let tol = Tolerance::default();
    let g = cfg.grpo.group_size;
    let reference = policy.clone();
    let mut current = policy.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PROBE_STREAM);
    let mut metrics = Vec::with_capacity(cfg.steps + 1);

    let (f, c, v, p1, pg) = probe(&current, task, g, &mut probe_rng, &tol)?;
    let row = StepMetrics {
        step: 0,
        mean_r_format: f,
        mean_r_code: c,
        mean_r_voting: v,
        pass_at_1: p1,
        pass_at_g: pg,
        objective: 0.0,
        kl_mean: 0.0,
    };
    sink.record(&row)?;
    metrics.push(row);

    let batch = cfg.questions_per_step.min(questions.len());
    for step in 1..=cfg.steps {
        let old = current.clone();
        let picked: Vec<usize> = sample(&mut rng, questions.len(), batch)
            .into_iter()
            .map(|i| questions[i])
            .collect();
        let mut groups = Vec::with_capacity(batch);
        for &q in &picked {
            let outputs = sample_group(&old, q, g, rng.gen())?;
            let scored = score_outputs(outputs, &tol);
            let totals: Vec<f64> = scored.rewards.iter().map(|r| r.r_total).collect();
            let advantages = compute_advantages(&totals, cfg.grpo.std_floor)?;
            groups.push((scored, totals, advantages));
        }

        let mut theta = current.params();
        let mut first_objective = 0.0;
        let mut kl_sum = 0.0;
        for update in 0..cfg.updates_per_batch {
            let mut grad = vec![0.0; theta.len()];
            let mut objective = 0.0;
            for (q, (scored, totals, advantages)) in picked.iter().zip(&groups) {
                let evals: Vec<PolicyEval> = scored
                    .outputs
                    .iter()
                    .map(|o| PolicyEval {
                        logp_current: current.output_log_prob(o),
                        logp_old: old.output_log_prob(o),
                        logp_ref: reference.output_log_prob(o),
                    })
                    .collect();
                if update == 0 {
                    kl_sum += evals.iter().map(|e| kl_estimate(e.logp_current, e.logp_ref)).sum::<f64>();
                }
                let group = Group {
                    question_id: format!("q{q}"),
                    rewards: totals.clone(),
                    advantages: advantages.clone(),
                    evals,
                };
                objective += group_objective(&group, &cfg.grpo)?;
                let weights = logp_weights(&group, &cfg.grpo)?;
                for (o, w) in scored.outputs.iter().zip(weights) {
                    if w != 0.0 {
                        current.add_grad_log_prob(o, w, &mut grad);
                    }
                }
            }
            objective /= picked.len() as f64;
            if !objective.is_finite() {
                return Err(Error::Diverged { step });
            }
            if update == 0 {
                first_objective = objective;
            }
            for (t, d) in theta.iter_mut().zip(&grad) {
                *t += cfg.learning_rate * d;
            }
            current.set_params(&theta)?;
            if !current.is_finite() {
                return Err(Error::Diverged { step });
            }
        }

        let (f, c, v, p1, pg) = probe(&current, task, g, &mut probe_rng, &tol)?;
        let row = StepMetrics {
            step,
            mean_r_format: f,
            mean_r_code: c,
            mean_r_voting: v,
            pass_at_1: p1,
            pass_at_g: pg,
            objective: first_objective,
            kl_mean: kl_sum / (picked.len() * g) as f64,
        };
        sink.record(&row)?;
        metrics.push(row);
    }

    Ok(TrainOutcome {
        policy: current,
        metrics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub subset_size: usize,
    pub pass_at_1: f64,
}

/// Trains from `policy` on a random subset of each size and probes the whole task.
///
/// Every cell draws its subset and its training stream from `cfg.seed`, so
/// equal sizes give equal results.
pub fn data_scale_sweep(
    policy: &ToyPolicy,
    task: &ToyTask,
    cfg: &ToyTrainConfig,
    subset_sizes: &[usize],
) -> Result<Vec<SweepRow>> {
    for &n in subset_sizes {
        if n == 0 || n > task.num_questions {
            return Err(Error::invalid(format!(
                "subset size {n} must lie in [1, {}]",
                task.num_questions
            )));
        }
    }
    subset_sizes
        .iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut subset = sample(&mut rng, task.num_questions, n).into_vec();
            subset.sort_unstable();
            let run = train_on(policy, task, &subset, cfg, &mut NullSink)?;
            let last = run.metrics.last().expect("at least the step-0 row");
            Ok(SweepRow {
                subset_size: n,
                pass_at_1: last.pass_at_1,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_task() -> ToyTask {
        ToyTask::random(8, 3, (0.5, 0.7), (0.4, 0.8), 3).unwrap()
    }

    fn short_cfg(steps: usize) -> ToyTrainConfig {
        ToyTrainConfig {
            grpo: GrpoConfig {
                group_size: 4,
                ..GrpoConfig::default()
            },
            steps,
            questions_per_step: 4,
            seed: 5,
            ..ToyTrainConfig::default()
        }
    }

    #[test]
    fn sft_matches_target_shares() {
        let task = small_task();
        let policy = sft_policy(&task, &SftConfig::default(), 1).unwrap();
        for q in 0..task.num_questions {
            let p_true = policy.answer_probs(q)[task.true_answer[q]];
            assert!((p_true - task.answerability[q]).abs() < 0.06, "q{q}: {p_true}");
        }
    }

    #[test]
    fn zero_steps_gives_single_row() {
        let task = small_task();
        let policy = ToyPolicy::uniform(8, 3);
        let out = tgrpo_train(&policy, &task, &short_cfg(0), &mut NullSink).unwrap();
        assert_eq!(out.metrics.len(), 1);
        assert_eq!(out.metrics[0].step, 0);
        assert_eq!(out.policy, policy);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let task = small_task();
        let policy = sft_policy(&task, &SftConfig::default(), 1).unwrap();
        let mut cfg = short_cfg(10);
        cfg.learning_rate = 0.0;
        let out = tgrpo_train(&policy, &task, &cfg, &mut NullSink).unwrap();
        let before: Vec<u64> = policy.params().iter().map(|x| x.to_bits()).collect();
        let after: Vec<u64> = out.policy.params().iter().map(|x| x.to_bits()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn constant_rewards_without_penalty_leave_policy_unchanged() {
        // every output is an unformatted answer 0: all rewards are zero
        let task = small_task();
        let mut policy = ToyPolicy::uniform(8, 3);
        for q in 0..8 {
            policy.logits_answer[q] = vec![800.0, -800.0, -800.0];
            policy.logits_format[q] = [-800.0, 800.0];
        }
        let mut cfg = short_cfg(5);
        cfg.grpo.kl_beta = 0.0;
        let out = tgrpo_train(&policy, &task, &cfg, &mut NullSink).unwrap();
        assert_eq!(out.policy, policy);
    }

    #[test]
    fn same_seed_same_series() {
        let task = small_task();
        let policy = sft_policy(&task, &SftConfig::default(), 1).unwrap();
        let a = tgrpo_train(&policy, &task, &short_cfg(20), &mut NullSink).unwrap();
        let b = tgrpo_train(&policy, &task, &short_cfg(20), &mut NullSink).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_sink_writes_header_and_rows() {
        let task = small_task();
        let policy = ToyPolicy::uniform(8, 3);
        let mut sink = CsvSink::new(Vec::new()).unwrap();
        tgrpo_train(&policy, &task, &short_cfg(3), &mut sink).unwrap();
        let text = String::from_utf8(sink.into_inner().unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[4].starts_with("3,"));
    }

    #[test]
    fn large_beta_stays_near_reference() {
        let task = small_task();
        let policy = sft_policy(&task, &SftConfig::default(), 1).unwrap();
        let mut cfg = short_cfg(200);
        cfg.grpo.kl_beta = 1e3;
        cfg.learning_rate = 1e-4;
        let out = tgrpo_train(&policy, &task, &cfg, &mut NullSink).unwrap();
        for q in 0..task.num_questions {
            let tv = out.policy.total_variation(&policy, q);
            assert!(tv < 0.05, "q{q}: tv {tv}");
        }
    }

    #[test]
    fn sweep_rejects_bad_sizes_and_repeats_cells() {
        let task = small_task();
        let policy = sft_policy(&task, &SftConfig::default(), 1).unwrap();
        assert!(data_scale_sweep(&policy, &task, &short_cfg(5), &[0]).is_err());
        assert!(data_scale_sweep(&policy, &task, &short_cfg(5), &[9]).is_err());
        let rows = data_scale_sweep(&policy, &task, &short_cfg(10), &[8, 8]).unwrap();
        assert_eq!(rows[0], rows[1]);
    }

    #[test]
    fn bad_config_rejected() {
        let task = small_task();
        let policy = ToyPolicy::uniform(8, 3);
        let mut cfg = short_cfg(1);
        cfg.learning_rate = f64::NAN;
        assert!(tgrpo_train(&policy, &task, &cfg, &mut NullSink).is_err());
        let wrong_shape = ToyPolicy::uniform(7, 3);
        assert!(tgrpo_train(&wrong_shape, &task, &short_cfg(1), &mut NullSink).is_err());
    }
}
