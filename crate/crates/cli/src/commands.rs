use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use optreward_core::eval::{build_report, Problem};
use optreward_core::exec::{execute_batch, ExecOutcome, ExecRecord, ExecRequest, RunnerCommand};
use optreward_core::jsonl;
use optreward_core::pipeline::{
    annotate, collect_groups, export_pseudo_labels, generate_candidates, score, vote, CandidateGroup,
    HttpChatBackend, VoteRecord,
};
use optreward_core::reward::{extract_code, CandidateOutput, ConsensusResult};
use optreward_core::toy::{
    data_scale_sweep, sft_policy, tgrpo_train, CsvSink, StepMetrics, ToyTask, ToyTrainConfig,
};

use crate::config::HarnessConfig;
use crate::{Cli, Command, CommonArgs};

const DEFAULT_TOY_METRICS: &str = "toy_metrics.csv";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = HarnessConfig::load(cli.common.config.as_deref())?;
    apply_common(&mut cfg, &cli.common);
    apply_stage(&mut cfg, &cli.command);
    cfg.validate().context("invalid configuration")?;
    let ctx = Stage { cfg, common: cli.common };

    match cli.command {
        Command::Generate(args) => ctx.generate(args.journal),
        Command::Exec(_) => ctx.exec(),
        Command::Vote(args) => ctx.vote(args.exec),
        Command::Score(args) => ctx.score(args.inputs.exec, args.votes),
        Command::Annotate(args) => ctx.annotate(args.inputs.exec, args.pseudo_labels),
        Command::Eval(args) => ctx.eval(args.inputs.exec, args.votes, args.k),
        Command::Toy(args) => ctx.toy(args.sweep),
    }
}

fn apply_common(cfg: &mut HarnessConfig, common: &CommonArgs) {
    if let Some(x) = common.tol_abs {
        cfg.tolerance.atol = x;
    }
    if let Some(x) = common.tol_rel {
        cfg.tolerance.rtol = x;
    }
    if let Some(g) = common.group_size {
        cfg.grpo.group_size = g;
        cfg.generation.group_size = g;
    }
    if let Some(n) = common.parallelism {
        cfg.exec.parallelism = n;
        cfg.generation.max_in_flight = n;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.exec.mode = mode;
    }
    if let Some(p) = &common.problems {
        cfg.paths.problems = Some(p.clone());
    }
    if let Some(p) = &common.candidates {
        cfg.paths.candidates = Some(p.clone());
    }
}

fn apply_stage(cfg: &mut HarnessConfig, command: &Command) {
    match command {
        Command::Generate(a) => {
            if let Some(u) = &a.endpoint_url {
                cfg.generation.endpoint_url = u.clone();
            }
            if let Some(m) = &a.model {
                cfg.generation.model_name = m.clone();
            }
            if let Some(k) = &a.api_key_env {
                cfg.generation.api_key_env = k.clone();
            }
            if let Some(t) = a.temperature {
                cfg.generation.temperature = t;
            }
        }
        Command::Exec(a) => {
            if let Some(program) = &a.runner {
                let mut runner = cfg.exec.runner.take().unwrap_or_else(|| RunnerCommand::new(program));
                runner.program = program.clone();
                cfg.exec.runner = Some(runner);
            }
            if !a.runner_args.is_empty() {
                if let Some(runner) = cfg.exec.runner.as_mut() {
                    runner.args = a.runner_args.clone();
                }
            }
            if let Some(t) = a.time_limit_s {
                cfg.exec.time_limit_s = t;
            }
            if let Some(m) = a.memory_limit_mb {
                cfg.exec.memory_limit_mb = m;
            }
        }
        Command::Toy(a) => {
            if let Some(s) = a.steps {
                cfg.toy.steps = s;
            }
            if let Some(b) = a.beta {
                cfg.grpo.kl_beta = b;
            }
            if let Some(e) = a.epsilon {
                cfg.grpo.clip_epsilon = e;
            }
            if let Some(lr) = a.lr {
                cfg.toy.learning_rate = lr;
            }
        }
        _ => {}
    }
}

struct Stage {
    cfg: HarnessConfig,
    common: CommonArgs,
}

fn required<'a>(value: Option<&'a PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .map(PathBuf::as_path)
        .ok_or_else(|| anyhow!("missing --{flag} (or the matching [paths] entry in the config)"))
}

fn write_json_lines<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    jsonl::write(path, rows).with_context(|| format!("writing {}", path.display()))
}

impl Stage {
    fn out(&self) -> Result<&Path> {
        required(self.common.out.as_ref(), "out")
    }

    fn problems(&self) -> Result<Vec<Problem>> {
        let path = required(self.cfg.paths.problems.as_ref(), "problems")?;
        let problems: Vec<Problem> = jsonl::read(path)?;
        if problems.is_empty() {
            bail!("no problems in {}", path.display());
        }
        Ok(problems)
    }

    fn candidates(&self) -> Result<Vec<CandidateOutput>> {
        let path = required(self.cfg.paths.candidates.as_ref(), "candidates")?;
        let candidates: Vec<CandidateOutput> = jsonl::read(path)?;
        if candidates.is_empty() {
            bail!("no candidates in {}", path.display());
        }
        Ok(candidates)
    }

    fn exec_records(&self, flag: Option<PathBuf>) -> Result<Vec<ExecRecord>> {
        let path = flag.or_else(|| self.cfg.paths.exec.clone());
        let path = required(path.as_ref(), "exec")?;
        Ok(jsonl::read(path)?)
    }

    fn groups(&self, exec: Option<PathBuf>) -> Result<Vec<CandidateGroup>> {
        let problems = self.problems()?;
        let candidates = self.candidates()?;
        let records = self.exec_records(exec)?;
        Ok(collect_groups(&problems, &candidates, &records, self.cfg.grpo.group_size)?)
    }

    fn generate(&self, journal: Option<PathBuf>) -> Result<()> {
        let problems = self.problems()?;
        let out = self.out()?;
        let journal = journal.unwrap_or_else(|| {
            let mut name = out.as_os_str().to_owned();
            name.push(".progress.jsonl");
            PathBuf::from(name)
        });
        let backend = HttpChatBackend::from_config(&self.cfg.generation)?;
        let rows = generate_candidates(&problems, &self.cfg.generation, &backend, Some(&journal))?;
        let empty = rows.iter().filter(|c| c.text.is_empty()).count();
        write_json_lines(out, &rows)?;
        println!("wrote {} candidates to {} ({empty} empty)", rows.len(), out.display());
        Ok(())
    }

    fn exec(&self) -> Result<()> {
        let candidates = self.candidates()?;
        let out = self.out()?;
        let exec = &self.cfg.exec;
        let mut outcomes: Vec<Option<ExecOutcome>> = vec![None; candidates.len()];
        let mut requests = Vec::new();
        let mut positions = Vec::new();
        for (i, c) in candidates.iter().enumerate() {
            let code = extract_code(&c.text);
            if !code.found {
                outcomes[i] = Some(ExecOutcome::error("no code block"));
                continue;
            }
            requests.push(
                ExecRequest::new(&c.problem_id, c.slot, code.source)
                    .with_limits(exec.time_limit(), exec.memory_limit_bytes())
                    .with_mode(exec.mode),
            );
            positions.push(i);
        }
        let results = execute_batch(&requests, exec.parallelism, exec.runner.as_ref())?;
        for (i, outcome) in positions.into_iter().zip(results) {
            outcomes[i] = Some(outcome);
        }
        let rows: Vec<ExecRecord> = candidates
            .iter()
            .zip(outcomes)
            .map(|(c, o)| ExecRecord::from_outcome(&c.problem_id, c.slot, &o.expect("every slot filled")))
            .collect();
        write_json_lines(out, &rows)?;
        let values = rows.iter().filter(|r| r.value.is_some()).count();
        println!("wrote {} exec records to {} ({values} with values)", rows.len(), out.display());
        Ok(())
    }

    fn vote(&self, exec: Option<PathBuf>) -> Result<()> {
        let groups = self.groups(exec)?;
        let out = self.out()?;
        let votes = vote(&groups, &self.cfg.tolerance);
        write_json_lines(out, &votes)?;
        let labelled = votes.iter().filter(|v| v.consensus.label.is_some()).count();
        println!("wrote {} votes to {} ({labelled} with a label)", votes.len(), out.display());
        Ok(())
    }

    fn votes(&self, flag: Option<PathBuf>) -> Result<Option<Vec<VoteRecord>>> {
        match flag.or_else(|| self.cfg.paths.votes.clone()) {
            Some(path) => Ok(Some(jsonl::read(&path)?)),
            None => Ok(None),
        }
    }

    fn score(&self, exec: Option<PathBuf>, votes: Option<PathBuf>) -> Result<()> {
        let groups = self.groups(exec)?;
        let out = self.out()?;
        let votes = self.votes(votes)?.ok_or_else(|| anyhow!("missing --votes"))?;
        let rows = score(&groups, &votes, &self.cfg.tolerance)?;
        write_json_lines(out, &rows)?;
        let mean = rows.iter().map(|r| r.reward.r_total).sum::<f64>() / rows.len() as f64;
        println!("wrote {} scores to {} (mean total {mean:.4})", rows.len(), out.display());
        Ok(())
    }

    fn annotate(&self, exec: Option<PathBuf>, pseudo_labels: Option<PathBuf>) -> Result<()> {
        let groups = self.groups(exec)?;
        let out = self.out()?;
        let annotated = annotate(&groups, &self.cfg.tolerance, self.cfg.grpo.std_floor)?;
        write_json_lines(out, &annotated)?;
        println!("wrote {} annotated groups to {}", annotated.len(), out.display());
        if let Some(path) = pseudo_labels {
            let labels = export_pseudo_labels(&annotated);
            write_json_lines(&path, &labels)?;
            println!("wrote {} pseudo-labels to {}", labels.len(), path.display());
        }
        Ok(())
    }

    fn eval(&self, exec: Option<PathBuf>, votes: Option<PathBuf>, ks: Vec<usize>) -> Result<()> {
        let problems = self.problems()?;
        let records = self.exec_records(exec)?;
        if records.is_empty() {
            bail!("no exec records");
        }
        let mut by_problem: BTreeMap<String, BTreeMap<usize, ExecOutcome>> = BTreeMap::new();
        for r in &records {
            let outcome = r
                .to_outcome()
                .map_err(|e| anyhow!("exec record {}/{}: {e}", r.problem_id, r.slot))?;
            if by_problem.entry(r.problem_id.clone()).or_default().insert(r.slot, outcome).is_some() {
                bail!("duplicate exec record for problem '{}' slot {}", r.problem_id, r.slot);
            }
        }
        let mut exec_map: BTreeMap<String, Vec<ExecOutcome>> = BTreeMap::new();
        for (id, slots) in by_problem {
            if let Some((pos, slot)) = slots.keys().enumerate().find(|(pos, slot)| pos != *slot) {
                bail!("problem '{id}' is missing slot {pos} (next present slot is {slot})");
            }
            exec_map.insert(id, slots.into_values().collect());
        }
        let consensus: BTreeMap<String, ConsensusResult> = self
            .votes(votes)?
            .unwrap_or_default()
            .into_iter()
            .map(|v| (v.problem_id, v.consensus))
            .collect();

        let ks = if !ks.is_empty() {
            ks
        } else if !self.cfg.eval.ks.is_empty() {
            self.cfg.eval.ks.clone()
        } else {
            default_ks(&problems, &exec_map)
        };
        let report = build_report(&problems, &exec_map, &consensus, &ks, &self.cfg.tolerance)?;
        print!("{}", report.render_table());
        if let Some(out) = &self.common.out {
            let mut json = serde_json::to_string_pretty(&report)?;
            json.push('\n');
            std::fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
        }
        Ok(())
    }

    fn toy(&self, sweep: Vec<usize>) -> Result<()> {
        let task = ToyTask::reference();
        let train = ToyTrainConfig {
            grpo: self.cfg.grpo,
            learning_rate: self.cfg.toy.learning_rate,
            steps: self.cfg.toy.steps,
            questions_per_step: self.cfg.toy.questions_per_step,
            updates_per_batch: self.cfg.toy.updates_per_batch,
            seed: self.cfg.seed,
        };
        let policy = sft_policy(&task, &self.cfg.toy.sft, self.cfg.seed)?;

        let out = self.common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_TOY_METRICS));
        let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
        let mut sink = CsvSink::new(BufWriter::new(file))?;
        let run = tgrpo_train(&policy, &task, &train, &mut sink)?;
        sink.into_inner()?.flush()?;
        println!("{}", summary(&run.metrics, train.grpo.group_size));

        let sizes = if sweep.is_empty() { self.cfg.toy.sweep_sizes.clone() } else { sweep };
        if !sizes.is_empty() {
            println!("subset_size,pass_at_1");
            for row in data_scale_sweep(&policy, &task, &train, &sizes)? {
                println!("{},{}", row.subset_size, row.pass_at_1);
            }
        }
        Ok(())
    }
}

/// Powers of two below the smallest group size, then the size itself.
fn default_ks(problems: &[Problem], exec: &BTreeMap<String, Vec<ExecOutcome>>) -> Vec<usize> {
    let smallest = problems
        .iter()
        .filter(|p| p.ground_truth.is_some())
        .filter_map(|p| exec.get(&p.id).map(Vec::len))
        .filter(|n| *n > 0)
        .min()
        .unwrap_or(1);
    let mut ks: Vec<usize> = std::iter::successors(Some(1usize), |k| Some(k * 2))
        .take_while(|k| *k < smallest)
        .collect();
    ks.push(smallest);
    ks
}

fn summary(metrics: &[StepMetrics], g: usize) -> String {
    let first = metrics.first().expect("step-0 row");
    let last = metrics.last().expect("step-0 row");
    let gap0 = first.pass_at_g - first.pass_at_1;
    let gap1 = last.pass_at_g - last.pass_at_1;
    let reduction = if gap0 > 0.0 { (gap0 - gap1) / gap0 } else { 0.0 };
    format!(
        "steps={} pass@1 {:.4} -> {:.4}, pass@{g} {:.4} -> {:.4}, gap {:.4} -> {:.4} (reduction {:.1}%), mean voting reward {:.4} -> {:.4}",
        last.step,
        first.pass_at_1,
        last.pass_at_1,
        first.pass_at_g,
        last.pass_at_g,
        gap0,
        gap1,
        100.0 * reduction,
        first.mean_r_voting,
        last.mean_r_voting
    )
}
