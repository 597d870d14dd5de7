//! A desk-scale closed loop: supervised warm-up, then group-relative policy
//! optimization with majority-vote rewards, on a tabular policy whose
//! completions are rendered to text and scored by the real reward engine.

mod policy;
mod task;
mod train;

pub use policy::{
    answer_value, render, sample_group, sft_loss, sft_train, toy_execute, ToyOutput, ToyPolicy, FORMAT_EMIT,
    FORMAT_OMIT,
};
pub use task::ToyTask;
pub use train::{
    data_scale_sweep, sft_dataset, sft_policy, tgrpo_train, CsvSink, MetricsSink, NullSink, SftConfig, StepMetrics,
    SweepRow, ToyTrainConfig, TrainOutcome, METRICS_HEADER,
};
