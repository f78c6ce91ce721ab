//! ICM-Hard and F1 metrics, per-language reports, and the joint-vs-separate,
//! rank and lambda ablation harnesses.

mod ablation;
mod f1;
mod icm;
mod report;

pub use ablation::{
    ablate_joint_vs_separate, ablate_lambda, ablate_rank, efficiency_report, level_macro_f1, run_pipeline,
    EfficiencyReport, JointReport, JointRow, JointSeedRow, LambdaReport, LambdaRow, PipelineSetup, RankReport, RankRow,
    TrainedPipeline,
};
pub use f1::{f1_scores, ClassScore, F1Report};
pub use icm::{icm, icm_dataset, icm_with_stats, task_set, GoldStats, IcmConfig, LabelSet};
pub use report::{align, evaluate_predictions, GroupScores, Metric, MetricReport, SubtaskScores};
