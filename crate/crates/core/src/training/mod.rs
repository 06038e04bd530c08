//! Self-supervised training: loss recording, data collection, the
//! optimizer loop and regret evaluation.

mod ablation;
mod dataset;
mod gradcheck;
mod loss;
mod optim;
mod regret;
mod train;

pub use ablation::{ablate_ppe, AblationReport, ArmReport, ABLATION_HEADER, PROBE_ORDER};
pub use dataset::{collect_dataset, CollectConfig, CollectStats, Dataset, DatasetSample, DATASET_MAGIC};
pub use gradcheck::{
    shift_off_kinks, tiny_end_to_end, tiny_end_to_end_coordinates, CheckScene, CHECK_LAMBDA_SAFE, TINY_CHECK_SEED,
};
pub use loss::{record_sample_loss, sample_loss, LossParts, SampleLoss};
pub use optim::Adam;
pub use regret::{evaluate_frames, evaluate_regret, regret_stats, FrameEval, RegretStats};
pub use train::{dataset_loss, loss_curve_csv, train, LossRecord, TrainConfig, TrainOutcome, LOSS_CURVE_HEADER};
