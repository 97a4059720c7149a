pub mod baselines;
pub mod classify;
pub mod metrics;
pub mod probe;
pub mod report;

pub use baselines::{static_gaze_baseline, static_saliency_baseline};
pub use classify::{confusion_matrix, macro_prf, ClassReport, ClassScore};
pub use metrics::{metric_auc_judd, metric_cc, metric_kld, metric_nss, metric_sim};
pub use probe::{
    probe_features, probe_features_all, probe_sweep, softmax_regression_fit, ProbeConfig,
    ProbeLayerReport, SoftmaxModel,
};
pub use report::{
    evaluate_attention, evaluate_classifier, fixation_cells, predict_gaze, predict_saliency,
    target_at_head, AttnEvalReport, AttnPredictor, AttnTask, MetricSummary, SaliencyMetrics,
};
