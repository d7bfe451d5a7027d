//! QoS measurement: jitter and delay samples, E-model scoring, quality bands
//! and time-bucket aggregation.

mod bands;
mod emodel;
mod series;

pub use bands::{
    classify_delay, classify_jitter, mos_label, Band, BandLimits, ClassifyError, MosLabel,
};
pub use emodel::{
    delay_impairment, e_model_r, effective_equipment_impairment, mos, mos_from_r, EModelParams,
};
pub use series::{
    bucket_aggregate, jitter_sample, round_sig6, AggregateOptions, BucketStats, BucketSums,
    DelayBreakdown, LossCause, LossRecord, MetricSeries, MosMode, QosSample, SeriesAccumulator,
};
