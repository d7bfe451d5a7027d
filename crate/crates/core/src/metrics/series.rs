//! Per-packet QoS samples, jitter, and time-bucket aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bands::{classify_delay, classify_jitter, Band};
use super::emodel::{mos, EModelParams};
use crate::des::{SimDuration, SimTime};
use crate::voip::{CallId, Direction};

/// Delay contributed by each leg of a packet's path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DelayBreakdown {
    /// Queueing plus MAC service in the sender's subnet.
    pub source_mac: SimDuration,
    /// Backbone transit; zero for intra-subnet calls.
    pub cloud: SimDuration,
    /// Queueing plus MAC service in the receiver's subnet.
    pub destination_mac: SimDuration,
}

impl DelayBreakdown {
    pub fn network_total(&self) -> SimDuration {
        self.source_mac + self.cloud + self.destination_mac
    }
}

/// One received voice packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosSample {
    pub call: CallId,
    pub direction: Direction,
    pub seq: u32,
    /// Encode completion time at the speaker.
    pub send_ts: SimTime,
    /// Delivery time at the listener's network interface.
    pub arrival_ts: SimTime,
    /// Speaker-to-listener delay including the codec stages.
    pub e2e: SimDuration,
    pub breakdown: DelayBreakdown,
    /// Signed jitter against the previous packet of the same direction, in
    /// microseconds. `None` for the first packet and after a loss gap.
    pub jitter_us: Option<i64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossCause {
    RetryLimit,
    QueueOverflow,
    /// Arrived after its playout deadline.
    Late,
    /// Still in flight when the run was finalized.
    Unfinished,
    /// Reached a failed node.
    NodeDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossRecord {
    pub call: CallId,
    pub direction: Direction,
    pub seq: u32,
    pub send_ts: SimTime,
    pub cause: LossCause,
}

/// Jitter between two packets of one direction, or `None` when `cur` does
/// not immediately follow `prev` in send order (a loss gap is not bridged).
pub fn jitter_sample(prev: &QosSample, cur: &QosSample) -> Option<i64> {
    if cur.seq != prev.seq.wrapping_add(1) {
        return None;
    }
    let arrival_gap = cur.arrival_ts.as_micros() as i64 - prev.arrival_ts.as_micros() as i64;
    let send_gap = cur.send_ts.as_micros() as i64 - prev.send_ts.as_micros() as i64;
    Some(arrival_gap - send_gap)
}

/// Rounds to six significant digits, the precision of every reported metric.
pub fn round_sig6(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().expect("formatted float parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MosMode {
    /// MOS of the bucket's mean delay and loss fraction.
    #[default]
    BucketAggregate,
    /// Mean of per-packet MOS, each using the packet's delay and the bucket loss.
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateOptions {
    pub mos_mode: MosMode,
    pub emodel: EModelParams,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            mos_mode: MosMode::BucketAggregate,
            emodel: EModelParams::G711,
        }
    }
}

/// Additive per-bucket totals. Merging two sets of sums equals summing the
/// union of their inputs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BucketSums {
    pub n_samples: u64,
    pub delay_sum_us: u64,
    pub n_jitter: u64,
    pub abs_jitter_sum_us: u64,
    pub lost: u64,
    delays_us: Vec<u64>,
}

impl BucketSums {
    fn merge(&mut self, other: &BucketSums) {
        self.n_samples += other.n_samples;
        self.delay_sum_us += other.delay_sum_us;
        self.n_jitter += other.n_jitter;
        self.abs_jitter_sum_us += other.abs_jitter_sum_us;
        self.lost += other.lost;
        self.delays_us.extend_from_slice(&other.delays_us);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeriesAccumulator {
    width: SimDuration,
    keep_delays: bool,
    buckets: BTreeMap<u64, BucketSums>,
}

impl SeriesAccumulator {
    pub fn new(width: SimDuration, mos_mode: MosMode) -> Self {
        assert!(!width.is_zero(), "bucket width must be positive");
        SeriesAccumulator {
            width,
            keep_delays: mos_mode == MosMode::PerSample,
            buckets: BTreeMap::new(),
        }
    }

    fn index(&self, t: SimTime) -> u64 {
        t.as_micros() / self.width.as_micros()
    }

    pub fn add_sample(&mut self, s: &QosSample) {
        let keep = self.keep_delays;
        let b = self.buckets.entry(self.index(s.send_ts)).or_default();
        b.n_samples += 1;
        b.delay_sum_us += s.e2e.as_micros();
        if keep {
            b.delays_us.push(s.e2e.as_micros());
        }
        if let Some(j) = s.jitter_us {
            b.n_jitter += 1;
            b.abs_jitter_sum_us += j.unsigned_abs();
        }
    }

    pub fn add_loss(&mut self, l: &LossRecord) {
        self.buckets.entry(self.index(l.send_ts)).or_default().lost += 1;
    }

    pub fn merge(&mut self, other: &SeriesAccumulator) {
        assert_eq!(
            self.width, other.width,
            "merging accumulators of different widths"
        );
        for (k, v) in &other.buckets {
            self.buckets.entry(*k).or_default().merge(v);
        }
    }

    pub fn sums(&self) -> impl Iterator<Item = (u64, &BucketSums)> {
        self.buckets.iter().map(|(k, v)| (*k, v))
    }

    pub fn finish(&self, opts: &AggregateOptions) -> MetricSeries {
        let buckets = self
            .buckets
            .iter()
            .filter(|(_, b)| b.n_samples > 0)
            .map(|(&idx, b)| {
                let mean_delay_ms = b.delay_sum_us as f64 / b.n_samples as f64 / 1e3;
                let mean_jitter_ms = if b.n_jitter == 0 {
                    0.0
                } else {
                    b.abs_jitter_sum_us as f64 / b.n_jitter as f64 / 1e3
                };
                let loss_frac = b.lost as f64 / (b.lost + b.n_samples) as f64;
                let mean_mos = match opts.mos_mode {
                    MosMode::BucketAggregate => mos(mean_delay_ms, loss_frac, &opts.emodel),
                    MosMode::PerSample => {
                        b.delays_us
                            .iter()
                            .map(|&d| mos(d as f64 / 1e3, loss_frac, &opts.emodel))
                            .sum::<f64>()
                            / b.delays_us.len() as f64
                    }
                };
                BucketStats {
                    bucket_start_s: round_sig6((idx * self.width.as_micros()) as f64 / 1e6),
                    n_samples: b.n_samples,
                    mean_jitter_ms: round_sig6(mean_jitter_ms),
                    mean_delay_ms: round_sig6(mean_delay_ms),
                    loss_frac: round_sig6(loss_frac),
                    mean_mos: round_sig6(mean_mos),
                    delay_band: classify_delay(mean_delay_ms).expect("mean delay is non-negative"),
                    jitter_band: classify_jitter(mean_jitter_ms)
                        .expect("mean |jitter| is non-negative"),
                }
            })
            .collect();
        MetricSeries {
            bucket_width_s: self.width.as_secs_f64(),
            buckets,
        }
    }
}

/// Aggregated metrics for one time bucket. Values carry six significant digits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub bucket_start_s: f64,
    pub n_samples: u64,
    /// Mean of absolute jitter samples.
    pub mean_jitter_ms: f64,
    pub mean_delay_ms: f64,
    pub loss_frac: f64,
    pub mean_mos: f64,
    pub delay_band: Band,
    pub jitter_band: Band,
}

/// Time-bucketed metrics. Buckets without samples are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub bucket_width_s: f64,
    pub buckets: Vec<BucketStats>,
}

impl MetricSeries {
    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    /// Mean of the per-bucket MOS values.
    pub fn average_mos(&self) -> Option<f64> {
        if self.buckets.is_empty() {
            return None;
        }
        Some(self.buckets.iter().map(|b| b.mean_mos).sum::<f64>() / self.buckets.len() as f64)
    }
}

/// Buckets samples and losses by send time.
pub fn bucket_aggregate(
    samples: &[QosSample],
    losses: &[LossRecord],
    width: SimDuration,
    opts: &AggregateOptions,
) -> MetricSeries {
    let mut acc = SeriesAccumulator::new(width, opts.mos_mode);
    for s in samples {
        acc.add_sample(s);
    }
    for l in losses {
        acc.add_loss(l);
    }
    acc.finish(opts)
}
