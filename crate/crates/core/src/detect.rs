//! Frame-size distinguisher: a genuine adaptive video stream shrinks its
//! frames when a frame-loss attack starts; a non-adaptive tunnel does not.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::io::Trace;
use crate::packet::{FlowKey, Timestamp};
use crate::rtp::{is_video, parse_rtp, FrameTracker, Segmentation, VideoPtSet};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectError {
    #[error("baseline mean frame size is zero")]
    ZeroBaselineMean,
    #[error("invalid detector configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub pt_set: VideoPtSet,
    pub segmentation: Segmentation,
    pub bin_width_bytes: u64,
    pub range_max_bytes: u64,
    pub min_frames: u64,
    pub threshold: f64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            pt_set: VideoPtSet::default(),
            segmentation: Segmentation::default(),
            bin_width_bytes: 500,
            range_max_bytes: 50_000,
            min_frames: 50,
            threshold: 0.20,
        }
    }
}

impl DetectConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.bin_width_bytes == 0 || self.range_max_bytes < self.bin_width_bytes {
            return Err(DetectError::Config("histogram bins must be non-empty".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(DetectError::Config(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_bytes: u64,
    pub counts: Vec<u64>,
    /// Frames at or above the histogram range.
    pub overflow: u64,
}

impl Histogram {
    pub fn new(bin_width_bytes: u64, range_max_bytes: u64) -> Self {
        Histogram { bin_width_bytes, counts: vec![0; range_max_bytes.div_ceil(bin_width_bytes) as usize], overflow: 0 }
    }

    pub fn add(&mut self, size: u64) {
        match self.counts.get_mut((size / self.bin_width_bytes) as usize) {
            Some(c) => *c += 1,
            None => self.overflow += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSizeStats {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowKey>,
    pub ssrc: u32,
    pub frame_count: u64,
    pub mean_frame_bytes: f64,
    pub stdev_frame_bytes: f64,
    pub histogram: Histogram,
}

impl FrameSizeStats {
    /// Statistics over per-frame sizes (sample standard deviation).
    pub fn from_sizes(flow: Option<FlowKey>, ssrc: u32, sizes: &[u64], cfg: &DetectConfig) -> Self {
        let n = sizes.len() as f64;
        let mean = if sizes.is_empty() { 0.0 } else { sizes.iter().map(|&s| s as f64).sum::<f64>() / n };
        let stdev = if sizes.len() < 2 {
            0.0
        } else {
            (sizes.iter().map(|&s| (s as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        let mut histogram = Histogram::new(cfg.bin_width_bytes, cfg.range_max_bytes);
        for &s in sizes {
            histogram.add(s);
        }
        FrameSizeStats { flow, ssrc, frame_count: sizes.len() as u64, mean_frame_bytes: mean, stdev_frame_bytes: stdev, histogram }
    }
}

/// Per-frame sizes of one RTP video stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamFrames {
    pub flow: FlowKey,
    pub ssrc: u32,
    pub frame_bytes: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrameSeries {
    pub streams: Vec<StreamFrames>,
    /// RTP-looking packets that failed to parse.
    pub skipped_packets: u64,
}

#[derive(Default)]
struct Open {
    tracker: FrameTracker,
    bytes: u64,
    open: bool,
    sizes: Vec<u64>,
}

/// Assemble frames per (flow, ssrc) and record each completed frame's size,
/// the sum of RTP payload lengths of its observed packets. Frames whose end
/// was never seen are left out.
pub fn frame_series(trace: &Trace, cfg: &DetectConfig, window: Option<(Timestamp, Timestamp)>) -> FrameSeries {
    let mut streams: BTreeMap<(FlowKey, u32), Open> = BTreeMap::new();
    let mut skipped = 0;
    for p in &trace.packets {
        if let Some((from, to)) = window {
            if p.timestamp < from || p.timestamp >= to {
                continue;
            }
        }
        let Some(flow) = p.flow else { continue };
        if p.demux() != crate::packet::DemuxClass::Rtp {
            continue;
        }
        let Ok(h) = parse_rtp(p.payload()) else {
            skipped += 1;
            continue;
        };
        if !is_video(&h, &cfg.pt_set) {
            continue;
        }
        let s = streams.entry((flow, h.ssrc)).or_default();
        let ev = s.tracker.frame_event(&h, cfg.segmentation);
        if ev.starts_frame {
            s.bytes = 0;
            s.open = true;
        }
        s.bytes += h.payload_length as u64;
        if h.marker && s.open {
            s.sizes.push(s.bytes);
            s.open = false;
        }
    }
    FrameSeries {
        streams: streams.into_iter().map(|((flow, ssrc), o)| StreamFrames { flow, ssrc, frame_bytes: o.sizes }).collect(),
        skipped_packets: skipped,
    }
}

/// Per-stream frame-size statistics of a trace.
pub fn frame_sizes(trace: &Trace, cfg: &DetectConfig) -> Vec<FrameSizeStats> {
    frame_series(trace, cfg, None)
        .streams
        .iter()
        .map(|s| FrameSizeStats::from_sizes(Some(s.flow), s.ssrc, &s.frame_bytes, cfg))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Adaptive,
    NonAdaptive,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguisherVerdict {
    pub label: Label,
    /// `1 - mean_under_attack / mean_baseline`; absent when inconclusive.
    pub reduction_fraction: Option<f64>,
    /// (baseline, under attack)
    pub frames_observed: (u64, u64),
}

pub fn distinguish(baseline: &FrameSizeStats, under_attack: &FrameSizeStats, cfg: &DetectConfig) -> Result<DistinguisherVerdict, DetectError> {
    let frames_observed = (baseline.frame_count, under_attack.frame_count);
    if baseline.frame_count < cfg.min_frames || under_attack.frame_count < cfg.min_frames {
        return Ok(DistinguisherVerdict { label: Label::Inconclusive, reduction_fraction: None, frames_observed });
    }
    if baseline.mean_frame_bytes <= 0.0 {
        return Err(DetectError::ZeroBaselineMean);
    }
    let reduction = 1.0 - under_attack.mean_frame_bytes / baseline.mean_frame_bytes;
    let label = if reduction >= cfg.threshold { Label::Adaptive } else { Label::NonAdaptive };
    Ok(DistinguisherVerdict { label, reduction_fraction: Some(reduction), frames_observed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamVerdict {
    pub flow: FlowKey,
    pub ssrc: u32,
    pub verdict: DistinguisherVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorReport {
    pub baseline: Vec<FrameSizeStats>,
    pub under_attack: Vec<FrameSizeStats>,
    pub verdicts: Vec<StreamVerdict>,
    pub skipped_packets: u64,
}

/// Pair streams by (flow, ssrc) across the two phases and classify each.
/// Streams present in only one phase are reported as inconclusive.
pub fn detect_phases(baseline: &FrameSeries, under_attack: &FrameSeries, cfg: &DetectConfig) -> Result<DetectorReport, DetectError> {
    cfg.validate()?;
    let stats = |series: &FrameSeries| -> BTreeMap<(FlowKey, u32), FrameSizeStats> {
        series
            .streams
            .iter()
            .map(|s| ((s.flow, s.ssrc), FrameSizeStats::from_sizes(Some(s.flow), s.ssrc, &s.frame_bytes, cfg)))
            .collect()
    };
    let b = stats(baseline);
    let a = stats(under_attack);
    let mut verdicts = Vec::new();
    let keys: std::collections::BTreeSet<_> = b.keys().chain(a.keys()).copied().collect();
    for key in keys {
        let empty = FrameSizeStats::from_sizes(Some(key.0), key.1, &[], cfg);
        let bs = b.get(&key).unwrap_or(&empty);
        let at = a.get(&key).unwrap_or(&empty);
        verdicts.push(StreamVerdict { flow: key.0, ssrc: key.1, verdict: distinguish(bs, at, cfg)? });
    }
    Ok(DetectorReport {
        baseline: b.into_values().collect(),
        under_attack: a.into_values().collect(),
        verdicts,
        skipped_packets: baseline.skipped_packets + under_attack.skipped_packets,
    })
}

/// Split one trace at `split` into baseline (before) and under-attack
/// (from `split` on) phases and classify every stream.
pub fn detect_split(trace: &Trace, split: Timestamp, cfg: &DetectConfig) -> Result<DetectorReport, DetectError> {
    let end = Timestamp::from_micros(u64::MAX);
    let b = frame_series(trace, cfg, Some((Timestamp::ZERO, split)));
    let a = frame_series(trace, cfg, Some((split, end)));
    detect_phases(&b, &a, cfg)
}

/// CSV of per-frame sizes: `flow,ssrc,frame_index,frame_bytes`.
pub fn frames_csv(series: &FrameSeries) -> String {
    let mut out = String::from("flow,ssrc,frame_index,frame_bytes\n");
    for s in &series.streams {
        for (i, b) in s.frame_bytes.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", s.flow, s.ssrc, i, b));
        }
    }
    out
}
