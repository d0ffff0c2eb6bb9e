use rand::Rng;
use rand_xoshiro::SplitMix64;

use super::config::{DropSchedule, FixedDelay, FrameDrop, UniformPacketLoss};
use crate::dtls::{parse_records, DtlsRecord};
use crate::flowtable::FlowState;
use crate::packet::{DemuxClass, Packet, Verdict};
use crate::rtp::{is_video, parse_rtp, RtpHeader};

/// A packet together with what the censor could parse from it.
#[derive(Debug)]
pub struct PacketView<'a> {
    pub packet: &'a Packet,
    pub class: DemuxClass,
    /// Complete DTLS record parse of a UDP payload; `None` when the payload is
    /// not DTLS or did not parse cleanly.
    pub records: Option<Vec<DtlsRecord<'a>>>,
    pub rtp: Option<RtpHeader>,
    /// The payload looked like DTLS or RTP but failed to parse.
    pub parse_error: bool,
}

impl<'a> PacketView<'a> {
    pub fn new(packet: &'a Packet) -> Self {
        let class = if packet.is_udp() { packet.demux() } else { DemuxClass::Unknown };
        let mut view = PacketView { packet, class, records: None, rtp: None, parse_error: false };
        match class {
            DemuxClass::Dtls => {
                let parse = parse_records(packet.payload());
                if parse.is_complete() {
                    view.records = Some(parse.records);
                } else {
                    view.parse_error = true;
                }
            }
            DemuxClass::Rtp => match parse_rtp(packet.payload()) {
                Ok(h) => view.rtp = Some(h),
                Err(_) => view.parse_error = true,
            },
            _ => {}
        }
        view
    }

    pub fn has_application_data(&self) -> bool {
        self.records.as_ref().is_some_and(|rs| rs.iter().any(crate::dtls::is_application_data))
    }
}

/// Drop application_data records on flagged flows; everything else passes.
pub fn decide_data_channel_block(view: &PacketView<'_>, state: &FlowState) -> Verdict {
    if state.webrtc_flagged && view.has_application_data() {
        Verdict::Drop
    } else {
        Verdict::Pass
    }
}

/// What happened to a frame boundary inside [`decide_frame_drop`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameOutcome {
    /// A new frame began and a drop decision was drawn.
    Decided { dropped: bool },
    /// A new frame began whose start may have been missed; it passes.
    FailedOpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameDecision {
    pub verdict: Verdict,
    pub frame: Option<FrameOutcome>,
    /// An SSRC slot was evicted to make room for this packet's stream.
    pub slot_evicted: bool,
}

impl FrameDecision {
    const PASS: FrameDecision = FrameDecision { verdict: Verdict::Pass, frame: None, slot_evicted: false };
}

fn periodic_drop(frame_index: u64, rate: f64) -> bool {
    let k = frame_index as f64;
    ((k + 1.0) * rate).floor() > (k * rate).floor()
}

/// Whole-frame dropping. The decision is drawn once when a frame starts and
/// applies to every packet of that frame.
pub fn decide_frame_drop(view: &PacketView<'_>, state: &mut FlowState, cfg: &FrameDrop, rng_index: usize) -> FrameDecision {
    let Some(header) = view.rtp.as_ref() else {
        return FrameDecision::PASS;
    };
    if !is_video(header, &cfg.pt_set) || (cfg.require_webrtc_flag && !state.webrtc_flagged) {
        return FrameDecision::PASS;
    }
    let (slot_ref, rng) = state.slot_and_rng(header.ssrc, header.timestamp, rng_index);
    let slot = slot_ref.slot;
    let event = slot.tracker.frame_event(header, cfg.segmentation);
    let mut frame = None;
    if event.starts_frame {
        if slot_ref.created && slot.fail_open {
            slot.drop_current_frame = false;
            frame = Some(FrameOutcome::FailedOpen);
        } else {
            slot.fail_open = false;
            let dropped = match cfg.schedule {
                DropSchedule::Bernoulli => rng.random::<f64>() < cfg.rate,
                DropSchedule::Periodic => periodic_drop(u64::from(event.frame_ordinal), cfg.rate),
            };
            slot.drop_current_frame = dropped;
            frame = Some(FrameOutcome::Decided { dropped });
        }
    }
    let verdict = if slot.drop_current_frame { Verdict::Drop } else { Verdict::Pass };
    FrameDecision { verdict, frame, slot_evicted: slot_ref.evicted_other }
}

/// Independent per-packet loss.
pub fn decide_uniform_loss(rng: &mut SplitMix64, cfg: &UniformPacketLoss) -> Verdict {
    if rng.random::<f64>() < cfg.rate {
        Verdict::Drop
    } else {
        Verdict::Pass
    }
}

pub fn decide_fixed_delay(packet: &Packet, cfg: &FixedDelay) -> Verdict {
    match cfg.from {
        None => Verdict::Delay(cfg.delay_ms),
        Some(ip) if packet.flow.is_some_and(|f| f.src.ip() == ip) => Verdict::Delay(cfg.delay_ms),
        Some(_) => Verdict::Pass,
    }
}

/// Fold two verdicts: Drop dominates, delays add.
pub fn combine(acc: Verdict, next: Verdict) -> Verdict {
    match (acc, next) {
        (Verdict::Drop, _) | (_, Verdict::Drop) => Verdict::Drop,
        (Verdict::Delay(a), Verdict::Delay(b)) => Verdict::Delay(a.saturating_add(b)),
        (Verdict::Delay(d), Verdict::Pass) | (Verdict::Pass, Verdict::Delay(d)) => Verdict::Delay(d),
        (Verdict::Pass, Verdict::Pass) => Verdict::Pass,
    }
}

/// Evaluate verdicts in order, stopping at the first Drop.
pub fn compose<I: IntoIterator<Item = Verdict>>(verdicts: I) -> Verdict {
    let mut acc = Verdict::Pass;
    for v in verdicts {
        acc = combine(acc, v);
        if acc.is_drop() {
            break;
        }
    }
    acc
}
