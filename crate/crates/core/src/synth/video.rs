//! RTP video sources: fixed-profile (non-adaptive) and ladder-switching
//! (adaptive) frame generators.

use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::net::LinkType;
use crate::packet::{FlowKey, Packet, Timestamp};
use crate::rtp::RtpHeader;

/// Mean frame size of the full-HD profile: 151.0 KB/s at 24 fps, rounded.
pub const FULL_HD_MEAN_FRAME_BYTES: u32 = 6300;
pub const DEFAULT_FPS: f64 = 24.0;
pub const RTP_VIDEO_CLOCK_HZ: u32 = 90_000;
/// Spacing of packets inside one frame.
const PACKET_SPACING_US: u64 = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolutionProfile {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub mean_frame_bytes: u32,
    pub frame_bytes_stdev: u32,
    pub fps: f64,
}

impl ResolutionProfile {
    /// Profile scaled from the full-HD mean by pixel count; stdev is a
    /// quarter of the mean.
    pub fn scaled(name: &str, width: u32, height: u32) -> Self {
        let ratio = f64::from(width * height) / f64::from(1920 * 1080);
        let mean = (f64::from(FULL_HD_MEAN_FRAME_BYTES) * ratio).round() as u32;
        ResolutionProfile {
            name: name.to_owned(),
            width,
            height,
            mean_frame_bytes: mean,
            frame_bytes_stdev: (f64::from(mean) / 4.0).round() as u32,
            fps: DEFAULT_FPS,
        }
    }

    pub fn validate(&self, path: &str) -> Result<(), SynthError> {
        if self.mean_frame_bytes == 0 {
            return Err(SynthError::invalid(format!("{path}.mean_frame_bytes"), "must be > 0"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(SynthError::invalid(format!("{path}.fps"), "must be > 0"));
        }
        Ok(())
    }
}

/// Built-in ladder, largest first.
pub fn default_profiles() -> Vec<ResolutionProfile> {
    vec![
        ResolutionProfile::scaled("1080p", 1920, 1080),
        ResolutionProfile::scaled("720p", 1280, 720),
        ResolutionProfile::scaled("540p", 960, 540),
        ResolutionProfile::scaled("360p", 640, 360),
        ResolutionProfile::scaled("240p", 426, 240),
        ResolutionProfile::scaled("180p", 320, 180),
    ]
}

pub fn default_profile(name: &str) -> Option<ResolutionProfile> {
    default_profiles().into_iter().find(|p| p.name == name)
}

fn default_threshold() -> f64 {
    0.10
}

fn default_window() -> f64 {
    1.0
}

fn default_clean_windows() -> u32 {
    2
}

fn full_hd() -> ResolutionProfile {
    default_profile("1080p").expect("built in")
}

fn default_ladder() -> Vec<ResolutionProfile> {
    vec![full_hd(), default_profile("540p").expect("built in")]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceModel {
    /// Steps one rung down the ladder when a window's frame loss reaches the
    /// threshold, one rung up after `upshift_clean_windows` windows below it.
    Adaptive {
        #[serde(default = "default_ladder")]
        ladder: Vec<ResolutionProfile>,
        #[serde(default = "default_threshold")]
        downshift_loss_threshold: f64,
        #[serde(default = "default_window")]
        window_s: f64,
        #[serde(default = "default_clean_windows")]
        upshift_clean_windows: u32,
    },
    /// Fixed profile regardless of loss.
    NonAdaptive {
        #[serde(default = "full_hd")]
        profile: ResolutionProfile,
    },
}

impl SourceModel {
    /// 1080p/540p ladder with the default controller.
    pub fn default_adaptive() -> Self {
        SourceModel::Adaptive {
            ladder: default_ladder(),
            downshift_loss_threshold: default_threshold(),
            window_s: default_window(),
            upshift_clean_windows: default_clean_windows(),
        }
    }

    pub fn default_non_adaptive() -> Self {
        SourceModel::NonAdaptive { profile: full_hd() }
    }

    pub fn validate(&self, path: &str) -> Result<(), SynthError> {
        match self {
            SourceModel::Adaptive { ladder, downshift_loss_threshold, window_s, upshift_clean_windows } => {
                if ladder.len() < 2 {
                    return Err(SynthError::invalid(format!("{path}.ladder"), "needs at least 2 profiles"));
                }
                for (i, p) in ladder.iter().enumerate() {
                    p.validate(&format!("{path}.ladder[{i}]"))?;
                }
                if ladder.windows(2).any(|w| w[0].mean_frame_bytes < w[1].mean_frame_bytes) {
                    return Err(SynthError::invalid(format!("{path}.ladder"), "must be ordered by mean_frame_bytes descending"));
                }
                if !(*downshift_loss_threshold > 0.0 && *downshift_loss_threshold < 1.0) {
                    return Err(SynthError::invalid(format!("{path}.downshift_loss_threshold"), "must be in (0, 1)"));
                }
                if !(window_s.is_finite() && *window_s > 0.0) {
                    return Err(SynthError::invalid(format!("{path}.window_s"), "must be > 0"));
                }
                if *upshift_clean_windows == 0 {
                    return Err(SynthError::invalid(format!("{path}.upshift_clean_windows"), "must be >= 1"));
                }
                Ok(())
            }
            SourceModel::NonAdaptive { profile } => profile.validate(&format!("{path}.profile")),
        }
    }

    fn window_s(&self) -> f64 {
        match self {
            SourceModel::Adaptive { window_s, .. } => *window_s,
            SourceModel::NonAdaptive { .. } => 1.0,
        }
    }

    fn profiles(&self) -> &[ResolutionProfile] {
        match self {
            SourceModel::Adaptive { ladder, .. } => ladder,
            SourceModel::NonAdaptive { profile } => std::slice::from_ref(profile),
        }
    }
}

/// Every `every`-th frame (starting with the first) is `factor` times larger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyframeSpikes {
    pub every: u32,
    pub factor: f64,
}

fn default_pt() -> u8 {
    102
}

fn default_mtu() -> usize {
    1200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub ssrc: u32,
    #[serde(default = "default_pt")]
    pub payload_type: u8,
    #[serde(default = "default_mtu")]
    pub mtu_payload_bytes: usize,
    pub duration_s: f64,
    pub seed: u64,
    /// Capture time of the first frame, in microseconds.
    #[serde(default)]
    pub start_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keyframes: Option<KeyframeSpikes>,
}

impl StreamSpec {
    pub fn new(ssrc: u32, duration_s: f64, seed: u64) -> Self {
        StreamSpec { ssrc, payload_type: 102, mtu_payload_bytes: 1200, duration_s, seed, start_us: 0, keyframes: None }
    }

    pub fn validate(&self, path: &str) -> Result<(), SynthError> {
        if self.payload_type > 127 {
            return Err(SynthError::invalid(format!("{path}.payload_type"), "must fit in 7 bits"));
        }
        if self.mtu_payload_bytes < 64 {
            return Err(SynthError::invalid(format!("{path}.mtu_payload_bytes"), "must be >= 64"));
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(SynthError::invalid(format!("{path}.duration_s"), "must be >= 0"));
        }
        if let Some(k) = self.keyframes {
            if k.every == 0 || !(k.factor.is_finite() && k.factor > 0.0) {
                return Err(SynthError::invalid(format!("{path}.keyframes"), "every must be >= 1 and factor > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedFrame {
    pub index: u64,
    /// Index into the model's profile list.
    pub rung: usize,
    pub capture_time: Timestamp,
    pub rtp_timestamp: u32,
    pub size_bytes: usize,
    pub packets: Vec<Packet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub index: u64,
    pub start: Timestamp,
    pub rung: usize,
    pub frames: Vec<GeneratedFrame>,
}

/// Stateful video source, driven window by window.
#[derive(Debug, Clone)]
pub struct VideoSource {
    model: SourceModel,
    spec: StreamSpec,
    flow: FlowKey,
    link: LinkType,
    rng: Xoshiro256PlusPlus,
    rung: usize,
    clean_windows: u32,
    window_index: u64,
    frame_index: u64,
    seq: u16,
    /// Frames emitted at the current rung's fps since `segment_start_us`.
    segment_frames: u64,
    segment_start_us: f64,
    segment_fps: f64,
    end_us: f64,
}

impl VideoSource {
    pub fn new(model: SourceModel, spec: StreamSpec, flow: FlowKey) -> Result<Self, SynthError> {
        model.validate("model")?;
        spec.validate("stream")?;
        let fps = model.profiles()[0].fps;
        let start = spec.start_us as f64;
        Ok(VideoSource {
            rng: Xoshiro256PlusPlus::seed_from_u64(spec.seed),
            end_us: start + spec.duration_s * 1e6,
            segment_start_us: start,
            segment_fps: fps,
            seq: (spec.seed >> 16) as u16,
            model,
            spec,
            flow,
            link: LinkType::Ethernet,
            rung: 0,
            clean_windows: 0,
            window_index: 0,
            frame_index: 0,
            segment_frames: 0,
        })
    }

    pub fn with_link(mut self, link: LinkType) -> Self {
        self.link = link;
        self
    }

    pub fn profile(&self) -> &ResolutionProfile {
        &self.model.profiles()[self.rung]
    }

    pub fn rung(&self) -> usize {
        self.rung
    }

    pub fn model(&self) -> &SourceModel {
        &self.model
    }

    pub fn is_done(&self) -> bool {
        self.next_frame_us() >= self.end_us
    }

    fn next_frame_us(&self) -> f64 {
        self.segment_start_us + (self.segment_frames as f64 * 1e6) / self.segment_fps
    }

    fn draw_size(&mut self) -> usize {
        let p = &self.model.profiles()[self.rung];
        let mean = f64::from(p.mean_frame_bytes);
        let mut size = if p.frame_bytes_stdev == 0 {
            mean
        } else {
            let normal = Normal::new(mean, f64::from(p.frame_bytes_stdev)).expect("finite parameters");
            // truncated at one byte by resampling
            let mut x = normal.sample(&mut self.rng);
            let mut tries = 0;
            while x < 1.0 && tries < 64 {
                x = normal.sample(&mut self.rng);
                tries += 1;
            }
            x
        };
        if let Some(k) = self.spec.keyframes {
            if self.frame_index % u64::from(k.every) == 0 {
                size *= k.factor;
            }
        }
        size.round().max(1.0) as usize
    }

    fn frame(&mut self) -> GeneratedFrame {
        let t_us = self.next_frame_us();
        let capture_time = Timestamp::from_micros(t_us.round() as u64);
        let rel_s = (t_us - self.spec.start_us as f64) / 1e6;
        let rtp_timestamp = ((rel_s * f64::from(RTP_VIDEO_CLOCK_HZ)).round() as u64 as u32).wrapping_add(self.spec.seed as u32);
        let size = self.draw_size();
        let mtu = self.spec.mtu_payload_bytes;
        let n = size.div_ceil(mtu);
        let fill = (self.frame_index as u8).wrapping_mul(31);
        let mut packets = Vec::with_capacity(n);
        let mut payload = vec![fill; mtu];
        for i in 0..n {
            let len = if i + 1 == n { size - mtu * (n - 1) } else { mtu };
            payload.resize(len, fill);
            let h = RtpHeader::new(self.spec.payload_type, self.seq, rtp_timestamp, self.spec.ssrc, i + 1 == n, len);
            self.seq = self.seq.wrapping_add(1);
            let ts = capture_time.plus_micros(i as u64 * PACKET_SPACING_US);
            packets.push(Packet::udp(self.link, ts, self.flow, &h.to_packet(&payload)));
        }
        let f = GeneratedFrame { index: self.frame_index, rung: self.rung, capture_time, rtp_timestamp, size_bytes: size, packets };
        self.frame_index += 1;
        self.segment_frames += 1;
        f
    }

    /// Frames of the next window, or `None` once the duration is exhausted.
    pub fn next_window(&mut self) -> Option<Window> {
        if self.is_done() {
            return None;
        }
        let window_us = self.model.window_s() * 1e6;
        let start_us = self.spec.start_us as f64 + self.window_index as f64 * window_us;
        let end_us = (start_us + window_us).min(self.end_us);
        let mut frames = Vec::new();
        while self.next_frame_us() < end_us {
            frames.push(self.frame());
        }
        let w = Window { index: self.window_index, start: Timestamp::from_micros(start_us.round() as u64), rung: self.rung, frames };
        self.window_index += 1;
        Some(w)
    }

    /// Apply the frame loss observed over the last window.
    pub fn feedback(&mut self, frame_loss: f64) {
        let SourceModel::Adaptive { ladder, downshift_loss_threshold, upshift_clean_windows, .. } = &self.model else {
            return;
        };
        let old = self.rung;
        if frame_loss >= *downshift_loss_threshold {
            self.clean_windows = 0;
            self.rung = (self.rung + 1).min(ladder.len() - 1);
        } else {
            self.clean_windows += 1;
            if self.clean_windows >= *upshift_clean_windows && self.rung > 0 {
                self.rung -= 1;
                self.clean_windows = 0;
            }
        }
        if self.rung != old {
            let fps = self.model.profiles()[self.rung].fps;
            if fps != self.segment_fps {
                self.segment_start_us = self.next_frame_us();
                self.segment_frames = 0;
                self.segment_fps = fps;
            }
        }
    }
}

/// Generate a whole stream. `loss_feedback` is called after every window and
/// returns the frame loss the source should react to.
pub fn gen_video_stream<F>(model: SourceModel, spec: StreamSpec, flow: FlowKey, mut loss_feedback: F) -> Result<Vec<Packet>, SynthError>
where
    F: FnMut(&Window) -> f64,
{
    let mut src = VideoSource::new(model, spec, flow)?;
    let mut out = Vec::new();
    while let Some(w) = src.next_window() {
        let loss = loss_feedback(&w);
        src.feedback(loss);
        out.extend(w.frames.into_iter().flat_map(|f| f.packets));
    }
    Ok(out)
}

/// Constant small-packet audio stream (payload type 111, 50 packets/s).
pub fn gen_audio_stream(flow: FlowKey, ssrc: u32, duration_s: f64, start: Timestamp) -> Vec<Packet> {
    let count = (duration_s * 50.0).floor() as u64;
    (0..count)
        .map(|i| {
            let h = RtpHeader::new(111, i as u16, (i * 960) as u32, ssrc, i == 0, 80);
            Packet::udp(LinkType::Ethernet, start.plus_micros(i * 20_000 + 7), flow, &h.to_packet(&[0x33; 80]))
        })
        .collect()
}
