//! Contract between the censor and a host packet-verdict facility (a kernel
//! queue, a userspace switch, a test harness). Platform bindings implement
//! [`HostHook`]; the adapter owns the decision path.

use std::time::{Duration, Instant};

use crate::attack::{AttackStats, Censor, CensorConfig, PolicyConfig};
use crate::packet::{Packet, Verdict};

#[derive(Debug, thiserror::Error)]
pub enum LiveError {
    #[error("host facility unavailable: {0}")]
    HostUnavailable(String),
    #[error("invalid configuration: {0}")]
    Config(#[from] crate::error::ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HostCapabilities {
    /// The host can hold a packet and re-inject it later.
    pub delay: bool,
}

pub trait HostHook {
    /// Attach to the host facility.
    fn open(&mut self) -> Result<HostCapabilities, LiveError>;
    /// Next packet from the host, or `None` when the source is exhausted.
    fn recv(&mut self) -> Option<Packet>;
    /// Hand the verdict for `packet` back to the host.
    fn verdict(&mut self, packet: &Packet, verdict: Verdict);
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub censor: CensorConfig,
    /// Soft per-packet decision budget; overruns are counted, not enforced.
    pub budget: Duration,
}

impl LiveConfig {
    pub fn new(censor: CensorConfig) -> Self {
        LiveConfig { censor, budget: Duration::from_millis(1) }
    }
}

#[derive(Debug)]
pub struct LiveAdapter {
    censor: Censor,
    caps: HostCapabilities,
    budget: Duration,
    overruns: u64,
    downgraded_delays: u64,
}

impl LiveAdapter {
    pub fn new(cfg: &LiveConfig, caps: HostCapabilities) -> Result<Self, LiveError> {
        cfg.censor.validate()?;
        let has_delay = cfg.censor.policies.iter().flat_map(|p| p.flatten()).any(|p| matches!(p, PolicyConfig::FixedDelay(_)));
        if has_delay && !caps.delay {
            log::warn!("host cannot re-inject delayed packets; delay verdicts will be downgraded to pass");
        }
        Ok(LiveAdapter { censor: Censor::new(&cfg.censor), caps, budget: cfg.budget, overruns: 0, downgraded_delays: 0 })
    }

    /// Decide one packet. Delay verdicts become Pass when the host cannot
    /// delay.
    pub fn on_packet(&mut self, packet: &Packet) -> Verdict {
        let start = Instant::now();
        let mut v = self.censor.process(packet);
        if matches!(v, Verdict::Delay(_)) && !self.caps.delay {
            self.downgraded_delays += 1;
            v = Verdict::Pass;
        }
        if start.elapsed() > self.budget {
            self.overruns += 1;
        }
        v
    }

    pub fn overruns(&self) -> u64 {
        self.overruns
    }

    pub fn downgraded_delays(&self) -> u64 {
        self.downgraded_delays
    }

    pub fn stats(&self) -> &AttackStats {
        self.censor.stats()
    }
}

/// Drive a host hook until its source is exhausted. Each verdict is handed
/// back before the next packet is received.
pub fn run_live<H: HostHook>(hook: &mut H, cfg: &LiveConfig) -> Result<LiveAdapter, LiveError> {
    let caps = hook.open()?;
    let mut adapter = LiveAdapter::new(cfg, caps)?;
    while let Some(p) = hook.recv() {
        let v = adapter.on_packet(&p);
        hook.verdict(&p, v);
    }
    Ok(adapter)
}

/// In-memory host that replays a packet list and records verdicts.
#[derive(Debug, Default)]
pub struct ReplayHook {
    pub packets: std::collections::VecDeque<Packet>,
    pub caps: Option<HostCapabilities>,
    pub verdicts: Vec<(u64, Verdict)>,
}

impl ReplayHook {
    pub fn new(packets: Vec<Packet>, caps: Option<HostCapabilities>) -> Self {
        ReplayHook { packets: packets.into(), caps, verdicts: Vec::new() }
    }
}

impl HostHook for ReplayHook {
    fn open(&mut self) -> Result<HostCapabilities, LiveError> {
        self.caps.ok_or_else(|| LiveError::HostUnavailable("replay host has no capabilities configured".into()))
    }

    fn recv(&mut self) -> Option<Packet> {
        self.packets.pop_front()
    }

    fn verdict(&mut self, packet: &Packet, verdict: Verdict) {
        self.verdicts.push((packet.original_index, verdict));
    }
}
