//! Verdict policies: data-channel blocking, whole-frame dropping, uniform
//! packet loss, fixed delay, and their composition into a per-packet censor.

mod censor;
mod config;
mod policy;
mod stats;

pub use censor::{Censor, CensorConfig};
pub use config::{validate_chain, DataChannelBlock, DropSchedule, FixedDelay, FrameDrop, PolicyConfig, UniformPacketLoss};
pub use policy::{
    combine, compose, decide_data_channel_block, decide_fixed_delay, decide_frame_drop, decide_uniform_loss, FrameDecision,
    FrameOutcome, PacketView,
};
pub use stats::{AttackStats, FlowCounters, PolicyFlowCounters, PolicyStats};
