//! Traffic-inspection and manipulation laboratory for WebRTC-tunnelled
//! circumvention channels.
//!
//! The censor model is a per-packet adversary with bounded per-flow memory.
//! It recognises WebRTC flows from the certificate issuer in the plaintext
//! DTLS handshake, then drops data-channel records or whole video frames.
//! The [`sim`] module measures how much more such attacks hurt a reliable
//! covert channel than an adaptive video stream, and [`detect`] separates the
//! two by whether frame sizes shrink under attack.

pub mod attack;
pub mod config;
pub mod detect;
pub mod dtls;
pub mod error;
pub mod flowtable;
pub mod io;
pub mod net;
pub mod packet;
pub mod rtp;
pub mod sim;
pub mod synth;

pub use error::{ConfigError, Error, Result};
pub use packet::{DemuxClass, FlowKey, Packet, Timestamp, Verdict};
