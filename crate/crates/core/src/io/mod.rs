//! Capture files, the offline engine, the live-adapter contract, and run
//! reports.

mod engine;
mod inspect;
mod live;
mod pcap;
mod report;

pub use engine::{run_offline, run_offline_sharded, OfflineRun};
pub use inspect::{inspect, InspectReport, InspectedFlow, RtpStreamSummary};
pub use live::{run_live, HostCapabilities, HostHook, LiveAdapter, LiveConfig, LiveError, ReplayHook};
pub use pcap::{read_capture, write_capture, CaptureError, CaptureHeader, Trace, MAGIC};
pub use report::{flow_summaries, read_report, write_report, FlowSummary, RunReport, REPORT_SCHEMA_VERSION};
