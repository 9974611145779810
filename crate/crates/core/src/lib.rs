//! Flow-based network threat detection with an ingress drop filter.
//!
//! The crate is organized as a pipeline: packets come in from a pcap file or
//! a synthetic generator ([`traffic`]), pass the ingress [`filter`], are
//! assembled into bidirectional flows ([`flow`]), featurized, and scored by a
//! trained classifier ([`ml`]). The [`pipeline`] module closes the loop:
//! flows scored as malicious get their source IP added to the drop table so
//! subsequent packets are discarded before any further processing.
//!
//! All randomized components (traffic generation, dataset splits, model
//! initialization) draw from ChaCha8 seeded explicitly, so every artifact in
//! the pipeline is reproducible bit-for-bit across platforms.

pub mod dataset;
pub mod filter;
pub mod flow;
pub mod ml;
pub mod packet;
pub mod pcap;
pub mod pipeline;
pub mod traffic;

pub use dataset::{Dataset, Standardizer};
pub use filter::{DropTable, HookMode, Verdict};
pub use flow::{FlowFeatures, FlowMeter, MeterConfig};
pub use ml::{ModelKind, TrainedModel};
pub use packet::{FiveTuple, Packet, Protocol, TcpFlags};
pub use pipeline::{PipelineConfig, WindowReport};
pub use traffic::{TrafficKind, TrafficProfile};
