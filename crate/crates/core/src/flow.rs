//! Bidirectional flow assembly and the 20-feature flow statistics.
//!
//! Packets sharing a canonical 5-tuple are folded into a [`FlowRecord`] in
//! O(1) state per flow; [`FlowRecord::finalize`] turns the accumulators into
//! a [`FlowFeatures`] vector. Conventions, fixed here and relied on by the
//! feature oracle in the test suite:
//!
//! - Forward direction = direction of the flow's first observed packet.
//! - "Packet length" is the total L3 length (header + payload bytes),
//!   except `Fwd Seg Size Avg` which averages forward payload bytes only.
//! - `Fwd Header Len` counts L3+L4 header bytes of forward packets
//!   (see [`FWD_HEADER_COUNTS_L3`]).
//! - Std/variance features use the population form sqrt(E[x²] − E[x]²),
//!   zero when fewer than two samples.
//! - `Pkt Len Var` is the variance of packet lengths over both directions,
//!   per its name. The upstream description of this field ("minimum
//!   inter-arrival time") contradicts the name and is not followed.
//! - Durations are accumulated in integer microseconds and exported in
//!   seconds.
//!
//! A gap between consecutive packets larger than the activity timeout closes
//! the current active period and records the gap as an idle period; a gap
//! larger than the subflow threshold additionally opens a new subflow. The
//! final open active period counts as a period when its duration is nonzero.

use std::collections::HashMap;
use std::io::Write;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::packet::{FiveTuple, Packet, Protocol, TcpFlags};

/// When true, `Fwd Header Len` counts IPv4+L4 header bytes; flipping this to
/// false would count L4 bytes only. Single switch so the convention is
/// auditable.
pub const FWD_HEADER_COUNTS_L3: bool = true;

/// The exported feature names, in emission order. The label column, when
/// present, follows these.
pub const FEATURE_NAMES: [&str; 20] = [
    "Flow Duration",
    "Fwd Pkt Len Max",
    "Fwd Pkt Len Mean",
    "Fwd Pkt Len Std",
    "Flow IAT Mean",
    "Flow IAT Max",
    "Fwd IAT Mean",
    "Fwd IAT Tot",
    "Fwd IAT Std",
    "Fwd Header Len",
    "Pkt Len Min",
    "Pkt Len Var",
    "SYN Flag Cnt",
    "Fwd Seg Size Avg",
    "Subflow Fwd Pkts",
    "Active Max",
    "Idle Std",
    "Idle Mean",
    "Idle Min",
    "Idle Max",
];

pub const LABEL_COLUMN: &str = "Label";

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error("timestamp regression: packet at {ts} µs is {regression} µs before the stream head {last} µs (tolerance {tolerance})")]
    TimestampRegression {
        ts: u64,
        last: u64,
        regression: u64,
        tolerance: u64,
    },
    #[error("flow table full: {cap} flows")]
    TableFull { cap: usize },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("flow {index} has no label; labeled emission requires every flow labeled")]
    UnlabeledFlow { index: usize },
}

/// Flow metering thresholds. Defaults follow common flow-meter conventions:
/// 1 s activity timeout, 1 s subflow gap, 120 s flow timeout.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeterConfig {
    pub activity_timeout_us: u64,
    pub subflow_gap_us: u64,
    pub flow_timeout_us: u64,
    /// Bounded-memory guard: inserting a flow beyond this count is an error.
    pub max_flows: usize,
    /// Timestamp regressions up to this many µs are clamped to zero gaps;
    /// larger regressions are errors.
    pub regression_tolerance_us: u64,
}

impl Default for MeterConfig {
    fn default() -> Self {
        MeterConfig {
            activity_timeout_us: 1_000_000,
            subflow_gap_us: 1_000_000,
            flow_timeout_us: 120_000_000,
            max_flows: 1_000_000,
            regression_tolerance_us: 1_000,
        }
    }
}

/// Streaming accumulator over integer byte lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct RunningStats {
    count: u64,
    sum: u64,
    sum_sq: u128,
    max: u64,
    min: u64,
}

impl RunningStats {
    fn push(&mut self, x: u64) {
        if self.count == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.count += 1;
        self.sum += x;
        self.sum_sq += (x as u128) * (x as u128);
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }

    /// Population variance, exact in integer arithmetic up to the final
    /// f64 conversion. Zero for fewer than two samples.
    fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as i128;
        let num = n * self.sum_sq as i128 - (self.sum as i128) * (self.sum as i128);
        // num ≥ 0 by Cauchy-Schwarz; guard rounding anyway.
        (num.max(0) as f64) / (self.count as f64 * self.count as f64)
    }

    fn std(&self) -> f64 {
        self.variance().sqrt()
    }

    fn max(&self) -> u64 {
        if self.count == 0 {
            0
        } else {
            self.max
        }
    }

    fn min(&self) -> u64 {
        if self.count == 0 {
            0
        } else {
            self.min
        }
    }
}

/// Accumulating state for one bidirectional flow.
#[derive(Debug, Clone)]
pub struct FlowRecord {
    /// Canonical 5-tuple (table key).
    pub key: FiveTuple,
    /// Endpoint that sent the first packet; "forward" means from here.
    pub fwd_initiator: (Ipv4Addr, u16),
    pub first_ts_us: u64,
    pub last_ts_us: u64,

    fwd_len: RunningStats,
    all_len: RunningStats,
    fwd_iat: RunningStats,
    flow_iat: RunningStats,

    fwd_header_bytes: u64,
    fwd_payload_bytes: u64,
    fwd_packets: u64,
    bwd_packets: u64,
    syn_count: u64,

    last_fwd_ts_us: Option<u64>,
    active_start_us: u64,
    active_periods: Vec<u64>,
    idle_periods: Vec<u64>,
    subflow_fwd_counts: Vec<u64>,

    fin_fwd: bool,
    fin_bwd: bool,
    rst: bool,
}

impl FlowRecord {
    fn new(packet: &Packet, key: FiveTuple) -> Self {
        let mut record = FlowRecord {
            key,
            fwd_initiator: (packet.src_ip, packet.src_port),
            first_ts_us: packet.timestamp_us,
            last_ts_us: packet.timestamp_us,
            fwd_len: RunningStats::default(),
            all_len: RunningStats::default(),
            fwd_iat: RunningStats::default(),
            flow_iat: RunningStats::default(),
            fwd_header_bytes: 0,
            fwd_payload_bytes: 0,
            fwd_packets: 0,
            bwd_packets: 0,
            syn_count: 0,
            last_fwd_ts_us: None,
            active_start_us: packet.timestamp_us,
            active_periods: Vec::new(),
            idle_periods: Vec::new(),
            subflow_fwd_counts: vec![0],
            fin_fwd: false,
            fin_bwd: false,
            rst: false,
        };
        record.account(packet, true, packet.timestamp_us);
        record
    }

    fn update(&mut self, packet: &Packet, config: &MeterConfig) {
        let forward = (packet.src_ip, packet.src_port) == self.fwd_initiator;
        // Small regressions clamp to a zero gap.
        let ts = packet.timestamp_us.max(self.last_ts_us);
        let gap = ts - self.last_ts_us;

        if gap > config.activity_timeout_us {
            let active = self.last_ts_us - self.active_start_us;
            if active > 0 {
                self.active_periods.push(active);
            }
            self.idle_periods.push(gap);
            self.active_start_us = ts;
        }
        if gap > config.subflow_gap_us {
            self.subflow_fwd_counts.push(0);
        }
        self.flow_iat.push(gap);
        self.account(packet, forward, ts);
    }

    fn account(&mut self, packet: &Packet, forward: bool, ts: u64) {
        let len = packet.l3_len() as u64;
        self.all_len.push(len);
        if forward {
            if let Some(last_fwd) = self.last_fwd_ts_us {
                self.fwd_iat.push(ts.saturating_sub(last_fwd));
            }
            self.last_fwd_ts_us = Some(ts);
            self.fwd_len.push(len);
            self.fwd_header_bytes += if FWD_HEADER_COUNTS_L3 {
                packet.header_len_bytes as u64
            } else {
                (packet.header_len_bytes as u64).saturating_sub(20)
            };
            self.fwd_payload_bytes += packet.payload_len_bytes as u64;
            self.fwd_packets += 1;
            *self.subflow_fwd_counts.last_mut().expect("nonempty") += 1;
        } else {
            self.bwd_packets += 1;
        }
        if packet.protocol == Protocol::Tcp {
            if packet.tcp_flags.contains(TcpFlags::SYN) {
                self.syn_count += 1;
            }
            if packet.tcp_flags.contains(TcpFlags::FIN) {
                if forward {
                    self.fin_fwd = true;
                } else {
                    self.fin_bwd = true;
                }
            }
            if packet.tcp_flags.contains(TcpFlags::RST) {
                self.rst = true;
            }
        }
        self.last_ts_us = ts;
    }

    pub fn packet_count(&self) -> u64 {
        self.fwd_packets + self.bwd_packets
    }

    pub fn syn_count(&self) -> u64 {
        self.syn_count
    }

    pub fn flow_iat_count(&self) -> u64 {
        self.flow_iat.count
    }

    pub fn fwd_packet_count(&self) -> u64 {
        self.fwd_packets
    }

    pub fn subflow_fwd_counts(&self) -> &[u64] {
        &self.subflow_fwd_counts
    }

    /// TCP teardown observed: RST in either direction, or FIN in both.
    pub fn terminated(&self) -> bool {
        self.rst || (self.fin_fwd && self.fin_bwd)
    }

    /// Collapses the accumulators into the exported feature vector.
    pub fn finalize(&self) -> FlowFeatures {
        const US: f64 = 1e-6;

        let fwd_seg_size_avg = if self.fwd_packets == 0 {
            0.0
        } else {
            self.fwd_payload_bytes as f64 / self.fwd_packets as f64
        };
        let subflow_fwd_pkts = self.subflow_fwd_counts.iter().sum::<u64>() as f64
            / self.subflow_fwd_counts.len() as f64;

        // The open tail of the flow counts as one active period when nonzero.
        let open_active = self.last_ts_us - self.active_start_us;
        let active_max = self
            .active_periods
            .iter()
            .copied()
            .chain((open_active > 0).then_some(open_active))
            .max()
            .unwrap_or(0);

        let mut idle = RunningStats::default();
        for &d in &self.idle_periods {
            idle.push(d);
        }

        FlowFeatures {
            key: FiveTuple {
                src_ip: self.fwd_initiator.0,
                src_port: self.fwd_initiator.1,
                dst_ip: if self.fwd_initiator == (self.key.src_ip, self.key.src_port) {
                    self.key.dst_ip
                } else {
                    self.key.src_ip
                },
                dst_port: if self.fwd_initiator == (self.key.src_ip, self.key.src_port) {
                    self.key.dst_port
                } else {
                    self.key.src_port
                },
                protocol: self.key.protocol,
            },
            flow_start_us: self.first_ts_us,
            label: None,
            flow_duration: (self.last_ts_us - self.first_ts_us) as f64 * US,
            fwd_pkt_len_max: self.fwd_len.max() as f64,
            fwd_pkt_len_mean: self.fwd_len.mean(),
            fwd_pkt_len_std: self.fwd_len.std(),
            flow_iat_mean: self.flow_iat.mean() * US,
            flow_iat_max: self.flow_iat.max() as f64 * US,
            fwd_iat_mean: self.fwd_iat.mean() * US,
            fwd_iat_tot: self.fwd_iat.sum as f64 * US,
            fwd_iat_std: self.fwd_iat.std() * US,
            fwd_header_len: self.fwd_header_bytes as f64,
            pkt_len_min: self.all_len.min() as f64,
            pkt_len_var: self.all_len.variance(),
            syn_flag_cnt: self.syn_count as f64,
            fwd_seg_size_avg,
            subflow_fwd_pkts,
            active_max: active_max as f64 * US,
            idle_std: idle.std() * US,
            idle_mean: idle.mean() * US,
            idle_min: idle.min() as f64 * US,
            idle_max: idle.max() as f64 * US,
        }
    }
}

/// The 20 exported features of one flow, in emission units (seconds, bytes,
/// counts), plus the initiator-oriented key, start time, and optional label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowFeatures {
    /// 5-tuple oriented so `src` is the forward initiator.
    pub key: FiveTuple,
    pub flow_start_us: u64,
    pub label: Option<u8>,

    pub flow_duration: f64,
    pub fwd_pkt_len_max: f64,
    pub fwd_pkt_len_mean: f64,
    pub fwd_pkt_len_std: f64,
    pub flow_iat_mean: f64,
    pub flow_iat_max: f64,
    pub fwd_iat_mean: f64,
    pub fwd_iat_tot: f64,
    pub fwd_iat_std: f64,
    pub fwd_header_len: f64,
    pub pkt_len_min: f64,
    pub pkt_len_var: f64,
    pub syn_flag_cnt: f64,
    pub fwd_seg_size_avg: f64,
    pub subflow_fwd_pkts: f64,
    pub active_max: f64,
    pub idle_std: f64,
    pub idle_mean: f64,
    pub idle_min: f64,
    pub idle_max: f64,
}

impl FlowFeatures {
    /// Feature values in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [f64; 20] {
        [
            self.flow_duration,
            self.fwd_pkt_len_max,
            self.fwd_pkt_len_mean,
            self.fwd_pkt_len_std,
            self.flow_iat_mean,
            self.flow_iat_max,
            self.fwd_iat_mean,
            self.fwd_iat_tot,
            self.fwd_iat_std,
            self.fwd_header_len,
            self.pkt_len_min,
            self.pkt_len_var,
            self.syn_flag_cnt,
            self.fwd_seg_size_avg,
            self.subflow_fwd_pkts,
            self.active_max,
            self.idle_std,
            self.idle_mean,
            self.idle_min,
            self.idle_max,
        ]
    }
}

/// Outcome of feeding one packet to the meter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    /// Attributed to a flow.
    Metered,
    /// Not a TCP/UDP packet; excluded from flow metering.
    Ignored,
}

/// The flow table plus metering thresholds. One meter is owned by exactly
/// one ingest context; packets must arrive in non-decreasing timestamp
/// order (small regressions within the tolerance are clamped).
#[derive(Debug)]
pub struct FlowMeter {
    config: MeterConfig,
    table: HashMap<FiveTuple, FlowRecord>,
    stream_head_us: Option<u64>,
}

impl FlowMeter {
    pub fn new(config: MeterConfig) -> Self {
        FlowMeter {
            config,
            table: HashMap::new(),
            stream_head_us: None,
        }
    }

    pub fn config(&self) -> &MeterConfig {
        &self.config
    }

    pub fn active_flows(&self) -> usize {
        self.table.len()
    }

    pub fn ingest(&mut self, packet: &Packet) -> Result<Ingest, FlowError> {
        if let Some(head) = self.stream_head_us {
            if packet.timestamp_us + self.config.regression_tolerance_us < head {
                return Err(FlowError::TimestampRegression {
                    ts: packet.timestamp_us,
                    last: head,
                    regression: head - packet.timestamp_us,
                    tolerance: self.config.regression_tolerance_us,
                });
            }
        }
        self.stream_head_us = Some(
            self.stream_head_us
                .map_or(packet.timestamp_us, |h| h.max(packet.timestamp_us)),
        );

        if !matches!(packet.protocol, Protocol::Tcp | Protocol::Udp) {
            return Ok(Ingest::Ignored);
        }

        let key = packet.five_tuple().canonical();
        if let Some(record) = self.table.get_mut(&key) {
            record.update(packet, &self.config);
        } else {
            if self.table.len() >= self.config.max_flows {
                return Err(FlowError::TableFull {
                    cap: self.config.max_flows,
                });
            }
            self.table.insert(key, FlowRecord::new(packet, key));
        }
        Ok(Ingest::Metered)
    }

    /// Finalizes and removes flows that are TCP-terminated or idle strictly
    /// longer than the flow timeout. Emission order is deterministic:
    /// sorted by (start time, key).
    pub fn flush(&mut self, now_us: u64) -> Vec<FlowFeatures> {
        let timeout = self.config.flow_timeout_us;
        let expired: Vec<FiveTuple> = self
            .table
            .iter()
            .filter(|(_, r)| r.terminated() || now_us.saturating_sub(r.last_ts_us) > timeout)
            .map(|(k, _)| *k)
            .collect();
        let mut out: Vec<FlowFeatures> = expired
            .iter()
            .map(|k| self.table.remove(k).expect("key just listed").finalize())
            .collect();
        sort_features(&mut out);
        out
    }

    /// Finalizes every live flow (window close / end of stream).
    pub fn flush_all(&mut self) -> Vec<FlowFeatures> {
        let mut out: Vec<FlowFeatures> = self.table.drain().map(|(_, r)| r.finalize()).collect();
        sort_features(&mut out);
        out
    }

    pub fn records(&self) -> impl Iterator<Item = &FlowRecord> {
        self.table.values()
    }
}

fn sort_features(features: &mut [FlowFeatures]) {
    features.sort_by(|a, b| {
        (a.flow_start_us, a.key.canonical()).cmp(&(b.flow_start_us, b.key.canonical()))
    });
}

/// Writes features as CSV: the 20 feature columns in [`FEATURE_NAMES`] order,
/// then the label. Every flow must carry a label.
pub fn write_features_csv<W: Write>(features: &[FlowFeatures], w: W) -> Result<(), FlowError> {
    write_csv(features, w, true)
}

/// CSV without the label column, for inspection of unlabeled captures.
pub fn write_features_csv_unlabeled<W: Write>(
    features: &[FlowFeatures],
    w: W,
) -> Result<(), FlowError> {
    write_csv(features, w, false)
}

fn write_csv<W: Write>(features: &[FlowFeatures], w: W, labeled: bool) -> Result<(), FlowError> {
    let mut writer = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = FEATURE_NAMES.to_vec();
    if labeled {
        header.push(LABEL_COLUMN);
    }
    writer.write_record(&header)?;
    let mut row = Vec::with_capacity(21);
    for (index, f) in features.iter().enumerate() {
        row.clear();
        for v in f.values() {
            // f64 Display prints the shortest round-trip decimal.
            row.push(format!("{v}"));
        }
        if labeled {
            let label = f.label.ok_or(FlowError::UnlabeledFlow { index })?;
            row.push(label.to_string());
        }
        writer.write_record(&row)?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::Ipv4Addr;

    fn packet(ts: u64, src_port: u16, dst_port: u16, flags: TcpFlags, payload: u16) -> Packet {
        let (src_ip, dst_ip) = if src_port == 4000 {
            (Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2))
        } else {
            (Ipv4Addr::new(10, 0, 0, 2), Ipv4Addr::new(10, 0, 0, 1))
        };
        Packet {
            timestamp_us: ts,
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            protocol: Protocol::Tcp,
            tcp_flags: flags,
            header_len_bytes: 40,
            payload_len_bytes: payload,
        }
    }

    fn fwd(ts: u64, flags: TcpFlags, payload: u16) -> Packet {
        packet(ts, 4000, 80, flags, payload)
    }

    fn bwd(ts: u64, flags: TcpFlags, payload: u16) -> Packet {
        packet(ts, 80, 4000, flags, payload)
    }

    #[test]
    fn single_syn_packet_yields_one_flow() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        assert_eq!(meter.active_flows(), 1);
        let record = meter.records().next().unwrap();
        assert_eq!(record.packet_count(), 1);
        assert_eq!(record.syn_count(), 1);
    }

    #[test]
    fn two_packets_two_seconds_apart_record_one_gap() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        meter.ingest(&fwd(2_000_000, TcpFlags::ACK, 0)).unwrap();
        assert_eq!(meter.active_flows(), 1);
        let record = meter.records().next().unwrap();
        assert_eq!(record.flow_iat_count(), 1);
        let f = record.finalize();
        assert_eq!(f.flow_iat_mean, 2.0);
        assert_eq!(f.flow_iat_max, 2.0);
        // The 2 s gap exceeds the 1 s activity timeout: one idle period.
        assert_eq!(f.idle_mean, 2.0);
        assert_eq!(f.active_max, 0.0);
    }

    #[test]
    fn reply_packet_joins_the_flow_backward() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        meter
            .ingest(&bwd(100, TcpFlags::SYN | TcpFlags::ACK, 0))
            .unwrap();
        assert_eq!(meter.active_flows(), 1);
        let record = meter.records().next().unwrap();
        assert_eq!(record.packet_count(), 2);
        assert_eq!(record.fwd_packet_count(), 1);
        assert_eq!(record.syn_count(), 2);
    }

    #[test]
    fn single_packet_flow_degenerate_features() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(50, TcpFlags::SYN, 0)).unwrap();
        let f = meter.flush_all().pop().unwrap();
        assert_eq!(f.flow_duration, 0.0);
        assert_eq!(f.flow_iat_mean, 0.0);
        assert_eq!(f.fwd_iat_tot, 0.0);
        assert_eq!(f.idle_max, 0.0);
        assert_eq!(f.subflow_fwd_pkts, 1.0);
        assert_eq!(f.pkt_len_min, 40.0);
    }

    #[test]
    fn constant_forward_lengths_have_zero_std() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::ACK, 60)).unwrap();
        meter.ingest(&fwd(10, TcpFlags::ACK, 60)).unwrap();
        let f = meter.flush_all().pop().unwrap();
        assert_eq!(f.fwd_pkt_len_mean, 100.0);
        assert_eq!(f.fwd_pkt_len_std, 0.0);
        assert_eq!(f.fwd_pkt_len_max, 100.0);
    }

    #[test]
    fn flush_timeout_boundary_is_strict() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        let timeout = meter.config().flow_timeout_us;
        meter.ingest(&fwd(1_000, TcpFlags::ACK, 10)).unwrap();
        assert!(meter.flush(1_000 + timeout).is_empty());
        let out = meter.flush(1_000 + timeout + 1);
        assert_eq!(out.len(), 1);
        assert_eq!(meter.active_flows(), 0);
    }

    #[test]
    fn fin_in_both_directions_flushes_regardless_of_timeout() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        meter.ingest(&bwd(10, TcpFlags::SYN | TcpFlags::ACK, 0)).unwrap();
        meter.ingest(&fwd(20, TcpFlags::FIN | TcpFlags::ACK, 0)).unwrap();
        assert!(meter.flush(30).is_empty(), "one-sided FIN is not teardown");
        meter.ingest(&bwd(30, TcpFlags::FIN | TcpFlags::ACK, 0)).unwrap();
        assert_eq!(meter.flush(40).len(), 1);
    }

    #[test]
    fn rst_terminates_immediately() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        meter.ingest(&bwd(5, TcpFlags::RST, 0)).unwrap();
        assert_eq!(meter.flush(6).len(), 1);
    }

    #[test]
    fn timestamp_regression_beyond_tolerance_is_an_error() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(10_000, TcpFlags::ACK, 0)).unwrap();
        // 1 ms back: clamped.
        assert!(meter.ingest(&fwd(9_000, TcpFlags::ACK, 0)).is_ok());
        // beyond 1 ms: error.
        let err = meter.ingest(&fwd(8_999, TcpFlags::ACK, 0)).unwrap_err();
        assert!(matches!(err, FlowError::TimestampRegression { .. }));
    }

    #[test]
    fn table_capacity_is_enforced() {
        let mut meter = FlowMeter::new(MeterConfig {
            max_flows: 1,
            ..MeterConfig::default()
        });
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        let mut other = fwd(1, TcpFlags::SYN, 0);
        other.src_port = 4001;
        assert!(matches!(
            meter.ingest(&other),
            Err(FlowError::TableFull { cap: 1 })
        ));
        // Existing flows still update fine.
        meter.ingest(&fwd(2, TcpFlags::ACK, 0)).unwrap();
    }

    #[test]
    fn non_transport_packets_are_ignored() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        let p = Packet {
            timestamp_us: 0,
            src_ip: Ipv4Addr::new(1, 1, 1, 1),
            dst_ip: Ipv4Addr::new(2, 2, 2, 2),
            src_port: 0,
            dst_port: 0,
            protocol: Protocol::Other(1),
            tcp_flags: TcpFlags::empty(),
            header_len_bytes: 20,
            payload_len_bytes: 8,
        };
        assert_eq!(meter.ingest(&p).unwrap(), Ingest::Ignored);
        assert_eq!(meter.active_flows(), 0);
    }

    #[test]
    fn subflow_counts_partition_forward_packets() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        meter.ingest(&fwd(100, TcpFlags::ACK, 10)).unwrap();
        meter.ingest(&bwd(200, TcpFlags::ACK, 10)).unwrap();
        // 1.5 s gap: new subflow.
        meter.ingest(&fwd(1_700_000, TcpFlags::ACK, 10)).unwrap();
        let record = meter.records().next().unwrap();
        assert_eq!(record.subflow_fwd_counts(), &[2, 1]);
        let f = record.finalize();
        assert_eq!(f.subflow_fwd_pkts, 1.5);
    }

    #[test]
    fn features_key_is_initiator_oriented() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        // Initiator has the lexicographically larger endpoint so the
        // canonical key is reversed relative to the first packet.
        meter.ingest(&bwd(0, TcpFlags::SYN, 0)).unwrap();
        meter.ingest(&fwd(10, TcpFlags::SYN | TcpFlags::ACK, 0)).unwrap();
        let f = meter.flush_all().pop().unwrap();
        assert_eq!(f.key.src_ip, Ipv4Addr::new(10, 0, 0, 2));
        assert_eq!(f.key.src_port, 80);
    }

    #[test]
    fn labeled_csv_emission_has_exact_header() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        let mut features = meter.flush_all();
        features[0].label = Some(1);
        let mut buf = Vec::new();
        write_features_csv(&features, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            "Flow Duration,Fwd Pkt Len Max,Fwd Pkt Len Mean,Fwd Pkt Len Std,\
             Flow IAT Mean,Flow IAT Max,Fwd IAT Mean,Fwd IAT Tot,Fwd IAT Std,\
             Fwd Header Len,Pkt Len Min,Pkt Len Var,SYN Flag Cnt,Fwd Seg Size Avg,\
             Subflow Fwd Pkts,Active Max,Idle Std,Idle Mean,Idle Min,Idle Max,Label"
        );
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn unlabeled_flow_fails_labeled_emission() {
        let mut meter = FlowMeter::new(MeterConfig::default());
        meter.ingest(&fwd(0, TcpFlags::SYN, 0)).unwrap();
        let features = meter.flush_all();
        let mut buf = Vec::new();
        assert!(matches!(
            write_features_csv(&features, &mut buf),
            Err(FlowError::UnlabeledFlow { index: 0 })
        ));
    }
}
