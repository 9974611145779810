//! Labeled synthetic traffic: benign web/bulk sessions and hping3-style TCP
//! SYN floods.
//!
//! Everything here is a pure function of (profile, seed): streams are
//! generated from ChaCha8 and are byte-identical across runs for the same
//! seed. The benign model is a stand-in, not a reproduction of any external
//! capture: a two-kind mixture of short request/response sessions and long
//! bulk transfers with log-normal sizes and heavy-tailed think gaps. What
//! matters is that it is non-degenerate and separable from flood traffic by
//! construction: flood flows are SYN-only with zero payload and a bare
//! 40-byte header, benign flows carry handshakes, options on SYN, payload,
//! and teardown.

use std::io::{Read, Write};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::flow::FlowFeatures;
use crate::packet::{FiveTuple, Packet, Protocol, TcpFlags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    BenignWeb,
    BenignBulk,
    SynFlood,
}

/// Parameters for one generated stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub kind: TrafficKind,
    pub rate_pps: f64,
    pub duration_s: f64,
    /// Source address. For benign kinds this is the base of a source pool
    /// (`src_prefix_len` wide); a SYN flood always uses exactly this address.
    pub src_ip: Ipv4Addr,
    pub src_prefix_len: u8,
    pub dst_ip: Ipv4Addr,
    pub seed: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrafficError {
    #[error("rate must be positive, got {0}")]
    BadRate(f64),
    #[error("duration must be positive, got {0}")]
    BadDuration(f64),
    #[error("flow counts must be positive")]
    EmptyCorpus,
    #[error("prefix length {0} out of range 0..=32")]
    BadPrefix(u8),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("ground truth row {row}: {reason}")]
    BadTruthRow { row: usize, reason: String },
}

/// Per-flow ground truth emitted alongside a generated corpus.
/// `key` is initiator-oriented; joins use the canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub key: FiveTuple,
    pub flow_start_us: u64,
    pub label: u8,
}

/// A labeled packet stream: the corpus packets in timestamp order plus one
/// ground-truth row per generated flow.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub packets: Vec<Packet>,
    pub truth: Vec<GroundTruth>,
}

/// Generates one stream. SYN floods have exactly
/// `round(rate_pps * duration_s)` packets at deterministic spacing with
/// seeded jitter; benign kinds spawn whole sessions until the packet budget
/// is spent and truncate at the duration boundary, so flows may still be
/// open at stream end.
pub fn generate(profile: &TrafficProfile) -> Result<Vec<Packet>, TrafficError> {
    validate_profile(profile)?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    match profile.kind {
        TrafficKind::SynFlood => Ok(gen_syn_flood(profile, &mut rng)),
        TrafficKind::BenignWeb | TrafficKind::BenignBulk => Ok(gen_benign(profile, &mut rng)),
    }
}

fn validate_profile(profile: &TrafficProfile) -> Result<(), TrafficError> {
    if !(profile.rate_pps > 0.0) {
        return Err(TrafficError::BadRate(profile.rate_pps));
    }
    if !(profile.duration_s > 0.0) {
        return Err(TrafficError::BadDuration(profile.duration_s));
    }
    if profile.src_prefix_len > 32 {
        return Err(TrafficError::BadPrefix(profile.src_prefix_len));
    }
    Ok(())
}

fn gen_syn_flood(profile: &TrafficProfile, rng: &mut ChaCha8Rng) -> Vec<Packet> {
    let count = (profile.rate_pps * profile.duration_s).round() as u64;
    let interval = 1e6 / profile.rate_pps;
    // Jitter stays under interval/4 so spacing never inverts and the mean
    // inter-arrival time stays within 1% of 1/rate.
    let jitter = (interval / 4.0).floor() as u64;

    let mut packets = Vec::with_capacity(count as usize);
    for i in 0..count {
        let base = (i as f64 * interval).round() as u64;
        let j = if jitter == 0 {
            0
        } else {
            rng.random_range(0..=2 * jitter)
        };
        packets.push(Packet {
            timestamp_us: base + j,
            src_ip: profile.src_ip,
            dst_ip: profile.dst_ip,
            src_port: rng.random_range(1024..=65535),
            dst_port: 80,
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags::SYN,
            header_len_bytes: 40,
            payload_len_bytes: 0,
        });
    }
    packets.sort_by_key(|p| p.timestamp_us);
    packets
}

fn gen_benign(profile: &TrafficProfile, rng: &mut ChaCha8Rng) -> Vec<Packet> {
    let duration_us = (profile.duration_s * 1e6) as u64;
    let budget = (profile.rate_pps * profile.duration_s).round() as i64;
    let pool = SourcePool::new(profile.src_ip, profile.src_prefix_len);

    let mut packets = Vec::new();
    let mut spent = 0i64;
    let mut flow_index = 0u32;
    while spent < budget {
        let start_us = rng.random_range(0..duration_us);
        let (src_ip, src_port) = pool.endpoint(flow_index);
        let session = match profile.kind {
            TrafficKind::BenignWeb => BenignSession::web(rng),
            TrafficKind::BenignBulk => BenignSession::bulk(rng),
            TrafficKind::SynFlood => unreachable!(),
        };
        let flow = session.emit(start_us, src_ip, src_port, profile.dst_ip, rng);
        flow_index += 1;
        for p in flow {
            if p.timestamp_us < duration_us {
                spent += 1;
                packets.push(p);
            }
        }
    }
    // Stable sort keeps the deterministic construction order on ties.
    packets.sort_by_key(|p| p.timestamp_us);
    packets
}

/// Allocates unique (ip, port) pairs from a subnet so no two flows of one
/// stream share a 5-tuple.
struct SourcePool {
    base: u32,
    hosts: u32,
}

impl SourcePool {
    fn new(base: Ipv4Addr, prefix_len: u8) -> Self {
        let size = 1u64 << (32 - prefix_len as u64);
        let mask = !(size - 1) as u32;
        SourcePool {
            base: u32::from(base) & mask,
            // Skip .0; keep the pool at least one host wide.
            hosts: ((size - 1).max(1) as u32).min(4096),
        }
    }

    fn endpoint(&self, flow_index: u32) -> (Ipv4Addr, u16) {
        let host = self.base + 1 + (flow_index % self.hosts);
        let port = 1024 + (flow_index / self.hosts) % 64000;
        (Ipv4Addr::from(host), port as u16 + (flow_index % 7) as u16)
    }
}

/// One benign TCP session: handshake, request/response rounds (web) or a
/// long server push (bulk), FIN teardown.
struct BenignSession {
    rtt_us: u64,
    rounds: Vec<Round>,
    dst_port: u16,
}

struct Round {
    think_gap_us: u64,
    request_payload: u16,
    response_payloads: Vec<u16>,
    response_gap_us: u64,
}

impl BenignSession {
    fn web(rng: &mut ChaCha8Rng) -> Self {
        let rtt_us = rng.random_range(80..=600);
        let req_size = LogNormal::new(300f64.ln(), 0.6).expect("valid lognormal");
        let resp_size = LogNormal::new(800f64.ln(), 0.8).expect("valid lognormal");
        // Heavy-tailed think time, median 200 ms, capped at 60 s (below the
        // flow timeout so a session is never split by expiry).
        let think = LogNormal::new(200_000f64.ln(), 1.5).expect("valid lognormal");
        let n_rounds = rng.random_range(1..=3);
        let rounds = (0..n_rounds)
            .map(|i| Round {
                think_gap_us: if i == 0 {
                    rng.random_range(100..=2_000)
                } else {
                    (think.sample(rng) as u64).clamp(1_000, 60_000_000)
                },
                request_payload: (req_size.sample(rng) as u16).clamp(50, 1460),
                response_payloads: (0..rng.random_range(1..=8))
                    .map(|_| (resp_size.sample(rng) as u16).clamp(100, 1460))
                    .collect(),
                response_gap_us: rng.random_range(100..=2_000),
            })
            .collect();
        BenignSession {
            rtt_us,
            rounds,
            dst_port: if rng.random_bool(0.7) { 80 } else { 443 },
        }
    }

    fn bulk(rng: &mut ChaCha8Rng) -> Self {
        let rtt_us = rng.random_range(100..=800);
        let n_data = rng.random_range(30..=300);
        let stall = LogNormal::new(2_000f64.ln(), 1.2).expect("valid lognormal");
        let mut response_payloads = Vec::with_capacity(n_data);
        for _ in 0..n_data {
            response_payloads.push(if rng.random_bool(0.85) {
                1460
            } else {
                rng.random_range(700..1460)
            });
        }
        BenignSession {
            rtt_us,
            rounds: vec![Round {
                think_gap_us: rng.random_range(200..=3_000),
                request_payload: rng.random_range(80..=300),
                response_payloads,
                response_gap_us: (stall.sample(rng) as u64).clamp(200, 20_000),
            }],
            dst_port: 5001,
        }
    }

    fn emit(
        &self,
        start_us: u64,
        src_ip: Ipv4Addr,
        src_port: u16,
        dst_ip: Ipv4Addr,
        rng: &mut ChaCha8Rng,
    ) -> Vec<Packet> {
        let fwd = |ts, flags, header, payload| Packet {
            timestamp_us: ts,
            src_ip,
            dst_ip,
            src_port,
            dst_port: self.dst_port,
            protocol: Protocol::Tcp,
            tcp_flags: flags,
            header_len_bytes: header,
            payload_len_bytes: payload,
        };
        let bwd = |ts, flags, header, payload| Packet {
            timestamp_us: ts,
            src_ip: dst_ip,
            dst_ip: src_ip,
            src_port: self.dst_port,
            dst_port: src_port,
            protocol: Protocol::Tcp,
            tcp_flags: flags,
            header_len_bytes: header,
            payload_len_bytes: payload,
        };

        let mut out = Vec::new();
        let mut ts = start_us;
        let half_rtt = (self.rtt_us / 2).max(1);

        // Handshake; real clients negotiate options, so SYNs carry them.
        let syn_header = 40 + 4 * rng.random_range(1..=5);
        out.push(fwd(ts, TcpFlags::SYN, syn_header, 0));
        ts += half_rtt;
        out.push(bwd(ts, TcpFlags::SYN | TcpFlags::ACK, syn_header, 0));
        ts += half_rtt;
        out.push(fwd(ts, TcpFlags::ACK, 40, 0));

        for round in &self.rounds {
            ts += round.think_gap_us;
            out.push(fwd(ts, TcpFlags::PSH | TcpFlags::ACK, 40, round.request_payload));
            ts += half_rtt;
            for (i, &payload) in round.response_payloads.iter().enumerate() {
                out.push(bwd(ts, TcpFlags::PSH | TcpFlags::ACK, 40, payload));
                // Client acknowledges every other segment.
                if i % 2 == 1 {
                    out.push(fwd(ts + half_rtt, TcpFlags::ACK, 40, 0));
                }
                ts += round.response_gap_us;
            }
            ts += half_rtt;
        }

        out.push(fwd(ts, TcpFlags::FIN | TcpFlags::ACK, 40, 0));
        ts += half_rtt;
        out.push(bwd(ts, TcpFlags::FIN | TcpFlags::ACK, 40, 0));
        ts += half_rtt;
        out.push(fwd(ts, TcpFlags::ACK, 40, 0));

        out.sort_by_key(|p| p.timestamp_us);
        out
    }
}

/// Builds a balanced-by-request corpus: exactly `n_benign` benign sessions
/// (web/bulk mixture) and `n_malicious` SYN-burst flows, interleaved over a
/// shared horizon, with one ground-truth row per flow.
pub fn build_corpus(
    n_benign: usize,
    n_malicious: usize,
    seed: u64,
) -> Result<Corpus, TrafficError> {
    if n_benign == 0 || n_malicious == 0 {
        return Err(TrafficError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let victim = Ipv4Addr::new(10, 0, 0, 10);

    // Horizon sized for ~50 flow starts per second.
    let total = n_benign + n_malicious;
    let horizon_us = ((total as f64 / 50.0) * 1e6).max(10e6) as u64;

    let mut packets: Vec<Packet> = Vec::new();
    let mut truth = Vec::with_capacity(total);

    for i in 0..n_benign {
        let start_us = rng.random_range(0..horizon_us);
        let (src_ip, src_port) = benign_endpoint(i as u32);
        let session = if rng.random_bool(0.75) {
            BenignSession::web(&mut rng)
        } else {
            BenignSession::bulk(&mut rng)
        };
        let flow = session.emit(start_us, src_ip, src_port, victim, &mut rng);
        truth.push(GroundTruth {
            key: flow[0].five_tuple(),
            flow_start_us: flow[0].timestamp_us,
            label: 0,
        });
        packets.extend(flow);
    }

    let attacker_pool: Vec<Ipv4Addr> = (1..=8).map(|h| Ipv4Addr::new(10, 200, 0, h)).collect();
    for j in 0..n_malicious {
        let start_us = rng.random_range(0..horizon_us);
        let src_ip = attacker_pool[j % attacker_pool.len()];
        let src_port = (1024 + j / attacker_pool.len()) as u16;
        let flow = syn_burst(start_us, src_ip, src_port, victim, &mut rng);
        truth.push(GroundTruth {
            key: flow[0].five_tuple(),
            flow_start_us: flow[0].timestamp_us,
            label: 1,
        });
        packets.extend(flow);
    }

    packets.sort_by_key(|p| p.timestamp_us);
    Ok(Corpus { packets, truth })
}

fn benign_endpoint(flow_index: u32) -> (Ipv4Addr, u16) {
    let host = 1 + (flow_index % 60_000);
    let port = 1024 + (flow_index / 60_000) * 7 + (flow_index % 13);
    (
        Ipv4Addr::from(u32::from(Ipv4Addr::new(10, 1, 0, 0)) + host),
        port as u16,
    )
}

/// One malicious flow: a burst of bare SYNs from a single source endpoint,
/// no payload, no reply — the per-flow shape of an hping3 flood, including
/// occasional second-scale retry gaps.
fn syn_burst(
    start_us: u64,
    src_ip: Ipv4Addr,
    src_port: u16,
    dst_ip: Ipv4Addr,
    rng: &mut ChaCha8Rng,
) -> Vec<Packet> {
    let count = if rng.random_bool(0.5) {
        1
    } else {
        rng.random_range(2..=8)
    };
    let mut out = Vec::with_capacity(count);
    let mut ts = start_us;
    for i in 0..count {
        out.push(Packet {
            timestamp_us: ts,
            src_ip,
            dst_ip,
            src_port,
            dst_port: 80,
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags::SYN,
            header_len_bytes: 40,
            payload_len_bytes: 0,
        });
        if i + 1 < count {
            ts += if rng.random_bool(0.8) {
                rng.random_range(50..=2_000)
            } else {
                // SYN retransmission backoff.
                rng.random_range(1_000_000..=3_000_000)
            };
        }
    }
    out
}

/// Attaches ground-truth labels to metered flows by exact
/// (canonical 5-tuple, start time) match. Returns (matched, unmatched).
pub fn apply_labels(features: &mut [FlowFeatures], truth: &[GroundTruth]) -> (usize, usize) {
    use std::collections::HashMap;
    let index: HashMap<(FiveTuple, u64), u8> = truth
        .iter()
        .map(|t| ((t.key.canonical(), t.flow_start_us), t.label))
        .collect();
    let mut matched = 0;
    let mut unmatched = 0;
    for f in features.iter_mut() {
        match index.get(&(f.key.canonical(), f.flow_start_us)) {
            Some(&label) => {
                f.label = Some(label);
                matched += 1;
            }
            None => unmatched += 1,
        }
    }
    (matched, unmatched)
}

pub fn write_truth_csv<W: Write>(truth: &[GroundTruth], w: W) -> Result<(), TrafficError> {
    let mut writer = csv::Writer::from_writer(w);
    writer.write_record([
        "src_ip",
        "src_port",
        "dst_ip",
        "dst_port",
        "protocol",
        "flow_start_us",
        "label",
    ])?;
    for t in truth {
        writer.write_record([
            t.key.src_ip.to_string(),
            t.key.src_port.to_string(),
            t.key.dst_ip.to_string(),
            t.key.dst_port.to_string(),
            t.key.protocol.number().to_string(),
            t.flow_start_us.to_string(),
            t.label.to_string(),
        ])?;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(r: R) -> Result<Vec<GroundTruth>, TrafficError> {
    let mut reader = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> Result<&str, TrafficError> {
            record.get(i).ok_or_else(|| TrafficError::BadTruthRow {
                row,
                reason: format!("missing column {i}"),
            })
        };
        let parse_err = |what: &str| TrafficError::BadTruthRow {
            row,
            reason: format!("unparseable {what}"),
        };
        let label: u8 = field(6)?.parse().map_err(|_| parse_err("label"))?;
        if label > 1 {
            return Err(TrafficError::BadTruthRow {
                row,
                reason: format!("label {label} not in {{0, 1}}"),
            });
        }
        out.push(GroundTruth {
            key: FiveTuple {
                src_ip: field(0)?.parse().map_err(|_| parse_err("src_ip"))?,
                src_port: field(1)?.parse().map_err(|_| parse_err("src_port"))?,
                dst_ip: field(2)?.parse().map_err(|_| parse_err("dst_ip"))?,
                dst_port: field(3)?.parse().map_err(|_| parse_err("dst_port"))?,
                protocol: Protocol::from_number(
                    field(4)?.parse().map_err(|_| parse_err("protocol"))?,
                ),
            },
            flow_start_us: field(5)?.parse().map_err(|_| parse_err("flow_start_us"))?,
            label,
        });
    }
    Ok(out)
}
