//! Packet data model: the currency of the datapath.
//!
//! A [`Packet`] carries the parsed L2–L4 view of one Ethernet frame: the
//! 5-tuple, TCP flags, and header/payload byte counts. Payload bytes
//! themselves are never stored, only counted; nothing downstream inspects
//! payload content.

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

/// Ethernet header length in bytes; added to L3 length to get wire length.
pub const ETHERNET_HEADER_LEN: u32 = 14;

/// L3/L4 protocol of a packet. Anything other than TCP/UDP is carried
/// opaquely and excluded from flow metering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    Tcp,
    Udp,
    Other(u8),
}

impl Protocol {
    pub fn number(self) -> u8 {
        match self {
            Protocol::Tcp => 6,
            Protocol::Udp => 17,
            Protocol::Other(n) => n,
        }
    }

    pub fn from_number(n: u8) -> Self {
        match n {
            6 => Protocol::Tcp,
            17 => Protocol::Udp,
            other => Protocol::Other(other),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Protocol::Tcp => write!(f, "tcp"),
            Protocol::Udp => write!(f, "udp"),
            Protocol::Other(n) => write!(f, "proto{n}"),
        }
    }
}

/// TCP flag byte. Empty for non-TCP packets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TcpFlags(pub u8);

impl TcpFlags {
    pub const FIN: TcpFlags = TcpFlags(0x01);
    pub const SYN: TcpFlags = TcpFlags(0x02);
    pub const RST: TcpFlags = TcpFlags(0x04);
    pub const PSH: TcpFlags = TcpFlags(0x08);
    pub const ACK: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);
    pub const ECE: TcpFlags = TcpFlags(0x40);
    pub const CWR: TcpFlags = TcpFlags(0x80);

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn union(self, other: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | other.0)
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        self.union(rhs)
    }
}

impl fmt::Display for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const NAMES: [(TcpFlags, char); 8] = [
            (TcpFlags::FIN, 'F'),
            (TcpFlags::SYN, 'S'),
            (TcpFlags::RST, 'R'),
            (TcpFlags::PSH, 'P'),
            (TcpFlags::ACK, 'A'),
            (TcpFlags::URG, 'U'),
            (TcpFlags::ECE, 'E'),
            (TcpFlags::CWR, 'C'),
        ];
        for (flag, c) in NAMES {
            if self.contains(flag) {
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

/// One captured packet. Immutable after construction, `Copy`, and safe to
/// share across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    /// Capture timestamp, integer microseconds since the Unix epoch.
    pub timestamp_us: u64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
    /// Empty whenever `protocol != Tcp`.
    pub tcp_flags: TcpFlags,
    /// Total L3+L4 header bytes. At least 20 (bare IPv4 header), 40 for TCP
    /// with no options, exactly 28 for UDP.
    pub header_len_bytes: u16,
    pub payload_len_bytes: u16,
}

/// A packet that violates the `Packet` field invariants.
#[derive(Debug, thiserror::Error)]
pub enum PacketError {
    #[error("header_len_bytes {0} below the 20-byte IPv4 minimum")]
    HeaderTooShort(u16),
    #[error("tcp header length {0} invalid: TCP needs 40..=80 bytes of L3+L4 header in 4-byte steps")]
    BadTcpHeaderLen(u16),
    #[error("udp header length {0} invalid: UDP needs exactly 28 bytes of L3+L4 header")]
    BadUdpHeaderLen(u16),
    #[error("tcp flags 0x{0:02x} set on non-TCP packet")]
    FlagsOnNonTcp(u8),
    #[error("header length {0} invalid for non-TCP/UDP: IPv4 allows 20..=60 bytes in 4-byte steps")]
    BadIpHeaderLen(u16),
    #[error("ports set on a packet without an L4 header")]
    PortsOnNonTransport,
    #[error("L3 length {0} exceeds the 65535-byte IPv4 limit")]
    TooLong(u32),
}

impl Packet {
    /// Total length of the IPv4 datagram (headers + payload).
    pub fn l3_len(&self) -> u32 {
        self.header_len_bytes as u32 + self.payload_len_bytes as u32
    }

    /// On-wire frame length once the Ethernet header is prepended.
    pub fn wire_len(&self) -> u32 {
        self.l3_len() + ETHERNET_HEADER_LEN
    }

    pub fn five_tuple(&self) -> FiveTuple {
        FiveTuple {
            src_ip: self.src_ip,
            dst_ip: self.dst_ip,
            src_port: self.src_port,
            dst_port: self.dst_port,
            protocol: self.protocol,
        }
    }

    /// Checks the field invariants that the pcap writer relies on.
    pub fn validate(&self) -> Result<(), PacketError> {
        if self.header_len_bytes < 20 {
            return Err(PacketError::HeaderTooShort(self.header_len_bytes));
        }
        match self.protocol {
            Protocol::Tcp => {
                let h = self.header_len_bytes;
                if !(40..=80).contains(&h) || (h - 20) % 4 != 0 {
                    return Err(PacketError::BadTcpHeaderLen(h));
                }
            }
            Protocol::Udp => {
                if self.header_len_bytes != 28 {
                    return Err(PacketError::BadUdpHeaderLen(self.header_len_bytes));
                }
                if !self.tcp_flags.is_empty() {
                    return Err(PacketError::FlagsOnNonTcp(self.tcp_flags.0));
                }
            }
            Protocol::Other(_) => {
                if !self.tcp_flags.is_empty() {
                    return Err(PacketError::FlagsOnNonTcp(self.tcp_flags.0));
                }
                // No L4 header: the whole header is the IPv4 header.
                let h = self.header_len_bytes;
                if !(20..=60).contains(&h) || h % 4 != 0 {
                    return Err(PacketError::BadIpHeaderLen(h));
                }
                if self.src_port != 0 || self.dst_port != 0 {
                    return Err(PacketError::PortsOnNonTransport);
                }
            }
        }
        if self.l3_len() > 65535 {
            return Err(PacketError::TooLong(self.l3_len()));
        }
        Ok(())
    }
}

/// Flow key: a 5-tuple in canonical (direction-independent) form.
///
/// `canonical()` orders the two endpoints so a tuple and its reversal map to
/// the same key; which endpoint initiated the flow is recovered separately
/// from the first observed packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FiveTuple {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: Protocol,
}

impl FiveTuple {
    /// Direction-independent form: the lexicographically smaller
    /// (ip, port) endpoint goes first.
    pub fn canonical(&self) -> FiveTuple {
        if (self.src_ip, self.src_port) <= (self.dst_ip, self.dst_port) {
            *self
        } else {
            self.reversed()
        }
    }

    pub fn reversed(&self) -> FiveTuple {
        FiveTuple {
            src_ip: self.dst_ip,
            dst_ip: self.src_ip,
            src_port: self.dst_port,
            dst_port: self.src_port,
            protocol: self.protocol,
        }
    }
}

impl fmt::Display for FiveTuple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}->{}:{}/{}",
            self.src_ip, self.src_port, self.dst_ip, self.dst_port, self.protocol
        )
    }
}
