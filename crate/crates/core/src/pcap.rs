//! Classic pcap (0xa1b2c3d4, version 2.4, linktype 1) file ingestion and
//! emission.
//!
//! The on-disk layout is bit-exact: a 24-byte little-endian global header,
//! then per record a 16-byte header (`ts_sec`, `ts_usec`, `incl_len`,
//! `orig_len`) followed by the Ethernet frame. Frames are synthesized from
//! [`Packet`] fields on write (zero MACs, zero payload bytes) and parsed back
//! on read; payload content is never preserved, only its length. Files with
//! the byte-swapped magic are accepted on read, written files are always
//! little-endian with snaplen 65535.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::packet::{Packet, PacketError, Protocol, TcpFlags, ETHERNET_HEADER_LEN};

pub const PCAP_MAGIC: u32 = 0xa1b2_c3d4;
pub const PCAP_MAGIC_SWAPPED: u32 = 0xd4c3_b2a1;
pub const LINKTYPE_ETHERNET: u32 = 1;
pub const SNAPLEN: u32 = 65_535;
pub const GLOBAL_HEADER_LEN: u64 = 24;
pub const RECORD_HEADER_LEN: u64 = 16;

const ETHERTYPE_IPV4: u16 = 0x0800;

#[derive(Debug, thiserror::Error)]
pub enum PcapError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a pcap file: bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("truncated global header")]
    TruncatedGlobalHeader,
    #[error("unsupported linktype {0} (only Ethernet/1 is handled)")]
    UnsupportedLinktype(u32),
    #[error("record {index}: truncated ({got} of {want} bytes)")]
    TruncatedRecord { index: u64, got: usize, want: usize },
    #[error("record {index}: malformed frame: {reason}")]
    MalformedFrame { index: u64, reason: String },
    #[error("packet {index} invalid: {source}")]
    InvalidPacket { index: usize, source: PacketError },
    #[error("packet {index} out of order: timestamp {ts} after {prev}")]
    OutOfOrder { index: usize, ts: u64, prev: u64 },
    #[error("packet {index}: wire length {len} exceeds snaplen {SNAPLEN}")]
    FrameTooLong { index: usize, len: u32 },
    #[error("packet {index}: timestamp {ts} does not fit a 32-bit pcap ts_sec")]
    TimestampOverflow { index: usize, ts: u64 },
}

/// Result of reading a capture file: the IPv4 packets in file order plus a
/// count of skipped non-IPv4 frames. `packets.len() + skipped_non_ipv4`
/// always equals the file's record count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcapContents {
    pub packets: Vec<Packet>,
    pub skipped_non_ipv4: u64,
}

impl PcapContents {
    pub fn total_records(&self) -> u64 {
        self.packets.len() as u64 + self.skipped_non_ipv4
    }
}

pub fn read_pcap(path: impl AsRef<Path>) -> Result<PcapContents, PcapError> {
    let file = File::open(path)?;
    read_pcap_from(BufReader::new(file))
}

pub fn read_pcap_from<R: Read>(mut r: R) -> Result<PcapContents, PcapError> {
    let mut global = [0u8; GLOBAL_HEADER_LEN as usize];
    r.read_exact(&mut global)
        .map_err(|_| PcapError::TruncatedGlobalHeader)?;

    let magic_le = LittleEndian::read_u32(&global[0..4]);
    let swapped = match magic_le {
        PCAP_MAGIC => false,
        // Big-endian writer: every header field needs byte swapping.
        PCAP_MAGIC_SWAPPED => true,
        other => return Err(PcapError::BadMagic(other)),
    };
    let read_u32 = |buf: &[u8]| -> u32 {
        if swapped {
            BigEndian::read_u32(buf)
        } else {
            LittleEndian::read_u32(buf)
        }
    };

    let linktype = read_u32(&global[20..24]);
    if linktype != LINKTYPE_ETHERNET {
        return Err(PcapError::UnsupportedLinktype(linktype));
    }

    let mut packets = Vec::new();
    let mut skipped = 0u64;
    let mut index = 0u64;
    let mut frame = Vec::new();
    loop {
        let mut rec = [0u8; RECORD_HEADER_LEN as usize];
        match read_full(&mut r, &mut rec) {
            Ok(0) => break,
            Ok(n) if n < rec.len() => {
                return Err(PcapError::TruncatedRecord {
                    index,
                    got: n,
                    want: rec.len(),
                })
            }
            Ok(_) => {}
            Err(e) => return Err(e.into()),
        }
        let ts_sec = read_u32(&rec[0..4]);
        let ts_usec = read_u32(&rec[4..8]);
        let incl_len = read_u32(&rec[8..12]) as usize;
        let orig_len = read_u32(&rec[12..16]);

        frame.clear();
        frame.resize(incl_len, 0);
        let got = read_full(&mut r, &mut frame)?;
        if got < incl_len {
            return Err(PcapError::TruncatedRecord {
                index,
                got,
                want: incl_len,
            });
        }

        let timestamp_us = ts_sec as u64 * 1_000_000 + ts_usec as u64;
        match parse_frame(&frame, orig_len, timestamp_us, index)? {
            Some(packet) => packets.push(packet),
            None => skipped += 1,
        }
        index += 1;
    }

    Ok(PcapContents {
        packets,
        skipped_non_ipv4: skipped,
    })
}

/// Writes `packets` as a classic pcap file and returns the byte count
/// written. Input must be timestamp-ordered and hold the `Packet`
/// invariants; violations are errors, not silent fixes.
pub fn write_pcap(packets: &[Packet], path: impl AsRef<Path>) -> Result<u64, PcapError> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let n = write_pcap_to(packets, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn write_pcap_to<W: Write>(packets: &[Packet], w: &mut W) -> Result<u64, PcapError> {
    w.write_u32::<LittleEndian>(PCAP_MAGIC)?;
    w.write_u16::<LittleEndian>(2)?; // version 2.4
    w.write_u16::<LittleEndian>(4)?;
    w.write_i32::<LittleEndian>(0)?; // thiszone
    w.write_u32::<LittleEndian>(0)?; // sigfigs
    w.write_u32::<LittleEndian>(SNAPLEN)?;
    w.write_u32::<LittleEndian>(LINKTYPE_ETHERNET)?;
    let mut written = GLOBAL_HEADER_LEN;

    let mut prev_ts = 0u64;
    let mut frame = Vec::with_capacity(1600);
    for (index, packet) in packets.iter().enumerate() {
        packet
            .validate()
            .map_err(|source| PcapError::InvalidPacket { index, source })?;
        if index > 0 && packet.timestamp_us < prev_ts {
            return Err(PcapError::OutOfOrder {
                index,
                ts: packet.timestamp_us,
                prev: prev_ts,
            });
        }
        prev_ts = packet.timestamp_us;

        let wire_len = packet.wire_len();
        if wire_len > SNAPLEN {
            return Err(PcapError::FrameTooLong {
                index,
                len: wire_len,
            });
        }
        let ts_sec = packet.timestamp_us / 1_000_000;
        if ts_sec > u32::MAX as u64 {
            return Err(PcapError::TimestampOverflow {
                index,
                ts: packet.timestamp_us,
            });
        }

        w.write_u32::<LittleEndian>(ts_sec as u32)?;
        w.write_u32::<LittleEndian>((packet.timestamp_us % 1_000_000) as u32)?;
        w.write_u32::<LittleEndian>(wire_len)?;
        w.write_u32::<LittleEndian>(wire_len)?;

        frame.clear();
        build_frame(packet, &mut frame);
        debug_assert_eq!(frame.len() as u32, wire_len);
        w.write_all(&frame)?;
        written += RECORD_HEADER_LEN + frame.len() as u64;
    }
    Ok(written)
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Parses one Ethernet frame. Returns `None` for non-IPv4 ethertypes.
fn parse_frame(
    frame: &[u8],
    orig_len: u32,
    timestamp_us: u64,
    index: u64,
) -> Result<Option<Packet>, PcapError> {
    let malformed = |reason: String| PcapError::MalformedFrame { index, reason };

    if frame.len() < ETHERNET_HEADER_LEN as usize {
        return Err(malformed(format!(
            "frame shorter than an Ethernet header ({} bytes)",
            frame.len()
        )));
    }
    let ethertype = BigEndian::read_u16(&frame[12..14]);
    if ethertype != ETHERTYPE_IPV4 {
        return Ok(None);
    }

    let ip = &frame[ETHERNET_HEADER_LEN as usize..];
    if ip.len() < 20 {
        return Err(malformed("IPv4 header truncated".into()));
    }
    if ip[0] >> 4 != 4 {
        return Err(malformed(format!("IP version {} in IPv4 frame", ip[0] >> 4)));
    }
    let ihl_bytes = ((ip[0] & 0x0f) as usize) * 4;
    if ihl_bytes < 20 || ip.len() < ihl_bytes {
        return Err(malformed(format!("bad IHL ({ihl_bytes} bytes)")));
    }
    let total_len = BigEndian::read_u16(&ip[2..4]) as usize;
    if total_len < ihl_bytes {
        return Err(malformed(format!(
            "IPv4 total length {total_len} below header length {ihl_bytes}"
        )));
    }
    // Keep the original datagram length honest even when the capture was
    // snapped or the frame padded: orig_len bounds it from above.
    if total_len as u32 + ETHERNET_HEADER_LEN > orig_len.max(frame.len() as u32) {
        return Err(malformed(format!(
            "IPv4 total length {total_len} exceeds the captured frame"
        )));
    }
    let protocol = Protocol::from_number(ip[9]);
    let src_ip = Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]);
    let dst_ip = Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]);

    let l4 = &ip[ihl_bytes..];
    let (src_port, dst_port, tcp_flags, header_len) = match protocol {
        Protocol::Tcp => {
            if l4.len() < 20 {
                return Err(malformed("TCP header truncated".into()));
            }
            let data_offset_bytes = ((l4[12] >> 4) as usize) * 4;
            if data_offset_bytes < 20 || l4.len() < data_offset_bytes {
                return Err(malformed(format!(
                    "bad TCP data offset ({data_offset_bytes} bytes)"
                )));
            }
            (
                BigEndian::read_u16(&l4[0..2]),
                BigEndian::read_u16(&l4[2..4]),
                TcpFlags(l4[13]),
                ihl_bytes + data_offset_bytes,
            )
        }
        Protocol::Udp => {
            if l4.len() < 8 {
                return Err(malformed("UDP header truncated".into()));
            }
            (
                BigEndian::read_u16(&l4[0..2]),
                BigEndian::read_u16(&l4[2..4]),
                TcpFlags::empty(),
                ihl_bytes + 8,
            )
        }
        Protocol::Other(_) => (0, 0, TcpFlags::empty(), ihl_bytes),
    };

    Ok(Some(Packet {
        timestamp_us,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        protocol,
        tcp_flags,
        header_len_bytes: header_len as u16,
        payload_len_bytes: (total_len - header_len) as u16,
    }))
}

/// Synthesizes the Ethernet+IPv4+L4 bytes for a validated packet.
/// MACs are zero, payload bytes are zero, TCP/UDP checksums are zero;
/// the IPv4 header checksum is computed properly.
fn build_frame(packet: &Packet, out: &mut Vec<u8>) {
    out.extend_from_slice(&[0u8; 12]); // dst + src MAC
    out.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let (ihl_bytes, l4_header) = match packet.protocol {
        Protocol::Tcp | Protocol::Udp => (20usize, packet.header_len_bytes as usize - 20),
        Protocol::Other(_) => (packet.header_len_bytes as usize, 0),
    };
    let total_len = packet.l3_len() as u16;

    let ip_start = out.len();
    out.push(0x40 | (ihl_bytes / 4) as u8);
    out.push(0); // TOS
    out.extend_from_slice(&total_len.to_be_bytes());
    out.extend_from_slice(&[0, 0]); // identification
    out.extend_from_slice(&[0, 0]); // flags + fragment offset
    out.push(64); // TTL
    out.push(packet.protocol.number());
    out.extend_from_slice(&[0, 0]); // checksum placeholder
    out.extend_from_slice(&packet.src_ip.octets());
    out.extend_from_slice(&packet.dst_ip.octets());
    out.resize(ip_start + ihl_bytes, 0); // IP options, zeroed
    let csum = ipv4_checksum(&out[ip_start..ip_start + ihl_bytes]);
    out[ip_start + 10] = (csum >> 8) as u8;
    out[ip_start + 11] = (csum & 0xff) as u8;

    match packet.protocol {
        Protocol::Tcp => {
            let l4_start = out.len();
            out.extend_from_slice(&packet.src_port.to_be_bytes());
            out.extend_from_slice(&packet.dst_port.to_be_bytes());
            out.extend_from_slice(&[0u8; 8]); // seq + ack
            out.push(((l4_header / 4) as u8) << 4);
            out.push(packet.tcp_flags.0);
            out.extend_from_slice(&0xffffu16.to_be_bytes()); // window
            out.extend_from_slice(&[0u8; 4]); // checksum + urgent
            out.resize(l4_start + l4_header, 0); // TCP options, zeroed
        }
        Protocol::Udp => {
            out.extend_from_slice(&packet.src_port.to_be_bytes());
            out.extend_from_slice(&packet.dst_port.to_be_bytes());
            out.extend_from_slice(&(8 + packet.payload_len_bytes).to_be_bytes());
            out.extend_from_slice(&[0, 0]); // checksum
        }
        Protocol::Other(_) => {}
    }

    out.resize(out.len() + packet.payload_len_bytes as usize, 0);
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum = 0u32;
    for chunk in header.chunks(2) {
        let word = if chunk.len() == 2 {
            BigEndian::read_u16(chunk) as u32
        } else {
            (chunk[0] as u32) << 8
        };
        sum += word;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[cfg(test)]
mod tests {
    use super::*;
    use byteorder::WriteBytesExt;
    use proptest::prelude::*;

    fn syn(ts: u64) -> Packet {
        Packet {
            timestamp_us: ts,
            src_ip: Ipv4Addr::new(10, 46, 0, 1),
            dst_ip: Ipv4Addr::new(10, 0, 0, 10),
            src_port: 3121,
            dst_port: 80,
            protocol: Protocol::Tcp,
            tcp_flags: TcpFlags::SYN,
            header_len_bytes: 40,
            payload_len_bytes: 0,
        }
    }

    #[test]
    fn empty_capture_is_24_bytes_and_reads_back_empty() {
        let mut buf = Vec::new();
        let n = write_pcap_to(&[], &mut buf).unwrap();
        assert_eq!(n, 24);
        assert_eq!(buf.len(), 24);

        let read = read_pcap_from(&buf[..]).unwrap();
        assert!(read.packets.is_empty());
        assert_eq!(read.skipped_non_ipv4, 0);
    }

    #[test]
    fn single_syn_packet_byte_count() {
        // 24 (global header) + 16 (record header) + 14 (Ethernet) + 40 (IPv4+TCP)
        let mut buf = Vec::new();
        let n = write_pcap_to(&[syn(0)], &mut buf).unwrap();
        assert_eq!(n, 24 + 16 + 14 + 40);
    }

    #[test]
    fn hand_assembled_record_timestamp() {
        // ts_sec=1, ts_usec=500000 must surface as 1_500_000 µs.
        let mut buf = Vec::new();
        write_pcap_to(&[], &mut buf).unwrap();
        let mut frame = Vec::new();
        build_frame(&syn(0), &mut frame);
        buf.write_u32::<LittleEndian>(1).unwrap();
        buf.write_u32::<LittleEndian>(500_000).unwrap();
        buf.write_u32::<LittleEndian>(frame.len() as u32).unwrap();
        buf.write_u32::<LittleEndian>(frame.len() as u32).unwrap();
        buf.extend_from_slice(&frame);

        let read = read_pcap_from(&buf[..]).unwrap();
        assert_eq!(read.packets.len(), 1);
        assert_eq!(read.packets[0].timestamp_us, 1_500_000);
    }

    #[test]
    fn three_packet_round_trip_is_field_exact() {
        let packets = vec![
            syn(1_000),
            Packet {
                timestamp_us: 2_000,
                src_ip: Ipv4Addr::new(10, 0, 0, 10),
                dst_ip: Ipv4Addr::new(10, 46, 0, 1),
                src_port: 80,
                dst_port: 3121,
                protocol: Protocol::Tcp,
                tcp_flags: TcpFlags::SYN | TcpFlags::ACK,
                header_len_bytes: 44,
                payload_len_bytes: 120,
            },
            Packet {
                timestamp_us: 3_000,
                src_ip: Ipv4Addr::new(192, 168, 1, 1),
                dst_ip: Ipv4Addr::new(192, 168, 1, 2),
                src_port: 9999,
                dst_port: 53,
                protocol: Protocol::Udp,
                tcp_flags: TcpFlags::empty(),
                header_len_bytes: 28,
                payload_len_bytes: 64,
            },
        ];
        let mut buf = Vec::new();
        write_pcap_to(&packets, &mut buf).unwrap();
        let read = read_pcap_from(&buf[..]).unwrap();
        assert_eq!(read.packets, packets);
        assert_eq!(read.skipped_non_ipv4, 0);
    }

    #[test]
    fn non_ipv4_frames_are_skipped_and_counted() {
        let mut buf = Vec::new();
        write_pcap_to(&[syn(5)], &mut buf).unwrap();
        // Append an ARP frame record by hand.
        let arp_frame: Vec<u8> = {
            let mut f = vec![0u8; 12];
            f.extend_from_slice(&0x0806u16.to_be_bytes());
            f.extend_from_slice(&[0u8; 28]);
            f
        };
        buf.write_u32::<LittleEndian>(5).unwrap();
        buf.write_u32::<LittleEndian>(0).unwrap();
        buf.write_u32::<LittleEndian>(arp_frame.len() as u32).unwrap();
        buf.write_u32::<LittleEndian>(arp_frame.len() as u32).unwrap();
        buf.extend_from_slice(&arp_frame);

        let read = read_pcap_from(&buf[..]).unwrap();
        assert_eq!(read.packets.len(), 1);
        assert_eq!(read.skipped_non_ipv4, 1);
        assert_eq!(read.total_records(), 2);
    }

    #[test]
    fn byte_swapped_magic_is_accepted() {
        let mut buf = Vec::new();
        buf.write_u32::<BigEndian>(PCAP_MAGIC).unwrap();
        buf.write_u16::<BigEndian>(2).unwrap();
        buf.write_u16::<BigEndian>(4).unwrap();
        buf.write_i32::<BigEndian>(0).unwrap();
        buf.write_u32::<BigEndian>(0).unwrap();
        buf.write_u32::<BigEndian>(SNAPLEN).unwrap();
        buf.write_u32::<BigEndian>(LINKTYPE_ETHERNET).unwrap();
        let mut frame = Vec::new();
        build_frame(&syn(7), &mut frame);
        buf.write_u32::<BigEndian>(7).unwrap();
        buf.write_u32::<BigEndian>(0).unwrap();
        buf.write_u32::<BigEndian>(frame.len() as u32).unwrap();
        buf.write_u32::<BigEndian>(frame.len() as u32).unwrap();
        buf.extend_from_slice(&frame);

        let read = read_pcap_from(&buf[..]).unwrap();
        assert_eq!(read.packets.len(), 1);
        assert_eq!(read.packets[0].timestamp_us, 7_000_000);
    }

    #[test]
    fn bad_magic_is_fatal() {
        let buf = vec![0u8; 24];
        assert!(matches!(
            read_pcap_from(&buf[..]),
            Err(PcapError::BadMagic(0))
        ));
    }

    #[test]
    fn unsupported_linktype_reports_the_value() {
        let mut buf = Vec::new();
        write_pcap_to(&[], &mut buf).unwrap();
        buf[20..24].copy_from_slice(&101u32.to_le_bytes()); // LINKTYPE_RAW
        match read_pcap_from(&buf[..]) {
            Err(PcapError::UnsupportedLinktype(101)) => {}
            other => panic!("expected UnsupportedLinktype(101), got {other:?}"),
        }
    }

    #[test]
    fn truncated_record_names_the_index() {
        let mut buf = Vec::new();
        write_pcap_to(&[syn(1), syn(2)], &mut buf).unwrap();
        buf.truncate(buf.len() - 10);
        match read_pcap_from(&buf[..]) {
            Err(PcapError::TruncatedRecord { index: 1, .. }) => {}
            other => panic!("expected TruncatedRecord at index 1, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_timestamps_are_rejected() {
        let mut buf = Vec::new();
        match write_pcap_to(&[syn(10), syn(5)], &mut buf) {
            Err(PcapError::OutOfOrder { index: 1, .. }) => {}
            other => panic!("expected OutOfOrder at index 1, got {other:?}"),
        }
    }

    fn arb_packet() -> impl Strategy<Value = Packet> {
        (
            0u64..=4_000_000_000_000_000u64,
            any::<[u8; 4]>(),
            any::<[u8; 4]>(),
            any::<u16>(),
            any::<u16>(),
            prop_oneof![
                (0u16..=10, any::<u8>()).prop_map(|(opt, flags)| (
                    Protocol::Tcp,
                    TcpFlags(flags),
                    40 + opt * 4
                )),
                Just((Protocol::Udp, TcpFlags::empty(), 28)),
                (0u8..=255)
                    .prop_filter("tcp/udp handled above", |p| *p != 6 && *p != 17)
                    .prop_flat_map(|p| (0u16..=10)
                        .prop_map(move |opt| (Protocol::Other(p), TcpFlags::empty(), 20 + opt * 4))),
            ],
            0u16..=1500,
        )
            .prop_map(|(ts, src, dst, sp, dp, (proto, flags, hdr), payload)| Packet {
                timestamp_us: ts,
                src_ip: Ipv4Addr::from(src),
                dst_ip: Ipv4Addr::from(dst),
                src_port: if matches!(proto, Protocol::Other(_)) { 0 } else { sp },
                dst_port: if matches!(proto, Protocol::Other(_)) { 0 } else { dp },
                protocol: proto,
                tcp_flags: flags,
                header_len_bytes: hdr,
                payload_len_bytes: payload,
            })
    }

    proptest! {
        #[test]
        fn round_trip_preserves_packets(mut packets in prop::collection::vec(arb_packet(), 0..60)) {
            packets.sort_by_key(|p| p.timestamp_us);
            let mut buf = Vec::new();
            write_pcap_to(&packets, &mut buf).unwrap();
            let read = read_pcap_from(&buf[..]).unwrap();
            prop_assert_eq!(read.packets, packets);
            prop_assert_eq!(read.skipped_non_ipv4, 0);
        }
    }
}
