//! Multipurpose covert channel over simulated RTP/UDP/IP packets.
//!
//! Each protocol data unit is split in two: its 6-bit header rides in header
//! fields the voice path does not use, and its payload rides in the gateway
//! watermark layer of the same window. Header bit mapping:
//!
//! | header bit | meaning            | carrier                    |
//! |------------|--------------------|----------------------------|
//! | 0          | start of PDU       | RTP padding flag           |
//! | 1          | post-auth payload  | RTP extension flag         |
//! | 2..=4      | fragment index     | low 3 bits of IP id        |
//! | 5          | security payload   | low bit of UDP checksum    |
//!
//! The n-th PDU of every group of `k` is a post-authentication digest over
//! the payloads of the previous `k - 1`.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::bits::{bits_to_bytes, bits_to_uint, uint_to_bits};
use crate::token::{Token, VerifyResult, TOKEN_BITS};
use crate::watermark::{
    embed_bits, extract_bits, g711, VoiceWindow, WatermarkError, WatermarkLayer, FRAME_SAMPLES, LAYER_CAPACITY,
    WINDOW_FRAMES,
};

/// Default post-authentication period.
pub const DEFAULT_CHAIN_K: usize = 4;
pub const POST_AUTH_BITS: usize = 64;
pub const MAX_INFO_BITS: usize = 128;
/// Distinct fragment indices a 3-bit field can carry.
pub const MAX_PDUS_PER_WINDOW: usize = 8;
const RTP_PT_PCMU: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CovertError {
    #[error("{requested} payload bits exceed remaining capacity of {remaining}")]
    Capacity { requested: usize, remaining: usize },
    #[error("window already carries {MAX_PDUS_PER_WINDOW} PDUs")]
    TooManyPdus,
    #[error("expected {expected} packets for the window, got {got}")]
    PacketCount { expected: usize, got: usize },
    #[error("invalid covert header {bits:#08b} in packet {packet}")]
    MalformedHeader { packet: usize, bits: u8 },
    #[error("packet {packet} carries fragment {got}, expected {packet}")]
    FragmentOrder { packet: usize, got: u8 },
    #[error("packet {packet} carries a header after the last PDU")]
    StrayHeader { packet: usize },
    #[error("PDU payload overruns the watermark layer")]
    Truncated,
    #[error("post-auth chain holds {have} payloads, needs {need}")]
    ChainIncomplete { have: usize, need: usize },
    #[error("{kind} payload cannot be {len} bits")]
    PayloadLength { kind: &'static str, len: usize },
    #[error("chain period must be at least 2, got {0}")]
    ChainPeriod(usize),
    #[error("malformed packet: {0}")]
    Packet(String),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
}

/// A simulated voice packet: the header fields the covert channel touches,
/// plus the PCMU payload of one frame.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimPacket {
    pub ip_id: u16,
    pub udp_checksum: u16,
    pub rtp_padding: bool,
    pub rtp_extension: bool,
    pub rtp_seq: u16,
    pub rtp_timestamp: u32,
    pub ssrc: u32,
    pub payload: Vec<u8>,
}

impl SimPacket {
    /// `ip_id ‖ udp_checksum ‖ RTP fixed header (12 bytes) ‖ payload`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.payload.len());
        out.extend_from_slice(&self.ip_id.to_be_bytes());
        out.extend_from_slice(&self.udp_checksum.to_be_bytes());
        out.push(0x80 | (self.rtp_padding as u8) << 5 | (self.rtp_extension as u8) << 4);
        out.push(RTP_PT_PCMU);
        out.extend_from_slice(&self.rtp_seq.to_be_bytes());
        out.extend_from_slice(&self.rtp_timestamp.to_be_bytes());
        out.extend_from_slice(&self.ssrc.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<SimPacket, CovertError> {
        if b.len() < 16 {
            return Err(CovertError::Packet(format!("{} bytes is shorter than the headers", b.len())));
        }
        if b[4] >> 6 != 2 {
            return Err(CovertError::Packet(format!("RTP version {}", b[4] >> 6)));
        }
        Ok(SimPacket {
            ip_id: u16::from_be_bytes([b[0], b[1]]),
            udp_checksum: u16::from_be_bytes([b[2], b[3]]),
            rtp_padding: b[4] & 0x20 != 0,
            rtp_extension: b[4] & 0x10 != 0,
            rtp_seq: u16::from_be_bytes([b[6], b[7]]),
            rtp_timestamp: u32::from_be_bytes(b[8..12].try_into().unwrap()),
            ssrc: u32::from_be_bytes(b[12..16].try_into().unwrap()),
            payload: b[16..].to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadType {
    Informational,
    Security,
}

/// The 6-bit PDU header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CovertHeader {
    pub payload_type: PayloadType,
    /// 0..=7
    pub fragment: u8,
    pub start: bool,
    pub post_auth: bool,
}

impl CovertHeader {
    /// All-zero header, carried by packets that start no PDU.
    pub const EMPTY: CovertHeader =
        CovertHeader { payload_type: PayloadType::Informational, fragment: 0, start: false, post_auth: false };

    pub fn to_bits(&self) -> u8 {
        (self.start as u8)
            | (self.post_auth as u8) << 1
            | (self.fragment & 0x7) << 2
            | ((self.payload_type == PayloadType::Security) as u8) << 5
    }

    pub fn from_bits(bits: u8) -> CovertHeader {
        CovertHeader {
            payload_type: if bits & 0x20 != 0 { PayloadType::Security } else { PayloadType::Informational },
            fragment: (bits >> 2) & 0x7,
            start: bits & 1 != 0,
            post_auth: bits & 2 != 0,
        }
    }

    /// A post-auth payload is always a security payload.
    pub fn is_valid(&self) -> bool {
        !(self.post_auth && self.payload_type == PayloadType::Informational)
    }
}

pub fn pack_header(h: &CovertHeader, p: &SimPacket) -> SimPacket {
    let bits = h.to_bits();
    let mut out = p.clone();
    out.rtp_padding = bits & 0x01 != 0;
    out.rtp_extension = bits & 0x02 != 0;
    out.ip_id = (p.ip_id & !0x7) | ((bits >> 2) & 0x7) as u16;
    out.udp_checksum = (p.udp_checksum & !0x1) | ((bits >> 5) & 0x1) as u16;
    out
}

pub fn unpack_header(p: &SimPacket) -> CovertHeader {
    let bits = (p.rtp_padding as u8) | (p.rtp_extension as u8) << 1 | ((p.ip_id & 0x7) as u8) << 2 | ((p.udp_checksum & 1) as u8) << 5;
    CovertHeader::from_bits(bits)
}

/// A protocol data unit: header plus payload bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovertPdu {
    pub header: CovertHeader,
    pub payload: Vec<bool>,
}

impl CovertPdu {
    fn new(payload_type: PayloadType, post_auth: bool, payload: Vec<bool>) -> CovertPdu {
        CovertPdu { header: CovertHeader { payload_type, fragment: 0, start: true, post_auth }, payload }
    }

    /// Security payload carrying an authentication token.
    pub fn token(token: &Token) -> CovertPdu {
        CovertPdu::new(PayloadType::Security, false, token.to_bits())
    }

    pub fn security(payload: Vec<bool>) -> Result<CovertPdu, CovertError> {
        if payload.len() != TOKEN_BITS {
            return Err(CovertError::PayloadLength { kind: "security", len: payload.len() });
        }
        Ok(CovertPdu::new(PayloadType::Security, false, payload))
    }

    pub fn post_auth(digest: [u8; 8]) -> CovertPdu {
        CovertPdu::new(PayloadType::Security, true, crate::bits::bytes_to_bits(&digest))
    }

    pub fn informational(data: Vec<bool>) -> Result<CovertPdu, CovertError> {
        if data.len() > MAX_INFO_BITS {
            return Err(CovertError::PayloadLength { kind: "informational", len: data.len() });
        }
        Ok(CovertPdu::new(PayloadType::Informational, false, data))
    }

    pub fn with_fragment(mut self, fragment: u8) -> CovertPdu {
        self.header.fragment = fragment & 0x7;
        self
    }

    pub fn is_post_auth(&self) -> bool {
        self.header.post_auth
    }

    /// Bits the PDU occupies in the watermark layer.
    pub fn wire_bits(&self) -> Vec<bool> {
        match self.header.payload_type {
            PayloadType::Informational => {
                let mut bits = uint_to_bits(self.payload.len() as u64, 8);
                bits.extend_from_slice(&self.payload);
                bits
            }
            PayloadType::Security => self.payload.clone(),
        }
    }

    pub fn post_auth_digest(&self) -> Option<[u8; 8]> {
        if !self.is_post_auth() {
            return None;
        }
        bits_to_bytes(&self.payload).try_into().ok()
    }

    pub fn as_token(&self) -> Option<Token> {
        if self.header.payload_type != PayloadType::Security || self.is_post_auth() {
            return None;
        }
        Token::from_bits(&self.payload).ok()
    }
}

/// The payloads awaiting post-authentication, in transmission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamChain {
    k: usize,
    ring: VecDeque<Vec<bool>>,
}

impl ParamChain {
    pub fn new(k: usize) -> Result<ParamChain, CovertError> {
        if k < 2 {
            return Err(CovertError::ChainPeriod(k));
        }
        Ok(ParamChain { k, ring: VecDeque::with_capacity(k - 1) })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    /// True once `k - 1` payloads are waiting.
    pub fn is_due(&self) -> bool {
        self.ring.len() == self.k - 1
    }

    /// Records a payload, evicting the oldest if the ring is already full.
    pub fn push(&mut self, payload: Vec<bool>) {
        if self.ring.len() == self.k - 1 {
            self.ring.pop_front();
        }
        self.ring.push_back(payload);
    }

    pub fn clear(&mut self) {
        self.ring.clear();
    }

    pub fn payloads(&self) -> impl Iterator<Item = &Vec<bool>> {
        self.ring.iter()
    }
}

/// First 64 bits of `H(len₁ ‖ p₁ ‖ … ‖ lenₖ₋₁ ‖ pₖ₋₁)` with 8-bit bit-length
/// prefixes and payloads packed MSB first.
pub fn chain_digest(chain: &ParamChain) -> Result<[u8; 8], CovertError> {
    if !chain.is_due() {
        return Err(CovertError::ChainIncomplete { have: chain.len(), need: chain.k - 1 });
    }
    let mut h = Sha256::new();
    for p in &chain.ring {
        h.update([p.len() as u8]);
        h.update(bits_to_bytes(p));
    }
    let full: [u8; 32] = h.finalize().into();
    Ok(full[..8].try_into().unwrap())
}

pub fn chain_verify(chain: &ParamChain, received: &[u8; 8]) -> VerifyResult {
    match chain_digest(chain) {
        Ok(d) => VerifyResult::from_bool(&d == received),
        Err(_) => VerifyResult::Mismatch,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct CovertStats {
    pub pdus: u64,
    pub security: u64,
    pub informational: u64,
    pub post_auth: u64,
    pub post_auth_match: u64,
    pub post_auth_mismatch: u64,
    pub post_auth_skipped: u64,
}

impl CovertStats {
    fn count(&mut self, pdu: &CovertPdu) {
        self.pdus += 1;
        match (pdu.header.payload_type, pdu.is_post_auth()) {
            (_, true) => self.post_auth += 1,
            (PayloadType::Security, false) => self.security += 1,
            (PayloadType::Informational, false) => self.informational += 1,
        }
    }
}

/// Sending side of one stream direction. Emits a post-auth PDU right after
/// every `k - 1` ordinary PDUs.
#[derive(Debug, Clone)]
pub struct CovertEncoder {
    chain: ParamChain,
    stats: CovertStats,
}

impl CovertEncoder {
    pub fn new(k: usize) -> Result<CovertEncoder, CovertError> {
        Ok(CovertEncoder { chain: ParamChain::new(k)?, stats: CovertStats::default() })
    }

    /// Queues an ordinary PDU; returns it, followed by a post-auth PDU when
    /// one is due.
    pub fn submit(&mut self, pdu: CovertPdu) -> Vec<CovertPdu> {
        debug_assert!(!pdu.is_post_auth());
        self.chain.push(pdu.payload.clone());
        self.stats.count(&pdu);
        let mut out = vec![pdu];
        if self.chain.is_due() {
            let auth = CovertPdu::post_auth(chain_digest(&self.chain).unwrap());
            self.stats.count(&auth);
            self.chain.clear();
            out.push(auth);
        }
        out
    }

    pub fn stats(&self) -> CovertStats {
        self.stats
    }
}

/// Receiving side of one stream direction.
#[derive(Debug, Clone)]
pub struct CovertDecoder {
    chain: ParamChain,
    desync: bool,
    stats: CovertStats,
}

impl CovertDecoder {
    pub fn new(k: usize) -> Result<CovertDecoder, CovertError> {
        Ok(CovertDecoder { chain: ParamChain::new(k)?, desync: false, stats: CovertStats::default() })
    }

    /// Feeds one received PDU. Returns the verdict when the PDU is a
    /// post-auth digest that could be checked.
    pub fn accept(&mut self, pdu: &CovertPdu) -> Option<VerifyResult> {
        self.stats.count(pdu);
        if !pdu.is_post_auth() {
            if self.chain.is_due() {
                // The digest that should have closed this group never came.
                self.chain.clear();
                self.chain.push(pdu.payload.clone());
                self.stats.post_auth_mismatch += 1;
                return Some(VerifyResult::Mismatch);
            }
            self.chain.push(pdu.payload.clone());
            return None;
        }
        let verdict = if self.desync {
            self.stats.post_auth_skipped += 1;
            self.desync = false;
            None
        } else {
            let v = match pdu.post_auth_digest() {
                Some(d) => chain_verify(&self.chain, &d),
                None => VerifyResult::Mismatch,
            };
            match v {
                VerifyResult::Match => self.stats.post_auth_match += 1,
                VerifyResult::Mismatch => self.stats.post_auth_mismatch += 1,
            }
            Some(v)
        };
        self.chain.clear();
        verdict
    }

    /// Marks the current group as unverifiable after PDUs were lost. The next
    /// post-auth digest is skipped and the chain restarts after it.
    pub fn resync(&mut self) {
        self.chain.clear();
        self.desync = true;
    }

    pub fn stats(&self) -> CovertStats {
        self.stats
    }
}

/// Accumulates the PDUs of one window before they are written to audio and
/// packets.
#[derive(Debug, Clone)]
pub struct CovertFrame {
    capacity: usize,
    bits: Vec<bool>,
    headers: Vec<CovertHeader>,
}

impl CovertFrame {
    pub fn new() -> CovertFrame {
        CovertFrame::with_capacity(LAYER_CAPACITY)
    }

    pub fn with_capacity(capacity: usize) -> CovertFrame {
        CovertFrame { capacity: capacity.min(LAYER_CAPACITY), bits: Vec::new(), headers: Vec::new() }
    }

    pub fn remaining(&self) -> usize {
        self.capacity - self.bits.len()
    }

    pub fn pdu_count(&self) -> usize {
        self.headers.len()
    }

    /// Appends a PDU at the next free layer position; its fragment index
    /// becomes its ordinal within the window.
    pub fn push(&mut self, pdu: &CovertPdu) -> Result<(), CovertError> {
        if self.headers.len() == MAX_PDUS_PER_WINDOW {
            return Err(CovertError::TooManyPdus);
        }
        let wire = pdu.wire_bits();
        if wire.len() > self.remaining() {
            return Err(CovertError::Capacity { requested: wire.len(), remaining: self.remaining() });
        }
        self.bits.extend(wire);
        self.headers.push(CovertHeader { fragment: self.headers.len() as u8, start: true, ..pdu.header });
        Ok(())
    }

    /// Writes the accumulated payload bits into `layer` of `window`.
    pub fn embed(&self, window: &VoiceWindow, layer: &WatermarkLayer) -> Result<VoiceWindow, CovertError> {
        Ok(embed_bits(window, layer, &self.bits)?)
    }

    /// Packs one header per packet; packets past the last PDU get the empty
    /// header.
    pub fn pack(&self, packets: &[SimPacket]) -> Result<Vec<SimPacket>, CovertError> {
        if packets.len() != WINDOW_FRAMES {
            return Err(CovertError::PacketCount { expected: WINDOW_FRAMES, got: packets.len() });
        }
        Ok(packets
            .iter()
            .enumerate()
            .map(|(i, p)| pack_header(self.headers.get(i).unwrap_or(&CovertHeader::EMPTY), p))
            .collect())
    }

    pub fn apply(
        &self,
        window: &VoiceWindow,
        layer: &WatermarkLayer,
        packets: &[SimPacket],
    ) -> Result<(VoiceWindow, Vec<SimPacket>), CovertError> {
        let packed = self.pack(packets)?;
        Ok((self.embed(window, layer)?, packed))
    }
}

impl Default for CovertFrame {
    fn default() -> Self {
        CovertFrame::new()
    }
}

/// Writes a single PDU into a window and its packets.
pub fn pdu_encode(
    pdu: &CovertPdu,
    window: &VoiceWindow,
    layer: &WatermarkLayer,
    packets: &[SimPacket],
) -> Result<(VoiceWindow, Vec<SimPacket>), CovertError> {
    let mut frame = CovertFrame::new();
    frame.push(pdu)?;
    frame.apply(window, layer, packets)
}

/// Reads every PDU of a window back, in transmission order.
pub fn pdu_decode(window: &VoiceWindow, layer: &WatermarkLayer, packets: &[SimPacket]) -> Result<Vec<CovertPdu>, CovertError> {
    if packets.len() != WINDOW_FRAMES {
        return Err(CovertError::PacketCount { expected: WINDOW_FRAMES, got: packets.len() });
    }
    let bits = extract_bits(window, layer, LAYER_CAPACITY)?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<Vec<bool>, CovertError> {
        let out = bits.get(cursor..cursor + n).ok_or(CovertError::Truncated)?.to_vec();
        cursor += n;
        Ok(out)
    };
    let mut pdus = Vec::new();
    let mut i = 0;
    while i < packets.len() && i < MAX_PDUS_PER_WINDOW {
        let h = unpack_header(&packets[i]);
        if !h.start {
            break;
        }
        if !h.is_valid() {
            return Err(CovertError::MalformedHeader { packet: i, bits: h.to_bits() });
        }
        if h.fragment as usize != i {
            return Err(CovertError::FragmentOrder { packet: i, got: h.fragment });
        }
        let payload = match (h.payload_type, h.post_auth) {
            (PayloadType::Security, true) => take(POST_AUTH_BITS)?,
            (PayloadType::Security, false) => take(TOKEN_BITS)?,
            (PayloadType::Informational, _) => {
                let len = bits_to_uint(&take(8)?) as usize;
                if len > MAX_INFO_BITS {
                    return Err(CovertError::PayloadLength { kind: "informational", len });
                }
                take(len)?
            }
        };
        pdus.push(CovertPdu { header: h, payload });
        i += 1;
    }
    if let Some(stray) = (i..packets.len()).find(|&j| unpack_header(&packets[j]) != CovertHeader::EMPTY) {
        return Err(CovertError::StrayHeader { packet: stray });
    }
    Ok(pdus)
}

/// RFC 1071 ones-complement sum, used as the natural UDP checksum value
/// before the covert bit overwrites its lowest bit.
pub fn internet_checksum(data: &[u8]) -> u16 {
    let mut sum: u32 = data
        .chunks(2)
        .map(|c| u16::from_be_bytes([c[0], *c.get(1).unwrap_or(&0)]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Turns windows into PCMU packets with consecutive sequence numbers.
#[derive(Debug, Clone)]
pub struct Packetizer {
    ssrc: u32,
    next_seq: u16,
    next_timestamp: u32,
    next_ip_id: u16,
}

impl Packetizer {
    pub fn new(ssrc: u32, first_seq: u16, first_ip_id: u16) -> Packetizer {
        Packetizer { ssrc, next_seq: first_seq, next_timestamp: 0, next_ip_id: first_ip_id }
    }

    pub fn packetize(&mut self, window: &VoiceWindow) -> Vec<SimPacket> {
        window
            .frames()
            .map(|frame| {
                let payload = g711::encode_frame(frame);
                let p = SimPacket {
                    ip_id: self.next_ip_id,
                    udp_checksum: internet_checksum(&payload),
                    rtp_padding: false,
                    rtp_extension: false,
                    rtp_seq: self.next_seq,
                    rtp_timestamp: self.next_timestamp,
                    ssrc: self.ssrc,
                    payload,
                };
                self.next_seq = self.next_seq.wrapping_add(1);
                self.next_ip_id = self.next_ip_id.wrapping_add(1);
                self.next_timestamp = self.next_timestamp.wrapping_add(FRAME_SAMPLES as u32);
                p
            })
            .collect()
    }
}

/// Decodes a window's packets; a missing packet becomes a silent frame.
pub fn depacketize(index: u32, packets: &[Option<SimPacket>]) -> VoiceWindow {
    let mut samples = Vec::with_capacity(FRAME_SAMPLES * WINDOW_FRAMES);
    for p in packets.iter().take(WINDOW_FRAMES) {
        match p {
            Some(p) if p.payload.len() == FRAME_SAMPLES => samples.extend(g711::decode_frame(&p.payload)),
            _ => samples.extend(std::iter::repeat_n(0i16, FRAME_SAMPLES)),
        }
    }
    samples.resize(FRAME_SAMPLES * WINDOW_FRAMES, 0);
    VoiceWindow::new(index, samples).unwrap()
}

/// One record of a packet trace: header fields in hex, payload length and the
/// six covert bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub rtp_seq: u16,
    pub rtp_timestamp: u32,
    pub ip_id: u16,
    pub udp_checksum: u16,
    pub rtp_padding: bool,
    pub rtp_extension: bool,
    pub payload_len: usize,
    pub covert: u8,
}

impl From<&SimPacket> for TraceRecord {
    fn from(p: &SimPacket) -> Self {
        TraceRecord {
            rtp_seq: p.rtp_seq,
            rtp_timestamp: p.rtp_timestamp,
            ip_id: p.ip_id,
            udp_checksum: p.udp_checksum,
            rtp_padding: p.rtp_padding,
            rtp_extension: p.rtp_extension,
            payload_len: p.payload.len(),
            covert: unpack_header(p).to_bits(),
        }
    }
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seq={:04x} ts={:08x} ipid={:04x} csum={:04x} p={} x={} len={} covert={:06b}",
            self.rtp_seq,
            self.rtp_timestamp,
            self.ip_id,
            self.udp_checksum,
            self.rtp_padding as u8,
            self.rtp_extension as u8,
            self.payload_len,
            self.covert
        )
    }
}

impl FromStr for TraceRecord {
    type Err = CovertError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || CovertError::Packet(format!("bad trace record: {line}"));
        let mut rec = TraceRecord {
            rtp_seq: 0,
            rtp_timestamp: 0,
            ip_id: 0,
            udp_checksum: 0,
            rtp_padding: false,
            rtp_extension: false,
            payload_len: 0,
            covert: 0,
        };
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "seq" => rec.rtp_seq = u16::from_str_radix(v, 16).map_err(|_| bad())?,
                "ts" => rec.rtp_timestamp = u32::from_str_radix(v, 16).map_err(|_| bad())?,
                "ipid" => rec.ip_id = u16::from_str_radix(v, 16).map_err(|_| bad())?,
                "csum" => rec.udp_checksum = u16::from_str_radix(v, 16).map_err(|_| bad())?,
                "p" => rec.rtp_padding = v == "1",
                "x" => rec.rtp_extension = v == "1",
                "len" => rec.payload_len = v.parse().map_err(|_| bad())?,
                "covert" => rec.covert = u8::from_str_radix(v, 2).map_err(|_| bad())?,
                _ => return Err(bad()),
            }
            seen += 1;
        }
        if seen != 8 {
            return Err(bad());
        }
        Ok(rec)
    }
}

/// Newline-delimited trace of a packet sequence.
pub fn write_trace(packets: &[SimPacket]) -> String {
    packets.iter().map(|p| format!("{}\n", TraceRecord::from(p))).collect()
}
