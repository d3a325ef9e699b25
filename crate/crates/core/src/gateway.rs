//! Media gateway / controller state for one direction of a call.
//!
//! The sending gateway hashes voice features, combines them with the latest
//! signalling digest into a token and writes the token (plus the covert PDU
//! stream) into the gateway watermark layer. The receiving gateway extracts
//! it, rebuilds the token locally, reports the comparison to its controller
//! with a Notify, and keeps a Level of Trust that decides whether the call
//! lives on.
//!
//! Teardown messages are hashed like any other message but do not stop media
//! by themselves: the call stays in `TeardownPending` until the next window
//! proves the peer really sent the teardown.

use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use log::warn;
use thiserror::Error;

use crate::bits::{bits_to_uint, uint_to_bits};
use crate::covert::{
    depacketize, pdu_decode, CovertDecoder, CovertEncoder, CovertError, CovertFrame, CovertPdu, CovertStats,
    PayloadType, Packetizer, SimPacket, DEFAULT_CHAIN_K,
};
use crate::signalling::{message_digest, MegacoNotify, ObservedEvent, SignallingError, SignallingMessage};
use crate::token::{
    build_token, verify_token, ClockMode, Digest, SignallingHashBuffer, Token, TokenError, TokenParams, VerifyResult,
};
use crate::watermark::{voice_feature, Layer, VoiceWindow, WatermarkError, WatermarkLayer, DEFAULT_DELTA, WINDOW_FRAMES};

/// Share of a window's packets that must arrive for a lossy window to be
/// excused rather than failed.
pub const LOSS_TOLERANCE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("operation needs a {0:?} gateway")]
    WrongRole(Role),
    #[error("media is not flowing in phase {0:?}")]
    NotActive(CallPhase),
    #[error("no teardown is pending")]
    NoTeardownPending,
    #[error("lot configuration invalid: {0}")]
    Lot(String),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Signalling(#[from] SignallingError),
    #[error(transparent)]
    Covert(#[from] CovertError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LotConfig {
    pub initial: u32,
    pub max: u32,
    pub reward: u32,
    pub penalty: u32,
}

impl Default for LotConfig {
    fn default() -> Self {
        LotConfig { initial: 3, max: 10, reward: 1, penalty: 2 }
    }
}

impl LotConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max == 0 || self.initial == 0 || self.initial > self.max {
            return Err(GatewayError::Lot(format!("need 0 < initial ({}) <= max ({})", self.initial, self.max)));
        }
        if self.penalty == 0 {
            return Err(GatewayError::Lot("penalty must be positive".into()));
        }
        Ok(())
    }

    pub fn update(&self, lot: u32, result: VerifyResult) -> u32 {
        match result {
            VerifyResult::Match => (lot + self.reward).min(self.max),
            VerifyResult::Mismatch => lot.saturating_sub(self.penalty),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MgcDecision {
    Continue,
    Teardown,
}

impl fmt::Display for MgcDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MgcDecision::Continue => "continue",
            MgcDecision::Teardown => "teardown",
        })
    }
}

pub fn mgc_decide(lot: u32) -> MgcDecision {
    if lot == 0 {
        MgcDecision::Teardown
    } else {
        MgcDecision::Continue
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Sender,
    Receiver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CallPhase {
    Setup,
    Active,
    TeardownPending,
    Terminated,
}

impl CallPhase {
    pub fn media_flows(self) -> bool {
        matches!(self, CallPhase::Active | CallPhase::TeardownPending)
    }
}

/// Where a signalling message came from, as seen by this gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Originated on this gateway's own PSTN side.
    Outbound,
    /// Arrived from the IP leg.
    Inbound,
}

/// Which signalling digest a token binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SbBinding {
    /// The most recent message only.
    Latest,
    /// A running hash over every message so far.
    #[default]
    Chained,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub role: Role,
    pub termination_id: String,
    /// Identity of the sending party (ID_A); the receiver expects it.
    pub party_id: u32,
    pub pass: Vec<u8>,
    pub lot: LotConfig,
    pub delta: u16,
    pub chain_k: usize,
    pub clock: ClockMode,
    pub binding: SbBinding,
    /// Logical time of window 0.
    pub ts_base: u32,
    pub ssrc: u32,
}

impl GatewayConfig {
    pub fn new(role: Role, party_id: u32, pass: &[u8]) -> GatewayConfig {
        GatewayConfig {
            role,
            termination_id: "rtp/1".into(),
            party_id,
            pass: pass.to_vec(),
            lot: LotConfig::default(),
            delta: DEFAULT_DELTA,
            chain_k: DEFAULT_CHAIN_K,
            clock: ClockMode::Logical,
            binding: SbBinding::default(),
            ts_base: 0,
            ssrc: 0x5eed_0001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct PendingTeardown {
    origin: Direction,
    sb_len_before: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowVerdict {
    Match,
    Mismatch,
    /// Too few packets lost to fail the window, too many to verify it.
    Inconclusive,
}

impl From<VerifyResult> for WindowVerdict {
    fn from(v: VerifyResult) -> Self {
        match v {
            VerifyResult::Match => WindowVerdict::Match,
            VerifyResult::Mismatch => WindowVerdict::Mismatch,
        }
    }
}

impl fmt::Display for WindowVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowVerdict::Match => "match",
            WindowVerdict::Mismatch => "mismatch",
            WindowVerdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationCause {
    /// The teardown message was authenticated (or sent by this side).
    Graceful,
    /// Level of Trust reached zero.
    LotExhausted,
}

/// One line of the gateway event log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GatewayEvent {
    Signalling { seq: u64, label: String, digest: String, direction: Direction },
    Sent { window: u32, vf: String, r: u32, pdus: usize },
    Window { window: u32, vf: String, r: Option<u32>, result: WindowVerdict, lot: u32, decision: Option<MgcDecision> },
    TeardownPending { seq: u64 },
    Rollback { removed: usize, restored: String },
    Terminated { cause: TerminationCause, window: u32 },
    Dropped { label: String },
}

impl fmt::Display for GatewayEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GatewayEvent::Signalling { seq, label, digest, direction } => write!(
                f,
                "event=signalling seq={seq} msg={} digest={digest} dir={}",
                label.replace(' ', "_"),
                match direction {
                    Direction::Outbound => "out",
                    Direction::Inbound => "in",
                }
            ),
            GatewayEvent::Sent { window, vf, r, pdus } => {
                write!(f, "event=sent window={window} vf={vf} r={r:08x} pdus={pdus}")
            }
            GatewayEvent::Window { window, vf, r, result, lot, decision } => write!(
                f,
                "event=window window={window} vf={vf} r={} result={result} lot={lot} decision={}",
                r.map(|r| format!("{r:08x}")).unwrap_or_else(|| "-".into()),
                decision.map(|d| d.to_string()).unwrap_or_else(|| "-".into())
            ),
            GatewayEvent::TeardownPending { seq } => write!(f, "event=teardown-pending seq={seq}"),
            GatewayEvent::Rollback { removed, restored } => {
                write!(f, "event=rollback removed={removed} restored={restored}")
            }
            GatewayEvent::Terminated { cause, window } => write!(
                f,
                "event=terminated cause={} window={window}",
                match cause {
                    TerminationCause::Graceful => "graceful",
                    TerminationCause::LotExhausted => "lot-exhausted",
                }
            ),
            GatewayEvent::Dropped { label } => write!(f, "event=dropped msg={}", label.replace(' ', "_")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad event log line: {0}")]
pub struct EventParseError(pub String);

impl FromStr for GatewayEvent {
    type Err = EventParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = || EventParseError(line.to_string());
        let fields: Vec<(&str, &str)> =
            line.split_whitespace().map(|f| f.split_once('=').ok_or_else(bad)).collect::<Result<_, _>>()?;
        let get = |k: &str| fields.iter().find(|(n, _)| *n == k).map(|(_, v)| *v).ok_or_else(bad);
        let num = |k: &str| get(k)?.parse::<u64>().map_err(|_| bad());
        let hex32 = |v: &str| u32::from_str_radix(v, 16).map_err(|_| bad());
        Ok(match get("event")? {
            "signalling" => GatewayEvent::Signalling {
                seq: num("seq")?,
                label: get("msg")?.replace('_', " "),
                digest: get("digest")?.to_string(),
                direction: match get("dir")? {
                    "out" => Direction::Outbound,
                    "in" => Direction::Inbound,
                    _ => return Err(bad()),
                },
            },
            "sent" => GatewayEvent::Sent {
                window: num("window")? as u32,
                vf: get("vf")?.to_string(),
                r: hex32(get("r")?)?,
                pdus: num("pdus")? as usize,
            },
            "window" => GatewayEvent::Window {
                window: num("window")? as u32,
                vf: get("vf")?.to_string(),
                r: match get("r")? {
                    "-" => None,
                    v => Some(hex32(v)?),
                },
                result: match get("result")? {
                    "match" => WindowVerdict::Match,
                    "mismatch" => WindowVerdict::Mismatch,
                    "inconclusive" => WindowVerdict::Inconclusive,
                    _ => return Err(bad()),
                },
                lot: num("lot")? as u32,
                decision: match get("decision")? {
                    "continue" => Some(MgcDecision::Continue),
                    "teardown" => Some(MgcDecision::Teardown),
                    "-" => None,
                    _ => return Err(bad()),
                },
            },
            "teardown-pending" => GatewayEvent::TeardownPending { seq: num("seq")? },
            "rollback" => GatewayEvent::Rollback {
                removed: num("removed")? as usize,
                restored: get("restored")?.to_string(),
            },
            "terminated" => GatewayEvent::Terminated {
                cause: match get("cause")? {
                    "graceful" => TerminationCause::Graceful,
                    "lot-exhausted" => TerminationCause::LotExhausted,
                    _ => return Err(bad()),
                },
                window: num("window")? as u32,
            },
            "dropped" => GatewayEvent::Dropped { label: get("msg")?.replace('_', " ") },
            _ => return Err(bad()),
        })
    }
}

/// What the sender puts on the wire for one window.
#[derive(Debug, Clone)]
pub struct SentWindow {
    /// The window after the gateway layer was embedded (before PCMU coding).
    pub window: VoiceWindow,
    pub packets: Vec<SimPacket>,
    pub token: Token,
    pub pdus: Vec<CovertPdu>,
}

/// Result of processing one received window.
#[derive(Debug, Clone)]
pub struct ReceivedWindow {
    pub window_index: u32,
    pub verdict: WindowVerdict,
    pub token: Option<Token>,
    pub vf: Option<Digest>,
    pub post_auth: Vec<VerifyResult>,
    pub lot: u32,
    pub notify: Option<MegacoNotify>,
    pub decision: Option<MgcDecision>,
    /// Audio handed on to the PSTN side, when media still flows.
    pub forwarded: Option<VoiceWindow>,
    pub teardown_authenticated: bool,
    pub rolled_back: bool,
    /// Sender octet count reported in the window's informational PDU.
    pub reported_octets: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct GatewayState {
    config: GatewayConfig,
    layer: WatermarkLayer,
    sb: SignallingHashBuffer,
    next_seq: u64,
    lot: u32,
    phase: CallPhase,
    pending: Option<PendingTeardown>,
    windows: u32,
    encoder: CovertEncoder,
    decoder: CovertDecoder,
    packetizer: Packetizer,
    octets: u32,
    log: Vec<GatewayEvent>,
}

impl GatewayState {
    pub fn new(config: GatewayConfig) -> Result<GatewayState, GatewayError> {
        config.lot.validate()?;
        if config.pass.is_empty() {
            return Err(TokenError::EmptyPass.into());
        }
        let layer = WatermarkLayer::new(Layer::Gateway, config.delta)?;
        Ok(GatewayState {
            layer,
            sb: SignallingHashBuffer::new(),
            next_seq: 1,
            lot: config.lot.initial,
            phase: CallPhase::Setup,
            pending: None,
            windows: 0,
            encoder: CovertEncoder::new(config.chain_k)?,
            decoder: CovertDecoder::new(config.chain_k)?,
            packetizer: Packetizer::new(config.ssrc, 0, (config.ssrc & 0xffff) as u16),
            octets: 0,
            log: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn lot(&self) -> u32 {
        self.lot
    }

    pub fn phase(&self) -> CallPhase {
        self.phase
    }

    pub fn sb(&self) -> &SignallingHashBuffer {
        &self.sb
    }

    pub fn windows(&self) -> u32 {
        self.windows
    }

    pub fn log(&self) -> &[GatewayEvent] {
        &self.log
    }

    pub fn covert_stats(&self) -> CovertStats {
        match self.config.role {
            Role::Sender => self.encoder.stats(),
            Role::Receiver => self.decoder.stats(),
        }
    }

    /// The signalling digest tokens are currently bound to.
    pub fn sm_digest(&self) -> Result<Digest, TokenError> {
        match self.config.binding {
            SbBinding::Latest => self.sb.current(),
            SbBinding::Chained => self.sb.chained(),
        }
    }

    /// Logical timestamp of window `n`.
    pub fn window_ts(&self, n: u32) -> u32 {
        self.config.ts_base.wrapping_add(n)
    }

    fn expected_ts(&self, n: u32) -> u32 {
        match self.config.clock {
            ClockMode::Logical => self.window_ts(n),
            ClockMode::Live { .. } => {
                SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as u32).unwrap_or(0)
            }
        }
    }

    /// Hashes a signalling message into the buffer. Teardowns move the call
    /// to `TeardownPending` without stopping media. Returns the stored
    /// digest, or `None` if nothing was stored: the call is already over,
    /// or the message is the peer's confirmation of our own teardown.
    pub fn on_signalling(&mut self, m: &SignallingMessage, direction: Direction) -> Result<Option<Digest>, GatewayError> {
        if self.phase == CallPhase::Terminated {
            warn!("{}: dropping {} after call termination", self.config.termination_id, m.label());
            self.log.push(GatewayEvent::Dropped { label: m.label() });
            return Ok(None);
        }
        if m.is_release_complete()
            && direction == Direction::Inbound
            && self.pending.as_ref().is_some_and(|p| p.origin == Direction::Outbound)
        {
            // The peer confirmed our own teardown. No token will cover
            // anything after this, so it is not stored.
            self.phase = CallPhase::Terminated;
            self.pending = None;
            self.log.push(GatewayEvent::Terminated { cause: TerminationCause::Graceful, window: self.windows });
            return Ok(None);
        }
        let digest = message_digest(m)?;
        let seq = self.next_seq;
        self.sb.store(seq, digest)?;
        self.next_seq += 1;
        self.log.push(GatewayEvent::Signalling { seq, label: m.label(), digest: digest.prefix_hex(4), direction });
        if m.is_teardown() {
            if self.phase != CallPhase::TeardownPending {
                self.pending = Some(PendingTeardown { origin: direction, sb_len_before: self.sb.len() - 1 });
                self.phase = CallPhase::TeardownPending;
                self.log.push(GatewayEvent::TeardownPending { seq });
            }
        } else if m.is_answer() && self.phase == CallPhase::Setup {
            self.phase = CallPhase::Active;
        }
        Ok(Some(digest))
    }

    fn sender_octet_pdu(&self) -> CovertPdu {
        CovertPdu::informational(uint_to_bits(self.octets as u64, 32)).unwrap()
    }

    /// Marks one window: voice features, token, covert PDUs, packets.
    pub fn send_window(&mut self, window: &VoiceWindow, params: &TokenParams) -> Result<SentWindow, GatewayError> {
        if self.config.role != Role::Sender {
            return Err(GatewayError::WrongRole(Role::Sender));
        }
        if !self.phase.media_flows() {
            return Err(GatewayError::NotActive(self.phase));
        }
        let sm = self.sm_digest()?;
        let vf = voice_feature(window);
        let token = build_token(&sm, &vf.digest, params)?;

        let mut pdus = self.encoder.submit(CovertPdu::token(&token));
        pdus.extend(self.encoder.submit(self.sender_octet_pdu()));
        let mut frame = CovertFrame::new();
        for pdu in &pdus {
            frame.push(pdu)?;
        }
        let marked = frame.embed(window, &self.layer)?;
        let packets = frame.pack(&self.packetizer.packetize(&marked))?;
        self.octets = self.octets.wrapping_add(packets.iter().map(|p| p.payload.len() as u32).sum());
        self.windows += 1;
        self.log.push(GatewayEvent::Sent { window: self.windows, vf: vf.digest.prefix_hex(4), r: token.r, pdus: pdus.len() });

        Ok(SentWindow { window: marked, packets, token, pdus })
    }

    /// Verifies one received window. `packets[i]` is `None` when the i-th
    /// packet of the window was lost.
    pub fn receive_window(&mut self, packets: &[Option<SimPacket>]) -> Result<ReceivedWindow, GatewayError> {
        if self.config.role != Role::Receiver {
            return Err(GatewayError::WrongRole(Role::Receiver));
        }
        if !self.phase.media_flows() {
            return Err(GatewayError::NotActive(self.phase));
        }
        if packets.len() != WINDOW_FRAMES {
            return Err(CovertError::PacketCount { expected: WINDOW_FRAMES, got: packets.len() }.into());
        }
        self.windows += 1;
        let n = self.windows;
        let window = depacketize(n, packets);
        let mut out = ReceivedWindow {
            window_index: n,
            verdict: WindowVerdict::Mismatch,
            token: None,
            vf: None,
            post_auth: Vec::new(),
            lot: self.lot,
            notify: None,
            decision: None,
            forwarded: None,
            teardown_authenticated: false,
            rolled_back: false,
            reported_octets: None,
        };

        let lost = packets.iter().filter(|p| p.is_none()).count();
        let result = if lost > 0 {
            self.decoder.resync();
            let survived = (WINDOW_FRAMES - lost) as f64 / WINDOW_FRAMES as f64;
            if survived >= LOSS_TOLERANCE {
                out.verdict = WindowVerdict::Inconclusive;
                out.forwarded = Some(window);
                self.log.push(GatewayEvent::Window {
                    window: n,
                    vf: "-".into(),
                    r: None,
                    result: WindowVerdict::Inconclusive,
                    lot: self.lot,
                    decision: None,
                });
                return Ok(out);
            }
            VerifyResult::Mismatch
        } else {
            let full: Vec<SimPacket> = packets.iter().map(|p| p.clone().unwrap()).collect();
            self.verify_window(&window, &full, &mut out)
        };

        if self.phase == CallPhase::TeardownPending
            && self.pending.as_ref().is_some_and(|p| p.origin == Direction::Inbound)
        {
            match self.authenticate_teardown(result)? {
                CallPhase::Terminated => out.teardown_authenticated = true,
                _ => out.rolled_back = true,
            }
        }

        self.lot = self.config.lot.update(self.lot, result);
        let decision = mgc_decide(self.lot);
        out.verdict = result.into();
        out.lot = self.lot;
        out.decision = Some(decision);
        out.notify = Some(MegacoNotify {
            termination_id: self.config.termination_id.clone(),
            event: if result.is_match() { ObservedEvent::TokenOk } else { ObservedEvent::TokenFail },
            window: n,
        });
        self.log.push(GatewayEvent::Window {
            window: n,
            vf: out.vf.map(|d| d.prefix_hex(4)).unwrap_or_else(|| "-".into()),
            r: out.token.map(|t| t.r),
            result: out.verdict,
            lot: self.lot,
            decision: Some(decision),
        });
        if out.teardown_authenticated {
            out.forwarded = Some(window);
        } else if decision == MgcDecision::Teardown {
            self.phase = CallPhase::Terminated;
            self.pending = None;
            self.log.push(GatewayEvent::Terminated { cause: TerminationCause::LotExhausted, window: n });
        } else {
            out.forwarded = Some(window);
        }
        Ok(out)
    }

    fn verify_window(&mut self, window: &VoiceWindow, packets: &[SimPacket], out: &mut ReceivedWindow) -> VerifyResult {
        let pdus = match pdu_decode(window, &self.layer, packets) {
            Ok(p) => p,
            Err(e) => {
                warn!("{}: window {}: covert decode failed: {e}", self.config.termination_id, out.window_index);
                self.decoder.resync();
                return VerifyResult::Mismatch;
            }
        };
        let mut ok = true;
        for pdu in &pdus {
            if let Some(v) = self.decoder.accept(pdu) {
                out.post_auth.push(v);
                ok &= v.is_match();
            }
            if pdu.header.payload_type == PayloadType::Informational && pdu.payload.len() == 32 {
                out.reported_octets = Some(bits_to_uint(&pdu.payload) as u32);
            }
        }
        let Some(token) = pdus.first().and_then(|p| p.as_token()) else {
            return VerifyResult::Mismatch;
        };
        out.token = Some(token);
        let vf = voice_feature(window).digest;
        out.vf = Some(vf);
        let Ok(sm) = self.sm_digest() else {
            return VerifyResult::Mismatch;
        };
        let fresh = self.config.clock.accepts(token.ts, self.expected_ts(out.window_index));
        let mac_ok = verify_token(&token, &sm, &vf, &self.config.pass, self.config.party_id).is_match();
        VerifyResult::from_bool(ok && fresh && mac_ok)
    }

    /// Settles a pending teardown with the verdict of the first window that
    /// covers it. A match ends the call; a mismatch means the teardown was
    /// forged, so it is discarded and the buffer restored. Returns the new
    /// phase.
    pub fn authenticate_teardown(&mut self, result: VerifyResult) -> Result<CallPhase, GatewayError> {
        if self.phase != CallPhase::TeardownPending {
            return Err(GatewayError::NoTeardownPending);
        }
        let pending = self.pending.take().ok_or(GatewayError::NoTeardownPending)?;
        match result {
            VerifyResult::Match => {
                self.phase = CallPhase::Terminated;
                self.log.push(GatewayEvent::Terminated { cause: TerminationCause::Graceful, window: self.windows });
            }
            VerifyResult::Mismatch => {
                let removed = self.sb.len() - pending.sb_len_before;
                self.sb.truncate(pending.sb_len_before);
                self.phase = CallPhase::Active;
                let restored = self.sm_digest().map(|d| d.prefix_hex(4)).unwrap_or_else(|_| "-".into());
                warn!("{}: teardown failed authentication, rolled back {removed} message(s)", self.config.termination_id);
                self.log.push(GatewayEvent::Rollback { removed, restored });
            }
        }
        Ok(self.phase)
    }
}
