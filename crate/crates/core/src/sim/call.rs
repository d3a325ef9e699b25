//! The two halves of a PSTN-IP-PSTN call: endpoint A with MG_A on the near
//! side, MG_B with endpoint B on the far side, and the IP leg between them.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::covert::{Packetizer, SimPacket, TraceRecord};
use crate::gateway::{
    CallPhase, Direction, GatewayConfig, GatewayEvent, GatewayState, MgcDecision, Role, TerminationCause,
    WindowVerdict,
};
use crate::signalling::{
    attach_isup, extract_isup_body, parse_sip, serialize_sip, IsupMessage, IsupType, SignallingMessage, SipMessage,
};
use crate::token::{TokenParams, VerifyResult};
use crate::watermark::{adda_roundtrip, VoiceWindow, WINDOW_FRAMES};

use super::adversary::{proxy_rewrite, Adversary};
use super::channel::{Datagram, Link};
use super::endpoint::PstnEndpoint;
use super::report::WindowRecord;
use super::SimError;

pub const PARTY_A: u32 = 0x0a00_0001;
pub const PARTY_B: u32 = 0x0b00_0001;
/// Logical time of window 0.
pub const TS_BASE: u32 = 1_700_000_000;

/// One direction of the IP leg as seen by the side that sends on it:
/// legitimate proxies first, then the adversary.
pub struct IpLeg<L: Link> {
    pub link: L,
    pub adversary: Adversary,
    pub proxy_hops: usize,
}

impl<L: Link> IpLeg<L> {
    pub fn send(&mut self, d: Datagram) -> Result<(), SimError> {
        let d = match d {
            Datagram::Sip(bytes) if self.proxy_hops > 0 => match parse_sip(&bytes) {
                Ok(mut m) => {
                    if m.method().is_some() {
                        proxy_rewrite(&mut m, self.proxy_hops);
                    }
                    Datagram::Sip(serialize_sip(&m))
                }
                Err(_) => Datagram::Sip(bytes),
            },
            d => d,
        };
        for out in self.adversary.process(d) {
            self.link.send(&out)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dialog {
    pub call_id: String,
    pub from: String,
    pub to: String,
    pub cic: u16,
}

impl Dialog {
    pub fn new(seed: u64) -> Dialog {
        Dialog {
            call_id: format!("{seed:016x}@gw-a.example"),
            from: format!("<sip:+48125550001@gw-a.example>;tag=a{:04x}", seed & 0xffff),
            to: "<sip:+48225550002@gw-b.example>".into(),
            cic: (seed % 4096) as u16,
        }
    }

    pub fn isup(&self, t: IsupType) -> IsupMessage {
        isup_message(t, self.cic)
    }

    fn request(&self, method: &str, cseq: u32, to: &str) -> SipMessage {
        SipMessage::request(method, "sip:+48225550002@gw-b.example")
            .with_header("Via", &format!("SIP/2.0/UDP gw-a.example;branch=z9hG4bK{method}{cseq}"))
            .with_header("Max-Forwards", "70")
            .with_header("From", &self.from)
            .with_header("To", to)
            .with_header("Call-ID", &self.call_id)
            .with_header("CSeq", &format!("{cseq} {method}"))
    }

    pub fn invite(&self) -> SipMessage {
        let m = self.request("INVITE", 1, &self.to).with_header("Contact", "<sip:gw-a.example>");
        attach_isup(m, &self.isup(IsupType::Iam)).unwrap()
    }

    pub fn ack(&self) -> SipMessage {
        self.request("ACK", 1, &self.to_tagged())
    }

    pub fn bye(&self) -> SipMessage {
        attach_isup(self.request("BYE", 2, &self.to_tagged()), &self.isup(IsupType::Rel)).unwrap()
    }

    fn to_tagged(&self) -> String {
        format!("{};tag=b1", self.to)
    }
}

/// A representative message of type `t` on circuit `cic`.
pub fn isup_message(t: IsupType, cic: u16) -> IsupMessage {
    let parameters = match t {
        IsupType::Iam => vec![0x0a, 0x06, 0x84, 0x22, 0x55, 0x05, 0x00, 0x02],
        IsupType::Acm => vec![0x16, 0x14],
        IsupType::Rel => vec![0x02, 0x80, 0x90],
        IsupType::Anm | IsupType::Rlc => Vec::new(),
    };
    IsupMessage { message_type: t, cic, parameters }
}

/// A response built from the request as received: Via, From, Call-ID and
/// CSeq copied, To tagged.
pub fn response(req: &SipMessage, code: u16, reason: &str, isup: Option<&IsupMessage>) -> SipMessage {
    let mut m = SipMessage::response(code, reason);
    for v in req.headers_named("Via") {
        m = m.with_header("Via", v);
    }
    for h in ["From", "Call-ID", "CSeq"] {
        if let Some(v) = req.header(h) {
            m = m.with_header(h, v);
        }
    }
    let to = req.header("To").unwrap_or_default();
    let to = if to.contains("tag=") { to.to_string() } else { format!("{to};tag=b1") };
    m = m.with_header("To", &to);
    match isup {
        Some(i) => attach_isup(m, i).unwrap(),
        None => m,
    }
}

fn strip_proxy_vias(m: &mut SipMessage) {
    m.headers.retain(|(n, v)| !(n.eq_ignore_ascii_case("via") && v.contains(".transit.example")));
}

/// MG_B, its controller and endpoint B.
pub struct FarSide<L: Link> {
    pub gw: GatewayState,
    pub endpoint: PstnEndpoint,
    pub out: IpLeg<L>,
    pending: Vec<Option<SimPacket>>,
    deferred_bye: Option<SipMessage>,
    pub records: Vec<WindowRecord>,
    pub isup_delivered: Vec<String>,
    pub reported_octets: Option<u32>,
    pub torn_down_at: Option<u32>,
}

impl<L: Link> FarSide<L> {
    pub fn new(gw: GatewayState, endpoint: PstnEndpoint, out: IpLeg<L>) -> FarSide<L> {
        FarSide {
            gw,
            endpoint,
            out,
            pending: vec![None; WINDOW_FRAMES],
            deferred_bye: None,
            records: Vec::new(),
            isup_delivered: Vec::new(),
            reported_octets: None,
            torn_down_at: None,
        }
    }

    fn reply(&mut self, m: SipMessage, hash: bool) -> Result<(), SimError> {
        if hash {
            self.gw.on_signalling(&SignallingMessage::Sip(m.clone()), Direction::Outbound)?;
        }
        self.out.send(Datagram::Sip(serialize_sip(&m)))
    }

    fn deliver_isup(&mut self, m: &SipMessage) {
        match extract_isup_body(m) {
            Ok(Some(isup)) => self.isup_delivered.push(isup.message_type.name().to_string()),
            Ok(None) => {}
            Err(e) => {
                warn!("far side: unreadable ISUP body: {e}");
                self.isup_delivered.push("invalid".into());
            }
        }
    }

    /// Handles one datagram from the near side. Returns `false` on `Stop`.
    pub fn handle(&mut self, d: Datagram) -> Result<bool, SimError> {
        match d {
            Datagram::Stop => return Ok(false),
            Datagram::Sip(bytes) => self.on_sip(&bytes)?,
            Datagram::Rtp(p) => {
                let (_, slot) = super::adversary::packet_position(&p);
                self.pending[slot] = Some(p);
            }
            Datagram::EndOfWindow(n) => self.on_window_end(n)?,
            Datagram::WindowAck { .. } => {}
        }
        Ok(true)
    }

    fn on_sip(&mut self, bytes: &[u8]) -> Result<(), SimError> {
        let mut m = match parse_sip(bytes) {
            Ok(m) => m,
            Err(e) => {
                warn!("far side: dropping unparsable SIP: {e}");
                return Ok(());
            }
        };
        if self.gw.phase() == CallPhase::Terminated {
            self.gw.on_signalling(&SignallingMessage::Sip(m), Direction::Inbound)?;
            return Ok(());
        }
        if let Err(e) = self.gw.on_signalling(&SignallingMessage::Sip(m.clone()), Direction::Inbound) {
            warn!("far side: cannot hash {}: {e}", SignallingMessage::Sip(m.clone()).label());
            return Ok(());
        }
        self.deliver_isup(&m);
        strip_proxy_vias(&mut m);
        match m.method() {
            Some("INVITE") => {
                self.reply(response(&m, 183, "Session Progress", Some(&isup_like(&m, IsupType::Acm))), true)?;
                self.reply(response(&m, 200, "OK", Some(&isup_like(&m, IsupType::Anm))), true)?;
            }
            // Held back until the teardown is authenticated.
            Some("BYE") if self.deferred_bye.is_none() => self.deferred_bye = Some(m),
            _ => {}
        }
        Ok(())
    }

    fn on_window_end(&mut self, n: u32) -> Result<(), SimError> {
        let packets = std::mem::replace(&mut self.pending, vec![None; WINDOW_FRAMES]);
        if !self.gw.phase().media_flows() {
            return self.out.send(Datagram::WindowAck { window: n, media: false });
        }
        let res = self.gw.receive_window(&packets)?;
        if res.reported_octets.is_some() {
            self.reported_octets = res.reported_octets;
        }
        let layer1 = match (&res.forwarded, res.verdict) {
            (None, _) => None,
            (Some(_), WindowVerdict::Inconclusive) => {
                self.endpoint.skip();
                Some(WindowVerdict::Inconclusive)
            }
            (Some(w), _) => Some(self.endpoint.verify(&adda_roundtrip(w), PARTY_A).0.into()),
        };
        self.records.push(WindowRecord {
            window: n,
            layer1,
            layer2: res.verdict,
            lot: res.lot,
            decision: res.decision,
            r: res.token.map(|t| format!("{:08x}", t.r)),
            vf: res.vf.map(|d| d.prefix_hex(4)),
            post_auth: res.post_auth.clone(),
            forwarded: res.forwarded.is_some(),
            teardown_authenticated: res.teardown_authenticated,
            rolled_back: res.rolled_back,
        });
        if res.rolled_back {
            self.deferred_bye = None;
        }
        if res.teardown_authenticated {
            if let Some(bye) = self.deferred_bye.take() {
                let rlc = isup_like(&bye, IsupType::Rlc);
                // MG_B is already terminated; the confirmation is not hashed.
                self.reply(response(&bye, 200, "OK", Some(&rlc)), false)?;
            }
        }
        if res.decision == Some(MgcDecision::Teardown) {
            self.torn_down_at = Some(n);
        }
        self.out.send(Datagram::WindowAck { window: n, media: self.gw.phase().media_flows() })
    }
}

/// The ISUP message the far exchange answers with, on the circuit the
/// request's IAM or REL named.
fn isup_like(req: &SipMessage, t: IsupType) -> IsupMessage {
    let cic = extract_isup_body(req).ok().flatten().map(|i| i.cic).unwrap_or(0);
    isup_message(t, cic)
}

/// Endpoint A, MG_A and its controller.
pub struct NearSide {
    pub gw: GatewayState,
    pub endpoint: PstnEndpoint,
    pub dialog: Dialog,
    endpoint_rng: ChaCha8Rng,
    gateway_rng: ChaCha8Rng,
    baseline: Packetizer,
    pub packets: usize,
    pub payload_bytes: usize,
    pub wire_bytes: usize,
    pub baseline_payload_bytes: usize,
    pub baseline_wire_bytes: usize,
    pub trace: Vec<TraceRecord>,
}

/// What the near side needs from the transport.
pub trait Wire {
    fn send(&mut self, d: Datagram) -> Result<(), SimError>;
    /// Next datagram from the far side.
    fn next(&mut self) -> Result<Datagram, SimError>;
}

impl NearSide {
    pub fn new(gw: GatewayState, endpoint: PstnEndpoint, seed: u64) -> NearSide {
        NearSide {
            gw,
            endpoint,
            dialog: Dialog::new(seed),
            endpoint_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x00e1_d901),
            gateway_rng: ChaCha8Rng::seed_from_u64(seed ^ 0x006a_7e00),
            baseline: Packetizer::new(0, 0, 0),
            packets: 0,
            payload_bytes: 0,
            wire_bytes: 0,
            baseline_payload_bytes: 0,
            baseline_wire_bytes: 0,
            trace: Vec::new(),
        }
    }

    fn send_sip<W: Wire>(&mut self, wire: &mut W, m: SipMessage) -> Result<(), SimError> {
        self.gw.on_signalling(&SignallingMessage::Sip(m.clone()), Direction::Outbound)?;
        wire.send(Datagram::Sip(serialize_sip(&m)))
    }

    fn on_reply(&mut self, bytes: &[u8]) -> Result<(), SimError> {
        match parse_sip(bytes) {
            Ok(m) => {
                self.gw.on_signalling(&SignallingMessage::Sip(m), Direction::Inbound)?;
            }
            Err(e) => warn!("near side: dropping unparsable SIP: {e}"),
        }
        Ok(())
    }

    /// IAM on the PSTN side becomes an INVITE; waits for the answer.
    pub fn setup<W: Wire>(&mut self, wire: &mut W) -> Result<(), SimError> {
        let invite = self.dialog.invite();
        self.send_sip(wire, invite)?;
        while self.gw.phase() == CallPhase::Setup {
            match wire.next()? {
                Datagram::Sip(b) => self.on_reply(&b)?,
                other => return Err(SimError::Protocol(format!("unexpected {other:?} during setup"))),
            }
        }
        let ack = self.dialog.ack();
        self.send_sip(wire, ack)
    }

    /// REL on the PSTN side becomes a BYE carrying it.
    pub fn hangup<W: Wire>(&mut self, wire: &mut W) -> Result<(), SimError> {
        let bye = self.dialog.bye();
        self.send_sip(wire, bye)
    }

    /// Sends window `n` and waits for the far side to finish with it.
    /// Returns whether media may continue.
    pub fn send_window<W: Wire>(&mut self, wire: &mut W, n: u32, speech: &VoiceWindow) -> Result<bool, SimError> {
        let from_phone = self.endpoint.send(speech, self.endpoint_rng.random());
        for p in self.baseline.packetize(&from_phone) {
            self.baseline_payload_bytes += p.payload.len();
            self.baseline_wire_bytes += p.to_bytes().len();
        }
        let params = TokenParams {
            r: self.gateway_rng.random(),
            ts: self.gw.window_ts(n),
            id: self.gw.config().party_id,
            pass: self.gw.config().pass.clone(),
        };
        let sent = self.gw.send_window(&from_phone, &params)?;
        for p in sent.packets {
            self.packets += 1;
            self.payload_bytes += p.payload.len();
            self.wire_bytes += p.to_bytes().len();
            self.trace.push(TraceRecord::from(&p));
            wire.send(Datagram::Rtp(p))?;
        }
        wire.send(Datagram::EndOfWindow(n))?;
        loop {
            match wire.next()? {
                Datagram::Sip(b) => self.on_reply(&b)?,
                Datagram::WindowAck { window, media } if window == n => return Ok(media),
                other => return Err(SimError::Protocol(format!("unexpected {other:?} after window {n}"))),
            }
        }
    }
}

pub fn gateway_config(role: Role, pass: &str, lot: crate::gateway::LotConfig, delta: u16, k: usize) -> GatewayConfig {
    GatewayConfig {
        termination_id: match role {
            Role::Sender => "rtp/a1".into(),
            Role::Receiver => "rtp/b1".into(),
        },
        lot,
        delta,
        chain_k: k,
        ts_base: TS_BASE,
        ..GatewayConfig::new(role, PARTY_A, pass.as_bytes())
    }
}

pub fn rollbacks(log: &[GatewayEvent]) -> usize {
    log.iter().filter(|e| matches!(e, GatewayEvent::Rollback { .. })).count()
}

pub fn graceful(log: &[GatewayEvent]) -> bool {
    log.iter().any(|e| matches!(e, GatewayEvent::Terminated { cause: TerminationCause::Graceful, .. }))
}

pub fn all_match(records: &[WindowRecord]) -> bool {
    records.iter().all(|r| {
        r.layer2 == WindowVerdict::Match
            && r.layer1.is_none_or(|v| v == WindowVerdict::Match)
            && r.post_auth.iter().all(|v| *v == VerifyResult::Match)
    })
}
