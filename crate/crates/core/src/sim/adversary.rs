//! Attacks on the IP leg. Every action is persistent: once it starts it
//! keeps acting on all matching traffic.

use std::collections::HashMap;

use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covert::{pack_header, unpack_header, CovertHeader, SimPacket};
use crate::signalling::{parse_sip, serialize_sip, SignallingMessage, SipMessage};
use crate::watermark::{g711, qim_decode, qim_embed, FRAME_SAMPLES, WINDOW_FRAMES};

use super::channel::Datagram;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AdversaryAction {
    None,
    /// Moves this fraction of watermark carrier samples (both layers) to
    /// the opposite lattice.
    FlipVoiceBits { rate: f64 },
    /// Sets `field` (a header name, or `body`) of every SIP message whose
    /// label is `message`, e.g. `INVITE` or `200/INVITE`.
    ReplaceSignalling { message: String, field: String, value: String },
    /// Sends a forged BYE to the far gateway just before window `at_window`.
    InjectTeardown { at_window: u32 },
    /// Records window `index` and plays it again in place of every later
    /// window.
    ReplayWindow { index: u32 },
    /// Inverts all six covert header bits of packet `packet` in each window.
    CorruptCovertHeader { packet: usize },
    /// Drops each voice packet with this probability.
    DropPackets { rate: f64 },
}

impl AdversaryAction {
    pub fn validate(&self, duration: u32) -> Result<(), String> {
        match self {
            AdversaryAction::FlipVoiceBits { rate } | AdversaryAction::DropPackets { rate }
                if !(0.0..=1.0).contains(rate) =>
            {
                Err(format!("rate {rate} outside [0, 1]"))
            }
            AdversaryAction::InjectTeardown { at_window } if *at_window == 0 || *at_window > duration => {
                Err(format!("at_window {at_window} outside 1..={duration}"))
            }
            AdversaryAction::ReplayWindow { index } if *index == 0 || *index >= duration => {
                Err(format!("replay index {index} outside 1..{duration}"))
            }
            AdversaryAction::CorruptCovertHeader { packet } if *packet >= WINDOW_FRAMES => {
                Err(format!("packet {packet} outside 0..{WINDOW_FRAMES}"))
            }
            AdversaryAction::ReplaceSignalling { field, .. } if field.is_empty() => Err("empty field name".into()),
            _ => Ok(()),
        }
    }
}

/// Window number (from 1) and slot of a voice packet, from its RTP
/// timestamp.
pub fn packet_position(p: &SimPacket) -> (u32, usize) {
    let frame = p.rtp_timestamp / FRAME_SAMPLES as u32;
    (frame / WINDOW_FRAMES as u32 + 1, (frame % WINDOW_FRAMES as u32) as usize)
}

/// Applies legitimate proxy edits: each hop adds a Via and a Record-Route
/// and decrements Max-Forwards.
pub fn proxy_rewrite(m: &mut SipMessage, hops: usize) {
    for hop in 1..=hops {
        m.prepend_header("Via", &format!("SIP/2.0/UDP proxy{hop}.transit.example;branch=z9hG4bKhop{hop}"));
        m.prepend_header("Record-Route", &format!("<sip:proxy{hop}.transit.example;lr>"));
        if let Some(mf) = m.header("Max-Forwards").and_then(|v| v.trim().parse::<u32>().ok()) {
            m.set_header("Max-Forwards", &mf.saturating_sub(1).to_string());
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adversary {
    actions: Vec<AdversaryAction>,
    delta: u16,
    rng: ChaCha8Rng,
    replay: HashMap<usize, SimPacket>,
    last_invite: Option<SipMessage>,
    injected: bool,
    tampered: usize,
}

impl Adversary {
    pub fn new(actions: Vec<AdversaryAction>, delta: u16, seed: u64) -> Adversary {
        Adversary {
            actions,
            delta,
            rng: ChaCha8Rng::seed_from_u64(seed),
            replay: HashMap::new(),
            last_invite: None,
            injected: false,
            tampered: 0,
        }
    }

    /// Number of datagrams the adversary altered, dropped or injected.
    pub fn tampered(&self) -> usize {
        self.tampered
    }

    pub fn is_passive(&self) -> bool {
        self.actions.iter().all(|a| *a == AdversaryAction::None)
    }

    /// Runs one datagram through every action; returns what reaches the
    /// far side, in order.
    pub fn process(&mut self, d: Datagram) -> Vec<Datagram> {
        match d {
            Datagram::Sip(bytes) => vec![Datagram::Sip(self.on_sip(bytes))],
            Datagram::Rtp(p) => {
                let mut out = self.injections(&p);
                out.extend(self.on_rtp(p).map(Datagram::Rtp));
                out
            }
            control => vec![control],
        }
    }

    fn on_sip(&mut self, bytes: Vec<u8>) -> Vec<u8> {
        let Ok(mut m) = parse_sip(&bytes) else {
            return bytes;
        };
        if m.method() == Some("INVITE") {
            self.last_invite = Some(m.clone());
        }
        let label = SignallingMessage::Sip(m.clone()).label();
        let mut changed = false;
        for a in &self.actions {
            if let AdversaryAction::ReplaceSignalling { message, field, value } = a {
                if *message == label {
                    if field.eq_ignore_ascii_case("body") {
                        m.body = value.as_bytes().to_vec();
                        let len = m.body.len().to_string();
                        m.set_header("Content-Length", &len);
                    } else {
                        m.set_header(field, value);
                    }
                    changed = true;
                }
            }
        }
        if changed {
            debug!("adversary rewrote {label}");
            self.tampered += 1;
            serialize_sip(&m)
        } else {
            bytes
        }
    }

    fn injections(&mut self, p: &SimPacket) -> Vec<Datagram> {
        let (window, slot) = packet_position(p);
        let due = self.actions.iter().any(|a| matches!(a, AdversaryAction::InjectTeardown { at_window } if *at_window == window));
        if !due || slot != 0 || self.injected {
            return Vec::new();
        }
        let Some(invite) = &self.last_invite else {
            return Vec::new();
        };
        self.injected = true;
        self.tampered += 1;
        debug!("adversary injects BYE before window {window}");
        vec![Datagram::Sip(serialize_sip(&forged_bye(invite)))]
    }

    fn on_rtp(&mut self, mut p: SimPacket) -> Option<SimPacket> {
        let (window, slot) = packet_position(&p);
        let mut changed = false;
        for a in self.actions.clone() {
            match a {
                AdversaryAction::ReplayWindow { index } => {
                    if window == index {
                        self.replay.insert(slot, p.clone());
                    } else if window > index {
                        if let Some(old) = self.replay.get(&slot) {
                            p = old.clone();
                            changed = true;
                        }
                    }
                }
                AdversaryAction::FlipVoiceBits { rate } => {
                    let base = slot * FRAME_SAMPLES;
                    for (j, code) in p.payload.iter_mut().enumerate() {
                        // Carrier cells of either layer sit at even indices.
                        if (base + j).is_multiple_of(2) && self.rng.random::<f64>() < rate {
                            let s = g711::decode(*code);
                            *code = g711::encode(qim_embed(s, !qim_decode(s, self.delta), self.delta));
                            changed = true;
                        }
                    }
                }
                AdversaryAction::CorruptCovertHeader { packet } if packet == slot => {
                    let h = CovertHeader::from_bits(unpack_header(&p).to_bits() ^ 0b11_1111);
                    p = pack_header(&h, &p);
                    changed = true;
                }
                AdversaryAction::DropPackets { rate }
                    if self.rng.random::<f64>() < rate => {
                        self.tampered += 1;
                        return None;
                    }
                _ => {}
            }
        }
        if changed {
            self.tampered += 1;
        }
        Some(p)
    }
}

/// A BYE assembled from an observed INVITE, as an on-path attacker could.
pub fn forged_bye(invite: &SipMessage) -> SipMessage {
    let seq = invite.cseq().map(|(n, _)| n).unwrap_or(1);
    let mut bye = SipMessage::request("BYE", &invite.start_uri().unwrap_or_default())
        .with_header("Via", "SIP/2.0/UDP attacker.example;branch=z9hG4bKforged")
        .with_header("Max-Forwards", "70");
    for h in ["From", "To", "Call-ID"] {
        if let Some(v) = invite.header(h) {
            bye = bye.with_header(h, v);
        }
    }
    bye.with_header("CSeq", &format!("{} BYE", seq + 1))
}
