//! Scenario results: one JSON document plus a short text summary.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::covert::CovertStats;
use crate::gateway::{GatewayEvent, MgcDecision, WindowVerdict};
use crate::token::VerifyResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    CompletedClean,
    DetectedAndTornDown { window: u32 },
    GracefulTeardown,
    /// The adversary changed traffic and nothing noticed.
    Undetected,
}

impl Outcome {
    pub fn kind(&self) -> &'static str {
        match self {
            Outcome::CompletedClean => "completed-clean",
            Outcome::DetectedAndTornDown { .. } => "detected-and-torn-down",
            Outcome::GracefulTeardown => "graceful-teardown",
            Outcome::Undetected => "undetected",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::DetectedAndTornDown { window } => write!(f, "{}@{window}", self.kind()),
            _ => f.write_str(self.kind()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WindowRecord {
    pub window: u32,
    /// Far endpoint's check; absent when the window never reached it.
    pub layer1: Option<WindowVerdict>,
    pub layer2: WindowVerdict,
    pub lot: u32,
    pub decision: Option<MgcDecision>,
    pub r: Option<String>,
    pub vf: Option<String>,
    pub post_auth: Vec<VerifyResult>,
    pub forwarded: bool,
    pub teardown_authenticated: bool,
    pub rolled_back: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SbSummary {
    pub sender: Vec<String>,
    pub receiver: Vec<String>,
    pub equal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CovertSummary {
    pub sender: CovertStats,
    pub receiver: CovertStats,
    /// Octet count the sender last reported in an informational PDU.
    pub reported_octets: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WireStats {
    pub packets: usize,
    pub payload_bytes: usize,
    pub wire_bytes: usize,
    /// The same audio packetized with no security at all.
    pub baseline_payload_bytes: usize,
    pub baseline_wire_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub duration: u32,
    pub delta: u16,
    pub k: usize,
    pub outcome: Outcome,
    pub windows: Vec<WindowRecord>,
    pub lot_trace: Vec<u32>,
    pub rollbacks: usize,
    pub signalling: SbSummary,
    pub isup_delivered: Vec<String>,
    pub covert: CovertSummary,
    pub wire: WireStats,
    pub tampered: usize,
    pub sender_events: Vec<String>,
    pub receiver_events: Vec<String>,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Event log: receiver lines, then sender lines, each tagged with its
    /// gateway.
    pub fn event_log(&self) -> String {
        let mut out = String::new();
        for (tag, lines) in [("b", &self.receiver_events), ("a", &self.sender_events)] {
            for l in lines {
                out.push_str(&format!("mg={tag} {l}\n"));
            }
        }
        out
    }

    pub fn count(&self, layer2: WindowVerdict) -> usize {
        self.windows.iter().filter(|w| w.layer2 == layer2).count()
    }

    pub fn summary(&self) -> String {
        let l1 = |v| self.windows.iter().filter(|w| w.layer1 == Some(v)).count();
        let mut s = format!(
            "scenario {:?} seed {} ({} windows, delta {}, k {})\n",
            self.name, self.seed, self.duration, self.delta, self.k
        );
        s += &format!("outcome: {}\n", self.outcome);
        s += &format!(
            "layer 2: {} match, {} mismatch, {} inconclusive\n",
            self.count(WindowVerdict::Match),
            self.count(WindowVerdict::Mismatch),
            self.count(WindowVerdict::Inconclusive)
        );
        s += &format!("layer 1: {} match, {} mismatch\n", l1(WindowVerdict::Match), l1(WindowVerdict::Mismatch));
        s += &format!("lot: {:?}\n", self.lot_trace);
        s += &format!(
            "signalling buffers {} ({} / {} entries), {} rollback(s)\n",
            if self.signalling.equal { "equal" } else { "differ" },
            self.signalling.sender.len(),
            self.signalling.receiver.len(),
            self.rollbacks
        );
        s += &format!(
            "post-auth: {} match, {} mismatch, {} skipped\n",
            self.covert.receiver.post_auth_match, self.covert.receiver.post_auth_mismatch, self.covert.receiver.post_auth_skipped
        );
        s += &format!(
            "wire: {} packets, {} payload bytes (baseline {}), {} bytes on the wire (baseline {})\n",
            self.wire.packets,
            self.wire.payload_bytes,
            self.wire.baseline_payload_bytes,
            self.wire.wire_bytes,
            self.wire.baseline_wire_bytes
        );
        s
    }
}

/// Summary rebuilt from an event log written by [`ScenarioReport::event_log`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LogSummary {
    pub windows: usize,
    pub matches: usize,
    pub mismatches: usize,
    pub inconclusive: usize,
    pub lot_trace: Vec<u32>,
    pub rollbacks: usize,
    pub terminated: Option<String>,
    pub unparsed: usize,
}

pub fn summarize_log(text: &str) -> LogSummary {
    let mut s = LogSummary::default();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let receiver = !line.contains("mg=a ");
        match line.parse::<GatewayEvent>() {
            Ok(GatewayEvent::Window { result, lot, .. }) if receiver => {
                s.windows += 1;
                match result {
                    WindowVerdict::Match => s.matches += 1,
                    WindowVerdict::Mismatch => s.mismatches += 1,
                    WindowVerdict::Inconclusive => s.inconclusive += 1,
                }
                s.lot_trace.push(lot);
            }
            Ok(GatewayEvent::Rollback { .. }) if receiver => s.rollbacks += 1,
            Ok(e @ GatewayEvent::Terminated { .. }) if receiver => s.terminated = Some(e.to_string()),
            Ok(_) => {}
            Err(_) => s.unparsed += 1,
        }
    }
    s
}

impl fmt::Display for LogSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} windows: {} match, {} mismatch, {} inconclusive",
            self.windows, self.matches, self.mismatches, self.inconclusive
        )?;
        writeln!(f, "lot: {:?}", self.lot_trace)?;
        writeln!(f, "rollbacks: {}", self.rollbacks)?;
        if let Some(t) = &self.terminated {
            writeln!(f, "{t}")?;
        }
        if self.unparsed > 0 {
            writeln!(f, "{} unparsed line(s)", self.unparsed)?;
        }
        Ok(())
    }
}
