//! Scenario files (TOML).
//!
//! ```toml
//! name = "flip"
//! duration = 10
//! seed = 7
//! expect = "detected-and-torn-down@2"
//!
//! [lot]
//! initial = 3
//!
//! [[adversary]]
//! kind = "flip-voice-bits"
//! rate = 1.0
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gateway::LotConfig;
use crate::watermark::{CALIBRATED_DELTAS, DEFAULT_DELTA};

use super::adversary::AdversaryAction;
use super::report::Outcome;
use super::SimError;

pub const SEED_ENV: &str = "VOICESEAL_SEED";
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    #[default]
    Memory,
    Udp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum AudioSource {
    Synthetic {
        #[serde(default)]
        seed: Option<u64>,
    },
    Wav {
        path: PathBuf,
    },
}

impl Default for AudioSource {
    fn default() -> Self {
        AudioSource::Synthetic { seed: None }
    }
}

/// `expect = "<outcome>"` or `"detected-and-torn-down@<window>"`; without a
/// window any teardown window is accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expectation {
    pub kind: String,
    pub window: Option<u32>,
}

pub const OUTCOME_KINDS: [&str; 4] = ["completed-clean", "detected-and-torn-down", "graceful-teardown", "undetected"];

impl FromStr for Expectation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, window) = match s.split_once('@') {
            Some((k, w)) => (k, Some(w.parse::<u32>().map_err(|_| format!("bad window in expect {s:?}"))?)),
            None => (s, None),
        };
        if !OUTCOME_KINDS.contains(&kind) {
            return Err(format!("unknown outcome {kind:?}; expected one of {}", OUTCOME_KINDS.join(", ")));
        }
        if window.is_some() && kind != "detected-and-torn-down" {
            return Err(format!("only detected-and-torn-down takes a window, got {s:?}"));
        }
        Ok(Expectation { kind: kind.to_string(), window })
    }
}

impl TryFrom<String> for Expectation {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Expectation> for String {
    fn from(e: Expectation) -> String {
        e.to_string()
    }
}

impl fmt::Display for Expectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.window {
            Some(w) => write!(f, "{}@{w}", self.kind),
            None => f.write_str(&self.kind),
        }
    }
}

impl Expectation {
    pub fn matches(&self, outcome: &Outcome) -> bool {
        outcome.kind() == self.kind
            && match (self.window, outcome) {
                (Some(w), Outcome::DetectedAndTornDown { window }) => w == *window,
                (Some(_), _) => false,
                (None, _) => true,
            }
    }
}

fn default_delta() -> u16 {
    DEFAULT_DELTA
}

fn default_k() -> usize {
    crate::covert::DEFAULT_CHAIN_K
}

fn default_gateway_pass() -> String {
    "mg-shared-secret".into()
}

fn default_endpoint_pass() -> String {
    "endpoint-pair-secret".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    /// Number of verification windows (seconds of speech).
    pub duration: u32,
    /// Falls back to `$VOICESEAL_SEED`, then to 1.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_delta")]
    pub delta: u16,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Caller hangs up before the last window (REL / BYE).
    #[serde(default)]
    pub hangup: bool,
    /// Legitimate SIP proxies on the IP leg.
    #[serde(default)]
    pub proxy_hops: usize,
    #[serde(default)]
    pub channel: ChannelKind,
    #[serde(default)]
    pub expect: Option<Expectation>,
    #[serde(default)]
    pub audio: AudioSource,
    #[serde(default)]
    pub lot: LotConfig,
    #[serde(default)]
    pub adversary: Vec<AdversaryAction>,
    #[serde(default = "default_gateway_pass")]
    pub gateway_pass: String,
    #[serde(default = "default_endpoint_pass")]
    pub endpoint_pass: String,
}

impl ScenarioConfig {
    pub fn new(duration: u32) -> ScenarioConfig {
        ScenarioConfig {
            name: String::new(),
            duration,
            seed: None,
            delta: DEFAULT_DELTA,
            k: default_k(),
            hangup: false,
            proxy_hops: 0,
            channel: ChannelKind::Memory,
            expect: None,
            audio: AudioSource::default(),
            lot: LotConfig::default(),
            adversary: Vec::new(),
            gateway_pass: default_gateway_pass(),
            endpoint_pass: default_endpoint_pass(),
        }
    }

    pub fn from_toml(text: &str) -> Result<ScenarioConfig, SimError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a scenario file; a relative WAV path is taken relative to it.
    pub fn load(path: &Path) -> Result<ScenarioConfig, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = ScenarioConfig::from_toml(&text)?;
        if let AudioSource::Wav { path: wav } = &mut cfg.audio {
            if wav.is_relative() {
                if let Some(dir) = path.parent() {
                    *wav = dir.join(&*wav);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.duration == 0 {
            return bad("duration must be positive".into());
        }
        if !CALIBRATED_DELTAS.contains(&self.delta) {
            return bad(format!("delta {} is not one of the calibrated steps {CALIBRATED_DELTAS:?}", self.delta));
        }
        if self.k < 2 {
            return bad(format!("k = {} leaves no room for payload PDUs", self.k));
        }
        if self.hangup && self.duration < 2 {
            return bad("hangup needs at least two windows".into());
        }
        if self.gateway_pass.is_empty() || self.endpoint_pass.is_empty() {
            return bad("passwords must be non-empty".into());
        }
        self.lot.validate().map_err(|e| SimError::Config(e.to_string()))?;
        for a in &self.adversary {
            a.validate(self.duration).map_err(SimError::Config)?;
        }
        Ok(())
    }

    pub fn resolved_seed(&self) -> Result<u64, SimError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| SimError::Config(format!("{SEED_ENV}={v:?} is not a u64"))),
            Err(_) => Ok(DEFAULT_SEED),
        }
    }
}
