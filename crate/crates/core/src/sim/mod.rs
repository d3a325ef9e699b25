//! End-to-end call simulator: PSTN phone A, gateway A, the IP leg with an
//! optional adversary, gateway B, PSTN phone B.
//!
//! ```
//! use voiceseal::sim::{run_scenario, ScenarioConfig, Outcome};
//!
//! let report = run_scenario(&ScenarioConfig { seed: Some(5), ..ScenarioConfig::new(3) }).unwrap();
//! assert_eq!(report.outcome, Outcome::CompletedClean);
//! ```

pub mod adversary;
pub mod call;
pub mod channel;
pub mod config;
pub mod endpoint;
pub mod report;
pub mod speech;

use std::thread;

use thiserror::Error;

use crate::covert::TraceRecord;
use crate::gateway::{CallPhase, GatewayError, GatewayState, Role};
use crate::signalling::SignallingError;
use crate::watermark::io::{read_wav, split_windows, AudioIoError};
use crate::watermark::{VoiceWindow, WatermarkError};

pub use adversary::{Adversary, AdversaryAction};
pub use call::{FarSide, IpLeg, NearSide, Wire};
pub use channel::{ChannelError, Datagram, Link, MemoryLink, UdpLink};
pub use config::{AudioSource, ChannelKind, Expectation, ScenarioConfig};
pub use endpoint::PstnEndpoint;
pub use report::{Outcome, ScenarioReport, WindowRecord};
pub use speech::SyntheticSpeech;

use call::{all_match, gateway_config, graceful, rollbacks, PARTY_A, PARTY_B, TS_BASE};
use report::{CovertSummary, SbSummary, WireStats};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Audio(#[from] AudioIoError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Signalling(#[from] SignallingError),
    #[error(transparent)]
    Watermark(#[from] WatermarkError),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("far side stopped answering")]
    Stalled,
    #[error("far side thread panicked")]
    Thread,
}

enum Audio {
    Synthetic(SyntheticSpeech),
    Recorded(Vec<VoiceWindow>),
}

impl Audio {
    fn open(cfg: &ScenarioConfig, seed: u64) -> Result<Audio, SimError> {
        Ok(match &cfg.audio {
            AudioSource::Synthetic { seed: s } => Audio::Synthetic(SyntheticSpeech::new(s.unwrap_or(seed))),
            AudioSource::Wav { path } => {
                let windows = split_windows(&read_wav(path)?, 1);
                if windows.len() < cfg.duration as usize {
                    return Err(SimError::Config(format!(
                        "{} holds {} window(s), scenario needs {}",
                        path.display(),
                        windows.len(),
                        cfg.duration
                    )));
                }
                Audio::Recorded(windows)
            }
        })
    }

    fn window(&self, n: u32) -> VoiceWindow {
        match self {
            Audio::Synthetic(s) => s.window(n),
            // Retention windows past the end of the recording loop it.
            Audio::Recorded(w) => w[(n as usize - 1) % w.len()].clone(),
        }
    }
}

/// Single-threaded transport: the far side runs whenever the near side
/// waits for it.
struct MemoryWire {
    fwd: IpLeg<MemoryLink>,
    far: FarSide<MemoryLink>,
}

impl Wire for MemoryWire {
    fn send(&mut self, d: Datagram) -> Result<(), SimError> {
        self.fwd.send(d)
    }

    fn next(&mut self) -> Result<Datagram, SimError> {
        loop {
            if let Some(d) = self.far.out.link.recv()? {
                return Ok(d);
            }
            match self.fwd.link.recv()? {
                Some(d) => {
                    self.far.handle(d)?;
                }
                None => return Err(SimError::Stalled),
            }
        }
    }
}

impl MemoryWire {
    fn drain(&mut self) -> Result<(), SimError> {
        while let Some(d) = self.fwd.link.recv()? {
            if !self.far.handle(d)? {
                break;
            }
        }
        Ok(())
    }
}

/// Near end of a UDP association; the far side runs in its own thread.
struct UdpWire {
    leg: IpLeg<UdpLink>,
}

impl Wire for UdpWire {
    fn send(&mut self, d: Datagram) -> Result<(), SimError> {
        self.leg.send(d)
    }

    fn next(&mut self) -> Result<Datagram, SimError> {
        self.leg.link.recv()?.ok_or(SimError::Stalled)
    }
}

fn serve(mut far: FarSide<UdpLink>) -> Result<FarSide<UdpLink>, SimError> {
    loop {
        if let Some(d) = far.out.link.recv()? {
            if !far.handle(d)? {
                return Ok(far);
            }
        }
    }
}

/// Windows the caller keeps sending after the scheduled end while its
/// teardown is unconfirmed: enough for a mismatch run to exhaust the LoT.
fn retention_windows(cfg: &ScenarioConfig) -> u32 {
    cfg.lot.max + 1
}

fn drive<W: Wire>(near: &mut NearSide, wire: &mut W, cfg: &ScenarioConfig, audio: &Audio) -> Result<(), SimError> {
    near.setup(wire)?;
    let extra = if cfg.hangup { retention_windows(cfg) } else { 0 };
    for n in 1..=cfg.duration + extra {
        if cfg.hangup && n == cfg.duration {
            near.hangup(wire)?;
        }
        if n > cfg.duration && near.gw.phase() != CallPhase::TeardownPending {
            break;
        }
        if !near.gw.phase().media_flows() || !near.send_window(wire, n, &audio.window(n))? {
            break;
        }
    }
    Ok(())
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioReport, SimError> {
    run_scenario_traced(cfg).map(|(r, _)| r)
}

/// Like [`run_scenario`], also returning the trace of every voice packet
/// the near gateway sent.
pub fn run_scenario_traced(cfg: &ScenarioConfig) -> Result<(ScenarioReport, Vec<TraceRecord>), SimError> {
    cfg.validate()?;
    let seed = cfg.resolved_seed()?;
    let audio = Audio::open(cfg, seed)?;

    let mut near = NearSide::new(
        GatewayState::new(gateway_config(Role::Sender, &cfg.gateway_pass, cfg.lot, cfg.delta, cfg.k))?,
        PstnEndpoint::new(PARTY_A, cfg.endpoint_pass.as_bytes(), cfg.delta, TS_BASE)?,
        seed,
    );
    let far_gw = GatewayState::new(gateway_config(Role::Receiver, &cfg.gateway_pass, cfg.lot, cfg.delta, cfg.k))?;
    let far_ep = PstnEndpoint::new(PARTY_B, cfg.endpoint_pass.as_bytes(), cfg.delta, TS_BASE)?;
    let fwd_adv = Adversary::new(cfg.adversary.clone(), cfg.delta, seed ^ 0xadf0);
    let rev_adv = Adversary::new(cfg.adversary.clone(), cfg.delta, seed ^ 0xadb0);

    let (fwd_tampered, far) = match cfg.channel {
        ChannelKind::Memory => {
            let mut wire = MemoryWire {
                fwd: IpLeg { link: MemoryLink::new(), adversary: fwd_adv, proxy_hops: cfg.proxy_hops },
                far: FarSide::new(
                    far_gw,
                    far_ep,
                    IpLeg { link: MemoryLink::new(), adversary: rev_adv, proxy_hops: cfg.proxy_hops },
                ),
            };
            drive(&mut near, &mut wire, cfg, &audio)?;
            wire.send(Datagram::Stop)?;
            wire.drain()?;
            (wire.fwd.adversary.tampered(), FarPart::from(wire.far))
        }
        ChannelKind::Udp => {
            let (a, b) = UdpLink::pair()?;
            let far = FarSide::new(far_gw, far_ep, IpLeg { link: b, adversary: rev_adv, proxy_hops: cfg.proxy_hops });
            let handle = thread::Builder::new()
                .name("mg-b".into())
                .spawn(move || serve(far))
                .map_err(|e| SimError::Channel(e.into()))?;
            let mut wire = UdpWire { leg: IpLeg { link: a, adversary: fwd_adv, proxy_hops: cfg.proxy_hops } };
            let driven = drive(&mut near, &mut wire, cfg, &audio);
            let stopped = wire.send(Datagram::Stop);
            let far = handle.join().map_err(|_| SimError::Thread)??;
            driven?;
            stopped?;
            (wire.leg.adversary.tampered(), FarPart::from(far))
        }
    };
    Ok(build_report(cfg, seed, near, fwd_tampered, far))
}

/// What the report needs from the far side, independent of the link type.
struct FarPart {
    gw: GatewayState,
    records: Vec<WindowRecord>,
    isup_delivered: Vec<String>,
    reported_octets: Option<u32>,
    torn_down_at: Option<u32>,
    tampered: usize,
}

impl<L: Link> From<FarSide<L>> for FarPart {
    fn from(f: FarSide<L>) -> FarPart {
        FarPart {
            tampered: f.out.adversary.tampered(),
            gw: f.gw,
            records: f.records,
            isup_delivered: f.isup_delivered,
            reported_octets: f.reported_octets,
            torn_down_at: f.torn_down_at,
        }
    }
}

fn build_report(
    cfg: &ScenarioConfig,
    seed: u64,
    near: NearSide,
    fwd_tampered: usize,
    far: FarPart,
) -> (ScenarioReport, Vec<TraceRecord>) {
    let tampered = fwd_tampered + far.tampered;
    let rollbacks = rollbacks(far.gw.log());
    let outcome = if let Some(window) = far.torn_down_at {
        Outcome::DetectedAndTornDown { window }
    } else if graceful(far.gw.log()) {
        Outcome::GracefulTeardown
    } else if tampered > 0 && rollbacks == 0 && all_match(&far.records) {
        Outcome::Undetected
    } else {
        Outcome::CompletedClean
    };
    let digests = |g: &GatewayState| g.sb().entries().iter().map(|(_, d)| d.to_string()).collect::<Vec<_>>();
    let (sender, receiver) = (digests(&near.gw), digests(&far.gw));
    let report = ScenarioReport {
        name: cfg.name.clone(),
        seed,
        duration: cfg.duration,
        delta: cfg.delta,
        k: cfg.k,
        outcome,
        lot_trace: far.records.iter().map(|r| r.lot).collect(),
        windows: far.records,
        rollbacks,
        signalling: SbSummary { equal: sender == receiver, sender, receiver },
        isup_delivered: far.isup_delivered,
        covert: CovertSummary {
            sender: near.gw.covert_stats(),
            receiver: far.gw.covert_stats(),
            reported_octets: far.reported_octets,
        },
        wire: WireStats {
            packets: near.packets,
            payload_bytes: near.payload_bytes,
            wire_bytes: near.wire_bytes,
            baseline_payload_bytes: near.baseline_payload_bytes,
            baseline_wire_bytes: near.baseline_wire_bytes,
        },
        tampered,
        sender_events: near.gw.log().iter().map(|e| e.to_string()).collect(),
        receiver_events: far.gw.log().iter().map(|e| e.to_string()).collect(),
    };
    (report, near.trace)
}
