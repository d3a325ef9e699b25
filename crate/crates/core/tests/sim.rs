use voiceseal::gateway::WindowVerdict;
use voiceseal::sim::config::SEED_ENV;
use voiceseal::sim::*;
use voiceseal::token::VerifyResult;
use voiceseal::watermark::io::write_wav;

fn scenario(duration: u32, adversary: Vec<AdversaryAction>) -> ScenarioConfig {
    ScenarioConfig { seed: Some(11), adversary, ..ScenarioConfig::new(duration) }
}

fn run(cfg: &ScenarioConfig) -> ScenarioReport {
    run_scenario(cfg).unwrap()
}

#[test]
fn clean_call() {
    let r = run(&scenario(12, vec![]));
    assert_eq!(r.outcome, Outcome::CompletedClean);
    assert_eq!(r.windows.len(), 12);
    assert!(r.windows.iter().all(|w| w.layer2 == WindowVerdict::Match && w.layer1 == Some(WindowVerdict::Match)));
    assert_eq!(r.lot_trace, [4, 5, 6, 7, 8, 9, 10, 10, 10, 10, 10, 10]);
    assert!(r.signalling.equal);
    assert_eq!(r.signalling.sender.len(), 4);
    assert_eq!(r.isup_delivered, ["IAM"]);
    assert_eq!(r.tampered, 0);
    assert_eq!(r.rollbacks, 0);
    // Covert signalling rides in spare header bits: same bytes as no security.
    assert_eq!(r.wire.payload_bytes, r.wire.baseline_payload_bytes);
    assert_eq!(r.wire.wire_bytes, r.wire.baseline_wire_bytes);
    assert_eq!(r.wire.packets, 12 * 50);
    assert_eq!(r.covert.reported_octets, Some(11 * 50 * 160));
}

#[test]
fn flipped_voice_is_torn_down_at_window_two() {
    let r = run(&scenario(10, vec![AdversaryAction::FlipVoiceBits { rate: 1.0 }]));
    assert_eq!(r.outcome, Outcome::DetectedAndTornDown { window: 2 });
    assert_eq!(r.lot_trace, [1, 0]);
    assert!(r.windows.iter().all(|w| w.layer2 == WindowVerdict::Mismatch));
    assert!(!r.windows[1].forwarded);
}

#[test]
fn light_flipping_is_still_caught() {
    let r = run(&scenario(10, vec![AdversaryAction::FlipVoiceBits { rate: 0.01 }]));
    assert!(matches!(r.outcome, Outcome::DetectedAndTornDown { .. }), "{}", r.outcome);
}

#[test]
fn injected_bye_is_rolled_back_and_media_continues() {
    let r = run(&scenario(10, vec![AdversaryAction::InjectTeardown { at_window: 4 }]));
    assert_eq!(r.outcome, Outcome::CompletedClean);
    assert_eq!(r.rollbacks, 1);
    assert_eq!(r.windows.len(), 10);
    assert!(r.windows.iter().all(|w| w.forwarded));
    assert!(r.windows[3].rolled_back);
    assert_eq!(r.windows[3].layer2, WindowVerdict::Mismatch);
    assert!(r.windows.iter().enumerate().all(|(i, w)| i == 3 || w.layer2 == WindowVerdict::Match));
    assert!(r.signalling.equal);
    assert_eq!(r.isup_delivered, ["IAM"]);
}

#[test]
fn hangup_is_authenticated_then_graceful() {
    let cfg = ScenarioConfig { hangup: true, ..scenario(6, vec![]) };
    let r = run(&cfg);
    assert_eq!(r.outcome, Outcome::GracefulTeardown);
    let last = r.windows.last().unwrap();
    assert_eq!(r.windows.iter().filter(|w| w.teardown_authenticated).count(), 1);
    assert!(last.teardown_authenticated && last.layer2 == WindowVerdict::Match);
    assert!(r.signalling.equal);
    assert_eq!(r.isup_delivered, ["IAM", "REL"]);
    assert!(r.sender_events.iter().any(|e| e.contains("event=terminated") && e.contains("cause=graceful")));
}

#[test]
fn replayed_window_is_caught() {
    let r = run(&scenario(10, vec![AdversaryAction::ReplayWindow { index: 2 }]));
    assert_eq!(r.windows[1].layer2, WindowVerdict::Match);
    assert_eq!(r.windows[2].layer2, WindowVerdict::Mismatch);
    assert!(matches!(r.outcome, Outcome::DetectedAndTornDown { .. }));
}

#[test]
fn corrupted_covert_header_is_caught_at_any_packet() {
    for packet in [0, 1, 25, 49] {
        let r = run(&scenario(6, vec![AdversaryAction::CorruptCovertHeader { packet }]));
        assert!(matches!(r.outcome, Outcome::DetectedAndTornDown { .. }), "packet {packet}: {}", r.outcome);
    }
}

#[test]
fn loss_below_and_above_tolerance() {
    let r = run(&scenario(20, vec![AdversaryAction::DropPackets { rate: 0.01 }]));
    assert_eq!(r.outcome, Outcome::CompletedClean);
    assert!(r.count(WindowVerdict::Inconclusive) > 0);
    assert_eq!(r.count(WindowVerdict::Mismatch), 0);
    let r = run(&scenario(10, vec![AdversaryAction::DropPackets { rate: 0.3 }]));
    assert_eq!(r.outcome, Outcome::DetectedAndTornDown { window: 2 });
}

fn replace(message: &str, field: &str, value: &str) -> AdversaryAction {
    AdversaryAction::ReplaceSignalling { message: message.into(), field: field.into(), value: value.into() }
}

#[test]
fn covered_signalling_edits_are_caught() {
    for message in ["INVITE", "183/INVITE", "200/INVITE"] {
        for (field, value) in [
            ("From", "<sip:+1@evil.example>;tag=x"),
            ("To", "<sip:+2@evil.example>"),
            ("Call-ID", "hijack@evil.example"),
            ("CSeq", "99 INVITE"),
            ("body", "11000100"),
        ] {
            let r = run(&scenario(6, vec![replace(message, field, value)]));
            assert!(r.tampered > 0, "{message} {field}");
            assert!(!r.signalling.equal);
            assert!(matches!(r.outcome, Outcome::DetectedAndTornDown { .. }), "{message} {field}: {}", r.outcome);
        }
    }
}

#[test]
fn edits_outside_the_canonical_form_go_unnoticed() {
    let r = run(&scenario(6, vec![replace("INVITE", "Via", "SIP/2.0/UDP evil.example")]));
    assert_eq!(r.outcome, Outcome::Undetected);
    assert!(r.signalling.equal);
}

#[test]
fn legitimate_proxies_do_not_break_the_call() {
    let r = run(&ScenarioConfig { proxy_hops: 3, hangup: true, ..scenario(6, vec![]) });
    assert_eq!(r.outcome, Outcome::GracefulTeardown);
    assert!(r.signalling.equal);
}

#[test]
fn equal_seeds_give_identical_reports() {
    let cfg = scenario(8, vec![AdversaryAction::DropPackets { rate: 0.02 }, AdversaryAction::InjectTeardown { at_window: 3 }]);
    assert_eq!(run(&cfg).to_json(), run(&cfg).to_json());
    let other = run(&ScenarioConfig { seed: Some(12), ..cfg.clone() });
    assert_ne!(other.to_json(), run(&cfg).to_json());
}

#[test]
fn udp_and_memory_agree() {
    for cfg in [scenario(8, vec![]), ScenarioConfig { hangup: true, ..scenario(5, vec![AdversaryAction::InjectTeardown { at_window: 2 }]) }] {
        let mem = run(&cfg);
        let udp = run(&ScenarioConfig { channel: ChannelKind::Udp, ..cfg });
        assert_eq!(mem.to_json(), udp.to_json());
    }
}

#[test]
fn scenario_file_and_env_seed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(
        &path,
        r#"
name = "from-file"
duration = 4
expect = "detected-and-torn-down@2"

[[adversary]]
kind = "flip-voice-bits"
rate = 1.0
"#,
    )
    .unwrap();
    let cfg = ScenarioConfig::load(&path).unwrap();
    std::env::set_var(SEED_ENV, "77");
    let r = run(&cfg);
    std::env::remove_var(SEED_ENV);
    assert_eq!(r.seed, 77);
    assert_eq!(r.name, "from-file");
    assert!(cfg.expect.unwrap().matches(&r.outcome));

    std::fs::write(&path, "duration = 4\nbogus = 1\n").unwrap();
    assert!(ScenarioConfig::load(&path).is_err());
    std::fs::write(&path, "duration = 4\ndelta = 16\n").unwrap();
    assert!(ScenarioConfig::load(&path).is_err());
}

#[test]
fn recorded_audio_source() {
    let dir = tempfile::tempdir().unwrap();
    let speech = SyntheticSpeech::new(5);
    let samples: Vec<i16> = speech.windows(1, 3).iter().flat_map(|w| w.samples().to_vec()).collect();
    write_wav(&dir.path().join("call.wav"), &samples).unwrap();
    let path = dir.path().join("s.toml");
    std::fs::write(&path, "duration = 3\nseed = 1\n[audio]\nsource = \"wav\"\npath = \"call.wav\"\n").unwrap();
    let r = run(&ScenarioConfig::load(&path).unwrap());
    assert_eq!(r.outcome, Outcome::CompletedClean);
    // Too short for the scenario.
    std::fs::write(&path, "duration = 4\nseed = 1\n[audio]\nsource = \"wav\"\npath = \"call.wav\"\n").unwrap();
    assert!(matches!(run_scenario(&ScenarioConfig::load(&path).unwrap()), Err(SimError::Config(_))));
}

#[test]
fn every_attack_leaves_a_trace() {
    let attacks = [
        AdversaryAction::FlipVoiceBits { rate: 0.5 },
        AdversaryAction::InjectTeardown { at_window: 2 },
        AdversaryAction::ReplayWindow { index: 1 },
        AdversaryAction::CorruptCovertHeader { packet: 7 },
        AdversaryAction::DropPackets { rate: 0.5 },
        replace("INVITE", "From", "<sip:x@evil.example>"),
    ];
    for a in attacks {
        let r = run(&scenario(5, vec![a.clone()]));
        let noticed = r.outcome != Outcome::CompletedClean || r.rollbacks > 0;
        assert!(noticed, "{a:?}");
        assert_ne!(r.outcome, Outcome::Undetected, "{a:?}");
    }
    let r = run(&scenario(5, vec![AdversaryAction::None]));
    assert_eq!(r.outcome, Outcome::CompletedClean);
    assert!(r.windows.iter().flat_map(|w| &w.post_auth).all(|v| *v == VerifyResult::Match));
}

#[test]
fn event_log_summarizes() {
    let r = run(&scenario(10, vec![AdversaryAction::FlipVoiceBits { rate: 1.0 }]));
    let s = voiceseal::sim::report::summarize_log(&r.event_log());
    assert!(r.summary().contains("detected-and-torn-down@2"));
    assert_eq!((s.windows, s.mismatches, s.matches), (2, 2, 0));
    assert_eq!(s.lot_trace, r.lot_trace);
    assert_eq!(s.unparsed, 0);
    assert!(s.terminated.unwrap().contains("cause=lot-exhausted"));
    let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(json["outcome"]["kind"], "detected-and-torn-down");
    assert_eq!(json["outcome"]["window"], 2);
}

#[test]
fn tampered_bye_desynchronizes_and_is_torn_down() {
    for (field, value) in [("From", "<sip:x@evil.example>"), ("body", "0c0012020280")] {
        let cfg = ScenarioConfig { hangup: true, ..scenario(6, vec![replace("BYE", field, value)]) };
        let r = run(&cfg);
        assert_eq!(r.rollbacks, 1, "{field}");
        assert!(!r.signalling.equal);
        // Media keeps flowing past the scheduled end until the LoT runs out.
        assert!(r.windows.len() > 6);
        assert!(matches!(r.outcome, Outcome::DetectedAndTornDown { window } if window > 6), "{field}: {}", r.outcome);
    }
}
