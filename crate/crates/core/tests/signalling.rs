use std::path::PathBuf;

use proptest::prelude::*;
use voiceseal::signalling::*;
use voiceseal::sim::call::isup_message;

fn fixture(name: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sip").join(name);
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn sip(name: &str) -> SipMessage {
    parse_sip(&fixture(name)).unwrap()
}

#[test]
fn sipt_invite_carries_iam() {
    let m = sip("invite_sipt.sip");
    assert_eq!(m.method(), Some("INVITE"));
    assert_eq!(m.cseq().unwrap(), (314159, "INVITE".to_string()));
    let iam = extract_isup_body(&m).unwrap().unwrap();
    assert_eq!(iam.message_type, IsupType::Iam);
    assert_eq!(iam.cic, 17);
    assert_eq!(iam.parameters, [0x0a, 0x06, 0x84, 0x22, 0x55, 0x05, 0x00, 0x02]);
    assert_eq!(parse_sip(&serialize_sip(&m)).unwrap(), m);
}

#[test]
fn answer_with_two_vias() {
    let m = sip("ok_anm.sip");
    assert_eq!(m.status(), Some(200));
    assert_eq!(m.headers_named("Via").count(), 2);
    let s = SignallingMessage::Sip(m.clone());
    assert!(s.is_answer() && !s.is_teardown());
    assert_eq!(extract_isup_body(&m).unwrap().unwrap().message_type, IsupType::Anm);
}

#[test]
fn compact_and_folded_headers() {
    let m = sip("bye_compact_folded.sip");
    assert_eq!(m.header("From"), Some("<sip:+48125550001@gw-a.example> ;tag=1928301774"));
    assert_eq!(m.header("call-id"), Some("a84b4c76e66710@gw-a.example"));
    assert!(SignallingMessage::Sip(m).is_teardown());
}

#[test]
fn broken_fixtures_are_rejected() {
    assert!(matches!(parse_sip(&fixture("bad_content_length.sip")), Err(SignallingError::BodyLength { .. })));
    assert!(matches!(parse_sip(&fixture("bad_start_line.sip")), Err(SignallingError::StartLine(_))));
    assert_eq!(parse_sip(&fixture("missing_from.sip")), Err(SignallingError::MissingHeader("From")));
    assert_eq!(parse_sip(b""), Err(SignallingError::Empty));
}

#[test]
fn sdp_body_is_not_isup() {
    let m = SipMessage::request("INVITE", "sip:x@y")
        .with_header("Via", "SIP/2.0/UDP a")
        .with_header("From", "<sip:a@b>")
        .with_header("To", "<sip:x@y>")
        .with_header("Call-ID", "c")
        .with_header("CSeq", "1 INVITE")
        .with_body("application/sdp", b"v=0\r\n".to_vec());
    assert_eq!(extract_isup_body(&m), Ok(None));
}

#[test]
fn all_five_types_round_trip_alone_and_tunnelled() {
    let base = sip("invite_sipt.sip");
    for t in IsupType::ALL {
        let msg = isup_message(t, 0xabc);
        let bytes = serialize_isup(&msg).unwrap();
        assert_eq!(bytes[2], t as u8);
        assert_eq!(parse_isup(&bytes).unwrap(), msg);
        let wrapped = attach_isup(base.clone(), &msg).unwrap();
        assert!(wrapped.content_type().unwrap().starts_with(ISUP_CONTENT_TYPE));
        let reparsed = parse_sip(&serialize_sip(&wrapped)).unwrap();
        assert_eq!(extract_isup_body(&reparsed).unwrap(), Some(msg));
    }
}

#[test]
fn isup_truncation_sweep() {
    for t in IsupType::ALL {
        let bytes = serialize_isup(&isup_message(t, 5)).unwrap();
        for cut in 0..bytes.len() {
            assert!(parse_isup(&bytes[..cut]).is_err(), "{t:?} cut at {cut}");
        }
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(parse_isup(&long), Err(SignallingError::IsupTrailing(1)));
    }
    // Same sweep through a SIP-T body: dropping one byte (two hex digits) or
    // a single digit is a fault.
    let m = sip("invite_sipt.sip");
    for drop in [1, 2] {
        let mut bad = m.clone();
        bad.body.truncate(bad.body.len() - drop);
        assert!(extract_isup_body(&bad).is_err(), "drop {drop}");
    }
}

#[test]
fn isup_byte_flips_never_pass_silently() {
    for t in IsupType::ALL {
        let msg = isup_message(t, 0x123);
        let bytes = serialize_isup(&msg).unwrap();
        for i in 0..bytes.len() {
            for bit in 0..8 {
                let mut b = bytes.clone();
                b[i] ^= 1 << bit;
                if let Ok(parsed) = parse_isup(&b) {
                    assert_ne!(parsed, msg, "{t:?} byte {i} bit {bit}");
                    assert_ne!(
                        message_digest(&SignallingMessage::Isup(parsed)).unwrap(),
                        message_digest(&SignallingMessage::Isup(msg.clone())).unwrap()
                    );
                }
            }
        }
    }
}

#[test]
fn hashing_is_canonical_across_proxies_for_every_type() {
    let base = sip("invite_sipt.sip");
    for t in IsupType::ALL {
        let m = attach_isup(base.clone(), &isup_message(t, 77)).unwrap();
        let mut proxied = m.clone();
        proxied.prepend_header("Via", "SIP/2.0/UDP p1.example;branch=z9hG4bKp1");
        proxied.prepend_header("Record-Route", "<sip:p1.example;lr>");
        proxied.set_header("Max-Forwards", "69");
        let d = |m: &SipMessage| message_digest(&SignallingMessage::Sip(m.clone())).unwrap();
        assert_eq!(d(&m), d(&proxied));
        for field in ["From", "To", "Call-ID", "CSeq"] {
            let mut bad = proxied.clone();
            bad.set_header(field, &format!("{} x", m.header(field).unwrap()));
            assert_ne!(d(&m), d(&bad), "{t:?} {field}");
        }
        let mut bad = proxied.clone();
        *bad.body.last_mut().unwrap() ^= 1;
        assert_ne!(d(&m), d(&bad));
    }
}

#[test]
fn notify_text() {
    let n = MegacoNotify { termination_id: "rtp/b1".into(), event: ObservedEvent::TokenFail, window: 4 };
    assert_eq!(n.to_string(), "Notify = rtp/b1 {ObservedEvents = 4 {vsec/tokfail}}");
}

fn token() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9.;=@<>:+_-]{0,24}"
}

fn extra_header() -> impl Strategy<Value = (String, String)> {
    (prop_oneof!["Via", "Record-Route", "Contact", "Max-Forwards", "X-[A-Z][a-z]{1,8}"], token())
}

prop_compose! {
    fn message()(method in "[A-Z]{3,8}", uri in token(), from in token(), to in token(), cid in token(),
                 seq in 0u32..100000, extras in proptest::collection::vec(extra_header(), 0..6),
                 body in proptest::collection::vec(any::<u8>(), 0..64)) -> SipMessage {
        let mut m = SipMessage::request(&method, &format!("sip:{uri}"))
            .with_header("Via", "SIP/2.0/UDP origin.example")
            .with_header("From", &from)
            .with_header("To", &to)
            .with_header("Call-ID", &cid)
            .with_header("CSeq", &format!("{seq} {method}"));
        for (n, v) in extras {
            m = m.with_header(&n, &v);
        }
        if body.is_empty() { m } else { m.with_body("application/octet-stream", body) }
    }
}

proptest! {
    #[test]
    fn sip_round_trip(m in message()) {
        prop_assert_eq!(parse_sip(&serialize_sip(&m)).unwrap(), m);
    }

    #[test]
    fn excluded_headers_do_not_affect_canonical_form(m in message(), extras in proptest::collection::vec(extra_header(), 0..6), rot in 0usize..8) {
        let mut edited = m.clone();
        for (n, v) in extras {
            edited.prepend_header(&n, &v);
        }
        // Shuffle only the excluded headers among themselves.
        let excluded: Vec<usize> = (0..edited.headers.len())
            .filter(|&i| !CANONICAL_HEADERS.contains(&edited.headers[i].0.to_ascii_lowercase().as_str()))
            .collect();
        if !excluded.is_empty() {
            let values: Vec<(String, String)> = excluded.iter().map(|&i| edited.headers[i].clone()).collect();
            for (k, &i) in excluded.iter().enumerate() {
                edited.headers[i] = values[(k + rot) % values.len()].clone();
            }
        }
        prop_assert_eq!(
            canonical_bytes(&SignallingMessage::Sip(m)).unwrap(),
            canonical_bytes(&SignallingMessage::Sip(edited)).unwrap()
        );
    }

    #[test]
    fn isup_round_trip(t in 0usize..5, cic in 0u16..4096, params in proptest::collection::vec(any::<u8>(), 0..=255)) {
        let msg = IsupMessage { message_type: IsupType::ALL[t], cic, parameters: params };
        prop_assert_eq!(parse_isup(&serialize_isup(&msg).unwrap()).unwrap(), msg);
    }
}
