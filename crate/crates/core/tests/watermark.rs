mod support;

use proptest::prelude::*;
use voiceseal::sim::SyntheticSpeech;
use voiceseal::watermark::io::{read_pcm, split_windows, write_pcm};
use voiceseal::watermark::*;

// SHA-256 of the full PCMU tables as produced by Python's audioop:
// lin2ulaw over every 16-bit sample in ascending order, and ulaw2lin over
// every code as little-endian i16.
const ENCODE_TABLE_SHA256: &str = "81d633c9e6972a18c74a58720b96cb8ca0bdd096d4060b646dd708c3b846019a";
const DECODE_TABLE_SHA256: &str = "3dab54339e520bb2c924826e3b72a917a2b612e9fd12fc867500f1d983a75827";

#[test]
fn ulaw_tables_match_reference() {
    let enc: Vec<u8> = (i16::MIN..=i16::MAX).map(g711::encode).collect();
    assert_eq!(support::hex(&support::sha256(&enc)), ENCODE_TABLE_SHA256);
    let dec: Vec<u8> = (0..=255u8).flat_map(|c| g711::decode(c).to_le_bytes()).collect();
    assert_eq!(support::hex(&support::sha256(&dec)), DECODE_TABLE_SHA256);
}

fn layers(delta: u16) -> (WatermarkLayer, WatermarkLayer) {
    (WatermarkLayer::new(Layer::Endpoint, delta).unwrap(), WatermarkLayer::new(Layer::Gateway, delta).unwrap())
}

#[test]
fn positions_partition_the_window() {
    let (l1, l2) = layers(DEFAULT_DELTA);
    let mut owner = vec![0u8; WINDOW_SAMPLES];
    for p in l1.positions() {
        owner[p] += 1;
    }
    for p in l2.positions() {
        owner[p] += 2;
    }
    for (i, o) in owner.iter().enumerate() {
        let want = match i % 4 {
            0 => 1,
            2 => 2,
            _ => 0,
        };
        assert_eq!(*o, want, "index {i}");
        assert_eq!(is_feature_index(i), want == 0);
    }
    assert_eq!(l1.positions().count(), LAYER_CAPACITY);
}

#[test]
fn sixty_seconds_survive_two_codec_passes() {
    let speech = SyntheticSpeech::new(60);
    let (l1, l2) = layers(DEFAULT_DELTA);
    let mut errors = 0;
    for w in speech.windows(1, 60) {
        let digital = adda_roundtrip(&w);
        let bits1: Vec<bool> = (0..LAYER_CAPACITY).map(|i| (i * 7 + w.index as usize).is_multiple_of(3)).collect();
        let bits2: Vec<bool> = (0..LAYER_CAPACITY).map(|i| (i * 5 + w.index as usize) % 4 == 1).collect();
        let a = adda_roundtrip(&embed_bits(&digital, &l1, &bits1).unwrap());
        let b = adda_roundtrip(&embed_bits(&a, &l2, &bits2).unwrap());
        let got1 = extract_bits(&b, &l1, LAYER_CAPACITY).unwrap();
        let got2 = extract_bits(&b, &l2, LAYER_CAPACITY).unwrap();
        errors += got1.iter().zip(&bits1).filter(|(x, y)| x != y).count();
        errors += got2.iter().zip(&bits2).filter(|(x, y)| x != y).count();
    }
    assert_eq!(errors, 0);
}

#[test]
fn calibration_picks_a_calibrated_step() {
    let windows = SyntheticSpeech::new(8).windows(1, 10);
    let trials = calibrate_delta(&windows, 8);
    let first_clean = trials.iter().find(|t| t.bit_errors == 0).expect("some step is error-free");
    assert!(CALIBRATED_DELTAS.contains(&first_clean.delta), "{trials:?}");
    // Small steps do not survive companding at all.
    assert!(trials.iter().find(|t| t.delta == 16).unwrap().bit_errors > 0);
}

#[test]
fn pcm_files_round_trip() {
    let dir = std::env::temp_dir().join(format!("voiceseal-wm-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let samples: Vec<i16> = SyntheticSpeech::new(1).window(1).samples().to_vec();
    for raw in [false, true] {
        let path = dir.join(if raw { "a.raw" } else { "a.wav" });
        write_pcm(&path, &samples, raw).unwrap();
        assert_eq!(read_pcm(&path, raw).unwrap(), samples);
    }
    std::fs::write(dir.join("odd.raw"), [1, 2, 3]).unwrap();
    assert!(read_pcm(&dir.join("odd.raw"), true).is_err());
    std::fs::remove_dir_all(&dir).unwrap();
    assert_eq!(split_windows(&samples, 4)[0].index, 4);
}

fn window() -> impl Strategy<Value = VoiceWindow> {
    (any::<u64>(), 1u32..200).prop_map(|(seed, n)| SyntheticSpeech::new(seed).window(n))
}

fn bits(n: usize) -> impl Strategy<Value = Vec<bool>> {
    proptest::collection::vec(any::<bool>(), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn layers_do_not_interfere(w in window(), p1 in bits(128), p2 in bits(128), order in any::<bool>()) {
        let (l1, l2) = layers(DEFAULT_DELTA);
        let marked = if order {
            embed_bits(&embed_bits(&w, &l1, &p1).unwrap(), &l2, &p2).unwrap()
        } else {
            embed_bits(&embed_bits(&w, &l2, &p2).unwrap(), &l1, &p1).unwrap()
        };
        prop_assert_eq!(extract_bits(&marked, &l1, 128).unwrap(), p1);
        prop_assert_eq!(extract_bits(&marked, &l2, 128).unwrap(), p2);
    }

    #[test]
    fn features_ignore_carrier_samples(w in window(), p1 in bits(300), p2 in bits(300)) {
        let digital = adda_roundtrip(&w);
        let (l1, l2) = layers(DEFAULT_DELTA);
        let marked = adda_roundtrip(&embed_bits(&embed_bits(&digital, &l1, &p1).unwrap(), &l2, &p2).unwrap());
        prop_assert_eq!(voice_feature(&marked), voice_feature(&digital));
        for i in (0..WINDOW_SAMPLES).filter(|&i| is_feature_index(i)) {
            prop_assert_eq!(marked.samples()[i], digital.samples()[i]);
        }
    }

    #[test]
    fn embedding_moves_a_sample_at_most_delta(s in any::<i16>(), bit in any::<bool>(), e in 4u32..=14) {
        let delta = 1u16 << e;
        let out = qim_embed(s, bit, delta);
        prop_assert_eq!(qim_decode(out, delta), bit);
        prop_assert!((out as i32 - s as i32).abs() <= delta as i32, "{} -> {}", s, out);
    }

    #[test]
    fn pad_fills_unused_positions(w in window(), n in 0usize..LAYER_CAPACITY) {
        let (l1, _) = layers(DEFAULT_DELTA);
        let payload: Vec<bool> = vec![true; n];
        let got = extract_bits(&embed_bits(&w, &l1, &payload).unwrap(), &l1, LAYER_CAPACITY).unwrap();
        for (j, b) in got.iter().enumerate().skip(n) {
            prop_assert_eq!(*b, j % 2 == 1);
        }
    }
}
