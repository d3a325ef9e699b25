//! Enhanced PSTN phone: digitizes, marks layer 1 with its own token and
//! checks the far end's mark. It sees no signalling, so its tokens bind the
//! zero digest in place of a signalling hash.

use crate::token::{build_token, verify_token, ClockMode, Digest, Token, TokenParams, VerifyResult};
use crate::watermark::{
    adda_roundtrip, embed_bits, extract_bits, voice_feature, Layer, VoiceWindow, WatermarkError, WatermarkLayer,
};

#[derive(Debug, Clone)]
pub struct PstnEndpoint {
    pub id: u32,
    pass: Vec<u8>,
    layer: WatermarkLayer,
    windows: u32,
    ts_base: u32,
}

impl PstnEndpoint {
    pub fn new(id: u32, pass: &[u8], delta: u16, ts_base: u32) -> Result<PstnEndpoint, WatermarkError> {
        Ok(PstnEndpoint { id, pass: pass.to_vec(), layer: WatermarkLayer::new(Layer::Endpoint, delta)?, windows: 0, ts_base })
    }

    pub fn windows(&self) -> u32 {
        self.windows
    }

    /// Digitizes `w`, embeds this endpoint's token in layer 1, and passes
    /// the result through a codec round trip on its way to the gateway.
    pub fn send(&mut self, w: &VoiceWindow, r: u32) -> VoiceWindow {
        self.windows += 1;
        let digital = adda_roundtrip(w);
        let vf = voice_feature(&digital);
        let params = TokenParams { r, ts: self.ts_base.wrapping_add(self.windows), id: self.id, pass: self.pass.clone() };
        let token = build_token(&Digest::ZERO, &vf.digest, &params).expect("endpoint pass is non-empty");
        let marked = embed_bits(&digital, &self.layer, &token.to_bits()).expect("token fits in a layer");
        adda_roundtrip(&marked)
    }

    /// Reads the layer-1 token of a window that just arrived from the
    /// network side. Layer-2 positions are never looked at.
    pub fn verify(&mut self, w: &VoiceWindow, peer_id: u32) -> (VerifyResult, Token) {
        self.windows += 1;
        let bits = extract_bits(w, &self.layer, crate::token::TOKEN_BITS).expect("token fits in a layer");
        let token = Token::from_bits(&bits).expect("128 bits");
        let vf = voice_feature(w);
        let fresh = ClockMode::Logical.accepts(token.ts, self.ts_base.wrapping_add(self.windows));
        let ok = verify_token(&token, &Digest::ZERO, &vf.digest, &self.pass, peer_id).is_match();
        (VerifyResult::from_bool(ok && fresh), token)
    }

    /// Counts a window that could not be checked (e.g. lost packets).
    pub fn skip(&mut self) {
        self.windows += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::speech::SyntheticSpeech;
    use crate::watermark::{qim_decode, qim_embed, DEFAULT_DELTA};

    #[test]
    fn far_end_matches_untampered() {
        let speech = SyntheticSpeech::new(3);
        let mut a = PstnEndpoint::new(7, b"endpoint-pass", DEFAULT_DELTA, 100).unwrap();
        let mut b = PstnEndpoint::new(9, b"endpoint-pass", DEFAULT_DELTA, 100).unwrap();
        for n in 1..=4 {
            let sent = a.send(&speech.window(n), n * 11);
            let (v, t) = b.verify(&adda_roundtrip(&sent), 7);
            assert_eq!(v, VerifyResult::Match);
            assert_eq!(t.r, n * 11);
        }
    }

    #[test]
    fn wrong_pass_and_carrier_flip_fail() {
        let speech = SyntheticSpeech::new(4);
        let mut a = PstnEndpoint::new(7, b"endpoint-pass", DEFAULT_DELTA, 0).unwrap();
        let sent = a.send(&speech.window(1), 5);
        let mut wrong = PstnEndpoint::new(9, b"endpoint-pasS", DEFAULT_DELTA, 0).unwrap();
        assert_eq!(wrong.verify(&sent, 7).0, VerifyResult::Mismatch);

        let mut flipped = sent.clone();
        let s = &mut flipped.samples_mut()[0];
        *s = qim_embed(*s, !qim_decode(*s, DEFAULT_DELTA), DEFAULT_DELTA);
        let mut b = PstnEndpoint::new(9, b"endpoint-pass", DEFAULT_DELTA, 0).unwrap();
        assert_eq!(b.verify(&flipped, 7).0, VerifyResult::Mismatch);
    }
}
