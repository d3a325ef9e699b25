//! Authentication tokens carried in the voice watermark.
//!
//! A token binds four things together: a digest of the call's signalling
//! (`SM`), the digest of the voice features of the window
//! being marked (`VF`), the shared secret and identity of the sending party,
//! and a per-token randomizer with a timestamp:
//!
//! ```text
//! mac = H( (H(SM) xor H(VF)) || ts || pass || id || r )[..8]
//! ```
//!
//! Both gateways compute the same value from the same inputs; the receiver
//! takes `r` and `ts` out of the extracted token and rebuilds the rest
//! locally, so the comparison succeeds only when voice, signalling and secret
//! all agree.

use std::fmt;

use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Serialized width of a [`Token`] in bytes.
pub const TOKEN_BYTES: usize = 16;
/// Serialized width of a [`Token`] in bits.
pub const TOKEN_BITS: usize = TOKEN_BYTES * 8;

/// Default receiver tolerance for token timestamps when running against a
/// wall clock.
pub const LIVE_TS_TOLERANCE_SECS: u32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("shared secret must not be empty")]
    EmptyPass,
    #[error("token must be exactly {TOKEN_BYTES} bytes, got {0}")]
    BadLength(usize),
    #[error("signalling hash buffer is empty")]
    EmptyBuffer,
    #[error("sequence number {got} does not follow {last}")]
    OutOfOrder { last: u64, got: u64 },
}

/// A 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn xor(&self, other: &Digest) -> Digest {
        let mut out = [0u8; 32];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Digest(out)
    }

    /// Lowercase hex of the first `n` bytes, for logs.
    pub fn prefix_hex(&self, n: usize) -> String {
        hex::encode(&self.0[..n.min(32)])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", hex::encode(self.0))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// The hash function `H`: SHA-256.
pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Inputs of the watermark-data block: randomizer, timestamp, party identity
/// and shared secret.
#[derive(Clone, PartialEq, Eq)]
pub struct TokenParams {
    pub r: u32,
    pub ts: u32,
    pub id: u32,
    pub pass: Vec<u8>,
}

impl fmt::Debug for TokenParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TokenParams")
            .field("r", &self.r)
            .field("ts", &self.ts)
            .field("id", &self.id)
            .field("pass", &"<redacted>")
            .finish()
    }
}

/// The embedded authentication token: `r`, `ts` and a 64-bit truncated MAC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Token {
    pub r: u32,
    pub ts: u32,
    pub mac: [u8; 8],
}

impl Token {
    /// Big-endian `r || ts || mac`.
    pub fn to_bytes(&self) -> [u8; TOKEN_BYTES] {
        let mut out = [0u8; TOKEN_BYTES];
        out[0..4].copy_from_slice(&self.r.to_be_bytes());
        out[4..8].copy_from_slice(&self.ts.to_be_bytes());
        out[8..16].copy_from_slice(&self.mac);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Token, TokenError> {
        if bytes.len() != TOKEN_BYTES {
            return Err(TokenError::BadLength(bytes.len()));
        }
        let mut mac = [0u8; 8];
        mac.copy_from_slice(&bytes[8..16]);
        Ok(Token {
            r: u32::from_be_bytes(bytes[0..4].try_into().unwrap()),
            ts: u32::from_be_bytes(bytes[4..8].try_into().unwrap()),
            mac,
        })
    }

    pub fn to_bits(&self) -> Vec<bool> {
        crate::bits::bytes_to_bits(&self.to_bytes())
    }

    pub fn from_bits(bits: &[bool]) -> Result<Token, TokenError> {
        if bits.len() != TOKEN_BITS {
            return Err(TokenError::BadLength(bits.len() / 8));
        }
        Token::from_bytes(&crate::bits::bits_to_bytes(bits))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyResult {
    Match,
    Mismatch,
}

impl VerifyResult {
    pub fn is_match(self) -> bool {
        self == VerifyResult::Match
    }

    pub fn from_bool(ok: bool) -> VerifyResult {
        if ok {
            VerifyResult::Match
        } else {
            VerifyResult::Mismatch
        }
    }
}

impl fmt::Display for VerifyResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerifyResult::Match => "match",
            VerifyResult::Mismatch => "mismatch",
        })
    }
}

fn token_mac(sm: &Digest, vf: &Digest, ts: u32, pass: &[u8], id: u32, r: u32) -> [u8; 8] {
    let mut h = Sha256::new();
    h.update(sm.xor(vf).0);
    h.update(ts.to_be_bytes());
    h.update(pass);
    h.update(id.to_be_bytes());
    h.update(r.to_be_bytes());
    let full: [u8; 32] = h.finalize().into();
    full[..8].try_into().unwrap()
}

pub fn build_token(sm_digest: &Digest, vf_digest: &Digest, params: &TokenParams) -> Result<Token, TokenError> {
    if params.pass.is_empty() {
        return Err(TokenError::EmptyPass);
    }
    Ok(Token {
        r: params.r,
        ts: params.ts,
        mac: token_mac(sm_digest, vf_digest, params.ts, &params.pass, params.id, params.r),
    })
}

/// Rebuilds the token locally from the received `r` and `ts` and compares
/// MACs bit for bit. An empty `pass` can never match.
pub fn verify_token(
    received: &Token,
    sm_digest: &Digest,
    vf_digest: &Digest,
    pass: &[u8],
    expected_id: u32,
) -> VerifyResult {
    if pass.is_empty() {
        return VerifyResult::Mismatch;
    }
    let local = token_mac(sm_digest, vf_digest, received.ts, pass, expected_id, received.r);
    // Fold the comparison so timing does not depend on the first differing byte.
    let diff = local.iter().zip(received.mac.iter()).fold(0u8, |acc, (a, b)| acc | (a ^ b));
    VerifyResult::from_bool(diff == 0)
}

/// How a receiver judges the freshness of a token's timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Simulation: the timestamp must equal the expected logical time exactly.
    Logical,
    /// Wall clock: the timestamp must lie within `tolerance` seconds of now.
    Live { tolerance: u32 },
}

impl ClockMode {
    pub fn accepts(self, received_ts: u32, local_ts: u32) -> bool {
        match self {
            ClockMode::Logical => received_ts == local_ts,
            ClockMode::Live { tolerance } => received_ts.abs_diff(local_ts) <= tolerance,
        }
    }
}

/// Append-only store of signalling-message digests, keyed by sequence number.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SignallingHashBuffer {
    entries: Vec<(u64, Digest)>,
}

impl SignallingHashBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&mut self, n: u64, digest: Digest) -> Result<(), TokenError> {
        if let Some(&(last, _)) = self.entries.last() {
            if n <= last {
                return Err(TokenError::OutOfOrder { last, got: n });
            }
        }
        self.entries.push((n, digest));
        Ok(())
    }

    pub fn current(&self) -> Result<Digest, TokenError> {
        self.entries.last().map(|&(_, d)| d).ok_or(TokenError::EmptyBuffer)
    }

    /// Running digest over every stored entry in order:
    /// `acc = H(acc || n_be64 || d)` starting from the zero digest. Unlike
    /// [`current`](Self::current) it changes if any earlier entry differs.
    pub fn chained(&self) -> Result<Digest, TokenError> {
        if self.entries.is_empty() {
            return Err(TokenError::EmptyBuffer);
        }
        Ok(self.entries.iter().fold(Digest::ZERO, |acc, (n, d)| {
            let mut buf = Vec::with_capacity(72);
            buf.extend_from_slice(acc.as_bytes());
            buf.extend_from_slice(&n.to_be_bytes());
            buf.extend_from_slice(d.as_bytes());
            hash(&buf)
        }))
    }

    pub fn get(&self, n: u64) -> Option<Digest> {
        self.entries
            .binary_search_by_key(&n, |&(seq, _)| seq)
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.entries.last().map(|&(n, _)| n)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(u64, Digest)] {
        &self.entries
    }

    /// Drops every entry stored after the first `len`. Used only to undo a
    /// teardown message that failed authentication.
    pub(crate) fn truncate(&mut self, len: usize) {
        self.entries.truncate(len);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> TokenParams {
        TokenParams { r: 0xdead_beef, ts: 1_700_000_000, id: 42, pass: b"secret-8".to_vec() }
    }

    #[test]
    fn empty_input_digest() {
        assert_eq!(
            hash(b"").to_string(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn serialization_is_big_endian() {
        let t = Token { r: 0x01020304, ts: 0x0a0b0c0d, mac: [1, 2, 3, 4, 5, 6, 7, 8] };
        assert_eq!(
            t.to_bytes(),
            [1, 2, 3, 4, 0x0a, 0x0b, 0x0c, 0x0d, 1, 2, 3, 4, 5, 6, 7, 8]
        );
        assert_eq!(t.to_bits().len(), 128);
        assert_eq!(Token::from_bytes(&t.to_bytes()).unwrap(), t);
        assert_eq!(Token::from_bytes(&[0; 15]), Err(TokenError::BadLength(15)));
    }

    #[test]
    fn carries_r_and_ts_verbatim() {
        let t = build_token(&hash(b"sm"), &hash(b"vf"), &params()).unwrap();
        assert_eq!((t.r, t.ts), (0xdead_beef, 1_700_000_000));
    }

    #[test]
    fn rejects_empty_pass() {
        let mut p = params();
        p.pass.clear();
        assert_eq!(build_token(&Digest::ZERO, &Digest::ZERO, &p), Err(TokenError::EmptyPass));
        let t = build_token(&Digest::ZERO, &Digest::ZERO, &params()).unwrap();
        assert_eq!(verify_token(&t, &Digest::ZERO, &Digest::ZERO, b"", 42), VerifyResult::Mismatch);
    }

    #[test]
    fn xor_commutes() {
        let (s, v) = (hash(b"sm"), hash(b"vf"));
        assert_eq!(build_token(&s, &v, &params()), build_token(&v, &s, &params()));
    }

    #[test]
    fn round_trip_and_tamper() {
        let (s, v) = (hash(b"INVITE"), hash(b"voice"));
        let t = build_token(&s, &v, &params()).unwrap();
        assert_eq!(verify_token(&t, &s, &v, b"secret-8", 42), VerifyResult::Match);
        assert_eq!(verify_token(&t, &s, &v, b"secret-9", 42), VerifyResult::Mismatch);
        assert_eq!(verify_token(&t, &s, &v, b"secret-8", 43), VerifyResult::Mismatch);
        for bit in 0..64 {
            let mut bad = t;
            bad.mac[bit / 8] ^= 0x80 >> (bit % 8);
            assert_eq!(verify_token(&bad, &s, &v, b"secret-8", 42), VerifyResult::Mismatch);
        }
    }

    #[test]
    fn clock_modes() {
        assert!(ClockMode::Logical.accepts(10, 10));
        assert!(!ClockMode::Logical.accepts(10, 11));
        let live = ClockMode::Live { tolerance: LIVE_TS_TOLERANCE_SECS };
        assert!(live.accepts(100, 130));
        assert!(live.accepts(130, 100));
        assert!(!live.accepts(100, 131));
    }

    #[test]
    fn buffer_last_wins() {
        let mut sb = SignallingHashBuffer::new();
        assert_eq!(sb.current(), Err(TokenError::EmptyBuffer));
        sb.store(1, hash(b"1")).unwrap();
        assert_eq!(sb.current().unwrap(), hash(b"1"));
        sb.store(2, hash(b"2")).unwrap();
        assert_eq!(sb.current().unwrap(), hash(b"2"));
        assert_eq!(sb.get(1), Some(hash(b"1")));
        assert_eq!(sb.get(3), None);
    }

    #[test]
    fn buffer_accepts_only_increasing_orderings() {
        // Every ordering of three sequence numbers; only the sorted one is
        // accepted in full.
        let perms = [[1, 2, 3], [1, 3, 2], [2, 1, 3], [2, 3, 1], [3, 1, 2], [3, 2, 1]];
        for p in perms {
            let mut sb = SignallingHashBuffer::new();
            let accepted = p.iter().all(|&n| sb.store(n, hash(&[n as u8])).is_ok());
            assert_eq!(accepted, p == [1, 2, 3], "{p:?}");
        }
        let mut sb = SignallingHashBuffer::new();
        sb.store(5, Digest::ZERO).unwrap();
        assert_eq!(sb.store(5, Digest::ZERO), Err(TokenError::OutOfOrder { last: 5, got: 5 }));
    }

    #[test]
    fn chained_digest_sees_history() {
        let mut a = SignallingHashBuffer::new();
        let mut b = SignallingHashBuffer::new();
        assert_eq!(a.chained(), Err(TokenError::EmptyBuffer));
        a.store(1, hash(b"invite")).unwrap();
        b.store(1, hash(b"forged invite")).unwrap();
        a.store(2, hash(b"ack")).unwrap();
        b.store(2, hash(b"ack")).unwrap();
        assert_eq!(a.current(), b.current());
        assert_ne!(a.chained(), b.chained());

        let mut one = SignallingHashBuffer::new();
        one.store(1, hash(b"x")).unwrap();
        let mut manual = Digest::ZERO.as_bytes().to_vec();
        manual.extend_from_slice(&1u64.to_be_bytes());
        manual.extend_from_slice(hash(b"x").as_bytes());
        assert_eq!(one.chained().unwrap(), hash(&manual));
    }
}
