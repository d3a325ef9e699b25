//! Minimal SIP, ISUP and Megaco message models.
//!
//! The gateway only needs three things from signalling: a canonical byte
//! string to hash for every message, the ability to tunnel ISUP inside SIP
//! bodies, and a way to tell answers and teardowns apart from other traffic.

use std::fmt;

use thiserror::Error;

use crate::token::{hash, Digest};

pub const ISUP_CONTENT_TYPE: &str = "application/isup";

/// Headers covered by the canonical form, in canonical order.
pub const CANONICAL_HEADERS: [&str; 4] = ["from", "to", "call-id", "cseq"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SignallingError {
    #[error("empty message")]
    Empty,
    #[error("malformed start line: {0:?}")]
    StartLine(String),
    #[error("malformed header line: {0:?}")]
    HeaderLine(String),
    #[error("missing mandatory header {0}")]
    MissingHeader(&'static str),
    #[error("invalid {field} header: {value:?}")]
    InvalidHeader { field: &'static str, value: String },
    #[error("body is {got} bytes but Content-Length says {expected}")]
    BodyLength { expected: usize, got: usize },
    #[error("message is not valid UTF-8 in its header section")]
    Encoding,
    #[error("ISUP message truncated: need {need} bytes, have {have}")]
    IsupTruncated { need: usize, have: usize },
    #[error("ISUP message has {0} trailing bytes")]
    IsupTrailing(usize),
    #[error("unknown ISUP message type {0:#04x}")]
    IsupType(u8),
    #[error("ISUP circuit id {0:#x} exceeds 12 bits")]
    IsupCic(u16),
    #[error("ISUP parameters longer than 255 bytes")]
    IsupParams,
    #[error("ISUP body is not valid hex: {0}")]
    IsupHex(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartLine {
    Request { method: String, uri: String },
    Response { code: u16, reason: String },
}

impl fmt::Display for StartLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StartLine::Request { method, uri } => write!(f, "{method} {uri} SIP/2.0"),
            StartLine::Response { code, reason } => write!(f, "SIP/2.0 {code} {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SipMessage {
    pub start: StartLine,
    /// In wire order; names keep their original spelling.
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

fn compact_form(name: &str) -> Option<&'static str> {
    Some(match name {
        "f" => "from",
        "t" => "to",
        "i" => "call-id",
        "v" => "via",
        "c" => "content-type",
        "l" => "content-length",
        "m" => "contact",
        _ => return None,
    })
}

fn header_matches(stored: &str, wanted: &str) -> bool {
    let lower = stored.to_ascii_lowercase();
    lower == wanted || compact_form(&lower) == Some(wanted)
}

impl SipMessage {
    pub fn request(method: &str, uri: &str) -> SipMessage {
        SipMessage {
            start: StartLine::Request { method: method.to_string(), uri: uri.to_string() },
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn response(code: u16, reason: &str) -> SipMessage {
        SipMessage {
            start: StartLine::Response { code, reason: reason.to_string() },
            headers: Vec::new(),
            body: Vec::new(),
        }
    }

    pub fn with_header(mut self, name: &str, value: &str) -> SipMessage {
        self.headers.push((name.to_string(), value.to_string()));
        self
    }

    /// Sets the body together with Content-Type and Content-Length.
    pub fn with_body(mut self, content_type: &str, body: Vec<u8>) -> SipMessage {
        self.set_header("Content-Type", content_type);
        self.set_header("Content-Length", &body.len().to_string());
        self.body = body;
        self
    }

    /// First value of a header, matched case-insensitively and by compact form.
    pub fn header(&self, name: &str) -> Option<&str> {
        let wanted = name.to_ascii_lowercase();
        self.headers.iter().find(|(n, _)| header_matches(n, &wanted)).map(|(_, v)| v.as_str())
    }

    pub fn headers_named<'a>(&'a self, name: &str) -> impl Iterator<Item = &'a str> + 'a {
        let wanted = name.to_ascii_lowercase();
        self.headers.iter().filter(move |(n, _)| header_matches(n, &wanted)).map(|(_, v)| v.as_str())
    }

    /// Replaces the first header of that name, or appends one.
    pub fn set_header(&mut self, name: &str, value: &str) {
        let wanted = name.to_ascii_lowercase();
        match self.headers.iter_mut().find(|(n, _)| header_matches(n, &wanted)) {
            Some(slot) => slot.1 = value.to_string(),
            None => self.headers.push((name.to_string(), value.to_string())),
        }
    }

    /// Inserts a header before all others, as a proxy does with Via.
    pub fn prepend_header(&mut self, name: &str, value: &str) {
        self.headers.insert(0, (name.to_string(), value.to_string()));
    }

    pub fn method(&self) -> Option<&str> {
        match &self.start {
            StartLine::Request { method, .. } => Some(method),
            StartLine::Response { .. } => None,
        }
    }

    pub fn start_uri(&self) -> Option<String> {
        match &self.start {
            StartLine::Request { uri, .. } => Some(uri.clone()),
            StartLine::Response { .. } => None,
        }
    }

    pub fn status(&self) -> Option<u16> {
        match &self.start {
            StartLine::Response { code, .. } => Some(*code),
            StartLine::Request { .. } => None,
        }
    }

    pub fn cseq(&self) -> Result<(u32, String), SignallingError> {
        let raw = self.header("CSeq").ok_or(SignallingError::MissingHeader("CSeq"))?;
        let invalid = || SignallingError::InvalidHeader { field: "CSeq", value: raw.to_string() };
        let mut parts = raw.split_whitespace();
        let num = parts.next().and_then(|n| n.parse::<u32>().ok()).ok_or_else(invalid)?;
        let method = parts.next().ok_or_else(invalid)?.to_string();
        if parts.next().is_some() {
            return Err(invalid());
        }
        Ok((num, method))
    }

    /// Media type of the body, lowercased, without parameters.
    pub fn content_type(&self) -> Option<String> {
        self.header("Content-Type")
            .map(|v| v.split(';').next().unwrap_or("").trim().to_ascii_lowercase())
    }

    fn validate(&self) -> Result<(), SignallingError> {
        for field in ["From", "To", "Call-ID"] {
            let v = self.header(field).ok_or(SignallingError::MissingHeader(field))?;
            if v.trim().is_empty() {
                return Err(SignallingError::InvalidHeader { field, value: v.into() });
            }
        }
        self.cseq()?;
        if self.header("Via").is_none() {
            return Err(SignallingError::MissingHeader("Via"));
        }
        if !self.body.is_empty() && self.header("Content-Type").is_none() {
            return Err(SignallingError::MissingHeader("Content-Type"));
        }
        Ok(())
    }
}

pub fn parse_sip(text: &[u8]) -> Result<SipMessage, SignallingError> {
    if text.is_empty() {
        return Err(SignallingError::Empty);
    }
    let (head, body) = match find_subslice(text, b"\r\n\r\n") {
        Some(i) => (&text[..i], &text[i + 4..]),
        None => match find_subslice(text, b"\n\n") {
            Some(i) => (&text[..i], &text[i + 2..]),
            None => (text, &[][..]),
        },
    };
    let head = std::str::from_utf8(head).map_err(|_| SignallingError::Encoding)?;
    let mut lines = head.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let first = lines.next().filter(|l| !l.is_empty()).ok_or(SignallingError::Empty)?;
    let start = parse_start_line(first)?;

    let mut headers: Vec<(String, String)> = Vec::new();
    for line in lines {
        if line.starts_with(' ') || line.starts_with('\t') {
            // Folded continuation of the previous header.
            let last = headers.last_mut().ok_or_else(|| SignallingError::HeaderLine(line.to_string()))?;
            last.1.push(' ');
            last.1.push_str(line.trim());
            continue;
        }
        let (name, value) = line.split_once(':').ok_or_else(|| SignallingError::HeaderLine(line.to_string()))?;
        let name = name.trim();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(SignallingError::HeaderLine(line.to_string()));
        }
        headers.push((name.to_string(), value.trim().to_string()));
    }

    let mut msg = SipMessage { start, headers, body: body.to_vec() };
    if let Some(cl) = msg.header("Content-Length") {
        let expected: usize = cl
            .trim()
            .parse()
            .map_err(|_| SignallingError::InvalidHeader { field: "Content-Length", value: cl.to_string() })?;
        if expected != body.len() {
            return Err(SignallingError::BodyLength { expected, got: body.len() });
        }
    }
    msg.body = body.to_vec();
    msg.validate()?;
    Ok(msg)
}

fn parse_start_line(line: &str) -> Result<StartLine, SignallingError> {
    let bad = || SignallingError::StartLine(line.to_string());
    if let Some(rest) = line.strip_prefix("SIP/2.0 ") {
        let (code, reason) = rest.split_once(' ').unwrap_or((rest, ""));
        let code: u16 = code.parse().map_err(|_| bad())?;
        if !(100..=699).contains(&code) {
            return Err(bad());
        }
        return Ok(StartLine::Response { code, reason: reason.to_string() });
    }
    let mut parts = line.split(' ');
    match (parts.next(), parts.next(), parts.next(), parts.next()) {
        (Some(method), Some(uri), Some("SIP/2.0"), None)
            if !method.is_empty() && method.bytes().all(|b| b.is_ascii_alphabetic()) && !uri.is_empty() =>
        {
            Ok(StartLine::Request { method: method.to_string(), uri: uri.to_string() })
        }
        _ => Err(bad()),
    }
}

fn find_subslice(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

pub fn serialize_sip(m: &SipMessage) -> Vec<u8> {
    let mut out = format!("{}\r\n", m.start);
    for (n, v) in &m.headers {
        out.push_str(n);
        out.push_str(": ");
        out.push_str(v);
        out.push_str("\r\n");
    }
    out.push_str("\r\n");
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(&m.body);
    bytes
}

/// The five modeled ISUP message types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum IsupType {
    /// Initial address
    Iam = 0x01,
    /// Address complete
    Acm = 0x06,
    /// Answer
    Anm = 0x09,
    /// Release
    Rel = 0x0c,
    /// Release complete
    Rlc = 0x10,
}

impl IsupType {
    pub const ALL: [IsupType; 5] = [IsupType::Iam, IsupType::Acm, IsupType::Anm, IsupType::Rel, IsupType::Rlc];

    pub fn from_code(code: u8) -> Result<IsupType, SignallingError> {
        IsupType::ALL
            .into_iter()
            .find(|t| *t as u8 == code)
            .ok_or(SignallingError::IsupType(code))
    }

    pub fn name(self) -> &'static str {
        match self {
            IsupType::Iam => "IAM",
            IsupType::Acm => "ACM",
            IsupType::Anm => "ANM",
            IsupType::Rel => "REL",
            IsupType::Rlc => "RLC",
        }
    }
}

/// Wire layout: CIC (2 octets, low octet first, upper 4 bits spare),
/// message type, parameter length, parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IsupMessage {
    pub message_type: IsupType,
    pub cic: u16,
    pub parameters: Vec<u8>,
}

const ISUP_HEADER: usize = 4;

pub fn serialize_isup(m: &IsupMessage) -> Result<Vec<u8>, SignallingError> {
    if m.cic > 0x0fff {
        return Err(SignallingError::IsupCic(m.cic));
    }
    let len = u8::try_from(m.parameters.len()).map_err(|_| SignallingError::IsupParams)?;
    let mut out = Vec::with_capacity(ISUP_HEADER + m.parameters.len());
    out.extend_from_slice(&m.cic.to_le_bytes());
    out.push(m.message_type as u8);
    out.push(len);
    out.extend_from_slice(&m.parameters);
    Ok(out)
}

pub fn parse_isup(bytes: &[u8]) -> Result<IsupMessage, SignallingError> {
    if bytes.len() < ISUP_HEADER {
        return Err(SignallingError::IsupTruncated { need: ISUP_HEADER, have: bytes.len() });
    }
    let cic = u16::from_le_bytes([bytes[0], bytes[1]]);
    if cic > 0x0fff {
        return Err(SignallingError::IsupCic(cic));
    }
    let message_type = IsupType::from_code(bytes[2])?;
    let need = ISUP_HEADER + bytes[3] as usize;
    if bytes.len() < need {
        return Err(SignallingError::IsupTruncated { need, have: bytes.len() });
    }
    if bytes.len() > need {
        return Err(SignallingError::IsupTrailing(bytes.len() - need));
    }
    Ok(IsupMessage { message_type, cic, parameters: bytes[ISUP_HEADER..].to_vec() })
}

/// Wraps an ISUP message in a SIP-T body: hex text, `application/isup`.
pub fn attach_isup(m: SipMessage, isup: &IsupMessage) -> Result<SipMessage, SignallingError> {
    let body = hex::encode(serialize_isup(isup)?).into_bytes();
    Ok(m.with_body(&format!("{ISUP_CONTENT_TYPE}; version=itu-t92+"), body))
}

/// The tunnelled ISUP message, if the body is an ISUP part.
pub fn extract_isup_body(m: &SipMessage) -> Result<Option<IsupMessage>, SignallingError> {
    if m.content_type().as_deref() != Some(ISUP_CONTENT_TYPE) {
        return Ok(None);
    }
    let text = std::str::from_utf8(&m.body).map_err(|_| SignallingError::IsupHex("non-ASCII body".into()))?;
    let raw = hex::decode(text.trim()).map_err(|e| SignallingError::IsupHex(e.to_string()))?;
    parse_isup(&raw).map(Some)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SignallingMessage {
    Sip(SipMessage),
    Isup(IsupMessage),
}

impl SignallingMessage {
    /// SIP BYE or ISUP REL.
    pub fn is_teardown(&self) -> bool {
        match self {
            SignallingMessage::Sip(m) => m.method() == Some("BYE"),
            SignallingMessage::Isup(m) => m.message_type == IsupType::Rel,
        }
    }

    /// A 2xx answer to INVITE, or ISUP ANM.
    pub fn is_answer(&self) -> bool {
        match self {
            SignallingMessage::Sip(m) => {
                matches!(m.status(), Some(200..=299)) && m.cseq().map(|(_, meth)| meth == "INVITE").unwrap_or(false)
            }
            SignallingMessage::Isup(m) => m.message_type == IsupType::Anm,
        }
    }

    /// Final answer to a teardown: 2xx to BYE, or ISUP RLC.
    pub fn is_release_complete(&self) -> bool {
        match self {
            SignallingMessage::Sip(m) => {
                matches!(m.status(), Some(200..=299)) && m.cseq().map(|(_, meth)| meth == "BYE").unwrap_or(false)
            }
            SignallingMessage::Isup(m) => m.message_type == IsupType::Rlc,
        }
    }

    /// Short human label, e.g. `INVITE`, `200/INVITE` or `ISUP REL`.
    pub fn label(&self) -> String {
        match self {
            SignallingMessage::Sip(m) => match &m.start {
                StartLine::Request { method, .. } => method.clone(),
                StartLine::Response { code, .. } => {
                    format!("{code}/{}", m.cseq().map(|(_, meth)| meth).unwrap_or_default())
                }
            },
            SignallingMessage::Isup(m) => format!("ISUP {}", m.message_type.name()),
        }
    }
}

/// The bytes hashed into the signalling buffer.
///
/// For SIP this is the method (requests) or status code (responses), the
/// From, To, Call-ID and CSeq values under lowercased names, then the body.
/// Via, Max-Forwards, Record-Route, Contact and every other header are left
/// out since proxies may rewrite them. ISUP is hashed whole.
pub fn canonical_bytes(m: &SignallingMessage) -> Result<Vec<u8>, SignallingError> {
    match m {
        SignallingMessage::Isup(isup) => serialize_isup(isup),
        SignallingMessage::Sip(sip) => {
            let mut out = match &sip.start {
                StartLine::Request { method, .. } => method.clone(),
                StartLine::Response { code, .. } => code.to_string(),
            };
            out.push_str("\r\n");
            for (name, field) in CANONICAL_HEADERS.into_iter().zip(["From", "To", "Call-ID", "CSeq"]) {
                let v = sip.header(name).ok_or(SignallingError::MissingHeader(field))?;
                out.push_str(name);
                out.push(':');
                out.push_str(v.trim());
                out.push_str("\r\n");
            }
            out.push_str("\r\n");
            let mut bytes = out.into_bytes();
            bytes.extend_from_slice(&sip.body);
            Ok(bytes)
        }
    }
}

pub fn message_digest(m: &SignallingMessage) -> Result<Digest, SignallingError> {
    Ok(hash(&canonical_bytes(m)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservedEvent {
    TokenOk,
    TokenFail,
}

/// MG → MGC report of one token comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MegacoNotify {
    pub termination_id: String,
    pub event: ObservedEvent,
    pub window: u32,
}

impl fmt::Display for MegacoNotify {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ev = match self.event {
            ObservedEvent::TokenOk => "vsec/tokok",
            ObservedEvent::TokenFail => "vsec/tokfail",
        };
        write!(f, "Notify = {} {{ObservedEvents = {} {{{ev}}}}}", self.termination_id, self.window)
    }
}

/// MGC answer to a Notify: keep the termination, or subtract it from the
/// context and end the call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MgcReply {
    Continue,
    Subtract,
}
