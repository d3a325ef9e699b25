//! Transports between the two gateways: an in-memory queue and a pair of
//! UDP sockets on 127.0.0.1.

use std::collections::VecDeque;
use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::covert::{CovertError, SimPacket};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("socket: {0}")]
    Io(#[from] io::Error),
    #[error("no datagram within {0:?}")]
    Timeout(Duration),
    #[error("peer socket closed")]
    Closed,
    #[error("malformed datagram: {0}")]
    Malformed(String),
}

impl From<CovertError> for ChannelError {
    fn from(e: CovertError) -> Self {
        ChannelError::Malformed(e.to_string())
    }
}

/// Everything that crosses the IP leg. `EndOfWindow`, `WindowAck` and
/// `Stop` are simulator clock ticks; the adversary never touches them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Datagram {
    Rtp(SimPacket),
    Sip(Vec<u8>),
    EndOfWindow(u32),
    WindowAck { window: u32, media: bool },
    Stop,
}

impl Datagram {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Datagram::Rtp(p) => {
                out.push(0);
                out.extend(p.to_bytes());
            }
            Datagram::Sip(b) => {
                out.push(1);
                out.extend_from_slice(b);
            }
            Datagram::EndOfWindow(n) => {
                out.push(2);
                out.extend(n.to_be_bytes());
            }
            Datagram::WindowAck { window, media } => {
                out.push(3);
                out.extend(window.to_be_bytes());
                out.push(*media as u8);
            }
            Datagram::Stop => out.push(4),
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Datagram, ChannelError> {
        let bad = || ChannelError::Malformed(format!("{} bytes", b.len()));
        let (&tag, rest) = b.split_first().ok_or_else(bad)?;
        let u32_at = |r: &[u8]| r.get(..4).map(|s| u32::from_be_bytes(s.try_into().unwrap())).ok_or_else(bad);
        Ok(match tag {
            0 => Datagram::Rtp(SimPacket::from_bytes(rest)?),
            1 => Datagram::Sip(rest.to_vec()),
            2 if rest.len() == 4 => Datagram::EndOfWindow(u32_at(rest)?),
            3 if rest.len() == 5 => Datagram::WindowAck { window: u32_at(rest)?, media: rest[4] != 0 },
            4 if rest.is_empty() => Datagram::Stop,
            _ => return Err(bad()),
        })
    }

    pub fn is_control(&self) -> bool {
        matches!(self, Datagram::EndOfWindow(_) | Datagram::WindowAck { .. } | Datagram::Stop)
    }
}

/// One direction of the IP leg.
pub trait Link {
    fn send(&mut self, d: &Datagram) -> Result<(), ChannelError>;
    /// Next datagram, or `None` when nothing is pending (in-memory only;
    /// the UDP link waits and reports a timeout instead).
    fn recv(&mut self) -> Result<Option<Datagram>, ChannelError>;
}

#[derive(Debug, Default)]
pub struct MemoryLink {
    queue: VecDeque<Datagram>,
}

impl MemoryLink {
    pub fn new() -> MemoryLink {
        MemoryLink::default()
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }
}

impl Link for MemoryLink {
    fn send(&mut self, d: &Datagram) -> Result<(), ChannelError> {
        self.queue.push_back(d.clone());
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Datagram>, ChannelError> {
        Ok(self.queue.pop_front())
    }
}

pub const UDP_TIMEOUT: Duration = Duration::from_secs(5);
const POLL: Duration = Duration::from_millis(50);

/// One end of a loopback UDP association. Incoming datagrams are read by a
/// background thread and handed over through an mpsc queue.
pub struct UdpLink {
    sock: UdpSocket,
    peer: SocketAddr,
    rx: Receiver<Result<Datagram, ChannelError>>,
    closed: Arc<AtomicBool>,
    timeout: Duration,
}

impl UdpLink {
    /// Two ends, each sending to the other.
    pub fn pair() -> Result<(UdpLink, UdpLink), ChannelError> {
        let a = UdpSocket::bind("127.0.0.1:0")?;
        let b = UdpSocket::bind("127.0.0.1:0")?;
        let (pa, pb) = (a.local_addr()?, b.local_addr()?);
        Ok((UdpLink::spawn(a, pb)?, UdpLink::spawn(b, pa)?))
    }

    fn spawn(sock: UdpSocket, peer: SocketAddr) -> Result<UdpLink, ChannelError> {
        sock.set_read_timeout(Some(POLL))?;
        let reader = sock.try_clone()?;
        let closed = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&closed);
        let (qtx, qrx) = mpsc::channel();
        thread::Builder::new().name("udp-reader".into()).spawn(move || {
            let mut buf = vec![0u8; 65536];
            while !flag.load(Ordering::Relaxed) {
                let item = match reader.recv(&mut buf) {
                    Ok(n) => Datagram::from_bytes(&buf[..n]),
                    Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => continue,
                    Err(e) => Err(e.into()),
                };
                if qtx.send(item).is_err() {
                    break;
                }
            }
        })?;
        Ok(UdpLink { sock, peer, rx: qrx, closed, timeout: UDP_TIMEOUT })
    }
}

impl Drop for UdpLink {
    fn drop(&mut self) {
        self.closed.store(true, Ordering::Relaxed);
    }
}

impl Link for UdpLink {
    fn send(&mut self, d: &Datagram) -> Result<(), ChannelError> {
        self.sock.send_to(&d.to_bytes(), self.peer)?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Option<Datagram>, ChannelError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(item) => item.map(Some),
            Err(RecvTimeoutError::Timeout) => Err(ChannelError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ChannelError::Closed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<Datagram> {
        vec![
            Datagram::Sip(b"INVITE sip:x SIP/2.0\r\n\r\n".to_vec()),
            Datagram::Rtp(SimPacket { rtp_seq: 9, payload: vec![0xff; 160], ..Default::default() }),
            Datagram::EndOfWindow(1),
            Datagram::WindowAck { window: 1, media: true },
            Datagram::Stop,
        ]
    }

    #[test]
    fn memory_is_fifo() {
        let mut l = MemoryLink::new();
        for d in samples() {
            l.send(&d).unwrap();
        }
        for d in samples() {
            assert_eq!(l.recv().unwrap(), Some(d));
        }
        assert_eq!(l.recv().unwrap(), None);
    }

    #[test]
    fn datagram_bytes_round_trip() {
        for d in samples() {
            assert_eq!(Datagram::from_bytes(&d.to_bytes()).unwrap(), d);
        }
        assert!(Datagram::from_bytes(&[]).is_err());
        assert!(Datagram::from_bytes(&[2, 0]).is_err());
    }

    #[test]
    fn udp_delivers_in_order() {
        let (mut a, mut b) = UdpLink::pair().unwrap();
        for d in samples() {
            a.send(&d).unwrap();
        }
        for d in samples() {
            assert_eq!(b.recv().unwrap(), Some(d));
        }
        b.send(&Datagram::Stop).unwrap();
        assert_eq!(a.recv().unwrap(), Some(Datagram::Stop));
    }
}
