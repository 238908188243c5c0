//! Socket transport: one TCP connection per request, replies streamed back
//! until the responder closes.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use haina_core::wire::{decode_payload, decode_prefix, encode_frame, WireMessage, PREFIX_LEN};

use crate::error::NetError;
use crate::node::{NodeService, ReplySink};
use crate::transport::{Call, CallOutcome, Frame, Job, Transport};

/// Reads one frame. `Ok(None)` on a clean end of stream.
pub fn read_frame(stream: &mut impl Read) -> io::Result<Option<WireMessage>> {
    let mut prefix = [0u8; PREFIX_LEN];
    let mut got = 0;
    while got < PREFIX_LEN {
        match stream.read(&mut prefix[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(ErrorKind::UnexpectedEof.into()),
            n => got += n,
        }
    }
    let bad = |e: haina_core::wire::FrameError| io::Error::new(ErrorKind::InvalidData, e.to_string());
    let p = decode_prefix(&prefix).map_err(bad)?;
    let mut rest = vec![0u8; p.remaining()];
    stream.read_exact(&mut rest)?;
    decode_payload(p, &rest).map(Some).map_err(bad)
}

pub fn write_frame(stream: &mut impl Write, msg: &WireMessage) -> io::Result<()> {
    let bytes = encode_frame(msg).map_err(|e| io::Error::new(ErrorKind::InvalidInput, e.to_string()))?;
    stream.write_all(&bytes)?;
    stream.flush()
}

#[derive(Debug, Clone, Default)]
pub struct TcpTransport;

impl TcpTransport {
    fn exchange(call: &Call, timeout: Duration) -> CallOutcome {
        let begin = Instant::now();
        let to = call.to.clone();
        let result = Self::try_exchange(call, begin, timeout);
        let elapsed = match &result {
            Ok(frames) => frames.last().map_or(begin.elapsed(), |f| f.at),
            Err(_) => begin.elapsed(),
        };
        CallOutcome { to, result, elapsed }
    }

    fn try_exchange(call: &Call, begin: Instant, timeout: Duration) -> Result<Vec<Frame>, NetError> {
        let addr = &call.to;
        let io_err = |e: io::Error| match e.kind() {
            ErrorKind::WouldBlock | ErrorKind::TimedOut => NetError::Timeout(addr.clone()),
            _ => NetError::Io { addr: addr.clone(), reason: e.to_string() },
        };
        let sock: SocketAddr = addr
            .to_socket_addrs()
            .ok()
            .and_then(|mut a| a.next())
            .ok_or_else(|| NetError::Unreachable(addr.clone()))?;
        let mut stream = TcpStream::connect_timeout(&sock, timeout).map_err(|e| match e.kind() {
            ErrorKind::TimedOut | ErrorKind::WouldBlock => NetError::Timeout(addr.clone()),
            _ => NetError::Unreachable(addr.clone()),
        })?;
        stream.set_nodelay(true).ok();
        stream.set_write_timeout(Some(timeout)).map_err(io_err)?;
        write_frame(&mut stream, &call.request).map_err(io_err)?;
        let _ = stream.shutdown(Shutdown::Write);
        let mut frames = Vec::new();
        loop {
            let left = timeout.checked_sub(begin.elapsed()).filter(|d| !d.is_zero());
            let Some(left) = left else {
                if frames.is_empty() {
                    return Err(NetError::Timeout(addr.clone()));
                }
                break;
            };
            stream.set_read_timeout(Some(left)).map_err(io_err)?;
            match read_frame(&mut stream) {
                Ok(Some(msg)) => frames.push(Frame { at: begin.elapsed(), msg }),
                Ok(None) => break,
                Err(e) if frames.is_empty() || !matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Err(io_err(e))
                }
                Err(_) => break,
            }
        }
        if frames.is_empty() {
            return Err(NetError::Protocol { addr: addr.clone(), reason: "connection closed without reply".into() });
        }
        Ok(frames)
    }
}

impl Transport for TcpTransport {
    fn call_many(&self, _from: &str, _start: Duration, calls: Vec<Call>, timeout: Duration) -> Vec<CallOutcome> {
        if calls.len() == 1 {
            return vec![Self::exchange(&calls[0], timeout)];
        }
        thread::scope(|s| {
            let handles: Vec<_> = calls.iter().map(|c| s.spawn(move || Self::exchange(c, timeout))).collect();
            handles.into_iter().map(|h| h.join().expect("call thread panicked")).collect()
        })
    }

    fn join<'a>(&self, jobs: Vec<Job<'a>>) {
        thread::scope(|s| {
            for job in jobs {
                s.spawn(job);
            }
        });
    }
}

struct StreamSink<'a> {
    stream: &'a mut TcpStream,
    failed: bool,
}

impl ReplySink for StreamSink<'_> {
    fn send(&mut self, _at: Duration, msg: WireMessage) {
        if !self.failed && write_frame(self.stream, &msg).is_err() {
            self.failed = true;
        }
    }
}

fn serve_connection(mut stream: TcpStream, node: &NodeService, net: &TcpTransport, epoch: Instant) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(Some(Duration::from_secs(30))).ok();
    match read_frame(&mut stream) {
        Ok(Some(req)) => {
            let mut sink = StreamSink { stream: &mut stream, failed: false };
            node.handle(net, epoch.elapsed(), &peer, &req, &mut sink);
        }
        Ok(None) => {}
        Err(e) => {
            log::debug!("bad request from {peer}: {e}");
            let _ = write_frame(&mut stream, &crate::transport::error_reply("bad_frame", e));
        }
    }
    let _ = stream.shutdown(Shutdown::Both);
}

/// A node accepting connections on a background thread.
pub struct NodeServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl NodeServer {
    pub fn spawn(listener: TcpListener, node: Arc<NodeService>) -> io::Result<NodeServer> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::spawn(move || serve(listener, node, &flag));
        Ok(NodeServer { addr, stop, thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for NodeServer {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Accept loop; each connection gets its own thread.
pub fn serve(listener: TcpListener, node: Arc<NodeService>, stop: &AtomicBool) {
    let epoch = Instant::now();
    let net = TcpTransport;
    thread::scope(|s| {
        for conn in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let node = &node;
                    let net = &net;
                    s.spawn(move || serve_connection(stream, node, net, epoch));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
    });
}
