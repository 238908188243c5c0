//! Message transport contract shared by the simulated and TCP networks.
//!
//! One request opens one exchange; the responder writes zero or more reply
//! frames and closes. Every reply frame is stamped with its arrival time
//! relative to the moment the request was sent, on whichever clock the
//! transport runs (virtual for the simulator, wall for TCP).

use std::time::Duration;

use haina_core::wire::{MessageKind, WireMessage};

use crate::error::NetError;

#[derive(Debug, Clone)]
pub struct Call {
    pub to: String,
    pub request: WireMessage,
}

impl Call {
    pub fn new(to: impl Into<String>, request: WireMessage) -> Call {
        Call { to: to.into(), request }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// Arrival time since the request was sent.
    pub at: Duration,
    pub msg: WireMessage,
}

#[derive(Debug, Clone)]
pub struct CallOutcome {
    pub to: String,
    pub result: Result<Vec<Frame>, NetError>,
    /// Time from sending until the last frame arrived or the failure was
    /// detected.
    pub elapsed: Duration,
}

impl CallOutcome {
    /// First reply frame of the given kind, if the call succeeded.
    pub fn frame(&self, kind: MessageKind) -> Option<&Frame> {
        self.result.as_ref().ok()?.iter().find(|f| f.msg.kind == kind)
    }

    /// Turns a successful exchange whose first frame is `ERROR` into a
    /// remote error.
    pub fn into_frames(self) -> Result<Vec<Frame>, NetError> {
        let frames = self.result?;
        if let Some(first) = frames.first() {
            if first.msg.kind == MessageKind::Error {
                return Err(NetError::Remote {
                    addr: self.to,
                    code: first.msg.get("code").unwrap_or("unknown").to_string(),
                    detail: first.msg.get("detail").unwrap_or("").to_string(),
                });
            }
        } else {
            return Err(NetError::Protocol { addr: self.to, reason: "no reply".into() });
        }
        Ok(frames)
    }
}

/// A job handed to [`Transport::join`].
pub type Job<'a> = Box<dyn FnOnce() + Send + 'a>;

pub trait Transport: Send + Sync {
    /// Issues every call concurrently, all starting at `start` on the
    /// caller's clock, and waits for each to finish or hit `timeout`.
    /// Outcomes are returned in call order.
    fn call_many(&self, from: &str, start: Duration, calls: Vec<Call>, timeout: Duration) -> Vec<CallOutcome>;

    fn call(&self, from: &str, start: Duration, to: &str, request: WireMessage, timeout: Duration) -> CallOutcome {
        self.call_many(from, start, vec![Call::new(to, request)], timeout)
            .pop()
            .expect("one call yields one outcome")
    }

    /// Runs independent client activities concurrently and waits for all of
    /// them. Transports with a virtual clock run them in order instead, so
    /// the schedule stays deterministic.
    fn join<'a>(&self, jobs: Vec<Job<'a>>) {
        for job in jobs {
            job();
        }
    }
}

/// Converts fractional milliseconds to a duration, saturating negatives to 0.
pub fn ms(v: f64) -> Duration {
    Duration::from_secs_f64(v.max(0.0) / 1000.0)
}

pub fn as_ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

/// Builds an `ERROR` reply.
pub fn error_reply(code: &str, detail: impl ToString) -> WireMessage {
    WireMessage::new(MessageKind::Error).with("code", code).with("detail", detail.to_string().replace('\n', " "))
}
