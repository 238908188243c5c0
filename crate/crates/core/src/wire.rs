//! Length-prefixed frame codec.
//!
//! ```text
//! "HAIN" | type: u8 | header_len: u32 BE | body_len: u64 BE | header | body
//! ```
//!
//! The header is UTF-8 `key:value` lines, each terminated by `\n`. Keys may
//! repeat. Block bytes travel only in the body. A whole frame is at most
//! [`MAX_FRAME`] bytes.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

pub const MAGIC: [u8; 4] = *b"HAIN";
pub const PREFIX_LEN: usize = 17;
pub const MAX_FRAME: usize = 64 * 1024 * 1024;

macro_rules! kinds {
    ($($name:ident = $tag:literal),+ $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum MessageKind {
            $($name = $tag),+
        }

        impl MessageKind {
            pub const ALL: &'static [MessageKind] = &[$(MessageKind::$name),+];

            pub fn from_tag(tag: u8) -> Option<MessageKind> {
                match tag {
                    $($tag => Some(MessageKind::$name),)+
                    _ => None,
                }
            }
        }
    };
}

kinds! {
    Ping = 1,
    Pong = 2,
    GetNf = 3,
    NfData = 4,
    StoreReady = 5,
    StoreAck = 6,
    Election = 7,
    Takepart = 8,
    Refuse = 9,
    SortedResult = 10,
    NewBeginner = 11,
    CheckStore = 12,
    CheckStoreReply = 13,
    GetBlock = 14,
    BlockData = 15,
    HasBlock = 16,
    HasBlockReply = 17,
    Error = 18,
}

impl MessageKind {
    pub fn tag(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FrameError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("frame truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("frame of {0} bytes exceeds the 64 MiB limit")]
    Oversize(u64),
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
    #[error("header is not valid key:value UTF-8")]
    BadHeader,
    #[error("invalid header entry {0:?}")]
    BadEntry(String),
    #[error("missing header field {0:?}")]
    MissingField(String),
    #[error("header field {0:?} has an invalid value")]
    BadField(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageKind,
    pub header: Vec<(String, String)>,
    pub body: Vec<u8>,
}

/// Parsed fixed-size prefix of a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePrefix {
    pub kind: MessageKind,
    pub header_len: u32,
    pub body_len: u64,
}

impl FramePrefix {
    /// Length of header plus body still to be read after the prefix.
    pub fn remaining(&self) -> usize {
        self.header_len as usize + self.body_len as usize
    }
}

impl WireMessage {
    pub fn new(kind: MessageKind) -> WireMessage {
        WireMessage { kind, header: Vec::new(), body: Vec::new() }
    }

    /// Appends a header entry.
    pub fn with(mut self, key: &str, value: impl ToString) -> WireMessage {
        self.header.push((key.to_string(), value.to_string()));
        self
    }

    pub fn with_body(mut self, body: Vec<u8>) -> WireMessage {
        self.body = body;
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.header.iter().filter(move |(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, FrameError> {
        self.get(key).ok_or_else(|| FrameError::MissingField(key.to_string()))
    }

    /// Parses a required field with `FromStr`.
    pub fn parse<T: core::str::FromStr>(&self, key: &str) -> Result<T, FrameError> {
        self.require(key)?.parse().map_err(|_| FrameError::BadField(key.to_string()))
    }

    fn encode_header(&self) -> Result<Vec<u8>, FrameError> {
        let mut out = Vec::new();
        for (k, v) in &self.header {
            if k.is_empty() || k.contains([':', '\n']) || v.contains('\n') {
                return Err(FrameError::BadEntry(k.clone()));
            }
            out.extend_from_slice(k.as_bytes());
            out.push(b':');
            out.extend_from_slice(v.as_bytes());
            out.push(b'\n');
        }
        Ok(out)
    }
}

fn decode_header(bytes: &[u8]) -> Result<Vec<(String, String)>, FrameError> {
    let text = core::str::from_utf8(bytes).map_err(|_| FrameError::BadHeader)?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix('\n').ok_or(FrameError::BadHeader)?;
    body.split('\n')
        .map(|line| match line.split_once(':') {
            Some((k, v)) if !k.is_empty() => Ok((k.to_string(), v.to_string())),
            _ => Err(FrameError::BadHeader),
        })
        .collect()
}

/// Encodes a message. Fails on header entries that cannot round-trip
/// (keys with `:` or newlines, values with newlines) and on oversize frames.
pub fn encode_frame(msg: &WireMessage) -> Result<Vec<u8>, FrameError> {
    let header = msg.encode_header()?;
    let total = PREFIX_LEN + header.len() + msg.body.len();
    if total > MAX_FRAME {
        return Err(FrameError::Oversize(total as u64));
    }
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&MAGIC);
    out.push(msg.kind.tag());
    out.extend_from_slice(&(header.len() as u32).to_be_bytes());
    out.extend_from_slice(&(msg.body.len() as u64).to_be_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&msg.body);
    Ok(out)
}

/// Validates the 17-byte prefix, including the total-size limit.
pub fn decode_prefix(bytes: &[u8]) -> Result<FramePrefix, FrameError> {
    if bytes.len() < PREFIX_LEN {
        return Err(FrameError::Truncated { needed: PREFIX_LEN, have: bytes.len() });
    }
    let magic = [bytes[0], bytes[1], bytes[2], bytes[3]];
    if magic != MAGIC {
        return Err(FrameError::BadMagic(magic));
    }
    let kind = MessageKind::from_tag(bytes[4]).ok_or(FrameError::UnknownType(bytes[4]))?;
    let header_len = u32::from_be_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]);
    let mut bl = [0u8; 8];
    bl.copy_from_slice(&bytes[9..17]);
    let body_len = u64::from_be_bytes(bl);
    let total = (PREFIX_LEN as u64)
        .saturating_add(u64::from(header_len))
        .saturating_add(body_len);
    if total > MAX_FRAME as u64 {
        return Err(FrameError::Oversize(total));
    }
    Ok(FramePrefix { kind, header_len, body_len })
}

/// Decodes exactly one complete frame.
pub fn decode_frame(bytes: &[u8]) -> Result<WireMessage, FrameError> {
    let prefix = decode_prefix(bytes)?;
    let needed = PREFIX_LEN + prefix.remaining();
    if bytes.len() < needed {
        return Err(FrameError::Truncated { needed, have: bytes.len() });
    }
    if bytes.len() > needed {
        return Err(FrameError::Trailing(bytes.len() - needed));
    }
    decode_payload(prefix, &bytes[PREFIX_LEN..])
}

/// Decodes header and body once the prefix has been read separately.
pub fn decode_payload(prefix: FramePrefix, rest: &[u8]) -> Result<WireMessage, FrameError> {
    if rest.len() != prefix.remaining() {
        return Err(FrameError::Truncated { needed: prefix.remaining(), have: rest.len() });
    }
    let (h, body) = rest.split_at(prefix.header_len as usize);
    Ok(WireMessage { kind: prefix.kind, header: decode_header(h)?, body: body.to_vec() })
}
