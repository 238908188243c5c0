//! Request builders and reply parsers for each exchange of the protocol.
//!
//! | request       | replies                                   |
//! |---------------|-------------------------------------------|
//! | `PING`        | `PONG`                                    |
//! | `GET_NF`      | `NF_DATA` (digest header, canonical body) |
//! | `STORE_READY` | `STORE_ACK`, then `SORTED_RESULT` if a campaign was requested |
//! | `ELECTION`    | `TAKEPART` or `REFUSE`                    |
//! | `CHECK_STORE` | `CHECK_STORE_REPLY`                       |
//! | `GET_BLOCK`   | `BLOCK_DATA`                              |
//! | `HAS_BLOCK`   | `HAS_BLOCK_REPLY`                         |
//! | `NEW_BEGINNER`| `NEW_BEGINNER` (acknowledgement)          |
//!
//! Any request may instead be answered by a single `ERROR` frame.

use std::time::Duration;

use haina_core::por::CandidateRecord;
use haina_core::wire::{FrameError, MessageKind, WireMessage};
use haina_core::Digest;

use crate::transport::{as_ms, ms};

pub fn store_ready(block: Vec<u8>, next_size: u64, campaign: bool, k: f64, timeout: Duration) -> WireMessage {
    WireMessage::new(MessageKind::StoreReady)
        .with("next_size", next_size)
        .with("campaign", u8::from(campaign))
        .with("k", k)
        .with("timeout_ms", as_ms(timeout))
        .with_body(block)
}

pub fn election(size: u64) -> WireMessage {
    WireMessage::new(MessageKind::Election).with("size", size)
}

/// Free space reported in campaigns, in GB rounded to the nearest MB.
pub fn freespace_gb(bytes: u64) -> f64 {
    (bytes as f64 / 1e6).round() / 1e3
}

pub fn takepart(freespace_bytes: u64) -> WireMessage {
    WireMessage::new(MessageKind::Takepart)
        .with("freespace_gb", freespace_gb(freespace_bytes))
        .with("freespace_bytes", freespace_bytes)
}

pub fn sorted_result(candidates: &[CandidateRecord], campaign: Duration) -> WireMessage {
    let mut msg = WireMessage::new(MessageKind::SortedResult).with("campaign_ms", as_ms(campaign));
    for c in candidates {
        msg = msg.with(
            "candidate",
            format!("{},{},{},{},{}", c.address, c.node_index, c.freespace_gb, c.rtt_ms, c.value),
        );
    }
    msg
}

/// Sorted candidates plus the campaign duration measured by the Beginner.
pub fn parse_sorted_result(msg: &WireMessage) -> Result<(Vec<CandidateRecord>, Duration), FrameError> {
    let campaign = ms(msg.parse::<f64>("campaign_ms")?);
    let bad = || FrameError::BadField("candidate".into());
    let candidates = msg
        .get_all("candidate")
        .map(|v| {
            let parts: Vec<&str> = v.split(',').collect();
            let [address, idx, nc, rtt, value] = parts.as_slice() else { return Err(bad()) };
            Ok(CandidateRecord {
                address: address.to_string(),
                node_index: idx.parse().map_err(|_| bad())?,
                freespace_gb: nc.parse().map_err(|_| bad())?,
                rtt_ms: rtt.parse().map_err(|_| bad())?,
                value: value.parse().map_err(|_| bad())?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((candidates, campaign))
}

pub fn with_address(kind: MessageKind, address: &Digest) -> WireMessage {
    WireMessage::new(kind).with("address", address.to_hex())
}

pub fn address_of(msg: &WireMessage) -> Result<Digest, FrameError> {
    Digest::from_hex(msg.require("address")?).map_err(|_| FrameError::BadField("address".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use haina_core::wire::{decode_frame, encode_frame};

    #[test]
    fn sorted_result_round_trip() {
        let cands = vec![
            CandidateRecord::scored("127.0.0.1:17002".into(), 1, 99.5, 12.25, 1.0).unwrap(),
            CandidateRecord::scored("127.0.0.1:17009".into(), 8, 0.001, 0.5, 0.3).unwrap(),
        ];
        let msg = sorted_result(&cands, Duration::from_micros(50_125));
        let back = decode_frame(&encode_frame(&msg).unwrap()).unwrap();
        let (parsed, campaign) = parse_sorted_result(&back).unwrap();
        assert_eq!(parsed, cands);
        assert_eq!(campaign, Duration::from_micros(50_125));
    }

    #[test]
    fn freespace_rounds_to_megabytes() {
        assert_eq!(freespace_gb(100_000_000_000), 100.0);
        assert_eq!(freespace_gb(100_000_000_000 - 5_000), 100.0);
        assert_eq!(freespace_gb(10_000_000), 0.01);
    }
}
