//! Fixed 20-byte application frame.
//!
//! ```text
//!  0      1       2      3..5  5..7  7..9  9            10..14     14..18   18..20
//! +------+-------+------+-----+-----+-----+------------+----------+--------+------+
//! | 0xA5 | ver=1 | type | src | dst | seq | kind/code  | time (s) | payload| crc  |
//! +------+-------+------+-----+-----+-----+------------+----------+--------+------+
//! ```
//!
//! Multi-byte fields are big-endian; the payload is two's complement. The
//! CRC covers bytes 0..18.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::crc::crc16;
use crate::model::SensorKind;

pub const FRAME_LEN: usize = 20;
pub const SYNC: u8 = 0xA5;
pub const VERSION: u8 = 0x01;
pub const GATEWAY_ADDR: u16 = 0x0000;
pub const BROADCAST_ADDR: u16 = 0xFFFF;

pub const CMD_SET_INTERVAL: u8 = 0x10;
pub const CMD_SLEEP: u8 = 0x11;
pub const CMD_WAKE: u8 = 0x12;

/// Heartbeat `kind_or_code` bit signalling a sensor fault on the node.
pub const HEARTBEAT_FAULT: u8 = 0x01;
/// ACK payload for a command the node did not understand.
pub const ACK_ERROR: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameType {
    Data,
    Ack,
    Cmd,
    Heartbeat,
}

impl FrameType {
    pub fn code(self) -> u8 {
        match self {
            FrameType::Data => 0x01,
            FrameType::Ack => 0x02,
            FrameType::Cmd => 0x03,
            FrameType::Heartbeat => 0x04,
        }
    }

    pub fn from_code(code: u8) -> Option<FrameType> {
        match code {
            0x01 => Some(FrameType::Data),
            0x02 => Some(FrameType::Ack),
            0x03 => Some(FrameType::Cmd),
            0x04 => Some(FrameType::Heartbeat),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub ftype: FrameType,
    pub src: u16,
    pub dst: u16,
    pub seq: u16,
    pub kind_or_code: u8,
    pub timestamp: u32,
    pub payload: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("DATA frame carries unknown sensor kind code {0:#04x}")]
    UnknownKind(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeError {
    #[error("bad length {0}, expected 20")]
    BadLength(usize),
    #[error("bad sync byte {0:#04x}")]
    BadSync(u8),
    #[error("unknown version {0:#04x}")]
    UnknownVersion(u8),
    #[error("unknown frame type {0:#04x}")]
    UnknownType(u8),
    #[error("crc mismatch: computed {computed:#06x}, frame carries {carried:#06x}")]
    BadCrc { computed: u16, carried: u16 },
    #[error("DATA frame carries unknown sensor kind code {0:#04x}")]
    UnknownKind(u8),
}

impl DecodeError {
    /// Short stable name for counters and logs.
    pub fn reason(&self) -> &'static str {
        match self {
            DecodeError::BadLength(_) => "bad_length",
            DecodeError::BadSync(_) => "bad_sync",
            DecodeError::UnknownVersion(_) => "unknown_version",
            DecodeError::UnknownType(_) => "unknown_type",
            DecodeError::BadCrc { .. } => "bad_crc",
            DecodeError::UnknownKind(_) => "unknown_kind",
        }
    }
}

impl Frame {
    pub fn data(src: u16, seq: u16, kind: SensorKind, timestamp: u32, centi: i32) -> Frame {
        Frame {
            ftype: FrameType::Data,
            src,
            dst: GATEWAY_ADDR,
            seq,
            kind_or_code: kind.code(),
            timestamp,
            payload: centi,
        }
    }

    pub fn ack(src: u16, dst: u16, seq: u16, code: u8, timestamp: u32, payload: i32) -> Frame {
        Frame { ftype: FrameType::Ack, src, dst, seq, kind_or_code: code, timestamp, payload }
    }

    pub fn command(dst: u16, seq: u16, code: u8, timestamp: u32, arg: i32) -> Frame {
        Frame { ftype: FrameType::Cmd, src: GATEWAY_ADDR, dst, seq, kind_or_code: code, timestamp, payload: arg }
    }

    pub fn heartbeat(src: u16, seq: u16, timestamp: u32, battery_centi_pct: i32, fault: bool) -> Frame {
        Frame {
            ftype: FrameType::Heartbeat,
            src,
            dst: GATEWAY_ADDR,
            seq,
            kind_or_code: if fault { HEARTBEAT_FAULT } else { 0 },
            timestamp,
            payload: battery_centi_pct,
        }
    }

    pub fn sensor_kind(&self) -> Option<SensorKind> {
        match self.ftype {
            FrameType::Data => SensorKind::from_code(self.kind_or_code),
            _ => None,
        }
    }

    pub fn encode(&self) -> Result<[u8; FRAME_LEN], EncodeError> {
        if self.ftype == FrameType::Data && SensorKind::from_code(self.kind_or_code).is_none() {
            return Err(EncodeError::UnknownKind(self.kind_or_code));
        }
        let mut out = [0u8; FRAME_LEN];
        out[0] = SYNC;
        out[1] = VERSION;
        out[2] = self.ftype.code();
        out[3..5].copy_from_slice(&self.src.to_be_bytes());
        out[5..7].copy_from_slice(&self.dst.to_be_bytes());
        out[7..9].copy_from_slice(&self.seq.to_be_bytes());
        out[9] = self.kind_or_code;
        out[10..14].copy_from_slice(&self.timestamp.to_be_bytes());
        out[14..18].copy_from_slice(&self.payload.to_be_bytes());
        let crc = crc16(&out[..18]);
        out[18..20].copy_from_slice(&crc.to_be_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame, DecodeError> {
        if bytes.len() != FRAME_LEN {
            return Err(DecodeError::BadLength(bytes.len()));
        }
        if bytes[0] != SYNC {
            return Err(DecodeError::BadSync(bytes[0]));
        }
        if bytes[1] != VERSION {
            return Err(DecodeError::UnknownVersion(bytes[1]));
        }
        let ftype = FrameType::from_code(bytes[2]).ok_or(DecodeError::UnknownType(bytes[2]))?;
        let computed = crc16(&bytes[..18]);
        let carried = u16::from_be_bytes([bytes[18], bytes[19]]);
        if computed != carried {
            return Err(DecodeError::BadCrc { computed, carried });
        }
        let be16 = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let be32 = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
        let frame = Frame {
            ftype,
            src: be16(3),
            dst: be16(5),
            seq: be16(7),
            kind_or_code: bytes[9],
            timestamp: u32::from_be_bytes(be32(10)),
            payload: i32::from_be_bytes(be32(14)),
        };
        if ftype == FrameType::Data && SensorKind::from_code(frame.kind_or_code).is_none() {
            return Err(DecodeError::UnknownKind(frame.kind_or_code));
        }
        Ok(frame)
    }
}

/// Free-function spellings of the codec.
pub fn encode_frame(frame: &Frame) -> Result<[u8; FRAME_LEN], EncodeError> {
    frame.encode()
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, DecodeError> {
    Frame::decode(bytes)
}

/// `t=<sim_s> dir=<up|down> a5 01 ...` line for frames.log.
pub fn hex_dump_line(t_s: f64, uplink: bool, bytes: &[u8]) -> String {
    let mut line = format!("t={t_s:.3} dir={}", if uplink { "up" } else { "down" });
    for b in bytes {
        line.push_str(&format!(" {b:02x}"));
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Frame {
        Frame::data(0x0001, 42, SensorKind::TemperatureC, 3600, 2502)
    }

    #[test]
    fn data_frame_layout() {
        let bytes = sample().encode().unwrap();
        let expected: [u8; 20] = [
            0xA5, 0x01, 0x01, 0x00, 0x01, 0x00, 0x00, 0x00, 0x2A, 0x01, 0x00, 0x00, 0x0E, 0x10, 0x00, 0x00, 0x09, 0xC6,
            0x55, 0x5E,
        ];
        assert_eq!(bytes, expected);
        assert_eq!(Frame::decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn negative_payload_is_twos_complement() {
        let f = Frame::ack(1, 0, 7, CMD_WAKE, 0, ACK_ERROR);
        let bytes = f.encode().unwrap();
        assert_eq!(&bytes[14..18], &[0xFF, 0xFF, 0xFF, 0xFF]);
        assert_eq!(Frame::decode(&bytes).unwrap().payload, -1);
    }

    #[test]
    fn decode_errors_are_distinct() {
        let good = sample().encode().unwrap();
        assert_eq!(Frame::decode(&good[..19]), Err(DecodeError::BadLength(19)));
        assert_eq!(Frame::decode(&[]), Err(DecodeError::BadLength(0)));

        let mut b = good;
        b[0] = 0x00;
        assert_eq!(Frame::decode(&b), Err(DecodeError::BadSync(0x00)));

        let mut b = good;
        b[1] = 0x02;
        assert_eq!(Frame::decode(&b), Err(DecodeError::UnknownVersion(0x02)));

        let mut b = good;
        b[2] = 0x09;
        assert_eq!(Frame::decode(&b), Err(DecodeError::UnknownType(0x09)));

        let mut b = good;
        b[17] ^= 0x01;
        assert!(matches!(Frame::decode(&b), Err(DecodeError::BadCrc { .. })));

        // valid CRC over an unknown sensor code
        let mut b = good;
        b[9] = 0x07;
        let crc = crc16(&b[..18]).to_be_bytes();
        b[18..20].copy_from_slice(&crc);
        assert_eq!(Frame::decode(&b), Err(DecodeError::UnknownKind(0x07)));
    }

    #[test]
    fn encode_rejects_unknown_kind() {
        let f = Frame { kind_or_code: 0x00, ..sample() };
        assert_eq!(f.encode(), Err(EncodeError::UnknownKind(0)));
    }

    #[test]
    fn single_bit_flips_are_rejected() {
        let frames = [
            sample(),
            Frame::heartbeat(3, 9, 60, 9980, false),
            Frame::command(3, 1, CMD_SET_INTERVAL, 120, 30),
            Frame::ack(0, 3, 9, 0, 61, 0),
        ];
        for f in frames {
            let good = f.encode().unwrap();
            for pos in 0..FRAME_LEN * 8 {
                let mut b = good;
                b[pos / 8] ^= 1 << (pos % 8);
                assert!(Frame::decode(&b).is_err(), "flip at bit {pos} accepted");
            }
        }
    }

    #[test]
    fn hex_dump_format() {
        let bytes = sample().encode().unwrap();
        let line = hex_dump_line(3600.25, true, &bytes);
        assert!(line.starts_with("t=3600.250 dir=up a5 01 01 00 01"));
        assert!(line.ends_with("09 c6 55 5e"));
    }
}
