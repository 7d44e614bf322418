//! Datagram wire format.
//!
//! Every packet starts with an 8-byte common header followed by a body whose
//! shape depends on the packet type. Offsets and sizes inside bodies are
//! written at the transfer's descriptor width (2, 4, 8 or 16 bytes), chosen as
//! the smallest width able to express the transfer size. All integers are
//! big-endian. The full byte-offset table lives in `docs/wire-format.md`.
//!
//! ```text
//!  0        1        2        3        4        5        6        7
//! +--------+--------+--------+--------+--------+--------+--------+--------+
//! |ver|type| flags  |    reserved     |            session_id             |
//! +--------+--------+--------+--------+--------+--------+--------+--------+
//! ```

mod codec;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::holes::ByteRange;

pub use codec::{decode_header, decode_packet, encode_packet, encoded_len};

/// Protocol version carried in the high nibble of the first byte.
pub const VERSION: u8 = 1;

/// Size of the common header in bytes.
pub const HEADER_LEN: usize = 8;

/// Longest path a Request or Metadata packet may carry.
pub const MAX_PATH_LEN: usize = 1024;

/// Largest UDP payload over IPv4.
pub const UDP_PAYLOAD_CEILING: usize = 65507;

/// Size of the file digest carried in Metadata.
pub const DIGEST_LEN: usize = 32;

pub(crate) const FLAG_WIDTH_MASK: u8 = 0b0000_0011;
pub(crate) const FLAG_STREAMING: u8 = 1 << 2;
pub(crate) const FLAG_END_OF_DATA: u8 = 1 << 3;
pub(crate) const FLAG_STATUS_REQUESTED: u8 = 1 << 4;

/// Integer width used for offsets, sizes and hole bounds within a transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DescriptorWidth {
    W16,
    W32,
    W64,
    W128,
}

impl DescriptorWidth {
    pub const ALL: [DescriptorWidth; 4] = [Self::W16, Self::W32, Self::W64, Self::W128];

    pub fn bits(self) -> u32 {
        match self {
            Self::W16 => 16,
            Self::W32 => 32,
            Self::W64 => 64,
            Self::W128 => 128,
        }
    }

    pub fn byte_len(self) -> usize {
        self.bits() as usize / 8
    }

    /// Largest value representable at this width, `2^bits - 1`.
    pub fn max_value(self) -> u128 {
        match self {
            Self::W128 => u128::MAX,
            w => (1u128 << w.bits()) - 1,
        }
    }

    /// The two-bit code stored in the low bits of the flags byte.
    pub fn code(self) -> u8 {
        match self {
            Self::W16 => 0b00,
            Self::W32 => 0b01,
            Self::W64 => 0b10,
            Self::W128 => 0b11,
        }
    }

    pub fn from_code(code: u8) -> Self {
        match code & FLAG_WIDTH_MASK {
            0b00 => Self::W16,
            0b01 => Self::W32,
            0b10 => Self::W64,
            _ => Self::W128,
        }
    }

    /// The next narrower width, if any.
    pub fn narrower(self) -> Option<Self> {
        match self {
            Self::W16 => None,
            Self::W32 => Some(Self::W16),
            Self::W64 => Some(Self::W32),
            Self::W128 => Some(Self::W64),
        }
    }

    /// True when `offset + len <= 2^bits`, i.e. a span of `len` bytes
    /// starting at `offset` stays inside the addressable space.
    pub fn fits_span(self, offset: u128, len: u128) -> bool {
        if offset > self.max_value() {
            return false;
        }
        if len == 0 {
            return true;
        }
        // offset + len <= max + 1  <=>  offset <= max - (len - 1)
        match self.max_value().checked_sub(len - 1) {
            Some(limit) => offset <= limit,
            None => false,
        }
    }
}

impl fmt::Display for DescriptorWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-bit", self.bits())
    }
}

/// Smallest descriptor width able to express `size`.
pub fn select_descriptor_width(size: u128) -> DescriptorWidth {
    DescriptorWidth::ALL
        .into_iter()
        .find(|w| size <= w.max_value())
        .unwrap_or(DescriptorWidth::W128)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum PacketType {
    Request = 1,
    Metadata = 2,
    Data = 3,
    Status = 4,
}

impl PacketType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Self::Request),
            2 => Some(Self::Metadata),
            3 => Some(Self::Data),
            4 => Some(Self::Status),
            _ => None,
        }
    }
}

/// Header flag bits other than the descriptor width.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Flags {
    pub streaming: bool,
    pub end_of_data: bool,
    pub status_requested: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketHeader {
    pub session_id: u32,
    pub width: DescriptorWidth,
    pub flags: Flags,
}

impl PacketHeader {
    pub fn new(session_id: u32, width: DescriptorWidth) -> Self {
        Self {
            session_id,
            width,
            flags: Flags::default(),
        }
    }

    pub(crate) fn flags_byte(&self) -> u8 {
        let mut b = self.width.code();
        if self.flags.streaming {
            b |= FLAG_STREAMING;
        }
        if self.flags.end_of_data {
            b |= FLAG_END_OF_DATA;
        }
        if self.flags.status_requested {
            b |= FLAG_STATUS_REQUESTED;
        }
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Get,
    Put,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub direction: Direction,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    /// Bytes in the transfer; `u128::MAX` means unbounded when the
    /// streaming flag is set.
    pub transfer_size: u128,
    pub digest: [u8; DIGEST_LEN],
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Data {
    pub offset: u128,
    /// Solicitation number, present exactly when the status-requested flag
    /// is set. Echoed back in the answering Status.
    pub solicit: Option<u32>,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Status {
    /// Lowest byte not yet contiguously received.
    pub progress: u128,
    /// Solicitation number this status answers, if it answers one.
    pub echo: Option<u32>,
    pub holes: Vec<ByteRange>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Body {
    Request(Request),
    Metadata(Metadata),
    Data(Data),
    Status(Status),
}

impl Body {
    pub fn packet_type(&self) -> PacketType {
        match self {
            Body::Request(_) => PacketType::Request,
            Body::Metadata(_) => PacketType::Metadata,
            Body::Data(_) => PacketType::Data,
            Body::Status(_) => PacketType::Status,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub header: PacketHeader,
    pub body: Body,
}

impl Packet {
    pub fn packet_type(&self) -> PacketType {
        self.body.packet_type()
    }

    /// Checks every type invariant that encoding relies on and decoding
    /// guarantees.
    pub fn validate(&self, cfg: &WireConfig) -> Result<(), WireError> {
        let width = self.header.width;
        match &self.body {
            Body::Request(r) => check_path(&r.path),
            Body::Metadata(m) => {
                check_path(&m.path)?;
                if self.header.flags.streaming {
                    if m.transfer_size != u128::MAX {
                        return Err(WireError::Malformed(
                            "streaming metadata must declare an unbounded size",
                        ));
                    }
                } else if m.transfer_size > width.max_value() {
                    return Err(WireError::Malformed(
                        "transfer size exceeds descriptor width",
                    ));
                }
                Ok(())
            }
            Body::Data(d) => {
                if d.payload.len() > cfg.max_payload {
                    return Err(WireError::OversizeField {
                        field: "payload",
                        len: d.payload.len(),
                        max: cfg.max_payload,
                    });
                }
                if d.solicit.is_some() != self.header.flags.status_requested {
                    return Err(WireError::Malformed(
                        "solicitation number must accompany the status-requested flag",
                    ));
                }
                if !width.fits_span(d.offset, d.payload.len() as u128) {
                    return Err(WireError::Malformed("data span exceeds descriptor width"));
                }
                Ok(())
            }
            Body::Status(s) => {
                if s.holes.len() > cfg.max_holes_per_status {
                    return Err(WireError::OversizeField {
                        field: "holes",
                        len: s.holes.len(),
                        max: cfg.max_holes_per_status,
                    });
                }
                if s.progress > width.max_value() {
                    return Err(WireError::Malformed("progress exceeds descriptor width"));
                }
                check_holes(&s.holes, width)
            }
        }
    }
}

fn check_path(path: &str) -> Result<(), WireError> {
    if path.len() > MAX_PATH_LEN {
        return Err(WireError::OversizeField {
            field: "path",
            len: path.len(),
            max: MAX_PATH_LEN,
        });
    }
    Ok(())
}

fn check_holes(holes: &[ByteRange], width: DescriptorWidth) -> Result<(), WireError> {
    let mut prev_end: Option<u128> = None;
    for h in holes {
        if h.start >= h.end || h.end > width.max_value() {
            return Err(WireError::MalformedHoles);
        }
        if let Some(pe) = prev_end {
            if h.start < pe {
                return Err(WireError::MalformedHoles);
            }
        }
        prev_end = Some(h.end);
    }
    Ok(())
}

/// Size limits applied when encoding and decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireConfig {
    pub max_payload: usize,
    pub max_holes_per_status: usize,
}

impl Default for WireConfig {
    fn default() -> Self {
        Self {
            max_payload: 1452,
            max_holes_per_status: 64,
        }
    }
}

impl WireConfig {
    /// Largest Data header: common header, 128-bit offset, solicitation number.
    pub const MAX_DATA_OVERHEAD: usize = HEADER_LEN + 16 + 4;

    /// Largest datagram this configuration can produce.
    pub fn max_datagram(&self) -> usize {
        let data = Self::MAX_DATA_OVERHEAD + self.max_payload;
        let status = HEADER_LEN + 16 + 1 + 4 + 2 + self.max_holes_per_status * 32;
        let meta = HEADER_LEN + 16 + DIGEST_LEN + 2 + MAX_PATH_LEN;
        data.max(status).max(meta)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.max_payload == 0 {
            return Err(WireError::Config("max_payload must be at least 1"));
        }
        if self.max_holes_per_status == 0 || self.max_holes_per_status > u16::MAX as usize {
            return Err(WireError::Config(
                "max_holes_per_status must be in 1..=65535",
            ));
        }
        if self.max_datagram() > UDP_PAYLOAD_CEILING {
            return Err(WireError::Config(
                "configured packets exceed the UDP payload ceiling",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("buffer truncated")]
    Truncated,
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown packet type {0}")]
    UnknownType(u8),
    #[error("hole list is unsorted, overlapping or empty-ranged")]
    MalformedHoles,
    #[error("{field} too large: {len} > {max}")]
    OversizeField {
        field: &'static str,
        len: usize,
        max: usize,
    },
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
    #[error("invalid wire configuration: {0}")]
    Config(&'static str),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_selection_boundaries() {
        assert_eq!(select_descriptor_width(0), DescriptorWidth::W16);
        assert_eq!(select_descriptor_width(65535), DescriptorWidth::W16);
        assert_eq!(select_descriptor_width(65536), DescriptorWidth::W32);
        assert_eq!(
            select_descriptor_width(u32::MAX as u128),
            DescriptorWidth::W32
        );
        assert_eq!(
            select_descriptor_width(u32::MAX as u128 + 1),
            DescriptorWidth::W64
        );
        assert_eq!(
            select_descriptor_width(u64::MAX as u128),
            DescriptorWidth::W64
        );
        assert_eq!(
            select_descriptor_width(u64::MAX as u128 + 1),
            DescriptorWidth::W128
        );
        assert_eq!(select_descriptor_width(u128::MAX), DescriptorWidth::W128);
    }

    #[test]
    fn width_codes_roundtrip() {
        for w in DescriptorWidth::ALL {
            assert_eq!(DescriptorWidth::from_code(w.code()), w);
        }
        assert_eq!(DescriptorWidth::W64.code(), 0b10);
    }

    #[test]
    fn span_fits_exactly_to_top_of_space() {
        let w = DescriptorWidth::W16;
        assert!(w.fits_span(65535, 1));
        assert!(!w.fits_span(65535, 2));
        assert!(w.fits_span(0, 65536));
        assert!(!w.fits_span(0, 65537));
        let w = DescriptorWidth::W128;
        assert!(w.fits_span(u128::MAX, 1));
        assert!(w.fits_span(u128::MAX, 0));
        assert!(!w.fits_span(u128::MAX, 2));
    }

    #[test]
    fn default_config_is_valid() {
        WireConfig::default().validate().unwrap();
        let bad = WireConfig {
            max_payload: 65500,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
