//! Probe packet layout.
//!
//! Big-endian fields: magic (4), version (1), train id (4), sequence (4),
//! packets in train (4), sender departure timestamp ns (8), nominal gap ns
//! (8), zero padding to the configured packet size.

use super::ProbeError;

pub const MAGIC: [u8; 4] = *b"PABP";
pub const VERSION: u8 = 1;
/// Bytes of header before padding.
pub const HEADER_LEN: usize = 33;

/// Decoded probe packet header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeHeader {
    pub train: u32,
    pub seq: u32,
    pub total: u32,
    pub departure_ns: u64,
    pub tau_ns: u64,
}

/// Writes the header into the front of `buf` (the rest is padding).
pub fn encode_packet(header: &ProbeHeader, buf: &mut [u8]) -> Result<(), ProbeError> {
    if buf.len() < HEADER_LEN {
        return Err(ProbeError::BadPacket(format!(
            "buffer of {} bytes cannot hold the {HEADER_LEN}-byte header",
            buf.len()
        )));
    }
    buf[0..4].copy_from_slice(&MAGIC);
    buf[4] = VERSION;
    buf[5..9].copy_from_slice(&header.train.to_be_bytes());
    buf[9..13].copy_from_slice(&header.seq.to_be_bytes());
    buf[13..17].copy_from_slice(&header.total.to_be_bytes());
    buf[17..25].copy_from_slice(&header.departure_ns.to_be_bytes());
    buf[25..33].copy_from_slice(&header.tau_ns.to_be_bytes());
    Ok(())
}

pub fn decode_packet(buf: &[u8]) -> Result<ProbeHeader, ProbeError> {
    if buf.len() < HEADER_LEN {
        return Err(ProbeError::BadPacket(format!(
            "{} bytes is shorter than the header",
            buf.len()
        )));
    }
    if buf[0..4] != MAGIC {
        return Err(ProbeError::BadPacket("bad magic".into()));
    }
    if buf[4] != VERSION {
        return Err(ProbeError::BadPacket(format!(
            "unsupported version {}",
            buf[4]
        )));
    }
    let u32_at = |i: usize| u32::from_be_bytes(buf[i..i + 4].try_into().unwrap());
    let u64_at = |i: usize| u64::from_be_bytes(buf[i..i + 8].try_into().unwrap());
    Ok(ProbeHeader {
        train: u32_at(5),
        seq: u32_at(9),
        total: u32_at(13),
        departure_ns: u64_at(17),
        tau_ns: u64_at(25),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let header = ProbeHeader {
            train: 7,
            seq: 24,
            total: 25,
            departure_ns: 123_456_789_000,
            tau_ns: 1_000_000,
        };
        let mut buf = vec![0u8; 1000];
        encode_packet(&header, &mut buf).unwrap();
        assert_eq!(decode_packet(&buf).unwrap(), header);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_packet(&[0u8; 10]).is_err());
        let mut buf = vec![0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(b"XXXX");
        assert!(decode_packet(&buf).is_err());
    }

    #[test]
    fn layout_is_big_endian() {
        let header = ProbeHeader {
            train: 1,
            seq: 2,
            total: 3,
            departure_ns: 4,
            tau_ns: 5,
        };
        let mut buf = vec![0u8; HEADER_LEN];
        encode_packet(&header, &mut buf).unwrap();
        assert_eq!(&buf[5..9], &[0, 0, 0, 1]);
        assert_eq!(&buf[29..33], &[0, 0, 0, 5]);
    }
}
