//! `.cba` container: a fixed 25-byte little-endian header followed by the
//! range-coded payload.
//!
//! | offset | size | field         |
//! |--------|------|---------------|
//! | 0      | 4    | magic `CBAN`  |
//! | 4      | 1    | version       |
//! | 5      | 1    | quality index |
//! | 6      | 1    | flags         |
//! | 7      | 4    | orig_h        |
//! | 11     | 4    | orig_w        |
//! | 15     | 2    | latent_c      |
//! | 17     | 2    | latent_h      |
//! | 19     | 2    | latent_w      |
//! | 21     | 4    | payload_len   |

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"CBAN";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u8,
    pub quality_index: u8,
    pub flags: u8,
    pub orig_h: u32,
    pub orig_w: u32,
    pub latent_c: u16,
    pub latent_h: u16,
    pub latent_w: u16,
    pub payload_len: u32,
}

impl Header {
    pub fn new(
        quality_index: usize,
        orig: (usize, usize),
        latent: (usize, usize, usize),
        payload_len: usize,
    ) -> Result<Self> {
        let narrow16 = |v: usize, what: &str| {
            u16::try_from(v).map_err(|_| Error::Bitstream(format!("{what} {v} exceeds u16")))
        };
        let narrow32 = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| Error::Bitstream(format!("{what} {v} exceeds u32")))
        };
        Ok(Self {
            version: VERSION,
            quality_index: u8::try_from(quality_index)
                .map_err(|_| Error::Bitstream(format!("quality index {quality_index} exceeds u8")))?,
            flags: 0,
            orig_h: narrow32(orig.0, "height")?,
            orig_w: narrow32(orig.1, "width")?,
            latent_c: narrow16(latent.0, "latent channels")?,
            latent_h: narrow16(latent.1, "latent height")?,
            latent_w: narrow16(latent.2, "latent width")?,
            payload_len: narrow32(payload_len, "payload length")?,
        })
    }
}

pub fn pack_bitstream(header: &Header, payload: &[u8]) -> Result<Vec<u8>> {
    if header.payload_len as usize != payload.len() {
        return Err(Error::Bitstream(format!(
            "header declares {} payload bytes, got {}",
            header.payload_len,
            payload.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(header.version);
    out.push(header.quality_index);
    out.push(header.flags);
    out.extend_from_slice(&header.orig_h.to_le_bytes());
    out.extend_from_slice(&header.orig_w.to_le_bytes());
    out.extend_from_slice(&header.latent_c.to_le_bytes());
    out.extend_from_slice(&header.latent_h.to_le_bytes());
    out.extend_from_slice(&header.latent_w.to_le_bytes());
    out.extend_from_slice(&header.payload_len.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn parse_bitstream(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Bitstream(format!(
            "{} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Bitstream("bad magic, not a CBAN stream".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Bitstream(format!(
            "unsupported version {} (expected {VERSION})",
            bytes[4]
        )));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let header = Header {
        version: bytes[4],
        quality_index: bytes[5],
        flags: bytes[6],
        orig_h: u32_at(7),
        orig_w: u32_at(11),
        latent_c: u16_at(15),
        latent_h: u16_at(17),
        latent_w: u16_at(19),
        payload_len: u32_at(21),
    };
    let payload = &bytes[HEADER_LEN..];
    match payload.len().cmp(&(header.payload_len as usize)) {
        std::cmp::Ordering::Less => Err(Error::Bitstream(format!(
            "truncated stream: header declares {} payload bytes, {} present",
            header.payload_len,
            payload.len()
        ))),
        std::cmp::Ordering::Greater => Err(Error::Bitstream(format!(
            "{} trailing bytes after payload",
            payload.len() - header.payload_len as usize
        ))),
        std::cmp::Ordering::Equal => Ok((header, payload)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_header(len: usize) -> Header {
        Header::new(2, (512, 768), (32, 32, 48), len).unwrap()
    }

    #[test]
    fn header_is_25_bytes() {
        assert_eq!(pack_bitstream(&sample_header(0), &[]).unwrap().len(), HEADER_LEN);
        assert_eq!(HEADER_LEN, 4 + 1 + 1 + 1 + 4 + 4 + 2 + 2 + 2 + 4);
    }

    #[test]
    fn corrupt_magic_and_version_rejected() {
        let bytes = pack_bitstream(&sample_header(3), &[1, 2, 3]).unwrap();
        for i in 0..4 {
            let mut b = bytes.clone();
            b[i] ^= 0x01;
            assert!(parse_bitstream(&b).is_err());
        }
        let mut b = bytes.clone();
        b[4] = 9;
        assert!(parse_bitstream(&b).is_err());
        assert!(parse_bitstream(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn little_endian_fields() {
        let bytes = pack_bitstream(&sample_header(0), &[]).unwrap();
        assert_eq!(&bytes[7..11], &512u32.to_le_bytes());
        assert_eq!(&bytes[11..15], &768u32.to_le_bytes());
    }

    proptest! {
        #[test]
        fn pack_parse_identity(payload in proptest::collection::vec(any::<u8>(), 0..300),
                               q in 1usize..8, h in 1usize..5000, w in 1usize..5000) {
            let header = Header::new(q, (h, w), (32, h.div_ceil(16), w.div_ceil(16)), payload.len()).unwrap();
            let bytes = pack_bitstream(&header, &payload).unwrap();
            let (h2, p2) = parse_bitstream(&bytes).unwrap();
            prop_assert_eq!(h2, header);
            prop_assert_eq!(p2, &payload[..]);
        }
    }
}
