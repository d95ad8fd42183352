//! Fixed-width bit packing for quantized codes.
//!
//! Code `i` occupies stream bits `[i·w, (i+1)·w)`, where stream bit `b` is
//! bit `b % 8` (LSB first) of byte `b / 8`. Width 0 is allowed and packs to
//! no bytes: every code is then implicitly zero.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    width: u8,
    len: usize,
    bytes: Vec<u8>,
}

pub fn packed_len(len: usize, width: u8) -> usize {
    (len * width as usize).div_ceil(8)
}

impl PackedCodes {
    pub fn pack(codes: &[u8], width: u8) -> Result<Self> {
        if width > 8 {
            return Err(Error::Parameter(format!("pack width {width} exceeds 8")));
        }
        let limit = 1u16 << width;
        if let Some(&c) = codes.iter().find(|&&c| u16::from(c) >= limit) {
            return Err(Error::Parameter(format!(
                "code {c} does not fit in {width} bits"
            )));
        }
        let mut bytes = vec![0u8; packed_len(codes.len(), width)];
        let w = width as usize;
        if w > 0 {
            for (i, &c) in codes.iter().enumerate() {
                let bit = i * w;
                let (byte, shift) = (bit / 8, bit % 8);
                let v = u16::from(c) << shift;
                bytes[byte] |= v as u8;
                if shift + w > 8 {
                    bytes[byte + 1] |= (v >> 8) as u8;
                }
            }
        }
        Ok(Self {
            width,
            len: codes.len(),
            bytes,
        })
    }

    /// Wraps stored bytes, rejecting a length mismatch or set padding bits.
    pub fn from_bytes(bytes: Vec<u8>, len: usize, width: u8) -> Result<Self> {
        if width > 8 {
            return Err(Error::Corrupt(format!("pack width {width} exceeds 8")));
        }
        if bytes.len() != packed_len(len, width) {
            return Err(Error::Corrupt(format!(
                "{} code bytes for {len} codes of width {width}",
                bytes.len()
            )));
        }
        let used = len * width as usize;
        if !used.is_multiple_of(8) {
            let last = bytes[bytes.len() - 1];
            if last >> (used % 8) != 0 {
                return Err(Error::Corrupt(
                    "nonzero padding bits in packed codes".into(),
                ));
            }
        }
        Ok(Self { width, len, bytes })
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, i: usize) -> u8 {
        let w = self.width as usize;
        if w == 0 {
            return 0;
        }
        let bit = i * w;
        let (byte, shift) = (bit / 8, bit % 8);
        let mut v = u16::from(self.bytes[byte]) >> shift;
        if shift + w > 8 {
            v |= u16::from(self.bytes[byte + 1]) << (8 - shift);
        }
        (v & ((1 << w) - 1)) as u8
    }

    pub fn unpack(&self) -> Vec<u8> {
        (0..self.len).map(|i| self.get(i)).collect()
    }
}
