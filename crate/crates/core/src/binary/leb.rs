//! LEB128 integer decoding and a byte cursor over module bytes.

use super::DecodeError;
use super::DecodeErrorKind;

/// Why a LEB128 read failed. Offsets are attached by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LebError {
    /// The input ended before the final byte.
    Truncated,
    /// Too many bytes, or the padding bits of the last byte are not a valid extension.
    Malformed,
}

#[inline]
fn max_len(max_bits: u32) -> usize {
    max_bits.div_ceil(7) as usize
}

/// Decodes an unsigned LEB128 integer of at most `max_bits` bits starting at `offset`.
///
/// Returns the value and the number of bytes consumed.
pub fn read_leb_unsigned(bytes: &[u8], offset: usize, max_bits: u32) -> Result<(u64, usize), LebError> {
    debug_assert!((1..=64).contains(&max_bits));
    let limit = max_len(max_bits);
    let mut result: u64 = 0;
    let mut shift = 0u32;
    for i in 0..limit {
        let Some(&byte) = bytes.get(offset + i) else {
            return Err(LebError::Truncated);
        };
        let payload = u64::from(byte & 0x7F);
        if i == limit - 1 {
            // Last permitted byte: no continuation and no bits past max_bits.
            let used = max_bits - shift;
            if byte & 0x80 != 0 || (used < 7 && payload >> used != 0) {
                return Err(LebError::Malformed);
            }
        }
        result |= payload << shift;
        if byte & 0x80 == 0 {
            return Ok((result, i + 1));
        }
        shift += 7;
    }
    Err(LebError::Malformed)
}

/// Decodes a signed (sign-extended) LEB128 integer of at most `max_bits` bits.
pub fn read_leb_signed(bytes: &[u8], offset: usize, max_bits: u32) -> Result<(i64, usize), LebError> {
    debug_assert!((1..=64).contains(&max_bits));
    let limit = max_len(max_bits);
    let mut result: i64 = 0;
    let mut shift = 0u32;
    for i in 0..limit {
        let Some(&byte) = bytes.get(offset + i) else {
            return Err(LebError::Truncated);
        };
        let payload = i64::from(byte & 0x7F);
        if i == limit - 1 {
            if byte & 0x80 != 0 {
                return Err(LebError::Malformed);
            }
            // Bits above the value's sign bit must replicate it.
            let used = max_bits - shift;
            if used < 7 {
                let sign_and_pad = (byte & 0x7F) >> (used - 1);
                let all_ones = 0x7F >> (used - 1);
                if sign_and_pad != 0 && sign_and_pad != all_ones {
                    return Err(LebError::Malformed);
                }
            }
        }
        result |= payload << shift;
        shift += 7;
        if byte & 0x80 == 0 {
            if shift < 64 && byte & 0x40 != 0 {
                result |= -1i64 << shift;
            }
            return Ok((result, i + 1));
        }
    }
    Err(LebError::Malformed)
}

/// Forward-only cursor used by the decoder and validator.
#[derive(Clone)]
pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0, end: bytes.len() }
    }

    /// A reader over `bytes[pos..end]` whose positions stay absolute.
    pub fn at(bytes: &'a [u8], pos: usize, end: usize) -> Self {
        debug_assert!(pos <= end && end <= bytes.len());
        Self { bytes, pos, end }
    }

    #[inline]
    pub fn pos(&self) -> usize {
        self.pos
    }

    #[inline]
    pub fn end(&self) -> usize {
        self.end
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.pos >= self.end
    }

    pub fn bytes(&self) -> &'a [u8] {
        self.bytes
    }

    fn err(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError { offset: self.pos, kind }
    }

    fn leb_err(&self, e: LebError) -> DecodeError {
        match e {
            LebError::Truncated => self.err(DecodeErrorKind::UnexpectedEof),
            LebError::Malformed => self.err(DecodeErrorKind::MalformedLeb),
        }
    }

    #[inline]
    pub fn read_u8(&mut self) -> Result<u8, DecodeError> {
        if self.pos >= self.end {
            return Err(self.err(DecodeErrorKind::UnexpectedEof));
        }
        let b = self.bytes[self.pos];
        self.pos += 1;
        Ok(b)
    }

    pub fn peek_u8(&self) -> Result<u8, DecodeError> {
        if self.pos >= self.end {
            return Err(self.err(DecodeErrorKind::UnexpectedEof));
        }
        Ok(self.bytes[self.pos])
    }

    pub fn read_bytes(&mut self, len: usize) -> Result<&'a [u8], DecodeError> {
        if self.end - self.pos < len {
            return Err(self.err(DecodeErrorKind::UnexpectedEof));
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    pub fn skip(&mut self, len: usize) -> Result<(), DecodeError> {
        self.read_bytes(len).map(|_| ())
    }

    fn window(&self) -> &'a [u8] {
        &self.bytes[..self.end]
    }

    pub fn read_var_u32(&mut self) -> Result<u32, DecodeError> {
        let (v, n) = read_leb_unsigned(self.window(), self.pos, 32).map_err(|e| self.leb_err(e))?;
        self.pos += n;
        Ok(v as u32)
    }

    pub fn read_var_u64(&mut self) -> Result<u64, DecodeError> {
        let (v, n) = read_leb_unsigned(self.window(), self.pos, 64).map_err(|e| self.leb_err(e))?;
        self.pos += n;
        Ok(v)
    }

    pub fn read_var_i32(&mut self) -> Result<i32, DecodeError> {
        let (v, n) = read_leb_signed(self.window(), self.pos, 32).map_err(|e| self.leb_err(e))?;
        self.pos += n;
        Ok(v as i32)
    }

    pub fn read_var_s33(&mut self) -> Result<i64, DecodeError> {
        let (v, n) = read_leb_signed(self.window(), self.pos, 33).map_err(|e| self.leb_err(e))?;
        self.pos += n;
        Ok(v)
    }

    pub fn read_var_i64(&mut self) -> Result<i64, DecodeError> {
        let (v, n) = read_leb_signed(self.window(), self.pos, 64).map_err(|e| self.leb_err(e))?;
        self.pos += n;
        Ok(v)
    }

    pub fn read_f32_bits(&mut self) -> Result<u32, DecodeError> {
        let b = self.read_bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn read_f64_bits(&mut self) -> Result<u64, DecodeError> {
        let b = self.read_bytes(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    pub fn read_name(&mut self) -> Result<String, DecodeError> {
        let len = self.read_var_u32()? as usize;
        let start = self.pos;
        let raw = self.read_bytes(len)?;
        String::from_utf8(raw.to_vec()).map_err(|_| DecodeError { offset: start, kind: DecodeErrorKind::InvalidUtf8 })
    }
}
