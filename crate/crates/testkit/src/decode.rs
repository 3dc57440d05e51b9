//! A second, deliberately separate instruction decoder. The oracles must not
//! share code with the engine they check.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleError(pub String);

impl fmt::Display for OracleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "oracle error: {}", self.0)
    }
}

impl std::error::Error for OracleError {}

pub(crate) fn err<T>(msg: impl Into<String>) -> Result<T, OracleError> {
    Err(OracleError(msg.into()))
}

/// Block type as written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockTy {
    Empty,
    Val(u8),
    Type(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Imm {
    None,
    Block(BlockTy),
    Idx(u32),
    Table(Vec<u32>, u32),
    Two(u32, u32),
    Mem { align: u32, offset: u32 },
    I32(i32),
    I64(i64),
    F32(u32),
    F64(u64),
    Types(Vec<u8>),
}

/// One decoded instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct Instr {
    pub pos: usize,
    pub op: u8,
    /// Sub-opcode for 0xFC.
    pub sub: u32,
    pub imm: Imm,
    pub next: usize,
}

struct Cur<'a> {
    b: &'a [u8],
    p: usize,
}

impl Cur<'_> {
    fn u8(&mut self) -> Result<u8, OracleError> {
        let Some(&x) = self.b.get(self.p) else { return err(format!("truncated at {}", self.p)) };
        self.p += 1;
        Ok(x)
    }

    fn uleb(&mut self) -> Result<u64, OracleError> {
        let mut v = 0u64;
        for shift in (0..70).step_by(7) {
            let x = self.u8()?;
            v |= u64::from(x & 0x7f) << shift;
            if x & 0x80 == 0 {
                return Ok(v);
            }
        }
        err("leb too long")
    }

    fn sleb(&mut self) -> Result<i64, OracleError> {
        let mut v = 0i64;
        let mut shift = 0;
        loop {
            let x = self.u8()?;
            if shift < 64 {
                v |= i64::from(x & 0x7f) << shift;
            }
            shift += 7;
            if x & 0x80 == 0 {
                if shift < 64 && x & 0x40 != 0 {
                    v |= -1i64 << shift;
                }
                return Ok(v);
            }
            if shift > 70 {
                return err("leb too long");
            }
        }
    }

    fn idx(&mut self) -> Result<u32, OracleError> {
        Ok(self.uleb()? as u32)
    }

    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], OracleError> {
        let mut a = [0; N];
        for x in &mut a {
            *x = self.u8()?;
        }
        Ok(a)
    }
}

/// Decodes the instruction at `pos` of `bytes` (module offsets).
pub fn decode_at(bytes: &[u8], pos: usize) -> Result<Instr, OracleError> {
    let mut c = Cur { b: bytes, p: pos };
    let op = c.u8()?;
    let mut sub = 0;
    let imm = match op {
        0x02..=0x04 => {
            let b = *bytes.get(c.p).ok_or(OracleError("truncated block type".into()))?;
            let bt = match b {
                0x40 => {
                    c.p += 1;
                    BlockTy::Empty
                }
                0x7f | 0x7e | 0x7d | 0x7c | 0x70 | 0x6f => {
                    c.p += 1;
                    BlockTy::Val(b)
                }
                _ => BlockTy::Type(c.sleb()? as u32),
            };
            Imm::Block(bt)
        }
        0x0c | 0x0d | 0x10 | 0x20..=0x26 | 0xd2 => Imm::Idx(c.idx()?),
        0x0e => {
            let n = c.idx()?;
            let mut v = Vec::new();
            for _ in 0..n {
                v.push(c.idx()?);
            }
            Imm::Table(v, c.idx()?)
        }
        0x11 => {
            let t = c.idx()?;
            Imm::Two(t, c.idx()?)
        }
        0x1c => {
            let n = c.idx()?;
            let mut v = Vec::new();
            for _ in 0..n {
                v.push(c.u8()?);
            }
            Imm::Types(v)
        }
        0x28..=0x3e => {
            let align = c.idx()?;
            Imm::Mem { align, offset: c.idx()? }
        }
        0x3f | 0x40 => {
            c.u8()?;
            Imm::None
        }
        0x41 => Imm::I32(c.sleb()? as i32),
        0x42 => Imm::I64(c.sleb()?),
        0x43 => Imm::F32(u32::from_le_bytes(c.fixed()?)),
        0x44 => Imm::F64(u64::from_le_bytes(c.fixed()?)),
        0xd0 => Imm::Idx(u32::from(c.u8()?)),
        0xfc => {
            sub = c.idx()?;
            match sub {
                0..=7 => Imm::None,
                8 => {
                    let s = c.idx()?;
                    c.u8()?;
                    Imm::Idx(s)
                }
                9 | 13 | 15 | 16 | 17 => Imm::Idx(c.idx()?),
                10 => {
                    c.u8()?;
                    c.u8()?;
                    Imm::None
                }
                11 => {
                    c.u8()?;
                    Imm::None
                }
                12 | 14 => {
                    let a = c.idx()?;
                    Imm::Two(a, c.idx()?)
                }
                _ => return err(format!("unknown 0xfc sub-opcode {sub}")),
            }
        }
        0x00 | 0x01 | 0x05 | 0x0b | 0x0f | 0x1a | 0x1b | 0x45..=0xc4 | 0xd1 => Imm::None,
        _ => return err(format!("unknown opcode {op:#04x} at {pos}")),
    };
    Ok(Instr { pos, op, sub, imm, next: c.p })
}

/// Decodes every instruction in `[start, end)`.
pub fn decode_all(bytes: &[u8], start: usize, end: usize) -> Result<Vec<Instr>, OracleError> {
    let mut out = Vec::new();
    let mut p = start;
    while p < end {
        let i = decode_at(bytes, p)?;
        p = i.next;
        out.push(i);
    }
    if p != end {
        return err("instruction overruns function end");
    }
    Ok(out)
}

/// Operand-stack effect `(pops, pushes)` of an instruction whose effect does
/// not depend on types. `None` for control and call instructions.
pub fn simple_effect(i: &Instr) -> Option<(usize, usize)> {
    Some(match i.op {
        0x01 => (0, 0),
        0x1a => (1, 0),
        0x1b | 0x1c => (3, 1),
        0x20 | 0x23 => (0, 1),
        0x21 | 0x24 => (1, 0),
        0x22 => (1, 1),
        0x25 => (1, 1),
        0x26 => (2, 0),
        0x28..=0x35 => (1, 1),
        0x36..=0x3e => (2, 0),
        0x3f => (0, 1),
        0x40 => (1, 1),
        0x41..=0x44 => (0, 1),
        0x45 | 0x50 => (1, 1),
        0x46..=0x4f | 0x51..=0x66 => (2, 1),
        0x67..=0x69 | 0x79..=0x7b | 0x8b..=0x91 | 0x99..=0x9f => (1, 1),
        0x6a..=0x78 | 0x7c..=0x8a | 0x92..=0x98 | 0xa0..=0xa6 => (2, 1),
        0xa7..=0xc4 => (1, 1),
        0xd0 | 0xd2 => (0, 1),
        0xd1 => (1, 1),
        0xfc => match i.sub {
            0..=7 => (1, 1),
            8 | 10 | 11 | 12 | 14 | 17 => (3, 0),
            9 | 13 => (0, 0),
            15 => (2, 1),
            16 => (0, 1),
            _ => return None,
        },
        _ => return None,
    })
}

/// Number of sidetable entries an instruction accounts for.
pub fn entry_count(i: &Instr) -> usize {
    match (i.op, &i.imm) {
        (0x04 | 0x05 | 0x0c | 0x0d, _) => 1,
        (0x0e, Imm::Table(t, _)) => 2 + t.len(),
        _ => 0,
    }
}
