use crate::binary::Limits;
use crate::limits::{MAX_PAGES, PAGE_SIZE};

/// A linear memory. Every access is bounds-checked explicitly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memory {
    data: Vec<u8>,
    max: Option<u32>,
}

impl Memory {
    /// Zero-filled memory of `min` pages; `None` if the allocation fails.
    pub fn new(min: u32, max: Option<u32>) -> Option<Self> {
        let len = (min as usize).checked_mul(PAGE_SIZE)?;
        let mut data = Vec::new();
        data.try_reserve_exact(len).ok()?;
        data.resize(len, 0);
        Some(Self { data, max })
    }

    pub fn pages(&self) -> u32 {
        (self.data.len() / PAGE_SIZE) as u32
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn limits(&self) -> Limits {
        Limits { min: self.pages(), max: self.max }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// Grows by `delta` pages and returns the old page count, or -1 leaving
    /// the memory unchanged.
    pub fn grow(&mut self, delta: u32) -> i32 {
        let old = self.pages();
        let max = self.max.unwrap_or(MAX_PAGES).min(MAX_PAGES);
        let Some(new) = old.checked_add(delta).filter(|&n| n <= max) else {
            return -1;
        };
        let extra = delta as usize * PAGE_SIZE;
        if self.data.try_reserve_exact(extra).is_err() {
            return -1;
        }
        self.data.resize(new as usize * PAGE_SIZE, 0);
        old as i32
    }

    /// Copies `bytes` to `offset`; `false` (and no write) when out of bounds.
    pub fn write(&mut self, offset: usize, bytes: &[u8]) -> bool {
        match offset.checked_add(bytes.len()) {
            Some(end) if end <= self.data.len() => {
                self.data[offset..end].copy_from_slice(bytes);
                true
            }
            _ => false,
        }
    }

    pub fn read(&self, offset: usize, len: usize) -> Option<&[u8]> {
        self.data.get(offset..offset.checked_add(len)?)
    }
}

/// Effective address of a `width`-byte access at `addr + offset`, or `None`
/// if any byte of it lies outside the memory. Computed in 64 bits, so it
/// cannot wrap.
#[inline]
pub fn memory_access_check(mem: &Memory, addr: u32, offset: u32, width: u32) -> Option<usize> {
    let ea = u64::from(addr) + u64::from(offset);
    if ea + u64::from(width) > mem.data.len() as u64 {
        return None;
    }
    Some(ea as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn access_check_examples() {
        let m = Memory::new(1, None).unwrap();
        assert_eq!(memory_access_check(&m, 0, 0, 4), Some(0));
        assert_eq!(memory_access_check(&m, 65532, 0, 4), Some(65532));
        assert_eq!(memory_access_check(&m, 65533, 0, 4), None);
        assert_eq!(memory_access_check(&m, u32::MAX, u32::MAX, 8), None);
    }

    #[test]
    fn grow_respects_max() {
        let mut m = Memory::new(1, Some(2)).unwrap();
        assert_eq!(m.grow(1), 1);
        assert_eq!(m.len(), 2 * PAGE_SIZE);
        assert_eq!(m.grow(1), -1);
        assert_eq!(m.len(), 2 * PAGE_SIZE);
        assert_eq!(m.grow(0), 2);
    }
}
