//! The branch sidetable: one fixed-size record per branch origin.
//!
//! Entries are laid out in the order the validator meets their branch
//! opcodes, so the interpreter can walk them with a single cursor (STP) that
//! advances in lockstep with the instruction pointer. The origins of taken
//! branches are anchored at the branch opcode's own byte offset:
//!
//! * `target_ip  = branch_ip + delta_ip`
//! * `target_stp = entry_index + delta_stp`
//!
//! Forward branches land on the `end` opcode of their construct, backward
//! branches on the `loop` opcode. A `br_table` contributes a header entry
//! whose `valcnt` holds the highest case index, followed by one entry per
//! case with the default case last.

use std::fmt;

/// Size in bytes of one stored entry.
pub const ENTRY_BYTES: usize = std::mem::size_of::<SidetableEntry>();

/// Size of an entry in the hypothetical compact encoding, when it fits.
pub const COMPACT_ENTRY_BYTES: usize = 2;

/// `⟨Δip, Δstp, valcnt, popcnt⟩`.
#[derive(Clone, Copy, PartialEq, Eq, Default, Hash)]
#[repr(C)]
pub struct SidetableEntry {
    /// Bytes to add to the instruction pointer when the branch is taken.
    pub delta_ip: i32,
    /// Entries to add to the sidetable pointer when the branch is taken.
    pub delta_stp: i32,
    /// Values carried to the target. For a `br_table` header: the maximum case index.
    pub valcnt: u32,
    /// Values discarded beneath the carried ones.
    pub popcnt: u32,
}

const _: () = assert!(ENTRY_BYTES == 16);

impl SidetableEntry {
    /// Highest case index of a `br_table` header entry.
    #[inline]
    pub fn maxcase(&self) -> u32 {
        self.valcnt
    }

    /// Whether the entry would fit the compact 16-bit layout: an 8-bit signed
    /// Δip, a 4-bit signed Δstp and 2-bit counts.
    pub fn is_compact(&self) -> bool {
        (-128..=127).contains(&self.delta_ip)
            && (-8..=7).contains(&self.delta_stp)
            && self.valcnt <= 3
            && self.popcnt <= 3
    }

    /// Bytes this entry would take if entries were stored compactly where possible.
    pub fn compact_size(&self) -> usize {
        if self.is_compact() {
            COMPACT_ENTRY_BYTES
        } else {
            ENTRY_BYTES
        }
    }
}

impl fmt::Debug for SidetableEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Δip={} Δstp={} valcnt={} popcnt={}",
            self.delta_ip, self.delta_stp, self.valcnt, self.popcnt
        )
    }
}

/// A function's sidetable together with the branch origin of every entry.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Sidetable {
    entries: Box<[SidetableEntry]>,
    origins: Box<[u32]>,
}

impl Sidetable {
    pub fn entries(&self) -> &[SidetableEntry] {
        &self.entries
    }

    /// Byte offset of the branch opcode that owns each entry.
    pub fn origins(&self) -> &[u32] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn size_bytes(&self) -> usize {
        self.entries.len() * ENTRY_BYTES
    }

    pub fn compact_size_bytes(&self) -> usize {
        self.entries.iter().map(SidetableEntry::compact_size).sum()
    }

    /// Absolute target offset of entry `idx`.
    pub fn target_ip(&self, idx: usize) -> usize {
        (self.origins[idx] as i64 + i64::from(self.entries[idx].delta_ip)) as usize
    }

    /// Writes one `idx: Δip=… Δstp=… valcnt=… popcnt=…` line per entry.
    pub fn dump(&self, out: &mut impl fmt::Write) -> fmt::Result {
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(out, "{i}: {e:?}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Sidetable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.iter()).finish()
    }
}

const NO_LINK: u32 = u32::MAX;

/// Accumulates entries during validation.
///
/// Forward branches are emitted as placeholders and linked into a per-construct
/// chain (`links`), so pending fixups need no storage beyond the table itself.
#[derive(Default)]
pub(crate) struct SidetableBuilder {
    entries: Vec<SidetableEntry>,
    origins: Vec<u32>,
    links: Vec<u32>,
}

impl SidetableBuilder {
    #[inline]
    pub fn len(&self) -> u32 {
        self.entries.len() as u32
    }

    pub fn push(&mut self, origin: usize, entry: SidetableEntry) -> u32 {
        let idx = self.len();
        self.entries.push(entry);
        self.origins.push(origin as u32);
        self.links.push(NO_LINK);
        idx
    }

    /// Adds a placeholder and prepends it to the chain rooted at `head`.
    pub fn push_pending(&mut self, origin: usize, valcnt: u32, popcnt: u32, head: &mut FixupChain) -> u32 {
        let idx = self.push(origin, SidetableEntry { delta_ip: 0, delta_stp: 0, valcnt, popcnt });
        self.links[idx as usize] = head.0;
        head.0 = idx;
        idx
    }

    pub fn resolve(&mut self, idx: u32, target_ip: usize, target_stp: u32) {
        let i = idx as usize;
        let e = &mut self.entries[i];
        e.delta_ip = (target_ip as i64 - i64::from(self.origins[i])) as i32;
        e.delta_stp = (i64::from(target_stp) - i64::from(idx)) as i32;
    }

    /// Resolves every entry in `chain` to `(target_ip, current length)`.
    pub fn resolve_chain(&mut self, chain: &mut FixupChain, target_ip: usize) {
        let stp = self.len();
        let mut idx = std::mem::take(chain).0;
        while idx != NO_LINK {
            let next = self.links[idx as usize];
            self.resolve(idx, target_ip, stp);
            idx = next;
        }
    }

    pub fn finish(self) -> Sidetable {
        Sidetable { entries: self.entries.into(), origins: self.origins.into() }
    }
}

/// Head of a construct's list of unresolved forward branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixupChain(u32);

impl Default for FixupChain {
    fn default() -> Self {
        Self(NO_LINK)
    }
}

impl FixupChain {
    pub fn is_empty(&self) -> bool {
        self.0 == NO_LINK
    }
}
