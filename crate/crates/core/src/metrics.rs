//! Space accounting for sidetables relative to the code they describe.

use crate::validator::CompiledModule;

/// Deterministic size figures of a validated module.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SpaceReport {
    pub functions: usize,
    /// Sum of function body sizes (locals declarations included).
    pub bytecode_bytes: usize,
    pub sidetable_entries: usize,
    /// 16 bytes per entry, as stored.
    pub sidetable_bytes: usize,
    /// Hypothetical size if entries were packed to 2 bytes where possible.
    pub sidetable_bytes_compact: usize,
}

impl SpaceReport {
    pub fn of(compiled: &CompiledModule) -> Self {
        let mut r = SpaceReport::default();
        for (decl, vf) in compiled.module.functions.iter().zip(&compiled.functions) {
            r.functions += 1;
            r.bytecode_bytes += decl.body.code_end - decl.body.body_start;
            r.sidetable_entries += vf.sidetable.len();
            r.sidetable_bytes += vf.sidetable.size_bytes();
            r.sidetable_bytes_compact += vf.sidetable.compact_size_bytes();
        }
        r
    }

    /// Compact sidetable bytes per bytecode byte; 0 for a module without code.
    pub fn space_ratio(&self) -> f64 {
        if self.bytecode_bytes == 0 {
            0.0
        } else {
            self.sidetable_bytes_compact as f64 / self.bytecode_bytes as f64
        }
    }

    /// Stored sidetable bytes per bytecode byte.
    pub fn uncompressed_ratio(&self) -> f64 {
        if self.bytecode_bytes == 0 {
            0.0
        } else {
            self.sidetable_bytes as f64 / self.bytecode_bytes as f64
        }
    }
}
