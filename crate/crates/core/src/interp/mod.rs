//! In-place execution over the original module bytes.
//!
//! The machine keeps the register set of a classic stack interpreter: `ip`
//! into the module bytes, `stp` into the current function's sidetable, `eip`
//! at the function's terminal `end`, and `vfp`/`vsp` delimiting the frame on
//! one contiguous value stack. Calls overlap the callee's first locals with the
//! caller's outgoing arguments, so arguments are never copied.

mod dispatch;
mod machine;
mod ops;

use std::fmt;

use thiserror::Error;

use crate::limits;
use crate::runtime::{Instance, Value};

pub use dispatch::{route, Route};
pub use machine::{apply_deltas, br_table_entry, move_values, stp_not_taken};
pub(crate) use dispatch::{MAIN, PROBE};
pub(crate) use machine::{Machine, R};

/// Per-store interpreter settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Config {
    /// Maintain a 1-byte type tag beside every value slot.
    pub tags: bool,
    /// Value-stack capacity in 64-bit slots.
    pub stack_slots: usize,
    /// Maximum number of live frames, counting nested invocations.
    pub max_frames: usize,
}

impl Default for Config {
    fn default() -> Self {
        Self { tags: false, stack_slots: limits::DEFAULT_STACK_SLOTS, max_frames: limits::DEFAULT_MAX_FRAMES }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrapKind {
    Unreachable,
    MemoryOutOfBounds,
    TableOutOfBounds,
    IndirectSignatureMismatch,
    IndirectNull,
    IntegerDivideByZero,
    IntegerOverflow,
    InvalidFloatConversion,
    StackOverflow,
    HostError,
    /// A probe callback asked execution to stop.
    ProbeHalt,
}

impl TrapKind {
    pub fn name(self) -> &'static str {
        match self {
            TrapKind::Unreachable => "unreachable",
            TrapKind::MemoryOutOfBounds => "memory-out-of-bounds",
            TrapKind::TableOutOfBounds => "table-out-of-bounds",
            TrapKind::IndirectSignatureMismatch => "indirect-signature-mismatch",
            TrapKind::IndirectNull => "indirect-null",
            TrapKind::IntegerDivideByZero => "integer-divide-by-zero",
            TrapKind::IntegerOverflow => "integer-overflow",
            TrapKind::InvalidFloatConversion => "invalid-float-conversion",
            TrapKind::StackOverflow => "stack-overflow",
            TrapKind::HostError => "host-error",
            TrapKind::ProbeHalt => "probe-halt",
        }
    }
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct Trap {
    pub kind: TrapKind,
    /// Offset of the trapping instruction in the module bytes.
    pub offset: usize,
    /// Function executing when the trap occurred.
    pub func: u32,
    pub message: Option<String>,
}

impl Trap {
    pub(crate) fn host(func: u32, message: impl Into<String>) -> Trap {
        Trap { kind: TrapKind::HostError, offset: 0, func, message: Some(message.into()) }
    }
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in function {} at offset {}", self.kind, self.func, self.offset)?;
        if let Some(m) = &self.message {
            write!(f, ": {m}")?;
        }
        Ok(())
    }
}

/// One executed control transfer, as reported to a branch observer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchEvent {
    pub func: u32,
    /// Offset of the branch opcode.
    pub origin: usize,
    pub opcode: u8,
    /// Index of the sidetable entry used.
    pub entry: usize,
    pub target_ip: usize,
    pub target_stp: usize,
    pub valcnt: u32,
    pub popcnt: u32,
    /// Operand height (above the locals) before values were moved.
    pub height: usize,
}

/// Counters maintained on paths that are already slow or rare.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub calls: u64,
    /// Taken branches, counted while a branch observer is installed.
    pub branches_taken: u64,
    /// Activations that ran a probe copy instead of the original bytes.
    pub copy_activations: u64,
    /// Second-level dispatches through a prefix table.
    pub prefix_dispatches: u64,
    /// Third-level dispatches after decoding a multi-byte sub-opcode.
    pub leb_dispatches: u64,
}

type BranchObserver = Box<dyn FnMut(&BranchEvent)>;

/// Execution resources shared by invocations: the value stack and settings.
pub struct Store {
    config: Config,
    pub(crate) stack: Vec<u64>,
    pub(crate) tags: Vec<u8>,
    /// First free slot for a new invocation.
    pub(crate) top: usize,
    /// Frames held by suspended outer invocations.
    pub(crate) depth: usize,
    pub(crate) observer: Option<BranchObserver>,
    pub(crate) stats: ExecStats,
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("config", &self.config)
            .field("top", &self.top)
            .field("stats", &self.stats)
            .finish_non_exhaustive()
    }
}

impl Default for Store {
    fn default() -> Self {
        Self::new(Config::default())
    }
}

impl Store {
    pub fn new(config: Config) -> Self {
        Self {
            config,
            stack: vec![0; config.stack_slots],
            tags: if config.tags { vec![0; config.stack_slots] } else { Vec::new() },
            top: 0,
            depth: 0,
            observer: None,
            stats: ExecStats::default(),
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    /// Slot index where the next invocation's frame will begin.
    pub fn stack_top(&self) -> usize {
        self.top
    }

    /// Raw value cells, for inspection between invocations.
    pub fn slots(&self) -> &[u64] {
        &self.stack
    }

    /// Type tags parallel to [`Store::slots`]; empty unless tagging is on.
    pub fn tags(&self) -> &[u8] {
        &self.tags
    }

    pub fn stats(&self) -> ExecStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = ExecStats::default();
    }

    /// Calls `f` for every taken control transfer.
    pub fn set_branch_observer(&mut self, f: impl FnMut(&BranchEvent) + 'static) {
        self.observer = Some(Box::new(f));
    }

    pub fn clear_branch_observer(&mut self) {
        self.observer = None;
    }

    /// Machine state is only observable from inside a probe callback, which
    /// receives it as a [`crate::probes::ProbeContext`].
    pub fn probe_frame_view(&self) -> Result<(), crate::probes::ProbeError> {
        Err(crate::probes::ProbeError::OutsideCallback)
    }
}

/// Host-side access during a host function call. Nested invocations reuse
/// the caller's value stack above its current top.
pub struct Caller<'a> {
    pub store: &'a mut Store,
    pub instance: &'a mut Instance,
}

impl Caller<'_> {
    pub fn invoke(&mut self, func: u32, args: &[Value]) -> Result<Vec<Value>, Trap> {
        invoke(self.store, self.instance, func, args)
    }
}

/// Calls function `func` of `inst` with `args`.
pub fn invoke(store: &mut Store, inst: &mut Instance, func: u32, args: &[Value]) -> Result<Vec<Value>, Trap> {
    let compiled = inst.compiled.clone();
    let ft = compiled.module.func_type(func).ok_or_else(|| Trap::host(func, "no such function"))?;
    if ft.params.len() != args.len() || ft.params.iter().zip(args).any(|(t, a)| *t != a.ty()) {
        return Err(Trap::host(func, "arguments do not match the signature"));
    }
    if func < compiled.module.num_imported_funcs() {
        let h = inst.host_funcs[func as usize].clone();
        let mut caller = Caller { store, instance: inst };
        let out = (h.callback)(&mut caller, args).map_err(|e| Trap::host(func, e.0))?;
        machine::check_host_results(&h.signature, &out).map_err(|m| Trap::host(func, m))?;
        return Ok(out);
    }
    let base = store.top;
    if base + args.len() > store.stack.len() {
        return Err(Trap { kind: TrapKind::StackOverflow, offset: 0, func, message: None });
    }
    for (i, a) in args.iter().enumerate() {
        store.stack[base + i] = a.to_cell();
    }
    let result = Machine::execute(&compiled, inst, store, func, base);
    store.top = base;
    result?;
    Ok(ft.results.iter().enumerate().map(|(i, &t)| Value::from_cell(t, store.stack[base + i])).collect())
}
