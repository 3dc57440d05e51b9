//! Dynamic instrumentation.
//!
//! A *local* probe fires before one instruction. Inserting one copies the
//! function's code bytes once and overwrites the probed opcode with the
//! reserved [`PROBE`](crate::binary::opcode::PROBE) byte; the sidetable is
//! shared unchanged because offsets do not move. New activations of the
//! function run the copy, while activations already in flight keep the bytes
//! they started with.
//!
//! A *global* probe fires before every instruction by switching the
//! interpreter to a dispatch table whose every entry calls the probe first.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

use crate::binary::{opcode, ValueType};
use crate::interp::{Machine, R, MAIN, PROBE};
use crate::runtime::{Instance, Value};
use crate::validator::{validate_function_with, Boundaries, ModuleEnv, ValidateOptions};

/// What the interpreter does after a probe callback returns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeAction {
    Continue,
    /// Stop execution with a [`TrapKind::ProbeHalt`](crate::interp::TrapKind::ProbeHalt) trap.
    Halt(String),
}

pub type ProbeCallback = Rc<RefCell<dyn FnMut(&mut ProbeContext<'_>) -> ProbeAction>>;

/// Wraps a closure as a [`ProbeCallback`].
pub fn probe(f: impl FnMut(&mut ProbeContext<'_>) -> ProbeAction + 'static) -> ProbeCallback {
    Rc::new(RefCell::new(f))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProbeError {
    #[error("function {0} is not defined by the module")]
    NotDefined(u32),
    #[error("offset {offset} is not an instruction boundary of function {func}")]
    NotABoundary { func: u32, offset: usize },
    #[error("no probe with id {0:?}")]
    UnknownProbe(ProbeId),
    #[error("machine state can only be inspected inside a probe callback")]
    OutsideCallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ProbeId(u64);

struct Site {
    callbacks: Vec<(ProbeId, ProbeCallback)>,
}

/// Probe state of one instance.
pub struct ProbeRegistry {
    sites: HashMap<(u32, usize), Site>,
    ids: HashMap<ProbeId, (u32, usize)>,
    /// Current probe copy per function index.
    copies: Vec<Option<Arc<[u8]>>>,
    live_copies: usize,
    buffers_created: u64,
    global: Option<ProbeCallback>,
    boundaries: HashMap<u32, Boundaries>,
    next_id: u64,
}

impl fmt::Debug for ProbeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProbeRegistry")
            .field("local_probes", &self.ids.len())
            .field("live_copies", &self.live_copies)
            .field("global", &self.global.is_some())
            .finish_non_exhaustive()
    }
}

impl ProbeRegistry {
    pub(crate) fn new(num_funcs: u32) -> Self {
        Self {
            sites: HashMap::new(),
            ids: HashMap::new(),
            copies: vec![None; num_funcs as usize],
            live_copies: 0,
            buffers_created: 0,
            global: None,
            boundaries: HashMap::new(),
            next_id: 0,
        }
    }

    pub fn global_is_set(&self) -> bool {
        self.global.is_some()
    }

    /// Number of registered local probes.
    pub fn local_count(&self) -> usize {
        self.ids.len()
    }

    /// Functions that currently have a probe copy.
    pub fn live_copies(&self) -> usize {
        self.live_copies
    }

    /// Code buffers ever allocated for probe copies. Nothing else in the
    /// engine allocates code.
    pub fn buffers_created(&self) -> u64 {
        self.buffers_created
    }

    /// The probe copy of `func`'s code bytes, if it has one.
    pub fn copy(&self, func: u32) -> Option<&[u8]> {
        self.copies.get(func as usize)?.as_deref()
    }

    #[inline]
    pub(crate) fn copy_for(&self, func: u32) -> Option<Arc<[u8]>> {
        if self.live_copies == 0 {
            return None;
        }
        self.copies[func as usize].clone()
    }

    fn write_copy(&mut self, func: u32, code_start: usize, original: &[u8], offset: usize, byte: u8) {
        let mut bytes = match &self.copies[func as usize] {
            Some(c) => c.to_vec(),
            None => {
                self.live_copies += 1;
                original.to_vec()
            }
        };
        bytes[offset - code_start] = byte;
        self.buffers_created += 1;
        self.copies[func as usize] = Some(bytes.into());
    }
}

impl Instance {
    /// Registers `callback` to fire before the instruction at module offset
    /// `offset` in function `func`.
    pub fn insert_local_probe(&mut self, func: u32, offset: usize, callback: ProbeCallback) -> Result<ProbeId, ProbeError> {
        let compiled = self.compiled.clone();
        let module = &compiled.module;
        let body = &module.defined_function(func).ok_or(ProbeError::NotDefined(func))?.body;
        let reg = &mut self.probes;
        if !reg.boundaries.contains_key(&func) {
            let env = ModuleEnv::new(module);
            let opts = ValidateOptions { sidetable: false, boundaries: true };
            let vf = validate_function_with(&env, func, opts).expect("module was validated");
            reg.boundaries.insert(func, vf.boundaries.expect("boundaries requested"));
        }
        if !reg.boundaries[&func].contains(offset) {
            return Err(ProbeError::NotABoundary { func, offset });
        }
        let id = ProbeId(reg.next_id);
        reg.next_id += 1;
        match reg.sites.get_mut(&(func, offset)) {
            Some(site) => site.callbacks.push((id, callback)),
            None => {
                let code = module.code(body);
                reg.write_copy(func, body.code_start, code, offset, opcode::PROBE);
                reg.sites.insert((func, offset), Site { callbacks: vec![(id, callback)] });
            }
        }
        reg.ids.insert(id, (func, offset));
        Ok(id)
    }

    /// Removes one local probe. Removing the last probe at a site restores
    /// its original byte; removing the last in a function discards the copy.
    pub fn remove_local_probe(&mut self, id: ProbeId) -> Result<(), ProbeError> {
        let reg = &mut self.probes;
        let (func, offset) = reg.ids.remove(&id).ok_or(ProbeError::UnknownProbe(id))?;
        let site = reg.sites.get_mut(&(func, offset)).expect("site of a registered probe");
        site.callbacks.retain(|(i, _)| *i != id);
        if !site.callbacks.is_empty() {
            return Ok(());
        }
        reg.sites.remove(&(func, offset));
        if reg.sites.keys().any(|&(f, _)| f == func) {
            let module = &self.compiled.module;
            let body = &module.defined_function(func).expect("probed function").body;
            let original = module.bytes()[offset];
            reg.write_copy(func, body.code_start, module.code(body), offset, original);
        } else {
            reg.copies[func as usize] = None;
            reg.live_copies -= 1;
        }
        Ok(())
    }

    /// Removes every local probe and the global probe.
    pub fn clear_all_probes(&mut self) {
        let ids: Vec<ProbeId> = self.probes.ids.keys().copied().collect();
        for id in ids {
            self.remove_local_probe(id).expect("registered id");
        }
        self.probes.global = None;
    }

    /// Fires `callback` before every instruction until cleared.
    pub fn set_global_probe(&mut self, callback: ProbeCallback) {
        self.probes.global = Some(callback);
    }

    /// Leaves global-probe mode; a no-op if none is set.
    pub fn clear_global_probe(&mut self) {
        self.probes.global = None;
    }
}

/// Read-only machine state immediately before a probed instruction.
#[derive(Clone, Copy)]
pub struct FrameView<'a> {
    func: u32,
    ip: usize,
    vfp: usize,
    frame: &'a [u64],
    local_types: &'a [ValueType],
}

impl<'a> FrameView<'a> {
    pub fn func_index(&self) -> u32 {
        self.func
    }

    /// Module offset of the instruction about to execute.
    pub fn ip(&self) -> usize {
        self.ip
    }

    /// Value-stack slot index of local 0.
    pub fn frame_base(&self) -> usize {
        self.vfp
    }

    pub fn num_locals(&self) -> usize {
        self.local_types.len()
    }

    /// Number of operands above the locals.
    pub fn stack_height(&self) -> usize {
        self.frame.len() - self.local_types.len()
    }

    pub fn local(&self, i: usize) -> Option<Value> {
        Some(Value::from_cell(*self.local_types.get(i)?, self.frame[i]))
    }

    pub fn locals(&self) -> Vec<Value> {
        (0..self.num_locals()).filter_map(|i| self.local(i)).collect()
    }

    /// Raw operand cells, bottom first.
    pub fn operands(&self) -> &'a [u64] {
        &self.frame[self.local_types.len()..]
    }

    /// Operand `depth` places below the top (0 is the top).
    pub fn peek(&self, depth: usize) -> Option<u64> {
        let ops = self.operands();
        ops.len().checked_sub(depth + 1).map(|i| ops[i])
    }

    pub fn peek_i32(&self, depth: usize) -> Option<i32> {
        self.peek(depth).map(|c| c as u32 as i32)
    }
}

enum GlobalRequest {
    Set(ProbeCallback),
    Clear,
}

/// What a probe callback receives.
pub struct ProbeContext<'a> {
    view: FrameView<'a>,
    request: Option<GlobalRequest>,
}

impl<'a> ProbeContext<'a> {
    pub fn view(&self) -> FrameView<'a> {
        self.view
    }

    /// Enters global-probe mode from the next instruction on.
    pub fn set_global_probe(&mut self, callback: ProbeCallback) {
        self.request = Some(GlobalRequest::Set(callback));
    }

    /// Leaves global-probe mode from the next instruction on.
    pub fn clear_global_probe(&mut self) {
        self.request = Some(GlobalRequest::Clear);
    }
}

/// The frame view of a probe callback's machine state.
pub fn probe_frame_view<'a>(ctx: &ProbeContext<'a>) -> FrameView<'a> {
    ctx.view
}

fn run_callback(m: &mut Machine<'_>, cb: &ProbeCallback) -> R {
    let local_types = m.local_types();
    let mut ctx = ProbeContext {
        view: FrameView { func: m.func, ip: m.ip, vfp: m.vfp, frame: &m.stack[m.vfp..m.vsp], local_types },
        request: None,
    };
    // A callback cannot be re-entered; a nested firing is skipped.
    let action = match cb.try_borrow_mut() {
        Ok(mut f) => f(&mut ctx),
        Err(_) => ProbeAction::Continue,
    };
    match ctx.request {
        Some(GlobalRequest::Set(g)) => m.inst.probes.global = Some(g),
        Some(GlobalRequest::Clear) => m.inst.probes.global = None,
        None => {}
    }
    m.table = if m.inst.probes.global.is_some() { &PROBE } else { &MAIN };
    match action {
        ProbeAction::Continue => Ok(()),
        ProbeAction::Halt(reason) => Err(m.trap_msg(crate::interp::TrapKind::ProbeHalt, reason)),
    }
}

pub(crate) fn fire_local(m: &mut Machine<'_>) -> R {
    let Some(site) = m.inst.probes.sites.get(&(m.func, m.ip)) else {
        return Ok(());
    };
    let callbacks: Vec<ProbeCallback> = site.callbacks.iter().map(|(_, c)| c.clone()).collect();
    for cb in &callbacks {
        run_callback(m, cb)?;
    }
    Ok(())
}

pub(crate) fn fire_global(m: &mut Machine<'_>) -> R {
    match m.inst.probes.global.clone() {
        Some(cb) => run_callback(m, &cb),
        None => {
            m.table = &MAIN;
            Ok(())
        }
    }
}
