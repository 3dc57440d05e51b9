use std::mem;
use std::sync::Arc;

use crate::binary::{FuncType, ValueType};
use crate::runtime::{Instance, Value};
use crate::validator::{CompiledModule, Sidetable, SidetableEntry};

use super::dispatch::{MAIN, PROBE};
use super::{BranchEvent, Caller, Store, Trap, TrapKind};

pub(crate) type Handler = for<'a, 'b> fn(&'b mut Machine<'a>) -> R;
pub(crate) type R = Result<(), Stop>;

/// Why a handler left the dispatch loop.
pub(crate) enum Stop {
    /// The outermost frame returned.
    Done,
    Trap(Box<Trap>),
}

/// Caller state saved across a call. Control information lives only here,
/// never on the value stack.
struct Frame<'a> {
    ip: usize,
    stp: usize,
    eip: usize,
    vfp: usize,
    func: u32,
    sidetable: &'a Sidetable,
    num_results: u32,
    max_height: usize,
    code: Arc<[u8]>,
    code_base: usize,
}

pub(crate) struct Machine<'a> {
    pub(crate) ip: usize,
    pub(crate) stp: usize,
    pub(crate) eip: usize,
    pub(crate) vfp: usize,
    pub(crate) vsp: usize,
    pub(crate) func: u32,
    pub(crate) inst: &'a mut Instance,
    /// Active dispatch table: [`MAIN`], or [`PROBE`] while a global probe is set.
    pub(crate) table: &'static [Handler; 256],

    pub(crate) sidetable: &'a Sidetable,
    num_results: u32,
    max_height: usize,
    /// Bytes being executed: the module bytes, or a probe copy of this body.
    code: Arc<[u8]>,
    /// Module offset of `code[0]`.
    code_base: usize,

    pub(crate) module: &'a CompiledModule,
    /// The original module bytes, never written.
    pub(crate) orig: &'a [u8],
    orig_arc: &'a Arc<[u8]>,
    pub(crate) stack: Vec<u64>,
    tags: Vec<u8>,
    tagging: bool,
    frames: Vec<Frame<'a>>,
    frame_limit: usize,
    pub(crate) store: &'a mut Store,
    /// Position just past a prefixed sub-opcode.
    pub(crate) imm: usize,
}

impl<'a> Machine<'a> {
    /// Runs `func` with its arguments already at `stack[base..]`; results are
    /// left at `stack[base..]`.
    pub(crate) fn execute(
        compiled: &'a CompiledModule,
        inst: &'a mut Instance,
        store: &'a mut Store,
        func: u32,
        base: usize,
    ) -> Result<(), Trap> {
        let table = if inst.probes.global_is_set() { &PROBE } else { &MAIN };
        let orig_arc = compiled.module.bytes();
        let first = &compiled.functions[0];
        let mut m = Machine {
            ip: 0,
            stp: 0,
            eip: 0,
            vfp: base,
            vsp: base,
            func,
            inst,
            table,
            sidetable: &first.sidetable,
            num_results: 0,
            max_height: 0,
            code: orig_arc.clone(),
            code_base: 0,
            module: compiled,
            orig: orig_arc,
            orig_arc,
            stack: mem::take(&mut store.stack),
            tags: mem::take(&mut store.tags),
            tagging: store.config().tags,
            frames: Vec::new(),
            frame_limit: store.config().max_frames.saturating_sub(store.depth),
            store,
            imm: 0,
        };
        let result = match m.enter(func, base) {
            Ok(()) => m.run(),
            Err(Stop::Trap(t)) => Err(*t),
            Err(Stop::Done) => Ok(()),
        };
        m.store.stack = mem::take(&mut m.stack);
        m.store.tags = mem::take(&mut m.tags);
        result
    }

    fn run(&mut self) -> Result<(), Trap> {
        loop {
            let op = self.code[self.ip - self.code_base];
            match (self.table[op as usize])(self) {
                Ok(()) => {}
                Err(Stop::Done) => return Ok(()),
                Err(Stop::Trap(t)) => return Err(*t),
            }
        }
    }

    #[cold]
    pub(crate) fn trap(&self, kind: TrapKind) -> Stop {
        Stop::Trap(Box::new(Trap { kind, offset: self.ip, func: self.func, message: None }))
    }

    #[cold]
    pub(crate) fn trap_msg(&self, kind: TrapKind, msg: impl Into<String>) -> Stop {
        Stop::Trap(Box::new(Trap { kind, offset: self.ip, func: self.func, message: Some(msg.into()) }))
    }

    #[inline(always)]
    pub(crate) fn byte(&self, pos: usize) -> u8 {
        self.code[pos - self.code_base]
    }

    #[inline(always)]
    pub(crate) fn u32_at(&self, pos: usize) -> (u32, usize) {
        let (v, n) = leb_u32(&self.code, pos - self.code_base);
        (v, n + self.code_base)
    }

    #[inline(always)]
    pub(crate) fn i64_at(&self, pos: usize) -> (i64, usize) {
        let (v, n) = leb_i64(&self.code, pos - self.code_base);
        (v, n + self.code_base)
    }

    #[inline(always)]
    pub(crate) fn skip_leb(&self, pos: usize) -> usize {
        leb_end(&self.code, pos - self.code_base) + self.code_base
    }

    #[inline(always)]
    pub(crate) fn push(&mut self, v: u64) {
        debug_assert!(self.vsp - self.vfp < self.max_height, "frame exceeded its validated height");
        self.stack[self.vsp] = v;
        self.vsp += 1;
    }

    #[inline(always)]
    pub(crate) fn pop(&mut self) -> u64 {
        self.vsp -= 1;
        self.stack[self.vsp]
    }

    #[inline(always)]
    pub(crate) fn top_mut(&mut self) -> &mut u64 {
        &mut self.stack[self.vsp - 1]
    }

    pub(crate) fn local_types(&self) -> &'a [ValueType] {
        let module = self.module;
        &module.function(self.func).expect("defined function").local_types
    }

    /// Operand height above the locals.
    pub(crate) fn operand_height(&self) -> usize {
        self.vsp - self.vfp - self.local_types().len()
    }

    /// Sets up a frame for defined function `func` whose arguments start at `vfp`.
    fn enter(&mut self, func: u32, vfp: usize) -> R {
        let module = self.module;
        let idx = (func - module.module.num_imported_funcs()) as usize;
        let vf = &module.functions[idx];
        let body = &module.module.functions[idx].body;
        if vfp + vf.max_stack_height as usize > self.stack.len() || self.frames.len() >= self.frame_limit {
            self.func = func;
            self.ip = body.code_start;
            return Err(self.trap(TrapKind::StackOverflow));
        }
        let nl = vf.local_types.len();
        self.stack[vfp + vf.num_params as usize..vfp + nl].fill(0);
        if self.tagging {
            for (i, t) in vf.local_types.iter().enumerate() {
                self.tags[vfp + i] = t.to_byte();
            }
        }
        self.vfp = vfp;
        self.vsp = vfp + nl;
        self.func = func;
        self.sidetable = &vf.sidetable;
        self.num_results = vf.num_results;
        self.max_height = vf.max_stack_height as usize;
        self.stp = 0;
        self.ip = body.code_start;
        self.eip = body.code_end - 1;
        match self.inst.probes.copy_for(func) {
            Some(copy) => {
                self.code = copy;
                self.code_base = body.code_start;
                self.store.stats.copy_activations += 1;
            }
            None => {
                if self.code_base != 0 || !Arc::ptr_eq(&self.code, self.orig_arc) {
                    self.code = self.orig_arc.clone();
                    self.code_base = 0;
                }
            }
        }
        self.store.stats.calls += 1;
        Ok(())
    }

    /// Calls `func`; `next_ip` is where the caller resumes.
    pub(crate) fn call(&mut self, func: u32, next_ip: usize) -> R {
        if func < self.module.module.num_imported_funcs() {
            return self.call_host(func, next_ip);
        }
        let nargs = self.module.module.func_type(func).expect("validated").params.len();
        let vfp = self.vsp - nargs;
        let code = self.code.clone();
        self.frames.push(Frame {
            ip: next_ip,
            stp: self.stp,
            eip: self.eip,
            vfp: self.vfp,
            func: self.func,
            sidetable: self.sidetable,
            num_results: self.num_results,
            max_height: self.max_height,
            code,
            code_base: self.code_base,
        });
        self.enter(func, vfp)
    }

    /// Copies the results to the frame base and resumes the caller.
    pub(crate) fn ret(&mut self) -> R {
        let n = self.num_results as usize;
        let src = self.vsp - n;
        if src != self.vfp {
            self.stack.copy_within(src..self.vsp, self.vfp);
            if self.tagging {
                self.tags.copy_within(src..self.vsp, self.vfp);
            }
        }
        self.vsp = self.vfp + n;
        let Some(f) = self.frames.pop() else {
            return Err(Stop::Done);
        };
        self.ip = f.ip;
        self.stp = f.stp;
        self.eip = f.eip;
        self.vfp = f.vfp;
        self.func = f.func;
        self.sidetable = f.sidetable;
        self.num_results = f.num_results;
        self.max_height = f.max_height;
        self.code = f.code;
        self.code_base = f.code_base;
        Ok(())
    }

    fn call_host(&mut self, func: u32, next_ip: usize) -> R {
        let h = self.inst.host_funcs[func as usize].clone();
        let np = h.signature.params.len();
        let args: Vec<Value> = (0..np)
            .map(|i| Value::from_cell(h.signature.params[i], self.stack[self.vsp - np + i]))
            .collect();
        self.vsp -= np;

        // Lend the stack back to the store so the host may re-enter.
        self.store.stack = mem::take(&mut self.stack);
        self.store.tags = mem::take(&mut self.tags);
        let saved_top = mem::replace(&mut self.store.top, self.vsp);
        let held = self.frames.len() + 1;
        self.store.depth += held;
        let result = {
            let mut caller = Caller { store: &mut *self.store, instance: &mut *self.inst };
            (h.callback)(&mut caller, &args)
        };
        self.store.depth -= held;
        self.store.top = saved_top;
        self.stack = mem::take(&mut self.store.stack);
        self.tags = mem::take(&mut self.store.tags);
        self.table = if self.inst.probes.global_is_set() { &PROBE } else { &MAIN };

        let out = result.map_err(|e| self.trap_msg(TrapKind::HostError, e.0))?;
        check_host_results(&h.signature, &out).map_err(|m| self.trap_msg(TrapKind::HostError, m))?;
        for v in out {
            self.stack[self.vsp] = v.to_cell();
            self.vsp += 1;
        }
        self.ip = next_ip;
        Ok(())
    }

    /// Takes the branch described by the entry at `stp`.
    #[inline(always)]
    pub(crate) fn transfer(&mut self) {
        let e = self.sidetable.entries()[self.stp];
        if self.store.observer.is_some() {
            self.report(e.valcnt, e.popcnt, e.delta_ip, e.delta_stp);
        }
        if e.popcnt != 0 {
            self.vsp = move_values(&mut self.stack, self.vsp, e.valcnt, e.popcnt);
            if self.tagging {
                let (v, p) = (e.valcnt as usize, e.popcnt as usize);
                self.tags.copy_within(self.vsp + p - v..self.vsp + p, self.vsp - v);
            }
        }
        (self.ip, self.stp) = apply_deltas(self.ip, self.stp, &e);
    }

    #[cold]
    fn report(&mut self, valcnt: u32, popcnt: u32, delta_ip: i32, delta_stp: i32) {
        self.store.stats.branches_taken += 1;
        let ev = BranchEvent {
            func: self.func,
            origin: self.ip,
            opcode: self.orig[self.ip],
            entry: self.stp,
            target_ip: self.ip.wrapping_add_signed(delta_ip as isize),
            target_stp: self.stp.wrapping_add_signed(delta_stp as isize),
            valcnt,
            popcnt,
            height: self.operand_height(),
        };
        if let Some(obs) = self.store.observer.as_mut() {
            obs(&ev);
        }
    }

    #[inline(always)]
    pub(crate) fn debug_check_stp(&self) {
        debug_assert_eq!(
            self.sidetable.origins().get(self.stp).map(|&o| o as usize),
            Some(self.ip),
            "sidetable pointer out of sync in function {}",
            self.func
        );
    }
}

pub(crate) fn check_host_results(sig: &FuncType, out: &[Value]) -> Result<(), String> {
    if out.len() != sig.results.len() || out.iter().zip(sig.results.iter()).any(|(v, t)| v.ty() != *t) {
        return Err(format!("host function returned {} values of the wrong shape", out.len()));
    }
    Ok(())
}

/// Register update of a taken branch: both deltas are added verbatim.
#[inline(always)]
pub fn apply_deltas(ip: usize, stp: usize, e: &SidetableEntry) -> (usize, usize) {
    (ip.wrapping_add_signed(e.delta_ip as isize), stp.wrapping_add_signed(e.delta_stp as isize))
}

/// Sidetable pointer after an untaken `br_if`, or an `if` entering its then-arm.
#[inline(always)]
pub fn stp_not_taken(stp: usize) -> usize {
    stp + 1
}

/// Entry chosen by a `br_table` whose header sits at `stp`. Keys above
/// `maxcase`, compared unsigned, select the default.
#[inline(always)]
pub fn br_table_entry(stp: usize, key: u32, maxcase: u32) -> usize {
    stp + 1 + key.min(maxcase) as usize
}

/// Copies the top `valcnt` cells down by `popcnt` slots and returns the new
/// stack pointer, `vsp - popcnt`.
#[inline(always)]
pub fn move_values(slots: &mut [u64], vsp: usize, valcnt: u32, popcnt: u32) -> usize {
    let (v, p) = (valcnt as usize, popcnt as usize);
    if p != 0 && v != 0 {
        slots.copy_within(vsp - v..vsp, vsp - v - p);
    }
    vsp - p
}

#[inline(always)]
pub(crate) fn leb_u32(code: &[u8], mut pos: usize) -> (u32, usize) {
    let b = code[pos];
    if b < 0x80 {
        return (u32::from(b), pos + 1);
    }
    let mut result = 0u32;
    let mut shift = 0;
    loop {
        let b = code[pos];
        pos += 1;
        result |= u32::from(b & 0x7F).wrapping_shl(shift);
        if b & 0x80 == 0 {
            return (result, pos);
        }
        shift += 7;
    }
}

#[inline(always)]
pub(crate) fn leb_i64(code: &[u8], mut pos: usize) -> (i64, usize) {
    let mut result = 0i64;
    let mut shift = 0u32;
    loop {
        let b = code[pos];
        pos += 1;
        if shift < 64 {
            result |= i64::from(b & 0x7F) << shift;
        }
        shift += 7;
        if b & 0x80 == 0 {
            if shift < 64 && b & 0x40 != 0 {
                result |= -1i64 << shift;
            }
            return (result, pos);
        }
    }
}

#[inline(always)]
pub(crate) fn leb_end(code: &[u8], mut pos: usize) -> usize {
    while code[pos] & 0x80 != 0 {
        pos += 1;
    }
    pos + 1
}
