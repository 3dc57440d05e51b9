//! A naive reference interpreter.
//!
//! Operands live in a growable list, every frame keeps its own label stack,
//! and branch targets are found by rescanning the code from the construct's
//! opening opcode. It shares nothing with the engine beyond the module
//! decoder and the value type.

use sidewasm::binary::{ConstExpr, DataMode, ElementMode, Module, ValueType};
use sidewasm::interp::TrapKind;
use sidewasm::runtime::Value;

use crate::decode::{decode_at, Imm};
use crate::oracle::{block_arity, matching_end_bytes};

const PAGE: usize = 65536;
const MAX_FRAMES: usize = 10_000;
const FUNC: u8 = 0xff;

#[derive(Debug, Clone, PartialEq)]
pub enum RefOutcome {
    Values(Vec<Value>),
    Trap(TrapKind),
    /// The step budget ran out; the run is inconclusive.
    StepLimit,
    /// The program uses something this interpreter does not model.
    Unsupported(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefRun {
    pub outcome: RefOutcome,
    /// Instructions executed, counting each `end` reached and the
    /// instruction that trapped.
    pub steps: u64,
}

#[derive(Debug, Clone)]
struct Label {
    op: u8,
    start_ip: usize,
    height: usize,
    params: usize,
    results: usize,
}

#[derive(Debug)]
struct Frame {
    func: u32,
    ip: usize,
    end_ip: usize,
    locals: Vec<Value>,
    labels: Vec<Label>,
    base: usize,
    nres: usize,
}

enum Stop {
    Trap(TrapKind),
    Unsupported(String),
}

impl From<TrapKind> for Stop {
    fn from(k: TrapKind) -> Self {
        Stop::Trap(k)
    }
}

fn unsupported<T>(what: impl Into<String>) -> Result<T, Stop> {
    Err(Stop::Unsupported(what.into()))
}

/// Instance state of the reference interpreter.
pub struct RefMachine<'m> {
    module: &'m Module,
    memory: Vec<u8>,
    max_pages: usize,
    globals: Vec<Value>,
    tables: Vec<Vec<Option<u32>>>,
    data_dropped: Vec<bool>,
    stack: Vec<Value>,
    frames: Vec<Frame>,
    steps: u64,
    limit: u64,
}

fn const_value(e: &ConstExpr, globals: &[Value]) -> Option<Value> {
    Some(match *e {
        ConstExpr::I32(v) => Value::I32(v),
        ConstExpr::I64(v) => Value::I64(v),
        ConstExpr::F32(b) => Value::F32(f32::from_bits(b)),
        ConstExpr::F64(b) => Value::F64(f64::from_bits(b)),
        ConstExpr::RefNull(ValueType::ExternRef) => Value::ExternRef(None),
        ConstExpr::RefNull(_) => Value::FuncRef(None),
        ConstExpr::RefFunc(f) => Value::FuncRef(Some(f)),
        ConstExpr::GlobalGet(g) => *globals.get(g as usize)?,
    })
}

fn default_value(t: ValueType) -> Value {
    match t {
        ValueType::I32 => Value::I32(0),
        ValueType::I64 => Value::I64(0),
        ValueType::F32 => Value::F32(0.0),
        ValueType::F64 => Value::F64(0.0),
        ValueType::ExternRef => Value::ExternRef(None),
        _ => Value::FuncRef(None),
    }
}

impl<'m> RefMachine<'m> {
    /// Builds instance state and runs the start function, if any.
    pub fn new(module: &'m Module) -> Result<Self, RefOutcome> {
        if !module.imports.is_empty() {
            return Err(RefOutcome::Unsupported("imports".into()));
        }
        let (pages, max_pages) = match module.memories.first() {
            Some(l) => (l.min as usize, l.max.map_or(PAGE, |m| m as usize)),
            None => (0, 0),
        };
        let mut globals = Vec::new();
        for g in &module.globals {
            let v = const_value(&g.init, &globals).ok_or(RefOutcome::Unsupported("global init".into()))?;
            globals.push(v);
        }
        let mut m = RefMachine {
            module,
            memory: vec![0; pages * PAGE],
            max_pages,
            globals,
            tables: module.tables.iter().map(|t| vec![None; t.limits.min as usize]).collect(),
            data_dropped: vec![false; module.data.len()],
            stack: Vec::new(),
            frames: Vec::new(),
            steps: 0,
            limit: u64::MAX,
        };
        for seg in &module.elements {
            if let ElementMode::Active { table, offset } = &seg.mode {
                let Some(Value::I32(off)) = const_value(offset, &m.globals) else {
                    return Err(RefOutcome::Unsupported("element offset".into()));
                };
                for (k, item) in seg.items.iter().enumerate() {
                    let r = match const_value(item, &m.globals) {
                        Some(Value::FuncRef(r)) => r,
                        _ => return Err(RefOutcome::Unsupported("element item".into())),
                    };
                    let slot = m.tables[*table as usize]
                        .get_mut(off as u32 as usize + k)
                        .ok_or(RefOutcome::Unsupported("element out of bounds".into()))?;
                    *slot = r;
                }
            }
        }
        for seg in &module.data {
            if let DataMode::Active { offset, .. } = &seg.mode {
                let Some(Value::I32(off)) = const_value(offset, &m.globals) else {
                    return Err(RefOutcome::Unsupported("data offset".into()));
                };
                let bytes = &module.bytes()[seg.data.clone()];
                let at = off as u32 as usize;
                let dst = m
                    .memory
                    .get_mut(at..at + bytes.len())
                    .ok_or(RefOutcome::Unsupported("data out of bounds".into()))?;
                dst.copy_from_slice(bytes);
            }
        }
        if let Some(s) = module.start {
            let run = m.invoke(s, &[], u64::MAX);
            if run.outcome != RefOutcome::Values(vec![]) {
                return Err(run.outcome);
            }
        }
        Ok(m)
    }

    pub fn memory(&self) -> &[u8] {
        &self.memory
    }

    pub fn global(&self, i: u32) -> Option<Value> {
        self.globals.get(i as usize).copied()
    }

    /// Runs `func` with `args`, giving up after `step_limit` instructions.
    pub fn invoke(&mut self, func: u32, args: &[Value], step_limit: u64) -> RefRun {
        self.stack.clear();
        self.frames.clear();
        self.steps = 0;
        self.limit = step_limit;
        self.stack.extend_from_slice(args);
        let outcome = match self.enter(func).and_then(|()| self.run()) {
            Ok(true) => RefOutcome::Values(std::mem::take(&mut self.stack)),
            Ok(false) => RefOutcome::StepLimit,
            Err(Stop::Trap(k)) => RefOutcome::Trap(k),
            Err(Stop::Unsupported(s)) => RefOutcome::Unsupported(s),
        };
        RefRun { outcome, steps: self.steps }
    }

    fn enter(&mut self, func: u32) -> Result<(), Stop> {
        let module = self.module;
        let Some(decl) = module.defined_function(func) else { return unsupported("call to an imported function") };
        if self.frames.len() >= MAX_FRAMES {
            return Err(TrapKind::StackOverflow.into());
        }
        let ty = &module.types[decl.type_index as usize];
        let base = self.stack.len() - ty.params.len();
        let mut locals: Vec<Value> = self.stack.split_off(base);
        for &(n, t) in &decl.body.locals {
            locals.extend(std::iter::repeat_n(default_value(t), n as usize));
        }
        self.frames.push(Frame {
            func,
            ip: decl.body.code_start,
            end_ip: decl.body.end_ip(),
            locals,
            labels: vec![Label { op: FUNC, start_ip: 0, height: base, params: 0, results: ty.results.len() }],
            base,
            nres: ty.results.len(),
        });
        Ok(())
    }

    fn leave(&mut self) {
        let f = self.frames.pop().expect("frame");
        let n = f.nres;
        let results = self.stack.split_off(self.stack.len() - n);
        self.stack.truncate(f.base);
        self.stack.extend(results);
    }

    fn branch(&mut self, depth: u32) -> Result<(), Stop> {
        let bytes = &self.module.bytes()[..];
        let f = self.frames.last_mut().expect("frame");
        let li = f.labels.len() - 1 - depth as usize;
        let l = f.labels[li].clone();
        let arity = if l.op == 0x03 { l.params } else { l.results };
        let vals = self.stack.split_off(self.stack.len() - arity);
        self.stack.truncate(l.height);
        self.stack.extend(vals);
        match l.op {
            0x03 => {
                f.labels.truncate(li);
                f.ip = l.start_ip;
            }
            FUNC => {
                f.labels.truncate(1);
                f.ip = f.end_ip;
            }
            _ => {
                f.labels.truncate(li + 1);
                f.ip = matching_end_bytes(bytes, l.start_ip).map_err(|e| Stop::Unsupported(e.0))?.1;
            }
        }
        Ok(())
    }

    fn pop(&mut self) -> Value {
        self.stack.pop().expect("validated operand")
    }

    fn pop_i32(&mut self) -> i32 {
        match self.pop() {
            Value::I32(v) => v,
            v => panic!("expected i32, found {v:?}"),
        }
    }

    fn pop_i64(&mut self) -> i64 {
        match self.pop() {
            Value::I64(v) => v,
            v => panic!("expected i64, found {v:?}"),
        }
    }

    fn pop_f32(&mut self) -> f32 {
        match self.pop() {
            Value::F32(v) => v,
            v => panic!("expected f32, found {v:?}"),
        }
    }

    fn pop_f64(&mut self) -> f64 {
        match self.pop() {
            Value::F64(v) => v,
            v => panic!("expected f64, found {v:?}"),
        }
    }

    fn push(&mut self, v: Value) {
        self.stack.push(v);
    }

    fn addr(&mut self, offset: u32, width: usize) -> Result<usize, Stop> {
        let a = self.pop_i32() as u32 as u64 + u64::from(offset);
        if a + width as u64 > self.memory.len() as u64 {
            return Err(TrapKind::MemoryOutOfBounds.into());
        }
        Ok(a as usize)
    }

    fn load<const N: usize>(&mut self, offset: u32) -> Result<[u8; N], Stop> {
        let a = self.addr(offset, N)?;
        Ok(self.memory[a..a + N].try_into().expect("width"))
    }

    fn store(&mut self, offset: u32, bytes: &[u8]) -> Result<(), Stop> {
        let a = self.addr(offset, bytes.len())?;
        self.memory[a..a + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    /// Returns `Ok(true)` on completion, `Ok(false)` at the step limit.
    fn run(&mut self) -> Result<bool, Stop> {
        let module = self.module;
        let bytes = &module.bytes()[..];
        while !self.frames.is_empty() {
            if self.steps >= self.limit {
                return Ok(false);
            }
            self.steps += 1;
            let ip = self.frames.last().expect("frame").ip;
            let i = decode_at(bytes, ip).map_err(|e| Stop::Unsupported(e.0))?;
            self.frames.last_mut().expect("frame").ip = i.next;
            self.step(i.op, i.sub, &i.imm, ip)?;
        }
        Ok(true)
    }

    fn step(&mut self, op: u8, sub: u32, imm: &Imm, ip: usize) -> Result<(), Stop> {
        use Value::*;
        let module = self.module;
        let bytes = &module.bytes()[..];
        let idx = match imm {
            Imm::Idx(i) => *i,
            _ => 0,
        };
        let (mem_offset, _) = match imm {
            Imm::Mem { offset, align } => (*offset, *align),
            _ => (0, 0),
        };
        macro_rules! un {
            ($pop:ident, $wrap:ident, |$a:ident| $e:expr) => {{
                let $a = self.$pop();
                self.push($wrap($e));
            }};
        }
        macro_rules! bin {
            ($pop:ident, $wrap:ident, |$a:ident, $b:ident| $e:expr) => {{
                let $b = self.$pop();
                let $a = self.$pop();
                self.push($wrap($e));
            }};
        }
        macro_rules! cmp {
            ($pop:ident, |$a:ident, $b:ident| $e:expr) => {{
                let $b = self.$pop();
                let $a = self.$pop();
                self.push(I32(i32::from($e)));
            }};
        }
        match op {
            0x00 => return Err(TrapKind::Unreachable.into()),
            0x01 => {}
            0x02..=0x04 => {
                let Imm::Block(bt) = *imm else { unreachable!() };
                let (p, r) = block_arity(module, bt);
                let cond = if op == 0x04 { self.pop_i32() } else { 1 };
                let height = self.stack.len() - p;
                let f = self.frames.last_mut().expect("frame");
                f.labels.push(Label { op, start_ip: ip, height, params: p, results: r });
                if cond == 0 {
                    let (else_ip, end_ip) = matching_end_bytes(bytes, ip).map_err(|e| Stop::Unsupported(e.0))?;
                    f.ip = match else_ip {
                        Some(e) => e + 1,
                        None => end_ip,
                    };
                }
            }
            0x05 => {
                let f = self.frames.last_mut().expect("frame");
                let start = f.labels.last().expect("if label").start_ip;
                f.ip = matching_end_bytes(bytes, start).map_err(|e| Stop::Unsupported(e.0))?.1;
            }
            0x0b => {
                let f = self.frames.last_mut().expect("frame");
                let l = f.labels.pop().expect("label");
                if l.op == FUNC {
                    self.leave();
                }
            }
            0x0c => self.branch(idx)?,
            0x0d => {
                if self.pop_i32() != 0 {
                    self.branch(idx)?;
                }
            }
            0x0e => {
                let Imm::Table(targets, default) = imm else { unreachable!() };
                let k = self.pop_i32() as u32 as usize;
                self.branch(targets.get(k).copied().unwrap_or(*default))?;
            }
            0x0f => self.leave(),
            0x10 => self.enter(idx)?,
            0x11 => {
                let Imm::Two(ty, table) = *imm else { unreachable!() };
                let k = self.pop_i32() as u32 as usize;
                let t = &self.tables[table as usize];
                let Some(&entry) = t.get(k) else { return Err(TrapKind::TableOutOfBounds.into()) };
                let Some(f) = entry else { return Err(TrapKind::IndirectNull.into()) };
                if module.func_type(f) != Some(&module.types[ty as usize]) {
                    return Err(TrapKind::IndirectSignatureMismatch.into());
                }
                self.enter(f)?;
            }
            0x1a => {
                self.pop();
            }
            0x1b | 0x1c => {
                let c = self.pop_i32();
                let b = self.pop();
                let a = self.pop();
                self.push(if c != 0 { a } else { b });
            }
            0x20 => {
                let v = self.frames.last().expect("frame").locals[idx as usize];
                self.push(v);
            }
            0x21 => {
                let v = self.pop();
                self.frames.last_mut().expect("frame").locals[idx as usize] = v;
            }
            0x22 => {
                let v = *self.stack.last().expect("operand");
                self.frames.last_mut().expect("frame").locals[idx as usize] = v;
            }
            0x23 => self.push(self.globals[idx as usize]),
            0x24 => self.globals[idx as usize] = self.pop(),
            0x25 => {
                let k = self.pop_i32() as u32 as usize;
                let Some(&r) = self.tables[idx as usize].get(k) else { return Err(TrapKind::TableOutOfBounds.into()) };
                self.push(FuncRef(r));
            }
            0x26 => {
                let FuncRef(r) = self.pop() else { return unsupported("externref table") };
                let k = self.pop_i32() as u32 as usize;
                let Some(slot) = self.tables[idx as usize].get_mut(k) else {
                    return Err(TrapKind::TableOutOfBounds.into());
                };
                *slot = r;
            }
            0x28 => {
                let b = self.load::<4>(mem_offset)?;
                self.push(I32(i32::from_le_bytes(b)));
            }
            0x29 => {
                let b = self.load::<8>(mem_offset)?;
                self.push(I64(i64::from_le_bytes(b)));
            }
            0x2a => {
                let b = self.load::<4>(mem_offset)?;
                self.push(F32(f32::from_le_bytes(b)));
            }
            0x2b => {
                let b = self.load::<8>(mem_offset)?;
                self.push(F64(f64::from_le_bytes(b)));
            }
            0x2c => {
                let b = self.load::<1>(mem_offset)?;
                self.push(I32(i32::from(b[0] as i8)));
            }
            0x2d => {
                let b = self.load::<1>(mem_offset)?;
                self.push(I32(i32::from(b[0])));
            }
            0x2e => {
                let b = self.load::<2>(mem_offset)?;
                self.push(I32(i32::from(i16::from_le_bytes(b))));
            }
            0x2f => {
                let b = self.load::<2>(mem_offset)?;
                self.push(I32(i32::from(u16::from_le_bytes(b))));
            }
            0x30 => {
                let b = self.load::<1>(mem_offset)?;
                self.push(I64(i64::from(b[0] as i8)));
            }
            0x31 => {
                let b = self.load::<1>(mem_offset)?;
                self.push(I64(i64::from(b[0])));
            }
            0x32 => {
                let b = self.load::<2>(mem_offset)?;
                self.push(I64(i64::from(i16::from_le_bytes(b))));
            }
            0x33 => {
                let b = self.load::<2>(mem_offset)?;
                self.push(I64(i64::from(u16::from_le_bytes(b))));
            }
            0x34 => {
                let b = self.load::<4>(mem_offset)?;
                self.push(I64(i64::from(i32::from_le_bytes(b))));
            }
            0x35 => {
                let b = self.load::<4>(mem_offset)?;
                self.push(I64(i64::from(u32::from_le_bytes(b))));
            }
            0x36 => {
                let v = self.pop_i32();
                self.store(mem_offset, &v.to_le_bytes())?;
            }
            0x37 => {
                let v = self.pop_i64();
                self.store(mem_offset, &v.to_le_bytes())?;
            }
            0x38 => {
                let v = self.pop_f32();
                self.store(mem_offset, &v.to_le_bytes())?;
            }
            0x39 => {
                let v = self.pop_f64();
                self.store(mem_offset, &v.to_le_bytes())?;
            }
            0x3a => {
                let v = self.pop_i32();
                self.store(mem_offset, &v.to_le_bytes()[..1])?;
            }
            0x3b => {
                let v = self.pop_i32();
                self.store(mem_offset, &v.to_le_bytes()[..2])?;
            }
            0x3c => {
                let v = self.pop_i64();
                self.store(mem_offset, &v.to_le_bytes()[..1])?;
            }
            0x3d => {
                let v = self.pop_i64();
                self.store(mem_offset, &v.to_le_bytes()[..2])?;
            }
            0x3e => {
                let v = self.pop_i64();
                self.store(mem_offset, &v.to_le_bytes()[..4])?;
            }
            0x3f => self.push(I32((self.memory.len() / PAGE) as i32)),
            0x40 => {
                let n = self.pop_i32() as u32 as usize;
                let old = self.memory.len() / PAGE;
                if old + n > self.max_pages.min(PAGE) {
                    self.push(I32(-1));
                } else {
                    self.memory.resize((old + n) * PAGE, 0);
                    self.push(I32(old as i32));
                }
            }
            0x41 => {
                let Imm::I32(v) = *imm else { unreachable!() };
                self.push(I32(v));
            }
            0x42 => {
                let Imm::I64(v) = *imm else { unreachable!() };
                self.push(I64(v));
            }
            0x43 => {
                let Imm::F32(v) = *imm else { unreachable!() };
                self.push(F32(f32::from_bits(v)));
            }
            0x44 => {
                let Imm::F64(v) = *imm else { unreachable!() };
                self.push(F64(f64::from_bits(v)));
            }
            0x45 => un!(pop_i32, I32, |a| i32::from(a == 0)),
            0x46 => cmp!(pop_i32, |a, b| a == b),
            0x47 => cmp!(pop_i32, |a, b| a != b),
            0x48 => cmp!(pop_i32, |a, b| a < b),
            0x49 => cmp!(pop_i32, |a, b| (a as u32) < (b as u32)),
            0x4a => cmp!(pop_i32, |a, b| a > b),
            0x4b => cmp!(pop_i32, |a, b| (a as u32) > (b as u32)),
            0x4c => cmp!(pop_i32, |a, b| a <= b),
            0x4d => cmp!(pop_i32, |a, b| (a as u32) <= (b as u32)),
            0x4e => cmp!(pop_i32, |a, b| a >= b),
            0x4f => cmp!(pop_i32, |a, b| (a as u32) >= (b as u32)),
            0x50 => un!(pop_i64, I32, |a| i32::from(a == 0)),
            0x51 => cmp!(pop_i64, |a, b| a == b),
            0x52 => cmp!(pop_i64, |a, b| a != b),
            0x53 => cmp!(pop_i64, |a, b| a < b),
            0x54 => cmp!(pop_i64, |a, b| (a as u64) < (b as u64)),
            0x55 => cmp!(pop_i64, |a, b| a > b),
            0x56 => cmp!(pop_i64, |a, b| (a as u64) > (b as u64)),
            0x57 => cmp!(pop_i64, |a, b| a <= b),
            0x58 => cmp!(pop_i64, |a, b| (a as u64) <= (b as u64)),
            0x59 => cmp!(pop_i64, |a, b| a >= b),
            0x5a => cmp!(pop_i64, |a, b| (a as u64) >= (b as u64)),
            0x5b => cmp!(pop_f32, |a, b| a == b),
            0x5c => cmp!(pop_f32, |a, b| a != b),
            0x5d => cmp!(pop_f32, |a, b| a < b),
            0x5e => cmp!(pop_f32, |a, b| a > b),
            0x5f => cmp!(pop_f32, |a, b| a <= b),
            0x60 => cmp!(pop_f32, |a, b| a >= b),
            0x61 => cmp!(pop_f64, |a, b| a == b),
            0x62 => cmp!(pop_f64, |a, b| a != b),
            0x63 => cmp!(pop_f64, |a, b| a < b),
            0x64 => cmp!(pop_f64, |a, b| a > b),
            0x65 => cmp!(pop_f64, |a, b| a <= b),
            0x66 => cmp!(pop_f64, |a, b| a >= b),
            0x67 => un!(pop_i32, I32, |a| a.leading_zeros() as i32),
            0x68 => un!(pop_i32, I32, |a| a.trailing_zeros() as i32),
            0x69 => un!(pop_i32, I32, |a| a.count_ones() as i32),
            0x6a => bin!(pop_i32, I32, |a, b| a.wrapping_add(b)),
            0x6b => bin!(pop_i32, I32, |a, b| a.wrapping_sub(b)),
            0x6c => bin!(pop_i32, I32, |a, b| a.wrapping_mul(b)),
            0x6d..=0x70 => {
                let b = self.pop_i32();
                let a = self.pop_i32();
                if b == 0 {
                    return Err(TrapKind::IntegerDivideByZero.into());
                }
                let r = match op {
                    0x6d if a == i32::MIN && b == -1 => return Err(TrapKind::IntegerOverflow.into()),
                    0x6d => a / b,
                    0x6e => ((a as u32) / (b as u32)) as i32,
                    0x6f if b == -1 => 0,
                    0x6f => a % b,
                    _ => ((a as u32) % (b as u32)) as i32,
                };
                self.push(I32(r));
            }
            0x71 => bin!(pop_i32, I32, |a, b| a & b),
            0x72 => bin!(pop_i32, I32, |a, b| a | b),
            0x73 => bin!(pop_i32, I32, |a, b| a ^ b),
            0x74 => bin!(pop_i32, I32, |a, b| a << (b & 31)),
            0x75 => bin!(pop_i32, I32, |a, b| a >> (b & 31)),
            0x76 => bin!(pop_i32, I32, |a, b| ((a as u32) >> (b & 31)) as i32),
            0x77 => bin!(pop_i32, I32, |a, b| (a as u32).rotate_left((b & 31) as u32) as i32),
            0x78 => bin!(pop_i32, I32, |a, b| (a as u32).rotate_right((b & 31) as u32) as i32),
            0x79 => un!(pop_i64, I64, |a| i64::from(a.leading_zeros())),
            0x7a => un!(pop_i64, I64, |a| i64::from(a.trailing_zeros())),
            0x7b => un!(pop_i64, I64, |a| i64::from(a.count_ones())),
            0x7c => bin!(pop_i64, I64, |a, b| a.wrapping_add(b)),
            0x7d => bin!(pop_i64, I64, |a, b| a.wrapping_sub(b)),
            0x7e => bin!(pop_i64, I64, |a, b| a.wrapping_mul(b)),
            0x7f..=0x82 => {
                let b = self.pop_i64();
                let a = self.pop_i64();
                if b == 0 {
                    return Err(TrapKind::IntegerDivideByZero.into());
                }
                let r = match op {
                    0x7f if a == i64::MIN && b == -1 => return Err(TrapKind::IntegerOverflow.into()),
                    0x7f => a / b,
                    0x80 => ((a as u64) / (b as u64)) as i64,
                    0x81 if b == -1 => 0,
                    0x81 => a % b,
                    _ => ((a as u64) % (b as u64)) as i64,
                };
                self.push(I64(r));
            }
            0x83 => bin!(pop_i64, I64, |a, b| a & b),
            0x84 => bin!(pop_i64, I64, |a, b| a | b),
            0x85 => bin!(pop_i64, I64, |a, b| a ^ b),
            0x86 => bin!(pop_i64, I64, |a, b| a << (b & 63)),
            0x87 => bin!(pop_i64, I64, |a, b| a >> (b & 63)),
            0x88 => bin!(pop_i64, I64, |a, b| ((a as u64) >> (b & 63)) as i64),
            0x89 => bin!(pop_i64, I64, |a, b| (a as u64).rotate_left((b & 63) as u32) as i64),
            0x8a => bin!(pop_i64, I64, |a, b| (a as u64).rotate_right((b & 63) as u32) as i64),
            0x8b => un!(pop_f32, F32, |a| f32::from_bits(a.to_bits() & 0x7fff_ffff)),
            0x8c => un!(pop_f32, F32, |a| f32::from_bits(a.to_bits() ^ 0x8000_0000)),
            0x8d => un!(pop_f32, F32, |a| a.ceil()),
            0x8e => un!(pop_f32, F32, |a| a.floor()),
            0x8f => un!(pop_f32, F32, |a| a.trunc()),
            0x90 => un!(pop_f32, F32, |a| a.round_ties_even()),
            0x91 => un!(pop_f32, F32, |a| a.sqrt()),
            0x92 => bin!(pop_f32, F32, |a, b| a + b),
            0x93 => bin!(pop_f32, F32, |a, b| a - b),
            0x94 => bin!(pop_f32, F32, |a, b| a * b),
            0x95 => bin!(pop_f32, F32, |a, b| a / b),
            0x96 => bin!(pop_f32, F32, |a, b| fmin32(a, b)),
            0x97 => bin!(pop_f32, F32, |a, b| fmax32(a, b)),
            0x98 => bin!(pop_f32, F32, |a, b| f32::from_bits((a.to_bits() & 0x7fff_ffff) | (b.to_bits() & 0x8000_0000))),
            0x99 => un!(pop_f64, F64, |a| f64::from_bits(a.to_bits() & !(1 << 63))),
            0x9a => un!(pop_f64, F64, |a| f64::from_bits(a.to_bits() ^ (1 << 63))),
            0x9b => un!(pop_f64, F64, |a| a.ceil()),
            0x9c => un!(pop_f64, F64, |a| a.floor()),
            0x9d => un!(pop_f64, F64, |a| a.trunc()),
            0x9e => un!(pop_f64, F64, |a| a.round_ties_even()),
            0x9f => un!(pop_f64, F64, |a| a.sqrt()),
            0xa0 => bin!(pop_f64, F64, |a, b| a + b),
            0xa1 => bin!(pop_f64, F64, |a, b| a - b),
            0xa2 => bin!(pop_f64, F64, |a, b| a * b),
            0xa3 => bin!(pop_f64, F64, |a, b| a / b),
            0xa4 => bin!(pop_f64, F64, |a, b| fmin64(a, b)),
            0xa5 => bin!(pop_f64, F64, |a, b| fmax64(a, b)),
            0xa6 => bin!(pop_f64, F64, |a, b| f64::from_bits((a.to_bits() & !(1 << 63)) | (b.to_bits() & (1 << 63)))),
            0xa7 => un!(pop_i64, I32, |a| a as i32),
            0xa8 => {
                let a = f64::from(self.pop_f32());
                self.push(I32(trunc(a, -2147483649.0, 2147483648.0)? as i32));
            }
            0xa9 => {
                let a = f64::from(self.pop_f32());
                self.push(I32(trunc(a, -1.0, 4294967296.0)? as u32 as i32));
            }
            0xaa => {
                let a = self.pop_f64();
                self.push(I32(trunc(a, -2147483649.0, 2147483648.0)? as i32));
            }
            0xab => {
                let a = self.pop_f64();
                self.push(I32(trunc(a, -1.0, 4294967296.0)? as u32 as i32));
            }
            0xac => un!(pop_i32, I64, |a| i64::from(a)),
            0xad => un!(pop_i32, I64, |a| i64::from(a as u32)),
            0xae => {
                let a = f64::from(self.pop_f32());
                self.push(I64(trunc_i64(a)?));
            }
            0xaf => {
                let a = f64::from(self.pop_f32());
                self.push(I64(trunc_u64(a)? as i64));
            }
            0xb0 => {
                let a = self.pop_f64();
                self.push(I64(trunc_i64(a)?));
            }
            0xb1 => {
                let a = self.pop_f64();
                self.push(I64(trunc_u64(a)? as i64));
            }
            0xb2 => un!(pop_i32, F32, |a| a as f32),
            0xb3 => un!(pop_i32, F32, |a| a as u32 as f32),
            0xb4 => un!(pop_i64, F32, |a| a as f32),
            0xb5 => un!(pop_i64, F32, |a| a as u64 as f32),
            0xb6 => un!(pop_f64, F32, |a| a as f32),
            0xb7 => un!(pop_i32, F64, |a| f64::from(a)),
            0xb8 => un!(pop_i32, F64, |a| f64::from(a as u32)),
            0xb9 => un!(pop_i64, F64, |a| a as f64),
            0xba => un!(pop_i64, F64, |a| a as u64 as f64),
            0xbb => un!(pop_f32, F64, |a| f64::from(a)),
            0xbc => un!(pop_f32, I32, |a| a.to_bits() as i32),
            0xbd => un!(pop_f64, I64, |a| a.to_bits() as i64),
            0xbe => un!(pop_i32, F32, |a| f32::from_bits(a as u32)),
            0xbf => un!(pop_i64, F64, |a| f64::from_bits(a as u64)),
            0xc0 => un!(pop_i32, I32, |a| i32::from(a as i8)),
            0xc1 => un!(pop_i32, I32, |a| i32::from(a as i16)),
            0xc2 => un!(pop_i64, I64, |a| i64::from(a as i8)),
            0xc3 => un!(pop_i64, I64, |a| i64::from(a as i16)),
            0xc4 => un!(pop_i64, I64, |a| i64::from(a as i32)),
            0xd0 => self.push(if idx == 0x6f { ExternRef(None) } else { FuncRef(None) }),
            0xd1 => {
                let null = matches!(self.pop(), FuncRef(None) | ExternRef(None));
                self.push(I32(i32::from(null)));
            }
            0xd2 => self.push(FuncRef(Some(idx))),
            0xfc => match sub {
                0 => un!(pop_f32, I32, |a| a as i32),
                1 => un!(pop_f32, I32, |a| a as u32 as i32),
                2 => un!(pop_f64, I32, |a| a as i32),
                3 => un!(pop_f64, I32, |a| a as u32 as i32),
                4 => un!(pop_f32, I64, |a| a as i64),
                5 => un!(pop_f32, I64, |a| a as u64 as i64),
                6 => un!(pop_f64, I64, |a| a as i64),
                7 => un!(pop_f64, I64, |a| a as u64 as i64),
                8 => {
                    let n = self.pop_i32() as u32 as u64;
                    let s = self.pop_i32() as u32 as u64;
                    let d = self.pop_i32() as u32 as u64;
                    let seg = &module.data[idx as usize];
                    let src: &[u8] = if self.data_dropped[idx as usize] { &[] } else { &bytes[seg.data.clone()] };
                    if s + n > src.len() as u64 || d + n > self.memory.len() as u64 {
                        return Err(TrapKind::MemoryOutOfBounds.into());
                    }
                    self.memory[d as usize..(d + n) as usize].copy_from_slice(&src[s as usize..(s + n) as usize]);
                }
                9 => self.data_dropped[idx as usize] = true,
                10 => {
                    let n = self.pop_i32() as u32 as u64;
                    let s = self.pop_i32() as u32 as u64;
                    let d = self.pop_i32() as u32 as u64;
                    let len = self.memory.len() as u64;
                    if s + n > len || d + n > len {
                        return Err(TrapKind::MemoryOutOfBounds.into());
                    }
                    self.memory.copy_within(s as usize..(s + n) as usize, d as usize);
                }
                11 => {
                    let n = self.pop_i32() as u32 as u64;
                    let v = self.pop_i32() as u8;
                    let d = self.pop_i32() as u32 as u64;
                    if d + n > self.memory.len() as u64 {
                        return Err(TrapKind::MemoryOutOfBounds.into());
                    }
                    self.memory[d as usize..(d + n) as usize].fill(v);
                }
                16 => self.push(I32(self.tables[idx as usize].len() as i32)),
                _ => return unsupported(format!("0xfc {sub}")),
            },
            _ => return unsupported(format!("opcode {op:#04x}")),
        }
        Ok(())
    }

    /// Function index of the innermost frame, if running.
    pub fn current_func(&self) -> Option<u32> {
        self.frames.last().map(|f| f.func)
    }
}

fn trunc(a: f64, lo: f64, hi: f64) -> Result<i64, Stop> {
    if a.is_nan() {
        return Err(TrapKind::InvalidFloatConversion.into());
    }
    let t = a.trunc();
    if t <= lo || t >= hi {
        return Err(TrapKind::IntegerOverflow.into());
    }
    Ok(t as i64)
}

fn trunc_i64(a: f64) -> Result<i64, Stop> {
    if a.is_nan() {
        return Err(TrapKind::InvalidFloatConversion.into());
    }
    let t = a.trunc();
    if t < -9223372036854775808.0 || t >= 9223372036854775808.0 {
        return Err(TrapKind::IntegerOverflow.into());
    }
    Ok(t as i64)
}

fn trunc_u64(a: f64) -> Result<u64, Stop> {
    if a.is_nan() {
        return Err(TrapKind::InvalidFloatConversion.into());
    }
    let t = a.trunc();
    if t <= -1.0 || t >= 18446744073709551616.0 {
        return Err(TrapKind::IntegerOverflow.into());
    }
    Ok(t as u64)
}

fn fmin32(a: f32, b: f32) -> f32 {
    if a.is_nan() || b.is_nan() {
        f32::NAN
    } else if a == 0.0 && b == 0.0 {
        f32::from_bits(a.to_bits() | b.to_bits())
    } else {
        a.min(b)
    }
}

fn fmax32(a: f32, b: f32) -> f32 {
    if a.is_nan() || b.is_nan() {
        f32::NAN
    } else if a == 0.0 && b == 0.0 {
        f32::from_bits(a.to_bits() & b.to_bits())
    } else {
        a.max(b)
    }
}

fn fmin64(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else if a == 0.0 && b == 0.0 {
        f64::from_bits(a.to_bits() | b.to_bits())
    } else {
        a.min(b)
    }
}

fn fmax64(a: f64, b: f64) -> f64 {
    if a.is_nan() || b.is_nan() {
        f64::NAN
    } else if a == 0.0 && b == 0.0 {
        f64::from_bits(a.to_bits() & b.to_bits())
    } else {
        a.max(b)
    }
}

/// Runs `func` of a fresh instance of `module`.
pub fn reference_execute(module: &Module, func: u32, args: &[Value], step_limit: u64) -> RefRun {
    match RefMachine::new(module) {
        Ok(mut m) => m.invoke(func, args, step_limit),
        Err(outcome) => RefRun { outcome, steps: 0 },
    }
}

/// Equality that treats any two NaNs of the same type as equal.
pub fn values_equivalent(a: &[Value], b: &[Value]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| match (x, y) {
            (Value::F32(p), Value::F32(q)) => (p.is_nan() && q.is_nan()) || p.to_bits() == q.to_bits(),
            (Value::F64(p), Value::F64(q)) => (p.is_nan() && q.is_nan()) || p.to_bits() == q.to_bits(),
            _ => x == y,
        })
}
