//! The function-body checker.

use crate::binary::{decode_locals, opcode as op, FuncType, Reader, ValueType};
use crate::limits;

use super::sidetable::{FixupChain, SidetableBuilder, SidetableEntry};
use super::{Boundaries, ModuleEnv, ValidateOptions, ValidatedFunction, ValidationError, ValidationErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlKind {
    Block,
    Loop,
    If,
    /// The else arm of an `if`.
    Else,
    /// The implicit block around a whole function body.
    Function,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockType {
    Empty,
    Value(ValueType),
    /// A type-section index; for [`ControlKind::Function`], the function's type.
    Func(u32),
}

fn single(t: ValueType) -> &'static [ValueType] {
    match t {
        ValueType::I32 => &[ValueType::I32],
        ValueType::I64 => &[ValueType::I64],
        ValueType::F32 => &[ValueType::F32],
        ValueType::F64 => &[ValueType::F64],
        ValueType::FuncRef => &[ValueType::FuncRef],
        ValueType::ExternRef => &[ValueType::ExternRef],
    }
}

/// The validator's record of one open control construct.
#[derive(Debug, Clone)]
pub struct ControlEntry {
    pub kind: ControlKind,
    pub block_type: BlockType,
    /// Operand height beneath the construct's parameters. Adding the
    /// parameter count gives the height at entry.
    pub height: u32,
    /// Offset of the opening opcode.
    pub start_ip: usize,
    /// Sidetable length when the construct was entered.
    pub start_stp: u32,
    /// Forward branches waiting for this construct's `end`.
    pub fixups: FixupChain,
    /// Entry for the condition-false path of an `if`, until resolved.
    pub if_entry: Option<u32>,
    pub unreachable: bool,
}

impl ControlEntry {
    pub fn params<'t>(&self, types: &'t [FuncType]) -> &'t [ValueType] {
        match (self.kind, self.block_type) {
            (ControlKind::Function, _) | (_, BlockType::Empty | BlockType::Value(_)) => &[],
            (_, BlockType::Func(i)) => &types[i as usize].params,
        }
    }

    pub fn results<'t>(&self, types: &'t [FuncType]) -> &'t [ValueType] {
        match self.block_type {
            BlockType::Empty => &[],
            BlockType::Value(t) => single(t),
            BlockType::Func(i) => &types[i as usize].results,
        }
    }

    /// Types a branch to this construct carries: parameters for a loop
    /// (which is re-entered at its start), results otherwise.
    pub fn label_types<'t>(&self, types: &'t [FuncType]) -> &'t [ValueType] {
        if self.kind == ControlKind::Loop {
            self.params(types)
        } else {
            self.results(types)
        }
    }

    pub fn height_at_entry(&self, types: &[FuncType]) -> u32 {
        self.height + self.params(types).len() as u32
    }
}

/// Number of values a branch to `ctl` transfers.
pub fn branch_target_arity(ctl: &ControlEntry, types: &[FuncType]) -> u32 {
    ctl.label_types(types).len() as u32
}

type Abstract = Option<ValueType>;

fn type_name(t: Abstract) -> String {
    t.map_or_else(|| "unknown".to_string(), |t| t.to_string())
}

pub(crate) struct FuncValidator<'e, 'm> {
    env: &'e ModuleEnv<'m>,
    types: &'m [FuncType],
    r: Reader<'m>,
    locals: Vec<ValueType>,
    vals: Vec<Abstract>,
    ctrls: Vec<ControlEntry>,
    table: SidetableBuilder,
    emit: bool,
    max_height: usize,
    instructions: u32,
    boundaries: Option<Boundaries>,
    op_ip: usize,
}

impl<'e, 'm> FuncValidator<'e, 'm> {
    pub(crate) fn run(
        env: &'e ModuleEnv<'m>,
        func_index: u32,
        opts: ValidateOptions,
    ) -> Result<ValidatedFunction, ValidationError> {
        let module = env.module;
        let decl = module.defined_function(func_index).ok_or(ValidationError {
            offset: 0,
            kind: ValidationErrorKind::InvalidIndex { what: "function", index: func_index },
        })?;
        let types = &module.types[..];
        let ft = &types[decl.type_index as usize];
        let body = &decl.body;
        let locals = decode_locals(body, ft)?;
        let mut v = FuncValidator {
            env,
            types,
            r: Reader::at(module.bytes(), body.code_start, body.code_end),
            locals,
            vals: Vec::new(),
            ctrls: Vec::new(),
            table: SidetableBuilder::default(),
            emit: opts.sidetable,
            max_height: 0,
            instructions: 0,
            boundaries: opts.boundaries.then(|| Boundaries::new(body.code_start, body.code_end - body.code_start)),
            op_ip: body.code_start,
        };
        v.ctrls.push(ControlEntry {
            kind: ControlKind::Function,
            block_type: BlockType::Func(decl.type_index),
            height: 0,
            start_ip: body.code_start,
            start_stp: 0,
            fixups: FixupChain::default(),
            if_entry: None,
            unreachable: false,
        });
        while !v.ctrls.is_empty() {
            if v.r.is_empty() {
                return Err(ValidationError { offset: v.r.pos(), kind: ValidationErrorKind::Unbalanced });
            }
            v.step()?;
        }
        if !v.r.is_empty() {
            return Err(ValidationError { offset: v.r.pos(), kind: ValidationErrorKind::TrailingCode });
        }
        Ok(ValidatedFunction {
            func_index,
            sidetable: v.table.finish(),
            max_stack_height: (v.locals.len() + v.max_height) as u32,
            num_params: ft.params.len() as u32,
            num_results: ft.results.len() as u32,
            local_types: v.locals.into(),
            instructions: v.instructions,
            boundaries: v.boundaries,
        })
    }

    fn error(&self, kind: ValidationErrorKind) -> ValidationError {
        ValidationError { offset: self.op_ip, kind }
    }

    fn mismatch(&self, expected: Abstract, found: Abstract) -> ValidationError {
        self.error(ValidationErrorKind::TypeMismatch { expected: type_name(expected), found: type_name(found) })
    }

    #[inline]
    fn push(&mut self, t: Abstract) {
        self.vals.push(t);
        if self.vals.len() > self.max_height {
            self.max_height = self.vals.len();
        }
    }

    fn push_vals(&mut self, ts: &[ValueType]) {
        for &t in ts {
            self.push(Some(t));
        }
    }

    fn pop_val(&mut self) -> Result<Abstract, ValidationError> {
        let ctl = self.ctrls.last().expect("control stack non-empty");
        if self.vals.len() == ctl.height as usize {
            if ctl.unreachable {
                return Ok(None);
            }
            return Err(self.error(ValidationErrorKind::StackUnderflow));
        }
        Ok(self.vals.pop().expect("above frame height"))
    }

    fn pop_expect(&mut self, expect: ValueType) -> Result<Abstract, ValidationError> {
        let actual = self.pop_val()?;
        match actual {
            Some(a) if a != expect => Err(self.mismatch(Some(expect), actual)),
            _ => Ok(actual),
        }
    }

    fn pop_vals(&mut self, ts: &[ValueType]) -> Result<(), ValidationError> {
        for &t in ts.iter().rev() {
            self.pop_expect(t)?;
        }
        Ok(())
    }

    fn push_ctrl(&mut self, kind: ControlKind, block_type: BlockType) -> Result<(), ValidationError> {
        if self.ctrls.len() >= limits::MAX_NESTING {
            return Err(self.error(ValidationErrorKind::NestingTooDeep));
        }
        let entry = ControlEntry {
            kind,
            block_type,
            height: self.vals.len() as u32,
            start_ip: self.op_ip,
            start_stp: self.table.len(),
            fixups: FixupChain::default(),
            if_entry: None,
            unreachable: false,
        };
        let params = entry.params(self.types);
        self.ctrls.push(entry);
        self.push_vals(params);
        Ok(())
    }

    fn pop_ctrl(&mut self) -> Result<ControlEntry, ValidationError> {
        let ctl = self.ctrls.last().expect("control stack non-empty");
        let results = ctl.results(self.types);
        let height = ctl.height as usize;
        self.pop_vals(results)?;
        if self.vals.len() != height {
            let extra = self.vals.last().copied().flatten();
            return Err(self.mismatch(None, extra));
        }
        Ok(self.ctrls.pop().expect("control stack non-empty"))
    }

    fn set_unreachable(&mut self) {
        let ctl = self.ctrls.last_mut().expect("control stack non-empty");
        self.vals.truncate(ctl.height as usize);
        ctl.unreachable = true;
    }

    fn label(&self, depth: u32) -> Result<usize, ValidationError> {
        let n = self.ctrls.len();
        if depth as usize >= n {
            return Err(self.error(ValidationErrorKind::UnboundLabel(depth)));
        }
        Ok(n - 1 - depth as usize)
    }

    /// Appends the entry for a branch to relative `depth`, taken at operand
    /// height `height` (after the branch's own operands are popped).
    fn emit_branch_entry(&mut self, depth: u32, height: usize) -> Result<(), ValidationError> {
        let target_i = self.label(depth)?;
        if !self.emit {
            return Ok(());
        }
        let target = &self.ctrls[target_i];
        let valcnt = branch_target_arity(target, self.types);
        let dead = self.ctrls.last().is_some_and(|c| c.unreachable);
        let popcnt = if dead { 0 } else { (height as u32).saturating_sub(target.height + valcnt) };
        if target.kind == ControlKind::Loop {
            let idx = self.table.len();
            let entry = SidetableEntry {
                delta_ip: (target.start_ip as i64 - self.op_ip as i64) as i32,
                delta_stp: (i64::from(target.start_stp) - i64::from(idx)) as i32,
                valcnt,
                popcnt,
            };
            self.table.push(self.op_ip, entry);
        } else {
            let chain = &mut self.ctrls[target_i].fixups;
            self.table.push_pending(self.op_ip, valcnt, popcnt, chain);
        }
        Ok(())
    }

    fn block_type(&mut self) -> Result<BlockType, ValidationError> {
        let b = self.r.peek_u8()?;
        if b == 0x40 {
            self.r.read_u8()?;
            return Ok(BlockType::Empty);
        }
        if let Some(t) = ValueType::from_byte(b) {
            self.r.read_u8()?;
            return Ok(BlockType::Value(t));
        }
        let idx = self.r.read_var_s33()?;
        if idx < 0 || idx as usize >= self.types.len() {
            return Err(self.error(ValidationErrorKind::InvalidIndex { what: "type", index: idx as u32 }));
        }
        Ok(BlockType::Func(idx as u32))
    }

    fn value_type(&mut self) -> Result<ValueType, ValidationError> {
        let b = self.r.read_u8()?;
        ValueType::from_byte(b).ok_or_else(|| ValidationError {
            offset: self.r.pos() - 1,
            kind: ValidationErrorKind::Malformed(crate::binary::DecodeErrorKind::BadValueType(b)),
        })
    }

    fn memarg(&mut self, natural_log2: u32) -> Result<(), ValidationError> {
        let align = self.r.read_var_u32()?;
        self.r.read_var_u32()?;
        self.need_memory()?;
        if align > natural_log2 {
            return Err(self.error(ValidationErrorKind::BadAlignment));
        }
        Ok(())
    }

    fn need_memory(&self) -> Result<(), ValidationError> {
        if self.env.module.memory_limits().is_empty() {
            return Err(self.error(ValidationErrorKind::InvalidIndex { what: "memory", index: 0 }));
        }
        Ok(())
    }

    fn memory_index(&mut self) -> Result<(), ValidationError> {
        let m = self.r.read_var_u32()?;
        if m != 0 || self.env.module.memory_limits().is_empty() {
            return Err(self.error(ValidationErrorKind::InvalidIndex { what: "memory", index: m }));
        }
        Ok(())
    }

    fn table_elem(&mut self) -> Result<ValueType, ValidationError> {
        let t = self.r.read_var_u32()?;
        self.env
            .module
            .table_types()
            .get(t as usize)
            .map(|tt| tt.elem)
            .ok_or_else(|| self.error(ValidationErrorKind::InvalidIndex { what: "table", index: t }))
    }

    fn data_index(&mut self) -> Result<(), ValidationError> {
        let d = self.r.read_var_u32()?;
        let Some(count) = self.env.module.data_count else {
            return Err(self.error(ValidationErrorKind::MissingDataCount));
        };
        if d >= count {
            return Err(self.error(ValidationErrorKind::InvalidIndex { what: "data segment", index: d }));
        }
        Ok(())
    }

    fn elem_index(&mut self) -> Result<ValueType, ValidationError> {
        let e = self.r.read_var_u32()?;
        self.env
            .module
            .elements
            .get(e as usize)
            .map(|s| s.elem_type)
            .ok_or_else(|| self.error(ValidationErrorKind::InvalidIndex { what: "element segment", index: e }))
    }

    fn unop(&mut self, input: ValueType, output: ValueType) -> Result<(), ValidationError> {
        self.pop_expect(input)?;
        self.push(Some(output));
        Ok(())
    }

    fn binop(&mut self, input: ValueType, output: ValueType) -> Result<(), ValidationError> {
        self.pop_expect(input)?;
        self.pop_expect(input)?;
        self.push(Some(output));
        Ok(())
    }

    fn load(&mut self, natural_log2: u32, t: ValueType) -> Result<(), ValidationError> {
        self.memarg(natural_log2)?;
        self.unop(ValueType::I32, t)
    }

    fn store(&mut self, natural_log2: u32, t: ValueType) -> Result<(), ValidationError> {
        self.memarg(natural_log2)?;
        self.pop_expect(t)?;
        self.pop_expect(ValueType::I32)?;
        Ok(())
    }

    fn step(&mut self) -> Result<(), ValidationError> {
        use ValueType::{ExternRef, FuncRef, F32, F64, I32, I64};
        self.op_ip = self.r.pos();
        if let Some(b) = &mut self.boundaries {
            b.insert(self.op_ip);
        }
        self.instructions += 1;
        let opcode = self.r.read_u8()?;
        match opcode {
            op::UNREACHABLE => self.set_unreachable(),
            op::NOP => {}
            op::BLOCK | op::LOOP => {
                let bt = self.block_type()?;
                let kind = if opcode == op::BLOCK { ControlKind::Block } else { ControlKind::Loop };
                let probe = ControlEntry {
                    kind,
                    block_type: bt,
                    height: 0,
                    start_ip: 0,
                    start_stp: 0,
                    fixups: FixupChain::default(),
                    if_entry: None,
                    unreachable: false,
                };
                self.pop_vals(probe.params(self.types))?;
                self.push_ctrl(kind, bt)?;
            }
            op::IF => {
                let bt = self.block_type()?;
                self.pop_expect(I32)?;
                if let BlockType::Func(i) = bt {
                    self.pop_vals(&self.types[i as usize].params)?;
                }
                self.push_ctrl(ControlKind::If, bt)?;
                if self.emit {
                    let idx = self.table.push(self.op_ip, SidetableEntry::default());
                    self.ctrls.last_mut().expect("just pushed").if_entry = Some(idx);
                }
            }
            op::ELSE => {
                if self.ctrls.last().map(|c| c.kind) != Some(ControlKind::If) {
                    return Err(self.error(ValidationErrorKind::ElseWithoutIf));
                }
                let mut ctl = self.pop_ctrl()?;
                if self.emit {
                    // The then-arm falls into `else`, which jumps to the `end`.
                    let valcnt = ctl.results(self.types).len() as u32;
                    self.table.push_pending(self.op_ip, valcnt, 0, &mut ctl.fixups);
                    let if_entry = ctl.if_entry.take().expect("if entry emitted");
                    let stp = self.table.len();
                    self.table.resolve(if_entry, self.op_ip + 1, stp);
                }
                let params = ctl.params(self.types);
                ctl.kind = ControlKind::Else;
                ctl.unreachable = false;
                self.ctrls.push(ctl);
                self.push_vals(params);
            }
            op::END => {
                let mut ctl = self.pop_ctrl()?;
                if ctl.kind == ControlKind::If && ctl.params(self.types) != ctl.results(self.types) {
                    let expected = ctl.results(self.types).first().copied();
                    return Err(self.mismatch(expected, None));
                }
                if self.emit {
                    if let Some(if_entry) = ctl.if_entry.take() {
                        let stp = self.table.len();
                        self.table.resolve(if_entry, self.op_ip, stp);
                    }
                    self.table.resolve_chain(&mut ctl.fixups, self.op_ip);
                }
                self.push_vals(ctl.results(self.types));
            }
            op::BR => {
                let depth = self.r.read_var_u32()?;
                let height = self.vals.len();
                self.emit_branch_entry(depth, height)?;
                let lt = self.ctrls[self.label(depth)?].label_types(self.types);
                self.pop_vals(lt)?;
                self.set_unreachable();
            }
            op::BR_IF => {
                let depth = self.r.read_var_u32()?;
                self.pop_expect(I32)?;
                let height = self.vals.len();
                self.emit_branch_entry(depth, height)?;
                let lt = self.ctrls[self.label(depth)?].label_types(self.types);
                self.pop_vals(lt)?;
                self.push_vals(lt);
            }
            op::BR_TABLE => {
                let n = self.r.read_var_u32()?;
                if n > limits::MAX_BR_TABLE_TARGETS {
                    return Err(self.error(ValidationErrorKind::Malformed(
                        crate::binary::DecodeErrorKind::LimitExceeded("br_table targets"),
                    )));
                }
                let mut targets = Vec::with_capacity(n as usize);
                for _ in 0..n {
                    targets.push(self.r.read_var_u32()?);
                }
                let default = self.r.read_var_u32()?;
                self.pop_expect(I32)?;
                let height = self.vals.len();
                let default_types = self.ctrls[self.label(default)?].label_types(self.types);
                for &t in &targets {
                    let lt = self.ctrls[self.label(t)?].label_types(self.types);
                    if lt.len() != default_types.len() {
                        return Err(self.error(ValidationErrorKind::BrTableArity));
                    }
                }
                if self.emit {
                    self.table.push(self.op_ip, SidetableEntry { valcnt: n, ..Default::default() });
                }
                for &t in &targets {
                    self.emit_branch_entry(t, height)?;
                }
                self.emit_branch_entry(default, height)?;
                for &t in &targets {
                    let lt = self.ctrls[self.label(t)?].label_types(self.types);
                    let mut popped = Vec::with_capacity(lt.len());
                    for &ty in lt.iter().rev() {
                        popped.push(self.pop_expect(ty)?);
                    }
                    for ty in popped.into_iter().rev() {
                        self.push(ty);
                    }
                }
                self.pop_vals(default_types)?;
                self.set_unreachable();
            }
            op::RETURN => {
                let results = self.ctrls[0].results(self.types);
                self.pop_vals(results)?;
                self.set_unreachable();
            }
            op::CALL => {
                let f = self.r.read_var_u32()?;
                let ft = self
                    .env
                    .module
                    .func_type(f)
                    .ok_or_else(|| self.error(ValidationErrorKind::InvalidIndex { what: "function", index: f }))?;
                self.pop_vals(&ft.params)?;
                self.push_vals(&ft.results);
            }
            op::CALL_INDIRECT => {
                let ti = self.r.read_var_u32()?;
                let elem = self.table_elem()?;
                if elem != FuncRef {
                    return Err(self.mismatch(Some(FuncRef), Some(elem)));
                }
                let ft = self
                    .types
                    .get(ti as usize)
                    .ok_or_else(|| self.error(ValidationErrorKind::InvalidIndex { what: "type", index: ti }))?;
                self.pop_expect(I32)?;
                self.pop_vals(&ft.params)?;
                self.push_vals(&ft.results);
            }
            op::DROP => {
                self.pop_val()?;
            }
            op::SELECT => {
                self.pop_expect(I32)?;
                let t1 = self.pop_val()?;
                let t2 = self.pop_val()?;
                if t1.is_some_and(ValueType::is_ref) || t2.is_some_and(ValueType::is_ref) {
                    return Err(self.error(ValidationErrorKind::InvalidSelect));
                }
                if let (Some(a), Some(b)) = (t1, t2) {
                    if a != b {
                        return Err(self.mismatch(t1, t2));
                    }
                }
                self.push(t1.or(t2));
            }
            op::SELECT_T => {
                let n = self.r.read_var_u32()?;
                if n != 1 {
                    return Err(self.error(ValidationErrorKind::InvalidSelect));
                }
                let t = self.value_type()?;
                self.pop_expect(I32)?;
                self.pop_expect(t)?;
                self.pop_expect(t)?;
                self.push(Some(t));
            }
            op::LOCAL_GET | op::LOCAL_SET | op::LOCAL_TEE => {
                let i = self.r.read_var_u32()?;
                let t = *self
                    .locals
                    .get(i as usize)
                    .ok_or_else(|| self.error(ValidationErrorKind::InvalidIndex { what: "local", index: i }))?;
                match opcode {
                    op::LOCAL_GET => self.push(Some(t)),
                    op::LOCAL_SET => {
                        self.pop_expect(t)?;
                    }
                    _ => {
                        self.pop_expect(t)?;
                        self.push(Some(t));
                    }
                }
            }
            op::GLOBAL_GET | op::GLOBAL_SET => {
                let g = self.r.read_var_u32()?;
                let gt = *self
                    .env
                    .module
                    .global_types()
                    .get(g as usize)
                    .ok_or_else(|| self.error(ValidationErrorKind::InvalidIndex { what: "global", index: g }))?;
                if opcode == op::GLOBAL_GET {
                    self.push(Some(gt.content));
                } else {
                    if !gt.mutable {
                        return Err(self.error(ValidationErrorKind::ImmutableGlobal(g)));
                    }
                    self.pop_expect(gt.content)?;
                }
            }
            op::TABLE_GET => {
                let t = self.table_elem()?;
                self.unop(I32, t)?;
            }
            op::TABLE_SET => {
                let t = self.table_elem()?;
                self.pop_expect(t)?;
                self.pop_expect(I32)?;
            }
            op::I32_LOAD => self.load(2, I32)?,
            op::I64_LOAD => self.load(3, I64)?,
            op::F32_LOAD => self.load(2, F32)?,
            op::F64_LOAD => self.load(3, F64)?,
            op::I32_LOAD8_S | op::I32_LOAD8_U => self.load(0, I32)?,
            op::I32_LOAD16_S | op::I32_LOAD16_U => self.load(1, I32)?,
            op::I64_LOAD8_S | op::I64_LOAD8_U => self.load(0, I64)?,
            op::I64_LOAD16_S | op::I64_LOAD16_U => self.load(1, I64)?,
            op::I64_LOAD32_S | op::I64_LOAD32_U => self.load(2, I64)?,
            op::I32_STORE => self.store(2, I32)?,
            op::I64_STORE => self.store(3, I64)?,
            op::F32_STORE => self.store(2, F32)?,
            op::F64_STORE => self.store(3, F64)?,
            op::I32_STORE8 => self.store(0, I32)?,
            op::I32_STORE16 => self.store(1, I32)?,
            op::I64_STORE8 => self.store(0, I64)?,
            op::I64_STORE16 => self.store(1, I64)?,
            op::I64_STORE32 => self.store(2, I64)?,
            op::MEMORY_SIZE => {
                self.memory_index()?;
                self.push(Some(I32));
            }
            op::MEMORY_GROW => {
                self.memory_index()?;
                self.unop(I32, I32)?;
            }
            op::I32_CONST => {
                self.r.read_var_i32()?;
                self.push(Some(I32));
            }
            op::I64_CONST => {
                self.r.read_var_i64()?;
                self.push(Some(I64));
            }
            op::F32_CONST => {
                self.r.read_f32_bits()?;
                self.push(Some(F32));
            }
            op::F64_CONST => {
                self.r.read_f64_bits()?;
                self.push(Some(F64));
            }
            op::I32_EQZ => self.unop(I32, I32)?,
            op::I32_EQ..=op::I32_GE_U => self.binop(I32, I32)?,
            op::I64_EQZ => self.unop(I64, I32)?,
            op::I64_EQ..=op::I64_GE_U => self.binop(I64, I32)?,
            op::F32_EQ..=op::F32_GE => self.binop(F32, I32)?,
            op::F64_EQ..=op::F64_GE => self.binop(F64, I32)?,
            op::I32_CLZ..=op::I32_POPCNT => self.unop(I32, I32)?,
            op::I32_ADD..=op::I32_ROTR => self.binop(I32, I32)?,
            op::I64_CLZ..=op::I64_POPCNT => self.unop(I64, I64)?,
            op::I64_ADD..=op::I64_ROTR => self.binop(I64, I64)?,
            op::F32_ABS..=op::F32_SQRT => self.unop(F32, F32)?,
            op::F32_ADD..=op::F32_COPYSIGN => self.binop(F32, F32)?,
            op::F64_ABS..=op::F64_SQRT => self.unop(F64, F64)?,
            op::F64_ADD..=op::F64_COPYSIGN => self.binop(F64, F64)?,
            op::I32_WRAP_I64 => self.unop(I64, I32)?,
            op::I32_TRUNC_F32_S | op::I32_TRUNC_F32_U => self.unop(F32, I32)?,
            op::I32_TRUNC_F64_S | op::I32_TRUNC_F64_U => self.unop(F64, I32)?,
            op::I64_EXTEND_I32_S | op::I64_EXTEND_I32_U => self.unop(I32, I64)?,
            op::I64_TRUNC_F32_S | op::I64_TRUNC_F32_U => self.unop(F32, I64)?,
            op::I64_TRUNC_F64_S | op::I64_TRUNC_F64_U => self.unop(F64, I64)?,
            op::F32_CONVERT_I32_S | op::F32_CONVERT_I32_U => self.unop(I32, F32)?,
            op::F32_CONVERT_I64_S | op::F32_CONVERT_I64_U => self.unop(I64, F32)?,
            op::F32_DEMOTE_F64 => self.unop(F64, F32)?,
            op::F64_CONVERT_I32_S | op::F64_CONVERT_I32_U => self.unop(I32, F64)?,
            op::F64_CONVERT_I64_S | op::F64_CONVERT_I64_U => self.unop(I64, F64)?,
            op::F64_PROMOTE_F32 => self.unop(F32, F64)?,
            op::I32_REINTERPRET_F32 => self.unop(F32, I32)?,
            op::I64_REINTERPRET_F64 => self.unop(F64, I64)?,
            op::F32_REINTERPRET_I32 => self.unop(I32, F32)?,
            op::F64_REINTERPRET_I64 => self.unop(I64, F64)?,
            op::I32_EXTEND8_S | op::I32_EXTEND16_S => self.unop(I32, I32)?,
            op::I64_EXTEND8_S..=op::I64_EXTEND32_S => self.unop(I64, I64)?,
            op::REF_NULL => {
                let pos = self.r.pos();
                let t = self.value_type()?;
                if !t.is_ref() {
                    return Err(ValidationError {
                        offset: pos,
                        kind: ValidationErrorKind::Malformed(crate::binary::DecodeErrorKind::Malformed("reference type")),
                    });
                }
                self.push(Some(t));
            }
            op::REF_IS_NULL => {
                let t = self.pop_val()?;
                if t.is_some_and(ValueType::is_num) {
                    return Err(self.mismatch(Some(FuncRef), t));
                }
                self.push(Some(I32));
            }
            op::REF_FUNC => {
                let f = self.r.read_var_u32()?;
                if f >= self.env.module.num_funcs() {
                    return Err(self.error(ValidationErrorKind::InvalidIndex { what: "function", index: f }));
                }
                if !self.env.is_declared_ref(f) {
                    return Err(self.error(ValidationErrorKind::UndeclaredFuncRef(f)));
                }
                self.push(Some(FuncRef));
            }
            op::PREFIX_FC => self.prefixed_fc()?,
            op::PREFIX_FD => {
                let sub = self.r.read_var_u32()?;
                return Err(self.error(ValidationErrorKind::Unimplemented(op::PREFIX_FD, sub)));
            }
            other => return Err(self.error(ValidationErrorKind::UnknownOpcode(other))),
        }
        let _ = ExternRef;
        Ok(())
    }

    fn prefixed_fc(&mut self) -> Result<(), ValidationError> {
        use crate::binary::opcode::fc;
        use ValueType::{F32, F64, I32, I64};
        let sub = self.r.read_var_u32()?;
        match sub {
            fc::I32_TRUNC_SAT_F32_S | fc::I32_TRUNC_SAT_F32_U => self.unop(F32, I32)?,
            fc::I32_TRUNC_SAT_F64_S | fc::I32_TRUNC_SAT_F64_U => self.unop(F64, I32)?,
            fc::I64_TRUNC_SAT_F32_S | fc::I64_TRUNC_SAT_F32_U => self.unop(F32, I64)?,
            fc::I64_TRUNC_SAT_F64_S | fc::I64_TRUNC_SAT_F64_U => self.unop(F64, I64)?,
            fc::MEMORY_INIT => {
                self.data_index()?;
                self.memory_index()?;
                self.pop_vals(&[I32, I32, I32])?;
            }
            fc::DATA_DROP => self.data_index()?,
            fc::MEMORY_COPY => {
                self.memory_index()?;
                self.memory_index()?;
                self.pop_vals(&[I32, I32, I32])?;
            }
            fc::MEMORY_FILL => {
                self.memory_index()?;
                self.pop_vals(&[I32, I32, I32])?;
            }
            fc::TABLE_INIT => {
                let et = self.elem_index()?;
                let tt = self.table_elem()?;
                if et != tt {
                    return Err(self.mismatch(Some(tt), Some(et)));
                }
                self.pop_vals(&[I32, I32, I32])?;
            }
            fc::ELEM_DROP => {
                self.elem_index()?;
            }
            fc::TABLE_COPY => {
                let dst = self.table_elem()?;
                let src = self.table_elem()?;
                if dst != src {
                    return Err(self.mismatch(Some(dst), Some(src)));
                }
                self.pop_vals(&[I32, I32, I32])?;
            }
            fc::TABLE_GROW => {
                let t = self.table_elem()?;
                self.pop_expect(I32)?;
                self.pop_expect(t)?;
                self.push(Some(I32));
            }
            fc::TABLE_SIZE => {
                self.table_elem()?;
                self.push(Some(I32));
            }
            fc::TABLE_FILL => {
                let t = self.table_elem()?;
                self.pop_expect(I32)?;
                self.pop_expect(t)?;
                self.pop_expect(I32)?;
            }
            other => return Err(self.error(ValidationErrorKind::UnknownPrefixed(op::PREFIX_FC, other))),
        }
        Ok(())
    }
}
