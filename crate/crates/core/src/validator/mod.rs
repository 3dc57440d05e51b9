//! Single-pass validation with sidetable emission.
//!
//! The validator is an abstract interpreter over a control stack and a
//! value stack of types. As it walks a body it records, for every branch
//! origin, where control lands and how the value stack must be adjusted; the
//! resulting [`Sidetable`] is all the interpreter needs to execute the
//! original bytecode without any further decoding of control structure.

mod func;
pub mod sidetable;

use std::collections::HashSet;

use thiserror::Error;

use crate::binary::{
    ConstExpr, DataMode, DecodeError, DecodeErrorKind, ElementMode, ExternKind, FuncType, Limits, Module, ValueType,
};
use crate::limits;

pub use func::{branch_target_arity, BlockType, ControlEntry, ControlKind};
pub use sidetable::{Sidetable, SidetableEntry};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("validation error at offset {offset}: {kind}")]
pub struct ValidationError {
    pub offset: usize,
    pub kind: ValidationErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationErrorKind {
    #[error("type mismatch: expected {expected}, found {found}")]
    TypeMismatch { expected: String, found: String },
    #[error("operand stack underflow")]
    StackUnderflow,
    #[error("branch depth {0} exceeds control stack")]
    UnboundLabel(u32),
    #[error("unbalanced control constructs")]
    Unbalanced,
    #[error("`else` without matching `if`")]
    ElseWithoutIf,
    #[error("unknown opcode 0x{0:02x}")]
    UnknownOpcode(u8),
    #[error("unknown opcode 0x{0:02x} 0x{1:x}")]
    UnknownPrefixed(u8, u32),
    #[error("unimplemented opcode 0x{0:02x} 0x{1:x}")]
    Unimplemented(u8, u32),
    #[error("too many locals ({0})")]
    TooManyLocals(u64),
    #[error("control nesting too deep")]
    NestingTooDeep,
    #[error("{what} index {index} out of range")]
    InvalidIndex { what: &'static str, index: u32 },
    #[error("global {0} is immutable")]
    ImmutableGlobal(u32),
    #[error("alignment must not exceed natural alignment")]
    BadAlignment,
    #[error("br_table targets have different arities")]
    BrTableArity,
    #[error("instructions after final `end`")]
    TrailingCode,
    #[error("malformed body: {0}")]
    Malformed(DecodeErrorKind),
    #[error("invalid constant expression")]
    ConstExpr,
    #[error("duplicate export name {0:?}")]
    DuplicateExport(String),
    #[error("start function must have type [] -> []")]
    BadStart,
    #[error("invalid limits")]
    BadLimits,
    #[error("multiple memories")]
    MultipleMemories,
    #[error("function {0} is not declared for reference")]
    UndeclaredFuncRef(u32),
    #[error("data count section required")]
    MissingDataCount,
    #[error("select operands must be numeric")]
    InvalidSelect,
}

impl From<DecodeError> for ValidationError {
    fn from(e: DecodeError) -> Self {
        ValidationError { offset: e.offset, kind: ValidationErrorKind::Malformed(e.kind) }
    }
}

/// What [`validate_function_with`] records besides typing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidateOptions {
    /// Emit sidetable entries. Off only to measure the cost of emitting them.
    pub sidetable: bool,
    /// Record the set of instruction start offsets.
    pub boundaries: bool,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { sidetable: true, boundaries: false }
    }
}

/// Bitset over a function's code bytes, one bit per instruction start.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boundaries {
    code_start: usize,
    bits: Box<[u64]>,
}

impl Boundaries {
    pub(crate) fn new(code_start: usize, code_len: usize) -> Self {
        Self { code_start, bits: vec![0; code_len.div_ceil(64)].into() }
    }

    pub(crate) fn insert(&mut self, ip: usize) {
        let i = ip - self.code_start;
        self.bits[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, ip: usize) -> bool {
        let Some(i) = ip.checked_sub(self.code_start) else {
            return false;
        };
        self.bits.get(i / 64).is_some_and(|w| w & (1 << (i % 64)) != 0)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// Everything the interpreter needs to run a function in place.
#[derive(Debug, Clone)]
pub struct ValidatedFunction {
    pub func_index: u32,
    pub sidetable: Sidetable,
    /// Slots the frame may occupy: locals plus the peak operand height.
    pub max_stack_height: u32,
    /// Parameters followed by declared locals.
    pub local_types: Box<[ValueType]>,
    pub num_params: u32,
    pub num_results: u32,
    /// Instructions decoded during validation.
    pub instructions: u32,
    pub boundaries: Option<Boundaries>,
}

impl ValidatedFunction {
    pub fn num_locals(&self) -> u32 {
        self.local_types.len() as u32
    }
}

/// Module-level facts the function validator consults.
pub struct ModuleEnv<'m> {
    pub module: &'m Module,
    declared_refs: HashSet<u32>,
}

impl<'m> ModuleEnv<'m> {
    pub fn new(module: &'m Module) -> Self {
        let mut declared_refs = HashSet::new();
        let mut note = |e: &ConstExpr| {
            if let ConstExpr::RefFunc(f) = e {
                declared_refs.insert(*f);
            }
        };
        for g in &module.globals {
            note(&g.init);
        }
        for seg in &module.elements {
            seg.items.iter().for_each(&mut note);
        }
        for e in &module.exports {
            if e.kind == ExternKind::Func {
                declared_refs.insert(e.index);
            }
        }
        Self { module, declared_refs }
    }

    pub(crate) fn is_declared_ref(&self, f: u32) -> bool {
        self.declared_refs.contains(&f)
    }
}

/// Validates one function and emits its sidetable.
pub fn validate_function(module: &Module, func_index: u32) -> Result<ValidatedFunction, ValidationError> {
    validate_function_with(&ModuleEnv::new(module), func_index, ValidateOptions::default())
}

pub fn validate_function_with(
    env: &ModuleEnv<'_>,
    func_index: u32,
    opts: ValidateOptions,
) -> Result<ValidatedFunction, ValidationError> {
    func::FuncValidator::run(env, func_index, opts)
}

/// A module whose every function has been validated.
#[derive(Debug, Clone)]
pub struct CompiledModule {
    pub module: Module,
    /// One entry per defined function, in definition order.
    pub functions: Vec<ValidatedFunction>,
}

impl CompiledModule {
    /// The validated form of function `func`, `None` for imports.
    pub fn function(&self, func: u32) -> Option<&ValidatedFunction> {
        func.checked_sub(self.module.num_imported_funcs()).and_then(|i| self.functions.get(i as usize))
    }
}

/// Validates module-level declarations and every function body.
pub fn validate_module(module: Module) -> Result<CompiledModule, ValidationError> {
    validate_module_with(module, ValidateOptions::default())
}

pub fn validate_module_with(module: Module, opts: ValidateOptions) -> Result<CompiledModule, ValidationError> {
    validate_declarations(&module)?;
    let env = ModuleEnv::new(&module);
    let first = module.num_imported_funcs();
    let functions = (0..module.functions.len() as u32)
        .map(|i| validate_function_with(&env, first + i, opts))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CompiledModule { module, functions })
}

fn err<T>(kind: ValidationErrorKind) -> Result<T, ValidationError> {
    Err(ValidationError { offset: 0, kind })
}

fn check_limits(l: &Limits, bound: u32) -> Result<(), ValidationError> {
    if l.min > bound || l.max.is_some_and(|max| max > bound || max < l.min) {
        return err(ValidationErrorKind::BadLimits);
    }
    Ok(())
}

/// Type of a constant expression, restricted to constants and `global.get` of
/// immutable imported globals.
pub fn const_expr_type(module: &Module, expr: &ConstExpr) -> Result<ValueType, ValidationError> {
    Ok(match *expr {
        ConstExpr::I32(_) => ValueType::I32,
        ConstExpr::I64(_) => ValueType::I64,
        ConstExpr::F32(_) => ValueType::F32,
        ConstExpr::F64(_) => ValueType::F64,
        ConstExpr::RefNull(t) => t,
        ConstExpr::RefFunc(f) => {
            if f >= module.num_funcs() {
                return err(ValidationErrorKind::InvalidIndex { what: "function", index: f });
            }
            ValueType::FuncRef
        }
        ConstExpr::GlobalGet(g) => {
            if g >= module.num_imported_globals() {
                return err(ValidationErrorKind::ConstExpr);
            }
            let gt = module.global_types()[g as usize];
            if gt.mutable {
                return err(ValidationErrorKind::ConstExpr);
            }
            gt.content
        }
    })
}

fn expect_const(module: &Module, expr: &ConstExpr, ty: ValueType) -> Result<(), ValidationError> {
    let found = const_expr_type(module, expr)?;
    if found != ty {
        return err(ValidationErrorKind::TypeMismatch { expected: ty.to_string(), found: found.to_string() });
    }
    Ok(())
}

fn validate_declarations(m: &Module) -> Result<(), ValidationError> {
    if m.memory_limits().len() > 1 {
        return err(ValidationErrorKind::MultipleMemories);
    }
    for l in m.memory_limits() {
        check_limits(l, limits::MAX_PAGES)?;
    }
    for t in m.table_types() {
        check_limits(&t.limits, u32::MAX)?;
    }
    for g in &m.globals {
        expect_const(m, &g.init, g.ty.content)?;
    }
    for seg in &m.elements {
        if let ElementMode::Active { table, offset } = &seg.mode {
            expect_const(m, offset, ValueType::I32)?;
            let tt = m.table_types()[*table as usize];
            if tt.elem != seg.elem_type {
                return err(ValidationErrorKind::TypeMismatch {
                    expected: tt.elem.to_string(),
                    found: seg.elem_type.to_string(),
                });
            }
        }
        for item in &seg.items {
            expect_const(m, item, seg.elem_type)?;
        }
    }
    for seg in &m.data {
        if let DataMode::Active { offset, .. } = &seg.mode {
            expect_const(m, offset, ValueType::I32)?;
        }
    }
    if let Some(s) = m.start {
        let ft = m.func_type(s).expect("start index checked by decoder");
        if *ft != FuncType::default() {
            return err(ValidationErrorKind::BadStart);
        }
    }
    let mut names = HashSet::new();
    for e in &m.exports {
        if !names.insert(e.name.as_str()) {
            return err(ValidationErrorKind::DuplicateExport(e.name.clone()));
        }
    }
    Ok(())
}
