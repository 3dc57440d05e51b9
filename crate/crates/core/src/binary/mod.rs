//! Decoding of the WebAssembly binary format.
//!
//! The decoder checks section structure and index ranges but never looks
//! inside function bodies beyond their local declarations; typing the code
//! is the validator's job. The decoded [`Module`] keeps the whole input
//! buffer so the interpreter can execute function bodies where they lie.

pub mod leb;
pub mod opcode;

use std::ops::Range;
use std::sync::Arc;

use thiserror::Error;

use crate::limits;
use crate::validator::{ValidationError, ValidationErrorKind};

pub use leb::{read_leb_signed, read_leb_unsigned, LebError, Reader};

pub const MAGIC: [u8; 4] = [0x00, 0x61, 0x73, 0x6D];
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at offset {offset}: {kind}")]
pub struct DecodeError {
    pub offset: usize,
    pub kind: DecodeErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeErrorKind {
    #[error("bad magic number")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u32),
    #[error("unexpected end of input")]
    UnexpectedEof,
    #[error("malformed LEB128 integer")]
    MalformedLeb,
    #[error("unknown section id {0}")]
    UnknownSection(u8),
    #[error("section out of order")]
    SectionOrder,
    #[error("section length mismatch")]
    SectionLength,
    #[error("invalid value type 0x{0:02x}")]
    BadValueType(u8),
    #[error("invalid {0}")]
    Malformed(&'static str),
    #[error("{what} index {index} out of range")]
    IndexOutOfRange { what: &'static str, index: u32 },
    #[error("function and code section counts differ")]
    FunctionCountMismatch,
    #[error("function body does not end with `end`")]
    MissingEnd,
    #[error("invalid UTF-8 in name")]
    InvalidUtf8,
    #[error("implementation limit exceeded: {0}")]
    LimitExceeded(&'static str),
    #[error("non-constant instruction 0x{0:02x} in constant expression")]
    NonConstant(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueType {
    I32,
    I64,
    F32,
    F64,
    FuncRef,
    ExternRef,
}

impl ValueType {
    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0x7F => Self::I32,
            0x7E => Self::I64,
            0x7D => Self::F32,
            0x7C => Self::F64,
            0x70 => Self::FuncRef,
            0x6F => Self::ExternRef,
            _ => return None,
        })
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Self::I32 => 0x7F,
            Self::I64 => 0x7E,
            Self::F32 => 0x7D,
            Self::F64 => 0x7C,
            Self::FuncRef => 0x70,
            Self::ExternRef => 0x6F,
        }
    }

    pub fn is_ref(self) -> bool {
        matches!(self, Self::FuncRef | Self::ExternRef)
    }

    pub fn is_num(self) -> bool {
        !self.is_ref()
    }
}

impl std::fmt::Display for ValueType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::I32 => "i32",
            Self::I64 => "i64",
            Self::F32 => "f32",
            Self::F64 => "f64",
            Self::FuncRef => "funcref",
            Self::ExternRef => "externref",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FuncType {
    pub params: Box<[ValueType]>,
    pub results: Box<[ValueType]>,
}

impl FuncType {
    pub fn new(params: impl Into<Box<[ValueType]>>, results: impl Into<Box<[ValueType]>>) -> Self {
        Self { params: params.into(), results: results.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Limits {
    pub min: u32,
    pub max: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableType {
    pub elem: ValueType,
    pub limits: Limits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GlobalType {
    pub content: ValueType,
    pub mutable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImportKind {
    Func(u32),
    Table(TableType),
    Memory(Limits),
    Global(GlobalType),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportDecl {
    pub module: String,
    pub name: String,
    pub kind: ImportKind,
}

/// A single-instruction constant expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstExpr {
    I32(i32),
    I64(i64),
    F32(u32),
    F64(u64),
    RefNull(ValueType),
    RefFunc(u32),
    GlobalGet(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionBody {
    /// Offset of the local declarations (just past the body size).
    pub body_start: usize,
    /// `(count, type)` groups as declared.
    pub locals: Vec<(u32, ValueType)>,
    /// Offset of the first instruction.
    pub code_start: usize,
    /// One past the terminal `end`.
    pub code_end: usize,
}

impl FunctionBody {
    /// Offset of the function's terminal `end` opcode.
    pub fn end_ip(&self) -> usize {
        self.code_end - 1
    }

    /// Encoded size of the body including local declarations.
    pub fn size(&self) -> usize {
        self.code_end - self.body_start
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDecl {
    pub type_index: u32,
    pub body: FunctionBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDecl {
    pub ty: GlobalType,
    pub init: ConstExpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExternKind {
    Func,
    Table,
    Memory,
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Export {
    pub name: String,
    pub kind: ExternKind,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ElementMode {
    Passive,
    Active { table: u32, offset: ConstExpr },
    Declarative,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ElementSegment {
    pub mode: ElementMode,
    pub elem_type: ValueType,
    pub items: Vec<ConstExpr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataMode {
    Passive,
    Active { memory: u32, offset: ConstExpr },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSegment {
    pub mode: DataMode,
    /// Byte range of the payload inside the module bytes.
    pub data: Range<usize>,
}

/// A decoded module. Immutable; function bodies are ranges into [`Module::bytes`].
#[derive(Debug, Clone)]
pub struct Module {
    bytes: Arc<[u8]>,
    pub types: Vec<FuncType>,
    pub imports: Vec<ImportDecl>,
    /// Functions defined by this module, in code-section order.
    pub functions: Vec<FunctionDecl>,
    pub tables: Vec<TableType>,
    pub memories: Vec<Limits>,
    pub globals: Vec<GlobalDecl>,
    pub exports: Vec<Export>,
    pub start: Option<u32>,
    pub elements: Vec<ElementSegment>,
    pub data: Vec<DataSegment>,
    pub data_count: Option<u32>,
    // Index spaces: imports first, then definitions.
    func_space: Vec<u32>,
    table_space: Vec<TableType>,
    memory_space: Vec<Limits>,
    global_space: Vec<GlobalType>,
    imported_funcs: u32,
    imported_globals: u32,
}

impl Module {
    /// The complete, unmodified input bytes.
    pub fn bytes(&self) -> &Arc<[u8]> {
        &self.bytes
    }

    pub fn num_imported_funcs(&self) -> u32 {
        self.imported_funcs
    }

    pub fn num_imported_globals(&self) -> u32 {
        self.imported_globals
    }

    /// Number of functions in the index space (imports plus definitions).
    pub fn num_funcs(&self) -> u32 {
        self.func_space.len() as u32
    }

    pub fn func_type_index(&self, func: u32) -> Option<u32> {
        self.func_space.get(func as usize).copied()
    }

    pub fn func_type(&self, func: u32) -> Option<&FuncType> {
        self.func_type_index(func).and_then(|t| self.types.get(t as usize))
    }

    /// Maps a function index to its definition, `None` for imports.
    pub fn defined_function(&self, func: u32) -> Option<&FunctionDecl> {
        func.checked_sub(self.imported_funcs).and_then(|i| self.functions.get(i as usize))
    }

    pub fn table_types(&self) -> &[TableType] {
        &self.table_space
    }

    pub fn memory_limits(&self) -> &[Limits] {
        &self.memory_space
    }

    pub fn global_types(&self) -> &[GlobalType] {
        &self.global_space
    }

    pub fn export(&self, name: &str) -> Option<&Export> {
        self.exports.iter().find(|e| e.name == name)
    }

    /// Code bytes `[code_start, code_end)` of a defined function.
    pub fn code(&self, body: &FunctionBody) -> &[u8] {
        &self.bytes[body.code_start..body.code_end]
    }
}

/// Expands a body's local declarations into the full local list, parameters first.
pub fn decode_locals(body: &FunctionBody, func_type: &FuncType) -> Result<Vec<ValueType>, ValidationError> {
    let mut total = func_type.params.len() as u64;
    for &(count, _) in &body.locals {
        total += u64::from(count);
    }
    if total > u64::from(limits::MAX_LOCALS) {
        return Err(ValidationError {
            offset: body.body_start,
            kind: ValidationErrorKind::TooManyLocals(total),
        });
    }
    let mut out = Vec::with_capacity(total as usize);
    out.extend_from_slice(&func_type.params);
    for &(count, ty) in &body.locals {
        out.extend(std::iter::repeat_n(ty, count as usize));
    }
    Ok(out)
}

/// Decodes a binary module. Function bodies are located but not validated.
pub fn decode_module(bytes: impl Into<Arc<[u8]>>) -> Result<Module, DecodeError> {
    let bytes: Arc<[u8]> = bytes.into();
    let mut m = Module {
        bytes: bytes.clone(),
        types: Vec::new(),
        imports: Vec::new(),
        functions: Vec::new(),
        tables: Vec::new(),
        memories: Vec::new(),
        globals: Vec::new(),
        exports: Vec::new(),
        start: None,
        elements: Vec::new(),
        data: Vec::new(),
        data_count: None,
        func_space: Vec::new(),
        table_space: Vec::new(),
        memory_space: Vec::new(),
        global_space: Vec::new(),
        imported_funcs: 0,
        imported_globals: 0,
    };
    Decoder { r: Reader::new(&bytes), m: &mut m, declared_funcs: Vec::new() }.run()?;
    Ok(m)
}

fn section_rank(id: u8) -> Option<u8> {
    // Data count sits between element and code.
    Some(match id {
        1..=9 => id,
        12 => 10,
        10 => 11,
        11 => 12,
        _ => return None,
    })
}

struct Decoder<'a, 'm> {
    r: Reader<'a>,
    m: &'m mut Module,
    declared_funcs: Vec<u32>,
}

impl Decoder<'_, '_> {
    fn err(&self, kind: DecodeErrorKind) -> DecodeError {
        DecodeError { offset: self.r.pos(), kind }
    }

    fn run(&mut self) -> Result<(), DecodeError> {
        let magic = self.r.read_bytes(4).map_err(|_| DecodeError { offset: 0, kind: DecodeErrorKind::BadMagic })?;
        if magic != MAGIC {
            return Err(DecodeError { offset: 0, kind: DecodeErrorKind::BadMagic });
        }
        let v = self.r.read_bytes(4)?;
        let version = u32::from_le_bytes([v[0], v[1], v[2], v[3]]);
        if version != VERSION {
            return Err(DecodeError { offset: 4, kind: DecodeErrorKind::BadVersion(version) });
        }

        let mut last_rank = 0u8;
        let mut saw_code = false;
        while !self.r.is_empty() {
            let id_pos = self.r.pos();
            let id = self.r.read_u8()?;
            let len = self.r.read_var_u32()? as usize;
            let start = self.r.pos();
            if self.r.end() - start < len {
                return Err(self.err(DecodeErrorKind::SectionLength));
            }
            let end = start + len;
            if id == 0 {
                // Custom section: check the name, skip the payload.
                let mut sub = Reader::at(self.r.bytes(), start, end);
                sub.read_name()?;
                self.r.skip(len)?;
                continue;
            }
            let rank = section_rank(id)
                .ok_or(DecodeError { offset: id_pos, kind: DecodeErrorKind::UnknownSection(id) })?;
            if rank <= last_rank {
                return Err(DecodeError { offset: id_pos, kind: DecodeErrorKind::SectionOrder });
            }
            last_rank = rank;

            let inner = Reader::at(self.r.bytes(), start, end);
            let outer = std::mem::replace(&mut self.r, inner);
            match id {
                1 => self.type_section()?,
                2 => self.import_section()?,
                3 => self.function_section()?,
                4 => self.table_section()?,
                5 => self.memory_section()?,
                6 => self.global_section()?,
                7 => self.export_section()?,
                8 => self.start_section()?,
                9 => self.element_section()?,
                10 => {
                    saw_code = true;
                    self.code_section()?
                }
                11 => self.data_section()?,
                12 => self.m.data_count = Some(self.r.read_var_u32()?),
                _ => unreachable!(),
            }
            if !self.r.is_empty() {
                return Err(self.err(DecodeErrorKind::SectionLength));
            }
            self.r = outer;
            self.r.skip(len)?;
        }
        if !saw_code && !self.declared_funcs.is_empty() {
            return Err(self.err(DecodeErrorKind::FunctionCountMismatch));
        }
        if let Some(n) = self.m.data_count {
            if n as usize != self.m.data.len() {
                return Err(self.err(DecodeErrorKind::Malformed("data count")));
            }
        }
        self.check_indices()
    }

    fn vec_len(&mut self, what: &'static str, limit: u32) -> Result<u32, DecodeError> {
        let n = self.r.read_var_u32()?;
        if n > limit {
            return Err(self.err(DecodeErrorKind::LimitExceeded(what)));
        }
        // Every item occupies at least one byte.
        if n as usize > self.r.end() - self.r.pos() {
            return Err(self.err(DecodeErrorKind::UnexpectedEof));
        }
        Ok(n)
    }

    fn value_type(&mut self) -> Result<ValueType, DecodeError> {
        let pos = self.r.pos();
        let b = self.r.read_u8()?;
        ValueType::from_byte(b).ok_or(DecodeError { offset: pos, kind: DecodeErrorKind::BadValueType(b) })
    }

    fn ref_type(&mut self) -> Result<ValueType, DecodeError> {
        let pos = self.r.pos();
        let t = self.value_type()?;
        if !t.is_ref() {
            return Err(DecodeError { offset: pos, kind: DecodeErrorKind::Malformed("reference type") });
        }
        Ok(t)
    }

    fn limits(&mut self) -> Result<Limits, DecodeError> {
        match self.r.read_u8()? {
            0x00 => Ok(Limits { min: self.r.read_var_u32()?, max: None }),
            0x01 => {
                let min = self.r.read_var_u32()?;
                let max = self.r.read_var_u32()?;
                Ok(Limits { min, max: Some(max) })
            }
            _ => Err(self.err(DecodeErrorKind::Malformed("limits flag"))),
        }
    }

    fn table_type(&mut self) -> Result<TableType, DecodeError> {
        let elem = self.ref_type()?;
        let limits = self.limits()?;
        Ok(TableType { elem, limits })
    }

    fn global_type(&mut self) -> Result<GlobalType, DecodeError> {
        let content = self.value_type()?;
        let mutable = match self.r.read_u8()? {
            0 => false,
            1 => true,
            _ => return Err(self.err(DecodeErrorKind::Malformed("mutability flag"))),
        };
        Ok(GlobalType { content, mutable })
    }

    fn const_expr(&mut self) -> Result<ConstExpr, DecodeError> {
        let pos = self.r.pos();
        let op = self.r.read_u8()?;
        let e = match op {
            opcode::I32_CONST => ConstExpr::I32(self.r.read_var_i32()?),
            opcode::I64_CONST => ConstExpr::I64(self.r.read_var_i64()?),
            opcode::F32_CONST => ConstExpr::F32(self.r.read_f32_bits()?),
            opcode::F64_CONST => ConstExpr::F64(self.r.read_f64_bits()?),
            opcode::REF_NULL => ConstExpr::RefNull(self.ref_type()?),
            opcode::REF_FUNC => {
                let f = self.r.read_var_u32()?;
                self.declared_funcs.push(f);
                ConstExpr::RefFunc(f)
            }
            opcode::GLOBAL_GET => ConstExpr::GlobalGet(self.r.read_var_u32()?),
            other => return Err(DecodeError { offset: pos, kind: DecodeErrorKind::NonConstant(other) }),
        };
        let end_pos = self.r.pos();
        let end = self.r.read_u8()?;
        if end != opcode::END {
            return Err(DecodeError { offset: end_pos, kind: DecodeErrorKind::NonConstant(end) });
        }
        Ok(e)
    }

    fn type_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("types", limits::MAX_TYPES)?;
        for _ in 0..n {
            if self.r.read_u8()? != 0x60 {
                return Err(self.err(DecodeErrorKind::Malformed("function type form")));
            }
            let np = self.vec_len("params", limits::MAX_LOCALS)?;
            let params = (0..np).map(|_| self.value_type()).collect::<Result<Vec<_>, _>>()?;
            let nr = self.vec_len("results", limits::MAX_LOCALS)?;
            let results = (0..nr).map(|_| self.value_type()).collect::<Result<Vec<_>, _>>()?;
            self.m.types.push(FuncType::new(params, results));
        }
        Ok(())
    }

    fn import_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("imports", limits::MAX_IMPORTS)?;
        for _ in 0..n {
            let module = self.r.read_name()?;
            let name = self.r.read_name()?;
            let kind = match self.r.read_u8()? {
                0x00 => {
                    let t = self.r.read_var_u32()?;
                    self.m.func_space.push(t);
                    self.m.imported_funcs += 1;
                    ImportKind::Func(t)
                }
                0x01 => {
                    let t = self.table_type()?;
                    self.m.table_space.push(t);
                    ImportKind::Table(t)
                }
                0x02 => {
                    let l = self.limits()?;
                    self.m.memory_space.push(l);
                    ImportKind::Memory(l)
                }
                0x03 => {
                    let g = self.global_type()?;
                    self.m.global_space.push(g);
                    self.m.imported_globals += 1;
                    ImportKind::Global(g)
                }
                _ => return Err(self.err(DecodeErrorKind::Malformed("import kind"))),
            };
            self.m.imports.push(ImportDecl { module, name, kind });
        }
        Ok(())
    }

    fn function_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("functions", limits::MAX_FUNCTIONS)?;
        if self.m.func_space.len() + n as usize > limits::MAX_FUNCTIONS as usize {
            return Err(self.err(DecodeErrorKind::LimitExceeded("functions")));
        }
        for _ in 0..n {
            let t = self.r.read_var_u32()?;
            self.m.func_space.push(t);
        }
        Ok(())
    }

    fn table_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("tables", limits::MAX_TABLES)?;
        for _ in 0..n {
            let t = self.table_type()?;
            self.m.tables.push(t);
            self.m.table_space.push(t);
        }
        Ok(())
    }

    fn memory_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("memories", limits::MAX_MEMORIES)?;
        for _ in 0..n {
            let l = self.limits()?;
            self.m.memories.push(l);
            self.m.memory_space.push(l);
        }
        Ok(())
    }

    fn global_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("globals", limits::MAX_GLOBALS)?;
        for _ in 0..n {
            let ty = self.global_type()?;
            let init = self.const_expr()?;
            self.m.globals.push(GlobalDecl { ty, init });
            self.m.global_space.push(ty);
        }
        Ok(())
    }

    fn export_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("exports", limits::MAX_EXPORTS)?;
        for _ in 0..n {
            let name = self.r.read_name()?;
            let kind = match self.r.read_u8()? {
                0 => ExternKind::Func,
                1 => ExternKind::Table,
                2 => ExternKind::Memory,
                3 => ExternKind::Global,
                _ => return Err(self.err(DecodeErrorKind::Malformed("export kind"))),
            };
            let index = self.r.read_var_u32()?;
            if kind == ExternKind::Func {
                self.declared_funcs.push(index);
            }
            self.m.exports.push(Export { name, kind, index });
        }
        Ok(())
    }

    fn start_section(&mut self) -> Result<(), DecodeError> {
        self.m.start = Some(self.r.read_var_u32()?);
        Ok(())
    }

    fn elem_kind(&mut self) -> Result<ValueType, DecodeError> {
        match self.r.read_u8()? {
            0x00 => Ok(ValueType::FuncRef),
            _ => Err(self.err(DecodeErrorKind::Malformed("element kind"))),
        }
    }

    fn func_indices(&mut self) -> Result<Vec<ConstExpr>, DecodeError> {
        let n = self.vec_len("elements", limits::MAX_TABLE_ELEMS)?;
        let mut items = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let f = self.r.read_var_u32()?;
            self.declared_funcs.push(f);
            items.push(ConstExpr::RefFunc(f));
        }
        Ok(items)
    }

    fn expr_items(&mut self) -> Result<Vec<ConstExpr>, DecodeError> {
        let n = self.vec_len("elements", limits::MAX_TABLE_ELEMS)?;
        (0..n).map(|_| self.const_expr()).collect()
    }

    fn element_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("element segments", limits::MAX_SEGMENTS)?;
        for _ in 0..n {
            let flags = self.r.read_var_u32()?;
            let seg = match flags {
                0 => {
                    let offset = self.const_expr()?;
                    let items = self.func_indices()?;
                    ElementSegment { mode: ElementMode::Active { table: 0, offset }, elem_type: ValueType::FuncRef, items }
                }
                1 | 3 => {
                    let elem_type = self.elem_kind()?;
                    let items = self.func_indices()?;
                    let mode = if flags == 1 { ElementMode::Passive } else { ElementMode::Declarative };
                    ElementSegment { mode, elem_type, items }
                }
                2 => {
                    let table = self.r.read_var_u32()?;
                    let offset = self.const_expr()?;
                    let elem_type = self.elem_kind()?;
                    let items = self.func_indices()?;
                    ElementSegment { mode: ElementMode::Active { table, offset }, elem_type, items }
                }
                4 => {
                    let offset = self.const_expr()?;
                    let items = self.expr_items()?;
                    ElementSegment { mode: ElementMode::Active { table: 0, offset }, elem_type: ValueType::FuncRef, items }
                }
                5 | 7 => {
                    let elem_type = self.ref_type()?;
                    let items = self.expr_items()?;
                    let mode = if flags == 5 { ElementMode::Passive } else { ElementMode::Declarative };
                    ElementSegment { mode, elem_type, items }
                }
                6 => {
                    let table = self.r.read_var_u32()?;
                    let offset = self.const_expr()?;
                    let elem_type = self.ref_type()?;
                    let items = self.expr_items()?;
                    ElementSegment { mode: ElementMode::Active { table, offset }, elem_type, items }
                }
                _ => return Err(self.err(DecodeErrorKind::Malformed("element segment flags"))),
            };
            self.m.elements.push(seg);
        }
        Ok(())
    }

    fn code_section(&mut self) -> Result<(), DecodeError> {
        let n = self.r.read_var_u32()?;
        let defined = self.m.func_space.len() - self.m.imported_funcs as usize;
        if n as usize != defined {
            return Err(self.err(DecodeErrorKind::FunctionCountMismatch));
        }
        for i in 0..n {
            let size = self.r.read_var_u32()? as usize;
            let body_start = self.r.pos();
            if self.r.end() - body_start < size || size == 0 {
                return Err(self.err(DecodeErrorKind::SectionLength));
            }
            let body_end = body_start + size;
            let inner = Reader::at(self.r.bytes(), body_start, body_end);
            let outer = std::mem::replace(&mut self.r, inner);
            let groups = self.r.read_var_u32()?;
            let mut locals = Vec::new();
            let mut total: u64 = 0;
            for _ in 0..groups {
                let count = self.r.read_var_u32()?;
                let ty = self.value_type()?;
                total += u64::from(count);
                if total > u64::from(u32::MAX) {
                    return Err(self.err(DecodeErrorKind::LimitExceeded("locals")));
                }
                locals.push((count, ty));
            }
            let code_start = self.r.pos();
            if code_start >= body_end {
                return Err(self.err(DecodeErrorKind::MissingEnd));
            }
            if self.r.bytes()[body_end - 1] != opcode::END {
                return Err(DecodeError { offset: body_end - 1, kind: DecodeErrorKind::MissingEnd });
            }
            self.r = outer;
            self.r.skip(size)?;
            let type_index = self.m.func_space[self.m.imported_funcs as usize + i as usize];
            self.m.functions.push(FunctionDecl {
                type_index,
                body: FunctionBody { body_start, locals, code_start, code_end: body_end },
            });
        }
        Ok(())
    }

    fn data_section(&mut self) -> Result<(), DecodeError> {
        let n = self.vec_len("data segments", limits::MAX_SEGMENTS)?;
        for _ in 0..n {
            let mode = match self.r.read_var_u32()? {
                0 => DataMode::Active { memory: 0, offset: self.const_expr()? },
                1 => DataMode::Passive,
                2 => {
                    let memory = self.r.read_var_u32()?;
                    DataMode::Active { memory, offset: self.const_expr()? }
                }
                _ => return Err(self.err(DecodeErrorKind::Malformed("data segment flags"))),
            };
            let len = self.r.read_var_u32()? as usize;
            let start = self.r.pos();
            self.r.skip(len)?;
            self.m.data.push(DataSegment { mode, data: start..start + len });
        }
        Ok(())
    }

    fn check_indices(&self) -> Result<(), DecodeError> {
        let m = &*self.m;
        let oob = |what, index| Err(DecodeError { offset: 0, kind: DecodeErrorKind::IndexOutOfRange { what, index } });
        for &t in &m.func_space {
            if t as usize >= m.types.len() {
                return oob("type", t);
            }
        }
        let nfuncs = m.func_space.len() as u32;
        for &f in &self.declared_funcs {
            if f >= nfuncs {
                return oob("function", f);
            }
        }
        if let Some(s) = m.start {
            if s >= nfuncs {
                return oob("function", s);
            }
        }
        for e in &m.exports {
            let bound = match e.kind {
                ExternKind::Func => nfuncs,
                ExternKind::Table => m.table_space.len() as u32,
                ExternKind::Memory => m.memory_space.len() as u32,
                ExternKind::Global => m.global_space.len() as u32,
            };
            if e.index >= bound {
                return oob("export", e.index);
            }
        }
        let nglobals = m.global_space.len() as u32;
        let const_ok = |e: &ConstExpr| match *e {
            ConstExpr::GlobalGet(g) if g >= nglobals => Err(g),
            _ => Ok(()),
        };
        for g in &m.globals {
            const_ok(&g.init).or_else(|g| oob("global", g))?;
        }
        for seg in &m.elements {
            if let ElementMode::Active { table, offset } = &seg.mode {
                if *table as usize >= m.table_space.len() {
                    return oob("table", *table);
                }
                const_ok(offset).or_else(|g| oob("global", g))?;
            }
            for item in &seg.items {
                const_ok(item).or_else(|g| oob("global", g))?;
            }
        }
        for seg in &m.data {
            if let DataMode::Active { memory, offset } = &seg.mode {
                if *memory as usize >= m.memory_space.len() {
                    return oob("memory", *memory);
                }
                const_ok(offset).or_else(|g| oob("global", g))?;
            }
        }
        Ok(())
    }
}
