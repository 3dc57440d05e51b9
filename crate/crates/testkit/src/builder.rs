//! Programmatic construction of binary modules.

use sidewasm::binary::ValueType;

/// Block type immediate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bt {
    Empty,
    Val(ValueType),
    /// Index into the type section.
    Type(u32),
}

pub(crate) fn write_u32(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

pub(crate) fn write_i64(out: &mut Vec<u8>, mut v: i64) {
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        let done = (v == 0 && b & 0x40 == 0) || (v == -1 && b & 0x40 != 0);
        if done {
            out.push(b);
            return;
        }
        out.push(b | 0x80);
    }
}

fn write_name(out: &mut Vec<u8>, s: &str) {
    write_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

macro_rules! simple_ops {
    ($($name:ident = $byte:expr;)*) => {
        impl Code {
            $(
                pub fn $name(&mut self) -> &mut Self {
                    self.op($byte)
                }
            )*
        }
    };
}

/// An instruction sequence. Offsets returned by [`Code::here`] are relative to
/// the first instruction; [`Built::offset`] turns them into module offsets.
#[derive(Debug, Clone, Default)]
pub struct Code {
    bytes: Vec<u8>,
}

impl Code {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn len(&self) -> usize {
        self.bytes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    /// Relative offset of the next instruction.
    pub fn here(&self) -> usize {
        self.bytes.len()
    }

    pub fn op(&mut self, b: u8) -> &mut Self {
        self.bytes.push(b);
        self
    }

    pub fn raw(&mut self, bytes: &[u8]) -> &mut Self {
        self.bytes.extend_from_slice(bytes);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        write_u32(&mut self.bytes, v);
        self
    }

    fn bt(&mut self, bt: Bt) -> &mut Self {
        match bt {
            Bt::Empty => self.op(0x40),
            Bt::Val(t) => self.op(t.to_byte()),
            Bt::Type(i) => {
                write_i64(&mut self.bytes, i64::from(i));
                self
            }
        }
    }

    pub fn block(&mut self, bt: Bt) -> &mut Self {
        self.op(0x02).bt(bt)
    }

    pub fn loop_(&mut self, bt: Bt) -> &mut Self {
        self.op(0x03).bt(bt)
    }

    pub fn if_(&mut self, bt: Bt) -> &mut Self {
        self.op(0x04).bt(bt)
    }

    pub fn br(&mut self, depth: u32) -> &mut Self {
        self.op(0x0c).u32(depth)
    }

    pub fn br_if(&mut self, depth: u32) -> &mut Self {
        self.op(0x0d).u32(depth)
    }

    pub fn br_table(&mut self, targets: &[u32], default: u32) -> &mut Self {
        self.op(0x0e).u32(targets.len() as u32);
        for &t in targets {
            self.u32(t);
        }
        self.u32(default)
    }

    pub fn call(&mut self, func: u32) -> &mut Self {
        self.op(0x10).u32(func)
    }

    pub fn call_indirect(&mut self, type_index: u32, table: u32) -> &mut Self {
        self.op(0x11).u32(type_index).u32(table)
    }

    pub fn select_t(&mut self, t: ValueType) -> &mut Self {
        self.op(0x1c).u32(1).op(t.to_byte())
    }

    pub fn local_get(&mut self, i: u32) -> &mut Self {
        self.op(0x20).u32(i)
    }

    pub fn local_set(&mut self, i: u32) -> &mut Self {
        self.op(0x21).u32(i)
    }

    pub fn local_tee(&mut self, i: u32) -> &mut Self {
        self.op(0x22).u32(i)
    }

    pub fn global_get(&mut self, i: u32) -> &mut Self {
        self.op(0x23).u32(i)
    }

    pub fn global_set(&mut self, i: u32) -> &mut Self {
        self.op(0x24).u32(i)
    }

    pub fn table_get(&mut self, t: u32) -> &mut Self {
        self.op(0x25).u32(t)
    }

    pub fn table_set(&mut self, t: u32) -> &mut Self {
        self.op(0x26).u32(t)
    }

    /// Any load or store: `op align offset`.
    pub fn mem(&mut self, op: u8, align: u32, offset: u32) -> &mut Self {
        self.op(op).u32(align).u32(offset)
    }

    pub fn i32_load(&mut self, offset: u32) -> &mut Self {
        self.mem(0x28, 2, offset)
    }

    pub fn i64_load(&mut self, offset: u32) -> &mut Self {
        self.mem(0x29, 3, offset)
    }

    pub fn i32_store(&mut self, offset: u32) -> &mut Self {
        self.mem(0x36, 2, offset)
    }

    pub fn i64_store(&mut self, offset: u32) -> &mut Self {
        self.mem(0x37, 3, offset)
    }

    pub fn memory_size(&mut self) -> &mut Self {
        self.op(0x3f).op(0)
    }

    pub fn memory_grow(&mut self) -> &mut Self {
        self.op(0x40).op(0)
    }

    pub fn i32_const(&mut self, v: i32) -> &mut Self {
        self.op(0x41);
        write_i64(&mut self.bytes, i64::from(v));
        self
    }

    pub fn i64_const(&mut self, v: i64) -> &mut Self {
        self.op(0x42);
        write_i64(&mut self.bytes, v);
        self
    }

    pub fn f32_const(&mut self, v: f32) -> &mut Self {
        self.op(0x43).raw(&v.to_bits().to_le_bytes())
    }

    pub fn f64_const(&mut self, v: f64) -> &mut Self {
        self.op(0x44).raw(&v.to_bits().to_le_bytes())
    }

    pub fn ref_null(&mut self, t: ValueType) -> &mut Self {
        self.op(0xd0).op(t.to_byte())
    }

    pub fn ref_func(&mut self, f: u32) -> &mut Self {
        self.op(0xd2).u32(f)
    }

    /// A 0xFC-prefixed instruction without immediates beyond the sub-opcode.
    pub fn fc(&mut self, sub: u32) -> &mut Self {
        self.op(0xfc).u32(sub)
    }

    pub fn memory_copy(&mut self) -> &mut Self {
        self.fc(10).op(0).op(0)
    }

    pub fn memory_fill(&mut self) -> &mut Self {
        self.fc(11).op(0)
    }

    pub fn memory_init(&mut self, seg: u32) -> &mut Self {
        self.fc(8).u32(seg).op(0)
    }

    pub fn data_drop(&mut self, seg: u32) -> &mut Self {
        self.fc(9).u32(seg)
    }
}

simple_ops! {
    unreachable = 0x00;
    nop = 0x01;
    else_ = 0x05;
    end = 0x0b;
    return_ = 0x0f;
    drop = 0x1a;
    select = 0x1b;
    i32_eqz = 0x45;
    i32_eq = 0x46;
    i32_ne = 0x47;
    i32_lt_s = 0x48;
    i32_lt_u = 0x49;
    i32_gt_s = 0x4a;
    i32_gt_u = 0x4b;
    i32_le_s = 0x4c;
    i32_ge_s = 0x4e;
    i64_eqz = 0x50;
    i64_eq = 0x51;
    i64_lt_s = 0x53;
    i32_clz = 0x67;
    i32_ctz = 0x68;
    i32_popcnt = 0x69;
    i32_add = 0x6a;
    i32_sub = 0x6b;
    i32_mul = 0x6c;
    i32_div_s = 0x6d;
    i32_div_u = 0x6e;
    i32_rem_s = 0x6f;
    i32_rem_u = 0x70;
    i32_and = 0x71;
    i32_or = 0x72;
    i32_xor = 0x73;
    i32_shl = 0x74;
    i32_shr_s = 0x75;
    i32_shr_u = 0x76;
    i32_rotl = 0x77;
    i32_rotr = 0x78;
    i64_add = 0x7c;
    i64_sub = 0x7d;
    i64_mul = 0x7e;
    i64_div_s = 0x7f;
    i64_rem_u = 0x82;
    i64_xor = 0x85;
    f32_add = 0x92;
    f32_mul = 0x94;
    f32_div = 0x95;
    f64_add = 0xa0;
    f64_sub = 0xa1;
    f64_mul = 0xa2;
    f64_div = 0xa3;
    f64_sqrt = 0x9f;
    i32_wrap_i64 = 0xa7;
    i32_trunc_f32_s = 0xa8;
    i32_trunc_f64_s = 0xaa;
    i32_trunc_f64_u = 0xab;
    i64_extend_i32_s = 0xac;
    i64_extend_i32_u = 0xad;
    i64_trunc_f64_s = 0xb0;
    f64_convert_i32_s = 0xb7;
    f64_convert_i64_s = 0xb9;
    i32_extend8_s = 0xc0;
    ref_is_null = 0xd1;
}

#[derive(Debug, Clone)]
enum Import {
    Func(u32),
    Memory(u32, Option<u32>),
    Global(ValueType, bool),
}

#[derive(Debug, Clone)]
struct FuncDef {
    type_index: u32,
    locals: Vec<ValueType>,
    code: Code,
}

/// Constant initializer for globals and segment offsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
    RefNull(ValueType),
    RefFunc(u32),
    Global(u32),
}

impl Init {
    fn write(self, out: &mut Vec<u8>) {
        match self {
            Init::I32(v) => {
                out.push(0x41);
                write_i64(out, i64::from(v));
            }
            Init::I64(v) => {
                out.push(0x42);
                write_i64(out, v);
            }
            Init::F32(v) => {
                out.push(0x43);
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            Init::F64(v) => {
                out.push(0x44);
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
            Init::RefNull(t) => out.extend_from_slice(&[0xd0, t.to_byte()]),
            Init::RefFunc(f) => {
                out.push(0xd2);
                write_u32(out, f);
            }
            Init::Global(g) => {
                out.push(0x23);
                write_u32(out, g);
            }
        }
        out.push(0x0b);
    }
}

/// Accumulates section contents and emits a binary module.
#[derive(Debug, Clone, Default)]
pub struct ModuleBuilder {
    types: Vec<(Vec<ValueType>, Vec<ValueType>)>,
    imports: Vec<(String, String, Import)>,
    funcs: Vec<FuncDef>,
    tables: Vec<(ValueType, u32, Option<u32>)>,
    memory: Option<(u32, Option<u32>)>,
    globals: Vec<(ValueType, bool, Init)>,
    exports: Vec<(String, u8, u32)>,
    start: Option<u32>,
    elems: Vec<(u32, Init, Vec<u32>)>,
    data: Vec<(Option<Init>, Vec<u8>)>,
}

impl ModuleBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the function type, adding it if new.
    pub fn ty(&mut self, params: &[ValueType], results: &[ValueType]) -> u32 {
        if let Some(i) = self.types.iter().position(|(p, r)| p == params && r == results) {
            return i as u32;
        }
        self.types.push((params.to_vec(), results.to_vec()));
        (self.types.len() - 1) as u32
    }

    fn num_imported_funcs(&self) -> u32 {
        self.imports.iter().filter(|(_, _, i)| matches!(i, Import::Func(_))).count() as u32
    }

    fn num_imported_globals(&self) -> u32 {
        self.imports.iter().filter(|(_, _, i)| matches!(i, Import::Global(..))).count() as u32
    }

    /// Imports a function; must precede every [`ModuleBuilder::func`] call.
    pub fn import_func(&mut self, module: &str, name: &str, params: &[ValueType], results: &[ValueType]) -> u32 {
        assert!(self.funcs.is_empty(), "imports must precede definitions");
        let ty = self.ty(params, results);
        self.imports.push((module.into(), name.into(), Import::Func(ty)));
        self.num_imported_funcs() - 1
    }

    pub fn import_memory(&mut self, module: &str, name: &str, min: u32, max: Option<u32>) {
        assert!(self.memory.is_none());
        self.imports.push((module.into(), name.into(), Import::Memory(min, max)));
    }

    pub fn import_global(&mut self, module: &str, name: &str, t: ValueType, mutable: bool) -> u32 {
        assert!(self.globals.is_empty(), "imports must precede definitions");
        self.imports.push((module.into(), name.into(), Import::Global(t, mutable)));
        self.num_imported_globals() - 1
    }

    /// Index the next defined function will get.
    pub fn next_func_index(&self) -> u32 {
        self.num_imported_funcs() + self.funcs.len() as u32
    }

    /// Defines a function. `code` must include the terminal `end`.
    pub fn func(&mut self, params: &[ValueType], results: &[ValueType], locals: &[ValueType], code: Code) -> u32 {
        let type_index = self.ty(params, results);
        self.func_with_type(type_index, locals, code)
    }

    pub fn func_with_type(&mut self, type_index: u32, locals: &[ValueType], code: Code) -> u32 {
        let idx = self.next_func_index();
        self.funcs.push(FuncDef { type_index, locals: locals.to_vec(), code });
        idx
    }

    /// Replaces the body of a previously declared function.
    pub fn set_code(&mut self, func: u32, code: Code) {
        let i = (func - self.num_imported_funcs()) as usize;
        self.funcs[i].code = code;
    }

    pub fn table(&mut self, elem: ValueType, min: u32, max: Option<u32>) -> u32 {
        self.tables.push((elem, min, max));
        (self.tables.len() - 1) as u32
    }

    pub fn memory(&mut self, min: u32, max: Option<u32>) {
        self.memory = Some((min, max));
    }

    pub fn global(&mut self, t: ValueType, mutable: bool, init: Init) -> u32 {
        self.globals.push((t, mutable, init));
        self.num_imported_globals() + self.globals.len() as u32 - 1
    }

    pub fn export_func(&mut self, name: &str, func: u32) -> &mut Self {
        self.exports.push((name.into(), 0, func));
        self
    }

    pub fn export_memory(&mut self, name: &str) -> &mut Self {
        self.exports.push((name.into(), 2, 0));
        self
    }

    pub fn export_global(&mut self, name: &str, g: u32) -> &mut Self {
        self.exports.push((name.into(), 3, g));
        self
    }

    pub fn start(&mut self, func: u32) {
        self.start = Some(func);
    }

    /// Active funcref segment.
    pub fn elem(&mut self, table: u32, offset: Init, funcs: &[u32]) {
        self.elems.push((table, offset, funcs.to_vec()));
    }

    /// Active data segment into memory 0.
    pub fn data(&mut self, offset: Init, bytes: &[u8]) -> u32 {
        self.data.push((Some(offset), bytes.to_vec()));
        (self.data.len() - 1) as u32
    }

    pub fn passive_data(&mut self, bytes: &[u8]) -> u32 {
        self.data.push((None, bytes.to_vec()));
        (self.data.len() - 1) as u32
    }

    /// Emits the binary module.
    pub fn build(&self) -> Built {
        let mut out = b"\0asm\x01\0\0\0".to_vec();
        let mut sections = Vec::new();
        let mut section = |out: &mut Vec<u8>, id: u8, body: Vec<u8>| {
            out.push(id);
            write_u32(out, body.len() as u32);
            let start = out.len();
            out.extend_from_slice(&body);
            sections.push((id, start, body.len()));
            start
        };

        if !self.types.is_empty() {
            let mut b = Vec::new();
            write_u32(&mut b, self.types.len() as u32);
            for (p, r) in &self.types {
                b.push(0x60);
                write_u32(&mut b, p.len() as u32);
                b.extend(p.iter().map(|t| t.to_byte()));
                write_u32(&mut b, r.len() as u32);
                b.extend(r.iter().map(|t| t.to_byte()));
            }
            section(&mut out, 1, b);
        }
        if !self.imports.is_empty() {
            let mut b = Vec::new();
            write_u32(&mut b, self.imports.len() as u32);
            for (m, n, kind) in &self.imports {
                write_name(&mut b, m);
                write_name(&mut b, n);
                match kind {
                    Import::Func(t) => {
                        b.push(0);
                        write_u32(&mut b, *t);
                    }
                    Import::Memory(min, max) => {
                        b.push(2);
                        write_limits(&mut b, *min, *max);
                    }
                    Import::Global(t, m) => {
                        b.push(3);
                        b.push(t.to_byte());
                        b.push(u8::from(*m));
                    }
                }
            }
            section(&mut out, 2, b);
        }
        if !self.funcs.is_empty() {
            let mut b = Vec::new();
            write_u32(&mut b, self.funcs.len() as u32);
            for f in &self.funcs {
                write_u32(&mut b, f.type_index);
            }
            section(&mut out, 3, b);
        }
        if !self.tables.is_empty() {
            let mut b = Vec::new();
            write_u32(&mut b, self.tables.len() as u32);
            for (t, min, max) in &self.tables {
                b.push(t.to_byte());
                write_limits(&mut b, *min, *max);
            }
            section(&mut out, 4, b);
        }
        if let Some((min, max)) = self.memory {
            let mut b = vec![1];
            write_limits(&mut b, min, max);
            section(&mut out, 5, b);
        }
        if !self.globals.is_empty() {
            let mut b = Vec::new();
            write_u32(&mut b, self.globals.len() as u32);
            for (t, m, init) in &self.globals {
                b.push(t.to_byte());
                b.push(u8::from(*m));
                init.write(&mut b);
            }
            section(&mut out, 6, b);
        }
        if !self.exports.is_empty() {
            let mut b = Vec::new();
            write_u32(&mut b, self.exports.len() as u32);
            for (n, k, i) in &self.exports {
                write_name(&mut b, n);
                b.push(*k);
                write_u32(&mut b, *i);
            }
            section(&mut out, 7, b);
        }
        if let Some(s) = self.start {
            let mut b = Vec::new();
            write_u32(&mut b, s);
            section(&mut out, 8, b);
        }
        if !self.elems.is_empty() {
            let mut b = Vec::new();
            write_u32(&mut b, self.elems.len() as u32);
            for (table, offset, funcs) in &self.elems {
                if *table == 0 {
                    b.push(0);
                } else {
                    b.push(2);
                    write_u32(&mut b, *table);
                }
                offset.write(&mut b);
                if *table != 0 {
                    b.push(0);
                }
                write_u32(&mut b, funcs.len() as u32);
                for &f in funcs {
                    write_u32(&mut b, f);
                }
            }
            section(&mut out, 9, b);
        }
        if self.data.iter().any(|(o, _)| o.is_none()) {
            let mut b = Vec::new();
            write_u32(&mut b, self.data.len() as u32);
            section(&mut out, 12, b);
        }
        let mut code_starts = Vec::with_capacity(self.funcs.len());
        if !self.funcs.is_empty() {
            let mut b = Vec::new();
            let mut rel_starts = Vec::new();
            write_u32(&mut b, self.funcs.len() as u32);
            for f in &self.funcs {
                let mut body = Vec::new();
                let mut groups: Vec<(u32, ValueType)> = Vec::new();
                for &t in &f.locals {
                    match groups.last_mut() {
                        Some((n, g)) if *g == t => *n += 1,
                        _ => groups.push((1, t)),
                    }
                }
                write_u32(&mut body, groups.len() as u32);
                for (n, t) in groups {
                    write_u32(&mut body, n);
                    body.push(t.to_byte());
                }
                let code_rel = body.len();
                body.extend_from_slice(f.code.bytes());
                write_u32(&mut b, body.len() as u32);
                rel_starts.push(b.len() + code_rel);
                b.extend_from_slice(&body);
            }
            let base = section(&mut out, 10, b);
            code_starts.extend(rel_starts.into_iter().map(|r| base + r));
        }
        if !self.data.is_empty() {
            let mut b = Vec::new();
            write_u32(&mut b, self.data.len() as u32);
            for (offset, bytes) in &self.data {
                match offset {
                    Some(o) => {
                        b.push(0);
                        o.write(&mut b);
                    }
                    None => b.push(1),
                }
                write_u32(&mut b, bytes.len() as u32);
                b.extend_from_slice(bytes);
            }
            section(&mut out, 11, b);
        }
        Built { bytes: out, code_starts, first_defined: self.num_imported_funcs(), sections }
    }
}

fn write_limits(b: &mut Vec<u8>, min: u32, max: Option<u32>) {
    match max {
        None => {
            b.push(0);
            write_u32(b, min);
        }
        Some(m) => {
            b.push(1);
            write_u32(b, min);
            write_u32(b, m);
        }
    }
}

/// An emitted module and where its pieces landed.
#[derive(Debug, Clone)]
pub struct Built {
    pub bytes: Vec<u8>,
    /// Module offset of each defined function's first instruction.
    pub code_starts: Vec<usize>,
    first_defined: u32,
    /// `(id, payload offset, payload length)` per section, in order.
    pub sections: Vec<(u8, usize, usize)>,
}

impl Built {
    /// Module offset of the instruction at relative offset `rel` in `func`.
    pub fn offset(&self, func: u32, rel: usize) -> usize {
        self.code_starts[(func - self.first_defined) as usize] + rel
    }
}
