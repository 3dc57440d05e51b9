//! Instances and their mutable state: memory, tables, globals and host imports.

mod memory;

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use thiserror::Error;

use crate::binary::{ConstExpr, DataMode, ElementMode, ExternKind, FuncType, GlobalType, ImportKind, Limits, TableType, ValueType};
use crate::interp::{self, Caller, Store, Trap};
use crate::probes::ProbeRegistry;
use crate::validator::CompiledModule;

pub use memory::{memory_access_check, Memory};

/// A runtime value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    I32(i32),
    I64(i64),
    F32(f32),
    F64(f64),
    /// A function index in the owning instance, or null.
    FuncRef(Option<u32>),
    /// An opaque host handle, or null.
    ExternRef(Option<u32>),
}

impl Value {
    pub fn ty(&self) -> ValueType {
        match self {
            Value::I32(_) => ValueType::I32,
            Value::I64(_) => ValueType::I64,
            Value::F32(_) => ValueType::F32,
            Value::F64(_) => ValueType::F64,
            Value::FuncRef(_) => ValueType::FuncRef,
            Value::ExternRef(_) => ValueType::ExternRef,
        }
    }

    /// Zero value of a type: what fresh locals hold.
    pub fn default_for(ty: ValueType) -> Value {
        Value::from_cell(ty, 0)
    }

    /// Encodes into a 64-bit stack cell. Narrow values are zero-extended bit
    /// patterns; references store `index + 1`, with 0 for null.
    pub fn to_cell(self) -> u64 {
        match self {
            Value::I32(v) => u64::from(v as u32),
            Value::I64(v) => v as u64,
            Value::F32(v) => u64::from(v.to_bits()),
            Value::F64(v) => v.to_bits(),
            Value::FuncRef(r) | Value::ExternRef(r) => ref_to_cell(r),
        }
    }

    pub fn from_cell(ty: ValueType, cell: u64) -> Value {
        match ty {
            ValueType::I32 => Value::I32(cell as u32 as i32),
            ValueType::I64 => Value::I64(cell as i64),
            ValueType::F32 => Value::F32(f32::from_bits(cell as u32)),
            ValueType::F64 => Value::F64(f64::from_bits(cell)),
            ValueType::FuncRef => Value::FuncRef(cell_to_ref(cell)),
            ValueType::ExternRef => Value::ExternRef(cell_to_ref(cell)),
        }
    }

    pub fn as_i32(&self) -> Option<i32> {
        match *self {
            Value::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::I64(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::I32(v) => write!(f, "{v}"),
            Value::I64(v) => write!(f, "{v}"),
            Value::F32(v) => write!(f, "{v}"),
            Value::F64(v) => write!(f, "{v}"),
            Value::FuncRef(None) | Value::ExternRef(None) => f.write_str("null"),
            Value::FuncRef(Some(i)) => write!(f, "func:{i}"),
            Value::ExternRef(Some(i)) => write!(f, "extern:{i}"),
        }
    }
}

#[inline]
pub(crate) fn ref_to_cell(r: Option<u32>) -> u64 {
    r.map_or(0, |i| u64::from(i) + 1)
}

#[inline]
pub(crate) fn cell_to_ref(cell: u64) -> Option<u32> {
    cell.checked_sub(1).map(|i| i as u32)
}

/// Failure reported by a host callback.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct HostError(pub String);

impl HostError {
    pub fn new(msg: impl Into<String>) -> Self {
        HostError(msg.into())
    }
}

type HostCallback = dyn Fn(&mut Caller<'_>, &[Value]) -> Result<Vec<Value>, HostError>;

/// A function supplied by the embedder.
#[derive(Clone)]
pub struct HostFunction {
    pub signature: FuncType,
    pub(crate) callback: Rc<HostCallback>,
}

impl HostFunction {
    pub fn new(
        signature: FuncType,
        callback: impl Fn(&mut Caller<'_>, &[Value]) -> Result<Vec<Value>, HostError> + 'static,
    ) -> Self {
        Self { signature, callback: Rc::new(callback) }
    }
}

impl fmt::Debug for HostFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HostFunction").field("signature", &self.signature).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub ty: TableType,
    pub(crate) elems: Vec<Option<u32>>,
}

impl Table {
    pub fn new(ty: TableType) -> Self {
        Self { ty, elems: vec![None; ty.limits.min as usize] }
    }

    pub fn size(&self) -> u32 {
        self.elems.len() as u32
    }

    pub fn get(&self, i: u32) -> Option<Option<u32>> {
        self.elems.get(i as usize).copied()
    }

    /// Stores a reference; `false` when out of bounds.
    pub fn set(&mut self, i: u32, r: Option<u32>) -> bool {
        match self.elems.get_mut(i as usize) {
            Some(slot) => {
                *slot = r;
                true
            }
            None => false,
        }
    }

    /// Returns the old size, or -1 if the table cannot grow by `delta`.
    pub fn grow(&mut self, delta: u32, init: Option<u32>) -> i32 {
        let old = self.size();
        let max = self.ty.limits.max.unwrap_or(crate::limits::MAX_TABLE_ELEMS).min(crate::limits::MAX_TABLE_ELEMS);
        match old.checked_add(delta) {
            Some(new) if new <= max => {
                if self.elems.try_reserve_exact(delta as usize).is_err() {
                    return -1;
                }
                self.elems.resize(new as usize, init);
                old as i32
            }
            _ => -1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Global {
    pub ty: GlobalType,
    pub(crate) cell: u64,
}

impl Global {
    pub fn new(value: Value, mutable: bool) -> Self {
        Self { ty: GlobalType { content: value.ty(), mutable }, cell: value.to_cell() }
    }

    pub fn value(&self) -> Value {
        Value::from_cell(self.ty.content, self.cell)
    }
}

/// Something an import can be bound to. Memories, tables and globals are
/// copied into the importing instance.
#[derive(Debug, Clone)]
pub enum Extern {
    Func(HostFunction),
    Memory(Memory),
    Table(Table),
    Global(Global),
}

/// Import bindings keyed by `(module, name)`.
#[derive(Debug, Clone, Default)]
pub struct Imports {
    map: HashMap<(String, String), Extern>,
}

impl Imports {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn define(&mut self, module: &str, name: &str, ext: Extern) -> &mut Self {
        self.map.insert((module.to_string(), name.to_string()), ext);
        self
    }

    pub fn func(
        &mut self,
        module: &str,
        name: &str,
        signature: FuncType,
        callback: impl Fn(&mut Caller<'_>, &[Value]) -> Result<Vec<Value>, HostError> + 'static,
    ) -> &mut Self {
        self.define(module, name, Extern::Func(HostFunction::new(signature, callback)))
    }

    pub fn get(&self, module: &str, name: &str) -> Option<&Extern> {
        self.map.get(&(module.to_string(), name.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum InstantiationError {
    #[error("missing import {0}.{1}")]
    MissingImport(String, String),
    #[error("import {0}.{1} has the wrong type")]
    ImportMismatch(String, String),
    #[error("element segment {0} does not fit its table")]
    ElementOutOfBounds(usize),
    #[error("data segment {0} does not fit memory")]
    DataOutOfBounds(usize),
    #[error("memory of {0} pages cannot be allocated")]
    OutOfMemory(u32),
    #[error("start function trapped: {0}")]
    Start(Trap),
}

/// A module instantiated with its imports.
pub struct Instance {
    pub(crate) compiled: Arc<CompiledModule>,
    pub(crate) memory: Option<Memory>,
    pub(crate) tables: Vec<Table>,
    pub(crate) globals: Vec<Global>,
    /// Bindings for imported functions, in import order.
    pub(crate) host_funcs: Vec<HostFunction>,
    /// Canonical id per type index; structurally equal types share an id.
    pub(crate) type_ids: Vec<u32>,
    pub(crate) dropped_data: Vec<bool>,
    pub(crate) dropped_elems: Vec<bool>,
    pub(crate) probes: ProbeRegistry,
}

impl fmt::Debug for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Instance")
            .field("functions", &self.compiled.module.num_funcs())
            .field("memory_pages", &self.memory.as_ref().map(Memory::pages))
            .field("tables", &self.tables.len())
            .field("globals", &self.globals.len())
            .finish_non_exhaustive()
    }
}

fn limits_match(actual: &Limits, declared: &Limits) -> bool {
    actual.min >= declared.min
        && match declared.max {
            None => true,
            Some(dmax) => actual.max.is_some_and(|amax| amax <= dmax),
        }
}

impl Instance {
    /// Instantiates `compiled`, running its start function if present.
    ///
    /// Imported memories, tables and globals are copied in, so a failing
    /// instantiation leaves nothing observable behind.
    pub fn instantiate(
        store: &mut Store,
        compiled: Arc<CompiledModule>,
        imports: &Imports,
    ) -> Result<Instance, InstantiationError> {
        let m = &compiled.module;
        let mut host_funcs = Vec::new();
        let mut memory = None;
        let mut tables = Vec::new();
        let mut globals = Vec::new();
        for imp in &m.imports {
            let missing = || InstantiationError::MissingImport(imp.module.clone(), imp.name.clone());
            let mismatch = || InstantiationError::ImportMismatch(imp.module.clone(), imp.name.clone());
            let ext = imports.get(&imp.module, &imp.name).ok_or_else(missing)?;
            match (&imp.kind, ext) {
                (ImportKind::Func(ti), Extern::Func(h)) => {
                    if h.signature != m.types[*ti as usize] {
                        return Err(mismatch());
                    }
                    host_funcs.push(h.clone());
                }
                (ImportKind::Memory(l), Extern::Memory(mem)) => {
                    if !limits_match(&mem.limits(), l) {
                        return Err(mismatch());
                    }
                    memory = Some(mem.clone());
                }
                (ImportKind::Table(tt), Extern::Table(t)) => {
                    let actual = Limits { min: t.size(), max: t.ty.limits.max };
                    if t.ty.elem != tt.elem || !limits_match(&actual, &tt.limits) {
                        return Err(mismatch());
                    }
                    tables.push(t.clone());
                }
                (ImportKind::Global(gt), Extern::Global(g)) => {
                    if g.ty != *gt {
                        return Err(mismatch());
                    }
                    globals.push(*g);
                }
                _ => return Err(mismatch()),
            }
        }
        for g in &m.globals {
            let cell = eval_const(&g.init, &globals);
            globals.push(Global { ty: g.ty, cell });
        }
        for l in &m.memories {
            memory = Some(Memory::new(l.min, l.max).ok_or(InstantiationError::OutOfMemory(l.min))?);
        }
        for tt in &m.tables {
            tables.push(Table::new(*tt));
        }

        let mut type_ids = Vec::with_capacity(m.types.len());
        for (i, t) in m.types.iter().enumerate() {
            let first = m.types[..i].iter().position(|u| u == t).unwrap_or(i);
            type_ids.push(first as u32);
        }

        let mut dropped_elems = vec![false; m.elements.len()];
        for (i, seg) in m.elements.iter().enumerate() {
            match &seg.mode {
                ElementMode::Active { table, offset } => {
                    let start = eval_const(offset, &globals) as u32 as usize;
                    let t = &mut tables[*table as usize];
                    let end = start.checked_add(seg.items.len());
                    if end.is_none_or(|e| e > t.elems.len()) {
                        return Err(InstantiationError::ElementOutOfBounds(i));
                    }
                    for (j, item) in seg.items.iter().enumerate() {
                        t.elems[start + j] = cell_to_ref(eval_const(item, &globals));
                    }
                    dropped_elems[i] = true;
                }
                ElementMode::Declarative => dropped_elems[i] = true,
                ElementMode::Passive => {}
            }
        }
        let mut dropped_data = vec![false; m.data.len()];
        for (i, seg) in m.data.iter().enumerate() {
            if let DataMode::Active { offset, .. } = &seg.mode {
                let start = eval_const(offset, &globals) as u32 as usize;
                let bytes = &m.bytes()[seg.data.clone()];
                let mem = memory.as_mut().ok_or(InstantiationError::DataOutOfBounds(i))?;
                if !mem.write(start, bytes) {
                    return Err(InstantiationError::DataOutOfBounds(i));
                }
                dropped_data[i] = true;
            }
        }

        let start = m.start;
        let mut inst = Instance {
            probes: ProbeRegistry::new(compiled.module.num_funcs()),
            compiled,
            memory,
            tables,
            globals,
            host_funcs,
            type_ids,
            dropped_data,
            dropped_elems,
        };
        if let Some(f) = start {
            interp::invoke(store, &mut inst, f, &[]).map_err(InstantiationError::Start)?;
        }
        Ok(inst)
    }

    pub fn compiled(&self) -> &Arc<CompiledModule> {
        &self.compiled
    }

    pub fn memory(&self) -> Option<&Memory> {
        self.memory.as_ref()
    }

    pub fn memory_mut(&mut self) -> Option<&mut Memory> {
        self.memory.as_mut()
    }

    pub fn table(&self, i: u32) -> Option<&Table> {
        self.tables.get(i as usize)
    }

    pub fn table_mut(&mut self, i: u32) -> Option<&mut Table> {
        self.tables.get_mut(i as usize)
    }

    pub fn global(&self, i: u32) -> Option<Value> {
        self.globals.get(i as usize).map(Global::value)
    }

    /// Index of the exported function `name`.
    pub fn exported_func(&self, name: &str) -> Option<u32> {
        self.compiled.module.export(name).filter(|e| e.kind == ExternKind::Func).map(|e| e.index)
    }

    pub fn func_type(&self, func: u32) -> Option<&FuncType> {
        self.compiled.module.func_type(func)
    }

    pub fn probes(&self) -> &ProbeRegistry {
        &self.probes
    }

    pub fn probes_mut(&mut self) -> &mut ProbeRegistry {
        &mut self.probes
    }
}

/// Evaluates a validated constant expression to a cell.
pub(crate) fn eval_const(e: &ConstExpr, globals: &[Global]) -> u64 {
    match *e {
        ConstExpr::I32(v) => Value::I32(v).to_cell(),
        ConstExpr::I64(v) => Value::I64(v).to_cell(),
        ConstExpr::F32(bits) => u64::from(bits),
        ConstExpr::F64(bits) => bits,
        ConstExpr::RefNull(_) => 0,
        ConstExpr::RefFunc(f) => ref_to_cell(Some(f)),
        ConstExpr::GlobalGet(g) => globals[g as usize].cell,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_roundtrip() {
        let vals = [
            Value::I32(-1),
            Value::I64(i64::MIN),
            Value::F32(-0.5),
            Value::F64(1e300),
            Value::FuncRef(None),
            Value::FuncRef(Some(0)),
            Value::ExternRef(Some(7)),
        ];
        for v in vals {
            assert_eq!(Value::from_cell(v.ty(), v.to_cell()), v);
        }
        assert_eq!(Value::I32(-1).to_cell(), 0xFFFF_FFFF);
    }

    #[test]
    fn table_grow() {
        let mut t = Table::new(TableType { elem: ValueType::FuncRef, limits: Limits { min: 1, max: Some(3) } });
        assert_eq!(t.grow(2, Some(4)), 1);
        assert_eq!(t.get(2), Some(Some(4)));
        assert_eq!(t.grow(1, None), -1);
        assert_eq!(t.size(), 3);
        assert!(!t.set(3, None));
    }
}
