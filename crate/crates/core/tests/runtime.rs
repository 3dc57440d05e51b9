use std::cell::Cell;
use std::rc::Rc;
use std::sync::Arc;

use proptest::prelude::*;
use sidewasm::binary::{FuncType, ValueType::*};
use sidewasm::interp::{invoke, Config, Store, TrapKind};
use sidewasm::runtime::{memory_access_check, Extern, Global, HostError, Imports, Instance, InstantiationError, Memory, Value};
use sidewasm_testkit::{fixtures, Bt, Built, Code, Init, ModuleBuilder};

fn compile(built: &Built) -> Arc<sidewasm::validator::CompiledModule> {
    Arc::new(sidewasm::compile(built.bytes.clone()).unwrap())
}

fn store() -> Store {
    Store::new(Config { stack_slots: 1 << 16, ..Config::default() })
}

#[test]
fn data_segment_is_copied() {
    let built = fixtures::data_and_globals();
    let mut store = store();
    let mut inst = Instance::instantiate(&mut store, compile(&built), &Imports::new()).unwrap();
    assert_eq!(&inst.memory().unwrap().data()[..3], &[0x68, 0x69, 0x00]);
    let g = inst.compiled().module.export("g").unwrap().index;
    assert_eq!(inst.global(g), Some(Value::I32(40)));
    let bump = inst.exported_func("bump").unwrap();
    assert_eq!(invoke(&mut store, &mut inst, bump, &[]), Ok(vec![Value::I32(42)]));
    assert_eq!(inst.global(g), Some(Value::I32(42)));
}

#[test]
fn host_function_doubles() {
    let mut b = ModuleBuilder::new();
    let double = b.import_func("env", "double", &[I32], &[I32]);
    let mut c = Code::new();
    c.local_get(0).call(double).end();
    let f = b.func(&[I32], &[I32], &[], c);
    b.export_func("run", f);
    let built = b.build();
    let calls = Rc::new(Cell::new(0));
    let seen = calls.clone();
    let mut imports = Imports::new();
    imports.func("env", "double", FuncType::new(vec![I32], vec![I32]), move |_, args| {
        seen.set(seen.get() + 1);
        Ok(vec![Value::I32(args[0].as_i32().unwrap() * 2)])
    });
    let mut store = store();
    let mut inst = Instance::instantiate(&mut store, compile(&built), &imports).unwrap();
    assert_eq!(invoke(&mut store, &mut inst, f, &[Value::I32(21)]), Ok(vec![Value::I32(42)]));
    // Imported functions can be invoked directly too.
    assert_eq!(invoke(&mut store, &mut inst, double, &[Value::I32(5)]), Ok(vec![Value::I32(10)]));
    assert_eq!(calls.get(), 2);
}

#[test]
fn host_errors_become_traps() {
    let mut b = ModuleBuilder::new();
    let fail = b.import_func("env", "fail", &[], &[]);
    let mut c = Code::new();
    c.call(fail).end();
    let f = b.func(&[], &[], &[], c);
    let built = b.build();
    let mut imports = Imports::new();
    imports.func("env", "fail", FuncType::new(vec![], vec![]), |_, _| Err(HostError::new("nope")));
    let mut store = store();
    let mut inst = Instance::instantiate(&mut store, compile(&built), &imports).unwrap();
    let t = invoke(&mut store, &mut inst, f, &[]).unwrap_err();
    assert_eq!(t.kind, TrapKind::HostError);
    assert_eq!(t.message.as_deref(), Some("nope"));
}

#[test]
fn host_callbacks_can_reenter() {
    let mut b = ModuleBuilder::new();
    let back = b.import_func("env", "back", &[I32], &[I32]);
    let mut c = Code::new();
    c.local_get(0).i32_eqz();
    c.if_(Bt::Val(I32)).i32_const(100).else_().local_get(0).i32_const(1).i32_sub().call(back).i32_const(1).i32_add().end();
    c.end();
    let f = b.func(&[I32], &[I32], &[], c);
    b.export_func("down", f);
    let built = b.build();
    let mut imports = Imports::new();
    imports.func("env", "back", FuncType::new(vec![I32], vec![I32]), move |caller, args| {
        let f = caller.instance.exported_func("down").unwrap();
        caller.invoke(f, args).map_err(|t| HostError::new(t.to_string()))
    });
    let mut store = store();
    let mut inst = Instance::instantiate(&mut store, compile(&built), &imports).unwrap();
    assert_eq!(invoke(&mut store, &mut inst, f, &[Value::I32(5)]), Ok(vec![Value::I32(105)]));
    assert_eq!(store.stack_top(), 0);
}

#[test]
fn data_past_memory_end_fails() {
    let mut b = ModuleBuilder::new();
    b.memory(1, None);
    b.data(Init::I32(65536), b"x");
    let e = Instance::instantiate(&mut store(), compile(&b.build()), &Imports::new()).err().unwrap();
    assert!(matches!(e, InstantiationError::DataOutOfBounds(0)));

    // An empty segment exactly at the end is fine.
    let mut b = ModuleBuilder::new();
    b.memory(1, None);
    b.data(Init::I32(65536), b"");
    assert!(Instance::instantiate(&mut store(), compile(&b.build()), &Imports::new()).is_ok());
}

#[test]
fn element_segment_bounds() {
    let mut b = ModuleBuilder::new();
    b.table(FuncRef, 2, None);
    let mut c = Code::new();
    c.end();
    let f = b.func(&[], &[], &[], c);
    b.elem(0, Init::I32(1), &[f, f]);
    let e = Instance::instantiate(&mut store(), compile(&b.build()), &Imports::new()).err().unwrap();
    assert!(matches!(e, InstantiationError::ElementOutOfBounds(0)));
}

#[test]
fn missing_and_mismatched_imports() {
    let mut b = ModuleBuilder::new();
    b.import_func("env", "f", &[I32], &[]);
    let built = b.build();
    let e = Instance::instantiate(&mut store(), compile(&built), &Imports::new()).err().unwrap();
    assert!(matches!(e, InstantiationError::MissingImport(m, n) if m == "env" && n == "f"));
    let mut imports = Imports::new();
    imports.func("env", "f", FuncType::new(vec![I64], vec![]), |_, _| Ok(vec![]));
    let e = Instance::instantiate(&mut store(), compile(&built), &imports).err().unwrap();
    assert!(matches!(e, InstantiationError::ImportMismatch(..)));
}

#[test]
fn imported_globals_and_memory() {
    let mut b = ModuleBuilder::new();
    b.import_memory("env", "mem", 1, Some(2));
    let g = b.import_global("env", "base", I32, false);
    let mut c = Code::new();
    c.global_get(g).i32_load(0).end();
    let f = b.func(&[], &[I32], &[], c);
    let built = b.build();
    let mut mem = Memory::new(1, Some(2)).unwrap();
    mem.write(8, &7i32.to_le_bytes());
    let mut imports = Imports::new();
    imports.define("env", "mem", Extern::Memory(mem)).define("env", "base", Extern::Global(Global::new(Value::I32(8), false)));
    let mut store = store();
    let mut inst = Instance::instantiate(&mut store, compile(&built), &imports).unwrap();
    assert_eq!(invoke(&mut store, &mut inst, f, &[]), Ok(vec![Value::I32(7)]));
}

#[test]
fn start_function_runs_and_traps_surface() {
    let mut b = ModuleBuilder::new();
    let g = b.global(I32, true, Init::I32(0));
    let mut c = Code::new();
    c.i32_const(9).global_set(g).end();
    let s = b.func(&[], &[], &[], c);
    b.start(s);
    let inst = Instance::instantiate(&mut store(), compile(&b.build()), &Imports::new()).unwrap();
    assert_eq!(inst.global(g), Some(Value::I32(9)));

    let mut b = ModuleBuilder::new();
    let mut c = Code::new();
    c.unreachable().end();
    let s = b.func(&[], &[], &[], c);
    b.start(s);
    let e = Instance::instantiate(&mut store(), compile(&b.build()), &Imports::new()).err().unwrap();
    assert!(matches!(e, InstantiationError::Start(t) if t.kind == TrapKind::Unreachable));
}

#[test]
fn access_check_examples() {
    let m = Memory::new(1, None).unwrap();
    assert_eq!(memory_access_check(&m, 0, 0, 4), Some(0));
    assert_eq!(memory_access_check(&m, 65532, 0, 4), Some(65532));
    assert_eq!(memory_access_check(&m, 65533, 0, 4), None);
    assert_eq!(memory_access_check(&m, u32::MAX, u32::MAX, 8), None);
}

proptest! {
    #[test]
    fn access_check_matches_wide_arithmetic(addr in any::<u32>(), offset in any::<u32>(), width in prop::sample::select(vec![1u32, 2, 4, 8]), pages in 0u32..3) {
        let m = Memory::new(pages, None).unwrap();
        let end = u128::from(addr) + u128::from(offset) + u128::from(width);
        let expect = (end <= m.len() as u128).then(|| (u128::from(addr) + u128::from(offset)) as usize);
        prop_assert_eq!(memory_access_check(&m, addr, offset, width), expect);
    }
}

#[test]
fn memory_grow_respects_maximum() {
    let mut b = ModuleBuilder::new();
    b.memory(1, Some(3));
    let mut c = Code::new();
    c.local_get(0).memory_grow().end();
    let f = b.func(&[I32], &[I32], &[], c);
    let mut store = store();
    let mut inst = Instance::instantiate(&mut store, compile(&b.build()), &Imports::new()).unwrap();
    assert_eq!(invoke(&mut store, &mut inst, f, &[Value::I32(1)]), Ok(vec![Value::I32(1)]));
    assert_eq!(invoke(&mut store, &mut inst, f, &[Value::I32(2)]), Ok(vec![Value::I32(-1)]));
    assert_eq!(invoke(&mut store, &mut inst, f, &[Value::I32(1)]), Ok(vec![Value::I32(2)]));
    assert_eq!(inst.memory().unwrap().pages(), 3);
}
