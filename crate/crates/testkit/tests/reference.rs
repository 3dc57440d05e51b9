use sidewasm::binary::decode_module;
use sidewasm::binary::ValueType::*;
use sidewasm::interp::TrapKind;
use sidewasm::runtime::Value;
use sidewasm_testkit::{fixtures, reference_execute, values_equivalent, Code, ModuleBuilder, RefMachine, RefOutcome};

#[test]
fn fib_values_and_steps() {
    let m = decode_module(fixtures::fib().bytes).unwrap();
    let r = reference_execute(&m, 0, &[Value::I32(10)], 1_000_000);
    assert_eq!(r.outcome, RefOutcome::Values(vec![Value::I32(55)]));
    // local.get, i32.const, i32.lt_s, if, local.get, else, end, end
    assert_eq!(reference_execute(&m, 0, &[Value::I32(0)], 100).steps, 8);
}

#[test]
fn traps_have_engine_kinds() {
    let built = fixtures::traps();
    let m = decode_module(built.bytes).unwrap();
    for (name, args, kind) in [
        ("div_zero", vec![], TrapKind::IntegerDivideByZero),
        ("div_overflow", vec![], TrapKind::IntegerOverflow),
        ("trunc_nan", vec![], TrapKind::InvalidFloatConversion),
        ("unreachable", vec![], TrapKind::Unreachable),
        ("load", vec![Value::I32(65534)], TrapKind::MemoryOutOfBounds),
        ("indirect_null", vec![], TrapKind::IndirectNull),
        ("indirect_mismatch", vec![], TrapKind::IndirectSignatureMismatch),
        ("recurse", vec![Value::I32(0)], TrapKind::StackOverflow),
    ] {
        let f = m.export(name).unwrap().index;
        assert_eq!(reference_execute(&m, f, &args, 10_000_000).outcome, RefOutcome::Trap(kind), "{name}");
    }
}

#[test]
fn step_limit_is_inconclusive() {
    let mut b = ModuleBuilder::new();
    let mut c = Code::new();
    c.loop_(sidewasm_testkit::Bt::Empty).br(0).end().end();
    b.func(&[], &[], &[], c);
    let m = decode_module(b.build().bytes).unwrap();
    let r = reference_execute(&m, 0, &[], 1000);
    assert_eq!(r.outcome, RefOutcome::StepLimit);
    assert_eq!(r.steps, 1000);
}

#[test]
fn imports_are_unsupported() {
    let mut b = ModuleBuilder::new();
    b.import_func("env", "f", &[], &[]);
    let m = decode_module(b.build().bytes).unwrap();
    assert!(matches!(RefMachine::new(&m), Err(RefOutcome::Unsupported(_))));
}

#[test]
fn state_persists_across_invocations() {
    let built = fixtures::data_and_globals();
    let m = decode_module(built.bytes).unwrap();
    let mut r = RefMachine::new(&m).unwrap();
    assert_eq!(&r.memory()[..2], b"hi");
    let bump = m.export("bump").unwrap().index;
    let g = m.export("g").unwrap().index;
    r.invoke(bump, &[], 1000);
    assert_eq!(r.invoke(bump, &[], 1000).outcome, RefOutcome::Values(vec![Value::I32(44)]));
    assert_eq!(r.global(g), Some(Value::I32(44)));
}

#[test]
fn nan_payloads_compare_equal() {
    let a = [Value::F32(f32::NAN), Value::I32(1)];
    let b = [Value::F32(-f32::NAN), Value::I32(1)];
    assert!(values_equivalent(&a, &b));
    assert!(!values_equivalent(&[Value::F64(0.0)], &[Value::F64(-0.0)]));
    assert!(!values_equivalent(&[Value::I32(1)], &[Value::I64(1)]));
}

#[test]
fn multi_value_blocks() {
    let mut b = ModuleBuilder::new();
    let t = b.ty(&[I32, I32], &[I32, I32]);
    let mut c = Code::new();
    c.i32_const(1).i32_const(2).block(sidewasm_testkit::Bt::Type(t)).i32_add().i32_const(9).end().i32_sub().end();
    b.func(&[], &[I32], &[], c);
    let m = decode_module(b.build().bytes).unwrap();
    assert_eq!(reference_execute(&m, 0, &[], 100).outcome, RefOutcome::Values(vec![Value::I32(-6)]));
}
