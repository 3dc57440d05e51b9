use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::Arc;

use proptest::prelude::*;
use sidewasm::binary::ValueType::{self, *};
use sidewasm::interp::{
    apply_deltas, br_table_entry, invoke, move_values, route, stp_not_taken, BranchEvent, Config, Route, Store, Trap,
    TrapKind,
};
use sidewasm::probes::{probe, ProbeAction};
use sidewasm::runtime::{Imports, Instance, Value};
use sidewasm::validator::{CompiledModule, SidetableEntry};
use sidewasm_testkit::{fixtures, reference_execute, scan_branch_target, Bt, Built, Code, Init, ModuleBuilder, RefOutcome};

fn compile(built: &Built) -> Arc<CompiledModule> {
    Arc::new(sidewasm::compile(built.bytes.clone()).unwrap())
}

fn store() -> Store {
    Store::new(Config { stack_slots: 1 << 16, ..Config::default() })
}

fn run(built: &Built, func: u32, args: &[Value]) -> Result<Vec<Value>, Trap> {
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(built), &Imports::new()).unwrap();
    invoke(&mut s, &mut inst, func, args)
}

fn one(params: &[ValueType], results: &[ValueType], locals: &[ValueType], code: Code) -> Built {
    let mut b = ModuleBuilder::new();
    b.func(params, results, locals, code);
    b.build()
}

/// Runs with a branch observer and returns the result and every event.
fn observed(built: &Built, func: u32, args: &[Value]) -> (Result<Vec<Value>, TrapKind>, Vec<BranchEvent>) {
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(built), &Imports::new()).unwrap();
    let events: Rc<RefCell<Vec<BranchEvent>>> = Rc::default();
    let e = events.clone();
    s.set_branch_observer(move |ev| e.borrow_mut().push(*ev));
    let r = invoke(&mut s, &mut inst, func, args).map_err(|t| t.kind);
    let v = events.borrow().clone();
    (r, v)
}

#[test]
fn fib_ten() {
    assert_eq!(run(&fixtures::fib(), 0, &[Value::I32(10)]), Ok(vec![Value::I32(55)]));
}

#[test]
fn empty_body() {
    let mut c = Code::new();
    c.end();
    assert_eq!(run(&one(&[], &[], &[], c), 0, &[]), Ok(vec![]));
}

#[test]
fn argument_types_are_checked() {
    let built = fixtures::fib();
    assert_eq!(run(&built, 0, &[Value::I64(1)]).unwrap_err().kind, TrapKind::HostError);
    assert_eq!(run(&built, 0, &[]).unwrap_err().kind, TrapKind::HostError);
}

#[test]
fn unbounded_recursion_overflows_then_recovers() {
    let built = fixtures::traps();
    let c = compile(&built);
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, c, &Imports::new()).unwrap();
    let recurse = inst.exported_func("recurse").unwrap();
    let ok = inst.exported_func("ok").unwrap();
    for _ in 0..3 {
        assert_eq!(invoke(&mut s, &mut inst, recurse, &[Value::I32(0)]).unwrap_err().kind, TrapKind::StackOverflow);
        assert_eq!(invoke(&mut s, &mut inst, ok, &[]), Ok(vec![Value::I32(7)]));
        assert_eq!(s.stack_top(), 0);
    }
}

#[test]
fn depth_limit_stops_before_callee_runs() {
    let mut c = Code::new();
    c.call(0).end();
    let built = one(&[], &[], &[], c);
    for limit in [1usize, 2, 17] {
        let mut s = Store::new(Config { max_frames: limit, stack_slots: 1 << 12, ..Config::default() });
        let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
        let entered = Rc::new(Cell::new(0usize));
        let e = entered.clone();
        inst.insert_local_probe(0, built.offset(0, 0), probe(move |_| {
            e.set(e.get() + 1);
            ProbeAction::Continue
        }))
        .unwrap();
        assert_eq!(invoke(&mut s, &mut inst, 0, &[]).unwrap_err().kind, TrapKind::StackOverflow);
        assert_eq!(entered.get(), limit);
    }
}

#[test]
fn value_stack_exhaustion_traps() {
    let mut c = Code::new();
    c.local_get(0).i32_const(1).i32_add().call(0).end();
    let built = one(&[I32], &[I32], &[I64; 30], c);
    let mut s = Store::new(Config { stack_slots: 1000, max_frames: 100_000, ..Config::default() });
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    assert_eq!(invoke(&mut s, &mut inst, 0, &[Value::I32(0)]).unwrap_err().kind, TrapKind::StackOverflow);
}

#[test]
fn control_transfer_arithmetic() {
    let e = |a, b, c, d| SidetableEntry { delta_ip: a, delta_stp: b, valcnt: c, popcnt: d };
    assert_eq!(apply_deltas(100, 3, &e(12, 1, 0, 0)), (112, 4));
    assert_eq!(apply_deltas(140, 5, &e(-40, -2, 1, 0)), (100, 3));
    assert_eq!(apply_deltas(77, 9, &e(0, 0, 2, 1)), (77, 9));
    assert_eq!(stp_not_taken(0), 1);
    assert_eq!(br_table_entry(4, 2, 5), 7);
    assert_eq!(br_table_entry(4, 9, 5), 10);
    assert_eq!(br_table_entry(4, 0, 0), 5);
}

#[test]
fn loop_back_edge_lands_on_loop() {
    // A loop that counts down with a br_if back edge.
    let (built, _) = fixtures::sum_loop();
    let (r, events) = observed(&built, 0, &[Value::I32(4)]);
    assert_eq!(r, Ok(vec![Value::I32(10)]));
    let m = &compile(&built).module;
    let back: Vec<&BranchEvent> = events.iter().filter(|e| e.target_ip < e.origin).collect();
    assert_eq!(back.len(), 3);
    for e in back {
        assert_eq!(m.bytes()[e.target_ip], 0x03);
        let scan = scan_branch_target(m, 0, e.origin, 0).unwrap();
        assert_eq!(scan.target_ip, e.target_ip);
    }
}

#[test]
fn move_values_examples() {
    let mut s = vec![9, 1, 2, 3, 0, 0];
    assert_eq!(move_values(&mut s, 4, 0, 0), 4);
    assert_eq!(s, [9, 1, 2, 3, 0, 0]);
    assert_eq!(move_values(&mut s, 4, 1, 2), 2);
    assert_eq!(&s[..2], &[9, 3]);
    let mut s = vec![7, 5, 6];
    assert_eq!(move_values(&mut s, 3, 2, 1), 2);
    assert_eq!(&s[..2], &[5, 6]);
}

proptest! {
    #[test]
    fn move_values_matches_list_stack(cells in proptest::collection::vec(any::<u64>(), 0..24), v in 0u32..6, p in 0u32..6) {
        let n = cells.len();
        prop_assume!((v + p) as usize <= n);
        let mut reference = cells.clone();
        let kept: Vec<u64> = reference.split_off(n - v as usize);
        reference.truncate(reference.len() - p as usize);
        reference.extend(kept);
        let mut slots = cells.clone();
        slots.extend([0; 4]);
        let vsp = move_values(&mut slots, n, v, p);
        prop_assert_eq!(vsp, reference.len());
        prop_assert_eq!(&slots[..vsp], &reference[..]);
    }
}

fn br_if_fixture() -> Built {
    let mut c = Code::new();
    c.block(Bt::Val(I32));
    c.i32_const(10);
    c.local_get(0).br_if(0);
    c.drop().i32_const(20);
    c.end();
    c.end();
    one(&[I32], &[I32], &[], c)
}

#[test]
fn br_if_condition() {
    let built = br_if_fixture();
    for (cond, expect, taken) in [(1, 10, 1), (0, 20, 0), (-1, 10, 1)] {
        let (r, events) = observed(&built, 0, &[Value::I32(cond)]);
        assert_eq!(r, Ok(vec![Value::I32(expect)]), "cond {cond}");
        assert_eq!(events.len(), taken);
    }
}

#[test]
fn br_if_not_taken_moves_one_entry() {
    let mut c = Code::new();
    c.block(Bt::Empty);
    c.local_get(0).br_if(0);
    c.local_get(0).br_if(0);
    c.br(0);
    c.end();
    c.end();
    let built = one(&[I32], &[], &[], c);
    let (_, events) = observed(&built, 0, &[Value::I32(0)]);
    assert_eq!(events.len(), 1);
    assert_eq!(events[0].entry, 2);
}

fn br_table_fixture(cases: u32) -> Built {
    // Case k returns 100 + k; the default returns 999.
    let mut c = Code::new();
    for _ in 0..=cases {
        c.block(Bt::Empty);
    }
    let targets: Vec<u32> = (0..cases).collect();
    c.local_get(0).br_table(&targets, cases);
    for k in 0..=cases {
        c.end();
        c.i32_const(if k == cases { 999 } else { 100 + k as i32 }).return_();
    }
    c.unreachable().end();
    one(&[I32], &[I32], &[], c)
}

#[test]
fn br_table_selects_and_clamps() {
    let built = br_table_fixture(5);
    let st = &compile(&built).functions[0].sidetable;
    assert_eq!(st.entries()[0].maxcase(), 5);
    for key in [0i32, 2, 4, 5, 9, -1, i32::MAX] {
        let (r, events) = observed(&built, 0, &[Value::I32(key)]);
        let k = (key as u32).min(5);
        let expect = if k == 5 { 999 } else { 100 + k as i32 };
        assert_eq!(r, Ok(vec![Value::I32(expect)]), "key {key}");
        assert_eq!(events[0].entry, 1 + k as usize, "key {key}");
        let reference = reference_execute(&compile(&built).module, 0, &[Value::I32(key)], 10_000);
        assert_eq!(reference.outcome, RefOutcome::Values(vec![Value::I32(expect)]));
    }
    let lone = br_table_fixture(0);
    assert_eq!(run(&lone, 0, &[Value::I32(0)]), Ok(vec![Value::I32(999)]));
    assert_eq!(run(&lone, 0, &[Value::I32(3)]), Ok(vec![Value::I32(999)]));
}

#[test]
fn call_args_stay_in_place() {
    // Caller with 8 locals pushes two arguments: they sit in slots 8 and 9.
    let mut b = ModuleBuilder::new();
    let mut callee = Code::new();
    callee.local_get(0).local_get(1).i32_sub().end();
    let callee_f = b.func(&[I32, I32], &[I32], &[], callee);
    let mut caller = Code::new();
    caller.i32_const(50).i32_const(8).call(callee_f).end();
    let caller_f = b.func(&[], &[I32], &[I32; 8], caller);
    let built = b.build();
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    let base = Rc::new(Cell::new(usize::MAX));
    let bb = base.clone();
    inst.insert_local_probe(callee_f, built.offset(callee_f, 0), probe(move |ctx| {
        bb.set(ctx.view().frame_base());
        ProbeAction::Continue
    }))
    .unwrap();
    assert_eq!(invoke(&mut s, &mut inst, caller_f, &[]), Ok(vec![Value::I32(42)]));
    assert_eq!(base.get(), 8);
}

#[test]
fn results_land_at_callee_frame_base() {
    let mut b = ModuleBuilder::new();
    let mut callee = Code::new();
    callee.i32_const(7).end();
    let callee_f = b.func(&[], &[I32], &[], callee);
    let mut caller = Code::new();
    caller.i32_const(1).i32_const(2);
    caller.call(callee_f);
    let after = caller.here();
    caller.i32_add().i32_add().end();
    let caller_f = b.func(&[], &[I32], &[I32, I32], caller);
    let built = b.build();
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    let callee_base = Rc::new(Cell::new(0));
    let cb = callee_base.clone();
    inst.insert_local_probe(callee_f, built.offset(callee_f, 0), probe(move |ctx| {
        cb.set(ctx.view().frame_base());
        ProbeAction::Continue
    }))
    .unwrap();
    let top = Rc::new(Cell::new((0usize, 0i32)));
    let t = top.clone();
    inst.insert_local_probe(caller_f, built.offset(caller_f, after), probe(move |ctx| {
        let v = ctx.view();
        t.set((v.frame_base() + v.num_locals() + v.stack_height() - 1, v.peek_i32(0).unwrap()));
        ProbeAction::Continue
    }))
    .unwrap();
    assert_eq!(invoke(&mut s, &mut inst, caller_f, &[]), Ok(vec![Value::I32(10)]));
    assert_eq!(top.get(), (callee_base.get(), 7));
}

#[test]
fn void_call_restores_height() {
    let mut b = ModuleBuilder::new();
    let mut callee = Code::new();
    callee.i32_const(1).drop().end();
    let callee_f = b.func(&[I32, I32], &[], &[I32], callee);
    let mut caller = Code::new();
    caller.i32_const(5).i32_const(1).i32_const(2);
    caller.call(callee_f);
    let after = caller.here();
    caller.end();
    let caller_f = b.func(&[], &[I32], &[], caller);
    let built = b.build();
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    let h = Rc::new(Cell::new(usize::MAX));
    let hh = h.clone();
    inst.insert_local_probe(caller_f, built.offset(caller_f, after), probe(move |ctx| {
        hh.set(ctx.view().stack_height());
        ProbeAction::Continue
    }))
    .unwrap();
    assert_eq!(invoke(&mut s, &mut inst, caller_f, &[]), Ok(vec![Value::I32(5)]));
    assert_eq!(h.get(), 1);
}

#[test]
fn explicit_return_matches_fallthrough() {
    let body = |explicit: bool| {
        let mut c = Code::new();
        c.i32_const(3).local_get(0).local_get(0).i32_mul().i32_const(1).i32_add();
        if explicit {
            c.return_();
        } else {
            c.local_set(1).drop().local_get(1);
        }
        c.end();
        one(&[I32], &[I32], &[I32], c)
    };
    for x in [-3, 0, 5, 40_000] {
        assert_eq!(run(&body(true), 0, &[Value::I32(x)]), run(&body(false), 0, &[Value::I32(x)]));
    }
}

#[test]
fn indirect_call_checks() {
    let built = fixtures::traps();
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    for (name, kind) in [
        ("indirect_null", TrapKind::IndirectNull),
        ("indirect_mismatch", TrapKind::IndirectSignatureMismatch),
        ("indirect_oob", TrapKind::TableOutOfBounds),
    ] {
        let f = inst.exported_func(name).unwrap();
        assert_eq!(invoke(&mut s, &mut inst, f, &[]).unwrap_err().kind, kind, "{name}");
    }
}

#[test]
fn trap_reports_offset_and_function() {
    let built = fixtures::traps();
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    let f = inst.exported_func("div_zero").unwrap();
    let t = invoke(&mut s, &mut inst, f, &[]).unwrap_err();
    assert_eq!(t.func, f);
    // i32.const 1; i32.const 0; i32.div_u
    assert_eq!(t.offset, built.offset(f, 4));
    assert_eq!(t.kind.name(), "integer-divide-by-zero");
}

#[test]
fn dispatch_routes() {
    assert_eq!(route(&[0x41, 0x00], 0), Route { depth: 1, opcode: 0x41, sub: None });
    assert_eq!(route(&[0xFC, 0x0A, 0x00, 0x00], 0).depth, 2);
    assert_eq!(route(&[0xFD, 0x80, 0x01], 0).depth, 3);
}

#[test]
fn prefix_dispatches_are_counted() {
    let mut b = ModuleBuilder::new();
    b.memory(1, None);
    let mut c = Code::new();
    c.i32_const(0).i32_const(7).i32_const(4).memory_fill();
    c.i32_const(8).i32_const(0).i32_const(4).memory_copy();
    c.i32_const(10).i32_load(0).end();
    let f = b.func(&[], &[I32], &[], c);
    let built = b.build();
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    assert_eq!(invoke(&mut s, &mut inst, f, &[]), Ok(vec![Value::I32(0x0707)]));
    assert_eq!(s.stats().prefix_dispatches, 2);
    assert_eq!(s.stats().leb_dispatches, 0);
}

#[test]
fn numeric_examples() {
    let built = fixtures::traps();
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    let div_s = inst.exported_func("div_s").unwrap();
    assert_eq!(invoke(&mut s, &mut inst, div_s, &[Value::I32(-7), Value::I32(2)]), Ok(vec![Value::I32(-3)]));
    let k = |name: &str, s: &mut Store, inst: &mut Instance| {
        let f = inst.exported_func(name).unwrap();
        invoke(s, inst, f, &[]).unwrap_err().kind
    };
    assert_eq!(k("div_overflow", &mut s, &mut inst), TrapKind::IntegerOverflow);
    assert_eq!(k("trunc_nan", &mut s, &mut inst), TrapKind::InvalidFloatConversion);
}

/// `f(a, b) = a <op> b` for a one-byte binary opcode.
fn binop(op: u8, t: ValueType) -> Built {
    let mut c = Code::new();
    c.local_get(0).local_get(1).op(op).end();
    let result = if (0x46..=0x4f).contains(&op) || (0x51..=0x5a).contains(&op) { I32 } else { t };
    one(&[t, t], &[result], &[], c)
}

fn i32_oracle(op: u8, a: i32, b: i32) -> Result<i32, TrapKind> {
    let (ua, ub) = (a as u32, b as u32);
    Ok(match op {
        0x46 => (a == b) as i32,
        0x48 => (a < b) as i32,
        0x49 => (ua < ub) as i32,
        0x6a => a.wrapping_add(b),
        0x6b => a.wrapping_sub(b),
        0x6c => a.wrapping_mul(b),
        0x6d => {
            if b == 0 {
                return Err(TrapKind::IntegerDivideByZero);
            }
            a.checked_div(b).ok_or(TrapKind::IntegerOverflow)?
        }
        0x6e => ua.checked_div(ub).ok_or(TrapKind::IntegerDivideByZero)? as i32,
        0x6f => {
            if b == 0 {
                return Err(TrapKind::IntegerDivideByZero);
            }
            a.wrapping_rem(b)
        }
        0x70 => ua.checked_rem(ub).ok_or(TrapKind::IntegerDivideByZero)? as i32,
        0x71 => a & b,
        0x72 => a | b,
        0x73 => a ^ b,
        0x74 => a.wrapping_shl(ub),
        0x75 => a.wrapping_shr(ub),
        0x76 => ua.wrapping_shr(ub) as i32,
        0x77 => ua.rotate_left(ub % 32) as i32,
        0x78 => ua.rotate_right(ub % 32) as i32,
        _ => unreachable!(),
    })
}

fn i64_oracle(op: u8, a: i64, b: i64) -> Result<i64, TrapKind> {
    let (ua, ub) = (a as u64, b as u64);
    Ok(match op {
        0x7c => a.wrapping_add(b),
        0x7d => a.wrapping_sub(b),
        0x7e => a.wrapping_mul(b),
        0x7f => {
            if b == 0 {
                return Err(TrapKind::IntegerDivideByZero);
            }
            a.checked_div(b).ok_or(TrapKind::IntegerOverflow)?
        }
        0x80 => ua.checked_div(ub).ok_or(TrapKind::IntegerDivideByZero)? as i64,
        0x86 => a.wrapping_shl(ub as u32),
        0x87 => a.wrapping_shr(ub as u32),
        0x89 => ua.rotate_left((ub % 64) as u32) as i64,
        _ => unreachable!(),
    })
}

fn interesting_i32() -> impl Strategy<Value = i32> {
    prop_oneof![any::<i32>(), Just(0), Just(-1), Just(i32::MIN), Just(i32::MAX), -40i32..40]
}

fn interesting_i64() -> impl Strategy<Value = i64> {
    prop_oneof![any::<i64>(), Just(0), Just(-1), Just(i64::MIN), Just(i64::MAX), -70i64..70]
}

proptest! {
    #[test]
    fn i32_ops_match_native(op in prop::sample::select(vec![0x46u8, 0x48, 0x49, 0x6a, 0x6b, 0x6c, 0x6d, 0x6e, 0x6f, 0x70, 0x71, 0x72, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78]), a in interesting_i32(), b in interesting_i32()) {
        let got = run(&binop(op, I32), 0, &[Value::I32(a), Value::I32(b)]).map_err(|t| t.kind);
        prop_assert_eq!(got, i32_oracle(op, a, b).map(|v| vec![Value::I32(v)]));
    }

    #[test]
    fn i64_ops_match_native(op in prop::sample::select(vec![0x7cu8, 0x7d, 0x7e, 0x7f, 0x80, 0x86, 0x87, 0x89]), a in interesting_i64(), b in interesting_i64()) {
        let got = run(&binop(op, I64), 0, &[Value::I64(a), Value::I64(b)]).map_err(|t| t.kind);
        prop_assert_eq!(got, i64_oracle(op, a, b).map(|v| vec![Value::I64(v)]));
    }

    #[test]
    fn f64_arithmetic_matches_native(a in any::<f64>(), b in any::<f64>()) {
        for (op, f) in [(0xa0u8, a + b), (0xa1, a - b), (0xa2, a * b), (0xa3, a / b)] {
            let got = run(&binop(op, F64), 0, &[Value::F64(a), Value::F64(b)]).unwrap();
            match got[0] {
                Value::F64(x) => prop_assert!(x.to_bits() == f.to_bits() || (x.is_nan() && f.is_nan())),
                ref v => prop_assert!(false, "{v:?}"),
            }
        }
    }

    #[test]
    fn f32_values_survive_a_round_trip(bits in any::<u32>()) {
        let mut c = Code::new();
        c.local_get(0).end();
        let got = run(&one(&[F32], &[F32], &[], c), 0, &[Value::F32(f32::from_bits(bits))]).unwrap();
        match got[0] {
            Value::F32(x) => prop_assert_eq!(x.to_bits(), bits),
            ref v => prop_assert!(false, "{v:?}"),
        }
    }
}

#[test]
fn tags_do_not_change_results() {
    for seed in 0..40 {
        let g = sidewasm_testkit::generate_random_structured(seed, 60);
        let c = Arc::new(sidewasm::compile(g.bytes.clone()).unwrap());
        let mut outs = Vec::new();
        for tags in [false, true] {
            let mut s = Store::new(Config { tags, stack_slots: 1 << 16, ..Config::default() });
            let mut inst = Instance::instantiate(&mut s, c.clone(), &Imports::new()).unwrap();
            outs.push(invoke(&mut s, &mut inst, g.entry, &[]).map_err(|t| t.kind));
            if tags {
                assert!(!s.tags().is_empty());
            }
        }
        assert_eq!(outs[0], outs[1], "seed {seed}");
    }
}

#[test]
fn globals_and_tables() {
    let mut b = ModuleBuilder::new();
    let t = b.table(FuncRef, 3, None);
    let g = b.global(I64, true, Init::I64(5));
    let mut c = Code::new();
    c.end();
    let f = b.func(&[], &[], &[], c);
    let mut c = Code::new();
    c.global_get(g).i64_const(3).i64_mul().global_set(g);
    c.i32_const(2).ref_func(f).table_set(t);
    c.i32_const(2).table_get(t).ref_is_null();
    c.end();
    let main = b.func(&[], &[I32], &[], c);
    b.elem(t, Init::I32(0), &[f]);
    let built = b.build();
    let mut s = store();
    let mut inst = Instance::instantiate(&mut s, compile(&built), &Imports::new()).unwrap();
    assert_eq!(invoke(&mut s, &mut inst, main, &[]), Ok(vec![Value::I32(0)]));
    assert_eq!(inst.global(g), Some(Value::I64(15)));
    assert_eq!(inst.table(t).unwrap().get(2), Some(Some(f)));
}
