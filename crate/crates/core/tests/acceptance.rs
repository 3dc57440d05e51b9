//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::{Cell, RefCell};
use std::hash::{DefaultHasher, Hash, Hasher};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use sidewasm::binary::Module;
use sidewasm::interp::{apply_deltas, br_table_entry, invoke, stp_not_taken, BranchEvent, Config, Store, TrapKind};
use sidewasm::metrics::SpaceReport;
use sidewasm::probes::{probe, ProbeAction};
use sidewasm::runtime::{Imports, Instance, Value};
use sidewasm::validator::{CompiledModule, SidetableEntry};
use sidewasm_testkit::decode::{decode_all, Imm, Instr};
use sidewasm_testkit::{
    fixtures, generate_random_structured, reference_execute, scan_branch_target, values_equivalent, Bt, Built, Code,
    FuncScan, ModuleBuilder, RefOutcome,
};

// Allocation audit: while armed, records every allocation size.
struct Audit;

static ARMED: AtomicBool = AtomicBool::new(false);
static LARGEST: AtomicUsize = AtomicUsize::new(0);
static TOTAL: AtomicUsize = AtomicUsize::new(0);

fn record(size: usize) {
    if ARMED.load(Ordering::Relaxed) {
        LARGEST.fetch_max(size, Ordering::Relaxed);
        TOTAL.fetch_add(size, Ordering::Relaxed);
    }
}

unsafe impl GlobalAlloc for Audit {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        record(layout.size());
        System.alloc(layout)
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        record(new_size);
        System.realloc(ptr, layout, new_size)
    }
}

#[global_allocator]
static GLOBAL: Audit = Audit;

const SEEDS: u64 = 1000;
const BUDGET: usize = 80;
const STEP_LIMIT: u64 = 5_000_000;

type Outcome = Result<String, String>;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("sidetable matches the scan oracle", c1_oracle_equivalence),
        ("differential execution against the reference", c2_differential),
        ("branch-free functions have empty sidetables; entry-count law", c3_empty_and_count_law),
        ("compact sidetable space ratio", c4_space_ratio),
        ("constant-time branches", c5_constant_time),
        ("trap kinds and recovery", c6_traps),
        ("zero-copy calls", c7_zero_copy),
        ("probe transparency and counting", c8_probes),
        ("in-place execution", c9_in_place),
        ("register arithmetic of branch transfers", c10_register_arithmetic),
    ];
    let quiet = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match r {
            Ok(detail) => println!("criterion {}: PASS  {name} [{detail}] ({secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} [{why}] ({secs:.1}s)", i + 1);
            }
        }
    }
    std::panic::set_hook(quiet);
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn compile(bytes: &[u8]) -> Arc<CompiledModule> {
    Arc::new(sidewasm::compile(bytes.to_vec()).expect("module validates"))
}

fn instance(store: &mut Store, compiled: &Arc<CompiledModule>) -> Instance {
    Instance::instantiate(store, compiled.clone(), &Imports::new()).expect("instantiates")
}

fn body_instrs(module: &Module, func: u32) -> Vec<Instr> {
    let body = &module.defined_function(func).unwrap().body;
    decode_all(module.bytes(), body.code_start, body.code_end).unwrap()
}

/// Hand fixtures with at least one function, as `(name, built)`.
fn hand_fixtures() -> Vec<(String, Built)> {
    let mut v = vec![
        ("fib".to_string(), fixtures::fib()),
        ("sum_loop".into(), fixtures::sum_loop().0),
        ("traps".into(), fixtures::traps()),
        ("branch_distance(10)".into(), fixtures::branch_distance(10)),
        ("branch_distance(300)".into(), fixtures::branch_distance(300)),
        ("straight_line".into(), fixtures::straight_line(8, 40)),
        ("data_and_globals".into(), fixtures::data_and_globals()),
        ("br_table_shapes".into(), br_table_shapes()),
    ];
    for seed in 0..6 {
        v.push((format!("compiled_style({seed})"), fixtures::compiled_style(seed, 4)));
    }
    for (k, (a, r)) in [(0, 0), (1, 1), (2, 1), (3, 2), (5, 3)].into_iter().enumerate() {
        v.push((format!("call_shape({a},{r})"), fixtures::call_shape(a, r, k as u64)));
    }
    v
}

/// `br_table` in value-carrying, unreachable and nested positions.
fn br_table_shapes() -> Built {
    use sidewasm::binary::ValueType::I32;
    let mut b = ModuleBuilder::new();
    let mut c = Code::new();
    c.block(Bt::Val(I32));
    c.block(Bt::Empty);
    c.block(Bt::Empty);
    c.i32_const(11).i32_const(22).drop();
    c.local_get(0).br_table(&[0, 1, 0, 1], 1);
    c.end();
    c.i32_const(1).br(1);
    c.end();
    c.i32_const(2).br(0);
    c.end();
    c.end();
    let f = b.func(&[I32], &[I32], &[], c);
    b.export_func("pick", f);

    let mut c = Code::new();
    c.block(Bt::Val(I32));
    c.i32_const(5);
    c.local_get(0).br_table(&[0], 0);
    c.br(0);
    c.br_table(&[0, 0, 0], 0);
    c.end();
    c.end();
    b.func(&[I32], &[I32], &[], c);
    b.build()
}

/// Mismatches between the emitted sidetable of each defined function and
/// both oracle views: the full expected-entry list and per-branch scans.
fn oracle_mismatches(compiled: &CompiledModule) -> Result<usize, String> {
    let module = &compiled.module;
    let mut bad = 0;
    for vf in &compiled.functions {
        let f = vf.func_index;
        let scan = FuncScan::new(module, f).map_err(|e| e.to_string())?;
        let exp = scan.expected_entries().map_err(|e| e.to_string())?;
        let st = &vf.sidetable;
        if exp.len() != st.len() {
            bad += 1;
            continue;
        }
        for (k, (e, w)) in st.entries().iter().zip(&exp).enumerate() {
            let got = (st.origins()[k] as usize, st.target_ip(k), (k as i64 + i64::from(e.delta_stp)) as usize, e.valcnt, e.popcnt);
            if got != (w.origin, w.target_ip, w.target_stp, w.valcnt, w.popcnt) {
                bad += 1;
            }
        }
        // Per-branch scans, independent of emission order.
        let instrs = &scan.instrs;
        let mut k = 0;
        for ins in instrs {
            let depths: Vec<Option<u32>> = match (&ins.op, &ins.imm) {
                (0x04 | 0x05, _) => vec![Some(0)],
                (0x0c | 0x0d, Imm::Idx(d)) => vec![Some(*d)],
                (0x0e, Imm::Table(t, d)) => {
                    let mut v = vec![None];
                    v.extend(t.iter().chain([d]).map(|&x| Some(x)));
                    v
                }
                _ => continue,
            };
            for depth in depths {
                if let Some(depth) = depth {
                    let Some(e) = st.entries().get(k) else {
                        bad += 1;
                        break;
                    };
                    let s = scan_branch_target(module, f, ins.pos, depth).map_err(|e| e.to_string())?;
                    if (st.target_ip(k), e.valcnt, e.popcnt) != (s.target_ip, s.valcnt, s.popcnt) {
                        bad += 1;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(bad)
}

fn c1_oracle_equivalence() -> Outcome {
    let mut bad = 0;
    let mut entries = 0;
    for seed in 0..SEEDS {
        let g = generate_random_structured(seed, BUDGET);
        let c = compile(&g.bytes);
        entries += SpaceReport::of(&c).sidetable_entries;
        let n = oracle_mismatches(&c)?;
        ensure(n == 0, || format!("seed {seed}: {n} mismatches"))?;
        bad += n;
    }
    let fixtures = hand_fixtures();
    for (name, built) in &fixtures {
        let c = compile(&built.bytes);
        entries += SpaceReport::of(&c).sidetable_entries;
        let n = oracle_mismatches(&c)?;
        ensure(n == 0, || format!("{name}: {n} mismatches"))?;
        bad += n;
    }
    Ok(format!("{SEEDS} seeds + {} fixtures, {entries} entries, {bad} mismatches", fixtures.len()))
}

fn c2_differential() -> Outcome {
    let (mut values, mut traps, mut limits) = (0, 0, 0);
    let mut stores = [Store::new(Config::default()), Store::new(Config { tags: true, ..Config::default() })];
    for seed in 0..SEEDS {
        let g = generate_random_structured(seed, BUDGET);
        let c = compile(&g.bytes);
        let store = &mut stores[(seed % 2) as usize];
        let mut inst = instance(store, &c);
        let engine = invoke(store, &mut inst, g.entry, &[]);
        let r = reference_execute(&c.module, g.entry, &[], STEP_LIMIT);
        match (&engine, &r.outcome) {
            (Ok(a), RefOutcome::Values(b)) if values_equivalent(a, b) => values += 1,
            (Err(t), RefOutcome::Trap(k)) if t.kind == *k => traps += 1,
            (_, RefOutcome::StepLimit) => limits += 1,
            _ => return Err(format!("seed {seed}: engine {engine:?}, reference {:?}", r.outcome)),
        }
        if let (Ok(_), Some(mem)) = (&engine, inst.memory()) {
            let mut m = sidewasm_testkit::RefMachine::new(&c.module).map_err(|e| format!("{e:?}"))?;
            m.invoke(g.entry, &[], STEP_LIMIT);
            ensure(mem.data() == m.memory(), || format!("seed {seed}: memory differs"))?;
        }
    }
    ensure(values + traps >= 500, || format!("only {} comparable runs", values + traps))?;
    Ok(format!("{SEEDS} seeds: {values} value results, {traps} traps, {limits} over step limit, 0 divergences"))
}

fn has_branch(instrs: &[Instr]) -> bool {
    instrs.iter().any(|i| matches!(i.op, 0x04 | 0x05 | 0x0c | 0x0d | 0x0e))
}

fn c3_empty_and_count_law() -> Outcome {
    let mut branch_free = 0;
    let mut functions = 0;
    let mut check = |c: &CompiledModule, what: &str| -> Result<(), String> {
        for vf in &c.functions {
            functions += 1;
            let scan = FuncScan::new(&c.module, vf.func_index).map_err(|e| e.to_string())?;
            let law = scan.entry_count_law();
            ensure(vf.sidetable.len() == law, || {
                format!("{what} func {}: {} entries, law gives {law}", vf.func_index, vf.sidetable.len())
            })?;
            if !has_branch(&scan.instrs) {
                branch_free += 1;
                ensure(vf.sidetable.is_empty(), || format!("{what} func {}: branch-free but non-empty", vf.func_index))?;
            }
        }
        Ok(())
    };
    for seed in 0..SEEDS {
        check(&compile(&generate_random_structured(seed, BUDGET).bytes), &format!("seed {seed}"))?;
    }
    for (name, built) in hand_fixtures() {
        check(&compile(&built.bytes), &name)?;
    }
    let line = compile(&fixtures::straight_line(1000, 30).bytes);
    check(&line, "straight_line(1000)")?;
    let r = SpaceReport::of(&line);
    ensure(r.sidetable_entries == 0 && r.space_ratio() == 0.0, || "straight-line module has entries".into())?;
    Ok(format!("{functions} functions, {branch_free} branch-free with 0 entries, law exact on all"))
}

fn c4_space_ratio() -> Outcome {
    let mut total = SpaceReport::default();
    let (mut instrs, mut branches) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let c = compile(&fixtures::compiled_style(seed, 8).bytes);
        let r = SpaceReport::of(&c);
        worst = worst.max(r.space_ratio());
        total.bytecode_bytes += r.bytecode_bytes;
        total.sidetable_entries += r.sidetable_entries;
        total.sidetable_bytes += r.sidetable_bytes;
        total.sidetable_bytes_compact += r.sidetable_bytes_compact;
        for vf in &c.functions {
            let is = body_instrs(&c.module, vf.func_index);
            instrs += is.len();
            branches += is.iter().filter(|i| matches!(i.op, 0x04 | 0x0c | 0x0d | 0x0e)).count();
        }
    }
    let ratio = total.space_ratio();
    let density = instrs as f64 / branches as f64;
    ensure((8.0..=18.0).contains(&density), || format!("fixtures have one branch per {density:.1} instructions"))?;
    ensure(ratio <= 0.5 && worst <= 0.5, || format!("space ratio {ratio:.3} (worst module {worst:.3}) exceeds 0.5"))?;
    Ok(format!(
        "space_ratio {ratio:.3} (worst module {worst:.3}, uncompressed {:.3}), one branch per {density:.1} instructions",
        total.uncompressed_ratio()
    ))
}

fn global_steps(c: &Arc<CompiledModule>, func: u32, args: &[Value]) -> (u64, Result<Vec<Value>, TrapKind>) {
    let mut store = Store::new(Config::default());
    let mut inst = instance(&mut store, c);
    let steps = Rc::new(Cell::new(0u64));
    let s = steps.clone();
    inst.set_global_probe(probe(move |_| {
        s.set(s.get() + 1);
        ProbeAction::Continue
    }));
    let r = invoke(&mut store, &mut inst, func, args).map_err(|t| t.kind);
    (steps.get(), r)
}

fn time_runs(c: &Arc<CompiledModule>, n: i32) -> Duration {
    let mut store = Store::new(Config::default());
    let mut inst = instance(&mut store, c);
    let start = Instant::now();
    let r = invoke(&mut store, &mut inst, 0, &[Value::I32(n)]);
    let d = start.elapsed();
    assert_eq!(r.map(|v| v.len()), Ok(1));
    d
}

fn c5_constant_time() -> Outcome {
    let small = compile(&fixtures::branch_distance(10).bytes);
    let large = compile(&fixtures::branch_distance(5000).bytes);
    let large_entries = large.functions[0].sidetable.len();
    ensure(large_entries >= 5000, || format!("adversarial function has {large_entries} entries"))?;

    // Equal dynamic work, checked by counting every executed instruction.
    let (s_steps, s_res) = global_steps(&small, 0, &[Value::I32(100)]);
    let (l_steps, l_res) = global_steps(&large, 0, &[Value::I32(100)]);
    ensure(s_steps == l_steps && s_res == l_res, || format!("dynamic counts differ: {s_steps} vs {l_steps}"))?;

    // Taken branches per iteration, from the branch observer.
    let taken = {
        let mut store = Store::new(Config::default());
        let mut inst = instance(&mut store, &large);
        store.set_branch_observer(|_| {});
        invoke(&mut store, &mut inst, 0, &[Value::I32(100)]).unwrap();
        store.stats().branches_taken
    };

    let n = 200_000;
    time_runs(&small, n / 10);
    time_runs(&large, n / 10);
    let (mut ts, mut tl) = (Vec::new(), Vec::new());
    for _ in 0..9 {
        ts.push(time_runs(&small, n));
        tl.push(time_runs(&large, n));
    }
    ts.sort();
    tl.sort();
    let branches = (taken as f64 / 100.0) * f64::from(n);
    let per_small = ts[ts.len() / 2].as_nanos() as f64 / branches;
    let per_large = tl[tl.len() / 2].as_nanos() as f64 / branches;
    let ratio = per_large.max(per_small) / per_large.min(per_small);
    let detail = format!(
        "{large_entries}-entry function {per_large:.2} ns vs 10-branch function {per_small:.2} ns per taken branch (time per branch incl. its share of the loop), ratio {ratio:.2}, {s_steps} steps each at n=100"
    );
    ensure(ratio <= 2.0, || detail.clone())?;
    Ok(detail)
}

fn c6_traps() -> Outcome {
    let c = compile(&fixtures::traps().bytes);
    let mut store = Store::new(Config { max_frames: 2000, ..Config::default() });
    let mut inst = instance(&mut store, &c);
    let cases: [(&str, &[Value], TrapKind); 12] = [
        ("div_zero", &[], TrapKind::IntegerDivideByZero),
        ("div_overflow", &[], TrapKind::IntegerOverflow),
        ("div_overflow_i64", &[], TrapKind::IntegerOverflow),
        ("trunc_nan", &[], TrapKind::InvalidFloatConversion),
        ("trunc_overflow", &[], TrapKind::IntegerOverflow),
        ("load", &[Value::I32(65534)], TrapKind::MemoryOutOfBounds),
        ("store", &[Value::I32(-4)], TrapKind::MemoryOutOfBounds),
        ("indirect_null", &[], TrapKind::IndirectNull),
        ("indirect_mismatch", &[], TrapKind::IndirectSignatureMismatch),
        ("indirect_oob", &[], TrapKind::TableOutOfBounds),
        ("recurse", &[Value::I32(0)], TrapKind::StackOverflow),
        ("unreachable", &[], TrapKind::Unreachable),
    ];
    let ok = inst.exported_func("ok").unwrap();
    for (name, args, kind) in cases {
        let f = inst.exported_func(name).unwrap();
        let got = invoke(&mut store, &mut inst, f, args);
        ensure(matches!(&got, Err(t) if t.kind == kind), || format!("{name}: expected {kind:?}, got {got:?}"))?;
        let r = reference_execute(&c.module, f, args, STEP_LIMIT);
        ensure(r.outcome == RefOutcome::Trap(kind), || format!("{name}: reference gives {:?}", r.outcome))?;
        // The same store and instance keep working after every trap.
        let after = invoke(&mut store, &mut inst, ok, &[]);
        ensure(after == Ok(vec![Value::I32(7)]), || format!("after {name}: {after:?}"))?;
        ensure(store.stack_top() == 0, || format!("after {name}: stack not unwound"))?;
    }
    let f = inst.exported_func("div_s").unwrap();
    let v = invoke(&mut store, &mut inst, f, &[Value::I32(-7), Value::I32(2)]);
    ensure(v == Ok(vec![Value::I32(-3)]), || format!("div_s after traps: {v:?}"))?;
    Ok("12 trap kinds matched the reference; every invocation after a trap succeeded".into())
}

fn c7_zero_copy() -> Outcome {
    use sidewasm::binary::ValueType::I32;
    // caller(a, b) = callee(a + 1, b * 2) with a value left beneath the arguments.
    let mut b = ModuleBuilder::new();
    let mut callee = Code::new();
    callee.local_get(0).local_get(1).i32_sub().end();
    let callee_f = b.func(&[I32, I32], &[I32], &[I32], callee);
    let mut caller = Code::new();
    caller.i32_const(99);
    caller.local_get(0).i32_const(1).i32_add();
    caller.local_get(1).i32_const(2).i32_mul();
    let call_rel = caller.here();
    caller.call(callee_f).i32_add().end();
    let caller_f = b.func(&[I32, I32], &[I32], &[I32], caller);
    let built = b.build();
    let c = compile(&built.bytes);

    let mut store = Store::new(Config::default());
    let mut inst = instance(&mut store, &c);
    let seen: Rc<RefCell<Vec<(usize, Vec<u64>)>>> = Rc::default();
    let s = seen.clone();
    inst.insert_local_probe(
        caller_f,
        built.offset(caller_f, call_rel),
        probe(move |ctx| {
            let v = ctx.view();
            let first_arg = v.frame_base() + v.num_locals() + v.stack_height() - 2;
            let args = v.operands()[v.stack_height() - 2..].to_vec();
            s.borrow_mut().push((first_arg, args));
            ProbeAction::Continue
        }),
    )
    .map_err(|e| e.to_string())?;
    let s = seen.clone();
    inst.insert_local_probe(
        callee_f,
        built.offset(callee_f, 0),
        probe(move |ctx| {
            let v = ctx.view();
            s.borrow_mut().push((v.frame_base(), v.locals()[..2].iter().map(|x| x.to_cell()).collect()));
            ProbeAction::Continue
        }),
    )
    .map_err(|e| e.to_string())?;
    let r = invoke(&mut store, &mut inst, caller_f, &[Value::I32(10), Value::I32(4)]);
    ensure(r == Ok(vec![Value::I32(99 + 11 - 8)]), || format!("caller returned {r:?}"))?;
    let seen = seen.borrow();
    ensure(seen.len() == 2, || format!("{} probe firings", seen.len()))?;
    let ((caller_slot, caller_args), (callee_base, callee_locals)) = (&seen[0], &seen[1]);
    ensure(caller_slot == callee_base, || format!("arguments at slot {caller_slot}, callee locals at {callee_base}"))?;
    ensure(caller_args == callee_locals, || "argument cells differ".into())?;

    // Result placement on call-shaped fixtures, checked against the
    // reference and against the operand stack right after the call.
    let mut checked = 0;
    for seed in 0..100u64 {
        let nargs = (seed % 6) as usize;
        let nres = (seed / 6 % 4) as usize;
        let built = fixtures::call_shape(nargs, nres, seed);
        let c = compile(&built.bytes);
        let main = c.module.export("main").unwrap().index;
        let after_call = body_instrs(&c.module, main).iter().find(|i| i.op == 0x10).unwrap().next;
        let mut store = Store::new(Config::default());
        let mut inst = instance(&mut store, &c);
        let top: Rc<RefCell<Option<(usize, Vec<u64>)>>> = Rc::default();
        let t = top.clone();
        inst.insert_local_probe(
            main,
            after_call,
            probe(move |ctx| {
                let v = ctx.view();
                *t.borrow_mut() = Some((v.stack_height(), v.operands()[v.stack_height() - nres..].to_vec()));
                ProbeAction::Continue
            }),
        )
        .map_err(|e| e.to_string())?;
        let got = invoke(&mut store, &mut inst, main, &[]).map_err(|t| t.to_string())?;
        let r = reference_execute(&c.module, main, &[], STEP_LIMIT);
        ensure(r.outcome == RefOutcome::Values(got.clone()), || format!("seed {seed}: {got:?} vs {:?}", r.outcome))?;
        let (height, cells) = top.borrow().clone().ok_or("post-call probe did not fire")?;
        let expect: Vec<u64> = got.iter().map(|v| v.to_cell()).collect();
        ensure(cells == expect, || format!("seed {seed}: results not on top of the caller's stack"))?;
        let pads = height - nres;
        ensure(pads <= 2, || format!("seed {seed}: {pads} values beneath the results"))?;
        checked += 1;
    }
    Ok(format!("argument slot {caller_slot} is the callee's local 0; {checked} call shapes match the reference"))
}

fn c8_probes() -> Outcome {
    let built = fixtures::fib();
    let c = compile(&built.bytes);
    let checksum_before = checksum(c.module.bytes());
    let mut store = Store::new(Config::default());
    let mut inst = instance(&mut store, &c);
    let fires = Rc::new(Cell::new(0u64));
    let f2 = fires.clone();
    let id = inst
        .insert_local_probe(
            0,
            built.offset(0, 0),
            probe(move |_| {
                f2.set(f2.get() + 1);
                ProbeAction::Continue
            }),
        )
        .map_err(|e| e.to_string())?;
    let r = invoke(&mut store, &mut inst, 0, &[Value::I32(10)]);
    ensure(r == Ok(vec![Value::I32(55)]), || format!("probed fib(10) = {r:?}"))?;
    ensure(fires.get() == 177, || format!("entry probe fired {} times", fires.get()))?;

    // Global step counter against reference step counts.
    let mut fixtures_checked = 0;
    let mut compare = |c: &Arc<CompiledModule>, func: u32, args: &[Value], what: &str| -> Result<(), String> {
        let (steps, res) = global_steps(c, func, args);
        let r = reference_execute(&c.module, func, args, STEP_LIMIT);
        ensure(r.outcome != RefOutcome::StepLimit, || format!("{what}: reference hit the step limit"))?;
        ensure(steps == r.steps, || format!("{what}: {steps} probe steps, reference {}", r.steps))?;
        let same = match (&res, &r.outcome) {
            (Ok(a), RefOutcome::Values(b)) => values_equivalent(a, b),
            (Err(k), RefOutcome::Trap(j)) => k == j,
            _ => false,
        };
        ensure(same, || format!("{what}: {res:?} vs {:?}", r.outcome))?;
        fixtures_checked += 1;
        Ok(())
    };
    compare(&c, 0, &[Value::I32(10)], "fib")?;
    let (sum, _) = fixtures::sum_loop();
    compare(&compile(&sum.bytes), 0, &[Value::I32(100)], "sum_loop")?;
    compare(&compile(&fixtures::branch_distance(50).bytes), 0, &[Value::I32(20)], "branch_distance")?;
    for seed in 0..3 {
        compare(&compile(&fixtures::compiled_style(seed, 2).bytes), 0, &[Value::I32(30)], "compiled_style")?;
    }
    for seed in 0..4 {
        let cs = compile(&fixtures::call_shape(seed as usize + 1, 2, seed).bytes);
        let main = cs.module.export("main").unwrap().index;
        compare(&cs, main, &[], "call_shape")?;
    }
    for seed in 0..40 {
        let g = generate_random_structured(seed, BUDGET);
        compare(&compile(&g.bytes), g.entry, &[], &format!("seed {seed}"))?;
    }
    ensure(fixtures_checked >= 50, || format!("only {fixtures_checked} fixtures"))?;

    // Removing every probe returns execution to the original bytes.
    inst.remove_local_probe(id).map_err(|e| e.to_string())?;
    inst.clear_all_probes();
    ensure(inst.probes().live_copies() == 0 && inst.probes().copy(0).is_none(), || "probe copy still live".into())?;
    store.reset_stats();
    let r = invoke(&mut store, &mut inst, 0, &[Value::I32(10)]);
    ensure(r == Ok(vec![Value::I32(55)]), || format!("unprobed fib(10) = {r:?}"))?;
    ensure(store.stats().copy_activations == 0, || "activations still ran a probe copy".into())?;
    ensure(fires.get() == 177, || "removed probe fired".into())?;
    ensure(checksum(c.module.bytes()) == checksum_before, || "module bytes changed".into())?;
    Ok(format!("fib(10) entry probe fired 177 times; {fixtures_checked} step counts exact; original bytes restored"))
}

fn checksum(bytes: &[u8]) -> u64 {
    let mut h = DefaultHasher::new();
    bytes.hash(&mut h);
    h.finish()
}

fn c9_in_place() -> Outcome {
    let mut runs = 0;
    let mut audited = Vec::new();
    let mut check = |bytes: &[u8], func: u32, args: &[Value], what: &str| -> Result<(), String> {
        let c = compile(bytes);
        let before = checksum(c.module.bytes());
        let body: usize = c.module.functions.iter().map(|f| f.body.code_end - f.body.code_start).max().unwrap_or(0);
        let mut store = Store::new(Config::default());
        // A first run sizes the store's frame stack, so the audited run
        // only sees what instantiation and execution allocate.
        let mut warm = instance(&mut store, &c);
        let _ = invoke(&mut store, &mut warm, func, args);
        LARGEST.store(0, Ordering::SeqCst);
        TOTAL.store(0, Ordering::SeqCst);
        ARMED.store(true, Ordering::SeqCst);
        let mut inst = instance(&mut store, &c);
        let _ = invoke(&mut store, &mut inst, func, args);
        ARMED.store(false, Ordering::SeqCst);
        let (largest, total) = (LARGEST.load(Ordering::SeqCst), TOTAL.load(Ordering::SeqCst));
        ensure(checksum(c.module.bytes()) == before, || format!("{what}: module bytes changed"))?;
        ensure(inst.probes().buffers_created() == 0, || format!("{what}: code buffers created"))?;
        ensure(store.stats().copy_activations == 0, || format!("{what}: copies executed"))?;
        // Linear memory is the one allocation allowed to be large.
        let memory = inst.memory().map_or(0, |m| m.len());
        let other = total - if largest == memory { memory } else { 0 };
        if body >= 4096 {
            ensure(other < body, || format!("{what}: {other} bytes allocated during the run, largest body {body} bytes"))?;
            audited.push(format!("{what}: {other} B for a {body} B body"));
        }
        runs += 1;
        Ok(())
    };
    check(&fixtures::branch_distance(5000).bytes, 0, &[Value::I32(1000)], "branch_distance(5000)")?;
    check(&fixtures::straight_line(4, 3000).bytes, 0, &[Value::I32(3)], "straight_line")?;
    check(&fixtures::compiled_style(1, 1).bytes, 0, &[Value::I32(50)], "compiled_style")?;
    check(&fixtures::fib().bytes, 0, &[Value::I32(15)], "fib")?;
    for seed in 0..100 {
        let g = generate_random_structured(seed, BUDGET);
        check(&g.bytes, g.entry, &[], &format!("seed {seed}"))?;
    }
    Ok(format!("{runs} runs with unchanged bytes and no code buffers; allocation audit: {}", audited.join(", ")))
}

fn entry(delta_ip: i32, delta_stp: i32, valcnt: u32, popcnt: u32) -> SidetableEntry {
    SidetableEntry { delta_ip, delta_stp, valcnt, popcnt }
}

fn observed(c: &Arc<CompiledModule>, func: u32, args: &[Value]) -> (Result<Vec<Value>, TrapKind>, Vec<BranchEvent>) {
    let mut store = Store::new(Config::default());
    let mut inst = instance(&mut store, c);
    let events: Rc<RefCell<Vec<BranchEvent>>> = Rc::default();
    let e = events.clone();
    store.set_branch_observer(move |ev| e.borrow_mut().push(*ev));
    let r = invoke(&mut store, &mut inst, func, args).map_err(|t| t.kind);
    let v = events.borrow().clone();
    (r, v)
}

fn c10_register_arithmetic() -> Outcome {
    // Register updates, as written.
    ensure(apply_deltas(100, 3, &entry(12, 1, 0, 0)) == (112, 4), || "⟨12,1,0,0⟩ at (100, 3)".into())?;
    ensure(apply_deltas(200, 9, &entry(-40, -5, 1, 2)) == (160, 4), || "negative deltas".into())?;
    ensure(stp_not_taken(7) == 8, || "not-taken advance".into())?;
    ensure(br_table_entry(10, 2, 5) == 13, || "key 2, maxcase 5".into())?;
    ensure(br_table_entry(10, 9, 5) == 16, || "key 9 clamps to 5".into())?;
    ensure(br_table_entry(10, u32::MAX, 5) == 16, || "negative key clamps".into())?;
    ensure(br_table_entry(0, 0, 0) == 1, || "lone default".into())?;

    // The interpreter follows the same arithmetic: an untaken br_if leaves
    // the next branch on the following entry.
    use sidewasm::binary::ValueType::I32;
    let mut b = ModuleBuilder::new();
    let mut c = Code::new();
    c.block(Bt::Empty);
    c.i32_const(0).br_if(0);
    c.local_get(0).br_if(0);
    c.br(0);
    c.end();
    c.block(Bt::Empty);
    c.block(Bt::Empty);
    c.local_get(1).br_table(&[0, 0, 0, 0, 0], 1);
    c.end();
    c.i32_const(1).return_();
    c.end();
    c.i32_const(2).end();
    let f = b.func(&[I32, I32], &[I32], &[], c);
    let c = compile(&b.build().bytes);
    let st = &c.functions[0].sidetable;

    let (r, ev) = observed(&c, f, &[Value::I32(0), Value::I32(2)]);
    ensure(r == Ok(vec![Value::I32(1)]), || format!("result {r:?}"))?;
    ensure(ev.len() == 2 && ev[0].opcode == 0x0c && ev[0].entry == 2, || format!("untaken br_ifs: {ev:?}"))?;
    let header = 3;
    ensure(st.entries()[header].maxcase() == 5, || "header maxcase".into())?;
    ensure(ev[1].entry == header + 3, || format!("key 2 selected entry {}", ev[1].entry))?;

    let (r, ev) = observed(&c, f, &[Value::I32(0), Value::I32(9)]);
    ensure(r == Ok(vec![Value::I32(2)]), || format!("clamped result {r:?}"))?;
    ensure(ev[1].entry == header + 6, || format!("key 9 selected entry {}", ev[1].entry))?;

    for e in ev {
        let emitted = st.entries()[e.entry];
        let (ip, stp) = apply_deltas(e.origin, e.entry, &emitted);
        ensure((ip, stp) == (e.target_ip, e.target_stp), || format!("event {e:?} disagrees with entry"))?;
    }
    Ok("⟨12,1,0,0⟩ at ip 100, stp 3 gives 112, 4; untaken br_if advances one entry; key 9 clamps to maxcase 5".into())
}
