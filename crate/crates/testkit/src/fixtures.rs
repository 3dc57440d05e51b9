//! Hand-built modules shared by tests, benchmarks and the guide.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sidewasm::binary::ValueType::{self, FuncRef, I32, I64};

use crate::builder::{Bt, Built, Code, Init, ModuleBuilder};

/// Recursive `fib: [i32] -> [i32]` as function 0, exported as `fib`.
pub fn fib() -> Built {
    let mut b = ModuleBuilder::new();
    let mut c = Code::new();
    c.local_get(0).i32_const(2).i32_lt_s();
    c.if_(Bt::Val(I32));
    c.local_get(0);
    c.else_();
    c.local_get(0).i32_const(1).i32_sub().call(0);
    c.local_get(0).i32_const(2).i32_sub().call(0);
    c.i32_add();
    c.end();
    c.end();
    let f = b.func(&[I32], &[I32], &[], c);
    b.export_func("fib", f);
    b.build()
}

/// Iterative `sum_to: [i32] -> [i32]` summing `1..=n` in a counted loop.
/// The relative offset of the loop body's first instruction is returned too.
pub fn sum_loop() -> (Built, usize) {
    let mut b = ModuleBuilder::new();
    let mut c = Code::new();
    c.block(Bt::Empty);
    c.local_get(0).i32_eqz().br_if(0);
    c.loop_(Bt::Empty);
    let body = c.here();
    c.local_get(1).local_get(0).i32_add().local_set(1);
    c.local_get(0).i32_const(1).i32_sub().local_tee(0).br_if(0);
    c.end();
    c.end();
    c.local_get(1);
    c.end();
    let f = b.func(&[I32], &[I32], &[I32], c);
    b.export_func("sum_to", f);
    (b.build(), body)
}

/// Exports one function per trap kind, plus `ok: [] -> [i32]` returning 7.
pub fn traps() -> Built {
    let mut b = ModuleBuilder::new();
    b.memory(1, Some(1));
    b.table(FuncRef, 4, None);
    let export = |b: &mut ModuleBuilder, name: &str, params: &[ValueType], results: &[ValueType], c: Code| {
        let f = b.func(params, results, &[], c);
        b.export_func(name, f);
        f
    };
    let mut c = Code::new();
    c.i32_const(7).end();
    let ok = export(&mut b, "ok", &[], &[I32], c);

    let mut c = Code::new();
    c.local_get(0).local_get(1).i32_div_s().end();
    export(&mut b, "div_s", &[I32, I32], &[I32], c);

    let mut c = Code::new();
    c.i32_const(1).i32_const(0).i32_div_u().end();
    export(&mut b, "div_zero", &[], &[I32], c);

    let mut c = Code::new();
    c.i32_const(i32::MIN).i32_const(-1).i32_div_s().end();
    export(&mut b, "div_overflow", &[], &[I32], c);

    let mut c = Code::new();
    c.i64_const(i64::MIN).i64_const(-1).i64_div_s().end();
    export(&mut b, "div_overflow_i64", &[], &[I64], c);

    let mut c = Code::new();
    c.f32_const(f32::NAN).i32_trunc_f32_s().end();
    export(&mut b, "trunc_nan", &[], &[I32], c);

    let mut c = Code::new();
    c.f64_const(3e10).i32_trunc_f64_s().end();
    export(&mut b, "trunc_overflow", &[], &[I32], c);

    let mut c = Code::new();
    c.local_get(0).i32_load(0).end();
    export(&mut b, "load", &[I32], &[I32], c);

    let mut c = Code::new();
    c.local_get(0).i32_const(1).i32_store(0).end();
    export(&mut b, "store", &[I32], &[], c);

    let mut c = Code::new();
    c.i32_const(1).call_indirect(0, 0).end();
    export(&mut b, "indirect_null", &[], &[I32], c);

    let sig_i32_i32 = b.ty(&[I32], &[I32]);
    let mut c = Code::new();
    c.i32_const(5).i32_const(0).call_indirect(sig_i32_i32, 0).end();
    export(&mut b, "indirect_mismatch", &[], &[I32], c);

    let mut c = Code::new();
    c.i32_const(9).call_indirect(0, 0).end();
    export(&mut b, "indirect_oob", &[], &[I32], c);

    let mut c = Code::new();
    c.local_get(0).i32_const(1).i32_add().call(b.next_func_index()).end();
    export(&mut b, "recurse", &[I32], &[I32], c);

    let mut c = Code::new();
    c.unreachable().end();
    export(&mut b, "unreachable", &[], &[], c);

    b.elem(0, Init::I32(0), &[ok]);
    b.build()
}

/// `run: [i32] -> [i32]` executes a loop `n` times; each iteration takes one
/// branch over a cold region holding `cold_branches` branch instructions.
/// Dynamic instruction counts do not depend on `cold_branches`.
pub fn branch_distance(cold_branches: usize) -> Built {
    let mut b = ModuleBuilder::new();
    let mut c = Code::new();
    c.loop_(Bt::Empty);
    c.block(Bt::Empty);
    c.local_get(0).br_if(0);
    for k in 0..cold_branches {
        c.local_get(1).i32_const(k as i32).i32_add().local_set(1);
        c.local_get(1).br_if(0);
    }
    c.end();
    c.local_get(1).i32_const(1).i32_add().local_set(1);
    c.local_get(0).i32_const(1).i32_sub().local_tee(0).br_if(0);
    c.end();
    c.local_get(1);
    c.end();
    let f = b.func(&[I32], &[I32], &[I32], c);
    b.export_func("run", f);
    b.build()
}

/// Branch-free arithmetic in `bodies` functions of about `len` instructions.
pub fn straight_line(bodies: usize, len: usize) -> Built {
    let mut b = ModuleBuilder::new();
    for k in 0..bodies {
        let mut c = Code::new();
        c.local_get(0);
        for j in 0..len / 3 {
            c.i32_const((k + j) as i32);
            match j % 4 {
                0 => c.i32_add(),
                1 => c.i32_mul(),
                2 => c.i32_xor(),
                _ => c.i32_sub(),
            };
            c.nop();
        }
        c.end();
        let f = b.func(&[I32], &[I32], &[], c);
        if k == 0 {
            b.export_func("f0", f);
        }
    }
    b.build()
}

/// Functions shaped like compiler output: loops over memory with nested
/// conditionals, roughly one branch per ten instructions.
pub fn compiled_style(seed: u64, funcs: usize) -> Built {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ModuleBuilder::new();
    b.memory(1, None);
    for k in 0..funcs {
        let mut c = Code::new();
        // Locals: 0 = n, 1 = i, 2 = acc, 3 = tmp
        c.i32_const(0).local_set(1);
        c.block(Bt::Empty);
        c.local_get(0).i32_eqz().br_if(0);
        c.loop_(Bt::Empty);
        let blocks = rng.gen_range(2..6);
        for _ in 0..blocks {
            straight(&mut c, &mut rng);
            match rng.gen_range(0..4) {
                0 => {
                    c.local_get(3).i32_const(rng.gen_range(1..100)).i32_gt_s();
                    c.if_(Bt::Empty);
                    straight(&mut c, &mut rng);
                    c.else_();
                    straight(&mut c, &mut rng);
                    c.end();
                }
                1 => {
                    c.block(Bt::Empty);
                    c.local_get(3).i32_const(3).i32_and().br_if(0);
                    straight(&mut c, &mut rng);
                    c.end();
                }
                2 => {
                    c.local_get(3).i32_const(rng.gen_range(1..50)).i32_lt_u();
                    c.if_(Bt::Empty);
                    straight(&mut c, &mut rng);
                    c.end();
                }
                _ => {
                    c.block(Bt::Empty);
                    c.block(Bt::Empty);
                    c.block(Bt::Empty);
                    c.local_get(3).i32_const(3).i32_and().br_table(&[0, 1], 2);
                    c.end();
                    straight(&mut c, &mut rng);
                    c.br(1);
                    c.end();
                    straight(&mut c, &mut rng);
                    c.end();
                }
            }
        }
        c.local_get(1).i32_const(1).i32_add().local_tee(1);
        c.local_get(0).i32_lt_u().br_if(0);
        c.end();
        c.end();
        c.local_get(2);
        c.end();
        let f = b.func(&[I32], &[I32], &[I32, I32, I32], c);
        if k == 0 {
            b.export_func("kernel", f);
        }
    }
    b.build()
}

fn straight(c: &mut Code, rng: &mut ChaCha8Rng) {
    if rng.gen_bool(0.5) {
        c.local_get(1).i32_load(rng.gen_range(0..64) * 4);
        c.local_get(2).i32_add().local_tee(3).local_set(2);
    } else {
        c.local_get(2).i32_const(rng.gen_range(1..9)).i32_mul().local_set(2);
    }
}

/// A caller passing `nargs` i32 arguments to a callee returning `nres`
/// values; `main: [] -> [i32 * nres]` is function 1 and exported.
pub fn call_shape(nargs: usize, nres: usize, seed: u64) -> Built {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = ModuleBuilder::new();
    let params = vec![I32; nargs];
    let results = vec![I32; nres];
    let mut callee = Code::new();
    for r in 0..nres {
        callee.i32_const(rng.gen_range(-100..100));
        for a in 0..nargs {
            callee.local_get(a as u32);
            if (a + r) % 2 == 0 {
                callee.i32_add();
            } else {
                callee.i32_xor();
            }
        }
    }
    callee.end();
    let callee_f = b.func(&params, &results, &[I32], callee);
    let mut main = Code::new();
    // Values left beneath the arguments keep the callee frame off the stack base.
    let pad = rng.gen_range(0..3);
    for _ in 0..pad {
        main.i32_const(rng.gen_range(0..1000));
    }
    for _ in 0..nargs {
        main.i32_const(rng.gen_range(-1000..1000));
    }
    main.call(callee_f);
    for r in (0..nres).rev() {
        main.local_set(r as u32);
    }
    for _ in 0..pad {
        main.drop();
    }
    for r in 0..nres {
        main.local_get(r as u32);
    }
    main.end();
    let f = b.func(&[], &results, &[I32; 8], main);
    b.export_func("main", f);
    b.build()
}

/// A module with two i32 globals (mutable `g`, exported) and a data segment,
/// for instantiation tests.
pub fn data_and_globals() -> Built {
    let mut b = ModuleBuilder::new();
    b.memory(1, Some(4));
    b.data(Init::I32(0), b"hi");
    let g = b.global(I32, true, Init::I32(40));
    let mut c = Code::new();
    c.global_get(g).i32_const(2).i32_add().global_set(g).global_get(g).end();
    let f = b.func(&[], &[I32], &[], c);
    b.export_func("bump", f).export_global("g", g).export_memory("memory");
    b.build()
}
