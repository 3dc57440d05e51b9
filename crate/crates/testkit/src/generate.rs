//! Seeded generator of valid, terminating modules with dense structured
//! control flow.
//!
//! Loops only iterate through a counter-guarded back edge, and functions only
//! call functions with a higher index, so every program halts. Random
//! branches target blocks, ifs and the function label, never loops.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sidewasm::binary::ValueType::{self, F64, I32, I64};

use crate::builder::{Bt, Built, Code, Init, ModuleBuilder};

/// A generated module. Function 0 is exported as `main` and has type
/// `[] -> [i32]`.
#[derive(Debug, Clone)]
pub struct Generated {
    pub bytes: Vec<u8>,
    pub built: Built,
    pub entry: u32,
}

#[derive(Debug, Clone)]
struct Sig {
    params: Vec<ValueType>,
    results: Vec<ValueType>,
}

#[derive(Debug, Clone)]
struct Label {
    is_loop: bool,
    types: Vec<ValueType>,
}

struct Gen {
    rng: ChaCha8Rng,
    budget: isize,
    b: ModuleBuilder,
    sigs: Vec<Sig>,
    cur: usize,
    locals: Vec<ValueType>,
    /// Locals random code may write; loop counters are excluded.
    writable: Vec<u32>,
    labels: Vec<Label>,
    depth: usize,
    globals: Vec<(u32, ValueType, bool)>,
    loop_ty: u32,
}

const MAX_DEPTH: usize = 7;
const TABLE_SLOTS: u32 = 8;

/// Generates a module from `seed`; `budget` roughly bounds the number of
/// constructs emitted per function.
pub fn generate_random_structured(seed: u64, budget: usize) -> Generated {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=4);
    let mut sigs = vec![Sig { params: vec![], results: vec![I32] }];
    for _ in 1..n {
        let np = rng.gen_range(0..=3);
        let nr = rng.gen_range(0..=2);
        let pick = |rng: &mut ChaCha8Rng| *[I32, I32, I64, F64].choose(rng).expect("non-empty");
        let params = (0..np).map(|_| pick(&mut rng)).collect();
        let results = (0..nr).map(|_| pick(&mut rng)).collect();
        sigs.push(Sig { params, results });
    }
    let mut b = ModuleBuilder::new();
    for s in &sigs {
        b.ty(&s.params, &s.results);
    }
    let loop_ty = b.ty(&[I32], &[I32]);
    b.memory(1, Some(2));
    b.table(ValueType::FuncRef, TABLE_SLOTS, None);
    let g0 = b.global(I32, true, Init::I32(rng.gen_range(-100..100)));
    let g1 = b.global(I64, true, Init::I64(rng.gen()));
    let g2 = b.global(F64, false, Init::F64(f64::from(rng.gen_range(-1000..1000)) / 8.0));
    let data: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
    b.data(Init::I32(0), &data);
    let mut g = Gen {
        rng,
        budget: 0,
        b,
        sigs,
        cur: 0,
        locals: Vec::new(),
        writable: Vec::new(),
        labels: Vec::new(),
        depth: 0,
        globals: vec![(g0, I32, true), (g1, I64, true), (g2, F64, false)],
        loop_ty,
    };
    for f in 0..n {
        g.function(f, budget);
    }
    let funcs: Vec<u32> = (0..n as u32).collect();
    g.b.elem(0, Init::I32(0), &funcs);
    g.b.export_func("main", 0).export_memory("memory");
    let built = g.b.build();
    Generated { bytes: built.bytes.clone(), built, entry: 0 }
}

impl Gen {
    fn function(&mut self, f: usize, budget: usize) {
        self.cur = f;
        self.budget = budget as isize;
        let sig = self.sigs[f].clone();
        self.locals = sig.params.clone();
        let extra = self.rng.gen_range(1..=4);
        for _ in 0..extra {
            let t = *[I32, I32, I64, F64].choose(&mut self.rng).expect("non-empty");
            self.locals.push(t);
        }
        self.writable = (0..self.locals.len() as u32).collect();
        self.labels = vec![Label { is_loop: false, types: sig.results.clone() }];
        self.depth = 0;
        let mut c = Code::new();
        while self.budget > 0 {
            self.stmt(&mut c);
        }
        for &t in &sig.results {
            self.value(&mut c, t);
        }
        c.end();
        let declared = self.locals[sig.params.len()..].to_vec();
        self.b.func(&sig.params, &sig.results, &declared, c);
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.gen_bool(p)
    }

    fn spend(&mut self) -> bool {
        self.budget -= 1;
        self.budget > 0 && self.depth < MAX_DEPTH
    }

    fn new_counter(&mut self) -> u32 {
        self.locals.push(I32);
        (self.locals.len() - 1) as u32
    }

    /// Depths of non-loop labels, optionally restricted to one label type.
    fn branch_targets(&self, types: Option<&[ValueType]>) -> Vec<u32> {
        let n = self.labels.len();
        (0..n)
            .filter(|&i| {
                let l = &self.labels[n - 1 - i];
                !l.is_loop && types.is_none_or(|t| l.types == t)
            })
            .map(|i| i as u32)
            .collect()
    }

    /// Picks a branch depth, rarely the function label so runs stay long.
    fn pick(&mut self, targets: &[u32]) -> u32 {
        let func = (self.labels.len() - 1) as u32;
        let inner: Vec<u32> = targets.iter().copied().filter(|&d| d != func).collect();
        if !inner.is_empty() && self.chance(0.9) {
            *inner.choose(&mut self.rng).expect("non-empty")
        } else {
            *targets.choose(&mut self.rng).expect("non-empty")
        }
    }

    fn cond(&mut self, c: &mut Code) {
        if self.chance(0.5) {
            self.value(c, I32);
        } else {
            c.i32_const(i32::from(self.chance(0.3)));
        }
    }

    fn label_types(&self, depth: u32) -> Vec<ValueType> {
        self.labels[self.labels.len() - 1 - depth as usize].types.clone()
    }

    fn values(&mut self, c: &mut Code, types: &[ValueType]) {
        for &t in types {
            self.value(c, t);
        }
    }

    fn drops(c: &mut Code, n: usize) {
        for _ in 0..n {
            c.drop();
        }
    }

    fn addr(&mut self, c: &mut Code) {
        match self.rng.gen_range(0..50) {
            0 => {
                self.value(c, I32);
            }
            1..=20 => {
                c.i32_const(self.rng.gen_range(0..4096) & !7);
            }
            _ => {
                self.value(c, I32);
                c.i32_const(0xff8).i32_and();
            }
        }
    }

    fn body(&mut self, c: &mut Code, max: usize) {
        let n = self.rng.gen_range(0..=max);
        for _ in 0..n {
            if self.budget <= 0 {
                break;
            }
            self.stmt(c);
        }
    }

    fn stmt(&mut self, c: &mut Code) {
        if !self.spend() {
            c.nop();
            return;
        }
        self.depth += 1;
        match self.rng.gen_range(0..100) {
            0..=14 => {
                let l = *self.writable.choose(&mut self.rng).expect("locals");
                let t = self.locals[l as usize];
                self.value(c, t);
                c.local_set(l);
            }
            15..=21 => {
                self.addr(c);
                if self.chance(0.5) {
                    self.value(c, I32);
                    c.i32_store(self.rng.gen_range(0..16));
                } else {
                    self.value(c, I64);
                    c.i64_store(self.rng.gen_range(0..16));
                }
            }
            22..=26 => {
                let t = *[I32, I64, F64].choose(&mut self.rng).expect("non-empty");
                self.value(c, t);
                c.drop();
            }
            27..=34 => {
                c.block(Bt::Empty);
                self.labels.push(Label { is_loop: false, types: vec![] });
                self.body(c, 4);
                self.labels.pop();
                c.end();
            }
            35..=41 => {
                let counter = self.new_counter();
                c.i32_const(self.rng.gen_range(1..=4)).local_set(counter);
                c.loop_(Bt::Empty);
                self.labels.push(Label { is_loop: true, types: vec![] });
                self.body(c, 4);
                self.labels.pop();
                c.local_get(counter).i32_const(1).i32_sub().local_tee(counter).br_if(0);
                c.end();
            }
            42..=50 => {
                self.value(c, I32);
                c.if_(Bt::Empty);
                self.labels.push(Label { is_loop: false, types: vec![] });
                self.body(c, 3);
                if self.chance(0.5) {
                    c.else_();
                    self.body(c, 3);
                }
                self.labels.pop();
                c.end();
            }
            51..=62 => {
                let targets = self.branch_targets(None);
                let d = self.pick(&targets);
                let types = self.label_types(d);
                self.values(c, &types);
                self.cond(c);
                c.br_if(d);
                Self::drops(c, types.len());
            }
            63..=66 => {
                let targets = self.branch_targets(None);
                let d = self.pick(&targets);
                let types = self.label_types(d);
                self.values(c, &types);
                c.br(d);
            }
            67..=72 => {
                let all = self.branch_targets(None);
                let default = self.pick(&all);
                let types = self.label_types(default);
                let same = self.branch_targets(Some(&types));
                let n = self.rng.gen_range(0..=5);
                let cases: Vec<u32> = (0..n).map(|_| *same.choose(&mut self.rng).expect("default")).collect();
                self.values(c, &types);
                if self.chance(0.7) {
                    c.i32_const(self.rng.gen_range(0..=n as i32 + 1));
                } else {
                    self.value(c, I32);
                }
                c.br_table(&cases, default);
            }
            73..=74 => {
                let types = self.sigs[self.cur].results.clone();
                self.values(c, &types);
                c.return_();
            }
            75..=83 => {
                if self.cur + 1 < self.sigs.len() {
                    let j = self.rng.gen_range(self.cur + 1..self.sigs.len());
                    let s = self.sigs[j].clone();
                    self.values(c, &s.params);
                    if self.chance(0.3) {
                        let ty = self.b.ty(&s.params, &s.results);
                        if self.chance(0.1) {
                            c.i32_const(self.rng.gen_range(0..TABLE_SLOTS as i32 + 2));
                        } else {
                            c.i32_const(j as i32);
                        }
                        c.call_indirect(ty, 0);
                    } else {
                        c.call(j as u32);
                    }
                    Self::drops(c, s.results.len());
                } else {
                    c.nop();
                }
            }
            84..=88 => {
                let (gi, t, mutable) = *self.globals.choose(&mut self.rng).expect("globals");
                if mutable {
                    self.value(c, t);
                    c.global_set(gi);
                } else {
                    c.nop();
                }
            }
            89..=91 => {
                c.i32_const(self.rng.gen_range(0..4000));
                if self.chance(0.5) {
                    c.i32_const(self.rng.gen_range(0..4000));
                    c.i32_const(self.rng.gen_range(0..64));
                    c.memory_copy();
                } else {
                    self.value(c, I32);
                    c.i32_const(self.rng.gen_range(0..64));
                    c.memory_fill();
                }
            }
            92 if self.chance(0.1) => {
                c.unreachable();
            }
            _ => {
                c.nop();
            }
        }
        self.depth -= 1;
    }

    fn leaf(&mut self, c: &mut Code, t: ValueType) {
        let candidates: Vec<u32> = (0..self.locals.len() as u32).filter(|&l| self.locals[l as usize] == t).collect();
        if !candidates.is_empty() && self.chance(0.5) {
            c.local_get(*candidates.choose(&mut self.rng).expect("non-empty"));
            return;
        }
        match t {
            I32 => c.i32_const(self.rng.gen_range(-50..50)),
            I64 => c.i64_const(self.rng.gen_range(-1000..1000)),
            _ => c.f64_const(f64::from(self.rng.gen_range(-400..400)) / 4.0),
        };
    }

    fn value(&mut self, c: &mut Code, t: ValueType) {
        if !self.spend() {
            self.leaf(c, t);
            return;
        }
        self.depth += 1;
        match self.rng.gen_range(0..100) {
            0..=24 => self.leaf(c, t),
            25..=44 => self.arith(c, t),
            45..=50 => {
                let (gi, gt, _) = self.globals[self.rng.gen_range(0..self.globals.len())];
                if gt == t {
                    c.global_get(gi);
                } else {
                    self.leaf(c, t);
                }
            }
            51..=56 => {
                c.block(Bt::Val(t));
                self.labels.push(Label { is_loop: false, types: vec![t] });
                self.body(c, 3);
                if self.chance(0.6) {
                    // Values left beneath the carried operand are dropped by a taken branch.
                    let extra = self.rng.gen_range(0..=2);
                    for _ in 0..extra {
                        self.value(c, I32);
                    }
                    self.value(c, t);
                    self.value(c, I32);
                    c.br_if(0);
                    c.drop();
                    Self::drops(c, extra);
                }
                self.value(c, t);
                self.labels.pop();
                c.end();
            }
            57..=62 => {
                self.value(c, I32);
                c.if_(Bt::Val(t));
                self.labels.push(Label { is_loop: false, types: vec![t] });
                self.body(c, 2);
                self.value(c, t);
                c.else_();
                self.body(c, 2);
                self.value(c, t);
                self.labels.pop();
                c.end();
            }
            63..=67 => {
                let counter = self.new_counter();
                c.i32_const(self.rng.gen_range(1..=3)).local_set(counter);
                c.loop_(Bt::Val(t));
                self.labels.push(Label { is_loop: true, types: vec![] });
                self.body(c, 3);
                c.local_get(counter).i32_const(1).i32_sub().local_tee(counter).br_if(0);
                self.value(c, t);
                self.labels.pop();
                c.end();
            }
            68..=71 if t == I32 => {
                let counter = self.new_counter();
                c.i32_const(self.rng.gen_range(1..=3)).local_set(counter);
                self.value(c, I32);
                c.loop_(Bt::Type(self.loop_ty));
                self.labels.push(Label { is_loop: true, types: vec![I32] });
                self.value(c, I32);
                c.i32_add();
                c.local_get(counter).i32_const(1).i32_sub().local_tee(counter).br_if(0);
                self.labels.pop();
                c.end();
            }
            72..=74 if t == I32 => {
                self.value(c, I32);
                c.block(Bt::Type(self.loop_ty));
                self.labels.push(Label { is_loop: false, types: vec![I32] });
                self.value(c, I32);
                c.i32_xor();
                if self.chance(0.5) {
                    self.value(c, I32);
                    c.br_if(0);
                }
                self.labels.pop();
                c.end();
            }
            75..=79 => {
                self.value(c, t);
                self.value(c, t);
                self.value(c, I32);
                c.select();
            }
            80..=85 => {
                let matching: Vec<usize> =
                    (self.cur + 1..self.sigs.len()).filter(|&j| self.sigs[j].results == [t]).collect();
                match matching.choose(&mut self.rng) {
                    Some(&j) => {
                        let params = self.sigs[j].params.clone();
                        self.values(c, &params);
                        c.call(j as u32);
                    }
                    None => self.leaf(c, t),
                }
            }
            86..=91 => self.load(c, t),
            _ => self.convert(c, t),
        }
        self.depth -= 1;
    }

    fn load(&mut self, c: &mut Code, t: ValueType) {
        self.addr(c);
        let off = self.rng.gen_range(0..16);
        match t {
            I32 => {
                let op = *[0x28u8, 0x2c, 0x2d, 0x2e, 0x2f].choose(&mut self.rng).expect("non-empty");
                c.mem(op, 0, off);
            }
            I64 => {
                let op = *[0x29u8, 0x30, 0x31, 0x32, 0x33, 0x34, 0x35].choose(&mut self.rng).expect("non-empty");
                c.mem(op, 0, off);
            }
            _ => {
                c.mem(0x2c, 0, off);
                c.f64_convert_i32_s();
            }
        }
    }

    fn convert(&mut self, c: &mut Code, t: ValueType) {
        match t {
            I32 => match self.rng.gen_range(0..5) {
                0 => {
                    self.value(c, I64);
                    c.i32_wrap_i64();
                }
                1 => {
                    self.value(c, F64);
                    c.fc(2);
                }
                2 if self.chance(0.3) => {
                    self.value(c, F64);
                    c.i32_trunc_f64_s();
                }
                3 => {
                    self.value(c, I64);
                    self.value(c, I64);
                    c.i64_lt_s();
                }
                _ => {
                    self.value(c, I32);
                    c.i32_eqz();
                }
            },
            I64 => {
                self.value(c, I32);
                if self.chance(0.5) {
                    c.i64_extend_i32_s();
                } else {
                    c.i64_extend_i32_u();
                }
            }
            _ => {
                if self.chance(0.5) {
                    self.value(c, I32);
                    c.f64_convert_i32_s();
                } else {
                    self.value(c, I64);
                    c.f64_convert_i64_s();
                }
            }
        }
    }

    fn arith(&mut self, c: &mut Code, t: ValueType) {
        match t {
            I32 => {
                let k = self.rng.gen_range(0..28);
                if k < 3 {
                    self.value(c, I32);
                    c.op([0x67, 0x68, 0x69][k]);
                    return;
                }
                if k < 13 {
                    self.value(c, I32);
                    self.value(c, I32);
                    c.op(0x46 + (k as u8 - 3));
                    return;
                }
                let op = 0x6a + (k as u8 - 13);
                self.value(c, I32);
                self.value(c, I32);
                if (0x6d..=0x70).contains(&op) && self.chance(0.9) {
                    c.i32_const(1).op(0x72);
                }
                c.op(op);
            }
            I64 => {
                let op = 0x7c + self.rng.gen_range(0..15u8);
                self.value(c, I64);
                self.value(c, I64);
                if (0x7f..=0x82).contains(&op) && self.chance(0.9) {
                    c.i64_const(1).op(0x84);
                }
                c.op(op);
            }
            _ => {
                let k = self.rng.gen_range(0..10u8);
                if k < 3 {
                    self.value(c, F64);
                    c.op([0x99, 0x9a, 0x9b][k as usize]);
                } else {
                    self.value(c, F64);
                    self.value(c, F64);
                    c.op(0xa0 + (k - 3).min(6));
                }
            }
        }
    }
}
