//! Opcode handlers. Each is entered with `ip` at its opcode byte and leaves
//! `ip` at the next instruction to execute.

use crate::runtime::{cell_to_ref, eval_const, memory_access_check, ref_to_cell};

use super::machine::{br_table_entry, stp_not_taken, Machine, Stop, R};
use super::TrapKind;

// Cell views. Narrow values live zero-extended in the low bits.
#[inline(always)]
fn i32_(c: u64) -> i32 {
    c as u32 as i32
}
#[inline(always)]
fn u32_(c: u64) -> u32 {
    c as u32
}
#[inline(always)]
fn i64_(c: u64) -> i64 {
    c as i64
}
#[inline(always)]
fn u64_(c: u64) -> u64 {
    c
}
#[inline(always)]
fn f32_(c: u64) -> f32 {
    f32::from_bits(c as u32)
}
#[inline(always)]
fn f64_(c: u64) -> f64 {
    f64::from_bits(c)
}
#[inline(always)]
fn pi32(v: i32) -> u64 {
    u64::from(v as u32)
}
#[inline(always)]
fn pu32(v: u32) -> u64 {
    u64::from(v)
}
#[inline(always)]
fn pi64(v: i64) -> u64 {
    v as u64
}
#[inline(always)]
fn pu64(v: u64) -> u64 {
    v
}
#[inline(always)]
fn pf32(v: f32) -> u64 {
    u64::from(v.to_bits())
}
#[inline(always)]
fn pf64(v: f64) -> u64 {
    v.to_bits()
}
#[inline(always)]
fn pbool(v: bool) -> u64 {
    u64::from(v)
}

macro_rules! unop {
    ($($name:ident: $get:ident -> $put:ident, |$a:ident| $body:expr;)*) => {$(
        pub(crate) fn $name(m: &mut Machine<'_>) -> R {
            let top = m.top_mut();
            let $a = $get(*top);
            *top = $put($body);
            m.ip += 1;
            Ok(())
        }
    )*};
}

macro_rules! binop {
    ($($name:ident: $get:ident -> $put:ident, |$a:ident, $b:ident| $body:expr;)*) => {$(
        pub(crate) fn $name(m: &mut Machine<'_>) -> R {
            let $b = $get(m.pop());
            let top = m.top_mut();
            let $a = $get(*top);
            *top = $put($body);
            m.ip += 1;
            Ok(())
        }
    )*};
}

/// Operations that may trap: the body yields `Result<_, TrapKind>`.
macro_rules! unop_try {
    ($($name:ident: $get:ident -> $put:ident, |$a:ident| $body:expr;)*) => {$(
        pub(crate) fn $name(m: &mut Machine<'_>) -> R {
            let $a = $get(*m.top_mut());
            let r: Result<_, TrapKind> = $body;
            match r {
                Ok(v) => {
                    *m.top_mut() = $put(v);
                    m.ip += 1;
                    Ok(())
                }
                Err(k) => Err(m.trap(k)),
            }
        }
    )*};
}

macro_rules! binop_try {
    ($($name:ident: $get:ident -> $put:ident, |$a:ident, $b:ident| $body:expr;)*) => {$(
        pub(crate) fn $name(m: &mut Machine<'_>) -> R {
            let $b = $get(m.stack[m.vsp - 1]);
            let $a = $get(m.stack[m.vsp - 2]);
            let r: Result<_, TrapKind> = $body;
            match r {
                Ok(v) => {
                    m.vsp -= 1;
                    *m.top_mut() = $put(v);
                    m.ip += 1;
                    Ok(())
                }
                Err(k) => Err(m.trap(k)),
            }
        }
    )*};
}

// ---- control ----

pub(crate) fn unreachable(m: &mut Machine<'_>) -> R {
    Err(m.trap(TrapKind::Unreachable))
}

pub(crate) fn invalid(m: &mut Machine<'_>) -> R {
    let op = m.byte(m.ip);
    Err(m.trap_msg(TrapKind::Unreachable, format!("invalid opcode 0x{op:02x}")))
}

pub(crate) fn nop(m: &mut Machine<'_>) -> R {
    m.ip += 1;
    Ok(())
}

/// `block` and `loop`: nothing to do but skip the block type.
pub(crate) fn block(m: &mut Machine<'_>) -> R {
    m.ip = m.skip_leb(m.ip + 1);
    Ok(())
}

pub(crate) fn if_(m: &mut Machine<'_>) -> R {
    m.debug_check_stp();
    if m.pop() as u32 != 0 {
        m.ip = m.skip_leb(m.ip + 1);
        m.stp = stp_not_taken(m.stp);
    } else {
        m.transfer();
    }
    Ok(())
}

/// Reached only by falling out of the then-arm.
pub(crate) fn else_(m: &mut Machine<'_>) -> R {
    m.debug_check_stp();
    m.transfer();
    Ok(())
}

pub(crate) fn end(m: &mut Machine<'_>) -> R {
    if m.ip == m.eip {
        return m.ret();
    }
    m.ip += 1;
    Ok(())
}

pub(crate) fn br(m: &mut Machine<'_>) -> R {
    m.debug_check_stp();
    m.transfer();
    Ok(())
}

pub(crate) fn br_if(m: &mut Machine<'_>) -> R {
    m.debug_check_stp();
    if m.pop() as u32 != 0 {
        m.transfer();
    } else {
        m.ip = m.skip_leb(m.ip + 1);
        m.stp = stp_not_taken(m.stp);
    }
    Ok(())
}

pub(crate) fn br_table(m: &mut Machine<'_>) -> R {
    m.debug_check_stp();
    let key = m.pop() as u32;
    let max = m.sidetable.entries()[m.stp].maxcase();
    m.stp = br_table_entry(m.stp, key, max);
    m.transfer();
    Ok(())
}

pub(crate) fn return_(m: &mut Machine<'_>) -> R {
    m.ret()
}

pub(crate) fn call(m: &mut Machine<'_>) -> R {
    let (f, next) = m.u32_at(m.ip + 1);
    m.call(f, next)
}

pub(crate) fn call_indirect(m: &mut Machine<'_>) -> R {
    let (ti, p) = m.u32_at(m.ip + 1);
    let (t, next) = m.u32_at(p);
    let i = m.pop() as u32;
    let Some(slot) = m.inst.tables[t as usize].get(i) else {
        return Err(m.trap(TrapKind::TableOutOfBounds));
    };
    let Some(f) = slot else {
        return Err(m.trap(TrapKind::IndirectNull));
    };
    let expected = m.inst.type_ids[ti as usize];
    let actual = m.module.module.func_type_index(f).map(|i| m.inst.type_ids[i as usize]);
    if actual != Some(expected) {
        return Err(m.trap(TrapKind::IndirectSignatureMismatch));
    }
    m.call(f, next)
}

// ---- parametric and variable ----

pub(crate) fn drop(m: &mut Machine<'_>) -> R {
    m.vsp -= 1;
    m.ip += 1;
    Ok(())
}

fn select_common(m: &mut Machine<'_>) {
    let c = m.pop() as u32;
    let b = m.pop();
    if c == 0 {
        *m.top_mut() = b;
    }
}

pub(crate) fn select(m: &mut Machine<'_>) -> R {
    select_common(m);
    m.ip += 1;
    Ok(())
}

pub(crate) fn select_t(m: &mut Machine<'_>) -> R {
    select_common(m);
    // One result type follows the vector length.
    m.ip = m.skip_leb(m.ip + 1) + 1;
    Ok(())
}

pub(crate) fn local_get(m: &mut Machine<'_>) -> R {
    let (i, next) = m.u32_at(m.ip + 1);
    let v = m.stack[m.vfp + i as usize];
    m.push(v);
    m.ip = next;
    Ok(())
}

pub(crate) fn local_set(m: &mut Machine<'_>) -> R {
    let (i, next) = m.u32_at(m.ip + 1);
    let v = m.pop();
    m.stack[m.vfp + i as usize] = v;
    m.ip = next;
    Ok(())
}

pub(crate) fn local_tee(m: &mut Machine<'_>) -> R {
    let (i, next) = m.u32_at(m.ip + 1);
    let v = m.stack[m.vsp - 1];
    m.stack[m.vfp + i as usize] = v;
    m.ip = next;
    Ok(())
}

pub(crate) fn global_get(m: &mut Machine<'_>) -> R {
    let (g, next) = m.u32_at(m.ip + 1);
    let v = m.inst.globals[g as usize].cell;
    m.push(v);
    m.ip = next;
    Ok(())
}

pub(crate) fn global_set(m: &mut Machine<'_>) -> R {
    let (g, next) = m.u32_at(m.ip + 1);
    let v = m.pop();
    m.inst.globals[g as usize].cell = v;
    m.ip = next;
    Ok(())
}

pub(crate) fn table_get(m: &mut Machine<'_>) -> R {
    let (t, next) = m.u32_at(m.ip + 1);
    let i = m.pop() as u32;
    let Some(r) = m.inst.tables[t as usize].get(i) else {
        return Err(m.trap(TrapKind::TableOutOfBounds));
    };
    m.push(ref_to_cell(r));
    m.ip = next;
    Ok(())
}

pub(crate) fn table_set(m: &mut Machine<'_>) -> R {
    let (t, next) = m.u32_at(m.ip + 1);
    let r = cell_to_ref(m.pop());
    let i = m.pop() as u32;
    if !m.inst.tables[t as usize].set(i, r) {
        return Err(m.trap(TrapKind::TableOutOfBounds));
    }
    m.ip = next;
    Ok(())
}

// ---- memory ----

#[inline(always)]
fn memarg(m: &Machine<'_>) -> (u32, usize) {
    let align_end = m.skip_leb(m.ip + 1);
    m.u32_at(align_end)
}

#[inline(always)]
fn effective<const N: usize>(m: &mut Machine<'_>) -> Result<(usize, usize), Stop> {
    let (offset, next) = memarg(m);
    let addr = m.pop() as u32;
    let mem = m.inst.memory.as_ref().expect("validated memory access");
    match memory_access_check(mem, addr, offset, N as u32) {
        Some(ea) => Ok((ea, next)),
        None => Err(m.trap(TrapKind::MemoryOutOfBounds)),
    }
}

macro_rules! load {
    ($($name:ident: $n:literal, |$b:ident| $conv:expr;)*) => {$(
        pub(crate) fn $name(m: &mut Machine<'_>) -> R {
            let (ea, next) = effective::<$n>(m)?;
            let data = m.inst.memory.as_ref().expect("validated memory access").data();
            let $b: [u8; $n] = data[ea..ea + $n].try_into().expect("length checked");
            let v: u64 = $conv;
            m.stack[m.vsp] = v;
            m.vsp += 1;
            m.ip = next;
            Ok(())
        }
    )*};
}

load! {
    i32_load: 4, |b| pu32(u32::from_le_bytes(b));
    i64_load: 8, |b| u64::from_le_bytes(b);
    f32_load: 4, |b| pu32(u32::from_le_bytes(b));
    f64_load: 8, |b| u64::from_le_bytes(b);
    i32_load8_s: 1, |b| pi32(i32::from(b[0] as i8));
    i32_load8_u: 1, |b| u64::from(b[0]);
    i32_load16_s: 2, |b| pi32(i32::from(i16::from_le_bytes(b)));
    i32_load16_u: 2, |b| u64::from(u16::from_le_bytes(b));
    i64_load8_s: 1, |b| pi64(i64::from(b[0] as i8));
    i64_load8_u: 1, |b| u64::from(b[0]);
    i64_load16_s: 2, |b| pi64(i64::from(i16::from_le_bytes(b)));
    i64_load16_u: 2, |b| u64::from(u16::from_le_bytes(b));
    i64_load32_s: 4, |b| pi64(i64::from(i32::from_le_bytes(b)));
    i64_load32_u: 4, |b| u64::from(u32::from_le_bytes(b));
}

macro_rules! store {
    ($($name:ident: $n:literal;)*) => {$(
        pub(crate) fn $name(m: &mut Machine<'_>) -> R {
            let v = m.pop();
            let (ea, next) = effective::<$n>(m)?;
            let data = m.inst.memory.as_mut().expect("validated memory access").data_mut();
            data[ea..ea + $n].copy_from_slice(&v.to_le_bytes()[..$n]);
            m.ip = next;
            Ok(())
        }
    )*};
}

store! {
    store32: 4;
    store64: 8;
    store8: 1;
    store16: 2;
}

pub(crate) fn memory_size(m: &mut Machine<'_>) -> R {
    let pages = m.inst.memory.as_ref().expect("validated").pages();
    m.push(pu32(pages));
    m.ip = m.skip_leb(m.ip + 1);
    Ok(())
}

pub(crate) fn memory_grow(m: &mut Machine<'_>) -> R {
    let delta = m.top_mut().to_owned() as u32;
    let r = m.inst.memory.as_mut().expect("validated").grow(delta);
    *m.top_mut() = pi32(r);
    m.ip = m.skip_leb(m.ip + 1);
    Ok(())
}

// ---- constants ----

pub(crate) fn i32_const(m: &mut Machine<'_>) -> R {
    let (v, next) = m.i64_at(m.ip + 1);
    m.push(pi32(v as i32));
    m.ip = next;
    Ok(())
}

pub(crate) fn i64_const(m: &mut Machine<'_>) -> R {
    let (v, next) = m.i64_at(m.ip + 1);
    m.push(pi64(v));
    m.ip = next;
    Ok(())
}

pub(crate) fn f32_const(m: &mut Machine<'_>) -> R {
    let p = m.ip + 1;
    let bits = u32::from_le_bytes([m.byte(p), m.byte(p + 1), m.byte(p + 2), m.byte(p + 3)]);
    m.push(pu32(bits));
    m.ip = p + 4;
    Ok(())
}

pub(crate) fn f64_const(m: &mut Machine<'_>) -> R {
    let p = m.ip + 1;
    let mut b = [0u8; 8];
    for (i, x) in b.iter_mut().enumerate() {
        *x = m.byte(p + i);
    }
    m.push(u64::from_le_bytes(b));
    m.ip = p + 8;
    Ok(())
}

// ---- numeric ----

fn div_s32(a: i32, b: i32) -> Result<i32, TrapKind> {
    match (a, b) {
        (_, 0) => Err(TrapKind::IntegerDivideByZero),
        (i32::MIN, -1) => Err(TrapKind::IntegerOverflow),
        _ => Ok(a / b),
    }
}

fn div_s64(a: i64, b: i64) -> Result<i64, TrapKind> {
    match (a, b) {
        (_, 0) => Err(TrapKind::IntegerDivideByZero),
        (i64::MIN, -1) => Err(TrapKind::IntegerOverflow),
        _ => Ok(a / b),
    }
}

fn nonzero<T: PartialEq + Default>(b: T) -> Result<(), TrapKind> {
    if b == T::default() {
        Err(TrapKind::IntegerDivideByZero)
    } else {
        Ok(())
    }
}

macro_rules! float_helpers {
    ($min:ident, $max:ident, $t:ty) => {
        fn $min(a: $t, b: $t) -> $t {
            if a.is_nan() || b.is_nan() {
                <$t>::NAN
            } else if a == b {
                // Distinguishes -0 from +0.
                <$t>::from_bits(a.to_bits() | b.to_bits())
            } else {
                a.min(b)
            }
        }
        fn $max(a: $t, b: $t) -> $t {
            if a.is_nan() || b.is_nan() {
                <$t>::NAN
            } else if a == b {
                <$t>::from_bits(a.to_bits() & b.to_bits())
            } else {
                a.max(b)
            }
        }
    };
}

float_helpers!(fmin32, fmax32, f32);
float_helpers!(fmin64, fmax64, f64);

/// Truncates toward zero and checks the result lies in `[lo, hi)` (exclusive
/// bounds are exact powers of two, representable in `f64`).
fn trunc_checked(x: f64, lo_exclusive: f64, hi_exclusive: f64) -> Result<f64, TrapKind> {
    if x.is_nan() {
        return Err(TrapKind::InvalidFloatConversion);
    }
    let t = x.trunc();
    if t <= lo_exclusive || t >= hi_exclusive {
        return Err(TrapKind::IntegerOverflow);
    }
    Ok(t)
}

const I32_LO: f64 = -2_147_483_649.0;
const I32_HI: f64 = 2_147_483_648.0;
const U32_HI: f64 = 4_294_967_296.0;
const I64_LO: f64 = -9_223_372_036_854_777_856.0; // next f64 below -2^63
const I64_HI: f64 = 9_223_372_036_854_775_808.0;
const U64_HI: f64 = 18_446_744_073_709_551_616.0;

unop! {
    i32_eqz: u32_ -> pbool, |a| a == 0;
    i64_eqz: u64_ -> pbool, |a| a == 0;
    i32_clz: u32_ -> pu32, |a| a.leading_zeros();
    i32_ctz: u32_ -> pu32, |a| a.trailing_zeros();
    i32_popcnt: u32_ -> pu32, |a| a.count_ones();
    i64_clz: u64_ -> pu64, |a| u64::from(a.leading_zeros());
    i64_ctz: u64_ -> pu64, |a| u64::from(a.trailing_zeros());
    i64_popcnt: u64_ -> pu64, |a| u64::from(a.count_ones());

    f32_abs: f32_ -> pf32, |a| a.abs();
    f32_neg: f32_ -> pf32, |a| -a;
    f32_ceil: f32_ -> pf32, |a| a.ceil();
    f32_floor: f32_ -> pf32, |a| a.floor();
    f32_trunc: f32_ -> pf32, |a| a.trunc();
    f32_nearest: f32_ -> pf32, |a| a.round_ties_even();
    f32_sqrt: f32_ -> pf32, |a| a.sqrt();
    f64_abs: f64_ -> pf64, |a| a.abs();
    f64_neg: f64_ -> pf64, |a| -a;
    f64_ceil: f64_ -> pf64, |a| a.ceil();
    f64_floor: f64_ -> pf64, |a| a.floor();
    f64_trunc: f64_ -> pf64, |a| a.trunc();
    f64_nearest: f64_ -> pf64, |a| a.round_ties_even();
    f64_sqrt: f64_ -> pf64, |a| a.sqrt();

    i32_wrap_i64: u64_ -> pu32, |a| a as u32;
    i64_extend_i32_s: i32_ -> pi64, |a| i64::from(a);
    i64_extend_i32_u: u32_ -> pu64, |a| u64::from(a);
    f32_convert_i32_s: i32_ -> pf32, |a| a as f32;
    f32_convert_i32_u: u32_ -> pf32, |a| a as f32;
    f32_convert_i64_s: i64_ -> pf32, |a| a as f32;
    f32_convert_i64_u: u64_ -> pf32, |a| a as f32;
    f32_demote_f64: f64_ -> pf32, |a| a as f32;
    f64_convert_i32_s: i32_ -> pf64, |a| f64::from(a);
    f64_convert_i32_u: u32_ -> pf64, |a| f64::from(a);
    f64_convert_i64_s: i64_ -> pf64, |a| a as f64;
    f64_convert_i64_u: u64_ -> pf64, |a| a as f64;
    f64_promote_f32: f32_ -> pf64, |a| f64::from(a);
    // Reinterpretations leave the bit pattern in place.
    reinterpret: u64_ -> pu64, |a| a;
    i32_extend8_s: u32_ -> pi32, |a| i32::from(a as u8 as i8);
    i32_extend16_s: u32_ -> pi32, |a| i32::from(a as u16 as i16);
    i64_extend8_s: u64_ -> pi64, |a| i64::from(a as u8 as i8);
    i64_extend16_s: u64_ -> pi64, |a| i64::from(a as u16 as i16);
    i64_extend32_s: u64_ -> pi64, |a| i64::from(a as u32 as i32);

    // Saturating truncations: Rust's float-to-int casts saturate and map NaN to 0.
    i32_trunc_sat_f32_s: f32_ -> pi32, |a| a as i32;
    i32_trunc_sat_f32_u: f32_ -> pu32, |a| a as u32;
    i32_trunc_sat_f64_s: f64_ -> pi32, |a| a as i32;
    i32_trunc_sat_f64_u: f64_ -> pu32, |a| a as u32;
    i64_trunc_sat_f32_s: f32_ -> pi64, |a| a as i64;
    i64_trunc_sat_f32_u: f32_ -> pu64, |a| a as u64;
    i64_trunc_sat_f64_s: f64_ -> pi64, |a| a as i64;
    i64_trunc_sat_f64_u: f64_ -> pu64, |a| a as u64;
}

unop_try! {
    i32_trunc_f32_s: f32_ -> pi32, |a| trunc_checked(f64::from(a), I32_LO, I32_HI).map(|t| t as i32);
    i32_trunc_f32_u: f32_ -> pu32, |a| trunc_checked(f64::from(a), -1.0, U32_HI).map(|t| t as u32);
    i32_trunc_f64_s: f64_ -> pi32, |a| trunc_checked(a, I32_LO, I32_HI).map(|t| t as i32);
    i32_trunc_f64_u: f64_ -> pu32, |a| trunc_checked(a, -1.0, U32_HI).map(|t| t as u32);
    i64_trunc_f32_s: f32_ -> pi64, |a| trunc_checked(f64::from(a), I64_LO, I64_HI).map(|t| t as i64);
    i64_trunc_f32_u: f32_ -> pu64, |a| trunc_checked(f64::from(a), -1.0, U64_HI).map(|t| t as u64);
    i64_trunc_f64_s: f64_ -> pi64, |a| trunc_checked(a, I64_LO, I64_HI).map(|t| t as i64);
    i64_trunc_f64_u: f64_ -> pu64, |a| trunc_checked(a, -1.0, U64_HI).map(|t| t as u64);
}

binop! {
    i32_eq: u32_ -> pbool, |a, b| a == b;
    i32_ne: u32_ -> pbool, |a, b| a != b;
    i32_lt_s: i32_ -> pbool, |a, b| a < b;
    i32_lt_u: u32_ -> pbool, |a, b| a < b;
    i32_gt_s: i32_ -> pbool, |a, b| a > b;
    i32_gt_u: u32_ -> pbool, |a, b| a > b;
    i32_le_s: i32_ -> pbool, |a, b| a <= b;
    i32_le_u: u32_ -> pbool, |a, b| a <= b;
    i32_ge_s: i32_ -> pbool, |a, b| a >= b;
    i32_ge_u: u32_ -> pbool, |a, b| a >= b;
    i64_eq: u64_ -> pbool, |a, b| a == b;
    i64_ne: u64_ -> pbool, |a, b| a != b;
    i64_lt_s: i64_ -> pbool, |a, b| a < b;
    i64_lt_u: u64_ -> pbool, |a, b| a < b;
    i64_gt_s: i64_ -> pbool, |a, b| a > b;
    i64_gt_u: u64_ -> pbool, |a, b| a > b;
    i64_le_s: i64_ -> pbool, |a, b| a <= b;
    i64_le_u: u64_ -> pbool, |a, b| a <= b;
    i64_ge_s: i64_ -> pbool, |a, b| a >= b;
    i64_ge_u: u64_ -> pbool, |a, b| a >= b;
    f32_eq: f32_ -> pbool, |a, b| a == b;
    f32_ne: f32_ -> pbool, |a, b| a != b;
    f32_lt: f32_ -> pbool, |a, b| a < b;
    f32_gt: f32_ -> pbool, |a, b| a > b;
    f32_le: f32_ -> pbool, |a, b| a <= b;
    f32_ge: f32_ -> pbool, |a, b| a >= b;
    f64_eq: f64_ -> pbool, |a, b| a == b;
    f64_ne: f64_ -> pbool, |a, b| a != b;
    f64_lt: f64_ -> pbool, |a, b| a < b;
    f64_gt: f64_ -> pbool, |a, b| a > b;
    f64_le: f64_ -> pbool, |a, b| a <= b;
    f64_ge: f64_ -> pbool, |a, b| a >= b;

    i32_add: u32_ -> pu32, |a, b| a.wrapping_add(b);
    i32_sub: u32_ -> pu32, |a, b| a.wrapping_sub(b);
    i32_mul: u32_ -> pu32, |a, b| a.wrapping_mul(b);
    i32_and: u32_ -> pu32, |a, b| a & b;
    i32_or: u32_ -> pu32, |a, b| a | b;
    i32_xor: u32_ -> pu32, |a, b| a ^ b;
    i32_shl: u32_ -> pu32, |a, b| a.wrapping_shl(b);
    i32_shr_s: i32_ -> pi32, |a, b| a.wrapping_shr(b as u32);
    i32_shr_u: u32_ -> pu32, |a, b| a.wrapping_shr(b);
    i32_rotl: u32_ -> pu32, |a, b| a.rotate_left(b % 32);
    i32_rotr: u32_ -> pu32, |a, b| a.rotate_right(b % 32);
    i64_add: u64_ -> pu64, |a, b| a.wrapping_add(b);
    i64_sub: u64_ -> pu64, |a, b| a.wrapping_sub(b);
    i64_mul: u64_ -> pu64, |a, b| a.wrapping_mul(b);
    i64_and: u64_ -> pu64, |a, b| a & b;
    i64_or: u64_ -> pu64, |a, b| a | b;
    i64_xor: u64_ -> pu64, |a, b| a ^ b;
    i64_shl: u64_ -> pu64, |a, b| a.wrapping_shl(b as u32);
    i64_shr_s: i64_ -> pi64, |a, b| a.wrapping_shr(b as u32);
    i64_shr_u: u64_ -> pu64, |a, b| a.wrapping_shr(b as u32);
    i64_rotl: u64_ -> pu64, |a, b| a.rotate_left((b % 64) as u32);
    i64_rotr: u64_ -> pu64, |a, b| a.rotate_right((b % 64) as u32);

    f32_add: f32_ -> pf32, |a, b| a + b;
    f32_sub: f32_ -> pf32, |a, b| a - b;
    f32_mul: f32_ -> pf32, |a, b| a * b;
    f32_div: f32_ -> pf32, |a, b| a / b;
    f32_min: f32_ -> pf32, |a, b| fmin32(a, b);
    f32_max: f32_ -> pf32, |a, b| fmax32(a, b);
    f32_copysign: f32_ -> pf32, |a, b| a.copysign(b);
    f64_add: f64_ -> pf64, |a, b| a + b;
    f64_sub: f64_ -> pf64, |a, b| a - b;
    f64_mul: f64_ -> pf64, |a, b| a * b;
    f64_div: f64_ -> pf64, |a, b| a / b;
    f64_min: f64_ -> pf64, |a, b| fmin64(a, b);
    f64_max: f64_ -> pf64, |a, b| fmax64(a, b);
    f64_copysign: f64_ -> pf64, |a, b| a.copysign(b);
}

binop_try! {
    i32_div_s: i32_ -> pi32, |a, b| div_s32(a, b);
    i32_div_u: u32_ -> pu32, |a, b| nonzero(b).map(|()| a / b);
    i32_rem_s: i32_ -> pi32, |a, b| nonzero(b).map(|()| a.wrapping_rem(b));
    i32_rem_u: u32_ -> pu32, |a, b| nonzero(b).map(|()| a % b);
    i64_div_s: i64_ -> pi64, |a, b| div_s64(a, b);
    i64_div_u: u64_ -> pu64, |a, b| nonzero(b).map(|()| a / b);
    i64_rem_s: i64_ -> pi64, |a, b| nonzero(b).map(|()| a.wrapping_rem(b));
    i64_rem_u: u64_ -> pu64, |a, b| nonzero(b).map(|()| a % b);
}

// ---- references ----

pub(crate) fn ref_null(m: &mut Machine<'_>) -> R {
    m.push(0);
    m.ip += 2;
    Ok(())
}

pub(crate) fn ref_is_null(m: &mut Machine<'_>) -> R {
    let top = m.top_mut();
    *top = pbool(*top == 0);
    m.ip += 1;
    Ok(())
}

pub(crate) fn ref_func(m: &mut Machine<'_>) -> R {
    let (f, next) = m.u32_at(m.ip + 1);
    m.push(ref_to_cell(Some(f)));
    m.ip = next;
    Ok(())
}

// ---- 0xFC bulk memory and table operations; immediates start at `m.imm` ----

fn pop3(m: &mut Machine<'_>) -> (u32, u32, u32) {
    let n = m.pop() as u32;
    let b = m.pop() as u32;
    let a = m.pop() as u32;
    (a, b, n)
}

fn in_bounds(start: u32, len: u32, size: usize) -> bool {
    u64::from(start) + u64::from(len) <= size as u64
}

macro_rules! sat_fc {
    ($($name:ident => $inner:ident;)*) => {$(
        pub(crate) fn $name(m: &mut Machine<'_>) -> R {
            let next = m.imm;
            $inner(m)?;
            m.ip = next;
            Ok(())
        }
    )*};
}

sat_fc! {
    fc_i32_trunc_sat_f32_s => i32_trunc_sat_f32_s;
    fc_i32_trunc_sat_f32_u => i32_trunc_sat_f32_u;
    fc_i32_trunc_sat_f64_s => i32_trunc_sat_f64_s;
    fc_i32_trunc_sat_f64_u => i32_trunc_sat_f64_u;
    fc_i64_trunc_sat_f32_s => i64_trunc_sat_f32_s;
    fc_i64_trunc_sat_f32_u => i64_trunc_sat_f32_u;
    fc_i64_trunc_sat_f64_s => i64_trunc_sat_f64_s;
    fc_i64_trunc_sat_f64_u => i64_trunc_sat_f64_u;
}

pub(crate) fn memory_init(m: &mut Machine<'_>) -> R {
    let (d, p) = m.u32_at(m.imm);
    let next = m.skip_leb(p);
    let (dst, src, n) = pop3(m);
    let seg = &m.module.module.data[d as usize];
    let bytes = if m.inst.dropped_data[d as usize] { &[][..] } else { &m.orig[seg.data.clone()] };
    let mem = m.inst.memory.as_mut().expect("validated");
    if !in_bounds(src, n, bytes.len()) || !in_bounds(dst, n, mem.len()) {
        return Err(m.trap(TrapKind::MemoryOutOfBounds));
    }
    let (dst, src, n) = (dst as usize, src as usize, n as usize);
    mem.data_mut()[dst..dst + n].copy_from_slice(&bytes[src..src + n]);
    m.ip = next;
    Ok(())
}

pub(crate) fn data_drop(m: &mut Machine<'_>) -> R {
    let (d, next) = m.u32_at(m.imm);
    m.inst.dropped_data[d as usize] = true;
    m.ip = next;
    Ok(())
}

pub(crate) fn memory_copy(m: &mut Machine<'_>) -> R {
    let next = m.skip_leb(m.skip_leb(m.imm));
    let (dst, src, n) = pop3(m);
    let mem = m.inst.memory.as_mut().expect("validated");
    if !in_bounds(src, n, mem.len()) || !in_bounds(dst, n, mem.len()) {
        return Err(m.trap(TrapKind::MemoryOutOfBounds));
    }
    let (dst, src, n) = (dst as usize, src as usize, n as usize);
    mem.data_mut().copy_within(src..src + n, dst);
    m.ip = next;
    Ok(())
}

pub(crate) fn memory_fill(m: &mut Machine<'_>) -> R {
    let next = m.skip_leb(m.imm);
    let (dst, val, n) = pop3(m);
    let mem = m.inst.memory.as_mut().expect("validated");
    if !in_bounds(dst, n, mem.len()) {
        return Err(m.trap(TrapKind::MemoryOutOfBounds));
    }
    let (dst, n) = (dst as usize, n as usize);
    mem.data_mut()[dst..dst + n].fill(val as u8);
    m.ip = next;
    Ok(())
}

pub(crate) fn table_init(m: &mut Machine<'_>) -> R {
    let (e, p) = m.u32_at(m.imm);
    let (t, next) = m.u32_at(p);
    let (dst, src, n) = pop3(m);
    let module = m.module;
    let items = if m.inst.dropped_elems[e as usize] { &[][..] } else { &module.module.elements[e as usize].items[..] };
    let table_len = m.inst.tables[t as usize].elems.len();
    if !in_bounds(src, n, items.len()) || !in_bounds(dst, n, table_len) {
        return Err(m.trap(TrapKind::TableOutOfBounds));
    }
    for i in 0..n as usize {
        let r = cell_to_ref(eval_const(&items[src as usize + i], &m.inst.globals));
        m.inst.tables[t as usize].elems[dst as usize + i] = r;
    }
    m.ip = next;
    Ok(())
}

pub(crate) fn elem_drop(m: &mut Machine<'_>) -> R {
    let (e, next) = m.u32_at(m.imm);
    m.inst.dropped_elems[e as usize] = true;
    m.ip = next;
    Ok(())
}

pub(crate) fn table_copy(m: &mut Machine<'_>) -> R {
    let (x, p) = m.u32_at(m.imm);
    let (y, next) = m.u32_at(p);
    let (dst, src, n) = pop3(m);
    let (x, y) = (x as usize, y as usize);
    if !in_bounds(src, n, m.inst.tables[y].elems.len()) || !in_bounds(dst, n, m.inst.tables[x].elems.len()) {
        return Err(m.trap(TrapKind::TableOutOfBounds));
    }
    let (dst, src, n) = (dst as usize, src as usize, n as usize);
    if x == y {
        m.inst.tables[x].elems.copy_within(src..src + n, dst);
    } else {
        let tmp = m.inst.tables[y].elems[src..src + n].to_vec();
        m.inst.tables[x].elems[dst..dst + n].copy_from_slice(&tmp);
    }
    m.ip = next;
    Ok(())
}

pub(crate) fn table_grow(m: &mut Machine<'_>) -> R {
    let (t, next) = m.u32_at(m.imm);
    let n = m.pop() as u32;
    let init = cell_to_ref(*m.top_mut());
    let r = m.inst.tables[t as usize].grow(n, init);
    *m.top_mut() = pi32(r);
    m.ip = next;
    Ok(())
}

pub(crate) fn table_size(m: &mut Machine<'_>) -> R {
    let (t, next) = m.u32_at(m.imm);
    let size = m.inst.tables[t as usize].size();
    m.push(pu32(size));
    m.ip = next;
    Ok(())
}

pub(crate) fn table_fill(m: &mut Machine<'_>) -> R {
    let (t, next) = m.u32_at(m.imm);
    let (i, val, n) = pop3(m);
    let table = &mut m.inst.tables[t as usize];
    if !in_bounds(i, n, table.elems.len()) {
        return Err(m.trap(TrapKind::TableOutOfBounds));
    }
    table.elems[i as usize..(i + n) as usize].fill(cell_to_ref(u64::from(val)));
    m.ip = next;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_min_max_zero_signs() {
        assert!(fmin32(0.0, -0.0).is_sign_negative());
        assert!(fmax32(0.0, -0.0).is_sign_positive());
        assert!(fmin64(f64::NAN, 1.0).is_nan());
        assert_eq!(fmax64(1.0, 2.0), 2.0);
    }

    #[test]
    fn trunc_bounds() {
        assert_eq!(trunc_checked(-2_147_483_648.9, I32_LO, I32_HI), Ok(-2_147_483_648.0));
        assert_eq!(trunc_checked(2_147_483_648.0, I32_LO, I32_HI), Err(TrapKind::IntegerOverflow));
        assert_eq!(trunc_checked(-0.9, -1.0, U32_HI), Ok(-0.0));
        assert_eq!(trunc_checked(f64::NAN, -1.0, U32_HI), Err(TrapKind::InvalidFloatConversion));
        assert_eq!(trunc_checked(-9_223_372_036_854_775_808.0, I64_LO, I64_HI), Ok(-9_223_372_036_854_775_808.0));
    }

    #[test]
    fn division_traps() {
        assert_eq!(div_s32(-7, 2), Ok(-3));
        assert_eq!(div_s32(i32::MIN, -1), Err(TrapKind::IntegerOverflow));
        assert_eq!(div_s64(1, 0), Err(TrapKind::IntegerDivideByZero));
    }
}
