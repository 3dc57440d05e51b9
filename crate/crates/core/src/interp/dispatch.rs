//! 256-entry handler tables.
//!
//! Most opcodes take one dispatch through [`MAIN`]. The `0xFC` and `0xFD`
//! prefixes dispatch a second time on the following byte; a sub-opcode whose
//! first byte has the high bit set is a multi-byte LEB and takes a third
//! dispatch once fully decoded. [`PROBE`] routes every byte through the
//! global probe before its [`MAIN`] handler.

use crate::binary::opcode as op;
use crate::binary::opcode::fc;

use super::machine::{leb_u32, Handler, Machine, R};
use super::ops::*;
use super::TrapKind;

pub(crate) static MAIN: [Handler; 256] = build_main();
pub(crate) static FC: [Handler; 256] = build_fc();
pub(crate) static FD: [Handler; 256] = build_fd();
pub(crate) static PROBE: [Handler; 256] = [probe_global as Handler; 256];

const fn build_main() -> [Handler; 256] {
    let mut t = [invalid as Handler; 256];
    t[op::UNREACHABLE as usize] = unreachable;
    t[op::NOP as usize] = nop;
    t[op::BLOCK as usize] = block;
    t[op::LOOP as usize] = block;
    t[op::IF as usize] = if_;
    t[op::ELSE as usize] = else_;
    t[op::END as usize] = end;
    t[op::BR as usize] = br;
    t[op::BR_IF as usize] = br_if;
    t[op::BR_TABLE as usize] = br_table;
    t[op::RETURN as usize] = return_;
    t[op::CALL as usize] = call;
    t[op::CALL_INDIRECT as usize] = call_indirect;
    t[op::DROP as usize] = drop;
    t[op::SELECT as usize] = select;
    t[op::SELECT_T as usize] = select_t;
    t[op::LOCAL_GET as usize] = local_get;
    t[op::LOCAL_SET as usize] = local_set;
    t[op::LOCAL_TEE as usize] = local_tee;
    t[op::GLOBAL_GET as usize] = global_get;
    t[op::GLOBAL_SET as usize] = global_set;
    t[op::TABLE_GET as usize] = table_get;
    t[op::TABLE_SET as usize] = table_set;

    t[op::I32_LOAD as usize] = i32_load;
    t[op::I64_LOAD as usize] = i64_load;
    t[op::F32_LOAD as usize] = f32_load;
    t[op::F64_LOAD as usize] = f64_load;
    t[op::I32_LOAD8_S as usize] = i32_load8_s;
    t[op::I32_LOAD8_U as usize] = i32_load8_u;
    t[op::I32_LOAD16_S as usize] = i32_load16_s;
    t[op::I32_LOAD16_U as usize] = i32_load16_u;
    t[op::I64_LOAD8_S as usize] = i64_load8_s;
    t[op::I64_LOAD8_U as usize] = i64_load8_u;
    t[op::I64_LOAD16_S as usize] = i64_load16_s;
    t[op::I64_LOAD16_U as usize] = i64_load16_u;
    t[op::I64_LOAD32_S as usize] = i64_load32_s;
    t[op::I64_LOAD32_U as usize] = i64_load32_u;
    t[op::I32_STORE as usize] = store32;
    t[op::I64_STORE as usize] = store64;
    t[op::F32_STORE as usize] = store32;
    t[op::F64_STORE as usize] = store64;
    t[op::I32_STORE8 as usize] = store8;
    t[op::I32_STORE16 as usize] = store16;
    t[op::I64_STORE8 as usize] = store8;
    t[op::I64_STORE16 as usize] = store16;
    t[op::I64_STORE32 as usize] = store32;
    t[op::MEMORY_SIZE as usize] = memory_size;
    t[op::MEMORY_GROW as usize] = memory_grow;

    t[op::I32_CONST as usize] = i32_const;
    t[op::I64_CONST as usize] = i64_const;
    t[op::F32_CONST as usize] = f32_const;
    t[op::F64_CONST as usize] = f64_const;

    t[op::I32_EQZ as usize] = i32_eqz;
    t[op::I32_EQ as usize] = i32_eq;
    t[op::I32_NE as usize] = i32_ne;
    t[op::I32_LT_S as usize] = i32_lt_s;
    t[op::I32_LT_U as usize] = i32_lt_u;
    t[op::I32_GT_S as usize] = i32_gt_s;
    t[op::I32_GT_U as usize] = i32_gt_u;
    t[op::I32_LE_S as usize] = i32_le_s;
    t[op::I32_LE_U as usize] = i32_le_u;
    t[op::I32_GE_S as usize] = i32_ge_s;
    t[op::I32_GE_U as usize] = i32_ge_u;
    t[op::I64_EQZ as usize] = i64_eqz;
    t[op::I64_EQ as usize] = i64_eq;
    t[op::I64_NE as usize] = i64_ne;
    t[op::I64_LT_S as usize] = i64_lt_s;
    t[op::I64_LT_U as usize] = i64_lt_u;
    t[op::I64_GT_S as usize] = i64_gt_s;
    t[op::I64_GT_U as usize] = i64_gt_u;
    t[op::I64_LE_S as usize] = i64_le_s;
    t[op::I64_LE_U as usize] = i64_le_u;
    t[op::I64_GE_S as usize] = i64_ge_s;
    t[op::I64_GE_U as usize] = i64_ge_u;
    t[op::F32_EQ as usize] = f32_eq;
    t[op::F32_NE as usize] = f32_ne;
    t[op::F32_LT as usize] = f32_lt;
    t[op::F32_GT as usize] = f32_gt;
    t[op::F32_LE as usize] = f32_le;
    t[op::F32_GE as usize] = f32_ge;
    t[op::F64_EQ as usize] = f64_eq;
    t[op::F64_NE as usize] = f64_ne;
    t[op::F64_LT as usize] = f64_lt;
    t[op::F64_GT as usize] = f64_gt;
    t[op::F64_LE as usize] = f64_le;
    t[op::F64_GE as usize] = f64_ge;

    t[op::I32_CLZ as usize] = i32_clz;
    t[op::I32_CTZ as usize] = i32_ctz;
    t[op::I32_POPCNT as usize] = i32_popcnt;
    t[op::I32_ADD as usize] = i32_add;
    t[op::I32_SUB as usize] = i32_sub;
    t[op::I32_MUL as usize] = i32_mul;
    t[op::I32_DIV_S as usize] = i32_div_s;
    t[op::I32_DIV_U as usize] = i32_div_u;
    t[op::I32_REM_S as usize] = i32_rem_s;
    t[op::I32_REM_U as usize] = i32_rem_u;
    t[op::I32_AND as usize] = i32_and;
    t[op::I32_OR as usize] = i32_or;
    t[op::I32_XOR as usize] = i32_xor;
    t[op::I32_SHL as usize] = i32_shl;
    t[op::I32_SHR_S as usize] = i32_shr_s;
    t[op::I32_SHR_U as usize] = i32_shr_u;
    t[op::I32_ROTL as usize] = i32_rotl;
    t[op::I32_ROTR as usize] = i32_rotr;
    t[op::I64_CLZ as usize] = i64_clz;
    t[op::I64_CTZ as usize] = i64_ctz;
    t[op::I64_POPCNT as usize] = i64_popcnt;
    t[op::I64_ADD as usize] = i64_add;
    t[op::I64_SUB as usize] = i64_sub;
    t[op::I64_MUL as usize] = i64_mul;
    t[op::I64_DIV_S as usize] = i64_div_s;
    t[op::I64_DIV_U as usize] = i64_div_u;
    t[op::I64_REM_S as usize] = i64_rem_s;
    t[op::I64_REM_U as usize] = i64_rem_u;
    t[op::I64_AND as usize] = i64_and;
    t[op::I64_OR as usize] = i64_or;
    t[op::I64_XOR as usize] = i64_xor;
    t[op::I64_SHL as usize] = i64_shl;
    t[op::I64_SHR_S as usize] = i64_shr_s;
    t[op::I64_SHR_U as usize] = i64_shr_u;
    t[op::I64_ROTL as usize] = i64_rotl;
    t[op::I64_ROTR as usize] = i64_rotr;

    t[op::F32_ABS as usize] = f32_abs;
    t[op::F32_NEG as usize] = f32_neg;
    t[op::F32_CEIL as usize] = f32_ceil;
    t[op::F32_FLOOR as usize] = f32_floor;
    t[op::F32_TRUNC as usize] = f32_trunc;
    t[op::F32_NEAREST as usize] = f32_nearest;
    t[op::F32_SQRT as usize] = f32_sqrt;
    t[op::F32_ADD as usize] = f32_add;
    t[op::F32_SUB as usize] = f32_sub;
    t[op::F32_MUL as usize] = f32_mul;
    t[op::F32_DIV as usize] = f32_div;
    t[op::F32_MIN as usize] = f32_min;
    t[op::F32_MAX as usize] = f32_max;
    t[op::F32_COPYSIGN as usize] = f32_copysign;
    t[op::F64_ABS as usize] = f64_abs;
    t[op::F64_NEG as usize] = f64_neg;
    t[op::F64_CEIL as usize] = f64_ceil;
    t[op::F64_FLOOR as usize] = f64_floor;
    t[op::F64_TRUNC as usize] = f64_trunc;
    t[op::F64_NEAREST as usize] = f64_nearest;
    t[op::F64_SQRT as usize] = f64_sqrt;
    t[op::F64_ADD as usize] = f64_add;
    t[op::F64_SUB as usize] = f64_sub;
    t[op::F64_MUL as usize] = f64_mul;
    t[op::F64_DIV as usize] = f64_div;
    t[op::F64_MIN as usize] = f64_min;
    t[op::F64_MAX as usize] = f64_max;
    t[op::F64_COPYSIGN as usize] = f64_copysign;

    t[op::I32_WRAP_I64 as usize] = i32_wrap_i64;
    t[op::I32_TRUNC_F32_S as usize] = i32_trunc_f32_s;
    t[op::I32_TRUNC_F32_U as usize] = i32_trunc_f32_u;
    t[op::I32_TRUNC_F64_S as usize] = i32_trunc_f64_s;
    t[op::I32_TRUNC_F64_U as usize] = i32_trunc_f64_u;
    t[op::I64_EXTEND_I32_S as usize] = i64_extend_i32_s;
    t[op::I64_EXTEND_I32_U as usize] = i64_extend_i32_u;
    t[op::I64_TRUNC_F32_S as usize] = i64_trunc_f32_s;
    t[op::I64_TRUNC_F32_U as usize] = i64_trunc_f32_u;
    t[op::I64_TRUNC_F64_S as usize] = i64_trunc_f64_s;
    t[op::I64_TRUNC_F64_U as usize] = i64_trunc_f64_u;
    t[op::F32_CONVERT_I32_S as usize] = f32_convert_i32_s;
    t[op::F32_CONVERT_I32_U as usize] = f32_convert_i32_u;
    t[op::F32_CONVERT_I64_S as usize] = f32_convert_i64_s;
    t[op::F32_CONVERT_I64_U as usize] = f32_convert_i64_u;
    t[op::F32_DEMOTE_F64 as usize] = f32_demote_f64;
    t[op::F64_CONVERT_I32_S as usize] = f64_convert_i32_s;
    t[op::F64_CONVERT_I32_U as usize] = f64_convert_i32_u;
    t[op::F64_CONVERT_I64_S as usize] = f64_convert_i64_s;
    t[op::F64_CONVERT_I64_U as usize] = f64_convert_i64_u;
    t[op::F64_PROMOTE_F32 as usize] = f64_promote_f32;
    t[op::I32_REINTERPRET_F32 as usize] = reinterpret;
    t[op::I64_REINTERPRET_F64 as usize] = reinterpret;
    t[op::F32_REINTERPRET_I32 as usize] = reinterpret;
    t[op::F64_REINTERPRET_I64 as usize] = reinterpret;
    t[op::I32_EXTEND8_S as usize] = i32_extend8_s;
    t[op::I32_EXTEND16_S as usize] = i32_extend16_s;
    t[op::I64_EXTEND8_S as usize] = i64_extend8_s;
    t[op::I64_EXTEND16_S as usize] = i64_extend16_s;
    t[op::I64_EXTEND32_S as usize] = i64_extend32_s;

    t[op::REF_NULL as usize] = ref_null;
    t[op::REF_IS_NULL as usize] = ref_is_null;
    t[op::REF_FUNC as usize] = ref_func;

    t[op::PREFIX_FC as usize] = prefix_fc;
    t[op::PREFIX_FD as usize] = prefix_fd;
    t[op::PROBE as usize] = probe_local;
    t
}

const fn build_fc() -> [Handler; 256] {
    let mut t = [invalid as Handler; 256];
    t[fc::I32_TRUNC_SAT_F32_S as usize] = fc_i32_trunc_sat_f32_s;
    t[fc::I32_TRUNC_SAT_F32_U as usize] = fc_i32_trunc_sat_f32_u;
    t[fc::I32_TRUNC_SAT_F64_S as usize] = fc_i32_trunc_sat_f64_s;
    t[fc::I32_TRUNC_SAT_F64_U as usize] = fc_i32_trunc_sat_f64_u;
    t[fc::I64_TRUNC_SAT_F32_S as usize] = fc_i64_trunc_sat_f32_s;
    t[fc::I64_TRUNC_SAT_F32_U as usize] = fc_i64_trunc_sat_f32_u;
    t[fc::I64_TRUNC_SAT_F64_S as usize] = fc_i64_trunc_sat_f64_s;
    t[fc::I64_TRUNC_SAT_F64_U as usize] = fc_i64_trunc_sat_f64_u;
    t[fc::MEMORY_INIT as usize] = memory_init;
    t[fc::DATA_DROP as usize] = data_drop;
    t[fc::MEMORY_COPY as usize] = memory_copy;
    t[fc::MEMORY_FILL as usize] = memory_fill;
    t[fc::TABLE_INIT as usize] = table_init;
    t[fc::ELEM_DROP as usize] = elem_drop;
    t[fc::TABLE_COPY as usize] = table_copy;
    t[fc::TABLE_GROW as usize] = table_grow;
    t[fc::TABLE_SIZE as usize] = table_size;
    t[fc::TABLE_FILL as usize] = table_fill;
    let mut b = 0x80;
    while b < 256 {
        t[b] = fc_leb;
        b += 1;
    }
    t
}

const fn build_fd() -> [Handler; 256] {
    let mut t = [simd as Handler; 256];
    let mut b = 0x80;
    while b < 256 {
        t[b] = fd_leb;
        b += 1;
    }
    t
}

fn prefix_fc(m: &mut Machine<'_>) -> R {
    let b = m.byte(m.ip + 1);
    m.imm = m.ip + 2;
    m.store.stats.prefix_dispatches += 1;
    (FC[b as usize])(m)
}

fn fc_leb(m: &mut Machine<'_>) -> R {
    let (sub, next) = m.u32_at(m.ip + 1);
    m.imm = next;
    m.store.stats.leb_dispatches += 1;
    match FC.get(sub as usize) {
        Some(h) if sub < 0x80 => h(m),
        _ => invalid(m),
    }
}

fn prefix_fd(m: &mut Machine<'_>) -> R {
    let b = m.byte(m.ip + 1);
    m.imm = m.ip + 2;
    m.store.stats.prefix_dispatches += 1;
    (FD[b as usize])(m)
}

fn fd_leb(m: &mut Machine<'_>) -> R {
    let (_, next) = m.u32_at(m.ip + 1);
    m.imm = next;
    m.store.stats.leb_dispatches += 1;
    simd(m)
}

/// SIMD is decoded and dispatched but never executed; the validator rejects it.
fn simd(m: &mut Machine<'_>) -> R {
    Err(m.trap_msg(TrapKind::Unreachable, "SIMD is not implemented"))
}

/// Handler for the `PROBE` byte in a probe copy: fire the site's callbacks,
/// then run the original instruction through the main table.
fn probe_local(m: &mut Machine<'_>) -> R {
    let original = m.orig[m.ip];
    crate::probes::fire_local(m)?;
    (MAIN[original as usize])(m)
}

/// Every entry of [`PROBE`].
fn probe_global(m: &mut Machine<'_>) -> R {
    crate::probes::fire_global(m)?;
    let op = m.byte(m.ip);
    (MAIN[op as usize])(m)
}

/// How the dispatcher selects the handler for the instruction at `ip`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    /// Table lookups performed: 1 for plain opcodes, 2 for prefixed ones,
    /// 3 when the sub-opcode is a multi-byte LEB.
    pub depth: u8,
    pub opcode: u8,
    pub sub: Option<u32>,
}

/// Reports the dispatch path for the instruction at `code[ip]`.
pub fn route(code: &[u8], ip: usize) -> Route {
    let opcode = code[ip];
    if opcode != op::PREFIX_FC && opcode != op::PREFIX_FD {
        return Route { depth: 1, opcode, sub: None };
    }
    let first = code[ip + 1];
    let (sub, _) = leb_u32(code, ip + 1);
    Route { depth: if first < 0x80 { 2 } else { 3 }, opcode, sub: Some(sub) }
}
