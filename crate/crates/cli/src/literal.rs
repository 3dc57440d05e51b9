//! Typed argument literals: `i32:-5`, `i64:0x10`, `f32:1.5`, `f64:nan`.
//! Floats also accept raw bits as `f32:bits:0x7fc00000`.

use sidewasm::binary::ValueType;
use sidewasm::runtime::Value;

pub fn parse(s: &str) -> Result<Value, String> {
    let (kind, text) = s.split_once(':').ok_or_else(|| format!("argument `{s}` is not of the form kind:value"))?;
    let bad = || format!("cannot parse `{text}` as {kind}");
    Ok(match kind {
        "i32" => Value::I32(int(text, 32).ok_or_else(bad)? as i32),
        "i64" => Value::I64(int(text, 64).ok_or_else(bad)? as i64),
        "f32" => match text.strip_prefix("bits:") {
            Some(bits) => Value::F32(f32::from_bits(int(bits, 32).ok_or_else(bad)? as u32)),
            None => Value::F32(text.parse().map_err(|_| bad())?),
        },
        "f64" => match text.strip_prefix("bits:") {
            Some(bits) => Value::F64(f64::from_bits(int(bits, 64).ok_or_else(bad)? as u64)),
            None => Value::F64(text.parse().map_err(|_| bad())?),
        },
        _ => return Err(format!("unknown argument kind `{kind}` (expected i32, i64, f32 or f64)")),
    })
}

/// Signed or unsigned decimal, or `0x` hex, that fits in `bits` bits.
/// Returned as the two's-complement bit pattern.
fn int(text: &str, bits: u32) -> Option<u64> {
    let (neg, digits) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let mag = match digits.strip_prefix("0x").or_else(|| digits.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(&hex.replace('_', ""), 16).ok()?,
        None => digits.replace('_', "").parse::<u64>().ok()?,
    };
    let max = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
    if neg {
        let limit = 1u64 << (bits - 1);
        if mag > limit {
            return None;
        }
        Some(mag.wrapping_neg() & max)
    } else if mag > max {
        None
    } else {
        Some(mag)
    }
}

pub fn kind_name(t: ValueType) -> &'static str {
    match t {
        ValueType::I32 => "i32",
        ValueType::I64 => "i64",
        ValueType::F32 => "f32",
        ValueType::F64 => "f64",
        ValueType::FuncRef => "funcref",
        ValueType::ExternRef => "externref",
    }
}
