use proptest::prelude::*;
use sidewasm::binary::{
    decode_locals, decode_module, read_leb_signed, read_leb_unsigned, DecodeErrorKind, ExternKind, FuncType, FunctionBody,
    ValueType::{self, *},
};
use sidewasm::validator::ValidationErrorKind;
use sidewasm_testkit::{fixtures, Code, ModuleBuilder};

#[test]
fn leb_unsigned_examples() {
    assert_eq!(read_leb_unsigned(&[0x05], 0, 32), Ok((5, 1)));
    assert_eq!(read_leb_unsigned(&[0xE5, 0x8E, 0x26], 0, 32), Ok((624_485, 3)));
    assert!(read_leb_unsigned(&[0x80, 0x80, 0x80, 0x80, 0x80, 0x00], 0, 32).is_err());
}

#[test]
fn leb_signed_examples() {
    assert_eq!(read_leb_signed(&[0x7F], 0, 32), Ok((-1, 1)));
    assert_eq!(read_leb_signed(&[0x3F], 0, 32), Ok((63, 1)));
    assert_eq!(read_leb_signed(&[0x40], 0, 32), Ok((-64, 1)));
}

/// Straightforward encoders used as the inverse of the readers.
fn encode_unsigned(mut v: u64) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(b);
            return out;
        }
        out.push(b | 0x80);
    }
}

fn encode_signed(mut v: i64) -> Vec<u8> {
    let mut out = Vec::new();
    loop {
        let b = (v & 0x7f) as u8;
        v >>= 7;
        if (v == 0 && b & 0x40 == 0) || (v == -1 && b & 0x40 != 0) {
            out.push(b);
            return out;
        }
        out.push(b | 0x80);
    }
}

proptest! {
    #[test]
    fn leb_unsigned_inverts_encoding(v in any::<u32>(), pad in 0usize..3) {
        let mut bytes = vec![0xAA; pad];
        bytes.extend(encode_unsigned(u64::from(v)));
        let n = bytes.len() - pad;
        prop_assert_eq!(read_leb_unsigned(&bytes, pad, 32), Ok((u64::from(v), n)));
    }

    #[test]
    fn leb_signed_inverts_encoding(v in any::<i64>()) {
        let bytes = encode_signed(v);
        prop_assert_eq!(read_leb_signed(&bytes, 0, 64), Ok((v, bytes.len())));
    }

    #[test]
    fn leb_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..12), bits in prop::sample::select(vec![32u32, 64])) {
        let _ = read_leb_unsigned(&bytes, 0, bits);
        let _ = read_leb_signed(&bytes, 0, bits);
    }

    #[test]
    fn decoder_never_panics(tail in proptest::collection::vec(any::<u8>(), 0..64)) {
        let mut bytes = vec![0x00, 0x61, 0x73, 0x6D, 0x01, 0x00, 0x00, 0x00];
        bytes.extend(tail);
        let _ = decode_module(bytes);
    }
}

#[test]
fn empty_module() {
    let m = decode_module(vec![0x00, 0x61, 0x73, 0x6D, 0x01, 0x00, 0x00, 0x00]).unwrap();
    assert!(m.types.is_empty() && m.functions.is_empty() && m.exports.is_empty());
}

#[test]
fn version_2_is_rejected() {
    let e = decode_module(vec![0x00, 0x61, 0x73, 0x6D, 0x02, 0x00, 0x00, 0x00]).unwrap_err();
    assert_eq!(e.kind, DecodeErrorKind::BadVersion(2));
    let e = decode_module(vec![0x00, 0x61, 0x73]).unwrap_err();
    assert!(matches!(e.kind, DecodeErrorKind::UnexpectedEof | DecodeErrorKind::BadMagic));
}

#[test]
fn one_function_fields() {
    let mut b = ModuleBuilder::new();
    let mut c = Code::new();
    c.i32_const(42).end();
    let f = b.func(&[], &[I32], &[], c);
    b.export_func("answer", f);
    let built = b.build();
    let m = decode_module(built.bytes.clone()).unwrap();
    assert_eq!(m.types, vec![FuncType::new(vec![], vec![I32])]);
    assert_eq!(m.functions.len(), 1);
    let body = &m.functions[0].body;
    assert_eq!(body.code_start, built.code_starts[0]);
    // One byte of local declarations, then the three code bytes.
    assert_eq!(body.size(), 4);
    assert_eq!(m.code(body), &[0x41, 42, 0x0B]);
    assert_eq!(m.export("answer").map(|e| (e.kind, e.index)), Some((ExternKind::Func, 0)));
}

#[test]
fn section_offsets_match_builder() {
    let built = fixtures::traps();
    let m = decode_module(built.bytes.clone()).unwrap();
    assert_eq!(m.functions.len(), built.code_starts.len());
    for (decl, &start) in m.functions.iter().zip(&built.code_starts) {
        assert_eq!(decl.body.code_start, start);
        assert_eq!(m.bytes()[decl.body.end_ip()], 0x0B);
    }
    assert_eq!(m.memories.len(), 1);
    assert_eq!(m.tables.len(), 1);
    assert_eq!(m.elements.len(), 1);
    // Every section payload lies inside the buffer, in order.
    let mut last = 8;
    for &(_, off, len) in &built.sections {
        assert!(off >= last && off + len <= built.bytes.len());
        last = off + len;
    }
    assert_eq!(last, built.bytes.len());
}

#[test]
fn decoded_bytes_are_the_input() {
    let built = fixtures::fib();
    let m = decode_module(built.bytes.clone()).unwrap();
    assert_eq!(&m.bytes()[..], &built.bytes[..]);
}

#[test]
fn decode_locals_examples() {
    let body = |locals: Vec<(u32, ValueType)>| FunctionBody { body_start: 0, locals, code_start: 0, code_end: 1 };
    let ft = FuncType::new(vec![I32], vec![]);
    assert_eq!(decode_locals(&body(vec![(2, I64)]), &ft).unwrap(), vec![I32, I64, I64]);
    assert_eq!(decode_locals(&body(vec![]), &FuncType::new(vec![], vec![])).unwrap(), vec![]);
    let e = decode_locals(&body(vec![(60_000, I32)]), &FuncType::new(vec![], vec![])).unwrap_err();
    assert!(matches!(e.kind, ValidationErrorKind::TooManyLocals(60_000)));
}

#[test]
fn truncated_modules_report_errors() {
    let built = fixtures::compiled_style(2, 2);
    let boundaries: Vec<usize> = built.sections.iter().map(|&(_, off, len)| off + len).collect();
    for cut in (9..built.bytes.len()).filter(|c| !boundaries.contains(c)) {
        assert!(decode_module(built.bytes[..cut].to_vec()).is_err(), "prefix of {cut} bytes decoded");
    }
}
