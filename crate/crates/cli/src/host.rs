//! Built-in `spectest` imports.

use std::cell::RefCell;
use std::io::Write;
use std::rc::Rc;

use sidewasm::binary::{FuncType, Limits, TableType, ValueType};
use sidewasm::runtime::{Extern, Global, Imports, Memory, Table, Value};

use crate::literal::kind_name;

/// Registers the print family, globals, a table and a memory under
/// `spectest`. Printed lines go to `out`.
pub fn spectest(out: Rc<RefCell<Vec<u8>>>) -> Imports {
    use ValueType::*;
    let mut imports = Imports::new();
    let printers: [(&str, &[ValueType]); 7] = [
        ("print", &[]),
        ("print_i32", &[I32]),
        ("print_i64", &[I64]),
        ("print_f32", &[F32]),
        ("print_f64", &[F64]),
        ("print_i32_f32", &[I32, F32]),
        ("print_f64_f64", &[F64, F64]),
    ];
    for (name, params) in printers {
        let out = out.clone();
        imports.func("spectest", name, FuncType::new(params.to_vec(), Vec::new()), move |_, args| {
            let mut out = out.borrow_mut();
            for a in args {
                let _ = writeln!(out, "{a} : {}", kind_name(a.ty()));
            }
            Ok(Vec::new())
        });
    }
    imports.define("spectest", "global_i32", Extern::Global(Global::new(Value::I32(666), false)));
    imports.define("spectest", "global_i64", Extern::Global(Global::new(Value::I64(666), false)));
    imports.define("spectest", "global_f32", Extern::Global(Global::new(Value::F32(666.6), false)));
    imports.define("spectest", "global_f64", Extern::Global(Global::new(Value::F64(666.6), false)));
    let table = Table::new(TableType { elem: FuncRef, limits: Limits { min: 10, max: Some(20) } });
    imports.define("spectest", "table", Extern::Table(table));
    if let Some(mem) = Memory::new(1, Some(2)) {
        imports.define("spectest", "memory", Extern::Memory(mem));
    }
    imports
}
