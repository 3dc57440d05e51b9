//! Test support: a module builder, an independent branch-target oracle, a
//! naive reference interpreter and a structured program generator.

pub mod builder;
pub mod decode;
pub mod fixtures;
pub mod generate;
pub mod oracle;
pub mod reference;

pub use builder::{Bt, Built, Code, Init, ModuleBuilder};
pub use decode::OracleError;
pub use generate::{generate_random_structured, Generated};
pub use oracle::{scan_branch_target, ExpectedEntry, FuncScan, ScanResult};
pub use reference::{reference_execute, values_equivalent, RefMachine, RefOutcome, RefRun};
