//! An in-place WebAssembly interpreter.
//!
//! Modules are decoded once and their original bytes executed directly. The
//! validator emits a compact per-function *sidetable* describing every branch,
//! so control transfers never need to rescan code.

pub mod binary;
pub mod limits;
pub mod validator;
pub mod interp;
pub mod metrics;
pub mod probes;
pub mod runtime;

use std::sync::Arc;

use thiserror::Error;

/// Why [`compile`] rejected a module.
#[derive(Debug, Error)]
pub enum LoadError {
    #[error("decode error: {0}")]
    Decode(#[from] binary::DecodeError),
    #[error("validation error: {0}")]
    Validation(#[from] validator::ValidationError),
}

/// Decodes and validates a module, producing every function's sidetable.
pub fn compile(bytes: impl Into<Arc<[u8]>>) -> Result<validator::CompiledModule, LoadError> {
    let module = binary::decode_module(bytes)?;
    Ok(validator::validate_module(module)?)
}
