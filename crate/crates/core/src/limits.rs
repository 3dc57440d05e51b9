//! Implementation limits. Every fixed bound the engine enforces lives here.

/// Functions in the index space, imports included.
pub const MAX_FUNCTIONS: u32 = 100_000;
/// Locals per function, parameters included.
pub const MAX_LOCALS: u32 = 50_000;
/// Depth of nested control constructs in one function body.
pub const MAX_NESTING: usize = 10_000;

pub const MAX_TYPES: u32 = 1_000_000;
pub const MAX_IMPORTS: u32 = 100_000;
pub const MAX_EXPORTS: u32 = 100_000;
pub const MAX_GLOBALS: u32 = 1_000_000;
pub const MAX_TABLES: u32 = 100_000;
pub const MAX_MEMORIES: u32 = 1;
pub const MAX_SEGMENTS: u32 = 100_000;
pub const MAX_TABLE_ELEMS: u32 = 10_000_000;
/// Targets in one `br_table`.
pub const MAX_BR_TABLE_TARGETS: u32 = 1_000_000;

/// Wasm page size in bytes.
pub const PAGE_SIZE: usize = 65_536;
/// Largest 32-bit memory, in pages.
pub const MAX_PAGES: u32 = 65_536;

/// Default value-stack capacity in 64-bit slots (4 Mi).
pub const DEFAULT_STACK_SLOTS: usize = 4 * 1024 * 1024;
/// Default maximum number of live interpreter frames.
pub const DEFAULT_MAX_FRAMES: usize = 10_000;
