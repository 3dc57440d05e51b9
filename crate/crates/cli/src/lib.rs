//! The `sidewasm` command: run modules, print results, report sidetable
//! metrics, dump sidetables, trace execution and cross-check branches.

use std::cell::RefCell;
use std::io::Write;
use std::path::PathBuf;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sidewasm::binary::{opcode, Module};
use sidewasm::interp::{invoke, BranchEvent, Config, Store, Trap};
use sidewasm::probes::{probe, ProbeAction};
use sidewasm::runtime::{Imports, Instance, InstantiationError, Value};
use sidewasm::validator::CompiledModule;
use sidewasm_testkit::{ExpectedEntry, FuncScan};

pub mod host;
pub mod literal;
pub mod measure;

pub use measure::{measure, MetricsReport, Timing};

pub const EXIT_OK: i32 = 0;
pub const EXIT_TRAP: i32 = 2;
pub const EXIT_INVALID: i32 = 3;
pub const EXIT_USAGE: i32 = 64;
/// A branch disagreed with the rescanning oracle under `--oracle-check`.
pub const EXIT_ORACLE: i32 = 70;

#[derive(Debug, Parser)]
#[command(name = "sidewasm", version, about = "Run WebAssembly modules in place with a branch sidetable")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a module, optionally invoke an export, and report.
    Run(RunConfig),
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// Path to a .wasm binary.
    pub module: PathBuf,
    /// Export to invoke.
    #[arg(long)]
    pub invoke: Option<String>,
    /// Argument as kind:value, e.g. i32:10. Repeat per parameter.
    #[arg(long = "arg", value_name = "KIND:VALUE", allow_hyphen_values = true)]
    pub args: Vec<String>,
    /// Print space and time metrics as key=value lines on stderr.
    #[arg(long)]
    pub metrics: bool,
    /// Also print the metrics as one JSON line on stderr.
    #[arg(long)]
    pub json: bool,
    /// Print every function's sidetable on stderr.
    #[arg(long)]
    pub dump_sidetable: bool,
    /// Print one line per executed instruction on stderr.
    #[arg(long)]
    pub trace: bool,
    /// Check every sidetable entry and every taken branch against a rescanning oracle.
    #[arg(long)]
    pub oracle_check: bool,
    /// Keep a type tag beside every value slot.
    #[arg(long)]
    pub tags: bool,
    /// Value-stack capacity in 64-bit slots.
    #[arg(long)]
    pub stack_slots: Option<usize>,
    /// Maximum call depth.
    #[arg(long)]
    pub max_frames: Option<usize>,
    /// Repetitions for timing measurements.
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
}

/// Decode or validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadFailure(pub String);

/// Parses `argv` (program name first) and runs. Results go to `out`,
/// diagnostics and metrics to `err`. Returns the exit code.
pub fn main_with(argv: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match cli.command {
        Command::Run(cfg) => run(&cfg, out, err),
    }
}

fn config_of(cfg: &RunConfig) -> Config {
    let mut c = Config { tags: cfg.tags, ..Config::default() };
    if let Some(n) = cfg.stack_slots {
        c.stack_slots = n;
    }
    if let Some(n) = cfg.max_frames {
        c.max_frames = n;
    }
    c
}

pub fn run(cfg: &RunConfig, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let bytes: Arc<[u8]> = match std::fs::read(&cfg.module) {
        Ok(b) => b.into(),
        Err(e) => {
            let _ = writeln!(err, "error: cannot read {}: {e}", cfg.module.display());
            return EXIT_USAGE;
        }
    };
    let loaded = if cfg.metrics {
        measure(&bytes, cfg.reps).map(|(r, c)| (Some(r), c))
    } else {
        sidewasm::compile(bytes.clone()).map(|c| (None, c)).map_err(|e| LoadFailure(e.to_string()))
    };
    let (mut report, compiled) = match loaded {
        Ok(x) => x,
        Err(LoadFailure(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_INVALID;
        }
    };
    let compiled = Arc::new(compiled);

    if cfg.dump_sidetable {
        dump_sidetables(&compiled, err);
    }
    let expected = if cfg.oracle_check {
        match static_check(&compiled, err) {
            Ok(exp) => Some(exp),
            Err(code) => return code,
        }
    } else {
        None
    };

    let code = match &cfg.invoke {
        Some(name) => {
            let target = match prepare_invocation(&compiled.module, name, &cfg.args) {
                Ok(t) => t,
                Err(msg) => {
                    let _ = writeln!(err, "error: {msg}");
                    return EXIT_USAGE;
                }
            };
            invoke_export(cfg, &compiled, target, expected, report.as_mut(), out, err)
        }
        None => {
            if !cfg.args.is_empty() {
                let _ = writeln!(err, "error: --arg given without --invoke");
                return EXIT_USAGE;
            }
            instantiate_only(cfg, &compiled, out, err)
        }
    };

    if let Some(r) = &report {
        let _ = r.write_lines(err);
        if cfg.json {
            let _ = writeln!(err, "{}", serde_json::to_string(r).expect("metrics serialize"));
        }
    }
    code
}

struct Target {
    func: u32,
    args: Vec<Value>,
}

fn prepare_invocation(module: &Module, name: &str, raw: &[String]) -> Result<Target, String> {
    let export = module.export(name).ok_or_else(|| format!("no export named `{name}`"))?;
    if export.kind != sidewasm::binary::ExternKind::Func {
        return Err(format!("export `{name}` is not a function"));
    }
    let func = export.index;
    let ft = module.func_type(func).ok_or_else(|| format!("export `{name}` names a missing function"))?;
    let args = raw.iter().map(|s| literal::parse(s)).collect::<Result<Vec<_>, _>>()?;
    if args.len() != ft.params.len() {
        return Err(format!("`{name}` takes {} argument(s), {} given", ft.params.len(), args.len()));
    }
    for (i, (a, t)) in args.iter().zip(ft.params.iter()).enumerate() {
        if a.ty() != *t {
            return Err(format!("argument {} of `{name}` must be {}, got {}", i + 1, literal::kind_name(*t), literal::kind_name(a.ty())));
        }
    }
    Ok(Target { func, args })
}

fn instantiate(
    store: &mut Store,
    compiled: &Arc<CompiledModule>,
    printed: &Rc<RefCell<Vec<u8>>>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<Instance, i32> {
    let imports: Imports = host::spectest(printed.clone());
    Instance::instantiate(store, compiled.clone(), &imports).map_err(|e| match e {
        InstantiationError::Start(t) => {
            let _ = out.write_all(&printed.borrow());
            report_trap(&t, out, err);
            EXIT_TRAP
        }
        other => {
            let _ = writeln!(err, "error: {other}");
            EXIT_INVALID
        }
    })
}

fn instantiate_only(cfg: &RunConfig, compiled: &Arc<CompiledModule>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let mut store = Store::new(config_of(cfg));
    let printed = Rc::new(RefCell::new(Vec::new()));
    match instantiate(&mut store, compiled, &printed, out, err) {
        Ok(_) => {
            let _ = out.write_all(&printed.borrow());
            EXIT_OK
        }
        Err(code) => code,
    }
}

struct OracleTally {
    checked: u64,
    mismatches: Vec<String>,
}

fn invoke_export(
    cfg: &RunConfig,
    compiled: &Arc<CompiledModule>,
    target: Target,
    expected: Option<Vec<(u32, Vec<ExpectedEntry>)>>,
    report: Option<&mut MetricsReport>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let mut store = Store::new(config_of(cfg));
    let printed = Rc::new(RefCell::new(Vec::new()));
    let mut inst = match instantiate(&mut store, compiled, &printed, out, err) {
        Ok(i) => i,
        Err(code) => return code,
    };

    let trace = Rc::new(RefCell::new(Vec::<u8>::new()));
    if cfg.trace {
        let sink = trace.clone();
        let code = compiled.module.bytes().clone();
        inst.set_global_probe(probe(move |ctx| {
            let v = ctx.view();
            let op = code[v.ip()];
            let _ = writeln!(
                sink.borrow_mut(),
                "trace func={} ip={} op={} height={}",
                v.func_index(),
                v.ip(),
                opcode::name(op),
                v.stack_height()
            );
            ProbeAction::Continue
        }));
    }

    let tally = Rc::new(RefCell::new(OracleTally { checked: 0, mismatches: Vec::new() }));
    if let Some(expected) = expected {
        let first = compiled.module.num_imported_funcs();
        let t = tally.clone();
        store.set_branch_observer(move |ev: &BranchEvent| {
            let mut t = t.borrow_mut();
            t.checked += 1;
            let want = expected.get((ev.func - first) as usize).and_then(|(_, v)| v.get(ev.entry));
            if let Some(msg) = event_mismatch(ev, want) {
                t.mismatches.push(msg);
            }
        });
    }

    let start = Instant::now();
    let result = invoke(&mut store, &mut inst, target.func, &target.args);
    let first_run = start.elapsed();
    store.clear_branch_observer();
    inst.clear_global_probe();

    let _ = out.write_all(&printed.borrow());
    let _ = err.write_all(&trace.borrow());

    if let Some(report) = report {
        let mut samples = vec![first_run];
        for _ in 1..cfg.reps.max(1) {
            let mut store = Store::new(config_of(cfg));
            let Ok(mut inst) = instantiate(&mut store, compiled, &Rc::default(), &mut std::io::sink(), &mut std::io::sink())
            else {
                break;
            };
            let start = Instant::now();
            let _ = invoke(&mut store, &mut inst, target.func, &target.args);
            samples.push(start.elapsed());
        }
        report.execution_time = Some(Timing::from_samples(&samples));
    }

    let code = match result {
        Ok(values) => {
            for v in values {
                let _ = writeln!(out, "{v}");
            }
            EXIT_OK
        }
        Err(trap) => {
            report_trap(&trap, out, err);
            EXIT_TRAP
        }
    };

    let t = tally.borrow();
    if cfg.oracle_check {
        let _ = writeln!(err, "oracle-check: {} branches checked, {} mismatches", t.checked, t.mismatches.len());
        for m in &t.mismatches {
            let _ = writeln!(err, "oracle-check: {m}");
        }
        if !t.mismatches.is_empty() {
            return EXIT_ORACLE;
        }
    }
    code
}

fn report_trap(trap: &Trap, out: &mut dyn Write, err: &mut dyn Write) {
    let _ = writeln!(out, "trap: {}", trap.kind.name());
    let _ = writeln!(err, "trap: {trap}");
}

fn event_mismatch(ev: &BranchEvent, want: Option<&ExpectedEntry>) -> Option<String> {
    let Some(w) = want else {
        return Some(format!("func {} entry {} taken at {} has no expected entry", ev.func, ev.entry, ev.origin));
    };
    let got = (ev.origin, ev.target_ip, ev.target_stp, ev.valcnt, ev.popcnt);
    let exp = (w.origin, w.target_ip, w.target_stp, w.valcnt, w.popcnt);
    (got != exp).then(|| {
        format!(
            "func {} entry {}: engine (origin, target_ip, target_stp, valcnt, popcnt) = {got:?}, oracle = {exp:?}",
            ev.func, ev.entry
        )
    })
}

fn dump_sidetables(compiled: &CompiledModule, err: &mut dyn Write) {
    for vf in &compiled.functions {
        let _ = writeln!(err, "func {}: {} entries", vf.func_index, vf.sidetable.len());
        let mut s = String::new();
        let _ = vf.sidetable.dump(&mut s);
        let _ = err.write_all(s.as_bytes());
    }
}

/// Compares every emitted entry against the oracle before anything runs.
fn static_check(compiled: &CompiledModule, err: &mut dyn Write) -> Result<Vec<(u32, Vec<ExpectedEntry>)>, i32> {
    let mut all = Vec::new();
    let mut bad = 0usize;
    for vf in &compiled.functions {
        let exp = match FuncScan::new(&compiled.module, vf.func_index).and_then(|s| s.expected_entries()) {
            Ok(e) => e,
            Err(e) => {
                let _ = writeln!(err, "oracle-check: func {}: {e}", vf.func_index);
                return Err(EXIT_ORACLE);
            }
        };
        let st = &vf.sidetable;
        if exp.len() != st.len() {
            bad += 1;
            let _ = writeln!(err, "oracle-check: func {}: {} entries, oracle expects {}", vf.func_index, st.len(), exp.len());
        }
        for (k, (e, w)) in st.entries().iter().zip(&exp).enumerate() {
            let got = (
                st.origins()[k] as usize,
                st.target_ip(k),
                (k as i64 + i64::from(e.delta_stp)) as usize,
                e.valcnt,
                e.popcnt,
            );
            let want = (w.origin, w.target_ip, w.target_stp, w.valcnt, w.popcnt);
            if got != want {
                bad += 1;
                let _ = writeln!(err, "oracle-check: func {} entry {k}: emitted {got:?}, oracle {want:?}", vf.func_index);
            }
        }
        all.push((vf.func_index, exp));
    }
    if bad > 0 {
        return Err(EXIT_ORACLE);
    }
    Ok(all)
}
