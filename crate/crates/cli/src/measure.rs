//! Translation-space and time measurements for one module.

use std::io::{self, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::Serialize;
use sidewasm::binary::{decode_module, DecodeError, Module};
use sidewasm::metrics::SpaceReport;
use sidewasm::validator::{validate_module_with, CompiledModule, ValidateOptions};

/// Mean and 5th/95th percentiles of repeated measurements, in nanoseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Timing {
    pub mean_ns: f64,
    pub p5_ns: f64,
    pub p95_ns: f64,
}

impl Timing {
    pub fn from_samples(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return Timing::default();
        }
        let mut ns: Vec<f64> = samples.iter().map(|d| d.as_nanos() as f64).collect();
        ns.sort_by(f64::total_cmp);
        let mean = ns.iter().sum::<f64>() / ns.len() as f64;
        Timing { mean_ns: mean, p5_ns: percentile(&ns, 5.0), p95_ns: percentile(&ns, 95.0) }
    }
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub input_bytes: usize,
    pub functions: usize,
    pub bytecode_bytes: usize,
    pub sidetable_entries: usize,
    pub sidetable_bytes: usize,
    pub sidetable_bytes_compact: usize,
    /// Compact sidetable bytes per bytecode byte.
    pub space_ratio: f64,
    /// Stored sidetable bytes per bytecode byte.
    pub uncompressed_ratio: f64,
    pub reps: usize,
    /// Validation with sidetable emission.
    pub validation_time: Timing,
    /// Validation without sidetable emission.
    pub validation_time_untracked: Timing,
    /// Mean difference between the two validation timings.
    pub sidetable_time_ns: f64,
    pub validation_ns_per_input_byte: f64,
    pub sidetable_ns_per_input_byte: f64,
    pub execution_time: Option<Timing>,
}

impl MetricsReport {
    pub fn write_lines(&self, out: &mut dyn Write) -> io::Result<()> {
        let timing = |out: &mut dyn Write, key: &str, t: &Timing| -> io::Result<()> {
            writeln!(out, "{key}={:.0}ns", t.mean_ns)?;
            writeln!(out, "{key}_p5={:.0}ns", t.p5_ns)?;
            writeln!(out, "{key}_p95={:.0}ns", t.p95_ns)
        };
        writeln!(out, "input_bytes={}", self.input_bytes)?;
        writeln!(out, "functions={}", self.functions)?;
        writeln!(out, "bytecode_bytes={}", self.bytecode_bytes)?;
        writeln!(out, "sidetable_entries={}", self.sidetable_entries)?;
        writeln!(out, "sidetable_bytes={}", self.sidetable_bytes)?;
        writeln!(out, "sidetable_bytes_compact={}", self.sidetable_bytes_compact)?;
        writeln!(out, "space_ratio={:.4}", self.space_ratio)?;
        writeln!(out, "uncompressed_ratio={:.4}", self.uncompressed_ratio)?;
        writeln!(out, "reps={}", self.reps)?;
        timing(out, "validation_time", &self.validation_time)?;
        timing(out, "validation_time_untracked", &self.validation_time_untracked)?;
        writeln!(out, "sidetable_time={:.0}ns", self.sidetable_time_ns)?;
        writeln!(out, "validation_ns_per_input_byte={:.3}", self.validation_ns_per_input_byte)?;
        writeln!(out, "sidetable_ns_per_input_byte={:.3}", self.sidetable_ns_per_input_byte)?;
        if let Some(t) = &self.execution_time {
            timing(out, "execution_time", t)?;
        }
        Ok(())
    }
}

/// Decodes once, then validates `reps` times with and without sidetable
/// emission. The decoded module is cloned outside the timed region.
pub fn measure(bytes: &Arc<[u8]>, reps: usize) -> Result<(MetricsReport, CompiledModule), crate::LoadFailure> {
    let module = decode_module(bytes.clone()).map_err(|e: DecodeError| crate::LoadFailure(e.to_string()))?;
    let reps = reps.max(1);
    let mut tracked = Vec::with_capacity(reps);
    let mut untracked = Vec::with_capacity(reps);
    let mut compiled = None;
    for _ in 0..reps {
        let (d, c) = time_validation(&module, true)?;
        tracked.push(d);
        compiled = Some(c);
        untracked.push(time_validation(&module, false)?.0);
    }
    let compiled = compiled.expect("at least one repetition");
    let space = SpaceReport::of(&compiled);
    let validation_time = Timing::from_samples(&tracked);
    let validation_time_untracked = Timing::from_samples(&untracked);
    let sidetable_time_ns = validation_time.mean_ns - validation_time_untracked.mean_ns;
    let per_byte = |ns: f64| if bytes.is_empty() { 0.0 } else { ns / bytes.len() as f64 };
    let report = MetricsReport {
        input_bytes: bytes.len(),
        functions: space.functions,
        bytecode_bytes: space.bytecode_bytes,
        sidetable_entries: space.sidetable_entries,
        sidetable_bytes: space.sidetable_bytes,
        sidetable_bytes_compact: space.sidetable_bytes_compact,
        space_ratio: space.space_ratio(),
        uncompressed_ratio: space.uncompressed_ratio(),
        reps,
        validation_time,
        validation_time_untracked,
        sidetable_time_ns,
        validation_ns_per_input_byte: per_byte(validation_time.mean_ns),
        sidetable_ns_per_input_byte: per_byte(sidetable_time_ns),
        execution_time: None,
    };
    Ok((report, compiled))
}

fn time_validation(module: &Module, sidetable: bool) -> Result<(Duration, CompiledModule), crate::LoadFailure> {
    let m = module.clone();
    let opts = ValidateOptions { sidetable, ..ValidateOptions::default() };
    let start = Instant::now();
    let r = validate_module_with(m, opts);
    let d = start.elapsed();
    r.map(|c| (d, c)).map_err(|e| crate::LoadFailure(e.to_string()))
}
