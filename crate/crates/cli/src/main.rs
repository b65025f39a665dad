//! `ptxlat`: generate, run, verify and analyze PTX latency microbenchmarks.
//!
//! Exit status: 0 on success, 1 when a benchmark or verification fails,
//! 2 on usage or configuration errors.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ptxlat_core::analysis::{analyze_run, build_latency_table, AnalysisConfig};
use ptxlat_core::codegen::{
    default_chase_elements, generate, inventory, validate_ptx, BenchKind, BenchRequest, ClockWidth,
    DeviceLimits, Manifest, PointerChaseConfig, SharedDirection, WmmaRequest,
};
use ptxlat_core::isa::{parse_signature, LatencyTable, MemoryLevel};
use ptxlat_core::report::{self, Format, TableDocument};
use ptxlat_core::runner::{sweep, Backend, RunResults, VirtualBackend};
use ptxlat_core::seed::DEFAULT_WMMA_ITERS;
use ptxlat_core::seed_paper_table;
use ptxlat_core::trace::{expected_mapping, read_trace, verify_mapping, ParseMode};

use crate::config::Config;

#[derive(Parser)]
#[command(
    name = "ptxlat",
    version,
    about = "PTX instruction-latency microbenchmarks"
)]
struct Cli {
    /// TOML config file ([device], [analysis], [external], [run]).
    #[arg(long, global = true, env = "PTXLAT_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone, Copy)]
struct DeviceArgs {
    /// L1 capacity in bytes used for pointer-chase sizing.
    #[arg(long)]
    l1_bytes: Option<u64>,
    /// L2 capacity in bytes used for pointer-chase sizing.
    #[arg(long)]
    l2_bytes: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Clock,
    Alu,
    Memory,
    Shared,
    Wmma,
}

impl KindArg {
    fn kind(self) -> BenchKind {
        match self {
            KindArg::Clock => BenchKind::ClockOverhead,
            KindArg::Alu => BenchKind::Alu,
            KindArg::Memory => BenchKind::Memory,
            KindArg::Shared => BenchKind::Shared,
            KindArg::Wmma => BenchKind::Wmma,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Virtual,
    Replay,
    External,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Md,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum DiffFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write benchmark kernels and a manifest.
    Gen {
        /// Target: a PTX signature for alu (e.g. add.u32, add.u32:dep, add.u32:x4),
        /// a level for memory (global, l2, l1), load/store for shared,
        /// <in>.<acc> for wmma. Repeatable.
        #[arg(long, conflicts_with = "all")]
        spec: Vec<String>,
        /// Every benchmark of the selected kinds (all kinds when --kind is absent).
        #[arg(long)]
        all: bool,
        #[arg(long, value_enum)]
        kind: Vec<KindArg>,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
        /// Read the clock through 32-bit registers.
        #[arg(long)]
        clock32: bool,
        /// Operand initialisation variant for alu kernels.
        #[arg(long, default_value_t = 0)]
        variant: u32,
        /// Pointer-chase length for memory kernels (multiple of 4).
        #[arg(long)]
        elements: Option<u64>,
        /// Outer iterations for wmma kernels.
        #[arg(long, default_value_t = DEFAULT_WMMA_ITERS)]
        iters: u32,
        /// Latency table supplying the inventory and WMMA expectations (default: built-in).
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Check generated kernels (or any PTX/CUDA file) for well-formedness.
    Validate {
        /// Files to check.
        files: Vec<PathBuf>,
        /// Check every kernel of a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Execute the benchmarks of a manifest on a backend.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum)]
        backend: BackendArg,
        /// Latency table for the virtual backend (default: built-in).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Directory with <id>.trace and <id>.clocks for the replay backend.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, default_value = "results.json")]
        out: PathBuf,
        /// Where virtual traces are written (default: <out>.traces next to the results).
        #[arg(long)]
        trace_dir: Option<PathBuf>,
        /// Parallel runs (external runs are always sequential).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Turn run results into a latency table.
    Analyze {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reference table for expected SASS mappings (default: built-in).
        #[arg(long)]
        table: Option<PathBuf>,
        /// Architecture name recorded in the table (default: the reference's).
        #[arg(long)]
        architecture: Option<String>,
        /// Timestamp recorded in the table; SOURCE_DATE_EPOCH is used when absent.
        #[arg(long)]
        generated_at: Option<String>,
    },
    /// Check one trace against the expected SASS of a benchmark.
    VerifyMapping {
        #[arg(long)]
        trace: PathBuf,
        /// Benchmark id, e.g. add.u32.alu or add.u32-clk32.alu.
        #[arg(long)]
        bench: String,
        #[arg(long)]
        table: Option<PathBuf>,
        /// Skip unparseable trace lines instead of failing.
        #[arg(long)]
        lenient: bool,
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Render a table file.
    Report {
        #[arg(long)]
        table: PathBuf,
        #[arg(long, value_enum, default_value = "md")]
        format: FormatArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare two table files.
    Diff {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Report only keys present in both tables.
        #[arg(long)]
        shared_only: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: DiffFormat,
    },
    /// Write the built-in A100 table.
    Seed {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        generated_at: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Cmd::Gen {
            spec,
            all,
            kind,
            out,
            clock32,
            variant,
            elements,
            iters,
            table,
            device,
        } => {
            let table = load_table(table.as_deref())?;
            let limits = cfg.device(device.l1_bytes, device.l2_bytes);
            let width = if clock32 {
                ClockWidth::Bits32
            } else {
                ClockWidth::Bits64
            };
            let opts = SpecOpts {
                width,
                variant,
                elements,
                iters,
            };
            let requests = if all {
                let kinds: Vec<BenchKind> = if kind.is_empty() {
                    BenchKind::ALL.to_vec()
                } else {
                    kind.iter().map(|k| k.kind()).collect()
                };
                let mut reqs = inventory(&table, &limits, &kinds);
                if clock32 {
                    for r in &mut reqs {
                        set_width(r, width);
                    }
                }
                reqs
            } else {
                let kind = match kind.as_slice() {
                    [] => BenchKind::Alu,
                    [k] => k.kind(),
                    _ => bail!("--spec takes a single --kind"),
                };
                if spec.is_empty() && kind != BenchKind::ClockOverhead {
                    bail!("give --spec or --all");
                }
                if kind == BenchKind::ClockOverhead {
                    vec![BenchRequest::ClockOverhead { clock_width: width }]
                } else {
                    spec.iter()
                        .map(|s| request_for(kind, s, &table, &limits, &opts))
                        .collect::<Result<_>>()?
                }
            };
            let benches = requests
                .iter()
                .map(|r| generate(r, &limits).with_context(|| r.id()))
                .collect::<Result<Vec<_>>>()?;
            let manifest = Manifest::write_benchmarks(&out, limits, &benches)
                .with_context(|| format!("writing {}", out.display()))?;
            for b in &benches {
                println!("{}", out.join(b.file_name()).display());
            }
            eprintln!(
                "{} kernel(s) written; manifest has {} entries",
                benches.len(),
                manifest.entries.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Validate { files, manifest } => {
            let mut paths = files;
            if let Some(m) = &manifest {
                let man = Manifest::load(m).with_context(|| format!("reading {}", m.display()))?;
                let dir = m.parent().unwrap_or(Path::new("."));
                paths.extend(man.entries.iter().map(|e| dir.join(&e.file)));
            }
            if paths.is_empty() {
                bail!("nothing to validate");
            }
            let mut failed = 0;
            for p in &paths {
                let text =
                    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let r = validate_ptx(&text);
                if r.is_valid() {
                    println!(
                        "ok {} (timed instructions: {})",
                        p.display(),
                        r.timed_count()
                    );
                } else {
                    failed += 1;
                    println!("FAIL {}", p.display());
                    for e in &r.errors {
                        println!("  {e}");
                    }
                }
            }
            Ok(exit_for(failed == 0))
        }
        Cmd::Run {
            manifest,
            backend,
            table,
            fixtures,
            out,
            trace_dir,
            jobs,
        } => {
            let man = Manifest::load(&manifest)
                .with_context(|| format!("reading {}", manifest.display()))?;
            let limits = man.device;
            let backend = match backend {
                BackendArg::Virtual => {
                    let mut v = VirtualBackend::new(load_table(table.as_deref())?, &limits)?;
                    if let Some(a) = &cfg.analysis {
                        v.clock_rate_hz = a.clock_rate_hz;
                    }
                    let dir = trace_dir.unwrap_or_else(|| {
                        let mut p = out.clone().into_os_string();
                        p.push(".traces");
                        PathBuf::from(p)
                    });
                    v.trace_dir = Some(dir);
                    Backend::Virtual(v)
                }
                BackendArg::Replay => Backend::Replay {
                    dir: fixtures.context("the replay backend needs --fixtures <dir>")?,
                },
                BackendArg::External => Backend::External(cfg.external()?),
            };
            let requests: Vec<BenchRequest> =
                man.entries.iter().map(|e| e.request.clone()).collect();
            let entries = sweep(&requests, &limits, &backend, jobs.or(cfg.run.jobs));
            let results = RunResults::new(limits, backend.kind(), entries);
            results
                .save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            for e in &results.entries {
                match (&e.result, &e.error) {
                    (Some(r), _) => println!("ok {} delta {}", e.id, r.delta()),
                    (None, Some(err)) => println!("FAIL {}: {err}", e.id),
                    (None, None) => println!("FAIL {}", e.id),
                }
            }
            let failed = results.failures();
            eprintln!(
                "{} run(s), {failed} failed; results in {}",
                results.entries.len(),
                out.display()
            );
            Ok(exit_for(failed == 0))
        }
        Cmd::Analyze {
            results,
            out,
            table,
            architecture,
            generated_at,
        } => {
            let reference = load_table(table.as_deref())?;
            let runs = RunResults::load(&results)
                .with_context(|| format!("reading {}", results.display()))?;
            let acfg = analysis_config(&cfg, &reference);
            let mut analyzed = Vec::new();
            let mut failed = 0;
            for e in &runs.entries {
                let Some(r) = &e.result else {
                    eprintln!("skip {}: run failed", e.id);
                    failed += 1;
                    continue;
                };
                let outcome = generate(&e.request, &runs.device)
                    .map_err(anyhow::Error::from)
                    .and_then(|bench| {
                        let t = r.parsed_trace(ParseMode::Lenient)?;
                        Ok(analyze_run(
                            &bench,
                            r.clocks(),
                            &t.events,
                            &reference,
                            &acfg,
                        )?)
                    });
                match outcome {
                    Ok(a) => {
                        for w in &a.warnings {
                            eprintln!("warning: {w}");
                        }
                        analyzed.push(a);
                    }
                    Err(err) => {
                        eprintln!("FAIL {}: {err:#}", e.id);
                        failed += 1;
                    }
                }
            }
            let arch = architecture.unwrap_or_else(|| reference.architecture.clone());
            let built = build_latency_table(&analyzed, &arch, &acfg);
            TableDocument::new(built, stamp(generated_at)?).save(&out)?;
            eprintln!(
                "{} benchmark(s) analyzed; table written to {}",
                analyzed.len(),
                out.display()
            );
            Ok(exit_for(failed == 0))
        }
        Cmd::VerifyMapping {
            trace,
            bench,
            table,
            lenient,
            device,
        } => {
            let reference = load_table(table.as_deref())?;
            let limits = cfg.device(device.l1_bytes, device.l2_bytes);
            let req = BenchRequest::from_id(&bench, &reference)?;
            let b = generate(&req, &limits)?;
            let mode = if lenient {
                ParseMode::Lenient
            } else {
                ParseMode::Strict
            };
            let parsed = read_trace(&trace, mode)?;
            for s in &parsed.skipped {
                eprintln!("skipped line {}: {}", s.line, s.reason);
            }
            let expected = expected_mapping(&b, &reference)?;
            let report = verify_mapping(&b, &parsed.events, &expected);
            println!("benchmark: {}", b.id);
            println!("expected: {} x {}", b.timed_count, expected.expression());
            let observed: Vec<String> = report
                .observed
                .iter()
                .map(|t| format!("{}*{}", t.count, t.opcode))
                .collect();
            println!(
                "observed: {}",
                if observed.is_empty() {
                    "-".into()
                } else {
                    observed.join("+")
                }
            );
            for e in &report.extra_events {
                println!("extra: line {}: {e}", e.line);
            }
            for n in &report.notes {
                println!("note: {n}");
            }
            println!("matched: {}", report.matched);
            Ok(exit_for(report.matched))
        }
        Cmd::Report { table, format, out } => {
            let t = report::load(&table)?;
            let format = match format {
                FormatArg::Md => Format::Markdown,
                FormatArg::Csv => Format::Csv,
            };
            let text = report::render(&t, format);
            match out {
                Some(p) => {
                    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?
                }
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Diff {
            a,
            b,
            shared_only,
            format,
        } => {
            let ta = report::load(&a)?;
            let tb = report::load(&b)?;
            let mut d = report::diff(&ta, &tb);
            if shared_only {
                d.added.clear();
                d.removed.clear();
            }
            match format {
                DiffFormat::Text => print!("{}", d.render()),
                DiffFormat::Json => print!("{}", d.to_json()),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Seed { out, generated_at } => {
            TableDocument::new(seed_paper_table(), stamp(generated_at)?).save(&out)?;
            eprintln!("seed table written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_for(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn load_table(path: Option<&Path>) -> Result<LatencyTable> {
    match path {
        Some(p) => Ok(report::load(p)?),
        None => Ok(seed_paper_table()),
    }
}

fn analysis_config(cfg: &Config, reference: &LatencyTable) -> AnalysisConfig {
    match &cfg.analysis {
        Some(a) => {
            let mut a = a.clone();
            if a.theoretical_throughput.is_empty() {
                a.theoretical_throughput =
                    AnalysisConfig::from_table(reference).theoretical_throughput;
            }
            a
        }
        None => AnalysisConfig::from_table(reference),
    }
}

/// Explicit timestamp, else SOURCE_DATE_EPOCH as `@<seconds>`, else none.
fn stamp(explicit: Option<String>) -> Result<Option<String>> {
    if explicit.is_some() {
        return Ok(explicit);
    }
    match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(v) if !v.is_empty() => {
            let secs: u64 = v
                .trim()
                .parse()
                .context("SOURCE_DATE_EPOCH must be an integer")?;
            Ok(Some(format!("@{secs}")))
        }
        _ => Ok(None),
    }
}

struct SpecOpts {
    width: ClockWidth,
    variant: u32,
    elements: Option<u64>,
    iters: u32,
}

fn set_width(r: &mut BenchRequest, width: ClockWidth) {
    match r {
        BenchRequest::ClockOverhead { clock_width }
        | BenchRequest::Alu { clock_width, .. }
        | BenchRequest::Memory { clock_width, .. }
        | BenchRequest::Shared { clock_width, .. }
        | BenchRequest::Wmma { clock_width, .. } => *clock_width = width,
    }
}

fn request_for(
    kind: BenchKind,
    spec: &str,
    table: &LatencyTable,
    limits: &DeviceLimits,
    o: &SpecOpts,
) -> Result<BenchRequest> {
    Ok(match kind {
        BenchKind::ClockOverhead => BenchRequest::ClockOverhead {
            clock_width: o.width,
        },
        BenchKind::Alu => BenchRequest::Alu {
            spec: parse_signature(spec)?,
            clock_width: o.width,
            variant: o.variant,
        },
        BenchKind::Memory => {
            let level: MemoryLevel = spec.parse()?;
            let op = level.cache_op().with_context(|| {
                format!("'{spec}' is not a cached memory level (global, l2, l1)")
            })?;
            BenchRequest::Memory {
                level,
                chase: PointerChaseConfig::new(
                    o.elements
                        .unwrap_or_else(|| default_chase_elements(level, limits)),
                    op,
                ),
                clock_width: o.width,
            }
        }
        BenchKind::Shared => BenchRequest::Shared {
            direction: spec.parse::<SharedDirection>()?,
            clock_width: o.width,
        },
        BenchKind::Wmma => {
            let by_key: BTreeMap<String, _> =
                table.tensor_ops.iter().map(|op| (op.key(), op)).collect();
            let op = by_key.get(spec).with_context(|| {
                format!(
                    "no tensor op '{spec}' in the table; known: {}",
                    by_key.keys().cloned().collect::<Vec<_>>().join(", ")
                )
            })?;
            BenchRequest::Wmma {
                op: WmmaRequest::from_op(op),
                iters: o.iters,
                clock_width: o.width,
            }
        }
    })
}
