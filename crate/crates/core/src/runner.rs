//! Execution backends. Every backend hands back two clock readings and a
//! dynamic SASS trace for a benchmark; analysis never knows which one ran.

use std::borrow::Cow;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{RawClocks, DEFAULT_CLOCK_RATE_HZ};
use crate::codegen::{generate, BenchRequest, DeviceLimits, Microbenchmark};
use crate::isa::LatencyTable;
use crate::trace::{parse_trace, ParseMode, ParsedTrace, TraceError};
use crate::virtual_device::{
    parse_clocks, run_virtual_at, MemoryHierarchyModel, SyntheticResult, ThroughputSample,
    VirtualError,
};

pub const RESULTS_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT_SECONDS: u64 = 120;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("missing fixture: expected {path}")]
    MissingFixture { path: String },
    #[error("bad clocks file {path}: expected a 'CLOCKS <start> <end>' line")]
    BadClocks { path: String },
    #[error("invalid backend config: {0}")]
    Config(String),
    #[error("{stage} command exited with {status}\n--- stdout\n{stdout}--- stderr\n{stderr}")]
    Command {
        stage: &'static str,
        status: String,
        stdout: String,
        stderr: String,
    },
    #[error(
        "{stage} command timed out after {seconds} s\n--- stdout\n{stdout}--- stderr\n{stderr}"
    )]
    Timeout {
        stage: &'static str,
        seconds: u64,
        stdout: String,
        stderr: String,
    },
    #[error("launch output has no 'CLOCKS <start> <end>' line\n{output}")]
    NoClocks { output: String },
    #[error("trace has no SASS instructions: {0}")]
    EmptyTrace(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Virtual(#[from] VirtualError),
    #[error("{0}")]
    Io(String),
}

impl From<io::Error> for RunError {
    fn from(e: io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Virtual,
    Replay,
    External,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "virtual" => Ok(BackendKind::Virtual),
            "replay" => Ok(BackendKind::Replay),
            "external" => Ok(BackendKind::External),
            other => Err(format!(
                "unknown backend '{other}' (expected virtual, replay or external)"
            )),
        }
    }
}

/// Where the SASS trace of a run lives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TraceSource {
    Inline { text: String },
    File { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResult {
    pub bench_id: String,
    pub start_clock: u64,
    pub end_clock: u64,
    pub trace: TraceSource,
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<ThroughputSample>,
}

impl RunResult {
    pub fn delta(&self) -> u64 {
        self.end_clock.saturating_sub(self.start_clock)
    }

    pub fn clocks(&self) -> RawClocks {
        RawClocks {
            start_clock: self.start_clock,
            end_clock: self.end_clock,
            throughput: self.throughput,
        }
    }

    pub fn trace_text(&self) -> Result<Cow<'_, str>, RunError> {
        match &self.trace {
            TraceSource::Inline { text } => Ok(Cow::Borrowed(text)),
            TraceSource::File { path } => fs::read_to_string(path)
                .map(Cow::Owned)
                .map_err(|e| RunError::Io(format!("{}: {e}", path.display()))),
        }
    }

    pub fn parsed_trace(&self, mode: ParseMode) -> Result<ParsedTrace, RunError> {
        Ok(parse_trace(&self.trace_text()?, mode)?)
    }
}

/// Command templates for running on real hardware. `{input}` and
/// `{output}` are replaced by shell-quoted paths; `{id}` by the benchmark id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalToolchainConfig {
    /// `{input}` is the kernel source, `{output}` the executable to build.
    pub compile_command_template: String,
    /// `{input}` is the executable; stdout (or the file `{output}`) must
    /// contain `CLOCKS <start> <end>`.
    pub launch_command_template: String,
    /// `{input}` is the executable, `{output}` the SASS trace to write.
    pub trace_command_template: String,
    pub working_dir: PathBuf,
    #[serde(default = "default_timeout")]
    pub timeout_seconds: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECONDS
}

impl ExternalToolchainConfig {
    pub fn check(&self) -> Result<(), RunError> {
        let need = [
            (
                "compile_command_template",
                &self.compile_command_template,
                &["{input}", "{output}"][..],
            ),
            (
                "launch_command_template",
                &self.launch_command_template,
                &["{input}"][..],
            ),
            (
                "trace_command_template",
                &self.trace_command_template,
                &["{input}", "{output}"][..],
            ),
        ];
        for (name, template, placeholders) in need {
            for p in placeholders {
                if !template.contains(p) {
                    return Err(RunError::Config(format!("{name} must contain {p}")));
                }
            }
        }
        if self.timeout_seconds == 0 {
            return Err(RunError::Config("timeout_seconds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VirtualBackend {
    pub table: LatencyTable,
    pub memory: MemoryHierarchyModel,
    pub clock_rate_hz: u64,
    /// When set, traces and clocks are written here as replay fixtures and
    /// results reference the files instead of carrying the trace inline.
    pub trace_dir: Option<PathBuf>,
}

impl VirtualBackend {
    pub fn new(table: LatencyTable, limits: &DeviceLimits) -> Result<Self, RunError> {
        let memory = MemoryHierarchyModel::from_table(&table, limits)?;
        Ok(VirtualBackend {
            table,
            memory,
            clock_rate_hz: DEFAULT_CLOCK_RATE_HZ,
            trace_dir: None,
        })
    }
}

#[derive(Clone, Debug)]
pub enum Backend {
    Virtual(VirtualBackend),
    Replay { dir: PathBuf },
    External(ExternalToolchainConfig),
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Virtual(_) => BackendKind::Virtual,
            Backend::Replay { .. } => BackendKind::Replay,
            Backend::External(_) => BackendKind::External,
        }
    }
}

fn checked_trace(result: &RunResult) -> Result<Vec<String>, RunError> {
    let parsed = result.parsed_trace(ParseMode::Lenient)?;
    if parsed.events.is_empty() {
        return Err(RunError::EmptyTrace(result.bench_id.clone()));
    }
    Ok(parsed
        .skipped
        .iter()
        .map(|s| format!("trace line {} skipped: {}", s.line, s.reason))
        .collect())
}

/// Executes one benchmark.
pub fn run(bench: &Microbenchmark, backend: &Backend) -> Result<RunResult, RunError> {
    let mut result = match backend {
        Backend::Virtual(v) => run_on_virtual(bench, v)?,
        Backend::Replay { dir } => run_replay(bench, dir)?,
        Backend::External(cfg) => run_external(bench, cfg)?,
    };
    let skipped = checked_trace(&result)?;
    result.diagnostics.extend(skipped);
    Ok(result)
}

fn run_on_virtual(bench: &Microbenchmark, v: &VirtualBackend) -> Result<RunResult, RunError> {
    let synth: SyntheticResult = run_virtual_at(bench, &v.table, &v.memory, v.clock_rate_hz)?;
    let trace = match &v.trace_dir {
        Some(dir) => {
            synth.save(dir)?;
            TraceSource::File {
                path: SyntheticResult::trace_path(dir, &synth.bench_id),
            }
        }
        None => TraceSource::Inline {
            text: synth.trace_text(),
        },
    };
    Ok(RunResult {
        bench_id: synth.bench_id,
        start_clock: synth.start_clock,
        end_clock: synth.end_clock,
        trace,
        backend: BackendKind::Virtual,
        diagnostics: synth.notes,
        throughput: synth.throughput,
    })
}

fn run_replay(bench: &Microbenchmark, dir: &Path) -> Result<RunResult, RunError> {
    let trace = SyntheticResult::trace_path(dir, &bench.id);
    let clocks = SyntheticResult::clocks_path(dir, &bench.id);
    for p in [&clocks, &trace] {
        if !p.is_file() {
            return Err(RunError::MissingFixture {
                path: p.display().to_string(),
            });
        }
    }
    let text = fs::read_to_string(&clocks)?;
    let (start, end, throughput) = parse_clocks(&text).ok_or_else(|| RunError::BadClocks {
        path: clocks.display().to_string(),
    })?;
    Ok(RunResult {
        bench_id: bench.id.clone(),
        start_clock: start,
        end_clock: end,
        trace: TraceSource::File { path: trace },
        backend: BackendKind::Replay,
        diagnostics: Vec::new(),
        throughput,
    })
}

fn shell_quote(p: &Path) -> String {
    format!("'{}'", p.display().to_string().replace('\'', r"'\''"))
}

fn fill(template: &str, input: &Path, output: &Path, id: &str) -> String {
    template
        .replace("{input}", &shell_quote(input))
        .replace("{output}", &shell_quote(output))
        .replace("{id}", id)
}

struct Captured {
    stdout: String,
    stderr: String,
}

fn drain<R: Read + Send + 'static>(r: Option<R>) -> std::thread::JoinHandle<String> {
    std::thread::spawn(move || {
        let mut s = String::new();
        if let Some(mut r) = r {
            let mut buf = Vec::new();
            let _ = r.read_to_end(&mut buf);
            s = String::from_utf8_lossy(&buf).into_owned();
        }
        s
    })
}

fn shell(
    stage: &'static str,
    cmd: &str,
    dir: &Path,
    timeout: Duration,
) -> Result<Captured, RunError> {
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(cmd)
        .current_dir(dir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| RunError::Io(format!("{stage}: cannot start '{cmd}': {e}")))?;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());
    let deadline = Instant::now() + timeout;
    let status = loop {
        if let Some(s) = child.try_wait()? {
            break Some(s);
        }
        if Instant::now() >= deadline {
            let _ = child.kill();
            let _ = child.wait();
            break None;
        }
        std::thread::sleep(Duration::from_millis(10));
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    match status {
        None => Err(RunError::Timeout {
            stage,
            seconds: timeout.as_secs(),
            stdout,
            stderr,
        }),
        Some(s) if !s.success() => Err(RunError::Command {
            stage,
            status: s.to_string(),
            stdout,
            stderr,
        }),
        Some(_) => Ok(Captured { stdout, stderr }),
    }
}

fn run_external(
    bench: &Microbenchmark,
    cfg: &ExternalToolchainConfig,
) -> Result<RunResult, RunError> {
    cfg.check()?;
    let wd = &cfg.working_dir;
    fs::create_dir_all(wd)?;
    let timeout = Duration::from_secs(cfg.timeout_seconds);
    let source = wd.join(bench.file_name());
    fs::write(&source, &bench.source_text)?;
    let exe = wd.join(format!("{}.bin", bench.id));
    let clocks = SyntheticResult::clocks_path(wd, &bench.id);
    let trace = SyntheticResult::trace_path(wd, &bench.id);
    let _ = fs::remove_file(&clocks);

    shell(
        "compile",
        &fill(&cfg.compile_command_template, &source, &exe, &bench.id),
        wd,
        timeout,
    )?;
    let launched = shell(
        "launch",
        &fill(&cfg.launch_command_template, &exe, &clocks, &bench.id),
        wd,
        timeout,
    )?;
    let parsed = parse_clocks(&launched.stdout).or_else(|| {
        fs::read_to_string(&clocks)
            .ok()
            .and_then(|t| parse_clocks(&t))
    });
    let (start, end, throughput) = parsed.ok_or_else(|| RunError::NoClocks {
        output: launched.stdout.clone(),
    })?;
    let traced = shell(
        "trace",
        &fill(&cfg.trace_command_template, &exe, &trace, &bench.id),
        wd,
        timeout,
    )?;
    if !trace.is_file() {
        return Err(RunError::MissingFixture {
            path: trace.display().to_string(),
        });
    }
    let diagnostics = [("launch", launched.stderr), ("trace", traced.stderr)]
        .into_iter()
        .filter(|(_, s)| !s.trim().is_empty())
        .map(|(stage, s)| format!("{stage} stderr: {}", s.trim()))
        .collect();
    Ok(RunResult {
        bench_id: bench.id.clone(),
        start_clock: start,
        end_clock: end,
        trace: TraceSource::File { path: trace },
        backend: BackendKind::External,
        diagnostics,
        throughput,
    })
}

/// One sweep entry: either a result or the error that stopped it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub id: String,
    pub request: BenchRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<RunResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepEntry {
    pub fn is_ok(&self) -> bool {
        self.result.is_some()
    }
}

fn sweep_one(req: &BenchRequest, limits: &DeviceLimits, backend: &Backend) -> SweepEntry {
    let outcome = generate(req, limits)
        .map_err(|e| e.to_string())
        .and_then(|b| run(&b, backend).map_err(|e| e.to_string()));
    let (result, error) = match outcome {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e)),
    };
    SweepEntry {
        id: req.id(),
        request: req.clone(),
        result,
        error,
    }
}

/// Runs every request, in order, recording failures per entry. The external
/// backend runs one entry at a time since all entries share a working
/// directory; the others use up to `jobs` threads (all cores when `None`).
pub fn sweep(
    requests: &[BenchRequest],
    limits: &DeviceLimits,
    backend: &Backend,
    jobs: Option<usize>,
) -> Vec<SweepEntry> {
    if matches!(backend, Backend::External(_)) || jobs == Some(1) {
        return requests
            .iter()
            .map(|r| sweep_one(r, limits, backend))
            .collect();
    }
    let work = || {
        requests
            .par_iter()
            .map(|r| sweep_one(r, limits, backend))
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
    {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

/// The run stage's output file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResults {
    pub schema_version: u32,
    pub device: DeviceLimits,
    pub backend: BackendKind,
    pub entries: Vec<SweepEntry>,
}

impl RunResults {
    pub fn new(device: DeviceLimits, backend: BackendKind, entries: Vec<SweepEntry>) -> Self {
        RunResults {
            schema_version: RESULTS_SCHEMA_VERSION,
            device,
            backend,
            entries,
        }
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| !e.is_ok()).count()
    }

    pub fn load(path: &Path) -> io::Result<RunResults> {
        let text = fs::read_to_string(path)?;
        let r: RunResults = serde_json::from_str(&text)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        if r.schema_version != RESULTS_SCHEMA_VERSION {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("unsupported results schema_version {}", r.schema_version),
            ));
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(path, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codegen::{gen_alu, ClockWidth};
    use crate::isa::parse_signature;
    use crate::seed::seed_paper_table;

    fn virtual_backend() -> Backend {
        Backend::Virtual(VirtualBackend::new(seed_paper_table(), &DeviceLimits::default()).unwrap())
    }

    #[test]
    fn virtual_add_u32() {
        let b = gen_alu(&parse_signature("add.u32").unwrap(), ClockWidth::Bits64).unwrap();
        let r = run(&b, &virtual_backend()).unwrap();
        assert_eq!(r.delta(), 8);
        assert_eq!(r.backend, BackendKind::Virtual);
    }

    #[test]
    fn replay_missing_fixture_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let b = gen_alu(&parse_signature("add.u32").unwrap(), ClockWidth::Bits64).unwrap();
        let err = run(
            &b,
            &Backend::Replay {
                dir: dir.path().into(),
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("add.u32.alu.clocks"), "{err}");
    }

    #[test]
    fn external_placeholders_required() {
        let cfg = ExternalToolchainConfig {
            compile_command_template: "nvcc {input}".into(),
            launch_command_template: "{input}".into(),
            trace_command_template: "trace {input} > {output}".into(),
            working_dir: ".".into(),
            timeout_seconds: 120,
        };
        assert!(matches!(cfg.check(), Err(RunError::Config(m)) if m.contains("{output}")));
    }

    #[test]
    fn sweep_isolates_failures() {
        let limits = DeviceLimits::default();
        let good = BenchRequest::Alu {
            spec: parse_signature("add.u32").unwrap(),
            clock_width: ClockWidth::Bits64,
            variant: 0,
        };
        let bad = BenchRequest::Alu {
            spec: parse_signature("add.u32:x0")
                .unwrap_or_else(|_| parse_signature("add.u32").unwrap().with_count(0)),
            clock_width: ClockWidth::Bits64,
            variant: 0,
        };
        let backend = virtual_backend();
        let alone = sweep(std::slice::from_ref(&good), &limits, &backend, None);
        let mixed = sweep(&[good.clone(), bad, good], &limits, &backend, Some(2));
        assert!(mixed[1].error.is_some());
        assert_eq!(mixed[0], alone[0]);
        assert_eq!(mixed[2], alone[0]);
        assert!(sweep(&[], &limits, &backend, None).is_empty());
    }
}
