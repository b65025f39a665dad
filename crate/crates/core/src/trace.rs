//! Dynamic SASS traces: parsing, timed-region extraction, mapping checks
//! and opcode classification.
//!
//! Trace format: one instruction per line. An optional `N:` ordinal or
//! `/*hex*/` address prefix and an optional `@P0`/`@!P0` predicate precede
//! the opcode; operands follow, comma separated, with an optional trailing
//! `;`. Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codegen::{BenchKind, BenchTarget, Microbenchmark, SharedDirection};
use crate::isa::{CacheOp, LatencyTable, MemoryLevel, SassTerm};

pub use crate::isa::SassMapping;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {reason}: '{text}'")]
    Parse {
        line: usize,
        text: String,
        reason: String,
    },
    #[error("trace has {found} clock read(s); a timed region needs two")]
    MissingClockReads { found: usize },
    #[error("no latency-table record for '{0}'")]
    MissingRecord(String),
    #[error("cannot read trace {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub index: usize,
    /// 1-based source line.
    pub line: usize,
    pub opcode: String,
    pub operands: Vec<String>,
    pub predicate: Option<String>,
    pub is_clock_read: bool,
    pub is_barrier: bool,
}

impl TraceEvent {
    /// Mnemonic without modifiers: `HMMA.16816.F16` gives `HMMA`.
    pub fn base_opcode(&self) -> &str {
        self.opcode.split('.').next().unwrap_or_default()
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.index)?;
        if let Some(p) = &self.predicate {
            write!(f, "{p} ")?;
        }
        f.write_str(&self.opcode)?;
        if !self.operands.is_empty() {
            write!(f, " {}", self.operands.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub text: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParsedTrace {
    pub events: Vec<TraceEvent>,
    pub skipped: Vec<SkippedLine>,
}

fn is_opcode(tok: &str) -> bool {
    tok.starts_with(|c: char| c.is_ascii_uppercase())
        && tok
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '.' || c == '_')
}

fn strip_prefix_ordinal(s: &str) -> &str {
    let s = s.trim_start();
    if let Some(rest) = s.strip_prefix("/*") {
        if let Some(end) = rest.find("*/") {
            return rest[end + 2..].trim_start();
        }
    }
    if let Some((head, rest)) = s.split_once(':') {
        if !head.is_empty()
            && head
                .trim()
                .chars()
                .all(|c| c.is_ascii_hexdigit() || c == 'x')
        {
            return rest.trim_start();
        }
    }
    s
}

/// `(predicate, opcode, operands)` of one instruction line.
type ParsedLine = (Option<String>, String, Vec<String>);

fn parse_line(raw: &str) -> Result<Option<ParsedLine>, String> {
    let t = raw.trim();
    if t.is_empty() || t.starts_with('#') {
        return Ok(None);
    }
    let mut rest = strip_prefix_ordinal(t);
    let mut predicate = None;
    if rest.starts_with('@') {
        let (p, tail) = rest
            .split_once(char::is_whitespace)
            .ok_or("predicate without opcode")?;
        predicate = Some(p.to_string());
        rest = tail.trim_start();
    }
    let rest = rest.trim_end().trim_end_matches(';').trim_end();
    let (opcode, operands) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
    if !is_opcode(opcode) {
        return Err(format!("'{opcode}' is not a SASS opcode"));
    }
    let operands = operands
        .split(',')
        .map(str::trim)
        .filter(|o| !o.is_empty())
        .map(str::to_string)
        .collect();
    Ok(Some((predicate, opcode.to_string(), operands)))
}

fn clock_read(opcode: &str, operands: &[String]) -> bool {
    let base = opcode.split('.').next().unwrap_or_default();
    matches!(base, "CS2R" | "S2R") && operands.iter().any(|o| o.starts_with("SR_CLOCK"))
}

pub fn parse_trace(text: &str, mode: ParseMode) -> Result<ParsedTrace, TraceError> {
    let mut out = ParsedTrace::default();
    for (i, raw) in text.lines().enumerate() {
        match parse_line(raw) {
            Ok(None) => {}
            Ok(Some((predicate, opcode, operands))) => {
                let is_clock_read = clock_read(&opcode, &operands);
                let is_barrier = opcode.split('.').next() == Some("BAR");
                out.events.push(TraceEvent {
                    index: out.events.len(),
                    line: i + 1,
                    opcode,
                    operands,
                    predicate,
                    is_clock_read,
                    is_barrier,
                });
            }
            Err(reason) => match mode {
                ParseMode::Strict => {
                    return Err(TraceError::Parse {
                        line: i + 1,
                        text: raw.to_string(),
                        reason,
                    })
                }
                ParseMode::Lenient => out.skipped.push(SkippedLine {
                    line: i + 1,
                    text: raw.to_string(),
                    reason,
                }),
            },
        }
    }
    Ok(out)
}

pub fn read_trace(path: &Path, mode: ParseMode) -> Result<ParsedTrace, TraceError> {
    let text = std::fs::read_to_string(path).map_err(|e| TraceError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    parse_trace(&text, mode)
}

/// Indices of the first two clock reads; the timed region lies strictly
/// between them.
pub fn timed_region(events: &[TraceEvent]) -> Result<(usize, usize), TraceError> {
    let mut clocks = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.is_clock_read)
        .map(|(i, _)| i);
    match (clocks.next(), clocks.next()) {
        (Some(a), Some(b)) => Ok((a, b)),
        (a, _) => Err(TraceError::MissingClockReads {
            found: usize::from(a.is_some()),
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingReport {
    pub matched: bool,
    /// Opcode totals observed in the timed region, first-appearance order.
    pub observed: Vec<ObservedTerm>,
    pub extra_events: Vec<TraceEvent>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedTerm {
    pub opcode: String,
    pub count: u64,
}

impl MappingReport {
    fn failed(note: String) -> Self {
        MappingReport {
            matched: false,
            observed: Vec::new(),
            extra_events: Vec::new(),
            notes: vec![note],
        }
    }

    pub fn observed_count(&self, opcode: &str) -> u64 {
        self.observed
            .iter()
            .find(|t| t.opcode == opcode)
            .map_or(0, |t| t.count)
    }
}

fn totals(terms: &[SassTerm], scale: u64) -> BTreeMap<String, u64> {
    terms
        .iter()
        .map(|t| (t.opcode.clone(), t.count as u64 * scale))
        .filter(|(_, n)| *n > 0)
        .collect()
}

/// Checks that the timed region holds exactly `expected` scaled by the
/// benchmark's timed instruction count. Barriers are always extras; NOPs
/// inside a WMMA region are warp syncs and tolerated.
pub fn verify_mapping(
    bench: &Microbenchmark,
    events: &[TraceEvent],
    expected: &SassMapping,
) -> MappingReport {
    let (start, end) = match timed_region(events) {
        Ok(r) => r,
        Err(e) => return MappingReport::failed(e.to_string()),
    };
    let context = RegionContext::for_kind(bench.kind());
    let mut notes = Vec::new();
    let mut extras = Vec::new();
    let mut observed: Vec<ObservedTerm> = Vec::new();
    let mut syncs = 0u64;
    for e in &events[start + 1..end] {
        let class = classify_with(e, context);
        if class == InstructionClass::Barrier {
            if e.is_barrier {
                extras.push(e.clone());
            } else {
                syncs += 1;
            }
            continue;
        }
        match observed.iter_mut().find(|t| t.opcode == e.opcode) {
            Some(t) => t.count += 1,
            None => observed.push(ObservedTerm {
                opcode: e.opcode.clone(),
                count: 1,
            }),
        }
    }
    if syncs > 0 {
        notes.push(format!("{syncs} warp-sync NOP(s) in the timed region"));
    }
    let seen: BTreeMap<String, u64> = observed
        .iter()
        .map(|t| (t.opcode.clone(), t.count))
        .collect();
    let n = bench.timed_count;

    let mut matched = false;
    if expected.multi_instruction {
        match &expected.hint {
            Some(h) => {
                let c = seen.get(h).copied().unwrap_or(0);
                matched = c >= n;
                if !matched {
                    notes.push(format!(
                        "expected at least {n} {h} in a multi-instruction sequence, saw {c}"
                    ));
                }
            }
            None => matched = true,
        }
        notes.push("multi-instruction sequence; only the known opcode is checked".into());
    } else {
        for (i, cand) in expected.candidates().enumerate() {
            if totals(cand, n) == seen {
                matched = true;
                if i > 0 {
                    let expr: Vec<String> = cand
                        .iter()
                        .map(|t| format!("{}*{}", t.count, t.opcode))
                        .collect();
                    notes.push(format!("matched alternative mapping {}", expr.join("+")));
                }
                break;
            }
        }
        if !matched {
            let want = totals(&expected.expansion, n);
            for (op, c) in &want {
                let got = seen.get(op).copied().unwrap_or(0);
                if got != *c {
                    notes.push(format!("{op}: expected {c}, observed {got}"));
                }
            }
            let known: Vec<&str> = expected
                .candidates()
                .flat_map(|c| c.iter().map(|t| t.opcode.as_str()))
                .collect();
            for e in &events[start + 1..end] {
                if !known.contains(&e.opcode.as_str())
                    && !extras.contains(e)
                    && classify_with(e, context) != InstructionClass::Barrier
                {
                    extras.push(e.clone());
                }
            }
        }
    }
    if !extras.is_empty() {
        if extras.iter().any(|e| e.is_barrier) {
            notes.push("barrier inside the timed region".into());
        }
        matched = false;
    }
    MappingReport {
        matched,
        observed,
        extra_events: extras,
        notes,
    }
}

/// SASS for a cached 64-bit global load with the given operator.
pub fn global_load_sass(op: CacheOp) -> &'static str {
    match op {
        CacheOp::Cv => "LDG.E.64.STRONG.SYS",
        CacheOp::Cg => "LDG.E.64.STRONG.GPU",
        CacheOp::Ca => "LDG.E.64",
    }
}

pub const SHARED_FOLLOWUP_SASS: &str = "IADD3";

/// Expansion the trace of `bench` should show, per timed instruction.
pub fn expected_mapping(
    bench: &Microbenchmark,
    table: &LatencyTable,
) -> Result<SassMapping, TraceError> {
    let parse = |ptx: &str, sass: &str| SassMapping::parse(ptx, sass).expect("built-in expansion");
    Ok(match &bench.target {
        BenchTarget::ClockOverhead => parse(crate::seed::CLOCK_READ_KEY, "CS2R.32"),
        BenchTarget::Alu(spec) => table
            .record(&spec.key())
            .ok_or_else(|| TraceError::MissingRecord(spec.key()))?
            .mapping
            .clone(),
        BenchTarget::Memory(level) => {
            let op = bench
                .chase
                .as_ref()
                .map(|c| c.cache_op)
                .or_else(|| level.cache_op())
                .unwrap_or(CacheOp::Cv);
            parse(&format!("ld.global.{op}.u64"), global_load_sass(op))
        }
        BenchTarget::Shared(dir) => match dir {
            SharedDirection::Load => {
                parse("ld.shared.u64", &format!("LDS.64+{SHARED_FOLLOWUP_SASS}"))
            }
            SharedDirection::Store => {
                parse("st.shared.u64", &format!("STS.64+{SHARED_FOLLOWUP_SASS}"))
            }
        },
        BenchTarget::Wmma(op) => parse(
            &op.ptx_mma_name(),
            &format!("{}*{}", op.sass_count, op.sass_opcode),
        ),
    })
}

/// Memory level implied by a global-load SASS opcode.
pub fn level_of_load(opcode: &str) -> Option<MemoryLevel> {
    match opcode {
        "LDG.E.64.STRONG.SYS" => Some(MemoryLevel::Global),
        "LDG.E.64.STRONG.GPU" => Some(MemoryLevel::L2),
        "LDG.E.64" => Some(MemoryLevel::L1),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionClass {
    Integer,
    Float,
    Double,
    Half,
    Memory,
    Tensor,
    Control,
    Clock,
    Barrier,
    Other,
}

/// Where an event sits; NOP means a warp sync only inside WMMA regions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RegionContext {
    #[default]
    General,
    Wmma,
}

impl RegionContext {
    pub fn for_kind(kind: BenchKind) -> Self {
        if kind == BenchKind::Wmma {
            RegionContext::Wmma
        } else {
            RegionContext::General
        }
    }
}

const CLASS_TABLE: &[(&str, InstructionClass)] = {
    use InstructionClass::*;
    &[
        ("BAR", Barrier),
        ("HMMA", Tensor),
        ("IMMA", Tensor),
        ("DMMA", Tensor),
        ("BMMA", Tensor),
        ("LDG", Memory),
        ("STG", Memory),
        ("LDS", Memory),
        ("STS", Memory),
        ("LDL", Memory),
        ("STL", Memory),
        ("LDC", Memory),
        ("LDSM", Memory),
        ("LD", Memory),
        ("ST", Memory),
        ("ATOM", Memory),
        ("ATOMS", Memory),
        ("RED", Memory),
        ("BRA", Control),
        ("EXIT", Control),
        ("RET", Control),
        ("CALL", Control),
        ("JMP", Control),
        ("BSSY", Control),
        ("BSYNC", Control),
        ("WARPSYNC", Control),
        ("DADD", Double),
        ("DMUL", Double),
        ("DFMA", Double),
        ("DSETP", Double),
        ("DMNMX", Double),
        ("HADD", Half),
        ("HADD2", Half),
        ("HMUL2", Half),
        ("HFMA2", Half),
        ("HMNMX2", Half),
        ("HSETP2", Half),
        ("FADD", Float),
        ("FMUL", Float),
        ("FFMA", Float),
        ("FMNMX", Float),
        ("FSETP", Float),
        ("FSEL", Float),
        ("FSTEP", Float),
        ("FRND", Float),
        ("FCHK", Float),
        ("F2I", Float),
        ("I2F", Float),
        ("F2F", Float),
        ("MUFU", Float),
        ("IADD", Integer),
        ("IADD3", Integer),
        ("IMAD", Integer),
        ("IMUL", Integer),
        ("IMNMX", Integer),
        ("IABS", Integer),
        ("ISETP", Integer),
        ("IDP", Integer),
        ("LOP", Integer),
        ("LOP3", Integer),
        ("SHF", Integer),
        ("SHL", Integer),
        ("SHR", Integer),
        ("PRMT", Integer),
        ("SGXT", Integer),
        ("BREV", Integer),
        ("BMSK", Integer),
        ("POPC", Integer),
        ("FLO", Integer),
        ("SEL", Integer),
        ("VABSDIFF", Integer),
        ("MOV", Integer),
        ("LEA", Integer),
        ("PLOP3", Integer),
    ]
};

fn lookup(base: &str) -> Option<InstructionClass> {
    CLASS_TABLE
        .iter()
        .find(|(n, _)| *n == base)
        .map(|&(_, c)| c)
}

/// Class of a bare opcode. Uniform-datapath forms (`UIADD3`) classify like
/// their vector counterparts.
pub fn classify_opcode(opcode: &str, context: RegionContext) -> InstructionClass {
    let mut parts = opcode.split('.');
    let base = parts.next().unwrap_or_default();
    if base == "NOP" {
        return match context {
            RegionContext::Wmma => InstructionClass::Barrier,
            RegionContext::General => InstructionClass::Other,
        };
    }
    if matches!(base, "CS2R" | "S2R") {
        return InstructionClass::Clock;
    }
    let class = lookup(base).or_else(|| base.strip_prefix('U').and_then(lookup));
    match class {
        Some(InstructionClass::Float) if base == "MUFU" => {
            let mods: Vec<&str> = parts.collect();
            if mods.iter().any(|m| m.contains("64")) {
                InstructionClass::Double
            } else if mods.contains(&"F16") {
                InstructionClass::Half
            } else {
                InstructionClass::Float
            }
        }
        Some(c) => c,
        None => InstructionClass::Other,
    }
}

pub fn classify(event: &TraceEvent) -> InstructionClass {
    classify_with(event, RegionContext::General)
}

pub fn classify_with(event: &TraceEvent, context: RegionContext) -> InstructionClass {
    if event.is_clock_read {
        return InstructionClass::Clock;
    }
    if event.is_barrier {
        return InstructionClass::Barrier;
    }
    match classify_opcode(&event.opcode, context) {
        // A status-register move that is not a clock read.
        InstructionClass::Clock => InstructionClass::Other,
        c => c,
    }
}
