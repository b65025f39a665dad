//! Table files, rendered reports and table diffs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cycles::{CycleRange, Cycles};
use crate::isa::{Dependency, Extra, LatencyTable, MemoryLevel};

pub const TABLE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error(
        "{path}: schema_version {found} needs migration; this build reads version {supported}"
    )]
    Migration {
        path: String,
        found: u64,
        supported: u32,
    },
    #[error("{path}: invalid table:\n  {}", .problems.join("\n  "))]
    Invalid { path: String, problems: Vec<String> },
}

/// On-disk form of a latency table. Fields this version does not know are
/// kept in `extra` and written back unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableDocument {
    pub schema_version: u32,
    pub architecture: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub table: LatencyTable,
    #[serde(flatten)]
    pub extra: Extra,
}

impl TableDocument {
    pub fn new(table: LatencyTable, generated_at: Option<String>) -> Self {
        TableDocument {
            schema_version: TABLE_SCHEMA_VERSION,
            architecture: table.architecture.clone(),
            generated_at,
            table,
            extra: Extra::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table documents serialize");
        s.push('\n');
        s
    }

    /// Parses and validates a document; `path` only labels errors.
    pub fn from_text(text: &str, path: &str) -> Result<Self, ReportError> {
        let parse_err = |e: serde_json::Error| ReportError::Parse {
            path: path.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        };
        let raw: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        match raw.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == TABLE_SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(ReportError::Migration {
                    path: path.to_string(),
                    found: v,
                    supported: TABLE_SCHEMA_VERSION,
                })
            }
            None => {
                return Err(ReportError::Parse {
                    path: path.to_string(),
                    line: 1,
                    column: 1,
                    message: "missing integer schema_version".into(),
                })
            }
        }
        let doc: TableDocument = serde_json::from_str(text).map_err(parse_err)?;
        let problems = doc.table.problems();
        if !problems.is_empty() {
            return Err(ReportError::Invalid {
                path: path.to_string(),
                problems,
            });
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), ReportError> {
        fs::write(path, self.to_text()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub fn save(table: &LatencyTable, path: &Path) -> Result<(), ReportError> {
    TableDocument::new(table.clone(), None).save(path)
}

pub fn load(path: &Path) -> Result<LatencyTable, ReportError> {
    TableDocument::load(path).map(|d| d.table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "md" | "markdown" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            other => Err(format!("unknown format '{other}' (expected md or csv)")),
        }
    }
}

pub fn render(table: &LatencyTable, format: Format) -> String {
    match format {
        Format::Markdown => render_markdown(table),
        Format::Csv => render_csv(table),
    }
}

pub fn memory_label(level: MemoryLevel) -> &'static str {
    match level {
        MemoryLevel::Global => "Global memory",
        MemoryLevel::L2 => "L2 cache",
        MemoryLevel::L1 => "L1 cache",
        MemoryLevel::SharedLoad => "Shared memory (ld)",
        MemoryLevel::SharedStore => "Shared memory (st)",
    }
}

fn md_cell(s: &str) -> String {
    s.replace('|', "\\|")
}

fn render_markdown(t: &LatencyTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Latency table: {}\n", t.architecture);

    s.push_str(
        "## Instructions\n\n| Family | PTX | SASS | Cycles | Notes |\n|---|---|---|---|---|\n",
    );
    let mut families: BTreeMap<&str, Vec<_>> = BTreeMap::new();
    for r in t
        .records
        .values()
        .filter(|r| r.spec.dependency == Dependency::Independent)
    {
        families.entry(r.spec.opcode.as_str()).or_default().push(r);
    }
    for (family, recs) in &families {
        for r in recs {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                family,
                r.spec.signature(),
                md_cell(&r.mapping.expression()),
                r.cycles,
                md_cell(&r.notes.join("; "))
            );
        }
    }

    s.push_str("\n## Dependent and independent CPI\n\n| Instruction | Dependent | Independent |\n|---|---|---|\n");
    for r in t
        .records
        .values()
        .filter(|r| r.spec.dependency == Dependency::Dependent)
    {
        let sig = r.spec.signature();
        let indep = t
            .record(&sig)
            .map_or_else(|| "-".to_string(), |i| i.cycles.to_string());
        let _ = writeln!(s, "| {sig} | {} | {indep} |", r.cycles);
    }

    s.push_str("\n## Memory access latency\n\n| Memory | Cycles |\n|---|---|\n");
    for level in MemoryLevel::ALL {
        if let Some(c) = t.memory.get(&level) {
            let _ = writeln!(s, "| {} | {c} |", memory_label(level));
        }
    }

    s.push_str(
        "\n## Tensor-core operations\n\n| A/B | C/D | Shape | SASS | Cycles | GB/s (measured-theoretical) |\n|---|---|---|---|---|---|\n",
    );
    for op in &t.tensor_ops {
        let tp = op.throughput.map_or_else(
            || "-".to_string(),
            |f| format!("{}-{}", f.measured_gbps, f.theoretical_gbps),
        );
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {tp} |",
            op.in_type,
            op.acc_type,
            op.shape,
            op.sass_expansion(),
            op.total_cycles()
        );
    }

    s.push_str("\n## Clock\n\n| Quantity | Cycles |\n|---|---|\n");
    if !t.is_empty() || !t.clock_overhead.is_zero() {
        let _ = writeln!(s, "| clock read overhead | {} |", t.clock_overhead);
    }
    if let Some(b) = t.barrier_penalty {
        let _ = writeln!(s, "| 32-bit clock barrier penalty | {b} |");
    }
    for p in &t.launch_curve {
        let _ = writeln!(s, "| average CPI, {} instruction(s) | {} |", p.count, p.cpi);
    }
    s
}

const CSV_HEADER: [&str; 9] = [
    "section",
    "key",
    "sass",
    "cycles",
    "cycles_min",
    "cycles_max",
    "approx",
    "source",
    "notes",
];

fn render_csv(t: &LatencyTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut row = |fields: [String; 9]| w.write_record(&fields).expect("in-memory csv");
    row(CSV_HEADER.map(str::to_string));
    let range_cols = |c: &CycleRange| {
        [
            c.to_string(),
            c.min.to_string(),
            c.max.to_string(),
            c.approx.to_string(),
        ]
    };
    for r in t.records.values() {
        let [c, lo, hi, ap] = range_cols(&r.cycles);
        let source = serde_json::to_value(r.source)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        row([
            "instruction".into(),
            r.key(),
            r.mapping.expression(),
            c,
            lo,
            hi,
            ap,
            source,
            r.notes.join("; "),
        ]);
    }
    for (level, c) in &t.memory {
        let [c, lo, hi, ap] = range_cols(c);
        row([
            "memory".into(),
            level.name().into(),
            String::new(),
            c,
            lo,
            hi,
            ap,
            String::new(),
            String::new(),
        ]);
    }
    for op in &t.tensor_ops {
        let cyc = op.total_cycles().to_string();
        let notes = op
            .throughput
            .map(|f| format!("{}-{} GB/s", f.measured_gbps, f.theoretical_gbps))
            .unwrap_or_default();
        row([
            "tensor".into(),
            format!("{}.{}", op.key(), op.shape),
            op.sass_expansion(),
            cyc.clone(),
            cyc.clone(),
            cyc,
            "false".into(),
            String::new(),
            notes,
        ]);
    }
    let bytes = w.into_inner().expect("in-memory csv");
    String::from_utf8(bytes).expect("utf-8 csv")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiffSection {
    Instruction,
    Memory,
    Tensor,
    Clock,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffEntry {
    pub section: DiffSection,
    pub key: String,
    pub a: CycleRange,
    pub b: CycleRange,
    /// Midpoint of `a` minus midpoint of `b`.
    pub delta: Cycles,
    /// `delta` relative to the midpoint of `b`; absent when that is zero.
    pub percent: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub changed: Vec<DiffEntry>,
    /// Present only in the second table.
    pub added: Vec<(DiffSection, String)>,
    /// Present only in the first table.
    pub removed: Vec<(DiffSection, String)>,
}

impl DiffReport {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty() && self.added.is_empty() && self.removed.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("diff reports serialize");
        s.push('\n');
        s
    }

    pub fn render(&self) -> String {
        if self.is_empty() {
            return "no differences\n".into();
        }
        let mut s = String::new();
        let section = |d: DiffSection| {
            serde_json::to_value(d)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default()
        };
        for e in &self.changed {
            let pct = e
                .percent
                .map_or_else(String::new, |p| format!(" ({p:+.1}%)"));
            let sign = if e.delta.is_negative() { "" } else { "+" };
            let _ = writeln!(
                s,
                "changed {} {}: {} -> {} delta {sign}{}{pct}",
                section(e.section),
                e.key,
                e.a,
                e.b,
                e.delta
            );
        }
        for (sec, k) in &self.removed {
            let _ = writeln!(s, "removed {} {k}", section(*sec));
        }
        for (sec, k) in &self.added {
            let _ = writeln!(s, "added {} {k}", section(*sec));
        }
        s
    }
}

fn compare(
    out: &mut DiffReport,
    section: DiffSection,
    a: &BTreeMap<String, CycleRange>,
    b: &BTreeMap<String, CycleRange>,
) {
    for (k, ra) in a {
        match b.get(k) {
            None => out.removed.push((section, k.clone())),
            Some(rb) if !ra.same_bounds(rb) => {
                let delta = ra.midpoint() - rb.midpoint();
                let base = rb.midpoint();
                out.changed.push(DiffEntry {
                    section,
                    key: k.clone(),
                    a: *ra,
                    b: *rb,
                    delta,
                    percent: (!base.is_zero()).then(|| 100.0 * delta.to_f64() / base.to_f64()),
                });
            }
            Some(_) => {}
        }
    }
    for k in b.keys().filter(|k| !a.contains_key(*k)) {
        out.added.push((section, k.clone()));
    }
}

fn clock_entries(t: &LatencyTable) -> BTreeMap<String, CycleRange> {
    let mut m = BTreeMap::new();
    m.insert(
        "clock_overhead".to_string(),
        CycleRange::point(t.clock_overhead),
    );
    if let Some(b) = t.barrier_penalty {
        m.insert("barrier_penalty".to_string(), CycleRange::point(b));
    }
    for p in &t.launch_curve {
        m.insert(format!("launch_cpi.n{}", p.count), CycleRange::point(p.cpi));
    }
    m
}

/// Differences from `a` to `b`. Approximation markers are ignored; only
/// bounds are compared.
pub fn diff(a: &LatencyTable, b: &LatencyTable) -> DiffReport {
    let mut out = DiffReport::default();
    let records = |t: &LatencyTable| -> BTreeMap<String, CycleRange> {
        t.records
            .iter()
            .map(|(k, r)| (k.clone(), r.cycles))
            .collect()
    };
    let memory = |t: &LatencyTable| -> BTreeMap<String, CycleRange> {
        t.memory
            .iter()
            .map(|(l, c)| (l.name().to_string(), *c))
            .collect()
    };
    let tensor = |t: &LatencyTable| -> BTreeMap<String, CycleRange> {
        t.tensor_ops
            .iter()
            .map(|o| (o.key(), CycleRange::point(o.total_cycles() as i64)))
            .collect()
    };
    compare(&mut out, DiffSection::Instruction, &records(a), &records(b));
    compare(&mut out, DiffSection::Memory, &memory(a), &memory(b));
    compare(&mut out, DiffSection::Tensor, &tensor(a), &tensor(b));
    compare(
        &mut out,
        DiffSection::Clock,
        &clock_entries(a),
        &clock_entries(b),
    );
    out
}

/// Keys present in both tables, for "shared keys" comparisons.
pub fn shared_record_keys(a: &LatencyTable, b: &LatencyTable) -> BTreeSet<String> {
    a.records
        .keys()
        .filter(|k| b.records.contains_key(*k))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::seed_paper_table;

    #[test]
    fn seed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        let t = seed_paper_table();
        save(&t, &p).unwrap();
        assert_eq!(load(&p).unwrap(), t);
    }

    #[test]
    fn future_version_needs_migration() {
        let mut doc = TableDocument::new(seed_paper_table(), None);
        doc.schema_version = 7;
        let err = TableDocument::from_text(&doc.to_text(), "x.json").unwrap_err();
        assert!(matches!(err, ReportError::Migration { found: 7, .. }));
    }

    #[test]
    fn inverted_range_rejected() {
        let text = TableDocument::new(seed_paper_table(), None).to_text();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let rec = &mut v["table"]["records"][0]["cycles"];
        *rec = serde_json::json!("9-3");
        let err = TableDocument::from_text(&v.to_string(), "x.json");
        assert!(err.is_err(), "{err:?}");
    }

    #[test]
    fn unknown_fields_survive() {
        let text = TableDocument::new(seed_paper_table(), None).to_text();
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["future_field"] = serde_json::json!({"a": [1, 2]});
        v["table"]["records"][0]["future_record_field"] = serde_json::json!(true);
        let doc = TableDocument::from_text(&v.to_string(), "x").unwrap();
        let again: serde_json::Value = serde_json::from_str(&doc.to_text()).unwrap();
        assert_eq!(again, v);
    }

    #[test]
    fn diff_against_turing_global() {
        let a = seed_paper_table();
        let mut b = a.clone();
        b.memory.insert(MemoryLevel::Global, CycleRange::point(434));
        let d = diff(&a, &b);
        assert_eq!(d.changed.len(), 1);
        assert_eq!(d.changed[0].delta, Cycles::from_int(-144));
        assert_eq!(diff(&b, &a).changed[0].delta, Cycles::from_int(144));
        assert!(diff(&a, &a).is_empty());
        b = a.clone();
        b.records.remove("add.u32");
        let d = diff(&a, &b);
        assert_eq!(
            d.removed,
            vec![(DiffSection::Instruction, "add.u32".to_string())]
        );
        assert!(d.changed.is_empty() && d.added.is_empty());
    }

    #[test]
    fn markdown_memory_rows() {
        let md = render(&seed_paper_table(), Format::Markdown);
        assert!(md.contains("| Global memory | 290 |"));
        assert!(md.contains("| L2 cache | ~200 |"));
        let empty = render(&LatencyTable::empty("x"), Format::Markdown);
        assert!(empty.contains("| Memory | Cycles |"));
        assert!(!empty.contains("Global memory"));
        assert_eq!(
            render(&LatencyTable::empty("x"), Format::Csv)
                .lines()
                .count(),
            1
        );
    }
}
