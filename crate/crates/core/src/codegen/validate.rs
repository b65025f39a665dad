//! Validator for the PTX subset the generators emit, plus the WMMA source
//! descriptors.
//!
//! Besides syntax, the validator finds clock-read pairs, resolves the trip
//! counts of counted loops and reports how many times each instruction runs
//! inside every timed region.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

const PTX_OPCODES: &[&str] = &[
    "abs", "add", "addc", "and", "bar", "bfe", "bfi", "bfind", "bra", "brev", "clz", "cnot",
    "copysign", "cos", "cvt", "cvta", "div", "dp2a", "dp4a", "ex2", "exit", "fma", "fns", "ld",
    "lg2", "lop3", "mad", "mad24", "max", "min", "mov", "mul", "mul24", "neg", "not", "or", "popc",
    "rcp", "rem", "ret", "rsqrt", "sad", "selp", "setp", "shl", "shr", "sin", "sqrt", "st", "sub",
    "subc", "tanh", "testp", "xor",
];

const SPECIAL_REGS: &[&str] = &[
    "clock", "clock64", "clock_hi", "laneid", "warpid", "smid", "tid.x", "tid.y", "tid.z",
    "ntid.x", "ctaid.x", "nctaid.x",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationIssue {
    pub line: usize,
    pub token: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}: {} (at '{}')",
            self.line, self.message, self.token
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceKind {
    Ptx,
    Cuda,
}

/// Dynamic instruction counts between one pair of clock reads.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TimedRegion {
    pub start_line: usize,
    pub end_line: usize,
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub kind: SourceKind,
    pub errors: Vec<ValidationIssue>,
    pub regions: Vec<TimedRegion>,
    /// Static instructions outside every timed region, clock reads excluded.
    pub outside_count: u64,
    pub clock_reads: usize,
    pub probe: Option<String>,
    pub declared_timed_count: Option<u64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    /// Dynamic count of `opcode` summed over all timed regions.
    pub fn count_of(&self, opcode: &str) -> u64 {
        self.regions
            .iter()
            .map(|r| r.counts.get(opcode).copied().unwrap_or(0))
            .sum()
    }

    /// Probe count when a probe is declared, otherwise every timed instruction.
    pub fn timed_count(&self) -> u64 {
        match &self.probe {
            Some(p) => self.count_of(p),
            None => self.regions.iter().map(|r| r.total).sum(),
        }
    }

    fn error(&mut self, line: usize, token: &str, message: impl Into<String>) {
        self.errors.push(ValidationIssue {
            line,
            token: token.to_string(),
            message: message.into(),
        });
    }
}

/// Validates PTX text, or a WMMA source descriptor when the text holds a
/// `__global__` function.
pub fn validate_ptx(text: &str) -> ValidationReport {
    let mut report = ValidationReport {
        kind: SourceKind::Ptx,
        errors: Vec::new(),
        regions: Vec::new(),
        outside_count: 0,
        clock_reads: 0,
        probe: None,
        declared_timed_count: None,
    };
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim().strip_prefix("//") {
            if let Some((k, v)) = rest.trim().split_once(':') {
                match k.trim() {
                    "probe" => report.probe = Some(v.trim().to_string()),
                    "timed_count" => match v.trim().parse() {
                        Ok(n) => report.declared_timed_count = Some(n),
                        Err(_) => {
                            report.error(i + 1, v.trim(), "timed_count header is not an integer")
                        }
                    },
                    _ => {}
                }
            }
        }
    }
    if text.contains("__global__") {
        report.kind = SourceKind::Cuda;
        validate_cuda(text, &mut report);
    } else {
        validate_ptx_text(text, &mut report);
    }
    if report.errors.is_empty() {
        if let Some(declared) = report.declared_timed_count {
            let found = report.timed_count();
            if found != declared {
                report.error(
                    0,
                    report.probe.clone().unwrap_or_default().as_str(),
                    format!(
                        "timed-region count {found} does not match declared timed_count {declared}"
                    ),
                );
            }
        }
    }
    report
}

struct Instr {
    line: usize,
    guard: Option<String>,
    opcode: String,
    operands: Vec<String>,
}

impl Instr {
    fn is_clock_read(&self) -> bool {
        self.opcode.starts_with("mov.")
            && self
                .operands
                .get(1)
                .is_some_and(|o| o == "%clock" || o == "%clock64")
    }
}

fn split_operands(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut cur = String::new();
    for c in s.chars() {
        match c {
            '[' | '{' => depth += 1,
            ']' | '}' => depth -= 1,
            _ => {}
        }
        if c == ',' && depth == 0 {
            out.push(cur.trim().to_string());
            cur.clear();
        } else {
            cur.push(c);
        }
    }
    if !cur.trim().is_empty() {
        out.push(cur.trim().to_string());
    }
    out
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn is_immediate(s: &str) -> bool {
    if parse_int(s).is_some() {
        return true;
    }
    let hex_float = |p: &str, len: usize| {
        s.strip_prefix(p)
            .is_some_and(|h| h.len() == len && h.chars().all(|c| c.is_ascii_hexdigit()))
    };
    hex_float("0f", 8) || hex_float("0F", 8) || hex_float("0d", 16) || hex_float("0D", 16)
}

/// Splits `%rd12` into `("rd", 12)`.
fn register_parts(s: &str) -> Option<(&str, u32)> {
    let body = s.strip_prefix('%')?;
    let split = body.find(|c: char| c.is_ascii_digit())?;
    let (name, num) = body.split_at(split);
    Some((name, num.parse().ok()?))
}

struct Decls {
    ranges: HashMap<String, u32>,
    scalars: BTreeSet<String>,
    symbols: BTreeSet<String>,
}

impl Decls {
    fn any(&self) -> bool {
        !self.ranges.is_empty() || !self.scalars.is_empty()
    }

    fn has_register(&self, reg: &str) -> bool {
        if self.scalars.contains(reg) {
            return true;
        }
        match register_parts(reg) {
            Some((name, n)) => self.ranges.get(name).is_some_and(|&limit| n < limit),
            None => false,
        }
    }
}

fn check_operand(op: &str, decls: &Decls, line: usize, report: &mut ValidationReport) {
    if let Some(inner) = op.strip_prefix('[').and_then(|o| o.strip_suffix(']')) {
        let base = inner.split('+').next().unwrap_or_default().trim();
        if let Some(off) = inner.split_once('+').map(|(_, o)| o.trim()) {
            if parse_int(off).is_none() {
                report.error(line, op, "address offset must be an integer");
            }
        }
        if base.starts_with('%') {
            check_operand(base, decls, line, report);
        } else if !is_ident(base) {
            report.error(line, op, "malformed address");
        }
        return;
    }
    if let Some(inner) = op.strip_prefix('{').and_then(|o| o.strip_suffix('}')) {
        for part in split_operands(inner) {
            check_operand(&part, decls, line, report);
        }
        return;
    }
    if let Some(name) = op.strip_prefix('%') {
        if SPECIAL_REGS.contains(&name) {
            return;
        }
        if register_parts(op).is_none() && !decls.scalars.contains(op) {
            report.error(line, op, "malformed register");
        } else if decls.any() && !decls.has_register(op) {
            report.error(line, op, "register used but not declared");
        }
        return;
    }
    if is_immediate(op) || is_ident(op) {
        return;
    }
    report.error(line, op, "unrecognised operand");
}

fn validate_ptx_text(text: &str, report: &mut ValidationReport) {
    let mut decls = Decls {
        ranges: HashMap::new(),
        scalars: BTreeSet::new(),
        symbols: BTreeSet::new(),
    };
    let mut labels: BTreeMap<String, usize> = BTreeMap::new();
    let mut instrs: Vec<Instr> = Vec::new();
    let mut depth = 0i32;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let code = match raw.find("//") {
            Some(p) => &raw[..p],
            None => raw,
        };
        let code = code.trim();
        if code.is_empty() {
            continue;
        }
        match code {
            "{" => {
                depth += 1;
                continue;
            }
            "}" => {
                depth -= 1;
                if depth < 0 {
                    report.error(line_no, "}", "unbalanced closing brace");
                }
                continue;
            }
            ")" => continue,
            _ => {}
        }
        if code.starts_with('.') {
            parse_directive(code, line_no, &mut decls, report);
            continue;
        }
        if let Some(name) = code.strip_suffix(':') {
            if is_ident(name) {
                if labels.insert(name.to_string(), instrs.len()).is_some() {
                    report.error(line_no, name, "duplicate label");
                }
            } else {
                report.error(line_no, name, "malformed label");
            }
            continue;
        }
        let Some(stmt) = code.strip_suffix(';') else {
            report.error(
                line_no,
                code.split_whitespace().last().unwrap_or(code),
                "missing ';'",
            );
            continue;
        };
        let mut rest = stmt.trim();
        let mut guard = None;
        if let Some(g) = rest.strip_prefix('@') {
            let (pred, tail) = g.split_once(char::is_whitespace).unwrap_or((g, ""));
            guard = Some(pred.trim_start_matches('!').to_string());
            rest = tail.trim();
        }
        let (opcode, operands) = rest.split_once(char::is_whitespace).unwrap_or((rest, ""));
        let base = opcode.split('.').next().unwrap_or_default();
        if !PTX_OPCODES.contains(&base) {
            report.error(line_no, opcode, "unknown opcode");
            continue;
        }
        if opcode.split('.').any(|p| !is_ident(p)) {
            report.error(line_no, opcode, "malformed opcode");
            continue;
        }
        instrs.push(Instr {
            line: line_no,
            guard,
            opcode: opcode.to_string(),
            operands: split_operands(operands),
        });
    }
    if depth != 0 {
        report.error(text.lines().count(), "{", "unbalanced braces");
    }

    for ins in &instrs {
        if let Some(g) = &ins.guard {
            check_operand(g, &decls, ins.line, report);
        }
        for op in &ins.operands {
            check_operand(op, &decls, ins.line, report);
            if ins.opcode.starts_with("bra") && is_ident(op) && !labels.contains_key(op.as_str()) {
                report.error(ins.line, op, "branch to undefined label");
            }
            if is_ident(op)
                && !ins.opcode.starts_with("bra")
                && !decls.symbols.contains(op.as_str())
            {
                report.error(ins.line, op, "undeclared symbol");
            }
        }
    }

    let multiplier = loop_multipliers(&instrs, &labels, report);

    let clocks: Vec<usize> = (0..instrs.len())
        .filter(|&i| instrs[i].is_clock_read())
        .collect();
    report.clock_reads = clocks.len();
    if clocks.is_empty() {
        report.error(0, "%clock", "no clock reads; a timed region needs two");
        return;
    }
    if clocks.len() % 2 == 1 {
        let last = &instrs[*clocks.last().unwrap()];
        report.error(last.line, &last.opcode, "unterminated timed region");
        return;
    }
    let mut inside = vec![false; instrs.len()];
    for pair in clocks.chunks(2) {
        let (s, e) = (pair[0], pair[1]);
        let mut region = TimedRegion {
            start_line: instrs[s].line,
            end_line: instrs[e].line,
            ..TimedRegion::default()
        };
        for idx in s + 1..e {
            inside[idx] = true;
            *region.counts.entry(instrs[idx].opcode.clone()).or_default() += multiplier[idx];
            region.total += multiplier[idx];
        }
        report.regions.push(region);
    }
    report.outside_count = (0..instrs.len())
        .filter(|&i| !inside[i] && !instrs[i].is_clock_read())
        .count() as u64;
}

fn parse_directive(code: &str, line: usize, decls: &mut Decls, report: &mut ValidationReport) {
    let head = code.split_whitespace().next().unwrap_or_default();
    match head {
        ".version" | ".target" | ".address_size" | ".visible" | ".entry" | ".func" | ".maxntid" => {
            let text = code.trim_end_matches(['(', ',', ' ']);
            if let Some(name) = text.split_whitespace().last() {
                decls.symbols.insert(name.to_string());
            }
        }
        ".param" => {
            let name = code
                .trim_end_matches([',', ';', ' '])
                .split_whitespace()
                .last()
                .unwrap_or_default();
            decls.symbols.insert(name.to_string());
        }
        ".reg" => {
            let Some(body) = code.strip_suffix(';') else {
                report.error(line, code, "missing ';'");
                return;
            };
            let mut words = body.split_whitespace();
            words.next();
            let Some(ty) = words.next().filter(|t| t.starts_with('.')) else {
                report.error(line, code, "register declaration needs a type");
                return;
            };
            let _ = ty;
            let names: String = words.collect::<Vec<_>>().join(" ");
            for name in names.split(',').map(str::trim) {
                if let Some((prefix, count)) = name.split_once('<') {
                    let n = count.trim_end_matches('>').parse::<u32>();
                    match (prefix.strip_prefix('%'), n) {
                        (Some(p), Ok(n)) => {
                            decls.ranges.insert(p.to_string(), n);
                        }
                        _ => report.error(line, name, "malformed register range"),
                    }
                } else if name.starts_with('%') {
                    decls.scalars.insert(name.to_string());
                } else {
                    report.error(line, name, "malformed register name");
                }
            }
        }
        ".shared" | ".global" | ".local" | ".const" => {
            let Some(body) = code.strip_suffix(';') else {
                report.error(line, code, "missing ';'");
                return;
            };
            let last = body.split_whitespace().last().unwrap_or_default();
            let name = last.split('[').next().unwrap_or_default();
            if is_ident(name) {
                decls.symbols.insert(name.to_string());
            } else {
                report.error(line, last, "malformed variable declaration");
            }
        }
        other => report.error(line, other, "unknown directive"),
    }
}

/// Execution count of each instruction, from the trip counts of backward
/// predicated branches.
fn loop_multipliers(
    instrs: &[Instr],
    labels: &BTreeMap<String, usize>,
    report: &mut ValidationReport,
) -> Vec<u64> {
    let mut mult = vec![1u64; instrs.len()];
    for (b, ins) in instrs.iter().enumerate() {
        if !ins.opcode.starts_with("bra") {
            continue;
        }
        let Some(target) = ins.operands.first().and_then(|t| labels.get(t.as_str())) else {
            continue;
        };
        let t = *target;
        if t > b {
            continue;
        }
        let Some(pred) = &ins.guard else {
            report.error(
                ins.line,
                &ins.opcode,
                "unconditional backward branch never terminates",
            );
            continue;
        };
        match trip_count(instrs, t, b, pred) {
            Some(trips) => {
                for m in &mut mult[t..=b] {
                    *m *= trips;
                }
            }
            None => report.error(ins.line, pred, "cannot resolve the loop trip count"),
        }
    }
    mult
}

fn imm_value(instrs: &[Instr], before: usize, operand: &str) -> Option<i64> {
    if let Some(v) = parse_int(operand) {
        return Some(v);
    }
    instrs[..before].iter().rev().find_map(|i| {
        (i.opcode.starts_with("mov.") && i.operands.first().map(String::as_str) == Some(operand))
            .then(|| i.operands.get(1).and_then(|v| parse_int(v)))
            .flatten()
    })
}

fn trip_count(instrs: &[Instr], start: usize, branch: usize, pred: &str) -> Option<u64> {
    let body = &instrs[start..branch];
    let setp = body.iter().rev().find(|i| {
        i.opcode.starts_with("setp.") && i.operands.first().map(String::as_str) == Some(pred)
    })?;
    let cmp = setp.opcode.split('.').nth(1)?;
    let counter = setp.operands.get(1)?;
    let bound = imm_value(instrs, start, setp.operands.get(2)?)?;
    let step = body.iter().find_map(|i| {
        let ops = &i.operands;
        (i.opcode.starts_with("add.") && ops.len() == 3 && &ops[0] == counter && &ops[1] == counter)
            .then(|| parse_int(&ops[2]))
            .flatten()
    })?;
    let init = imm_value(instrs, start, counter)?;
    if step <= 0 {
        return None;
    }
    let span = bound - init;
    let trips = match cmp {
        "lt" => (span + step - 1).div_euclid(step),
        "le" => span.div_euclid(step) + 1,
        "ne" if span % step == 0 => span / step,
        _ => return None,
    };
    Some(trips.max(1) as u64)
}

fn validate_cuda(text: &str, report: &mut ValidationReport) {
    let mut defines: HashMap<String, i64> = HashMap::new();
    // (line, multiplier-at-line, call name)
    let mut calls: Vec<(usize, u64, String)> = Vec::new();
    let mut clocks: Vec<(usize, usize)> = Vec::new(); // (line, call index at that point)
    let mut loop_stack: Vec<(i32, u64)> = Vec::new(); // (brace depth at open, trips)
    let mut depth = 0i32;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let code = match raw.find("//") {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if code.is_empty() {
            continue;
        }
        if let Some(def) = code.strip_prefix("#define") {
            let mut w = def.split_whitespace();
            if let (Some(name), Some(v)) = (w.next(), w.next()) {
                if let Ok(v) = v.parse() {
                    defines.insert(name.to_string(), v);
                }
            }
            continue;
        }
        if code.starts_with('#') || code.starts_with("using ") {
            continue;
        }
        if code.starts_with("for") {
            match cuda_trip_count(code, &defines) {
                Some(trips) => loop_stack.push((depth, trips)),
                None => report.error(line_no, code, "cannot resolve the loop trip count"),
            }
        }
        let mult: u64 = loop_stack.iter().map(|&(_, t)| t).product();
        if code.contains("clock64()") || code.contains("clock()") {
            clocks.push((line_no, calls.len()));
        }
        if let Some(pos) = code.find("wmma::") {
            let rest = &code[pos..];
            if let Some(paren) = rest.find('(') {
                let name = &rest[..paren];
                if !name.contains('<') {
                    calls.push((line_no, mult, name.to_string()));
                }
            }
        }
        for c in code.chars() {
            match c {
                '{' => depth += 1,
                '}' => {
                    depth -= 1;
                    while loop_stack.last().is_some_and(|&(d, _)| d >= depth) {
                        loop_stack.pop();
                    }
                }
                _ => {}
            }
        }
        if !code.ends_with(';')
            && !code.ends_with('{')
            && !code.ends_with('}')
            && !code.ends_with(',')
            && !code.ends_with(')')
        {
            report.error(line_no, code, "missing ';'");
        }
    }
    if depth != 0 {
        report.error(text.lines().count(), "{", "unbalanced braces");
    }
    report.clock_reads = clocks.len();
    if clocks.is_empty() {
        report.error(0, "clock", "no clock reads; a timed region needs two");
        return;
    }
    if clocks.len() % 2 == 1 {
        report.error(
            clocks.last().unwrap().0,
            "clock",
            "unterminated timed region",
        );
        return;
    }
    let mut inside = vec![false; calls.len()];
    for pair in clocks.chunks(2) {
        let ((sl, si), (el, ei)) = (pair[0], pair[1]);
        let mut region = TimedRegion {
            start_line: sl,
            end_line: el,
            ..TimedRegion::default()
        };
        for (idx, (_, mult, name)) in calls.iter().enumerate().take(ei).skip(si) {
            inside[idx] = true;
            *region.counts.entry(name.clone()).or_default() += mult;
            region.total += mult;
        }
        report.regions.push(region);
    }
    report.outside_count = inside.iter().filter(|&&b| !b).count() as u64;
}

fn cuda_trip_count(code: &str, defines: &HashMap<String, i64>) -> Option<u64> {
    let inner = code.split_once('(')?.1.rsplit_once(')')?.0;
    let parts: Vec<&str> = inner.split(';').map(str::trim).collect();
    if parts.len() != 3 {
        return None;
    }
    let init: i64 = parts[0].rsplit_once('=')?.1.trim().parse().ok()?;
    let (_, bound) = parts[1].split_once('<')?;
    let value = |tok: &str| -> Option<i64> {
        let tok = tok.trim();
        tok.parse().ok().or_else(|| defines.get(tok).copied())
    };
    let mut product = 1i64;
    for factor in bound.split('*') {
        product *= value(factor)?;
    }
    if !parts[2].ends_with("++") {
        return None;
    }
    Some((product - init).max(0) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_second_clock_read() {
        let text = ".version 7.0\n.target sm_80\n.address_size 64\n.visible .entry k()\n{\n\tmov.u64 %rd1, %clock64;\n\tadd.u32 %r1, %r2, %r3;\n\tret;\n}\n";
        let r = validate_ptx(text);
        assert!(!r.is_valid());
        assert!(r
            .errors
            .iter()
            .any(|e| e.message == "unterminated timed region"));
    }

    #[test]
    fn reports_line_and_token() {
        let text =
            "{\n\tmov.u64 %rd1, %clock64;\n\tfrob.u32 %r1, %r2;\n\tmov.u64 %rd2, %clock64;\n}\n";
        let r = validate_ptx(text);
        let e = &r.errors[0];
        assert_eq!((e.line, e.token.as_str()), (3, "frob.u32"));
    }

    #[test]
    fn resolves_counted_loops() {
        let text = "{\n\tmov.u64 %rd1, 0;\n\tmov.u64 %rd9, %clock64;\n$L:\n\tadd.u64 %rd2, %rd2, 1;\n\tadd.u64 %rd1, %rd1, 2;\n\tsetp.lt.u64 %p1, %rd1, 10;\n\t@%p1 bra $L;\n\tmov.u64 %rd8, %clock64;\n}\n";
        let r = validate_ptx(text);
        assert!(r.is_valid(), "{:?}", r.errors);
        assert_eq!(r.regions[0].counts["add.u64"], 10);
        assert_eq!(r.regions[0].counts["bra"], 5);
    }
}
