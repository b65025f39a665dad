//! Small PTX text builder shared by the kernel generators.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::isa::DataType;

use super::ClockWidth;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum RegClass {
    Pred,
    B16,
    B32,
    F32,
    B64,
    F64,
}

impl RegClass {
    pub(crate) fn of(dtype: DataType) -> Option<RegClass> {
        use DataType::*;
        Some(match dtype {
            Pred => RegClass::Pred,
            U16 | S16 | B16 | F16 | Bf16 => RegClass::B16,
            U32 | S32 | B32 | Tf32 => RegClass::B32,
            F32 => RegClass::F32,
            U64 | S64 | B64 => RegClass::B64,
            F64 => RegClass::F64,
            U8 | U4 => return None,
        })
    }

    fn prefix(self) -> &'static str {
        match self {
            RegClass::Pred => "p",
            RegClass::B16 => "rs",
            RegClass::B32 => "r",
            RegClass::F32 => "f",
            RegClass::B64 => "rd",
            RegClass::F64 => "fd",
        }
    }

    fn decl_type(self) -> &'static str {
        match self {
            RegClass::Pred => ".pred",
            RegClass::B16 => ".b16",
            RegClass::B32 => ".b32",
            RegClass::F32 => ".f32",
            RegClass::B64 => ".b64",
            RegClass::F64 => ".f64",
        }
    }

    /// Type suffix for `mov` and `st.global` of a register of this class.
    pub(crate) fn move_type(self) -> &'static str {
        match self {
            RegClass::Pred => "pred",
            RegClass::B16 => "b16",
            RegClass::B32 => "b32",
            RegClass::F32 => "f32",
            RegClass::B64 => "b64",
            RegClass::F64 => "f64",
        }
    }
}

/// Accumulates a kernel body while numbering registers per class from 1.
pub(crate) struct KernelBuilder {
    name: String,
    params: Vec<String>,
    next: BTreeMap<RegClass, u32>,
    body: Vec<String>,
    module_decls: Vec<String>,
    header: Vec<(String, String)>,
}

impl KernelBuilder {
    pub(crate) fn new(name: &str) -> Self {
        KernelBuilder {
            name: sanitize(name),
            params: Vec::new(),
            next: BTreeMap::new(),
            body: Vec::new(),
            module_decls: Vec::new(),
            header: Vec::new(),
        }
    }

    pub(crate) fn header(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub(crate) fn param(&mut self) -> String {
        let p = format!("{}_param_{}", self.name, self.params.len());
        self.params.push(p.clone());
        p
    }

    pub(crate) fn module_decl(&mut self, line: &str) {
        self.module_decls.push(line.to_string());
    }

    pub(crate) fn reg(&mut self, class: RegClass) -> String {
        let n = self.next.entry(class).or_insert(1);
        let r = format!("%{}{}", class.prefix(), n);
        *n += 1;
        r
    }

    pub(crate) fn ins(&mut self, opcode: &str, operands: &[&str]) {
        let mut line = format!("\t{opcode}");
        if !operands.is_empty() {
            let pad = 24usize.saturating_sub(opcode.len()).max(1);
            line.push_str(&" ".repeat(pad));
            line.push_str(&operands.join(", "));
        }
        line.push(';');
        self.body.push(line);
    }

    pub(crate) fn guarded(&mut self, pred: &str, opcode: &str, operands: &[&str]) {
        self.body
            .push(format!("\t@{pred} {opcode} {};", operands.join(", ")));
    }

    pub(crate) fn label(&mut self, name: &str) {
        self.body.push(format!("{name}:"));
    }

    pub(crate) fn blank(&mut self) {
        self.body.push(String::new());
    }

    pub(crate) fn comment(&mut self, text: &str) {
        self.body.push(format!("\t// {text}"));
    }

    /// Loads a pointer parameter and converts it to a global address.
    pub(crate) fn global_pointer(&mut self, param: &str) -> String {
        let raw = self.reg(RegClass::B64);
        let ptr = self.reg(RegClass::B64);
        self.ins("ld.param.u64", &[&raw, &format!("[{param}]")]);
        self.ins("cvta.to.global.u64", &[&ptr, &raw]);
        ptr
    }

    /// Emits one clock read and returns the destination register.
    pub(crate) fn clock(&mut self, width: ClockWidth) -> String {
        match width {
            ClockWidth::Bits64 => {
                let r = self.reg(RegClass::B64);
                self.ins("mov.u64", &[&r, "%clock64"]);
                r
            }
            ClockWidth::Bits32 => {
                let r = self.reg(RegClass::B32);
                self.ins("mov.u32", &[&r, "%clock"]);
                r
            }
        }
    }

    /// Subtracts two clock readings and stores the delta at `[out]`.
    pub(crate) fn store_delta(&mut self, width: ClockWidth, out: &str, start: &str, end: &str) {
        match width {
            ClockWidth::Bits64 => {
                let d = self.reg(RegClass::B64);
                self.ins("sub.s64", &[&d, end, start]);
                self.ins("st.global.u64", &[&format!("[{out}]"), &d]);
            }
            ClockWidth::Bits32 => {
                let d = self.reg(RegClass::B32);
                self.ins("sub.s32", &[&d, end, start]);
                self.ins("st.global.u32", &[&format!("[{out}]"), &d]);
            }
        }
    }

    /// Stores a register of any class at `[out+offset]`, widening predicates.
    pub(crate) fn store_value(&mut self, out: &str, offset: u64, reg: &str, class: RegClass) {
        let addr = if offset == 0 {
            format!("[{out}]")
        } else {
            format!("[{out}+{offset}]")
        };
        if class == RegClass::Pred {
            let r = self.reg(RegClass::B32);
            self.ins("selp.u32", &[&r, "1", "0", reg]);
            self.ins("st.global.u32", &[&addr, &r]);
        } else {
            self.ins(&format!("st.global.{}", class.move_type()), &[&addr, reg]);
        }
    }

    pub(crate) fn finish(self) -> String {
        let mut s = String::new();
        for (k, v) in &self.header {
            let _ = writeln!(s, "// {k}: {v}");
        }
        s.push('\n');
        s.push_str(".version 7.0\n.target sm_80\n.address_size 64\n\n");
        for d in &self.module_decls {
            let _ = writeln!(s, "{d}");
        }
        if !self.module_decls.is_empty() {
            s.push('\n');
        }
        let _ = writeln!(s, ".visible .entry {}(", self.name);
        for (i, p) in self.params.iter().enumerate() {
            let comma = if i + 1 < self.params.len() { "," } else { "" };
            let _ = writeln!(s, "\t.param .u64 {p}{comma}");
        }
        s.push_str(")\n{\n");
        for (class, next) in &self.next {
            let _ = writeln!(
                s,
                "\t.reg {} \t%{}<{}>;",
                class.decl_type(),
                class.prefix(),
                next
            );
        }
        s.push('\n');
        for line in &self.body {
            s.push_str(line);
            s.push('\n');
        }
        s.push_str("\tret;\n}\n");
        s
    }
}

/// PTX identifier derived from a benchmark id.
pub(crate) fn sanitize(name: &str) -> String {
    let mut out: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if out.starts_with(|c: char| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    out
}
