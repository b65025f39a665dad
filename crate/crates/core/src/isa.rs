//! Instruction, memory and tensor-core data model shared by every stage of
//! the pipeline.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cycles::{CycleRange, Cycles};

/// Default number of instructions placed in an ALU timed region.
pub const DEFAULT_COUNT: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IsaError {
    #[error("malformed signature '{text}': {reason} (at '{token}')")]
    Signature {
        text: String,
        token: String,
        reason: String,
    },
    #[error("unknown data type '{0}'")]
    UnknownType(String),
    #[error("malformed SASS expansion '{text}': {reason}")]
    Expansion { text: String, reason: String },
    #[error("unsupported tensor-core combination {0}")]
    UnsupportedTensorOp(String),
    #[error("duplicate record '{0}'")]
    DuplicateRecord(String),
}

macro_rules! data_types {
    ($($variant:ident => $name:literal, $bits:literal;)*) => {
        /// PTX scalar data type of an instruction or tensor-core operand.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum DataType {
            $($variant,)*
        }

        impl DataType {
            pub const ALL: &'static [DataType] = &[$(DataType::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $(DataType::$variant => $name,)*
                }
            }

            /// Bit width; tf32 occupies a full 32-bit register.
            pub fn bits(self) -> u32 {
                match self {
                    $(DataType::$variant => $bits,)*
                }
            }
        }

        impl FromStr for DataType {
            type Err = IsaError;
            fn from_str(s: &str) -> Result<Self, IsaError> {
                match s {
                    $($name => Ok(DataType::$variant),)*
                    other => Err(IsaError::UnknownType(other.to_string())),
                }
            }
        }
    };
}

data_types! {
    U16 => "u16", 16;
    U32 => "u32", 32;
    U64 => "u64", 64;
    S16 => "s16", 16;
    S32 => "s32", 32;
    S64 => "s64", 64;
    F16 => "f16", 16;
    Bf16 => "bf16", 16;
    Tf32 => "tf32", 32;
    F32 => "f32", 32;
    F64 => "f64", 64;
    B16 => "b16", 16;
    B32 => "b32", 32;
    B64 => "b64", 64;
    U8 => "u8", 8;
    U4 => "u4", 4;
    Pred => "pred", 1;
}

impl DataType {
    /// Total order by bit width; ties keep declaration order.
    pub fn cmp_width(&self, other: &DataType) -> Ordering {
        self.bits().cmp(&other.bits()).then(self.cmp(other))
    }

    pub fn is_float(self) -> bool {
        matches!(
            self,
            DataType::F16 | DataType::Bf16 | DataType::Tf32 | DataType::F32 | DataType::F64
        )
    }

    pub fn is_signed(self) -> bool {
        matches!(self, DataType::S16 | DataType::S32 | DataType::S64)
    }

    /// Type of twice the width, used by `.wide` forms.
    pub fn widened(self) -> Option<DataType> {
        Some(match self {
            DataType::U16 => DataType::U32,
            DataType::U32 => DataType::U64,
            DataType::S16 => DataType::S32,
            DataType::S32 => DataType::S64,
            DataType::B16 => DataType::B32,
            DataType::B32 => DataType::B64,
            _ => return None,
        })
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Dependency {
    #[default]
    Independent,
    Dependent,
}

/// A PTX instruction under test.
///
/// The textual form is `opcode[.modifier]*.dtype`, optionally followed by
/// `:dep` / `:indep` and `:xN` (instruction count). Independent and a count
/// of 3 are the defaults and are omitted when printing.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct InstructionSpec {
    pub opcode: String,
    pub modifiers: Vec<String>,
    pub dtype: DataType,
    pub dependency: Dependency,
    pub count: u32,
}

impl InstructionSpec {
    pub fn new(opcode: &str, modifiers: &[&str], dtype: DataType) -> Self {
        InstructionSpec {
            opcode: opcode.to_string(),
            modifiers: modifiers.iter().map(|m| m.to_string()).collect(),
            dtype,
            dependency: Dependency::Independent,
            count: DEFAULT_COUNT,
        }
    }

    pub fn with_dependency(mut self, dependency: Dependency) -> Self {
        self.dependency = dependency;
        self
    }

    pub fn with_count(mut self, count: u32) -> Self {
        self.count = count;
        self
    }

    /// Dotted PTX name, e.g. `mad.lo.u32`.
    pub fn signature(&self) -> String {
        let mut s = self.opcode.clone();
        for m in &self.modifiers {
            s.push('.');
            s.push_str(m);
        }
        s.push('.');
        s.push_str(self.dtype.name());
        s
    }

    /// Latency-table key: the signature, tagged `:dep` for dependent chains.
    pub fn key(&self) -> String {
        match self.dependency {
            Dependency::Independent => self.signature(),
            Dependency::Dependent => format!("{}:dep", self.signature()),
        }
    }

    pub fn has_modifier(&self, m: &str) -> bool {
        self.modifiers.iter().any(|x| x == m)
    }
}

impl fmt::Display for InstructionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())?;
        if self.count != DEFAULT_COUNT {
            write!(f, ":x{}", self.count)?;
        }
        Ok(())
    }
}

fn is_name_token(t: &str) -> bool {
    !t.is_empty()
        && t.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Parses the textual form of an [`InstructionSpec`].
pub fn parse_signature(text: &str) -> Result<InstructionSpec, IsaError> {
    let fail = |token: &str, reason: &str| IsaError::Signature {
        text: text.to_string(),
        token: token.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = text.trim();
    let mut parts = trimmed.split(':');
    let dotted = parts.next().unwrap_or_default();

    let mut dependency = Dependency::Independent;
    let mut count = DEFAULT_COUNT;
    for suffix in parts {
        match suffix {
            "dep" => dependency = Dependency::Dependent,
            "indep" => dependency = Dependency::Independent,
            s if s.starts_with('x') => {
                count = s[1..]
                    .parse()
                    .map_err(|_| fail(s, "instruction count must be an integer"))?;
                if count == 0 {
                    return Err(fail(s, "instruction count must be at least 1"));
                }
            }
            s => return Err(fail(s, "unknown suffix")),
        }
    }

    let tokens: Vec<&str> = dotted.split('.').collect();
    if tokens.len() < 2 {
        return Err(fail(dotted, "expected opcode and data type"));
    }
    let opcode = tokens[0];
    if !is_name_token(opcode) || !opcode.starts_with(|c: char| c.is_ascii_lowercase()) {
        return Err(fail(opcode, "invalid opcode"));
    }
    let dtype_tok = tokens[tokens.len() - 1];
    let dtype: DataType = dtype_tok
        .parse()
        .map_err(|_| fail(dtype_tok, "unknown data type"))?;
    let mut modifiers = Vec::new();
    for m in &tokens[1..tokens.len() - 1] {
        if !is_name_token(m) {
            return Err(fail(m, "invalid modifier"));
        }
        modifiers.push(m.to_string());
    }
    Ok(InstructionSpec {
        opcode: opcode.to_string(),
        modifiers,
        dtype,
        dependency,
        count,
    })
}

impl FromStr for InstructionSpec {
    type Err = IsaError;
    fn from_str(s: &str) -> Result<Self, IsaError> {
        parse_signature(s)
    }
}

impl Serialize for InstructionSpec {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for InstructionSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        parse_signature(&s).map_err(serde::de::Error::custom)
    }
}

/// PTX load cache operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheOp {
    /// Bypass every cache level.
    Cv,
    /// Cache in L2 only.
    Cg,
    /// Cache in L1 and L2.
    Ca,
}

impl CacheOp {
    pub fn name(self) -> &'static str {
        match self {
            CacheOp::Cv => "cv",
            CacheOp::Cg => "cg",
            CacheOp::Ca => "ca",
        }
    }
}

impl fmt::Display for CacheOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CacheOp {
    type Err = IsaError;
    fn from_str(s: &str) -> Result<Self, IsaError> {
        match s {
            "cv" => Ok(CacheOp::Cv),
            "cg" => Ok(CacheOp::Cg),
            "ca" => Ok(CacheOp::Ca),
            other => Err(IsaError::UnknownType(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryLevel {
    Global,
    L2,
    L1,
    SharedLoad,
    SharedStore,
}

impl MemoryLevel {
    pub const ALL: [MemoryLevel; 5] = [
        MemoryLevel::Global,
        MemoryLevel::L2,
        MemoryLevel::L1,
        MemoryLevel::SharedLoad,
        MemoryLevel::SharedStore,
    ];

    /// Load cache operator used to target this level; shared memory has none.
    pub fn cache_op(self) -> Option<CacheOp> {
        match self {
            MemoryLevel::Global => Some(CacheOp::Cv),
            MemoryLevel::L2 => Some(CacheOp::Cg),
            MemoryLevel::L1 => Some(CacheOp::Ca),
            MemoryLevel::SharedLoad | MemoryLevel::SharedStore => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MemoryLevel::Global => "global",
            MemoryLevel::L2 => "l2",
            MemoryLevel::L1 => "l1",
            MemoryLevel::SharedLoad => "shared_load",
            MemoryLevel::SharedStore => "shared_store",
        }
    }

    /// Distance from the core: 0 for shared memory, 3 for DRAM.
    pub fn depth(self) -> u8 {
        match self {
            MemoryLevel::SharedLoad | MemoryLevel::SharedStore => 0,
            MemoryLevel::L1 => 1,
            MemoryLevel::L2 => 2,
            MemoryLevel::Global => 3,
        }
    }
}

impl fmt::Display for MemoryLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemoryLevel {
    type Err = IsaError;
    fn from_str(s: &str) -> Result<Self, IsaError> {
        MemoryLevel::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| IsaError::UnknownType(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Row,
    Col,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Row => "row",
            Layout::Col => "col",
        }
    }
}

impl FromStr for Layout {
    type Err = IsaError;
    fn from_str(s: &str) -> Result<Self, IsaError> {
        match s {
            "row" => Ok(Layout::Row),
            "col" => Ok(Layout::Col),
            other => Err(IsaError::UnknownType(other.to_string())),
        }
    }
}

/// WMMA tile shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub m: u32,
    pub n: u32,
    pub k: u32,
}

impl Shape {
    pub const fn new(m: u32, n: u32, k: u32) -> Self {
        Shape { m, n, k }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}n{}k{}", self.m, self.n, self.k)
    }
}

impl FromStr for Shape {
    type Err = IsaError;
    fn from_str(s: &str) -> Result<Self, IsaError> {
        let bad = || IsaError::UnknownType(s.to_string());
        let rest = s.strip_prefix('m').ok_or_else(bad)?;
        let (m, rest) = rest.split_once('n').ok_or_else(bad)?;
        let (n, k) = rest.split_once('k').ok_or_else(bad)?;
        Ok(Shape {
            m: m.parse().map_err(|_| bad())?,
            n: n.parse().map_err(|_| bad())?,
            k: k.parse().map_err(|_| bad())?,
        })
    }
}

const HALF_SHAPES: &[Shape] = &[
    Shape::new(16, 16, 16),
    Shape::new(8, 32, 16),
    Shape::new(32, 8, 16),
];
const TF32_SHAPES: &[Shape] = &[Shape::new(16, 16, 8)];
const F64_SHAPES: &[Shape] = &[Shape::new(8, 8, 4)];
const U4_SHAPES: &[Shape] = &[Shape::new(8, 8, 32)];

/// WMMA shapes available for an input/accumulator pair.
pub fn supported_shapes(in_type: DataType, acc_type: DataType) -> &'static [Shape] {
    use DataType::*;
    match (in_type, acc_type) {
        (F16, F16) | (F16, F32) | (Bf16, F32) | (U8, U32) => HALF_SHAPES,
        (Tf32, F32) => TF32_SHAPES,
        (F64, F64) => F64_SHAPES,
        (U4, U32) => U4_SHAPES,
        _ => &[],
    }
}

/// Every supported (input, accumulator) pair.
pub const TENSOR_TYPE_PAIRS: &[(DataType, DataType)] = &[
    (DataType::F16, DataType::F16),
    (DataType::F16, DataType::F32),
    (DataType::Bf16, DataType::F32),
    (DataType::Tf32, DataType::F32),
    (DataType::F64, DataType::F64),
    (DataType::U8, DataType::U32),
    (DataType::U4, DataType::U32),
];

/// Human-readable list of supported shape/type combinations.
pub fn supported_tensor_combinations() -> String {
    TENSOR_TYPE_PAIRS
        .iter()
        .map(|&(i, a)| {
            let shapes: Vec<String> = supported_shapes(i, a)
                .iter()
                .map(|s| s.to_string())
                .collect();
            format!("{}/{}: {}", i, a, shapes.join(", "))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Reported throughput for a tensor-core operation, in GB/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputFigures {
    pub measured_gbps: f64,
    pub theoretical_gbps: f64,
}

/// A WMMA operation together with its SASS expansion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorCoreOp {
    pub shape: Shape,
    pub in_type: DataType,
    pub acc_type: DataType,
    pub layout_a: Layout,
    pub layout_b: Layout,
    pub layout_c: Layout,
    pub sass_opcode: String,
    pub sass_count: u32,
    pub per_sass_cycles: u32,
    pub iters: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub throughput: Option<ThroughputFigures>,
}

impl TensorCoreOp {
    /// Cycles per PTX-level mma instruction.
    pub fn total_cycles(&self) -> u32 {
        self.sass_count * self.per_sass_cycles
    }

    /// Latency-table key, `<in>.<acc>`.
    pub fn key(&self) -> String {
        tensor_key(self.in_type, self.acc_type)
    }

    pub fn is_supported(&self) -> bool {
        supported_shapes(self.in_type, self.acc_type).contains(&self.shape)
    }

    /// Error unless the shape belongs to the type pair.
    pub fn check_supported(&self) -> Result<(), IsaError> {
        if self.is_supported() {
            Ok(())
        } else {
            Err(IsaError::UnsupportedTensorOp(format!(
                "{} {}/{}; supported: {}",
                self.shape,
                self.in_type,
                self.acc_type,
                supported_tensor_combinations()
            )))
        }
    }

    /// Type suffix of the PTX `wmma.mma.sync` instruction.
    pub fn ptx_type_suffix(&self) -> String {
        use DataType::*;
        match (self.in_type, self.acc_type) {
            (F16, F16) => "f16.f16".into(),
            (F16, F32) => "f16.f32".into(),
            (Bf16, F32) => "f32.bf16.bf16.f32".into(),
            (Tf32, F32) => "f32.tf32.tf32.f32".into(),
            (F64, F64) => "f64.f64.f64.f64.rn".into(),
            (U8, U32) => "s32.u8.u8.s32".into(),
            (U4, U32) => "s32.u4.u4.s32".into(),
            (i, a) => format!("{a}.{i}.{i}.{a}"),
        }
    }

    /// Full PTX mma instruction name.
    pub fn ptx_mma_name(&self) -> String {
        format!(
            "wmma.mma.sync.aligned.{}.{}.{}.{}",
            self.layout_a.name(),
            self.layout_b.name(),
            self.shape,
            self.ptx_type_suffix()
        )
    }

    pub fn sass_expansion(&self) -> String {
        format!("{}*{}", self.sass_count, self.sass_opcode)
    }
}

pub fn tensor_key(in_type: DataType, acc_type: DataType) -> String {
    format!("{in_type}.{acc_type}")
}

/// Raw clock readings bracketing a timed region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyMeasurement {
    pub start_clock: u64,
    pub end_clock: u64,
    pub instruction_count: u64,
    pub clock_overhead: u64,
}

impl LatencyMeasurement {
    pub fn delta(&self) -> Option<u64> {
        self.end_clock.checked_sub(self.start_clock)
    }
}

/// One SASS opcode and how many times it appears per PTX instruction.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SassTerm {
    pub opcode: String,
    pub count: u32,
}

impl SassTerm {
    pub fn new(opcode: &str, count: u32) -> Self {
        SassTerm {
            opcode: opcode.to_string(),
            count,
        }
    }
}

/// Expected PTX to SASS expansion.
///
/// Text form: terms joined by `+`, each optionally prefixed by `N*`;
/// alternative expansions separated by ` | `. Opaque multi-instruction
/// sequences are written `[multi]` or `[multi OPCODE]` when one member of
/// the sequence is known.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SassMapping {
    pub ptx_signature: String,
    pub expansion: Vec<SassTerm>,
    pub alternatives: Vec<Vec<SassTerm>>,
    pub multi_instruction: bool,
    pub hint: Option<String>,
}

fn valid_sass_opcode(op: &str) -> bool {
    op.starts_with(|c: char| c.is_ascii_alphabetic())
        && op
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_')
}

fn parse_terms(text: &str, expr: &str) -> Result<Vec<SassTerm>, IsaError> {
    let fail = |reason: String| IsaError::Expansion {
        text: text.to_string(),
        reason,
    };
    let mut terms: Vec<SassTerm> = Vec::new();
    for raw in expr.split('+') {
        let raw = raw.trim();
        let (count, op) = match raw.split_once('*') {
            Some((n, op)) => {
                let n: u32 = n
                    .trim()
                    .parse()
                    .map_err(|_| fail(format!("bad multiplicity in '{raw}'")))?;
                (n, op.trim())
            }
            None => (1, raw),
        };
        if count == 0 {
            return Err(fail(format!("zero multiplicity in '{raw}'")));
        }
        if !valid_sass_opcode(op) {
            return Err(fail(format!("bad opcode '{op}'")));
        }
        match terms.iter_mut().find(|t| t.opcode == op) {
            Some(t) => t.count += count,
            None => terms.push(SassTerm::new(op, count)),
        }
    }
    Ok(terms)
}

fn format_terms(terms: &[SassTerm]) -> String {
    terms
        .iter()
        .map(|t| {
            if t.count == 1 {
                t.opcode.clone()
            } else {
                format!("{}*{}", t.count, t.opcode)
            }
        })
        .collect::<Vec<_>>()
        .join("+")
}

impl SassMapping {
    pub fn parse(ptx_signature: &str, text: &str) -> Result<SassMapping, IsaError> {
        let t = text.trim();
        if let Some(inner) = t.strip_prefix("[multi").and_then(|r| r.strip_suffix(']')) {
            let hint = inner.trim();
            if !hint.is_empty() && !valid_sass_opcode(hint) {
                return Err(IsaError::Expansion {
                    text: text.to_string(),
                    reason: format!("bad hint opcode '{hint}'"),
                });
            }
            return Ok(SassMapping::opaque(
                ptx_signature,
                (!hint.is_empty()).then_some(hint),
            ));
        }
        let mut alts = t.split(" | ");
        let expansion = parse_terms(text, alts.next().unwrap_or_default())?;
        let alternatives = alts
            .map(|a| parse_terms(text, a))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SassMapping {
            ptx_signature: ptx_signature.to_string(),
            expansion,
            alternatives,
            multi_instruction: false,
            hint: None,
        })
    }

    pub fn opaque(ptx_signature: &str, hint: Option<&str>) -> SassMapping {
        SassMapping {
            ptx_signature: ptx_signature.to_string(),
            expansion: Vec::new(),
            alternatives: Vec::new(),
            multi_instruction: true,
            hint: hint.map(str::to_string),
        }
    }

    /// Primary expansion followed by the alternatives.
    pub fn candidates(&self) -> impl Iterator<Item = &Vec<SassTerm>> {
        std::iter::once(&self.expansion).chain(self.alternatives.iter())
    }

    /// SASS instructions per PTX instruction in the primary expansion. An
    /// opaque entry counts its hint opcode only.
    pub fn total_multiplicity(&self) -> u32 {
        if self.multi_instruction {
            u32::from(self.hint.is_some())
        } else {
            self.expansion.iter().map(|t| t.count).sum()
        }
    }

    pub fn expression(&self) -> String {
        if self.multi_instruction {
            return match &self.hint {
                Some(h) => format!("[multi {h}]"),
                None => "[multi]".to_string(),
            };
        }
        self.candidates()
            .map(|c| format_terms(c))
            .collect::<Vec<_>>()
            .join(" | ")
    }

    pub fn is_valid(&self) -> bool {
        self.multi_instruction || !self.expansion.is_empty()
    }

    /// Same opcodes and multiplicities, ignoring the signature label.
    pub fn same_expansion(&self, other: &SassMapping) -> bool {
        self.expansion == other.expansion
            && self.alternatives == other.alternatives
            && self.multi_instruction == other.multi_instruction
            && self.hint == other.hint
    }
}

impl fmt::Display for SassMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.expression())
    }
}

#[derive(Serialize, Deserialize)]
struct MappingRepr {
    ptx: String,
    sass: String,
}

impl Serialize for SassMapping {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MappingRepr {
            ptx: self.ptx_signature.clone(),
            sass: self.expression(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SassMapping {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = MappingRepr::deserialize(d)?;
        SassMapping::parse(&repr.ptx, &repr.sass).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordSource {
    Measured,
    PaperSeed,
}

pub type Extra = BTreeMap<String, serde_json::Value>;

/// A latency result for one instruction signature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub spec: InstructionSpec,
    pub mapping: SassMapping,
    pub cycles: CycleRange,
    pub source: RecordSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(flatten)]
    pub extra: Extra,
}

impl LatencyRecord {
    pub fn key(&self) -> String {
        self.spec.key()
    }
}

/// CPI observed for an `N`-instruction timed region (cold-start curve).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaunchPoint {
    pub count: u32,
    pub cpi: Cycles,
}

/// The latency database for one architecture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub architecture: String,
    #[serde(with = "records_as_list")]
    pub records: BTreeMap<String, LatencyRecord>,
    pub memory: BTreeMap<MemoryLevel, CycleRange>,
    pub tensor_ops: Vec<TensorCoreOp>,
    pub clock_overhead: Cycles,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier_penalty: Option<Cycles>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub launch_curve: Vec<LaunchPoint>,
    #[serde(flatten)]
    pub extra: Extra,
}

mod records_as_list {
    use super::*;

    pub fn serialize<S: Serializer>(
        records: &BTreeMap<String, LatencyRecord>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(records.values())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<String, LatencyRecord>, D::Error> {
        let list = Vec::<LatencyRecord>::deserialize(d)?;
        let mut map = BTreeMap::new();
        for r in list {
            let key = r.key();
            if map.insert(key.clone(), r).is_some() {
                return Err(serde::de::Error::custom(format!(
                    "duplicate record '{key}'"
                )));
            }
        }
        Ok(map)
    }
}

impl LatencyTable {
    pub fn empty(architecture: &str) -> Self {
        LatencyTable {
            architecture: architecture.to_string(),
            records: BTreeMap::new(),
            memory: BTreeMap::new(),
            tensor_ops: Vec::new(),
            clock_overhead: Cycles::ZERO,
            barrier_penalty: None,
            launch_curve: Vec::new(),
            extra: Extra::new(),
        }
    }

    pub fn insert(&mut self, record: LatencyRecord) -> Result<(), IsaError> {
        let key = record.key();
        if self.records.contains_key(&key) {
            return Err(IsaError::DuplicateRecord(key));
        }
        self.records.insert(key, record);
        Ok(())
    }

    pub fn record(&self, key: &str) -> Option<&LatencyRecord> {
        self.records.get(key)
    }

    pub fn memory_latency(&self, level: MemoryLevel) -> Option<CycleRange> {
        self.memory.get(&level).copied()
    }

    pub fn tensor_op(&self, in_type: DataType, acc_type: DataType) -> Option<&TensorCoreOp> {
        self.tensor_ops
            .iter()
            .find(|op| op.in_type == in_type && op.acc_type == acc_type)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty() && self.memory.is_empty() && self.tensor_ops.is_empty()
    }

    /// Invariant violations, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (key, r) in &self.records {
            if *key != r.key() {
                out.push(format!("record stored under '{key}' has key '{}'", r.key()));
            }
            if !r.cycles.is_valid() {
                out.push(format!(
                    "record '{key}': cycles_min {} exceeds cycles_max {} or is negative",
                    r.cycles.min, r.cycles.max
                ));
            }
            if !r.mapping.is_valid() {
                out.push(format!("record '{key}': empty SASS expansion"));
            }
        }
        for (level, c) in &self.memory {
            if !c.is_valid() {
                out.push(format!("memory '{level}': invalid range {c}"));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for op in &self.tensor_ops {
            if !seen.insert(op.key()) {
                out.push(format!("duplicate tensor op '{}'", op.key()));
            }
            if op.sass_count == 0 || op.per_sass_cycles == 0 || op.iters == 0 {
                out.push(format!("tensor op '{}': zero count", op.key()));
            }
            if !op.is_supported() {
                out.push(format!(
                    "tensor op '{}': unsupported shape {}",
                    op.key(),
                    op.shape
                ));
            }
        }
        if self.clock_overhead.is_negative() {
            out.push("negative clock overhead".into());
        }
        out
    }
}
