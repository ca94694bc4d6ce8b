//! Structured optimisation problems: the formulation block grammar, its
//! canonical serialisation, and kind-level diffs between candidates.
//!
//! A block looks like
//!
//! ```text
//! BEGIN_FORMULATION
//! VAR rho : real[0,1] [indexed(K)] "power-splitting ratios"
//! MAX EE := (sum_k R_k) / (P_tx / xi + P_c)
//! S.T. split[ps_ratio_range] (k in K) : 0 <= rho_k <= 1
//! END_FORMULATION
//! ```
//!
//! One record per line, `#` starts a comment outside quoted text, and
//! expressions are kept verbatim.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BEGIN_MARKER: &str = "BEGIN_FORMULATION";
pub const END_MARKER: &str = "END_FORMULATION";

pub const GROUND_TRUTH: &str = include_str!("../fixtures/ground_truth.form");
pub const MANUAL_FLAWED: &str = include_str!("../fixtures/manual_flawed.form");
pub const MINIMAL: &str = include_str!("../fixtures/minimal.form");

/// Ordered set of constraint kinds a formulation may use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCatalog {
    kinds: Vec<String>,
}

impl Default for KindCatalog {
    fn default() -> Self {
        Self {
            kinds: [
                "power_budget",
                "qos_rate",
                "energy_harvest",
                "rsma_common_rate",
                "unit_modulus",
                "ps_ratio_range",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
        }
    }
}

impl KindCatalog {
    pub fn kinds(&self) -> &[String] {
        &self.kinds
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.kinds.iter().any(|k| k == kind)
    }

    pub fn position(&self, kind: &str) -> Option<usize> {
        self.kinds.iter().position(|k| k == kind)
    }

    /// Adds a kind at the end of the catalog order; returns false if it was
    /// already present.
    pub fn register(&mut self, kind: impl Into<String>) -> bool {
        let kind = kind.into();
        if self.contains(&kind) {
            return false;
        }
        self.kinds.push(kind);
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Domain {
    Complex,
    RealIn { lo: f64, hi: f64 },
    RealNonneg,
    Angle,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Complex => f.write_str("complex"),
            Domain::RealIn { lo, hi } => write!(f, "real[{lo},{hi}]"),
            Domain::RealNonneg => f.write_str("nonneg"),
            Domain::Angle => f.write_str("angle"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "arg", rename_all = "snake_case")]
pub enum Shape {
    Scalar,
    Vector(usize),
    IndexedBy(String),
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Scalar => f.write_str("[scalar]"),
            Shape::Vector(n) => write!(f, "[vector({n})]"),
            Shape::IndexedBy(set) => write!(f, "[indexed({set})]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableDecl {
    pub name: String,
    pub shape: Shape,
    pub domain: Domain,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    pub index: String,
    pub set: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintDecl {
    pub name: String,
    pub kind: String,
    pub expression: String,
    pub index_set: Option<IndexSet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "MAX")]
    Max,
    #[serde(rename = "MIN")]
    Min,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Objective {
    pub name: String,
    pub expression: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationFormulation {
    pub variables: Vec<VariableDecl>,
    pub sense: Sense,
    pub objective: Objective,
    pub constraints: Vec<ConstraintDecl>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("no {BEGIN_MARKER} block found")]
    NoBlock,
    #[error("{0} {BEGIN_MARKER} blocks found, expected exactly one")]
    MultipleBlocks(usize),
    #[error("line {line}, column {column}: expected {expected}")]
    Syntax {
        line: usize,
        column: usize,
        expected: String,
    },
    #[error("constraint `{name}` uses unknown kind `{kind}`")]
    UnknownKind { name: String, kind: String },
    #[error("variable `{0}` declared twice")]
    DuplicateVariable(String),
    #[error("constraint `{0}` declared twice")]
    DuplicateConstraint(String),
    #[error("formulation has no objective")]
    MissingObjective,
    #[error("line {0}: a second objective is not allowed")]
    DuplicateObjective(usize),
    #[error("constraint `{constraint}` ranges over undeclared index set `{set}`")]
    UndeclaredIndexSet { constraint: String, set: String },
}

/// Character cursor over one line, tracking 1-based columns.
struct Cursor<'a> {
    line_no: usize,
    chars: Vec<char>,
    pos: usize,
    _src: &'a str,
}

impl<'a> Cursor<'a> {
    fn new(line_no: usize, src: &'a str) -> Self {
        Self {
            line_no,
            chars: src.chars().collect(),
            pos: 0,
            _src: src,
        }
    }

    fn err(&self, expected: &str) -> ParseError {
        ParseError::Syntax {
            line: self.line_no,
            column: self.pos + 1,
            expected: expected.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn at_end(&self) -> bool {
        self.pos >= self.chars.len()
    }

    fn eat(&mut self, lit: &str) -> bool {
        let n = lit.chars().count();
        if self.pos + n <= self.chars.len()
            && self.chars[self.pos..self.pos + n].iter().copied().eq(lit.chars())
        {
            self.pos += n;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, lit: &str) -> Result<(), ParseError> {
        self.skip_ws();
        if self.eat(lit) {
            Ok(())
        } else {
            Err(self.err(&format!("`{lit}`")))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        self.skip_ws();
        let start = self.pos;
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => self.pos += 1,
            _ => return Err(self.err(what)),
        }
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
        {
            self.pos += 1;
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                self.pos = start;
                self.err("a finite number")
            })
    }

    fn integer(&mut self) -> Result<usize, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        let s: String = self.chars[start..self.pos].iter().collect();
        s.parse().map_err(|_| {
            self.pos = start;
            self.err("a positive integer")
        })
    }

    fn quoted(&mut self) -> Result<String, ParseError> {
        self.skip_ws();
        if !self.eat("\"") {
            return Err(self.err("`\"`"));
        }
        let mut out = String::new();
        loop {
            match self.peek() {
                None => return Err(self.err("closing `\"`")),
                Some('"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some('\\') => {
                    self.pos += 1;
                    match self.peek() {
                        Some(c @ ('"' | '\\')) => {
                            out.push(c);
                            self.pos += 1;
                        }
                        _ => return Err(self.err("`\\\"` or `\\\\` escape")),
                    }
                }
                Some(c) => {
                    out.push(c);
                    self.pos += 1;
                }
            }
        }
    }

    /// Rest of the line, trimmed, which must be non-empty.
    fn rest(&mut self, what: &str) -> Result<String, ParseError> {
        self.skip_ws();
        let s: String = self.chars[self.pos..].iter().collect();
        let s = s.trim_end().to_string();
        if s.is_empty() {
            return Err(self.err(what));
        }
        self.pos = self.chars.len();
        Ok(s)
    }

    fn finish(&mut self) -> Result<(), ParseError> {
        self.skip_ws();
        if self.at_end() {
            Ok(())
        } else {
            Err(self.err("end of line"))
        }
    }
}

/// Strips a `#` comment that is not inside double quotes.
fn strip_comment(line: &str) -> &str {
    let mut in_quotes = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if in_quotes => escaped = true,
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return &line[..i],
            _ => {}
        }
    }
    line
}

fn parse_domain(cur: &mut Cursor<'_>) -> Result<Domain, ParseError> {
    cur.skip_ws();
    if cur.eat("complex") {
        Ok(Domain::Complex)
    } else if cur.eat("nonneg") {
        Ok(Domain::RealNonneg)
    } else if cur.eat("angle") {
        Ok(Domain::Angle)
    } else if cur.eat("real[") {
        let lo = cur.number()?;
        cur.expect(",")?;
        let hi = cur.number()?;
        cur.expect("]")?;
        if lo > hi {
            return Err(cur.err("an interval with lower bound <= upper bound"));
        }
        Ok(Domain::RealIn { lo, hi })
    } else {
        Err(cur.err("domain (complex, nonneg, angle or real[a,b])"))
    }
}

fn parse_shape(cur: &mut Cursor<'_>) -> Result<Shape, ParseError> {
    cur.skip_ws();
    if cur.peek() != Some('[') {
        return Ok(Shape::Scalar);
    }
    cur.pos += 1;
    cur.skip_ws();
    let shape = if cur.eat("scalar") {
        Shape::Scalar
    } else if cur.eat("vector(") {
        let n = cur.integer()?;
        if n == 0 {
            return Err(cur.err("a positive vector length"));
        }
        cur.expect(")")?;
        Shape::Vector(n)
    } else if cur.eat("indexed(") {
        let set = cur.ident("index set name")?;
        cur.expect(")")?;
        Shape::IndexedBy(set)
    } else {
        return Err(cur.err("shape (scalar, vector(n) or indexed(SET))"));
    };
    cur.expect("]")?;
    Ok(shape)
}

fn parse_var(cur: &mut Cursor<'_>) -> Result<VariableDecl, ParseError> {
    let name = cur.ident("variable name")?;
    cur.expect(":")?;
    let domain = parse_domain(cur)?;
    let shape = parse_shape(cur)?;
    let description = cur.quoted()?;
    cur.finish()?;
    Ok(VariableDecl {
        name,
        shape,
        domain,
        description,
    })
}

fn parse_constraint(
    cur: &mut Cursor<'_>,
    catalog: &KindCatalog,
) -> Result<ConstraintDecl, ParseError> {
    let name = cur.ident("constraint name")?;
    cur.expect("[")?;
    let kind = cur.ident("constraint kind")?;
    cur.expect("]")?;
    if !catalog.contains(&kind) {
        return Err(ParseError::UnknownKind { name, kind });
    }
    cur.skip_ws();
    let index_set = if cur.eat("(") {
        let index = cur.ident("index variable")?;
        cur.expect("in")?;
        let set = cur.ident("index set name")?;
        cur.expect(")")?;
        Some(IndexSet { index, set })
    } else {
        None
    };
    cur.expect(":")?;
    let expression = cur.rest("constraint expression")?;
    Ok(ConstraintDecl {
        name,
        kind,
        expression,
        index_set,
    })
}

/// The lines of the first formulation block in `text`, markers included.
pub fn block_text(text: &str) -> Option<String> {
    let lines: Vec<&str> = text.lines().collect();
    let begin = lines
        .iter()
        .position(|l| strip_comment(l).trim() == BEGIN_MARKER)?;
    let end = lines[begin..]
        .iter()
        .position(|l| strip_comment(l).trim() == END_MARKER)?;
    let mut out = lines[begin..=begin + end].join("\n");
    out.push('\n');
    Some(out)
}

/// Parses the single formulation block in `text` against the default
/// six-kind catalog.
pub fn parse_formulation(text: &str) -> Result<OptimizationFormulation, ParseError> {
    parse_formulation_with(text, &KindCatalog::default())
}

pub fn parse_formulation_with(
    text: &str,
    catalog: &KindCatalog,
) -> Result<OptimizationFormulation, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let begins: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| strip_comment(l).trim() == BEGIN_MARKER)
        .map(|(i, _)| i)
        .collect();
    let begin = match begins.as_slice() {
        [] => return Err(ParseError::NoBlock),
        [b] => *b,
        many => return Err(ParseError::MultipleBlocks(many.len())),
    };

    let mut variables: Vec<VariableDecl> = Vec::new();
    let mut constraints: Vec<ConstraintDecl> = Vec::new();
    let mut objective: Option<(Sense, Objective)> = None;
    let mut closed = false;

    for (i, raw) in lines.iter().enumerate().skip(begin + 1) {
        let line_no = i + 1;
        let body = strip_comment(raw);
        if body.trim().is_empty() {
            continue;
        }
        if body.trim() == END_MARKER {
            closed = true;
            break;
        }
        let mut cur = Cursor::new(line_no, body);
        cur.skip_ws();
        if cur.eat("VAR ") {
            let v = parse_var(&mut cur)?;
            if variables.iter().any(|x| x.name == v.name) {
                return Err(ParseError::DuplicateVariable(v.name));
            }
            variables.push(v);
        } else if cur.eat("S.T. ") {
            let c = parse_constraint(&mut cur, catalog)?;
            if constraints.iter().any(|x| x.name == c.name) {
                return Err(ParseError::DuplicateConstraint(c.name));
            }
            constraints.push(c);
        } else if let Some(sense) = if cur.eat("MAX ") {
            Some(Sense::Max)
        } else if cur.eat("MIN ") {
            Some(Sense::Min)
        } else {
            None
        } {
            if objective.is_some() {
                return Err(ParseError::DuplicateObjective(line_no));
            }
            let name = cur.ident("objective name")?;
            cur.expect(":=")?;
            let expression = cur.rest("objective expression")?;
            objective = Some((sense, Objective { name, expression }));
        } else {
            return Err(cur.err(&format!("VAR, MAX, MIN, S.T. or {END_MARKER}")));
        }
    }
    if !closed {
        return Err(ParseError::Syntax {
            line: lines.len() + 1,
            column: 1,
            expected: END_MARKER.to_string(),
        });
    }
    let (sense, objective) = objective.ok_or(ParseError::MissingObjective)?;

    let sets: HashSet<&str> = variables
        .iter()
        .filter_map(|v| match &v.shape {
            Shape::IndexedBy(s) => Some(s.as_str()),
            _ => None,
        })
        .collect();
    for c in &constraints {
        if let Some(ix) = &c.index_set {
            if !sets.contains(ix.set.as_str()) {
                return Err(ParseError::UndeclaredIndexSet {
                    constraint: c.name.clone(),
                    set: ix.set.clone(),
                });
            }
        }
    }

    Ok(OptimizationFormulation {
        variables,
        sense,
        objective,
        constraints,
    })
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

impl OptimizationFormulation {
    /// Constraints stably reordered by catalog position; kinds outside the
    /// catalog go last.
    pub fn canonical(&self, catalog: &KindCatalog) -> Self {
        let mut out = self.clone();
        out.constraints
            .sort_by_key(|c| catalog.position(&c.kind).unwrap_or(usize::MAX));
        out
    }

    pub fn kinds(&self) -> BTreeSet<String> {
        self.constraints.iter().map(|c| c.kind.clone()).collect()
    }

    /// Canonical block text using the default catalog.
    pub fn serialize(&self) -> String {
        self.serialize_with(&KindCatalog::default())
    }

    pub fn serialize_with(&self, catalog: &KindCatalog) -> String {
        let f = self.canonical(catalog);
        let mut out = String::new();
        out.push_str(BEGIN_MARKER);
        out.push('\n');
        for v in &f.variables {
            out.push_str(&format!(
                "VAR {} : {} {} \"{}\"\n",
                v.name,
                v.domain,
                v.shape,
                escape(&v.description)
            ));
        }
        let sense = match f.sense {
            Sense::Max => "MAX",
            Sense::Min => "MIN",
        };
        out.push_str(&format!(
            "{sense} {} := {}\n",
            f.objective.name, f.objective.expression
        ));
        for c in &f.constraints {
            let idx = c
                .index_set
                .as_ref()
                .map(|ix| format!(" ({} in {})", ix.index, ix.set))
                .unwrap_or_default();
            out.push_str(&format!("S.T. {}[{}]{} : {}\n", c.name, c.kind, idx, c.expression));
        }
        out.push_str(END_MARKER);
        out.push('\n');
        out
    }
}

/// Kind-, name- and objective-level differences between a candidate and a
/// reference formulation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormulationDiff {
    /// Kinds the reference has and the candidate lacks.
    pub missing_kinds: BTreeSet<String>,
    /// Kinds the candidate has and the reference lacks.
    pub extra_kinds: BTreeSet<String>,
    /// Variables declared on one side only, or declared differently.
    pub variable_mismatches: BTreeSet<String>,
    pub objective_match: bool,
}

impl FormulationDiff {
    pub fn is_empty(&self) -> bool {
        self.missing_kinds.is_empty()
            && self.extra_kinds.is_empty()
            && self.variable_mismatches.is_empty()
            && self.objective_match
    }
}

pub fn diff(
    candidate: &OptimizationFormulation,
    reference: &OptimizationFormulation,
) -> FormulationDiff {
    let cand = candidate.kinds();
    let refk = reference.kinds();
    let mut variable_mismatches = BTreeSet::new();
    for v in &candidate.variables {
        match reference.variables.iter().find(|r| r.name == v.name) {
            Some(r) if r.shape == v.shape && r.domain == v.domain => {}
            _ => {
                variable_mismatches.insert(v.name.clone());
            }
        }
    }
    for r in &reference.variables {
        if !candidate.variables.iter().any(|v| v.name == r.name) {
            variable_mismatches.insert(r.name.clone());
        }
    }
    FormulationDiff {
        missing_kinds: refk.difference(&cand).cloned().collect(),
        extra_kinds: cand.difference(&refk).cloned().collect(),
        variable_mismatches,
        objective_match: candidate.sense == reference.sense
            && candidate.objective.name == reference.objective.name,
    }
}

pub fn ground_truth() -> OptimizationFormulation {
    parse_formulation(GROUND_TRUTH).expect("ground-truth fixture parses")
}

pub fn manual_flawed() -> OptimizationFormulation {
    parse_formulation(MANUAL_FLAWED).expect("manual fixture parses")
}
