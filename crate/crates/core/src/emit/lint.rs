//! Structural lint for the Verilog subset the emitter produces.
//!
//! Reports identifiers used without a declaration, signals driven from
//! more than one place, and assignments whose right-hand side is wider
//! than the target (or, for bare selects, concatenations and literals,
//! of a different width). It also traces how many registers separate
//! each output port from the input ports.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    UndeclaredIdentifier {
        name: String,
        line: usize,
    },
    WidthMismatch {
        target: String,
        lhs: u32,
        rhs: u32,
        line: usize,
    },
    MultipleDrivers {
        name: String,
        line: usize,
    },
    Syntax {
        detail: String,
        line: usize,
    },
}

impl Finding {
    pub fn kind(&self) -> &'static str {
        match self {
            Finding::UndeclaredIdentifier { .. } => "UndeclaredIdentifier",
            Finding::WidthMismatch { .. } => "WidthMismatch",
            Finding::MultipleDrivers { .. } => "MultipleDrivers",
            Finding::Syntax { .. } => "Syntax",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    System(String),
    Number {
        width: Option<u32>,
        value: Option<u64>,
    },
    Str(usize),
    Op(&'static str),
}

const OPS: [&str; 40] = [
    "<<<", ">>>", "===", "!==", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||", "~&", "~|", "~^",
    "^~", "**", "+:", "-:", "+", "-", "*", "/", "%", "<", ">", "!", "~", "&", "|", "^", "?", ":",
    ";", ",", ".", "(", ")", "[", "]",
];
const MORE_OPS: [&str; 5] = ["{", "}", "@", "#", "="];

fn tokenize(text: &str) -> Result<Vec<(Tok, usize)>, Finding> {
    let b = text.as_bytes();
    let mut i = 0;
    let mut line = 1;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i] as char;
        if c == '\n' {
            line += 1;
            i += 1;
        } else if c.is_whitespace() {
            i += 1;
        } else if text[i..].starts_with("//") || c == '`' {
            while i < b.len() && b[i] != b'\n' {
                i += 1;
            }
        } else if text[i..].starts_with("/*") {
            let end = text[i + 2..].find("*/").map_or(b.len(), |e| i + 2 + e + 2);
            line += text[i..end].matches('\n').count();
            i = end;
        } else if c == '"' {
            let start = i;
            i += 1;
            while i < b.len() && b[i] != b'"' {
                i += if b[i] == b'\\' { 2 } else { 1 };
            }
            i += 1;
            out.push((Tok::Str(i - start - 2), line));
        } else if c.is_ascii_alphabetic() || c == '_' || c == '$' {
            let start = i;
            i += 1;
            while i < b.len()
                && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_' || b[i] == b'$')
            {
                i += 1;
            }
            let word = text[start..i].to_string();
            out.push((
                if c == '$' {
                    Tok::System(word)
                } else {
                    Tok::Ident(word)
                },
                line,
            ));
        } else if c.is_ascii_digit() || c == '\'' {
            let start = i;
            while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'_') {
                i += 1;
            }
            let size_text: String = text[start..i].chars().filter(|c| *c != '_').collect();
            if i < b.len() && b[i] == b'\'' {
                i += 1;
                if i < b.len() && (b[i] == b's' || b[i] == b'S') {
                    i += 1;
                }
                let base = b.get(i).map(|x| x.to_ascii_lowercase());
                let radix = match base {
                    Some(b'b') => 2,
                    Some(b'o') => 8,
                    Some(b'd') => 10,
                    Some(b'h') => 16,
                    _ => {
                        return Err(Finding::Syntax {
                            detail: "malformed based literal".into(),
                            line,
                        })
                    }
                };
                i += 1;
                let ds = i;
                while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                    i += 1;
                }
                let digits: String = text[ds..i].chars().filter(|c| *c != '_').collect();
                let width = if size_text.is_empty() {
                    Some(32)
                } else {
                    size_text.parse().ok()
                };
                out.push((
                    Tok::Number {
                        width,
                        value: u64::from_str_radix(&digits, radix).ok(),
                    },
                    line,
                ));
            } else {
                out.push((
                    Tok::Number {
                        width: Some(32),
                        value: size_text.parse().ok(),
                    },
                    line,
                ));
            }
        } else if let Some(op) = OPS
            .iter()
            .chain(&MORE_OPS)
            .find(|op| text[i..].starts_with(**op))
        {
            out.push((Tok::Op(op), line));
            i += op.len();
        } else {
            return Err(Finding::Syntax {
                detail: format!("unexpected character `{c}`"),
                line,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Signal {
    width: u32,
    /// Element width for memories.
    element: Option<u32>,
}

#[derive(Debug, Default)]
struct ExprInfo {
    width: Option<u32>,
    pure: bool,
    value: Option<u64>,
    idents: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Input,
    Output,
}

#[derive(Default)]
struct Module {
    name: String,
    signals: HashMap<String, Signal>,
    ports: Vec<(String, Dir)>,
    /// Driver group ids per signal, with the first line seen.
    drivers: HashMap<String, (BTreeSet<usize>, usize)>,
    /// Signal -> (registered, dependencies).
    deps: HashMap<String, (bool, BTreeSet<String>)>,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    findings: Vec<Finding>,
    modules: Vec<Module>,
    next_driver: usize,
}

type PResult<T> = Result<T, Finding>;

const KEYWORDS: [&str; 6] = ["posedge", "negedge", "or", "begin", "end", "default"];

impl Parser {
    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or(self.toks.last())
            .map_or(0, |t| t.1)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.0)
    }

    fn is_op(&self, op: &str) -> bool {
        matches!(self.peek(), Some(Tok::Op(o)) if *o == op)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(w)) if w == kw)
    }

    fn syntax(&self, detail: impl Into<String>) -> Finding {
        Finding::Syntax {
            detail: detail.into(),
            line: self.line(),
        }
    }

    fn expect_op(&mut self, op: &str) -> PResult<()> {
        if self.is_op(op) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{op}`, found {:?}", self.peek())))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.syntax(format!("expected `{kw}`, found {:?}", self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Some(Tok::Ident(w)) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            other => Err(self.syntax(format!("expected identifier, found {other:?}"))),
        }
    }

    fn module(&mut self) -> &mut Module {
        self.modules.last_mut().expect("inside a module")
    }

    fn use_ident(&mut self, name: &str, line: usize) {
        if !self.module().signals.contains_key(name) && !KEYWORDS.contains(&name) {
            self.findings.push(Finding::UndeclaredIdentifier {
                name: name.into(),
                line,
            });
        }
    }

    fn constant(&mut self) -> PResult<u64> {
        let e = self.expr()?;
        e.value.ok_or_else(|| self.syntax("expected a constant"))
    }

    fn primary(&mut self) -> PResult<ExprInfo> {
        let line = self.line();
        match self.peek().cloned() {
            Some(Tok::Number { width, value }) => {
                self.pos += 1;
                Ok(ExprInfo {
                    width,
                    pure: true,
                    value,
                    idents: vec![],
                })
            }
            Some(Tok::Str(len)) => {
                self.pos += 1;
                Ok(ExprInfo {
                    width: Some(8 * len as u32),
                    pure: true,
                    ..Default::default()
                })
            }
            Some(Tok::System(name)) => {
                self.pos += 1;
                let mut info = ExprInfo {
                    width: Some(32),
                    ..Default::default()
                };
                if self.is_op("(") {
                    self.pos += 1;
                    let mut args = Vec::new();
                    while !self.is_op(")") {
                        args.push(self.expr()?);
                        if self.is_op(",") {
                            self.pos += 1;
                        }
                    }
                    self.pos += 1;
                    if (name == "$signed" || name == "$unsigned") && args.len() == 1 {
                        info.width = args[0].width;
                    }
                    info.idents = args.into_iter().flat_map(|a| a.idents).collect();
                }
                Ok(info)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                self.use_ident(&name, line);
                let sig = self.module().signals.get(&name).copied();
                let mut info = ExprInfo {
                    width: sig.map(|s| s.width),
                    pure: true,
                    idents: vec![name],
                    ..Default::default()
                };
                let mut memory = sig.and_then(|s| s.element);
                while self.is_op("[") {
                    self.pos += 1;
                    let hi = self.expr()?;
                    info.idents.extend(hi.idents.iter().cloned());
                    if self.is_op(":") {
                        self.pos += 1;
                        let lo = self.expr()?;
                        info.idents.extend(lo.idents.iter().cloned());
                        info.width = match (hi.value, lo.value) {
                            (Some(h), Some(l)) if h >= l => Some((h - l + 1) as u32),
                            _ => None,
                        };
                    } else if let Some(el) = memory.take() {
                        info.width = Some(el);
                    } else {
                        info.width = Some(1);
                    }
                    self.expect_op("]")?;
                }
                Ok(info)
            }
            Some(Tok::Op("(")) => {
                self.pos += 1;
                let inner = self.expr()?;
                self.expect_op(")")?;
                Ok(inner)
            }
            Some(Tok::Op("{")) => {
                self.pos += 1;
                let first = self.expr()?;
                if self.is_op("{") {
                    // Replication.
                    self.pos += 1;
                    let inner = self.concat_items()?;
                    self.expect_op("}")?;
                    self.expect_op("}")?;
                    return Ok(ExprInfo {
                        width: first.value.zip(inner.width).map(|(n, w)| n as u32 * w),
                        pure: true,
                        value: None,
                        idents: inner.idents,
                    });
                }
                let mut total = first.width;
                let mut idents = first.idents;
                while self.is_op(",") {
                    self.pos += 1;
                    let e = self.expr()?;
                    total = total.zip(e.width).map(|(a, b)| a + b);
                    idents.extend(e.idents);
                }
                self.expect_op("}")?;
                Ok(ExprInfo {
                    width: total,
                    pure: true,
                    value: None,
                    idents,
                })
            }
            Some(Tok::Op(op))
                if ["~", "!", "-", "+", "&", "|", "^", "~&", "~|", "~^", "^~"].contains(&op) =>
            {
                self.pos += 1;
                let inner = self.primary()?;
                let width = match op {
                    "~" | "-" | "+" => inner.width,
                    _ => Some(1),
                };
                Ok(ExprInfo {
                    width,
                    pure: false,
                    value: None,
                    idents: inner.idents,
                })
            }
            other => Err(self.syntax(format!("unexpected {other:?} in expression"))),
        }
    }

    fn concat_items(&mut self) -> PResult<ExprInfo> {
        let first = self.expr()?;
        let mut total = first.width;
        let mut idents = first.idents;
        while self.is_op(",") {
            self.pos += 1;
            let e = self.expr()?;
            total = total.zip(e.width).map(|(a, b)| a + b);
            idents.extend(e.idents);
        }
        Ok(ExprInfo {
            width: total,
            pure: true,
            value: None,
            idents,
        })
    }

    fn binary_prec(op: &str) -> Option<u8> {
        Some(match op {
            "||" => 2,
            "&&" => 3,
            "|" => 4,
            "^" | "^~" | "~^" => 5,
            "&" => 6,
            "==" | "!=" | "===" | "!==" => 7,
            "<" | "<=" | ">" | ">=" => 8,
            "<<" | ">>" | "<<<" | ">>>" => 9,
            "+" | "-" => 10,
            "*" | "/" | "%" => 11,
            "**" => 12,
            _ => return None,
        })
    }

    fn binary(&mut self, min: u8) -> PResult<ExprInfo> {
        let mut lhs = self.primary()?;
        while let Some(Tok::Op(op)) = self.peek().cloned() {
            let Some(p) = Self::binary_prec(op) else {
                break;
            };
            if p < min {
                break;
            }
            self.pos += 1;
            let rhs = self.binary(p + 1)?;
            let width = match p {
                2 | 3 | 7 | 8 => Some(1),
                9 | 12 => lhs.width,
                _ => lhs.width.zip(rhs.width).map(|(a, b)| a.max(b)),
            };
            let value = match (op, lhs.value, rhs.value) {
                ("+", Some(a), Some(b)) => a.checked_add(b),
                ("-", Some(a), Some(b)) => a.checked_sub(b),
                ("*", Some(a), Some(b)) => a.checked_mul(b),
                ("/", Some(a), Some(b)) if b != 0 => Some(a / b),
                _ => None,
            };
            lhs.idents.extend(rhs.idents);
            lhs = ExprInfo {
                width,
                pure: false,
                value,
                idents: lhs.idents,
            };
        }
        Ok(lhs)
    }

    fn expr(&mut self) -> PResult<ExprInfo> {
        let cond = self.binary(2)?;
        if !self.is_op("?") {
            return Ok(cond);
        }
        self.pos += 1;
        let a = self.expr()?;
        self.expect_op(":")?;
        let b = self.expr()?;
        let mut idents = cond.idents;
        idents.extend(a.idents);
        idents.extend(b.idents);
        Ok(ExprInfo {
            width: a.width.zip(b.width).map(|(x, y)| x.max(y)),
            pure: false,
            value: None,
            idents,
        })
    }

    fn range(&mut self) -> PResult<Option<u32>> {
        if !self.is_op("[") {
            return Ok(None);
        }
        self.pos += 1;
        let hi = self.constant()?;
        self.expect_op(":")?;
        let lo = self.constant()?;
        self.expect_op("]")?;
        Ok(Some((hi.max(lo) - hi.min(lo) + 1) as u32))
    }

    fn declare(&mut self, name: String, sig: Signal) {
        self.module().signals.insert(name, sig);
    }

    fn add_driver(&mut self, name: &str, group: usize, line: usize) {
        let entry = self
            .module()
            .drivers
            .entry(name.to_string())
            .or_insert_with(|| (BTreeSet::new(), line));
        entry.0.insert(group);
    }

    fn add_deps(&mut self, name: &str, registered: bool, deps: impl IntoIterator<Item = String>) {
        let entry = self
            .module()
            .deps
            .entry(name.to_string())
            .or_insert_with(|| (registered, BTreeSet::new()));
        entry.0 |= registered;
        entry.1.extend(deps);
    }

    fn check_width(&mut self, target: &str, lhs: Option<u32>, rhs: &ExprInfo, line: usize) {
        if let (Some(l), Some(r)) = (lhs, rhs.width) {
            if r > l || (rhs.pure && r != l && rhs.value.is_none()) || (rhs.pure && r > l) {
                self.findings.push(Finding::WidthMismatch {
                    target: target.into(),
                    lhs: l,
                    rhs: r,
                    line,
                });
            }
        }
    }

    /// Declaration after the `wire` / `reg` / `integer` / port keyword.
    fn declaration(&mut self, kind: &str, dir: Option<Dir>, in_header: bool) -> PResult<()> {
        let mut width = 1;
        if kind == "integer" {
            width = 32;
        }
        if self.is_kw("wire") || self.is_kw("reg") {
            self.pos += 1;
        }
        if self.is_kw("signed") {
            self.pos += 1;
        }
        if let Some(w) = self.range()? {
            width = w;
        }
        loop {
            let line = self.line();
            let name = self.ident()?;
            let element = if self.is_op("[") {
                self.range()?;
                Some(width)
            } else {
                None
            };
            self.declare(name.clone(), Signal { width, element });
            if let Some(d) = dir {
                self.module().ports.push((name.clone(), d));
            }
            if self.is_op("=") {
                self.pos += 1;
                let e = self.expr()?;
                if kind == "wire" {
                    let group = self.next_driver;
                    self.next_driver += 1;
                    self.add_driver(&name, group, line);
                    self.add_deps(&name, false, e.idents.clone());
                    self.check_width(&name, Some(width), &e, line);
                }
            }
            if !self.is_op(",") {
                break;
            }
            // In a port list the next entry may start with a direction.
            if in_header
                && matches!(self.peek_at(1), Some(Tok::Ident(w)) if w == "input" || w == "output" || w == "inout")
            {
                break;
            }
            self.pos += 1;
        }
        Ok(())
    }

    fn lvalue(&mut self) -> PResult<(Vec<String>, Option<u32>, String, usize)> {
        let line = self.line();
        if self.is_op("{") {
            let e = self.primary()?;
            let names = e.idents.clone();
            return Ok((names, e.width, "{...}".into(), line));
        }
        let name = self.ident()?;
        self.use_ident(&name, line);
        let sig = self.module().signals.get(&name).copied();
        let mut width = sig.map(|s| s.width);
        let mut memory = sig.and_then(|s| s.element);
        let mut idents = vec![name.clone()];
        while self.is_op("[") {
            self.pos += 1;
            let hi = self.expr()?;
            idents.extend(hi.idents.iter().cloned());
            if self.is_op(":") {
                self.pos += 1;
                let lo = self.expr()?;
                width = match (hi.value, lo.value) {
                    (Some(h), Some(l)) if h >= l => Some((h - l + 1) as u32),
                    _ => None,
                };
            } else if let Some(el) = memory.take() {
                width = Some(el);
            } else {
                width = Some(1);
            }
            self.expect_op("]")?;
        }
        Ok((vec![name.clone()], width, name, line))
    }

    fn statement(
        &mut self,
        group: usize,
        sequential: bool,
        conds: &mut Vec<String>,
    ) -> PResult<()> {
        let line = self.line();
        match self.peek().cloned() {
            Some(Tok::Op(";")) => {
                self.pos += 1;
            }
            Some(Tok::Ident(w)) if w == "begin" => {
                self.pos += 1;
                if self.is_op(":") {
                    self.pos += 2;
                }
                while !self.is_kw("end") {
                    if self.peek().is_none() {
                        return Err(self.syntax("unterminated begin"));
                    }
                    self.statement(group, sequential, conds)?;
                }
                self.pos += 1;
            }
            Some(Tok::Ident(w)) if w == "if" => {
                self.pos += 1;
                self.expect_op("(")?;
                let c = self.expr()?;
                self.expect_op(")")?;
                let mark = conds.len();
                conds.extend(c.idents);
                self.statement(group, sequential, conds)?;
                if self.is_kw("else") {
                    self.pos += 1;
                    self.statement(group, sequential, conds)?;
                }
                conds.truncate(mark);
            }
            Some(Tok::Ident(w)) if w == "case" || w == "casez" || w == "casex" => {
                self.pos += 1;
                self.expect_op("(")?;
                let sel = self.expr()?;
                self.expect_op(")")?;
                let mark = conds.len();
                conds.extend(sel.idents);
                while !self.is_kw("endcase") {
                    if self.peek().is_none() {
                        return Err(self.syntax("unterminated case"));
                    }
                    if self.is_kw("default") {
                        self.pos += 1;
                        if self.is_op(":") {
                            self.pos += 1;
                        }
                    } else {
                        loop {
                            let label = self.expr()?;
                            conds.extend(label.idents);
                            if self.is_op(",") {
                                self.pos += 1;
                            } else {
                                break;
                            }
                        }
                        self.expect_op(":")?;
                    }
                    self.statement(group, sequential, conds)?;
                }
                self.pos += 1;
                conds.truncate(mark);
            }
            Some(Tok::Ident(w)) if w == "for" => {
                self.pos += 1;
                self.expect_op("(")?;
                self.assignment(group, sequential, conds)?;
                self.expr()?;
                self.expect_op(";")?;
                let (names, width, target, l) = self.lvalue()?;
                self.expect_op("=")?;
                let e = self.expr()?;
                self.record_assign(&names, width, &target, &e, group, false, conds, l);
                self.expect_op(")")?;
                self.statement(group, sequential, conds)?;
            }
            Some(Tok::Ident(w)) if w == "repeat" || w == "while" => {
                self.pos += 1;
                self.expect_op("(")?;
                self.expr()?;
                self.expect_op(")")?;
                self.statement(group, sequential, conds)?;
            }
            Some(Tok::Ident(w)) if w == "forever" => {
                self.pos += 1;
                self.statement(group, sequential, conds)?;
            }
            Some(Tok::Op("@")) => {
                self.pos += 1;
                self.event()?;
                self.statement(group, sequential, conds)?;
            }
            Some(Tok::Op("#")) => {
                self.pos += 1;
                self.primary()?;
                self.statement(group, sequential, conds)?;
            }
            Some(Tok::System(_)) => {
                self.primary()?;
                self.expect_op(";")?;
            }
            Some(_) => self.assignment(group, sequential, conds)?,
            None => {
                return Err(Finding::Syntax {
                    detail: "unexpected end of input".into(),
                    line,
                })
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn record_assign(
        &mut self,
        names: &[String],
        width: Option<u32>,
        target: &str,
        e: &ExprInfo,
        group: usize,
        registered: bool,
        conds: &[String],
        line: usize,
    ) {
        self.check_width(target, width, e, line);
        for n in names {
            self.add_driver(n, group, line);
            let deps: Vec<String> = e.idents.iter().chain(conds).cloned().collect();
            self.add_deps(n, registered, deps);
        }
    }

    fn assignment(&mut self, group: usize, sequential: bool, conds: &mut [String]) -> PResult<()> {
        let (names, width, target, line) = self.lvalue()?;
        let nonblocking = self.is_op("<=");
        if !(nonblocking || self.is_op("=")) {
            return Err(self.syntax("expected assignment"));
        }
        self.pos += 1;
        let e = self.expr()?;
        self.expect_op(";")?;
        let registered = sequential && nonblocking;
        self.record_assign(&names, width, &target, &e, group, registered, conds, line);
        Ok(())
    }

    /// Event control after `@`; returns whether it names a clock edge.
    fn event(&mut self) -> PResult<bool> {
        if self.is_op("*") {
            self.pos += 1;
            return Ok(false);
        }
        if !self.is_op("(") {
            let line = self.line();
            let name = self.ident()?;
            self.use_ident(&name, line);
            return Ok(false);
        }
        self.pos += 1;
        let mut edge = false;
        while !self.is_op(")") {
            let line = self.line();
            match self.peek().cloned() {
                Some(Tok::Ident(w)) if w == "posedge" || w == "negedge" => {
                    edge = true;
                    self.pos += 1;
                }
                Some(Tok::Ident(w)) if w == "or" => self.pos += 1,
                Some(Tok::Ident(w)) => {
                    self.pos += 1;
                    self.use_ident(&w, line);
                }
                Some(Tok::Op("*")) | Some(Tok::Op(",")) => self.pos += 1,
                _ => return Err(self.syntax("malformed event control")),
            }
        }
        self.pos += 1;
        Ok(edge)
    }

    fn module_item(&mut self) -> PResult<bool> {
        let line = self.line();
        let Some(tok) = self.peek().cloned() else {
            return Err(self.syntax("missing endmodule"));
        };
        match tok {
            Tok::Ident(w) if w == "endmodule" => {
                self.pos += 1;
                return Ok(false);
            }
            Tok::Ident(w) if w == "input" || w == "output" || w == "inout" => {
                self.pos += 1;
                let dir = if w == "input" {
                    Dir::Input
                } else {
                    Dir::Output
                };
                self.declaration("wire", Some(dir), false)?;
                self.expect_op(";")?;
            }
            Tok::Ident(w) if w == "wire" || w == "reg" || w == "integer" => {
                self.pos += 1;
                if w == "integer" {
                    self.declaration("integer", None, false)?;
                } else {
                    self.pos -= 1;
                    self.declaration(&w, None, false)?;
                }
                self.expect_op(";")?;
            }
            Tok::Ident(w) if w == "localparam" || w == "parameter" => {
                self.pos += 1;
                self.range()?;
                loop {
                    let name = self.ident()?;
                    self.expect_op("=")?;
                    self.expr()?;
                    self.declare(
                        name,
                        Signal {
                            width: 32,
                            element: None,
                        },
                    );
                    if !self.is_op(",") {
                        break;
                    }
                    self.pos += 1;
                }
                self.expect_op(";")?;
            }
            Tok::Ident(w) if w == "assign" => {
                self.pos += 1;
                loop {
                    let group = self.next_driver;
                    self.next_driver += 1;
                    let (names, width, target, l) = self.lvalue()?;
                    self.expect_op("=")?;
                    let e = self.expr()?;
                    self.record_assign(&names, width, &target, &e, group, false, &[], l);
                    if !self.is_op(",") {
                        break;
                    }
                    self.pos += 1;
                }
                self.expect_op(";")?;
            }
            Tok::Ident(w) if w == "always" || w == "initial" => {
                self.pos += 1;
                let group = self.next_driver;
                self.next_driver += 1;
                let mut sequential = false;
                if w == "always" && self.is_op("@") {
                    self.pos += 1;
                    sequential = self.event()?;
                }
                self.statement(group, sequential, &mut Vec::new())?;
            }
            Tok::Ident(_) if matches!(self.peek_at(1), Some(Tok::Ident(_))) => {
                // Module instance: `type name (.port(expr), ...);`
                self.pos += 2;
                self.expect_op("(")?;
                while !self.is_op(")") {
                    if self.is_op(".") {
                        self.pos += 1;
                        self.ident()?;
                        self.expect_op("(")?;
                        if !self.is_op(")") {
                            self.expr()?;
                        }
                        self.expect_op(")")?;
                    } else {
                        self.expr()?;
                    }
                    if self.is_op(",") {
                        self.pos += 1;
                    } else if !self.is_op(")") {
                        return Err(self.syntax("malformed port connection"));
                    }
                }
                self.pos += 1;
                self.expect_op(";")?;
            }
            other => {
                return Err(Finding::Syntax {
                    detail: format!("unexpected {other:?} at module level"),
                    line,
                })
            }
        }
        Ok(true)
    }

    fn parse_module(&mut self) -> PResult<()> {
        self.expect_kw("module")?;
        let name = self.ident()?;
        self.modules.push(Module {
            name,
            ..Default::default()
        });
        if self.is_op("(") {
            self.pos += 1;
            while !self.is_op(")") {
                match self.peek().cloned() {
                    Some(Tok::Ident(w)) if w == "input" || w == "output" || w == "inout" => {
                        self.pos += 1;
                        let dir = if w == "input" {
                            Dir::Input
                        } else {
                            Dir::Output
                        };
                        self.declaration("wire", Some(dir), true)?;
                    }
                    Some(Tok::Ident(_)) => {
                        self.pos += 1;
                    }
                    _ => return Err(self.syntax("malformed port list")),
                }
                if self.is_op(",") {
                    self.pos += 1;
                }
            }
            self.pos += 1;
        }
        self.expect_op(";")?;
        while self.module_item()? {}
        Ok(())
    }

    fn finish_module_checks(&mut self) {
        let m = self.modules.last().expect("module");
        let mut multi: Vec<_> = m
            .drivers
            .iter()
            .filter(|(_, (groups, _))| groups.len() > 1)
            .map(|(name, (_, line))| Finding::MultipleDrivers {
                name: name.clone(),
                line: *line,
            })
            .collect();
        multi.sort_by_key(|f| match f {
            Finding::MultipleDrivers { line, .. } => *line,
            _ => 0,
        });
        self.findings.extend(multi);
    }
}

fn parse(text: &str) -> (Vec<Module>, Vec<Finding>) {
    let toks = match tokenize(text) {
        Ok(t) => t,
        Err(f) => return (Vec::new(), vec![f]),
    };
    let mut p = Parser {
        toks,
        pos: 0,
        findings: Vec::new(),
        modules: Vec::new(),
        next_driver: 0,
    };
    while p.peek().is_some() {
        if let Err(f) = p.parse_module() {
            p.findings.push(f);
            break;
        }
        p.finish_module_checks();
    }
    (p.modules, p.findings)
}

/// All findings for a Verilog source text. Empty means clean.
pub fn lint_verilog(text: &str) -> Vec<Finding> {
    let (_, mut findings) = parse(text);
    let mut seen = HashSet::new();
    findings.retain(|f| seen.insert(format!("{f:?}")));
    findings
}

/// For each output port of the first module, the set of register counts
/// on paths from the input ports. Clock, reset and the phase counter are
/// ignored; outputs that do not depend on any input get an empty set.
pub fn register_depths(text: &str) -> Result<BTreeMap<String, BTreeSet<u32>>, Vec<Finding>> {
    let (modules, findings) = parse(text);
    if findings.iter().any(|f| matches!(f, Finding::Syntax { .. })) {
        return Err(findings);
    }
    let Some(m) = modules.first() else {
        return Err(vec![Finding::Syntax {
            detail: "no module".into(),
            line: 0,
        }]);
    };
    let ignored = ["clk", "rst", "phase"];
    let inputs: HashSet<&str> = m
        .ports
        .iter()
        .filter(|(n, d)| *d == Dir::Input && !ignored.contains(&n.as_str()))
        .map(|(n, _)| n.as_str())
        .collect();
    let mut memo: HashMap<String, BTreeSet<u32>> = HashMap::new();
    fn depth(
        name: &str,
        m: &Module,
        inputs: &HashSet<&str>,
        memo: &mut HashMap<String, BTreeSet<u32>>,
        visiting: &mut HashSet<String>,
    ) -> BTreeSet<u32> {
        if inputs.contains(name) {
            return BTreeSet::from([0]);
        }
        if let Some(d) = memo.get(name) {
            return d.clone();
        }
        if ["clk", "rst", "phase"].contains(&name) || !visiting.insert(name.to_string()) {
            return BTreeSet::new();
        }
        let mut out = BTreeSet::new();
        if let Some((registered, deps)) = m.deps.get(name) {
            for d in deps {
                for v in depth(d, m, inputs, memo, visiting) {
                    out.insert(v + u32::from(*registered));
                }
            }
        }
        visiting.remove(name);
        memo.insert(name.to_string(), out.clone());
        out
    }
    let mut result = BTreeMap::new();
    for (name, dir) in &m.ports {
        if *dir == Dir::Output {
            let d = depth(name, m, &inputs, &mut memo, &mut HashSet::new());
            result.insert(name.clone(), d);
        }
    }
    let _ = &m.name;
    Ok(result)
}
