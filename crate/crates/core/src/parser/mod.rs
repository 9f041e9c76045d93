//! Concrete syntax: lexing, recursive-descent parsing, and pretty printing.
//!
//! ```text
//! tensors {
//!   G[S=|V|, D=|V|]: int, empty=0;
//!   F[I=*, S=|V|]: int, empty=inf;
//! }
//! init {
//!   G = user;
//!   F[0, s in id] = 0;
//! }
//! einsum {
//!   T[i, d] = G[s, d] .1 F[i, s] :: map.1(s; add; cap) reduce.1(s; any; cup);
//!   until nnz(F[i+1]) == 0;
//! }
//! ```

mod lexer;
mod print;

use alloc::boxed::Box;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::ast::{
    Access, Action, BoolCond, Cascade, CaseArm, CaseStmt, CmpOp, CoordSpec, Decl, EinsumStmt,
    Init, Program, RankExpr, RankSpec, RhsExpr, SizeExpr, Statement, StopCond, Subscript,
    UpdateStmt,
};
use crate::fibertree::{DType, Scalar};
use lexer::{lex, Tok, Token};

pub use print::{pretty_print, statement_text};

/// Location in a source file. Line and column are 1-based; column counts characters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct SourceSpan {
    pub line: usize,
    pub column: usize,
    pub offset: usize,
    pub len: usize,
}

impl fmt::Display for SourceSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub span: SourceSpan,
    pub message: String,
    pub expected: Vec<String>,
}

impl ParseError {
    pub(crate) fn new(span: SourceSpan, message: impl Into<String>, expected: Vec<String>) -> Self {
        ParseError {
            span,
            message: message.into(),
            expected,
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)?;
        if !self.expected.is_empty() {
            write!(f, " (expected {})", self.expected.join(", "))?;
        }
        Ok(())
    }
}

/// A program with the source location of each item, in validator item order.
#[derive(Clone, Debug)]
pub struct Parsed {
    pub program: Program,
    pub item_spans: Vec<SourceSpan>,
}

pub fn parse(src: &str) -> Result<Program, Vec<ParseError>> {
    parse_with_spans(src).map(|p| p.program)
}

pub fn parse_with_spans(src: &str) -> Result<Parsed, Vec<ParseError>> {
    let (toks, lex_errs) = lex(src);
    let mut p = Parser {
        toks,
        pos: 0,
        depth: 0,
        errors: lex_errs,
        spans: Vec::new(),
    };
    let program = p.program();
    let mut errors = p.errors;
    match program {
        Ok(program) if errors.is_empty() => Ok(Parsed {
            program,
            item_spans: p.spans,
        }),
        Ok(_) => {
            errors.sort_by_key(|e| e.span.offset);
            Err(errors)
        }
        Err(e) => {
            errors.push(e);
            errors.sort_by_key(|e| e.span.offset);
            Err(errors)
        }
    }
}

type PResult<T> = Result<T, ParseError>;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// Open braces consumed so far, for statement-level recovery.
    depth: usize,
    errors: Vec<ParseError>,
    spans: Vec<SourceSpan>,
}

fn q(s: &str) -> String {
    format!("`{s}`")
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> SourceSpan {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        match t {
            Tok::LBrace => self.depth += 1,
            Tok::RBrace => self.depth = self.depth.saturating_sub(1),
            _ => {}
        }
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, expected: &[&str]) -> PResult<T> {
        Err(ParseError::new(
            self.span(),
            format!("unexpected {}", self.peek()),
            expected.iter().map(|s| s.to_string()).collect(),
        ))
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == t {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok) -> PResult<()> {
        if self.eat(&t) {
            Ok(())
        } else {
            self.error(&[&t.to_string()])
        }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn kw_at(&self, k: usize, kw: &str) -> bool {
        matches!(self.peek_at(k), Tok::Ident(s) if s == kw)
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<()> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.error(&[&q(kw)])
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => self.error(&[what]),
        }
    }

    /// Skips to the end of the current item: past a `;` at the starting
    /// brace depth, or up to a `}` closing the enclosing block.
    fn recover(&mut self, depth: usize) {
        loop {
            match self.peek() {
                Tok::Eof => return,
                Tok::Semi if self.depth == depth => {
                    self.bump();
                    return;
                }
                Tok::RBrace if self.depth == depth => return,
                Tok::RBrace if self.depth < depth => return,
                _ => {
                    self.bump();
                }
            }
        }
    }

    /// Runs an item parser, recording the error and resynchronizing on failure.
    fn item<T>(&mut self, f: impl FnOnce(&mut Self) -> PResult<T>) -> Option<T> {
        let depth = self.depth;
        self.spans.push(self.span());
        match f(self) {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(e);
                self.recover(depth);
                None
            }
        }
    }

    fn program(&mut self) -> PResult<Program> {
        self.expect_kw("tensors")?;
        self.expect(Tok::LBrace)?;
        let mut decls = Vec::new();
        while !matches!(self.peek(), Tok::RBrace | Tok::Eof) {
            if let Some(d) = self.item(Self::decl) {
                decls.push(d);
            }
        }
        self.expect(Tok::RBrace)?;
        self.expect_kw("init")?;
        self.expect(Tok::LBrace)?;
        let mut inits = Vec::new();
        while !matches!(self.peek(), Tok::RBrace | Tok::Eof) {
            if let Some(i) = self.item(Self::init) {
                inits.push(i);
            }
        }
        self.expect(Tok::RBrace)?;
        self.expect_kw("einsum")?;
        let var = match self.peek() {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                s
            }
            _ => "i".into(),
        };
        self.expect(Tok::LBrace)?;
        let body = self.cascade_body(var)?;
        self.expect(Tok::RBrace)?;
        if *self.peek() != Tok::Eof {
            return self.error(&["end of input"]);
        }
        Ok(Program { decls, inits, body })
    }

    fn decl(&mut self) -> PResult<Decl> {
        let name = self.ident("tensor name")?;
        self.expect(Tok::LBracket)?;
        let mut ranks = Vec::new();
        if !self.eat(&Tok::RBracket) {
            loop {
                let rname = self.ident("rank name")?;
                self.expect(Tok::Assign)?;
                let size = match self.peek().clone() {
                    Tok::Int(v) if v >= 0 => {
                        self.bump();
                        SizeExpr::Lit(v as u64)
                    }
                    Tok::Star => {
                        self.bump();
                        SizeExpr::Unbounded
                    }
                    Tok::Pipe => {
                        self.bump();
                        let p = self.ident("size parameter name")?;
                        self.expect(Tok::Pipe)?;
                        SizeExpr::Param(p)
                    }
                    _ => return self.error(&["rank size", "`|NAME|`", "`*`"]),
                };
                ranks.push(RankSpec { name: rname, size });
                if self.eat(&Tok::RBracket) {
                    break;
                }
                self.expect(Tok::Comma)?;
            }
        }
        self.expect(Tok::Colon)?;
        let dspan = self.span();
        let dname = self.ident("datatype")?;
        let dtype = DType::from_name(&dname).ok_or_else(|| {
            ParseError::new(
                dspan,
                format!("unknown datatype `{dname}`"),
                ["`int`", "`float`", "`bool`"].iter().map(|s| s.to_string()).collect(),
            )
        })?;
        self.expect(Tok::Comma)?;
        self.expect_kw("empty")?;
        self.expect(Tok::Assign)?;
        let vspan = self.span();
        let text = self.literal_text()?;
        let empty = Scalar::parse_as(&text, dtype).ok_or_else(|| {
            ParseError::new(vspan, format!("empty value `{text}` is not a valid {dtype}"), Vec::new())
        })?;
        self.expect(Tok::Semi)?;
        Ok(Decl {
            name,
            ranks,
            dtype,
            empty,
        })
    }

    /// A scalar literal's text, sign included.
    fn literal_text(&mut self) -> PResult<String> {
        let neg = self.eat(&Tok::Minus);
        let body = match self.peek().clone() {
            Tok::Int(v) => v.to_string(),
            Tok::Float(s) => s,
            Tok::Ident(s) if s == "inf" || (!neg && (s == "true" || s == "false")) => s,
            _ => return self.error(&["literal"]),
        };
        self.bump();
        Ok(if neg { format!("-{body}") } else { body })
    }

    fn init(&mut self) -> PResult<Init> {
        if matches!(self.peek(), Tok::Ident(_))
            && *self.peek_at(1) == Tok::Assign
            && self.kw_at(2, "user")
        {
            let name = self.ident("tensor name")?;
            self.bump();
            self.bump();
            self.expect(Tok::Semi)?;
            return Ok(Init::User(name));
        }
        let output = self.access()?;
        self.expect(Tok::Assign)?;
        let (rhs, actions) = self.rhs_with_actions()?;
        self.expect(Tok::Semi)?;
        Ok(Init::Stmt(EinsumStmt {
            output,
            rhs,
            actions,
        }))
    }

    fn cascade_body(&mut self, var: String) -> PResult<Cascade> {
        let mut body = Vec::new();
        let mut stop = None;
        loop {
            if matches!(self.peek(), Tok::RBrace | Tok::Eof) {
                break;
            }
            if self.is_kw("until") {
                let v = var.clone();
                if let Some(s) = self.item(|p| p.stop(&v)) {
                    stop = Some(s);
                }
                if !matches!(self.peek(), Tok::RBrace | Tok::Eof) {
                    return self.error(&["`}` after `until`"]);
                }
                break;
            }
            if self.is_kw("cascade") && matches!(self.peek_at(1), Tok::Ident(_)) {
                self.spans.push(self.span());
                self.bump();
                let v = self.ident("cascade variable")?;
                self.expect(Tok::LBrace)?;
                let inner = self.cascade_body(v)?;
                self.expect(Tok::RBrace)?;
                body.push(Statement::Cascade(inner));
                continue;
            }
            if let Some(s) = self.item(Self::statement) {
                body.push(s);
            }
        }
        Ok(Cascade { var, body, stop })
    }

    fn stop(&mut self, var: &str) -> PResult<StopCond> {
        self.expect_kw("until")?;
        let cond = if self.is_kw("nnz") && *self.peek_at(1) == Tok::LParen {
            self.bump();
            self.bump();
            let (tensor, offset) = self.gen_ref(var)?;
            self.expect(Tok::RParen)?;
            self.expect(Tok::EqEq)?;
            if !self.eat(&Tok::Int(0)) {
                return self.error(&["`0`"]);
            }
            StopCond::OccupancyZero { tensor, offset }
        } else {
            let (left, left_offset) = self.gen_ref(var)?;
            self.expect(Tok::EqEq)?;
            let (right, right_offset) = self.gen_ref(var)?;
            StopCond::TensorEqual {
                left,
                left_offset,
                right,
                right_offset,
            }
        };
        self.expect(Tok::Semi)?;
        Ok(cond)
    }

    /// `T[v]` or `T[v+k]` where `v` is the cascade variable.
    fn gen_ref(&mut self, var: &str) -> PResult<(String, i64)> {
        let t = self.ident("tensor name")?;
        self.expect(Tok::LBracket)?;
        let span = self.span();
        let v = self.ident("cascade variable")?;
        if v != var {
            return Err(ParseError::new(
                span,
                format!("stop condition must index by cascade variable `{var}`, found `{v}`"),
                alloc::vec![q(var)],
            ));
        }
        let off = if self.eat(&Tok::Plus) {
            match self.bump() {
                Tok::Int(k) => k,
                _ => {
                    self.pos -= 1;
                    return self.error(&["integer"]);
                }
            }
        } else {
            0
        };
        self.expect(Tok::RBracket)?;
        Ok((t, off))
    }

    fn statement(&mut self) -> PResult<Statement> {
        let output = self.access()?;
        if self.eat(&Tok::Shl) {
            let (rhs, actions) = self.rhs_with_actions()?;
            self.expect(Tok::Semi)?;
            return Ok(Statement::Update(UpdateStmt {
                output,
                rhs,
                actions,
            }));
        }
        if *self.peek() != Tok::Assign {
            return self.error(&["`=`", "`<<`"]);
        }
        self.bump();
        if self.is_kw("case") && *self.peek_at(1) == Tok::LBrace {
            self.bump();
            self.expect(Tok::LBrace)?;
            let mut arms = Vec::new();
            while !self.eat(&Tok::RBrace) {
                let guard = if self.is_kw("else") && *self.peek_at(1) == Tok::Arrow {
                    self.bump();
                    None
                } else {
                    Some(self.cond()?)
                };
                self.expect(Tok::Arrow)?;
                let (rhs, actions) = self.rhs_with_actions()?;
                self.expect(Tok::Semi)?;
                arms.push(CaseArm {
                    guard,
                    rhs,
                    actions,
                });
            }
            self.expect(Tok::Semi)?;
            return Ok(Statement::Case(CaseStmt { output, arms }));
        }
        let (rhs, actions) = self.rhs_with_actions()?;
        self.expect(Tok::Semi)?;
        Ok(Statement::Einsum(EinsumStmt {
            output,
            rhs,
            actions,
        }))
    }

    fn rhs_with_actions(&mut self) -> PResult<(RhsExpr, Vec<Action>)> {
        let rhs = self.rhs()?;
        let mut actions = Vec::new();
        if self.eat(&Tok::ColonColon) {
            loop {
                actions.push(self.action()?);
                if !(self.is_kw("map") || self.is_kw("reduce") || self.is_kw("populate")) {
                    break;
                }
            }
        }
        match self.peek() {
            Tok::Semi => Ok((rhs, actions)),
            Tok::Shl => Err(ParseError::new(
                self.span(),
                "`<<` is only allowed at statement level",
                Vec::new(),
            )),
            Tok::Label(_) => Err(ParseError::new(
                self.span(),
                "nested operations must be parenthesized",
                alloc::vec![q(";"), q("::")],
            )),
            _ if actions.is_empty() => self.error(&["`;`", "`::`", "operation label"]),
            _ => self.error(&["`;`", "action"]),
        }
    }

    fn rhs(&mut self) -> PResult<RhsExpr> {
        let left = self.term()?;
        if let Tok::Label(l) = *self.peek() {
            self.bump();
            let right = self.term()?;
            return Ok(RhsExpr::binary(l, left, right));
        }
        Ok(left)
    }

    fn term(&mut self) -> PResult<RhsExpr> {
        match self.peek().clone() {
            Tok::LParen => {
                self.bump();
                let e = self.rhs()?;
                if *self.peek() == Tok::Shl {
                    return Err(ParseError::new(
                        self.span(),
                        "`<<` is only allowed at statement level",
                        Vec::new(),
                    ));
                }
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Minus | Tok::Int(_) | Tok::Float(_) => self.scalar_lit(),
            Tok::Ident(s) if s == "inf" || s == "true" || s == "false" => self.scalar_lit(),
            Tok::Ident(s) => match self.peek_at(1) {
                Tok::LBracket => Ok(RhsExpr::Leaf(self.access()?)),
                Tok::LParen => {
                    self.bump();
                    self.bump();
                    let mut a = self.access()?;
                    self.expect(Tok::RParen)?;
                    a.unary = Some(s);
                    Ok(RhsExpr::Leaf(a))
                }
                _ => {
                    self.bump();
                    Ok(RhsExpr::RankVar(s))
                }
            },
            _ => self.error(&["tensor access", "rank variable", "literal", "`(`"]),
        }
    }

    fn scalar_lit(&mut self) -> PResult<RhsExpr> {
        let span = self.span();
        let text = self.literal_text()?;
        let v = if text == "true" || text == "false" {
            Scalar::parse_as(&text, DType::Bool)
        } else if text.contains('.') {
            Scalar::parse_as(&text, DType::Float)
        } else {
            Scalar::parse_as(&text, DType::Int)
        };
        v.map(RhsExpr::Lit)
            .ok_or_else(|| ParseError::new(span, format!("bad literal `{text}`"), Vec::new()))
    }

    fn access(&mut self) -> PResult<Access> {
        let tensor = self.ident("tensor name")?;
        self.expect(Tok::LBracket)?;
        let mut subs = Vec::new();
        if !self.eat(&Tok::RBracket) {
            loop {
                subs.push(self.subscript()?);
                if self.eat(&Tok::RBracket) {
                    break;
                }
                if *self.peek() != Tok::Comma {
                    return self.error(&["`,`", "`]`"]);
                }
                self.bump();
            }
        }
        Ok(Access {
            tensor,
            subs,
            unary: None,
        })
    }

    fn subscript(&mut self) -> PResult<Subscript> {
        if let (Tok::Ident(v), true) = (self.peek().clone(), self.kw_at(1, "in")) {
            self.bump();
            self.bump();
            let list = self.ident("list name")?;
            return Ok(Subscript {
                expr: RankExpr::Var(v.clone()),
                constraint: Some(BoolCond::InList(v, list)),
                mutable: false,
            });
        }
        let expr = self.rank_expr()?;
        let mutable = self.eat(&Tok::Star);
        let constraint = if self.eat(&Tok::Colon) {
            Some(self.cond()?)
        } else {
            None
        };
        Ok(Subscript {
            expr,
            constraint,
            mutable,
        })
    }

    fn int(&mut self) -> PResult<i64> {
        match *self.peek() {
            Tok::Int(v) => {
                self.bump();
                Ok(v)
            }
            _ => self.error(&["integer"]),
        }
    }

    fn rank_expr(&mut self) -> PResult<RankExpr> {
        match self.peek().clone() {
            Tok::Minus => {
                self.bump();
                Ok(RankExpr::Const(-self.int()?))
            }
            Tok::Int(v) => {
                self.bump();
                Ok(RankExpr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let c = self.cond()?;
                self.expect(Tok::Question)?;
                let a = self.rank_expr()?;
                self.expect(Tok::Colon)?;
                let b = self.rank_expr()?;
                self.expect(Tok::RParen)?;
                Ok(RankExpr::Ternary(Box::new(c), Box::new(a), Box::new(b)))
            }
            Tok::Ident(f) if (f == "min" || f == "max") && *self.peek_at(1) == Tok::LParen => {
                self.bump();
                self.bump();
                let a = self.ident("rank variable")?;
                self.expect(Tok::Comma)?;
                let b = self.ident("rank variable")?;
                self.expect(Tok::RParen)?;
                Ok(if f == "min" {
                    RankExpr::MinOf(a, b)
                } else {
                    RankExpr::MaxOf(a, b)
                })
            }
            Tok::Ident(v) => {
                self.bump();
                if self.eat(&Tok::Plus) {
                    match self.peek().clone() {
                        Tok::Int(k) => {
                            self.bump();
                            Ok(RankExpr::Offset(v, k))
                        }
                        Tok::Ident(w) => {
                            self.bump();
                            Ok(RankExpr::Sum(v, w))
                        }
                        _ => self.error(&["integer", "rank variable"]),
                    }
                } else if self.eat(&Tok::Minus) {
                    Ok(RankExpr::Offset(v, -self.int()?))
                } else {
                    Ok(RankExpr::Var(v))
                }
            }
            _ => self.error(&["rank expression"]),
        }
    }

    fn cond(&mut self) -> PResult<BoolCond> {
        let mut c = self.cond_atom()?;
        while self.eat(&Tok::AndAnd) {
            let r = self.cond_atom()?;
            c = BoolCond::And(Box::new(c), Box::new(r));
        }
        Ok(c)
    }

    fn cond_atom(&mut self) -> PResult<BoolCond> {
        if let (Tok::Ident(v), true) = (self.peek().clone(), self.kw_at(1, "in")) {
            self.bump();
            self.bump();
            let list = self.ident("list name")?;
            return Ok(BoolCond::InList(v, list));
        }
        let a = self.rank_expr()?;
        let op = match self.peek() {
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            Tok::EqEq => CmpOp::Eq,
            Tok::NotEq => CmpOp::Ne,
            _ => return self.error(&["comparison operator"]),
        };
        self.bump();
        let b = self.rank_expr()?;
        Ok(BoolCond::Compare(a, op, b))
    }

    fn rank_list(&mut self, allow_star: bool) -> PResult<Vec<String>> {
        let mut out = Vec::new();
        if *self.peek() == Tok::Semi || *self.peek() == Tok::RParen {
            return Ok(out);
        }
        loop {
            out.push(self.ident("rank variable")?);
            if allow_star {
                self.eat(&Tok::Star);
            }
            if !self.eat(&Tok::Comma) {
                return Ok(out);
            }
        }
    }

    fn action(&mut self) -> PResult<Action> {
        let span = self.span();
        let kind = self.ident("action")?;
        match kind.as_str() {
            "map" | "reduce" => {
                let label = match *self.peek() {
                    Tok::Label(l) => {
                        self.bump();
                        Some(l)
                    }
                    _ if kind == "map" => return self.error(&["operation label"]),
                    _ => None,
                };
                self.expect(Tok::LParen)?;
                let ranks = self.rank_list(false)?;
                self.expect(Tok::Semi)?;
                let compute = self.ident("compute operator")?;
                let merge = if self.eat(&Tok::Semi) {
                    self.ident("merge operator")?
                } else {
                    "pass".into()
                };
                self.expect(Tok::RParen)?;
                Ok(match label {
                    Some(label) if kind == "map" => Action::Map {
                        label,
                        ranks,
                        compute,
                        merge,
                    },
                    label => Action::Reduce {
                        label,
                        ranks,
                        compute,
                        merge,
                    },
                })
            }
            "populate" => {
                self.expect(Tok::LParen)?;
                let ranks = self.rank_list(true)?;
                let mut compute = String::from("pass");
                let mut coord = CoordSpec::pass();
                if self.eat(&Tok::Semi) {
                    compute = self.ident("unary operator")?;
                    if self.eat(&Tok::Semi) {
                        coord.name = self.ident("coordinate operator")?;
                        if self.eat(&Tok::LParen) {
                            let k = self.int()?;
                            if k <= 0 {
                                self.pos -= 1;
                                return self.error(&["positive count"]);
                            }
                            coord.count = Some(k as u64);
                            self.expect(Tok::RParen)?;
                        }
                    }
                }
                self.expect(Tok::RParen)?;
                Ok(Action::Populate {
                    ranks,
                    compute,
                    coord,
                })
            }
            _ => Err(ParseError::new(
                span,
                format!("unknown action `{kind}`"),
                ["`map`", "`reduce`", "`populate`"].iter().map(|s| s.to_string()).collect(),
            )),
        }
    }
}

#[cfg(test)]
mod tests;
