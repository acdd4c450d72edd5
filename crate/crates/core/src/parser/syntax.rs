//! Concrete syntax tree and recursive-descent parser.

use super::lexer::{Tok, Token};
use super::{Diagnostic, Span};

pub const KEYWORDS: &[&str] = &[
    "asm",
    "enum",
    "controlled",
    "monitored",
    "static",
    "ctlstate",
    "unsafe",
    "assume",
    "protected",
    "plain",
    "responses",
    "inittoken",
    "condx",
    "rule",
    "if",
    "then",
    "else",
    "endif",
    "par",
    "endpar",
    "choose",
    "in",
    "do",
    "endchoose",
    "let",
    "endlet",
    "and",
    "or",
    "not",
    "true",
    "false",
    "ite",
    "with",
    "bool",
    "int",
    "enc",
    "choosectl",
    "challenge",
    "init",
];

#[derive(Clone, Debug)]
pub struct RTerm {
    pub kind: RTermKind,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub enum RTermKind {
    Ident(String),
    App(String, Vec<RTerm>),
    Int(i64),
    Bool(bool),
    Not(Box<RTerm>),
    And(Box<RTerm>, Box<RTerm>),
    Or(Box<RTerm>, Box<RTerm>),
    Eq(Box<RTerm>, Box<RTerm>),
    Neq(Box<RTerm>, Box<RTerm>),
    In(Box<RTerm>, Vec<RTerm>),
    EncIn(Box<RTerm>, Vec<(RTerm, Vec<u64>)>),
    Ite(Box<RTerm>, Box<RTerm>, Box<RTerm>),
}

#[derive(Clone, Debug)]
pub enum RSort {
    Bool,
    Int(i64, i64),
    Named(String),
}

#[derive(Clone, Debug)]
pub struct SpannedSort {
    pub sort: RSort,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub enum RChooseSet {
    Values(Vec<RTerm>),
    Sort(SpannedSort, Option<RTerm>),
}

#[derive(Clone, Debug)]
pub struct RStmt {
    pub kind: RStmtKind,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub enum RStmtKind {
    If(RTerm, Vec<RStmt>, Option<Vec<RStmt>>),
    Update(String, Vec<RTerm>, RTerm),
    Par(Vec<RStmt>),
    Choose(String, RChooseSet, Vec<RStmt>),
    Let(String, RTerm, Vec<RStmt>),
    Call(String, Vec<RTerm>),
    ChooseCtl(u64),
}

#[derive(Clone, Debug)]
pub enum RInit {
    Single(RTerm),
    /// Entries keyed by argument tuple; `None` is the `_` default entry.
    Map(Vec<(Option<Vec<RTerm>>, RTerm, Span)>),
}

#[derive(Clone, Debug)]
pub enum RDeclKind {
    Enum(String, Vec<(String, Span)>),
    Func {
        mode: crate::ast::Mode,
        name: String,
        args: Vec<SpannedSort>,
        result: SpannedSort,
        init: Option<RInit>,
    },
    CtlState(String),
    Unsafe(RTerm),
    Assume(RTerm, RTerm),
    Protected {
        ctl: String,
        plain: SpannedSort,
        responses: u64,
        init_token: u64,
    },
    CondX(String, RTerm),
}

#[derive(Clone, Debug)]
pub struct RDecl {
    pub kind: RDeclKind,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct RRule {
    pub name: String,
    pub params: Option<Vec<(String, SpannedSort)>>,
    pub body: Vec<RStmt>,
    pub span: Span,
}

#[derive(Clone, Debug)]
pub struct RProgram {
    pub name: String,
    pub decls: Vec<RDecl>,
    pub rules: Vec<RRule>,
}

pub struct Parser {
    toks: Vec<Token>,
    pos: usize,
    eof: Span,
}

type PResult<T> = Result<T, Diagnostic>;

const STMT_END: &[&str] = &["else", "endif", "endpar", "endchoose", "endlet", "rule"];

impl Parser {
    pub fn new(toks: Vec<Token>, eof: Span) -> Self {
        Parser { toks, pos: 0, eof }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn span(&self) -> Span {
        self.toks.get(self.pos).map(|t| t.span).unwrap_or(self.eof)
    }

    fn prev_span(&self) -> Span {
        self.pos
            .checked_sub(1)
            .and_then(|p| self.toks.get(p))
            .map(|t| t.span)
            .unwrap_or(self.eof)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        Err(Diagnostic::error("E-SYNTAX", msg, self.span()))
    }

    fn found(&self) -> String {
        match self.peek() {
            Some(t) => t.to_string(),
            None => "end of input".to_string(),
        }
    }

    fn expect_kw(&mut self, kw: &str) -> PResult<Span> {
        if self.is_kw(kw) {
            let s = self.span();
            self.pos += 1;
            Ok(s)
        } else {
            self.error(format!("expected `{kw}`, found {}", self.found()))
        }
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.peek() == Some(t) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, t: Tok) -> PResult<Span> {
        if self.peek() == Some(&t) {
            let s = self.span();
            self.pos += 1;
            Ok(s)
        } else {
            self.error(format!("expected {t}, found {}", self.found()))
        }
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                let span = self.span();
                self.pos += 1;
                Ok((s, span))
            }
            _ => self.error(format!("expected identifier, found {}", self.found())),
        }
    }

    fn uint(&mut self) -> PResult<u64> {
        match self.peek() {
            Some(Tok::Int(i)) => {
                let i = *i;
                self.pos += 1;
                Ok(i)
            }
            _ => self.error(format!("expected integer, found {}", self.found())),
        }
    }

    fn sint(&mut self) -> PResult<i64> {
        let neg = self.eat(&Tok::Minus);
        let span = self.span();
        let u = self.uint()?;
        let v = i64::try_from(u)
            .map_err(|_| Diagnostic::error("E-SYNTAX", "integer out of range", span))?;
        Ok(if neg { -v } else { v })
    }

    pub fn program(&mut self) -> PResult<RProgram> {
        self.expect_kw("asm")?;
        let (name, _) = self.ident()?;
        let mut decls = Vec::new();
        while !self.is_kw("rule") {
            if self.peek().is_none() {
                return self.error("expected at least one `rule`");
            }
            decls.push(self.decl()?);
        }
        let mut rules = Vec::new();
        while self.peek().is_some() {
            rules.push(self.rule_def()?);
        }
        Ok(RProgram { name, decls, rules })
    }

    fn sort(&mut self) -> PResult<SpannedSort> {
        let span = self.span();
        let sort = if self.is_kw("bool") {
            self.pos += 1;
            RSort::Bool
        } else if self.is_kw("int") {
            self.pos += 1;
            self.expect(Tok::LBracket)?;
            let lo = self.sint()?;
            self.expect(Tok::DotDot)?;
            let hi = self.sint()?;
            self.expect(Tok::RBracket)?;
            RSort::Int(lo, hi)
        } else {
            RSort::Named(self.ident()?.0)
        };
        Ok(SpannedSort { sort, span })
    }

    fn decl(&mut self) -> PResult<RDecl> {
        let span = self.span();
        let kw = match self.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => return self.error(format!("expected a declaration, found {}", self.found())),
        };
        self.pos += 1;
        let kind = match kw.as_str() {
            "enum" => {
                let (name, _) = self.ident()?;
                self.expect(Tok::Eq)?;
                self.expect(Tok::LBrace)?;
                let mut lits = Vec::new();
                if !self.eat(&Tok::RBrace) {
                    loop {
                        lits.push(self.ident()?);
                        if self.eat(&Tok::RBrace) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                RDeclKind::Enum(name, lits)
            }
            "controlled" | "monitored" | "static" => {
                let mode = match kw.as_str() {
                    "controlled" => crate::ast::Mode::Controlled,
                    "monitored" => crate::ast::Mode::Monitored,
                    _ => crate::ast::Mode::Static,
                };
                let (name, _) = self.ident()?;
                let mut args = Vec::new();
                if self.eat(&Tok::Colon) {
                    loop {
                        args.push(self.sort()?);
                        if self.eat(&Tok::Arrow) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                let result = self.sort()?;
                let init = if self.is_kw("init") {
                    self.pos += 1;
                    Some(self.init_map()?)
                } else {
                    None
                };
                RDeclKind::Func {
                    mode,
                    name,
                    args,
                    result,
                    init,
                }
            }
            "ctlstate" => RDeclKind::CtlState(self.ident()?.0),
            "unsafe" => RDeclKind::Unsafe(self.formula()?),
            "assume" => {
                let lhs = self.atom()?;
                self.expect(Tok::Eq)?;
                RDeclKind::Assume(lhs, self.formula()?)
            }
            "protected" => {
                let (ctl, _) = self.ident()?;
                self.expect_kw("plain")?;
                let plain = self.sort()?;
                self.expect_kw("responses")?;
                let responses = self.uint()?;
                self.expect_kw("inittoken")?;
                let init_token = self.uint()?;
                RDeclKind::Protected {
                    ctl,
                    plain,
                    responses,
                    init_token,
                }
            }
            "condx" => {
                let (var, _) = self.ident()?;
                self.expect(Tok::Colon)?;
                RDeclKind::CondX(var, self.formula()?)
            }
            _ => {
                self.pos -= 1;
                return self.error(format!("expected a declaration, found {}", self.found()));
            }
        };
        Ok(RDecl { kind, span })
    }

    fn init_map(&mut self) -> PResult<RInit> {
        if !self.eat(&Tok::LBrace) {
            return Ok(RInit::Single(self.atom()?));
        }
        let mut entries = Vec::new();
        loop {
            let span = self.span();
            let key = if self.eat(&Tok::Underscore) {
                None
            } else if self.eat(&Tok::LParen) {
                let mut k = Vec::new();
                loop {
                    k.push(self.atom()?);
                    if self.eat(&Tok::RParen) {
                        break;
                    }
                    self.expect(Tok::Comma)?;
                }
                Some(k)
            } else {
                Some(vec![self.atom()?])
            };
            self.expect(Tok::Arrow)?;
            let value = self.atom()?;
            entries.push((key, value, span));
            if self.eat(&Tok::RBrace) {
                break;
            }
            self.expect(Tok::Comma)?;
        }
        Ok(RInit::Map(entries))
    }

    fn rule_def(&mut self) -> PResult<RRule> {
        let span = self.expect_kw("rule")?;
        let (name, _) = self.ident()?;
        let params = if self.eat(&Tok::LParen) {
            let mut ps = Vec::new();
            if !self.eat(&Tok::RParen) {
                loop {
                    let (p, _) = self.ident()?;
                    self.expect(Tok::Colon)?;
                    ps.push((p, self.sort()?));
                    if self.eat(&Tok::RParen) {
                        break;
                    }
                    self.expect(Tok::Comma)?;
                }
            }
            Some(ps)
        } else {
            None
        };
        self.expect(Tok::Colon)?;
        let body = self.stmts()?;
        Ok(RRule {
            name,
            params,
            body,
            span,
        })
    }

    /// One or more statements, up to a block terminator.
    fn stmts(&mut self) -> PResult<Vec<RStmt>> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => break,
                Some(Tok::Ident(s)) if STMT_END.contains(&s.as_str()) => break,
                _ => out.push(self.stmt()?),
            }
        }
        if out.is_empty() {
            return self.error(format!("expected a statement, found {}", self.found()));
        }
        Ok(out)
    }

    fn stmt(&mut self) -> PResult<RStmt> {
        let span = self.span();
        let kind = if self.is_kw("if") {
            self.pos += 1;
            let guard = self.formula()?;
            self.expect_kw("then")?;
            let then_b = self.stmts()?;
            let else_b = if self.is_kw("else") {
                self.pos += 1;
                Some(self.stmts()?)
            } else {
                None
            };
            self.expect_kw("endif")?;
            RStmtKind::If(guard, then_b, else_b)
        } else if self.is_kw("par") {
            self.pos += 1;
            // an empty block is a skip
            let body = if self.is_kw("endpar") {
                Vec::new()
            } else {
                self.stmts()?
            };
            self.expect_kw("endpar")?;
            RStmtKind::Par(body)
        } else if self.is_kw("choose") {
            self.pos += 1;
            let (var, _) = self.ident()?;
            self.expect_kw("in")?;
            let set = if self.peek() == Some(&Tok::LBrace) {
                RChooseSet::Values(self.set_literal()?)
            } else {
                let sort = self.sort()?;
                let pred = if self.is_kw("with") {
                    self.pos += 1;
                    Some(self.formula()?)
                } else {
                    None
                };
                RChooseSet::Sort(sort, pred)
            };
            self.expect_kw("do")?;
            let body = self.stmts()?;
            self.expect_kw("endchoose")?;
            RStmtKind::Choose(var, set, body)
        } else if self.is_kw("let") {
            self.pos += 1;
            let (var, _) = self.ident()?;
            self.expect(Tok::Eq)?;
            let value = self.formula()?;
            self.expect_kw("in")?;
            let body = self.stmts()?;
            self.expect_kw("endlet")?;
            RStmtKind::Let(var, value, body)
        } else if self.is_kw("choosectl") {
            self.pos += 1;
            self.expect_kw("challenge")?;
            RStmtKind::ChooseCtl(self.uint()?)
        } else {
            let (name, _) = self.ident()?;
            let args = if self.peek() == Some(&Tok::LParen) {
                Some(self.args()?)
            } else {
                None
            };
            if self.eat(&Tok::Assign) {
                RStmtKind::Update(name, args.unwrap_or_default(), self.formula()?)
            } else if let Some(args) = args {
                RStmtKind::Call(name, args)
            } else {
                return self.error(format!("expected `:=` or `(`, found {}", self.found()));
            }
        };
        Ok(RStmt {
            kind,
            span: span_to(span, self.prev_span()),
        })
    }

    fn args(&mut self) -> PResult<Vec<RTerm>> {
        self.expect(Tok::LParen)?;
        let mut out = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(out);
        }
        loop {
            out.push(self.formula()?);
            if self.eat(&Tok::RParen) {
                return Ok(out);
            }
            self.expect(Tok::Comma)?;
        }
    }

    fn set_literal(&mut self) -> PResult<Vec<RTerm>> {
        self.expect(Tok::LBrace)?;
        let mut out = Vec::new();
        if self.eat(&Tok::RBrace) {
            return Ok(out);
        }
        loop {
            out.push(self.atom()?);
            if self.eat(&Tok::RBrace) {
                return Ok(out);
            }
            self.expect(Tok::Comma)?;
        }
    }

    pub fn formula(&mut self) -> PResult<RTerm> {
        let mut lhs = self.conjunction()?;
        while self.is_kw("or") {
            self.pos += 1;
            let rhs = self.conjunction()?;
            let span = span_to(lhs.span, rhs.span);
            lhs = RTerm {
                kind: RTermKind::Or(Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn conjunction(&mut self) -> PResult<RTerm> {
        let mut lhs = self.negation()?;
        while self.is_kw("and") {
            self.pos += 1;
            let rhs = self.negation()?;
            let span = span_to(lhs.span, rhs.span);
            lhs = RTerm {
                kind: RTermKind::And(Box::new(lhs), Box::new(rhs)),
                span,
            };
        }
        Ok(lhs)
    }

    fn negation(&mut self) -> PResult<RTerm> {
        if self.is_kw("not") {
            let span = self.span();
            self.pos += 1;
            let inner = self.negation()?;
            let span = span_to(span, inner.span);
            return Ok(RTerm {
                kind: RTermKind::Not(Box::new(inner)),
                span,
            });
        }
        self.comparison()
    }

    fn comparison(&mut self) -> PResult<RTerm> {
        let lhs = self.atom()?;
        if self.eat(&Tok::Eq) {
            let rhs = self.atom()?;
            let span = span_to(lhs.span, rhs.span);
            return Ok(RTerm {
                kind: RTermKind::Eq(Box::new(lhs), Box::new(rhs)),
                span,
            });
        }
        if self.eat(&Tok::Neq) {
            let rhs = self.atom()?;
            let span = span_to(lhs.span, rhs.span);
            return Ok(RTerm {
                kind: RTermKind::Neq(Box::new(lhs), Box::new(rhs)),
                span,
            });
        }
        if self.is_kw("in")
            && (self.peek_at(1) == Some(&Tok::LBrace)
                || matches!(self.peek_at(1), Some(Tok::Ident(s)) if s == "enc"))
        {
            self.pos += 1;
            if self.is_kw("enc") {
                self.pos += 1;
                self.expect(Tok::LBrace)?;
                let mut table = Vec::new();
                if !self.eat(&Tok::RBrace) {
                    loop {
                        let key = self.atom()?;
                        self.expect(Tok::Colon)?;
                        self.expect(Tok::LBracket)?;
                        let mut rs = Vec::new();
                        if !self.eat(&Tok::RBracket) {
                            loop {
                                rs.push(self.uint()?);
                                if self.eat(&Tok::RBracket) {
                                    break;
                                }
                                self.expect(Tok::Comma)?;
                            }
                        }
                        table.push((key, rs));
                        if self.eat(&Tok::RBrace) {
                            break;
                        }
                        self.expect(Tok::Comma)?;
                    }
                }
                let span = span_to(lhs.span, self.prev_span());
                return Ok(RTerm {
                    kind: RTermKind::EncIn(Box::new(lhs), table),
                    span,
                });
            }
            let set = self.set_literal()?;
            let span = span_to(lhs.span, self.prev_span());
            return Ok(RTerm {
                kind: RTermKind::In(Box::new(lhs), set),
                span,
            });
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> PResult<RTerm> {
        let span = self.span();
        match self.peek().cloned() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.formula()?;
                self.expect(Tok::RParen)?;
                Ok(inner)
            }
            Some(Tok::Int(_)) | Some(Tok::Minus) => {
                let v = self.sint()?;
                Ok(RTerm {
                    kind: RTermKind::Int(v),
                    span: span_to(span, self.prev_span()),
                })
            }
            Some(Tok::Ident(s)) if s == "true" || s == "false" => {
                self.pos += 1;
                Ok(RTerm {
                    kind: RTermKind::Bool(s == "true"),
                    span,
                })
            }
            Some(Tok::Ident(s)) if s == "ite" => {
                self.pos += 1;
                self.expect(Tok::LParen)?;
                let c = self.formula()?;
                self.expect(Tok::Comma)?;
                let a = self.formula()?;
                self.expect(Tok::Comma)?;
                let b = self.formula()?;
                self.expect(Tok::RParen)?;
                Ok(RTerm {
                    kind: RTermKind::Ite(Box::new(c), Box::new(a), Box::new(b)),
                    span: span_to(span, self.prev_span()),
                })
            }
            Some(Tok::Ident(_)) => {
                let (name, _) = self.ident()?;
                if self.peek() == Some(&Tok::LParen) {
                    let args = self.args()?;
                    Ok(RTerm {
                        kind: RTermKind::App(name, args),
                        span: span_to(span, self.prev_span()),
                    })
                } else {
                    Ok(RTerm {
                        kind: RTermKind::Ident(name),
                        span,
                    })
                }
            }
            _ => self.error(format!("expected a term, found {}", self.found())),
        }
    }
}

/// Span from the start of `a` to the end of `b` when both sit on one line.
pub fn span_to(a: Span, b: Span) -> Span {
    if a.line == b.line && b.col >= a.col {
        Span {
            len: b.col + b.len - a.col,
            ..a
        }
    } else {
        a
    }
}
