use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use super::{Condition, EnvSpec, InterfaceBinding, Meta, OracleSpec, Scenario, Step, Value};
use crate::analysis::Method;
use crate::item_model::InterfaceKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DslErrorKind {
    Syntax,
    Semantic,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} error at {line}:{column}: {message}")]
pub struct DslError {
    pub kind: DslErrorKind,
    pub line: usize,
    pub column: usize,
    pub message: String,
}

pub fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_patname(s: &str) -> bool {
    s.starts_with(|c: char| c.is_ascii_uppercase())
        && s.chars().all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Str(String),
    Int(u64),
    Hex(Vec<u8>),
    Placeholder(String),
    Punct(char),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(_) => f.write_str("a string"),
            Tok::Int(_) => f.write_str("a number"),
            Tok::Hex(_) => f.write_str("hex bytes"),
            Tok::Placeholder(p) => write!(f, "`${p}`"),
            Tok::Punct(c) => write!(f, "`{c}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: usize,
    column: usize,
}

fn err(kind: DslErrorKind, pos: Pos, message: impl Into<String>) -> DslError {
    DslError {
        kind,
        line: pos.line,
        column: pos.column,
        message: message.into(),
    }
}

fn syntax(pos: Pos, message: impl Into<String>) -> DslError {
    err(DslErrorKind::Syntax, pos, message)
}

fn semantic(pos: Pos, message: impl Into<String>) -> DslError {
    err(DslErrorKind::Semantic, pos, message)
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    pos: Pos,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            chars: src.chars().peekable(),
            pos: Pos { line: 1, column: 1 },
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.pos.line += 1;
            self.pos.column = 1;
        } else {
            self.pos.column += 1;
        }
        Some(c)
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(&c) = self.chars.peek() {
            if !f(c) {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    fn tokens(mut self) -> Result<Vec<(Tok, Pos)>, DslError> {
        let mut out = Vec::new();
        loop {
            while let Some(&c) = self.chars.peek() {
                if c == '#' {
                    self.take_while(|c| c != '\n');
                } else if c.is_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let start = self.pos;
            let Some(&c) = self.chars.peek() else {
                out.push((Tok::Eof, start));
                return Ok(out);
            };
            let tok = match c {
                '{' | '}' | '(' | ')' | ':' | ',' | '=' | '.' => {
                    self.bump();
                    Tok::Punct(c)
                }
                '"' => self.string(start)?,
                '$' => {
                    self.bump();
                    let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
                    if !is_ident(&name) {
                        return Err(syntax(start, "`$` must be followed by a placeholder name"));
                    }
                    Tok::Placeholder(name)
                }
                '0'..='9' => self.number(start)?,
                c if c.is_ascii_alphabetic() || c == '_' => {
                    Tok::Ident(self.take_while(|c| c.is_ascii_alphanumeric() || c == '_'))
                }
                other => return Err(syntax(start, format!("unexpected character `{other}`"))),
            };
            out.push((tok, start));
        }
    }

    fn string(&mut self, start: Pos) -> Result<Tok, DslError> {
        self.bump();
        let mut s = String::new();
        loop {
            let here = self.pos;
            match self.bump() {
                None | Some('\n') => return Err(syntax(start, "unterminated string")),
                Some('"') => return Ok(Tok::Str(s)),
                Some('\\') => match self.bump() {
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    _ => return Err(syntax(here, "unknown escape sequence")),
                },
                Some(c) => s.push(c),
            }
        }
    }

    fn number(&mut self, start: Pos) -> Result<Tok, DslError> {
        let first = self.bump().expect("peeked");
        if first == '0' && matches!(self.chars.peek(), Some('x' | 'X')) {
            self.bump();
            let digits = self.take_while(|c| c.is_ascii_alphanumeric());
            if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_hexdigit()) {
                return Err(syntax(start, "`0x` must be followed by hex digits"));
            }
            if !digits.len().is_multiple_of(2) {
                return Err(syntax(start, "hex bytes need an even number of digits"));
            }
            let bytes = crate::sut_sim::parse_hex(&digits).expect("checked hex");
            return Ok(Tok::Hex(bytes));
        }
        let mut digits = first.to_string();
        digits.push_str(&self.take_while(|c| c.is_ascii_digit()));
        digits
            .parse()
            .map(Tok::Int)
            .map_err(|_| syntax(start, "number does not fit in 64 bits"))
    }
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek2(&self) -> &Tok {
        &self.toks[(self.at + 1).min(self.toks.len() - 1)].0
    }

    fn next(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn punct(&mut self, c: char) -> Result<(), DslError> {
        match self.next() {
            (Tok::Punct(p), _) if p == c => Ok(()),
            (t, pos) => Err(syntax(pos, format!("expected `{c}`, found {t}"))),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<Pos, DslError> {
        match self.next() {
            (Tok::Ident(s), pos) if s == kw => Ok(pos),
            (t, pos) => Err(syntax(pos, format!("expected `{kw}`, found {t}"))),
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Pos), DslError> {
        match self.next() {
            (Tok::Ident(s), pos) => Ok((s, pos)),
            (t, pos) => Err(syntax(pos, format!("expected {what}, found {t}"))),
        }
    }

    fn at_punct(&self, c: char) -> bool {
        *self.peek() == Tok::Punct(c)
    }

    fn value(&mut self) -> Result<(Value, Pos), DslError> {
        let (t, pos) = self.next();
        let v = match t {
            Tok::Str(s) => Value::Str(s),
            Tok::Int(n) => Value::Int(n),
            Tok::Hex(b) => Value::Hex(b),
            Tok::Placeholder(p) => Value::Placeholder(p),
            t => return Err(syntax(pos, format!("expected a value, found {t}"))),
        };
        Ok((v, pos))
    }

    fn scenario(&mut self) -> Result<Scenario, DslError> {
        self.keyword("scenario")?;
        let (id, id_pos) = match self.next() {
            (Tok::Str(s), pos) => (s, pos),
            (t, pos) => return Err(syntax(pos, format!("expected the scenario id string, found {t}"))),
        };
        if id.is_empty() {
            return Err(semantic(id_pos, "scenario id must be non-empty"));
        }
        self.punct('{')?;
        let meta = self.meta()?;
        let env = self.env()?;
        let steps = self.steps()?;
        let oracle = self.oracle()?;
        self.punct('}')?;
        match self.next() {
            (Tok::Eof, _) => {}
            (t, pos) => return Err(syntax(pos, format!("expected end of input, found {t}"))),
        }
        Ok(Scenario {
            id,
            meta,
            env,
            steps,
            oracle,
        }
        .normalized())
    }

    fn meta(&mut self) -> Result<Meta, DslError> {
        let open = self.keyword("meta")?;
        self.punct('{')?;
        let mut method = None;
        let mut meta = Meta::new(Method::Functional);
        while !self.at_punct('}') {
            let (key, key_pos) = self.ident("a meta key")?;
            self.punct(':')?;
            let (value, pos) = self.value()?;
            let text = |v: &Value| -> Result<String, DslError> {
                v.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| semantic(pos, format!("`{key}` takes a string")))
            };
            match key.as_str() {
                "method" => {
                    if method.is_some() {
                        return Err(semantic(key_pos, "`method` given twice"));
                    }
                    let s = text(&value)?;
                    method = Some(Method::parse(&s).ok_or_else(|| semantic(pos, format!("unknown method `{s}`")))?);
                }
                "requirement_ref" => meta.requirement_refs.push(text(&value)?),
                "threat_ref" => meta.threat_refs.push(text(&value)?),
                "risk_ref" => {
                    if meta.risk_ref.replace(text(&value)?).is_some() {
                        return Err(semantic(key_pos, "`risk_ref` given twice"));
                    }
                }
                "domain" => match value {
                    Value::Placeholder(p) => meta.domains.push(p),
                    _ => return Err(semantic(pos, "`domain` takes a placeholder")),
                },
                _ => {
                    if meta.extra.insert(key.clone(), value).is_some() {
                        return Err(semantic(key_pos, format!("meta key `{key}` given twice")));
                    }
                }
            }
        }
        self.punct('}')?;
        meta.method = method.ok_or_else(|| semantic(open, "meta block lacks `method`"))?;
        Ok(meta)
    }

    fn env(&mut self) -> Result<EnvSpec, DslError> {
        self.keyword("env")?;
        self.punct('{')?;
        let mut env = EnvSpec::default();
        while !self.at_punct('}') {
            let (kw, kw_pos) = self.ident("`interface` or `precondition`")?;
            match kw.as_str() {
                "interface" => {
                    let (name, name_pos) = self.ident("a logical interface name")?;
                    let (kind, kind_pos) = self.ident("an interface kind")?;
                    let kind = InterfaceKind::parse(&kind)
                        .ok_or_else(|| semantic(kind_pos, format!("unknown interface kind `{kind}`")))?;
                    let mut params = BTreeMap::new();
                    while matches!(self.peek(), Tok::Ident(_)) && *self.peek2() == Tok::Punct('=') {
                        let (k, k_pos) = self.ident("a parameter name")?;
                        self.punct('=')?;
                        let (v, _) = self.value()?;
                        if params.insert(k.clone(), v).is_some() {
                            return Err(semantic(k_pos, format!("parameter `{k}` given twice")));
                        }
                    }
                    if env.interfaces.insert(name.clone(), InterfaceBinding { kind, params }).is_some() {
                        return Err(semantic(name_pos, format!("duplicate logical interface `{name}`")));
                    }
                }
                "precondition" => {
                    let (name, _) = self.ident("a precondition name")?;
                    env.preconditions.push(name);
                }
                other => {
                    return Err(syntax(kw_pos, format!("expected `interface` or `precondition`, found `{other}`")))
                }
            }
        }
        self.punct('}')?;
        Ok(env)
    }

    fn args(&mut self) -> Result<BTreeMap<String, Value>, DslError> {
        self.punct('(')?;
        let mut args = BTreeMap::new();
        if !self.at_punct(')') {
            loop {
                let (k, k_pos) = self.ident("an argument name")?;
                self.punct('=')?;
                let (v, _) = self.value()?;
                if args.insert(k.clone(), v).is_some() {
                    return Err(semantic(k_pos, format!("argument `{k}` given twice")));
                }
                if self.at_punct(',') {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.punct(')')?;
        Ok(args)
    }

    fn steps(&mut self) -> Result<Vec<Step>, DslError> {
        let open = self.keyword("steps")?;
        self.punct('{')?;
        let mut steps = Vec::new();
        while !self.at_punct('}') {
            let (kw, kw_pos) = self.ident("`pattern` or `expect`")?;
            if kw != "pattern" && kw != "expect" {
                return Err(syntax(kw_pos, format!("expected `pattern` or `expect`, found `{kw}`")));
            }
            let (name, name_pos) = self.ident("a pattern name")?;
            if !is_patname(&name) {
                return Err(syntax(name_pos, format!("pattern names are uppercase, found `{name}`")));
            }
            let args = self.args()?;
            if kw == "pattern" {
                steps.push(Step::Pattern { name, args });
                continue;
            }
            let mut within_ms = None;
            if *self.peek() == Tok::Ident("within".into()) {
                self.next();
                let (ms, ms_pos) = match self.next() {
                    (Tok::Int(n), pos) => (n, pos),
                    (t, pos) => return Err(syntax(pos, format!("expected a duration, found {t}"))),
                };
                self.keyword("ms")?;
                if ms == 0 {
                    return Err(semantic(ms_pos, "`within` must be positive"));
                }
                within_ms = Some(ms);
            }
            steps.push(Step::Expect {
                matcher: name,
                args,
                within_ms,
            });
        }
        self.punct('}')?;
        if steps.is_empty() {
            return Err(semantic(open, "a scenario needs at least one step"));
        }
        Ok(steps)
    }

    fn condition(&mut self) -> Result<Condition, DslError> {
        let mut parts = vec![self.ident("a condition name")?.0];
        while self.at_punct('.') {
            self.next();
            parts.push(self.ident("a condition segment")?.0);
        }
        Ok(Condition(parts))
    }

    fn oracle(&mut self) -> Result<OracleSpec, DslError> {
        self.keyword("oracle")?;
        self.punct('{')?;
        self.keyword("pass")?;
        self.punct(':')?;
        let pass = self.condition()?;
        self.keyword("fail")?;
        self.punct(':')?;
        let fail = self.condition()?;
        self.punct('}')?;
        Ok(OracleSpec { pass, fail })
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, DslError> {
    let toks = Lexer::new(text).tokens()?;
    Parser { toks, at: 0 }.scenario()
}
