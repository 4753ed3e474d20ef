use alloc::borrow::ToOwned;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{catalog, Arg, CmpOp, Constraint, ConstraintSet, TemplateId};
use crate::text::{edit_distance, single_quote};

/// Largest accepted edit distance between a hallucinated template name and a
/// catalog name, relative to the catalog name's length.
const NAME_DISTANCE_BOUND: f64 = 0.34;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at byte {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown constraint template `{0}`")]
    UnknownTemplate(String),
    #[error("`{name}` takes {expected} argument(s), got {found}")]
    Arity { name: &'static str, expected: usize, found: usize },
    #[error("invalid argument to `{name}`: {message}")]
    InvalidArgument { name: &'static str, message: String },
}

/// Maps a template name to the catalog, tolerating small misspellings.
pub fn map_to_catalog(name: &str) -> Option<TemplateId> {
    if let Some(id) = TemplateId::from_name(name) {
        return Some(id);
    }
    let lower = name.to_lowercase();
    catalog()
        .iter()
        .map(|t| (t.id, t.name, edit_distance(&lower, &t.name.to_lowercase())))
        .min_by_key(|(_, _, d)| *d)
        .filter(|(_, n, d)| (*d as f64) <= NAME_DISTANCE_BOUND * n.chars().count() as f64)
        .map(|(id, _, _)| id)
}

#[derive(Clone, Debug, PartialEq)]
enum RawArg {
    Str(String),
    Num(f64),
    Field(String),
    Ident(String),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax { pos: self.pos, message: message.into() })
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, s: &str) -> Result<(), ParseError> {
        self.ws();
        if self.eat(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`"))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        self.ws();
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_' || c == '$') {
            self.bump();
        }
        if start == self.pos {
            return self.err("expected identifier");
        }
        Ok(self.src[start..self.pos].to_owned())
    }

    fn string(&mut self) -> Result<String, ParseError> {
        self.ws();
        let quote = match self.peek() {
            Some(q @ ('\'' | '"' | '`')) => q,
            _ => return self.err("expected string literal"),
        };
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None => return self.err("unterminated string"),
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(c) => out.push(c),
                    None => return self.err("unterminated escape"),
                },
                Some(c) if c == quote => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        let start = self.pos;
        if matches!(self.peek(), Some('-' | '+')) {
            self.bump();
        }
        while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E') {
            self.bump();
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .or_else(|_| self.err("malformed number"))
    }

    fn field_ref(&mut self) -> Result<String, ParseError> {
        self.expect("(")?;
        let name = self.string()?;
        self.expect(")")?;
        Ok(name)
    }

    fn arg(&mut self) -> Result<RawArg, ParseError> {
        self.ws();
        match self.peek() {
            Some('\'' | '"' | '`') => Ok(RawArg::Str(self.string()?)),
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => Ok(RawArg::Num(self.number()?)),
            Some(c) if c.is_alphabetic() || c == '_' => {
                let id = self.ident()?;
                self.ws();
                if id == "field" && self.peek() == Some('(') {
                    Ok(RawArg::Field(self.field_ref()?))
                } else {
                    Ok(RawArg::Ident(id))
                }
            }
            _ => self.err("expected argument"),
        }
    }

    fn args(&mut self) -> Result<Vec<RawArg>, ParseError> {
        self.expect("(")?;
        let mut out = Vec::new();
        loop {
            self.ws();
            if self.eat(")") {
                return Ok(out);
            }
            out.push(self.arg()?);
            self.ws();
            if self.eat(",") {
                continue;
            }
            self.expect(")")?;
            return Ok(out);
        }
    }
}

fn arity(id: TemplateId, args: &[RawArg]) -> Result<(), ParseError> {
    let expected = id.template().args.len();
    if args.len() != expected {
        return Err(ParseError::Arity { name: id.name(), expected, found: args.len() });
    }
    Ok(())
}

fn invalid(id: TemplateId, message: impl Into<String>) -> ParseError {
    ParseError::InvalidArgument { name: id.name(), message: message.into() }
}

fn text_of(id: TemplateId, a: &RawArg) -> Result<String, ParseError> {
    match a {
        RawArg::Str(s) | RawArg::Ident(s) => Ok(s.clone()),
        RawArg::Num(n) => Ok(n.to_string()),
        RawArg::Field(_) => Err(invalid(id, "expected a literal, found a field reference")),
    }
}

fn number_of(id: TemplateId, a: &RawArg) -> Result<f64, ParseError> {
    match a {
        RawArg::Num(n) => Ok(*n),
        RawArg::Str(s) => s.trim().parse().map_err(|_| invalid(id, format!("`{s}` is not a number"))),
        _ => Err(invalid(id, "expected a number")),
    }
}

fn typed(id: TemplateId, raw: Vec<RawArg>, known_fields: &[&str]) -> Result<Constraint, ParseError> {
    arity(id, &raw)?;
    let is_field = |s: &str| known_fields.contains(&s);
    let args = match id {
        TemplateId::Equal => match &raw[0] {
            RawArg::Field(f) => return Ok(Constraint::new(TemplateId::EqualToField, alloc::vec![Arg::Field(f.clone())])),
            RawArg::Str(s) if is_field(s) => {
                return Ok(Constraint::new(TemplateId::EqualToField, alloc::vec![Arg::Field(s.clone())]));
            }
            a => alloc::vec![Arg::Text(text_of(id, a)?)],
        },
        TemplateId::EqualToField => match &raw[0] {
            RawArg::Field(f) | RawArg::Str(f) | RawArg::Ident(f) => alloc::vec![Arg::Field(f.clone())],
            RawArg::Num(_) => return Err(invalid(id, "expected a field name")),
        },
        TemplateId::LengthCondition => {
            let op = match &raw[0] {
                RawArg::Str(s) | RawArg::Ident(s) => CmpOp::from_symbol(s),
                _ => None,
            }
            .ok_or_else(|| invalid(id, "unknown comparison operator"))?;
            alloc::vec![Arg::Op(op), Arg::Number(number_of(id, &raw[1])?)]
        }
        TemplateId::MatchPattern => {
            let pattern = text_of(id, &raw[0])?;
            regex::Regex::new(&pattern).map_err(|e| invalid(id, e.to_string()))?;
            alloc::vec![Arg::Text(pattern)]
        }
        TemplateId::Date | TemplateId::FreeText => alloc::vec![Arg::Text(text_of(id, &raw[0])?)],
        TemplateId::AfterDate | TemplateId::BeforeDate => match &raw[0] {
            RawArg::Field(f) => alloc::vec![Arg::Field(f.clone())],
            RawArg::Str(s) if is_field(s) => alloc::vec![Arg::Field(s.clone())],
            a => alloc::vec![Arg::Text(text_of(id, a)?)],
        },
        TemplateId::InRange => {
            let (lo, hi) = (number_of(id, &raw[0])?, number_of(id, &raw[1])?);
            if lo > hi {
                return Err(invalid(id, "min exceeds max"));
            }
            alloc::vec![Arg::Number(lo), Arg::Number(hi)]
        }
        _ => Vec::new(),
    };
    Ok(Constraint::new(id, args))
}

/// Parses one expect-chain starting at the beginning of `text` (leading
/// whitespace allowed) and returns it with the number of bytes consumed.
pub(crate) fn parse_prefix(text: &str, known_fields: &[&str]) -> Result<(ConstraintSet, usize), ParseError> {
    let mut c = Cursor { src: text, pos: 0 };
    c.expect("expect")?;
    c.expect("(")?;
    c.ws();
    let subject = if c.rest().starts_with("field") {
        c.ident()?;
        c.field_ref()?
    } else {
        c.string()?
    };
    c.expect(")")?;
    let mut set = ConstraintSet::new(subject);
    loop {
        let save = c.pos;
        c.ws();
        if !c.eat(".") {
            c.pos = save;
            break;
        }
        let mut name = c.ident()?;
        let mut negated = false;
        if name == "not" {
            negated = true;
            c.expect(".")?;
            name = c.ident()?;
        }
        let raw = c.args()?;
        let id = map_to_catalog(&name).ok_or(ParseError::UnknownTemplate(name))?;
        let mut constraint = typed(id, raw, known_fields)?;
        constraint.negated = negated;
        set.push(constraint);
    }
    let save = c.pos;
    c.ws();
    if !c.eat(";") {
        c.pos = save;
    }
    Ok((set, c.pos))
}

/// Parses a single expect-chain. Field references must be written as
/// `field('X')` (or as a plain string for `toBeEqualToField`).
pub fn parse_constraints(text: &str) -> Result<ConstraintSet, ParseError> {
    parse_constraints_in(text, &[])
}

/// Like [`parse_constraints`], but string literals naming one of
/// `known_fields` in `toBeEqual` and the date-order templates are read as
/// field references.
pub fn parse_constraints_in(text: &str, known_fields: &[&str]) -> Result<ConstraintSet, ParseError> {
    let (set, used) = parse_prefix(text, known_fields)?;
    let rest = &text[used..];
    if let Some(off) = rest.find(|c: char| !c.is_whitespace()) {
        return Err(ParseError::Syntax { pos: used + off, message: "trailing input after chain".into() });
    }
    Ok(set)
}

fn render_arg(a: &Arg) -> String {
    match a {
        Arg::Text(s) => single_quote(s),
        Arg::Number(n) => format!("{n}"),
        Arg::Field(f) => format!("field({})", single_quote(f)),
        Arg::Op(o) => single_quote(o.symbol()),
    }
}

/// Renders a set in the fluent syntax, one call per line.
pub fn serialize(set: &ConstraintSet) -> String {
    let mut out = format!("expect(field({}))", single_quote(&set.field));
    for c in &set.constraints {
        out.push('\n');
        out.push('.');
        if c.negated {
            out.push_str("not.");
        }
        out.push_str(c.template.name());
        out.push('(');
        let args: Vec<String> = c.args.iter().map(render_arg).collect();
        out.push_str(&args.join(", "));
        out.push(')');
    }
    out
}
