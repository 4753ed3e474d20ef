use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use core::cell::RefCell;

use chrono::{Datelike, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Arg, Constraint, ConstraintSet, TemplateId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    True,
    False,
    NotEvaluable,
}

impl Verdict {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Verdict::True
        } else {
            Verdict::False
        }
    }

    /// Boolean negation; `NotEvaluable` stays `NotEvaluable`.
    pub fn not(self) -> Self {
        match self {
            Verdict::True => Verdict::False,
            Verdict::False => Verdict::True,
            Verdict::NotEvaluable => Verdict::NotEvaluable,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("constraint refers to field `{0}`, which has no value")]
    UnboundFieldReference(String),
    #[error("invalid pattern `{0}`")]
    InvalidPattern(String),
}

/// Current field values plus per-field declared date formats.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bindings {
    pub values: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub date_formats: BTreeMap<String, String>,
}

impl Bindings {
    pub fn from_values<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Bindings { values: pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect(), ..Default::default() }
    }

    pub fn get(&self, field: &str) -> Option<&str> {
        self.values.get(field).map(String::as_str)
    }

    pub fn set(&mut self, field: impl Into<String>, value: impl Into<String>) {
        self.values.insert(field.into(), value.into());
    }

    pub fn date_format(&self, field: &str) -> Option<&str> {
        self.date_formats.get(field).map(String::as_str)
    }
}

fn take_digits(s: &str, min: usize, max: usize) -> Option<(u32, &str)> {
    let n = s.bytes().take(max).take_while(u8::is_ascii_digit).count();
    if n < min {
        return None;
    }
    Some((s[..n].parse().ok()?, &s[n..]))
}

/// Parses `s` against a format of `YYYY`, `YY`, `MM`, `M`, `DD`, `D` tokens
/// and literal separators. A missing year becomes `default_year`.
pub fn parse_with_format(s: &str, fmt: &str, default_year: i32) -> Option<NaiveDate> {
    #[derive(Clone, Copy)]
    enum Part {
        Year,
        ShortYear,
        Month,
        Day,
    }
    let (mut s, mut f) = (s.trim(), fmt);
    let (mut y, mut m, mut d) = (None, None, None);
    while !f.is_empty() {
        let (part, min, max, width) = if f.starts_with("YYYY") {
            (Part::Year, 4, 4, 4)
        } else if f.starts_with("YY") {
            (Part::ShortYear, 2, 2, 2)
        } else if f.starts_with("MM") {
            (Part::Month, 2, 2, 2)
        } else if f.starts_with("DD") {
            (Part::Day, 2, 2, 2)
        } else if f.starts_with('M') {
            (Part::Month, 1, 2, 1)
        } else if f.starts_with('D') {
            (Part::Day, 1, 2, 1)
        } else {
            let c = f.chars().next()?;
            s = s.strip_prefix(c)?;
            f = &f[c.len_utf8()..];
            continue;
        };
        let (v, rest) = take_digits(s, min, max)?;
        match part {
            Part::Year => y = Some(v),
            Part::ShortYear => y = Some(v + 2000),
            Part::Month => m = Some(v),
            Part::Day => d = Some(v),
        }
        s = rest;
        f = &f[width..];
    }
    if !s.is_empty() {
        return None;
    }
    let year = y.map_or(default_year, |v| v as i32);
    NaiveDate::from_ymd_opt(year, m?, d?)
}

/// Renders `date` in a format understood by [`parse_with_format`].
pub fn format_date(date: NaiveDate, fmt: &str) -> String {
    let mut out = String::new();
    let mut f = fmt;
    while !f.is_empty() {
        if let Some(rest) = f.strip_prefix("YYYY") {
            out.push_str(&format!("{:04}", date.year()));
            f = rest;
        } else if let Some(rest) = f.strip_prefix("YY") {
            out.push_str(&format!("{:02}", date.year() % 100));
            f = rest;
        } else if let Some(rest) = f.strip_prefix("MM") {
            out.push_str(&format!("{:02}", date.month()));
            f = rest;
        } else if let Some(rest) = f.strip_prefix("DD") {
            out.push_str(&format!("{:02}", date.day()));
            f = rest;
        } else if let Some(rest) = f.strip_prefix('M') {
            out.push_str(&format!("{}", date.month()));
            f = rest;
        } else if let Some(rest) = f.strip_prefix('D') {
            out.push_str(&format!("{}", date.day()));
            f = rest;
        } else {
            let c = f.chars().next().expect("non-empty");
            out.push(c);
            f = &f[c.len_utf8()..];
        }
    }
    out
}

/// Lenient date parse: the declared format, then ISO-8601, then
/// `DD/MM/YYYY`, then `DD/MM` in the reference year.
pub fn parse_date(s: &str, declared: Option<&str>, reference_year: i32) -> Option<NaiveDate> {
    declared
        .into_iter()
        .chain(["YYYY-MM-DD", "DD/MM/YYYY", "DD/MM"])
        .find_map(|f| parse_with_format(s, f, reference_year))
}

fn is_numeric(s: &str) -> bool {
    let t = s.strip_prefix(['+', '-']).unwrap_or(s);
    let (int, frac) = match t.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (t, None),
    };
    !int.is_empty()
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()))
}

fn is_email(s: &str) -> bool {
    let Some((local, domain)) = s.split_once('@') else {
        return false;
    };
    let ok_part = |p: &str| !p.is_empty() && !p.chars().any(|c| c.is_whitespace() || c == '@');
    ok_part(local)
        && ok_part(domain)
        && domain.contains('.')
        && !domain.starts_with('.')
        && !domain.ends_with('.')
        && !domain.contains("..")
}

/// Constraint oracle. Compiled patterns are cached, so an evaluator is meant
/// to be reused across many values within one thread.
#[derive(Debug)]
pub struct Evaluator {
    reference: NaiveDate,
    patterns: RefCell<BTreeMap<String, Regex>>,
}

impl Evaluator {
    /// `reference` supplies the year for year-less date formats.
    pub fn new(reference: NaiveDate) -> Self {
        Evaluator { reference, patterns: RefCell::new(BTreeMap::new()) }
    }

    pub fn reference(&self) -> NaiveDate {
        self.reference
    }

    fn pattern_matches(&self, pattern: &str, value: &str) -> Result<bool, EvalError> {
        let mut cache = self.patterns.borrow_mut();
        if !cache.contains_key(pattern) {
            let re = Regex::new(pattern).map_err(|_| EvalError::InvalidPattern(pattern.into()))?;
            cache.insert(pattern.into(), re);
        }
        Ok(cache[pattern].is_match(value))
    }

    fn date_arg(&self, arg: Option<&Arg>, bindings: &Bindings) -> Result<Option<NaiveDate>, EvalError> {
        let year = self.reference.year();
        Ok(match arg {
            Some(Arg::Field(f)) => {
                let v = bindings.get(f).ok_or_else(|| EvalError::UnboundFieldReference(f.clone()))?;
                parse_date(v, bindings.date_format(f), year)
            }
            Some(Arg::Text(t)) => parse_date(t, None, year),
            _ => None,
        })
    }

    /// Evaluates `c` on `value`. `own_format` is the subject field's declared
    /// date format, used when comparing dates.
    pub fn evaluate(
        &self,
        c: &Constraint,
        value: &str,
        own_format: Option<&str>,
        bindings: &Bindings,
    ) -> Result<Verdict, EvalError> {
        let v = value.trim();
        let text = |i: usize| c.args.get(i).and_then(Arg::as_text).unwrap_or("");
        let num = |i: usize| c.args.get(i).and_then(Arg::as_number).unwrap_or(f64::NAN);
        let positive = match c.template {
            TemplateId::FreeText => return Ok(Verdict::NotEvaluable),
            TemplateId::Truthy => !v.is_empty(),
            TemplateId::Equal => v == text(0).trim(),
            TemplateId::EqualToField => {
                let f = c.field_refs().next().unwrap_or("");
                let other = bindings.get(f).ok_or_else(|| EvalError::UnboundFieldReference(f.into()))?;
                v == other.trim()
            }
            TemplateId::LengthCondition => match c.args.first() {
                Some(Arg::Op(op)) => op.holds(v.chars().count(), num(1)),
                _ => return Ok(Verdict::NotEvaluable),
            },
            TemplateId::Alphabetical => v.chars().all(|ch| ch.is_alphabetic() || ch == ' '),
            TemplateId::Numeric => v.is_empty() || is_numeric(v),
            TemplateId::Alphanumeric => v.chars().all(|ch| ch.is_alphanumeric() || ch == ' '),
            TemplateId::ContainWhiteSpace => value.chars().any(char::is_whitespace),
            TemplateId::MatchPattern => self.pattern_matches(text(0), value)?,
            TemplateId::Date => parse_with_format(v, text(0), self.reference.year()).is_some(),
            TemplateId::AfterDate | TemplateId::BeforeDate => {
                let other = self.date_arg(c.args.first(), bindings)?;
                let own = parse_date(v, own_format, self.reference.year());
                match (own, other) {
                    (Some(a), Some(b)) if c.template == TemplateId::AfterDate => a > b,
                    (Some(a), Some(b)) => a < b,
                    _ => return Ok(Verdict::NotEvaluable),
                }
            }
            TemplateId::Email => is_email(v),
            TemplateId::InRange => match v.parse::<f64>() {
                Ok(x) if is_numeric(v) => x >= num(0) && x <= num(1),
                _ => return Ok(Verdict::NotEvaluable),
            },
        };
        let verdict = Verdict::from_bool(positive);
        Ok(if c.negated { verdict.not() } else { verdict })
    }

    /// Verdicts for every constraint of `set` against `value`.
    pub fn evaluate_set(
        &self,
        set: &ConstraintSet,
        value: &str,
        bindings: &Bindings,
    ) -> Result<alloc::vec::Vec<Verdict>, EvalError> {
        let fmt = set.date_format().or_else(|| bindings.date_format(&set.field));
        set.iter().map(|c| self.evaluate(c, value, fmt, bindings)).collect()
    }

    /// True when no constraint of `set` evaluates to `False`.
    pub fn satisfies(&self, set: &ConstraintSet, value: &str, bindings: &Bindings) -> Result<bool, EvalError> {
        Ok(self.evaluate_set(set, value, bindings)?.iter().all(|v| *v != Verdict::False))
    }
}
