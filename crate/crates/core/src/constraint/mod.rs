//! Negatable per-field constraints in a fluent `expect(field('X')).toY()`
//! syntax: the template catalog, parsing/serialization, evaluation and
//! negation.

mod eval;
pub(crate) mod syntax;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use eval::{format_date, parse_date, parse_with_format, Bindings, EvalError, Evaluator, Verdict};
pub use syntax::{map_to_catalog, parse_constraints, parse_constraints_in, serialize, ParseError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    Truthy,
    Equal,
    EqualToField,
    LengthCondition,
    Alphabetical,
    Numeric,
    Alphanumeric,
    ContainWhiteSpace,
    MatchPattern,
    Date,
    AfterDate,
    BeforeDate,
    Email,
    InRange,
    FreeText,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArgKind {
    Literal,
    Number,
    FieldRef,
    /// Either a field reference or a literal date.
    DateRef,
    Operator,
}

impl ArgKind {
    /// Placeholder shown in catalog listings.
    pub fn placeholder(self) -> &'static str {
        match self {
            ArgKind::Literal => "value",
            ArgKind::Number => "number",
            ArgKind::FieldRef => "field",
            ArgKind::DateRef => "date or field",
            ArgKind::Operator => "condition",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConstraintTemplate {
    pub id: TemplateId,
    pub name: &'static str,
    pub args: &'static [ArgKind],
    pub description: &'static str,
}

use ArgKind::*;

static CATALOG: [ConstraintTemplate; 15] = [
    ConstraintTemplate {
        id: TemplateId::Truthy,
        name: "toBeTruthy",
        args: &[],
        description: "The input field value is not empty.",
    },
    ConstraintTemplate {
        id: TemplateId::Equal,
        name: "toBeEqual",
        args: &[Literal],
        description: "The input field value is exactly equal to the given value.",
    },
    ConstraintTemplate {
        id: TemplateId::EqualToField,
        name: "toBeEqualToField",
        args: &[FieldRef],
        description: "The input field value is exactly equal to the value of the given field.",
    },
    ConstraintTemplate {
        id: TemplateId::LengthCondition,
        name: "toHaveLengthCondition",
        args: &[Operator, Number],
        description: "The length of the input field value matches the given condition.",
    },
    ConstraintTemplate {
        id: TemplateId::Alphabetical,
        name: "toBeAlphabetical",
        args: &[],
        description: "The input field should be alphabetical (letters and spaces).",
    },
    ConstraintTemplate {
        id: TemplateId::Numeric,
        name: "toBeNumeric",
        args: &[],
        description: "The input field should be a number.",
    },
    ConstraintTemplate {
        id: TemplateId::Alphanumeric,
        name: "toBeAlphanumeric",
        args: &[],
        description: "The input field should contain only letters, digits and spaces.",
    },
    ConstraintTemplate {
        id: TemplateId::ContainWhiteSpace,
        name: "toContainWhiteSpace",
        args: &[],
        description: "The input field should contain whitespace.",
    },
    ConstraintTemplate {
        id: TemplateId::MatchPattern,
        name: "toMatchPattern",
        args: &[Literal],
        description: "The input field value matches the given regular expression.",
    },
    ConstraintTemplate {
        id: TemplateId::Date,
        name: "toBeDate",
        args: &[Literal],
        description: "The input field value is a date in the given format (DD, MM, YYYY tokens).",
    },
    ConstraintTemplate {
        id: TemplateId::AfterDate,
        name: "toBeAfterDate",
        args: &[DateRef],
        description: "The input field date is strictly after the given date or field's date.",
    },
    ConstraintTemplate {
        id: TemplateId::BeforeDate,
        name: "toBeBeforeDate",
        args: &[DateRef],
        description: "The input field date is strictly before the given date or field's date.",
    },
    ConstraintTemplate {
        id: TemplateId::Email,
        name: "toBeEmail",
        args: &[],
        description: "The input field value is an email address.",
    },
    ConstraintTemplate {
        id: TemplateId::InRange,
        name: "toBeInRange",
        args: &[Number, Number],
        description: "The input field value is a number between min and max, inclusive (not evaluable for non-numbers).",
    },
    ConstraintTemplate {
        id: TemplateId::FreeText,
        name: "freeTextConstraint",
        args: &[Literal],
        description: "A constraint that no other template can express, stated in words.",
    },
];

/// The fixed template catalog: 14 evaluable templates followed by
/// `freeTextConstraint`.
pub fn catalog() -> &'static [ConstraintTemplate] {
    &CATALOG
}

impl TemplateId {
    pub const ALL: [TemplateId; 15] = [
        TemplateId::Truthy,
        TemplateId::Equal,
        TemplateId::EqualToField,
        TemplateId::LengthCondition,
        TemplateId::Alphabetical,
        TemplateId::Numeric,
        TemplateId::Alphanumeric,
        TemplateId::ContainWhiteSpace,
        TemplateId::MatchPattern,
        TemplateId::Date,
        TemplateId::AfterDate,
        TemplateId::BeforeDate,
        TemplateId::Email,
        TemplateId::InRange,
        TemplateId::FreeText,
    ];

    pub fn template(self) -> &'static ConstraintTemplate {
        CATALOG.iter().find(|t| t.id == self).expect("every id is catalogued")
    }

    pub fn name(self) -> &'static str {
        self.template().name
    }

    pub fn from_name(name: &str) -> Option<TemplateId> {
        CATALOG.iter().find(|t| t.name == name).map(|t| t.id)
    }

    pub fn is_evaluable(self) -> bool {
        self != TemplateId::FreeText
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Gt, CmpOp::Ge, CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ne];

    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    pub fn from_symbol(s: &str) -> Option<CmpOp> {
        match s.trim() {
            ">" => Some(CmpOp::Gt),
            ">=" => Some(CmpOp::Ge),
            "<" => Some(CmpOp::Lt),
            "<=" => Some(CmpOp::Le),
            "==" | "=" | "===" => Some(CmpOp::Eq),
            "!=" | "!==" => Some(CmpOp::Ne),
            _ => None,
        }
    }

    pub fn holds(self, lhs: usize, rhs: f64) -> bool {
        let l = lhs as f64;
        match self {
            CmpOp::Gt => l > rhs,
            CmpOp::Ge => l >= rhs,
            CmpOp::Lt => l < rhs,
            CmpOp::Le => l <= rhs,
            CmpOp::Eq => l == rhs,
            CmpOp::Ne => l != rhs,
        }
    }

    fn words(self) -> &'static str {
        match self {
            CmpOp::Gt => "greater than",
            CmpOp::Ge => "at least",
            CmpOp::Lt => "less than",
            CmpOp::Le => "at most",
            CmpOp::Eq => "exactly",
            CmpOp::Ne => "other than",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Arg {
    Text(String),
    Number(f64),
    Field(String),
    Op(CmpOp),
}

impl Arg {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            Arg::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Arg::Number(n) => Some(*n),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub template: TemplateId,
    pub args: Vec<Arg>,
    pub negated: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ConstraintError {
    #[error("freeTextConstraint cannot be negated")]
    NotNegatable,
}

impl Constraint {
    pub fn new(template: TemplateId, args: Vec<Arg>) -> Self {
        Constraint { template, args, negated: false }
    }

    pub fn negated(mut self) -> Self {
        self.negated = !self.negated;
        self
    }

    pub fn is_evaluable(&self) -> bool {
        self.template.is_evaluable()
    }

    /// Fields this constraint refers to.
    pub fn field_refs(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|a| match a {
            Arg::Field(f) => Some(f.as_str()),
            _ => None,
        })
    }

    /// Replaces field references with the referenced field's bound value
    /// (`toBeEqualToField(f)` becomes `toBeEqual(value)`); `None` when a
    /// referenced field has no value yet.
    pub fn inline(&self, bindings: &Bindings) -> Option<Constraint> {
        if self.field_refs().next().is_none() {
            return Some(self.clone());
        }
        let mut args = Vec::with_capacity(self.args.len());
        for a in &self.args {
            match a {
                Arg::Field(f) => args.push(Arg::Text(bindings.get(f)?.into())),
                other => args.push(other.clone()),
            }
        }
        let template = match self.template {
            TemplateId::EqualToField => TemplateId::Equal,
            t => t,
        };
        Some(Constraint { template, args, negated: self.negated })
    }

    /// One-line English rendering, used in value prompts.
    pub fn describe(&self) -> String {
        use alloc::format;
        let arg = |i: usize| -> String {
            match self.args.get(i) {
                Some(Arg::Text(s)) => format!("'{s}'"),
                Some(Arg::Number(n)) => format!("{n}"),
                Some(Arg::Field(f)) => format!("the value of field '{f}'"),
                Some(Arg::Op(o)) => String::from(o.words()),
                None => String::new(),
            }
        };
        let body = match self.template {
            TemplateId::Truthy => String::from("be non-empty"),
            TemplateId::Equal | TemplateId::EqualToField => format!("be equal to {}", arg(0)),
            TemplateId::LengthCondition => format!("have a length {} {}", arg(0), arg(1)),
            TemplateId::Alphabetical => String::from("be alphabetical"),
            TemplateId::Numeric => String::from("be numeric"),
            TemplateId::Alphanumeric => String::from("be alphanumeric"),
            TemplateId::ContainWhiteSpace => String::from("contain whitespace"),
            TemplateId::MatchPattern => format!("match the pattern {}", arg(0)),
            TemplateId::Date => format!("be a date in the format {}", arg(0)),
            TemplateId::AfterDate => format!("be a date after {}", arg(0)),
            TemplateId::BeforeDate => format!("be a date before {}", arg(0)),
            TemplateId::Email => String::from("be an email address"),
            TemplateId::InRange => format!("be a number between {} and {}", arg(0), arg(1)),
            TemplateId::FreeText => {
                return format!("Note: {}", self.args.first().and_then(Arg::as_text).unwrap_or(""));
            }
        };
        let not = if self.negated { "not " } else { "" };
        format!("The value should {not}{body}")
    }
}

/// Flips `negated`; rejects `freeTextConstraint`.
pub fn negate(c: &Constraint) -> Result<Constraint, ConstraintError> {
    if !c.is_evaluable() {
        return Err(ConstraintError::NotNegatable);
    }
    Ok(c.clone().negated())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub field: String,
    pub constraints: Vec<Constraint>,
}

impl ConstraintSet {
    pub fn new(field: impl Into<String>) -> Self {
        ConstraintSet { field: field.into(), constraints: Vec::new() }
    }

    /// The `{toBeTruthy}` set applied when inference fails for a field.
    pub fn default_for(field: impl Into<String>) -> Self {
        let mut s = ConstraintSet::new(field);
        s.push(Constraint::new(TemplateId::Truthy, Vec::new()));
        s
    }

    /// Appends unless an identical constraint is already present.
    pub fn push(&mut self, c: Constraint) -> bool {
        if self.constraints.contains(&c) {
            return false;
        }
        self.constraints.push(c);
        true
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Constraint> {
        self.constraints.iter()
    }

    /// Format of the first positive `toBeDate` constraint, if any.
    pub fn date_format(&self) -> Option<&str> {
        self.constraints
            .iter()
            .find(|c| c.template == TemplateId::Date && !c.negated)
            .and_then(|c| c.args.first())
            .and_then(Arg::as_text)
    }

    /// Fields referenced by any constraint, deduplicated in first-seen order.
    pub fn field_refs(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for f in self.constraints.iter().flat_map(Constraint::field_refs) {
            if !out.iter().any(|x| x == f) {
                out.push(f.into());
            }
        }
        out
    }
}

impl fmt::Display for ConstraintSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn catalog_shape() {
        let cat = catalog();
        assert_eq!(cat.len(), 15);
        assert_eq!(cat.iter().filter(|t| t.id.is_evaluable()).count(), 14);
        let len = cat.iter().find(|t| t.name == "toHaveLengthCondition").unwrap();
        assert_eq!(len.args, &[ArgKind::Operator, ArgKind::Number]);
        let ws = cat.iter().find(|t| t.name == "toContainWhiteSpace").unwrap();
        assert!(ws.args.is_empty());
        let mut names: Vec<_> = cat.iter().map(|t| t.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 15);
        for id in TemplateId::ALL {
            assert_eq!(TemplateId::from_name(id.name()), Some(id));
        }
    }

    #[test]
    fn negation_is_an_involution() {
        let c = Constraint::new(TemplateId::LengthCondition, vec![Arg::Op(CmpOp::Gt), Arg::Number(2.0)]);
        let n = negate(&c).unwrap();
        assert!(n.negated);
        assert_eq!(n.args, c.args);
        assert_eq!(negate(&n).unwrap(), c);
        let free = Constraint::new(TemplateId::FreeText, vec![Arg::Text("x".into())]);
        assert_eq!(negate(&free), Err(ConstraintError::NotNegatable));
    }

    #[test]
    fn inline_substitutes_bound_refs() {
        let c = Constraint::new(TemplateId::EqualToField, vec![Arg::Field("To 1".into())]).negated();
        let mut b = Bindings::default();
        assert_eq!(c.inline(&b), None);
        b.set("To 1", "Toronto");
        let inl = c.inline(&b).unwrap();
        assert_eq!(inl.template, TemplateId::Equal);
        assert_eq!(inl.describe(), "The value should not be equal to 'Toronto'");
    }

    #[test]
    fn set_dedups() {
        let mut s = ConstraintSet::new("a");
        assert!(s.push(Constraint::new(TemplateId::Truthy, vec![])));
        assert!(!s.push(Constraint::new(TemplateId::Truthy, vec![])));
        assert!(s.push(Constraint::new(TemplateId::Truthy, vec![]).negated()));
        assert_eq!(s.len(), 2);
    }
}
