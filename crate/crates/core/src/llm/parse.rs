//! Pulling structured answers out of free-form completions.

use alloc::string::{String, ToString};

use crate::constraint::{ConstraintSet, ParseError};

/// Token a backend answers with when no value can satisfy the constraints.
pub const NO_VALUE: &str = "NO_VALUE";

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum ResponseError {
    #[error("no expect-chain in the response")]
    NoConstraintFound,
    #[error("no fenced or quoted value in the response")]
    NoValueFound,
    #[error("the response states that no value satisfies the constraints")]
    Unsatisfiable,
    #[error("malformed expect-chain: {0}")]
    Invalid(ParseError),
}

/// First well-formed expect-chain in `text`. The chain's subject is forced
/// to `target`: the answer is about the field that was asked about.
pub fn parse_constraint_response(
    text: &str,
    target: &str,
    known_fields: &[&str],
) -> Result<ConstraintSet, ResponseError> {
    let mut first_error = None;
    for (i, _) in text.match_indices("expect(") {
        match crate::constraint::syntax::parse_prefix(&text[i..], known_fields) {
            Ok((mut set, _)) => {
                set.field = target.to_string();
                return Ok(set);
            }
            Err(e) => {
                first_error.get_or_insert(e);
            }
        }
    }
    Err(match first_error {
        Some(e) => ResponseError::Invalid(e),
        None => ResponseError::NoConstraintFound,
    })
}

fn fenced(text: &str) -> Option<&str> {
    let start = text.find("```")? + 3;
    let rest = &text[start..];
    let end = rest.find("```")?;
    let body = &rest[..end];
    // An info string on the opening line ("```text") is not part of the value.
    match body.split_once('\n') {
        Some((first, tail)) if !first.trim().is_empty() && !tail.trim().is_empty() => Some(tail),
        _ => Some(body),
    }
}

fn quoted(text: &str) -> Option<&str> {
    ['"', '`', '\''].into_iter().find_map(|q| {
        let start = text.find(q)? + q.len_utf8();
        let end = text[start..].find(q)?;
        Some(&text[start..start + end])
    })
}

/// A single field value from a fenced block or, failing that, a quoted span.
/// An empty fenced block is the empty value.
pub fn parse_value_response(text: &str) -> Result<String, ResponseError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(ResponseError::NoValueFound);
    }
    if let Some(body) = fenced(t) {
        let v = body.trim();
        return if v == NO_VALUE { Err(ResponseError::Unsatisfiable) } else { Ok(v.to_string()) };
    }
    if t == NO_VALUE || t.starts_with(NO_VALUE) {
        return Err(ResponseError::Unsatisfiable);
    }
    quoted(t).map(|v| v.trim().to_string()).ok_or(ResponseError::NoValueFound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraint::TemplateId;

    const FROM_FIELD_EXAMPLE: &str = "expect(field('From 1'))\n  .toBeTruthy()\n  .toBeAlphabetical()\n  .toHaveLengthCondition('>', 2)\n  .not.toBeEqual('To 1')\n  .not.toBeEqual('From 2')";
    const FIELDS: [&str; 3] = ["From 1", "To 1", "From 2"];

    #[test]
    fn from_field_example_verbatim_and_in_prose() {
        let a = parse_constraint_response(FROM_FIELD_EXAMPLE, "From 1", &FIELDS).unwrap();
        assert_eq!(a.len(), 5);
        let wrapped = alloc::format!("Sure! Here are the constraints:\n```js\n{FROM_FIELD_EXAMPLE}\n```\nLet me know if (you need more).");
        let b = parse_constraint_response(&wrapped, "From 1", &FIELDS).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.constraints[3].template, TemplateId::EqualToField);
    }

    #[test]
    fn skips_a_broken_chain_for_a_later_good_one() {
        let text = "expect(field('From 1').toBeTruthy(\nthen: expect(field('From 1')).toBeTruthy()";
        assert_eq!(parse_constraint_response(text, "From 1", &FIELDS).unwrap().len(), 1);
    }

    #[test]
    fn no_chain() {
        assert_eq!(parse_constraint_response("I cannot tell.", "x", &[]), Err(ResponseError::NoConstraintFound));
        assert!(matches!(parse_constraint_response("expect(", "x", &[]), Err(ResponseError::Invalid(_))));
    }

    #[test]
    fn subject_is_forced_to_target() {
        let s = parse_constraint_response("expect(field('origin')).toBeTruthy()", "From 1", &[]).unwrap();
        assert_eq!(s.field, "From 1");
    }

    #[test]
    fn values() {
        assert_eq!(parse_value_response("\"Toronto\"").unwrap(), "Toronto");
        assert_eq!(parse_value_response("```\n08/04\n```").unwrap(), "08/04");
        assert_eq!(parse_value_response("Use ```text\n 08/04 \n``` please").unwrap(), "08/04");
        assert_eq!(parse_value_response("```\n\n```").unwrap(), "");
        assert_eq!(parse_value_response("The answer is `abc`.").unwrap(), "abc");
        assert_eq!(parse_value_response(""), Err(ResponseError::NoValueFound));
        assert_eq!(parse_value_response("Toronto"), Err(ResponseError::NoValueFound));
        assert_eq!(parse_value_response("NO_VALUE"), Err(ResponseError::Unsatisfiable));
        assert_eq!(parse_value_response("```\nNO_VALUE\n```"), Err(ResponseError::Unsatisfiable));
    }
}
