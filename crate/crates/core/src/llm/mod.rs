//! Language-model bridge: prompt construction, a pluggable completion
//! backend, response parsing, and offline mock backends.

mod mock;
mod parse;
mod prompt;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::constraint::ConstraintSet;

pub use mock::{OracleMock, ScriptEntry, ScriptedMock};
pub use parse::{parse_constraint_response, parse_value_response, ResponseError, NO_VALUE};
pub use prompt::{
    build_constraint_prompt, build_value_prompt, constraint_template_hash, constraints_and_values,
    value_template_hash, FeedbackEntry, FieldPromptContext, PromptBundle, PromptKind, RelevantField,
    SectionName, CONSTRAINT_TEMPLATE, VALUE_TEMPLATE,
};

/// Sampling temperature for every completion.
pub const TEMPERATURE: f64 = 0.0;

/// Rendered prompts longer than this many characters are not sent.
pub const DEFAULT_CONTEXT_LIMIT: usize = 48_000;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("backend {backend} unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { backend: String, attempts: u32, message: String },
    #[error("prompt of {chars} characters exceeds the context limit of {limit}")]
    ContextTooLarge { chars: usize, limit: usize },
    #[error("unusable response for field `{field}`: {message}")]
    MalformedResponse { field: String, message: String },
    #[error("backend found no value for field `{field}` satisfying its constraints")]
    NoValue { field: String },
    #[error("no scripted response for {kind:?} prompt on field `{field}`")]
    NoScriptedResponse { kind: PromptKind, field: String },
}

/// A chat-completion endpoint or a stand-in for one. Implementations must
/// tolerate concurrent calls from independent pipelines and sample at
/// [`TEMPERATURE`].
pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError>;
}

impl<B: CompletionBackend + ?Sized> CompletionBackend for alloc::sync::Arc<B> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        (**self).complete(prompt)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Constraints(ConstraintSet),
    Value(String),
}

/// One raw completion and what was parsed out of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub raw: String,
    pub parsed: Option<Payload>,
}

/// Outcome of a prompt, with every response received along the way.
#[derive(Clone, Debug, PartialEq)]
pub struct Exchange<T> {
    pub result: Result<T, LlmError>,
    pub responses: Vec<LlmResponse>,
}

fn drive<T>(
    backend: &dyn CompletionBackend,
    prompt: &PromptBundle,
    context_limit: usize,
    parse: impl Fn(&str) -> Result<T, ResponseError>,
    payload: impl Fn(&T) -> Payload,
) -> Exchange<T> {
    let mut responses = Vec::new();
    let chars = prompt.render().chars().count();
    if chars > context_limit {
        return Exchange { result: Err(LlmError::ContextTooLarge { chars, limit: context_limit }), responses };
    }
    let mut current = prompt.clone();
    let mut last_error = String::new();
    for attempt in 0..2 {
        let raw = match backend.complete(&current) {
            Ok(raw) => raw,
            Err(e) => return Exchange { result: Err(e), responses },
        };
        match parse(&raw) {
            Ok(v) => {
                responses.push(LlmResponse { raw, parsed: Some(payload(&v)) });
                return Exchange { result: Ok(v), responses };
            }
            Err(ResponseError::Unsatisfiable) => {
                responses.push(LlmResponse { raw, parsed: None });
                return Exchange { result: Err(LlmError::NoValue { field: prompt.field.clone() }), responses };
            }
            Err(e) => {
                responses.push(LlmResponse { raw, parsed: None });
                last_error = format!("{e}");
                if attempt == 0 {
                    current = prompt.with_reprompt(format!(
                        "Your previous answer could not be used ({e}). Answer again in exactly the requested format."
                    ));
                }
            }
        }
    }
    Exchange { result: Err(LlmError::MalformedResponse { field: prompt.field.clone(), message: last_error }), responses }
}

/// Sends a constraint prompt; one reprompt on an unusable answer.
pub fn complete_constraints(
    backend: &dyn CompletionBackend,
    prompt: &PromptBundle,
    context_limit: usize,
) -> Exchange<ConstraintSet> {
    let known: Vec<&str> = prompt.known_fields.iter().map(String::as_str).collect();
    drive(
        backend,
        prompt,
        context_limit,
        |raw| parse_constraint_response(raw, &prompt.field, &known),
        |s| Payload::Constraints(s.clone()),
    )
}

/// Sends a value prompt; one reprompt on an unusable answer.
pub fn complete_value(backend: &dyn CompletionBackend, prompt: &PromptBundle, context_limit: usize) -> Exchange<String> {
    drive(backend, prompt, context_limit, parse_value_response, |v| Payload::Value(v.clone()))
}
