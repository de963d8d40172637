//! Instruction language: values, the primitive registry, parsing and canonical rendering.

mod parse;
mod registry;
mod render;
mod value;

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use parse::{bind_args, parse_program, Literal, RawArg};
pub use registry::{FunctionRegistry, FunctionSpec, ParamSpec, Primitive};
pub use render::{render_instruction, render_program};
pub use value::{ArgValue, Quantity, Unit, ValueKind};

/// 1-based source position of an instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub line: usize,
    pub column: usize,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IrError {
    #[error("{span}: unknown function `{name}`")]
    UnknownFunction { name: String, span: Span },
    #[error("{span}: {message}")]
    ArityError { message: String, span: Span },
    #[error("{span}: `{function}` has no parameter `{param}`")]
    UnknownParameter {
        function: String,
        param: String,
        span: Span,
    },
    #[error("{span}: malformed literal: {message}")]
    MalformedLiteral { message: String, span: Span },
    #[error("{span}: syntax error: {message}")]
    Syntax { message: String, span: Span },
    #[error("invalid registry: {0}")]
    InvalidRegistry(String),
}

impl IrError {
    pub fn span(&self) -> Option<Span> {
        match self {
            IrError::UnknownFunction { span, .. }
            | IrError::ArityError { span, .. }
            | IrError::UnknownParameter { span, .. }
            | IrError::MalformedLiteral { span, .. }
            | IrError::Syntax { span, .. } => Some(*span),
            IrError::InvalidRegistry(_) => None,
        }
    }
}

/// One bound call. Arguments are stored in parameter order with defaults filled in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instruction {
    pub function: String,
    pub args: IndexMap<String, ArgValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<Span>,
}

// Spans are provenance, not meaning.
impl PartialEq for Instruction {
    fn eq(&self, other: &Self) -> bool {
        self.function == other.function && self.args == other.args
    }
}

impl Instruction {
    /// Builds a synthesized instruction, binding `args` against the registry.
    pub fn build(
        registry: &FunctionRegistry,
        function: &str,
        args: Vec<(&str, ArgValue)>,
    ) -> Result<Self, IrError> {
        let raw = args.into_iter().map(|(k, v)| RawArg::named(k, v)).collect();
        let span = Span { line: 0, column: 0 };
        let bound = bind_args(registry, function, raw, span)?;
        Ok(Instruction {
            function: function.to_string(),
            args: bound,
            span: None,
        })
    }

    pub fn primitive(&self) -> Option<Primitive> {
        self.function.parse().ok()
    }

    pub fn arg(&self, name: &str) -> Option<&ArgValue> {
        self.args.get(name)
    }

    pub fn text_arg(&self, name: &str) -> Option<&str> {
        self.args.get(name).and_then(ArgValue::as_text)
    }

    pub fn number_arg(&self, name: &str) -> Option<f64> {
        self.args.get(name).and_then(ArgValue::as_number)
    }

    /// Containers this instruction touches, in argument order.
    pub fn containers(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(c) = self.text_arg("container") {
            out.push(c.to_string());
        }
        if let Some(list) = self.args.get("containers").and_then(ArgValue::as_list) {
            out.extend(list.iter().cloned());
        }
        out
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_instruction(self))
    }
}

pub const DEFAULT_ENV: &str = "default";

/// Ordered straight-line program. Instruction indices are stable identifiers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolProgram {
    pub title: String,
    pub env_ref: String,
    pub instructions: Vec<Instruction>,
}

impl Default for ProtocolProgram {
    fn default() -> Self {
        Self {
            title: String::new(),
            env_ref: DEFAULT_ENV.to_string(),
            instructions: Vec::new(),
        }
    }
}

impl ProtocolProgram {
    pub fn new(instructions: Vec<Instruction>) -> Self {
        Self {
            instructions,
            ..Self::default()
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = title.into();
        self
    }

    pub fn with_env(mut self, env_ref: impl Into<String>) -> Self {
        self.env_ref = env_ref.into();
        self
    }

    pub fn len(&self) -> usize {
        self.instructions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instructions.is_empty()
    }
}
