//! Prompt authoring: templates with explicit strategies, linting, rendering and versioning.
//!
//! Placeholders use `{{name}}` and resolve to an item field, or to one of the
//! builtins `schema` and `examples`. Responses are asked to wrap their final
//! answer between [`ANSWER_OPEN`] and [`ANSWER_CLOSE`]; with chain-of-thought
//! enabled the reasoning comes first and the delimited block last.

mod ledger;
mod lint;
mod render;
mod template;

pub use ledger::{register_version, PromptLedger, PromptVersion};
pub use lint::{lint_template, LintCode, LintFinding, Severity};
pub use render::{compose_prompt, placeholders, RenderedPrompt};
pub use template::{PromptTemplate, ShotExample, Strategy};

pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const BUILTIN_PLACEHOLDERS: [&str; 2] = ["schema", "examples"];
