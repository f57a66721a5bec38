use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

/// Pipeline stage that raised a diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bytecode,
    Cfg,
    Paths,
    Symex,
    Actions,
    Merge,
    Report,
    Ingest,
}

/// A non-fatal finding attached to the report.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
pub struct Diagnostic {
    pub stage: Stage,
    /// Stable kebab-case identifier, e.g. `unresolved-jump`.
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pc: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<usize>,
}

impl Diagnostic {
    pub fn new(stage: Stage, code: &str, message: impl Into<String>) -> Self {
        Diagnostic { stage, code: code.to_string(), message: message.into(), pc: None, block: None, path: None }
    }

    pub fn at_pc(mut self, pc: usize) -> Self {
        self.pc = Some(pc);
        self
    }

    pub fn in_block(mut self, block: usize) -> Self {
        self.block = Some(block);
        self
    }

    pub fn on_path(mut self, path: usize) -> Self {
        self.path = Some(path);
        self
    }
}
