pub mod actions;
pub mod asm;
pub mod bytecode;
pub mod cfg;
pub mod diagnostics;
pub mod features;
pub mod fixtures;
pub mod merge;
pub mod opcode;
pub mod pipeline;
pub mod report;
pub mod strategy;
pub mod symex;
pub mod word;
