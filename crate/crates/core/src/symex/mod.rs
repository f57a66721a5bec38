//! Bounded symbolic execution of enumerated block paths.

pub mod expr;
pub mod feasibility;
pub mod machine;
pub mod state;

use rayon::prelude::*;

use crate::bytecode::Instruction;
use crate::cfg::{BlockPath, Cfg};

pub use expr::{keccak_word, EnvKind, EnvTag, EvalContext, SymExpr};
pub use feasibility::{
    canonical_condition, feasibility_registry, to_smtlib, BuiltinChecker, Feasibility, FeasibilityChecker,
    SmtlibCommand, TrustChecker,
};
pub use machine::{
    run_path, Control, EventSite, HaltKind, LoopContext, MachineState, PathRun, RawEvent, RawEventKind, RunStatus,
    StepError, STACK_LIMIT,
};
pub use state::{slots_distinct, MemWrite, Memory, Storage};

/// Runs every path, in parallel, returning results in input order.
pub fn run_paths(
    paths: &[BlockPath],
    instrs: &[Instruction],
    cfg: &Cfg,
    checker: &dyn FeasibilityChecker,
) -> Vec<PathRun> {
    paths.par_iter().map(|p| run_path(p, instrs, cfg, checker)).collect()
}
