//! End-to-end driver: bytecode to grouped, merged and tagged paths.

use std::collections::BTreeMap;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::actions::{
    diff_loop_rounds, extract_actions, investing_rule_registry, link_storage, translate_semantics, ActionSequence,
    InvestingRule, InvestorRegistry,
};
use crate::bytecode::{disassemble, Instruction};
use crate::cfg::{enumerate_paths, resolve_cfg, split_blocks, Cfg, CfgError, PathLimits};
use crate::diagnostics::{Diagnostic, Stage};
use crate::features::{
    group_paths, order_columns_and_groups, tag_features, FeatureVector, ParallelSetsData, PathGroup,
};
use crate::merge::{merge_group, Member, MergedGroup};
use crate::strategy::{StrategyError, StrategyOptions};
use crate::symex::{feasibility_registry, run_paths, FeasibilityChecker, PathRun, RunStatus};

/// Rounds of execution-assisted CFG refinement before giving up.
pub const MAX_CFG_REFINEMENTS: usize = 8;

/// User-facing settings; strategies are named and built through their registries.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(default)]
pub struct AnalysisConfig {
    pub limits: PathLimits,
    pub solver: String,
    pub solver_options: StrategyOptions,
    pub investing_rule: String,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            limits: PathLimits::default(),
            solver: feasibility_registry().default_name().to_string(),
            solver_options: StrategyOptions::new(),
            investing_rule: investing_rule_registry().default_name().to_string(),
        }
    }
}

pub struct Strategies {
    pub checker: Box<dyn FeasibilityChecker>,
    pub investing: Box<dyn InvestingRule>,
}

impl AnalysisConfig {
    pub fn strategies(&self) -> Result<Strategies, StrategyError> {
        Ok(Strategies {
            checker: feasibility_registry().create(&self.solver, &self.solver_options)?,
            investing: investing_rule_registry().create(&self.investing_rule, &StrategyOptions::new())?,
        })
    }
}

/// Everything the report needs. Path ids index `runs`.
pub struct Analysis {
    pub bytes: Vec<u8>,
    pub instructions: Vec<Instruction>,
    pub cfg: Option<Cfg>,
    pub config: AnalysisConfig,
    pub runs: Vec<PathRun>,
    /// Feasible paths only.
    pub sequences: BTreeMap<usize, ActionSequence>,
    pub features: BTreeMap<usize, FeatureVector>,
    pub groups: Vec<PathGroup>,
    pub feature_level: ParallelSetsData,
    pub merged: Vec<MergedGroup>,
    pub registry: InvestorRegistry,
    pub truncated: bool,
    pub diagnostics: Vec<Diagnostic>,
}

impl Analysis {
    pub fn feasible_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.sequences.keys().copied()
    }

    /// Group id of a feasible path.
    pub fn group_of(&self, path_id: usize) -> Option<usize> {
        self.groups.iter().find(|g| g.path_ids.contains(&path_id)).map(|g| g.id)
    }

    /// Raw events of one path as JSON.
    pub fn trace_json(&self, path_id: usize) -> Option<serde_json::Value> {
        let run = self.runs.get(path_id)?;
        Some(serde_json::json!({
            "path_id": path_id,
            "blocks": run.path.blocks,
            "status": run.status,
            "events": run.events(),
        }))
    }
}

fn empty(
    bytes: Vec<u8>,
    instructions: Vec<Instruction>,
    config: AnalysisConfig,
    diagnostics: Vec<Diagnostic>,
) -> Analysis {
    Analysis {
        bytes,
        instructions,
        cfg: None,
        config,
        runs: Vec::new(),
        sequences: BTreeMap::new(),
        features: BTreeMap::new(),
        groups: Vec::new(),
        feature_level: order_columns_and_groups(&[], None),
        merged: Vec::new(),
        registry: InvestorRegistry::new(),
        truncated: false,
        diagnostics,
    }
}

/// Runs the whole pipeline with the given strategies.
pub fn analyze_with(bytes: &[u8], config: &AnalysisConfig, strategies: &Strategies) -> Analysis {
    let instrs = disassemble(bytes);
    let mut diagnostics = Vec::new();
    if let Some(last) = instrs.last().filter(|i| i.truncated) {
        diagnostics.push(
            Diagnostic::new(Stage::Bytecode, "truncated-push", format!("{} runs past end of code", last.opcode))
                .at_pc(last.offset),
        );
    }
    if !config.limits.is_valid() {
        diagnostics.push(Diagnostic::new(Stage::Paths, "invalid-limits", "path limits must be positive"));
        return empty(bytes.to_vec(), instrs, config.clone(), diagnostics);
    }
    let mut cfg = match resolve_cfg(split_blocks(&instrs), &instrs) {
        Ok(cfg) => cfg,
        Err(e @ CfgError::NoEntryBlock) => {
            diagnostics.push(Diagnostic::new(Stage::Cfg, "no-entry-block", e.to_string()));
            return empty(bytes.to_vec(), instrs, config.clone(), diagnostics);
        }
    };

    let checker = strategies.checker.as_ref();
    let mut refinements = 0;
    let (enumeration, runs) = loop {
        let enumeration = enumerate_paths(&cfg, config.limits);
        let runs = run_paths(&enumeration.paths, &instrs, &cfg, checker);
        let found: Vec<_> = runs.iter().flat_map(|r| r.discovered_edges.iter().copied()).collect();
        if found.is_empty() {
            break (enumeration, runs);
        }
        if refinements == MAX_CFG_REFINEMENTS {
            diagnostics.push(Diagnostic::new(
                Stage::Cfg,
                "refinement-limit",
                format!("jump edges still being discovered after {MAX_CFG_REFINEMENTS} refinements"),
            ));
            break (enumeration, runs);
        }
        cfg.merge_edges(found);
        refinements += 1;
    };
    diagnostics.extend(cfg.diagnostics.iter().cloned());
    diagnostics.extend(enumeration.diagnostics.iter().cloned());

    let mut sequences = BTreeMap::new();
    let (mut infeasible, mut aborted) = (0usize, 0usize);
    for (id, run) in runs.iter().enumerate() {
        diagnostics.extend(run.state.diagnostics.iter().cloned().map(|d| d.on_path(id)));
        match &run.status {
            RunStatus::Infeasible { .. } => infeasible += 1,
            RunStatus::Aborted { .. } | RunStatus::Incomplete { .. } => aborted += 1,
            RunStatus::Halted { .. } if !run.feasibility.admits() => infeasible += 1,
            RunStatus::Halted { halt } => {
                if halt.reverts() {
                    diagnostics.push(
                        Diagnostic::new(Stage::Symex, "reverted-path", format!("path ends in {halt:?}")).on_path(id),
                    );
                }
                let mut seq = extract_actions(id, run);
                link_storage(&mut seq);
                sequences.insert(id, seq);
            }
        }
    }
    if infeasible > 0 {
        diagnostics.push(Diagnostic::new(
            Stage::Symex,
            "infeasible-paths",
            format!("{infeasible} enumerated paths are infeasible and excluded"),
        ));
    }
    if aborted > 0 {
        diagnostics.push(Diagnostic::new(
            Stage::Symex,
            "failed-paths",
            format!("{aborted} enumerated paths did not run to completion and are excluded"),
        ));
    }

    let mut seq_list: Vec<ActionSequence> = sequences.into_values().collect();
    let registry = translate_semantics(&mut seq_list, strategies.investing.as_ref());
    for s in &mut seq_list {
        diff_loop_rounds(s);
        diagnostics.append(&mut s.diagnostics);
    }
    let sequences: BTreeMap<usize, ActionSequence> = seq_list.into_iter().map(|s| (s.path_id, s)).collect();

    let features: BTreeMap<usize, FeatureVector> =
        sequences.iter().map(|(id, s)| (*id, tag_features(s, &runs[*id].path))).collect();
    let groups = group_paths(&features.iter().map(|(k, v)| (*k, *v)).collect::<Vec<_>>());
    let feature_level = order_columns_and_groups(&groups, None);
    let merged = groups
        .iter()
        .map(|g| {
            let members: Vec<Member<'_>> = g
                .path_ids
                .iter()
                .map(|id| Member { id: *id, path: &runs[*id].path, actions: &sequences[id] })
                .collect();
            merge_group(g.id, g.signature, &members)
        })
        .collect();

    Analysis {
        bytes: bytes.to_vec(),
        instructions: instrs,
        cfg: Some(cfg),
        config: config.clone(),
        runs,
        sequences,
        features,
        groups,
        feature_level,
        merged,
        registry,
        truncated: enumeration.truncated,
        diagnostics,
    }
}

/// Builds the configured strategies and runs the pipeline.
pub fn analyze(bytes: &[u8], config: &AnalysisConfig) -> Result<Analysis, StrategyError> {
    let strategies = config.strategies()?;
    Ok(analyze_with(bytes, config, &strategies))
}
