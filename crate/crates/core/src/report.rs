//! The three-level analysis report and its JSON schema.
//!
//! `feature_level` holds the parallel-sets data, `group_level` the merged path
//! groups and `path_level` the per-path detail (actions, loop rounds, storage
//! panel). Serialization goes through `serde_json::Value`, whose maps are
//! key-sorted, so equal inputs give byte-identical documents.

use std::collections::{BTreeMap, BTreeSet};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha3::{Digest, Keccak256};
use thiserror::Error;

use crate::actions::{Action, ActionKind, Operands, ReadSource, RoundDiff, SlotRef, Structure};
use crate::bytecode::to_hex;
use crate::cfg::ROUNDS_PER_BACK_EDGE;
use crate::diagnostics::Diagnostic;
use crate::features::{order_columns_and_groups, Column, FeatureVector, ParallelSetsData, PathGroup};
use crate::merge::{ActionRef, Anchor, ColumnKey, Connector, LoopWrapper, Mark, MergedCluster};
use crate::pipeline::Analysis;
use crate::symex::{canonical_condition, RunStatus};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct AnalysisReport {
    pub schema_version: String,
    pub contract: ContractInfo,
    pub settings: Settings,
    pub summary: Summary,
    /// Slot families that store investor addresses.
    pub investor_slots: Vec<String>,
    pub diagnostics: Vec<Diagnostic>,
    pub feature_level: ParallelSetsData,
    pub group_level: Vec<GroupView>,
    pub path_level: Vec<PathDetail>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ContractInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub address: Option<String>,
    /// Keccak-256 of the analyzed bytes.
    pub bytecode_hash: String,
    pub byte_length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub max_paths: usize,
    pub max_blocks_per_path: usize,
    pub rounds_per_back_edge: usize,
    pub solver: String,
    pub investing_rule: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub instructions: usize,
    pub blocks: usize,
    pub edges: usize,
    pub back_edges: usize,
    pub enumerated_paths: usize,
    pub feasible_paths: usize,
    pub infeasible_paths: usize,
    pub failed_paths: usize,
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Tags {
    pub investing: bool,
    pub update: bool,
    pub payback: bool,
    pub rewarding: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SlotView {
    pub family: String,
    pub structure: Structure,
    /// Full slot expression.
    pub expr: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selector: Option<String>,
}

impl From<&SlotRef> for SlotView {
    fn from(s: &SlotRef) -> Self {
        SlotView {
            family: s.family.clone(),
            structure: s.structure,
            expr: s.slot.pretty(),
            selector: s.selector.as_ref().map(|e| e.pretty()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ActionView {
    /// Position in the path's action sequence.
    pub index: usize,
    pub kind: ActionKind,
    pub letter: String,
    pub pc: usize,
    pub block: usize,
    pub position: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_id: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u8>,
    /// Pretty-printed operands by name.
    pub fields: BTreeMap<String, String>,
    pub tags: Tags,
    /// Written or read slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<SlotView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payee_slot: Option<SlotView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_slot: Option<SlotView>,
    pub summary: String,
}

fn summary_of(a: &Action) -> String {
    match &a.operands {
        Operands::Write { slot, content, .. } => format!("{slot} := {content}"),
        Operands::Payment { payee, value, .. } => format!("pay {value} to {payee}"),
        Operands::Constraint { cond, polarity: true } => format!("require {cond}"),
        Operands::Constraint { cond, polarity: false } => format!("require !({cond})"),
        Operands::Read { source: ReadSource::Slot(s) } => format!("read {s}"),
        Operands::Read { source: ReadSource::Env(_, e) } => format!("read {e}"),
    }
}

pub fn action_view(index: usize, a: &Action) -> ActionView {
    let (slot, payee_slot, value_slot) = match &a.operands {
        Operands::Write { slot, .. } | Operands::Read { source: ReadSource::Slot(slot) } => {
            (Some(slot.into()), None, None)
        }
        Operands::Payment { payee_slot, value_slot, .. } => {
            (None, payee_slot.as_ref().map(Into::into), value_slot.as_ref().map(Into::into))
        }
        _ => (None, None, None),
    };
    ActionView {
        index,
        kind: a.kind,
        letter: a.kind.letter().to_string(),
        pc: a.pc,
        block: a.block,
        position: a.position,
        loop_id: a.loop_context.map(|c| c.loop_id),
        round: a.loop_context.map(|c| c.round),
        fields: a.fields().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        tags: Tags {
            investing: a.is_investing(),
            update: a.is_update(),
            payback: a.is_payback(),
            rewarding: a.is_rewarding(),
        },
        slot,
        payee_slot,
        value_slot,
        summary: summary_of(a),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct LaneView {
    pub members: Vec<usize>,
    pub width: usize,
    /// Actions of the first member.
    pub actions: Vec<ActionView>,
    /// Per member, indices into that member's path-level action list.
    pub action_indices: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ColumnView {
    pub block: usize,
    pub occurrence: usize,
    pub lanes: Vec<LaneView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClusterView {
    pub cluster_id: usize,
    pub members: Vec<usize>,
    pub full_sequence: Vec<ColumnKey>,
    pub columns: Vec<ColumnView>,
    pub anchors: Vec<Anchor>,
    pub loop_wrappers: Vec<LoopWrapper>,
    pub marks: Vec<Mark>,
    pub connectors: Vec<Connector>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GroupView {
    pub group_id: usize,
    pub signature: FeatureVector,
    pub path_ids: Vec<usize>,
    pub clusters: Vec<ClusterView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConditionView {
    pub condition: String,
    pub polarity: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SpiralLoop {
    pub loop_id: usize,
    /// Half-open action index ranges.
    pub first_round: [usize; 2],
    pub second_round: [usize; 2],
    /// `[round one index, round two index]` at equal in-loop positions.
    pub pairs: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Spiral {
    pub loops: Vec<SpiralLoop>,
    pub diff_markers: Vec<usize>,
    pub round_diffs: Vec<RoundDiff>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ContentNode {
    pub action: usize,
    pub expr: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StorageSlot {
    pub family: String,
    pub structure: Structure,
    /// Stores investor addresses somewhere in the contract.
    pub investor: bool,
    pub contents: Vec<ContentNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum WriteRelevance {
    Investing,
    Update,
    Plain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct WriteLink {
    pub action: usize,
    pub family: String,
    pub relevance: WriteRelevance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum PaymentRole {
    Payee,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum LineStyle {
    Solid,
    Dashed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PaymentLink {
    pub action: usize,
    pub family: String,
    pub role: PaymentRole,
    /// Solid for the payee source, dashed for the value source.
    pub style: LineStyle,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct StoragePanel {
    pub slots: Vec<StorageSlot>,
    pub write_links: Vec<WriteLink>,
    pub payment_links: Vec<PaymentLink>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PathDetail {
    pub path_id: usize,
    pub group_id: usize,
    pub signature: FeatureVector,
    pub blocks: Vec<usize>,
    pub halt: String,
    pub path_condition: Vec<ConditionView>,
    pub actions: Vec<ActionView>,
    pub spiral: Spiral,
    pub storage: StoragePanel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Violation {
    pub code: String,
    pub message: String,
}

impl Violation {
    fn new(code: &str, message: impl Into<String>) -> Self {
        Violation { code: code.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("report failed its own consistency checks: {}", .0.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; "))]
    ConsistencyViolation(Vec<Violation>),
}

pub fn bytecode_hash(bytes: &[u8]) -> String {
    to_hex(&Keccak256::digest(bytes))
}

fn storage_panel(actions: &[Action], investors: &BTreeSet<String>) -> StoragePanel {
    let mut slots: BTreeMap<String, StorageSlot> = BTreeMap::new();
    let mut panel = StoragePanel::default();
    let mut touch = |s: &SlotRef| {
        slots.entry(s.family.clone()).or_insert_with(|| StorageSlot {
            family: s.family.clone(),
            structure: s.structure,
            investor: investors.contains(&s.family),
            contents: Vec::new(),
        });
    };
    for (i, a) in actions.iter().enumerate() {
        match &a.operands {
            Operands::Write { slot, .. } => {
                touch(slot);
                let relevance = if a.is_investing() {
                    WriteRelevance::Investing
                } else if a.is_update() {
                    WriteRelevance::Update
                } else {
                    WriteRelevance::Plain
                };
                panel.write_links.push(WriteLink { action: i, family: slot.family.clone(), relevance });
            }
            Operands::Read { source: ReadSource::Slot(slot) } => touch(slot),
            Operands::Payment { payee_slot, value_slot, .. } => {
                for (s, role, style) in [
                    (payee_slot, PaymentRole::Payee, LineStyle::Solid),
                    (value_slot, PaymentRole::Value, LineStyle::Dashed),
                ] {
                    if let Some(s) = s {
                        touch(s);
                        panel.payment_links.push(PaymentLink { action: i, family: s.family.clone(), role, style });
                    }
                }
            }
            _ => {}
        }
    }
    for (i, a) in actions.iter().enumerate() {
        if let Operands::Write { slot, content, .. } = &a.operands {
            slots.get_mut(&slot.family).unwrap().contents.push(ContentNode { action: i, expr: content.pretty() });
        }
    }
    panel.slots = slots.into_values().collect();
    panel
}

fn cluster_view(id: usize, c: &MergedCluster) -> ClusterView {
    ClusterView {
        cluster_id: id,
        members: c.members.clone(),
        full_sequence: c.full_sequence(),
        columns: c
            .columns
            .iter()
            .map(|col| ColumnView {
                block: col.key.block,
                occurrence: col.key.occurrence,
                lanes: col
                    .lanes
                    .iter()
                    .map(|l| LaneView {
                        members: l.members.clone(),
                        width: l.width(),
                        actions: l.actions.iter().zip(&l.action_indices[0]).map(|(a, i)| action_view(*i, a)).collect(),
                        action_indices: l.action_indices.clone(),
                    })
                    .collect(),
            })
            .collect(),
        anchors: c.anchors.clone(),
        loop_wrappers: c.highlights.loop_wrappers.clone(),
        marks: c.highlights.marks.clone(),
        connectors: c.highlights.connectors.clone(),
    }
}

fn halt_name(s: &RunStatus) -> String {
    match s {
        RunStatus::Halted { halt } => format!("{halt:?}").to_ascii_lowercase(),
        RunStatus::Infeasible { .. } => "infeasible".into(),
        RunStatus::Aborted { .. } => "aborted".into(),
        RunStatus::Incomplete { .. } => "incomplete".into(),
    }
}

/// Assembles the report. `address` is recorded when the code came from a chain.
pub fn build_report(analysis: &Analysis, address: Option<&str>) -> Result<AnalysisReport, ReportError> {
    let cfg = analysis.cfg.as_ref();
    let feasible = analysis.sequences.len();
    let infeasible = analysis
        .runs
        .iter()
        .filter(|r| matches!(r.status, RunStatus::Infeasible { .. }) || (r.halt().is_some() && !r.feasibility.admits()))
        .count();
    let summary = Summary {
        instructions: analysis.instructions.len(),
        blocks: cfg.map_or(0, |c| c.blocks.len()),
        edges: cfg.map_or(0, |c| c.edges.len()),
        back_edges: cfg.map_or(0, |c| c.loops.back_edges().count()),
        enumerated_paths: analysis.runs.len(),
        feasible_paths: feasible,
        infeasible_paths: infeasible,
        failed_paths: analysis.runs.len() - feasible - infeasible,
        truncated: analysis.truncated,
    };
    let group_level = analysis
        .merged
        .iter()
        .map(|g| GroupView {
            group_id: g.group_id,
            signature: g.signature,
            path_ids: analysis
                .groups
                .iter()
                .find(|p| p.id == g.group_id)
                .map(|p| p.path_ids.clone())
                .unwrap_or_default(),
            clusters: g.clusters.iter().enumerate().map(|(i, c)| cluster_view(i, c)).collect(),
        })
        .collect();
    let path_level = analysis
        .sequences
        .iter()
        .map(|(id, seq)| {
            let run = &analysis.runs[*id];
            PathDetail {
                path_id: *id,
                group_id: analysis.group_of(*id).unwrap_or(usize::MAX),
                signature: analysis.features[id],
                blocks: run.path.blocks.clone(),
                halt: halt_name(&run.status),
                path_condition: run
                    .state
                    .path_condition
                    .iter()
                    .map(|(c, p)| {
                        let (c, p) = canonical_condition(c.normalize(), *p);
                        ConditionView { condition: c.pretty(), polarity: p }
                    })
                    .collect(),
                actions: seq.actions.iter().enumerate().map(|(i, a)| action_view(i, a)).collect(),
                spiral: Spiral {
                    loops: seq
                        .loop_rounds
                        .iter()
                        .map(|r| SpiralLoop {
                            loop_id: r.loop_id,
                            first_round: [r.first.start, r.first.end],
                            second_round: [r.second.start, r.second.end],
                            pairs: r.first.clone().zip(r.second.clone()).map(|(i, j)| [i, j]).collect(),
                        })
                        .collect(),
                    diff_markers: seq.diff_markers.iter().copied().collect(),
                    round_diffs: seq.round_diffs.clone(),
                },
                storage: storage_panel(&seq.actions, &analysis.registry),
            }
        })
        .collect();
    let report = AnalysisReport {
        schema_version: SCHEMA_VERSION.to_string(),
        contract: ContractInfo {
            address: address.map(str::to_string),
            bytecode_hash: bytecode_hash(&analysis.bytes),
            byte_length: analysis.bytes.len(),
        },
        settings: Settings {
            max_paths: analysis.config.limits.max_paths,
            max_blocks_per_path: analysis.config.limits.max_blocks_per_path,
            rounds_per_back_edge: ROUNDS_PER_BACK_EDGE,
            solver: analysis.config.solver.clone(),
            investing_rule: analysis.config.investing_rule.clone(),
        },
        summary,
        investor_slots: analysis.registry.iter().cloned().collect(),
        diagnostics: analysis.diagnostics.clone(),
        feature_level: analysis.feature_level.clone(),
        group_level,
        path_level,
    };
    let violations = check_report(&report);
    if violations.is_empty() {
        Ok(report)
    } else {
        Err(ReportError::ConsistencyViolation(violations))
    }
}

/// Key-sorted JSON value of the report.
pub fn to_value(report: &AnalysisReport) -> Value {
    serde_json::to_value(report).expect("report serializes")
}

/// Deterministic pretty JSON text.
pub fn to_json(report: &AnalysisReport) -> String {
    serde_json::to_string_pretty(&to_value(report)).expect("value serializes")
}

/// JSON schema of [`AnalysisReport`].
pub fn report_schema() -> Value {
    serde_json::to_value(schemars::schema_for!(AnalysisReport)).expect("schema serializes")
}

fn group_refs(g: &GroupView) -> BTreeSet<usize> {
    let mut ids: BTreeSet<usize> = g.path_ids.iter().copied().collect();
    for c in &g.clusters {
        ids.extend(&c.members);
        ids.extend(c.anchors.iter().map(|a| a.path_id));
        for col in &c.columns {
            for l in &col.lanes {
                ids.extend(&l.members);
            }
        }
    }
    ids
}

fn check_report(r: &AnalysisReport) -> Vec<Violation> {
    let mut out = Vec::new();
    if r.schema_version != SCHEMA_VERSION {
        out.push(Violation::new(
            "schema-version",
            format!("unknown schema_version {:?}; expected {SCHEMA_VERSION:?}", r.schema_version),
        ));
    }
    let path_ids: BTreeSet<usize> = r.path_level.iter().map(|p| p.path_id).collect();
    if path_ids.len() != r.path_level.len() {
        out.push(Violation::new("duplicate-path", "path_level lists a path id more than once"));
    }
    let mut grouped = BTreeSet::new();
    for g in &r.group_level {
        for id in group_refs(g) {
            if !path_ids.contains(&id) {
                out.push(Violation::new(
                    "dangling-path-id",
                    format!("group {} references path {id}, which has no path detail", g.group_id),
                ));
            }
        }
        grouped.extend(g.path_ids.iter().copied());
    }
    for id in path_ids.difference(&grouped) {
        out.push(Violation::new("ungrouped-path", format!("path {id} belongs to no group")));
    }
    for p in &r.path_level {
        let families: BTreeSet<&str> = p.storage.slots.iter().map(|s| s.family.as_str()).collect();
        let links =
            p.storage.write_links.iter().map(|l| &l.family).chain(p.storage.payment_links.iter().map(|l| &l.family));
        for f in links {
            if !families.contains(f.as_str()) {
                out.push(Violation::new(
                    "dangling-slot",
                    format!("path {} links slot family {f}, which is not in its storage panel", p.path_id),
                ));
            }
        }
    }
    let fl = &r.feature_level;
    if fl.total_paths != r.path_level.len() {
        out.push(Violation::new(
            "feature-total",
            format!("feature level counts {} paths; path level has {}", fl.total_paths, r.path_level.len()),
        ));
    }
    for t in &fl.column_totals {
        if t.dark + t.light != fl.total_paths {
            out.push(Violation::new(
                "column-total",
                format!("column {} has {} dark + {} light != {}", t.column, t.dark, t.light, fl.total_paths),
            ));
        }
    }
    for b in &fl.groups {
        match r.group_level.iter().find(|g| g.group_id == b.group_id) {
            Some(g) if g.path_ids == b.path_ids && g.signature == b.signature => {}
            _ => out.push(Violation::new(
                "band-mismatch",
                format!("feature band for group {} disagrees with the group level", b.group_id),
            )),
        }
    }
    out
}

/// Violations of the report invariants, including schema conformance.
pub fn validate_report(doc: &Value) -> Vec<Violation> {
    match serde_json::from_value::<AnalysisReport>(doc.clone()) {
        Ok(r) => check_report(&r),
        Err(e) => {
            let mut out = vec![Violation::new("schema", format!("document does not match the report schema: {e}"))];
            if let Some(v) = doc.get("schema_version").filter(|v| v.as_str() != Some(SCHEMA_VERSION)) {
                out.push(Violation::new("schema-version", format!("unknown schema_version {v}")));
            }
            out
        }
    }
}

/// Re-orders the feature level for a new column order; membership is untouched.
pub fn reorder_feature_level(fl: &ParallelSetsData, order: &[Column]) -> ParallelSetsData {
    let groups: Vec<PathGroup> = fl
        .groups
        .iter()
        .map(|b| PathGroup {
            id: b.group_id,
            signature: b.signature,
            path_ids: b.path_ids.clone(),
            band_width: b.band_width,
        })
        .collect();
    order_columns_and_groups(&groups, Some(order))
}

/// The action a group-level reference points at.
pub fn lane_action(c: &ClusterView, r: ActionRef) -> Option<&ActionView> {
    c.columns.get(r.column)?.lanes.get(r.lane)?.actions.get(r.action)
}
