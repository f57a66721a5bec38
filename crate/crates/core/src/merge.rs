//! Two-step merging of a path group for the group-level summary.
//!
//! Step one clusters paths whose shared blocks appear in the same relative order
//! and interleaves each cluster into one full column sequence. Step two splits
//! every column into lanes of members that perform identical actions there.
//!
//! A block repeated within a path (loop rounds) yields one column per
//! occurrence, keyed by `(block, occurrence)`.

use std::collections::{BTreeSet, HashMap};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::actions::{Action, ActionSequence, Operands};
use crate::cfg::{BlockId, BlockPath};
use crate::features::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub struct ColumnKey {
    pub block: BlockId,
    pub occurrence: usize,
}

pub fn column_keys(blocks: &[BlockId]) -> Vec<ColumnKey> {
    let mut seen: HashMap<BlockId, usize> = HashMap::new();
    blocks
        .iter()
        .map(|b| {
            let n = seen.entry(*b).or_default();
            *n += 1;
            ColumnKey { block: *b, occurrence: *n - 1 }
        })
        .collect()
}

/// True when the keys `seq` shares with `full` appear in the same order in both.
pub fn compatible(full: &[ColumnKey], seq: &[ColumnKey]) -> bool {
    let pos: HashMap<ColumnKey, usize> = full.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let shared: Vec<usize> = seq.iter().filter_map(|k| pos.get(k).copied()).collect();
    shared.windows(2).all(|w| w[0] < w[1])
}

/// Supersequence of two compatible sequences. Shared keys anchor the merge;
/// the unshared runs between anchors are interleaved by lower key first.
pub fn interleave(full: &[ColumnKey], seq: &[ColumnKey]) -> Vec<ColumnKey> {
    let in_full: BTreeSet<ColumnKey> = full.iter().copied().collect();
    let in_seq: BTreeSet<ColumnKey> = seq.iter().copied().collect();
    let mut out = Vec::with_capacity(full.len() + seq.len());
    let (mut i, mut j) = (0, 0);
    loop {
        let a_end = full[i..].iter().position(|k| in_seq.contains(k)).map_or(full.len(), |p| i + p);
        let b_end = seq[j..].iter().position(|k| in_full.contains(k)).map_or(seq.len(), |p| j + p);
        let (mut a, mut b) = (i, j);
        while a < a_end || b < b_end {
            if b == b_end || (a < a_end && full[a] <= seq[b]) {
                out.push(full[a]);
                a += 1;
            } else {
                out.push(seq[b]);
                b += 1;
            }
        }
        if a_end == full.len() {
            debug_assert_eq!(b_end, seq.len());
            break;
        }
        out.push(full[a_end]);
        i = a_end + 1;
        j = b_end + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cluster {
    pub members: Vec<usize>,
    pub full_sequence: Vec<ColumnKey>,
}

/// First-fit clustering in the given order.
pub fn merge_subsequences(paths: &[(usize, &[BlockId])]) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for (id, blocks) in paths {
        let keys = column_keys(blocks);
        match clusters.iter_mut().find(|c| compatible(&c.full_sequence, &keys)) {
            Some(c) => {
                c.full_sequence = interleave(&c.full_sequence, &keys);
                c.members.push(*id);
            }
            None => clusters.push(Cluster { members: vec![*id], full_sequence: keys }),
        }
    }
    clusters
}

/// One path of a group, with its actions.
#[derive(Debug, Clone, Copy)]
pub struct Member<'a> {
    pub id: usize,
    pub path: &'a BlockPath,
    pub actions: &'a ActionSequence,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lane {
    pub members: Vec<usize>,
    /// Actions of the first member; all members behave identically here.
    pub actions: Vec<Action>,
    /// Per member, indices into that member's action sequence.
    pub action_indices: Vec<Vec<usize>>,
}

impl Lane {
    pub fn width(&self) -> usize {
        self.members.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedColumn {
    pub key: ColumnKey,
    pub lanes: Vec<Lane>,
}

fn same_actions(a: &[&Action], b: &[Action]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_behavior(y))
}

/// Splits each column of `cluster` into lanes by structurally equal actions.
pub fn separate_actions(cluster: &Cluster, members: &[Member<'_>]) -> Vec<MergedColumn> {
    let mut columns: Vec<MergedColumn> =
        cluster.full_sequence.iter().map(|k| MergedColumn { key: *k, lanes: Vec::new() }).collect();
    let col_of: HashMap<ColumnKey, usize> = cluster.full_sequence.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    for m in members.iter().filter(|m| cluster.members.contains(&m.id)) {
        let keys = column_keys(&m.path.blocks);
        let mut per_pos: Vec<Vec<usize>> = vec![Vec::new(); keys.len()];
        for (ai, a) in m.actions.actions.iter().enumerate() {
            per_pos[a.position].push(ai);
        }
        for (pos, key) in keys.iter().enumerate() {
            let col = &mut columns[col_of[key]];
            let acts: Vec<&Action> = per_pos[pos].iter().map(|i| &m.actions.actions[*i]).collect();
            match col.lanes.iter_mut().find(|l| same_actions(&acts, &l.actions)) {
                Some(l) => {
                    l.members.push(m.id);
                    l.action_indices.push(per_pos[pos].clone());
                }
                None => col.lanes.push(Lane {
                    members: vec![m.id],
                    actions: acts.into_iter().cloned().collect(),
                    action_indices: vec![per_pos[pos].clone()],
                }),
            }
        }
    }
    columns
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub struct ActionRef {
    pub column: usize,
    pub lane: usize,
    pub action: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum MarkKind {
    Investing,
    Payment,
    Payback,
    Rewarding,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub struct Mark {
    pub at: ActionRef,
    pub kind: MarkKind,
}

/// Columns spanned by both rounds of a loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub struct LoopWrapper {
    pub loop_id: usize,
    pub first_column: usize,
    pub last_column: usize,
}

impl LoopWrapper {
    pub fn contains(&self, column: usize) -> bool {
        (self.first_column..=self.last_column).contains(&column)
    }
}

/// Links an investing write to a rewarding payment over the same slot family.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub struct Connector {
    pub from: ActionRef,
    pub to: ActionRef,
    pub family: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Anchor {
    pub path_id: usize,
    pub entry: usize,
    pub exit: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Highlights {
    pub marks: Vec<Mark>,
    pub loop_wrappers: Vec<LoopWrapper>,
    pub connectors: Vec<Connector>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedCluster {
    pub members: Vec<usize>,
    pub columns: Vec<MergedColumn>,
    pub anchors: Vec<Anchor>,
    pub highlights: Highlights,
}

impl MergedCluster {
    pub fn full_sequence(&self) -> Vec<ColumnKey> {
        self.columns.iter().map(|c| c.key).collect()
    }

    pub fn action(&self, r: ActionRef) -> &Action {
        &self.columns[r.column].lanes[r.lane].actions[r.action]
    }

    pub fn action_refs(&self) -> impl Iterator<Item = (ActionRef, &Action)> + '_ {
        self.columns.iter().enumerate().flat_map(|(ci, c)| {
            c.lanes.iter().enumerate().flat_map(move |(li, l)| {
                l.actions.iter().enumerate().map(move |(ai, a)| (ActionRef { column: ci, lane: li, action: ai }, a))
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedGroup {
    pub group_id: usize,
    pub signature: FeatureVector,
    pub clusters: Vec<MergedCluster>,
}

fn written_family(a: &Action) -> Option<&str> {
    match &a.operands {
        Operands::Write { slot, is_investing: true, .. } => Some(&slot.family),
        _ => None,
    }
}

/// Marks, loop wrappers and investing-to-rewarding connectors of one cluster.
/// Second-round payments get marks but no connectors, so each payout site is
/// linked once.
pub fn project_highlights(cluster: &MergedCluster, members: &[Member<'_>]) -> Highlights {
    let mut h = Highlights::default();
    for (r, a) in cluster.action_refs() {
        if a.is_investing() {
            h.marks.push(Mark { at: r, kind: MarkKind::Investing });
        }
        if a.is_payment() {
            h.marks.push(Mark { at: r, kind: MarkKind::Payment });
        }
        if a.is_payback() {
            h.marks.push(Mark { at: r, kind: MarkKind::Payback });
        }
        if a.is_rewarding() {
            h.marks.push(Mark { at: r, kind: MarkKind::Rewarding });
        }
    }

    let col_of: HashMap<ColumnKey, usize> = cluster.columns.iter().enumerate().map(|(i, c)| (c.key, i)).collect();
    let mut wrappers = BTreeSet::new();
    for m in members.iter().filter(|m| cluster.members.contains(&m.id)) {
        let keys = column_keys(&m.path.blocks);
        for span in &m.path.loop_spans {
            let (start, end) = (span.first_round.start, span.second_round.end);
            if start >= end {
                continue;
            }
            wrappers.insert(LoopWrapper {
                loop_id: span.loop_id,
                first_column: col_of[&keys[start]],
                last_column: col_of[&keys[end - 1]],
            });
        }
    }
    h.loop_wrappers = wrappers.into_iter().collect();

    let mut connectors = BTreeSet::new();
    let investing: Vec<(ActionRef, &str)> =
        cluster.action_refs().filter_map(|(r, a)| written_family(a).map(|f| (r, f))).collect();
    for (to, a) in cluster.action_refs() {
        let Operands::Payment { payee_slot: Some(ps), is_rewarding: true, .. } = &a.operands else { continue };
        if a.loop_context.is_some_and(|c| c.round == 2) {
            continue;
        }
        for (from, fam) in &investing {
            if *fam == ps.family {
                connectors.insert(Connector { from: *from, to, family: ps.family.clone() });
            }
        }
    }
    h.connectors = connectors.into_iter().collect();
    h
}

/// Runs both merge steps and the highlight projection for one group. Members
/// are processed in ascending path id.
pub fn merge_group(group_id: usize, signature: FeatureVector, members: &[Member<'_>]) -> MergedGroup {
    let mut ordered: Vec<Member<'_>> = members.to_vec();
    ordered.sort_by_key(|m| m.id);
    let blocks: Vec<(usize, &[BlockId])> = ordered.iter().map(|m| (m.id, m.path.blocks.as_slice())).collect();
    let clusters = merge_subsequences(&blocks)
        .into_iter()
        .map(|c| {
            let columns = separate_actions(&c, &ordered);
            let col_of: HashMap<ColumnKey, usize> = c.full_sequence.iter().enumerate().map(|(i, k)| (*k, i)).collect();
            let anchors = ordered
                .iter()
                .filter(|m| c.members.contains(&m.id))
                .map(|m| {
                    let keys = column_keys(&m.path.blocks);
                    Anchor {
                        path_id: m.id,
                        entry: keys.first().map_or(0, |k| col_of[k]),
                        exit: keys.last().map_or(0, |k| col_of[k]),
                    }
                })
                .collect();
            let mut mc = MergedCluster { members: c.members, columns, anchors, highlights: Highlights::default() };
            mc.highlights = project_highlights(&mc, &ordered);
            mc
        })
        .collect();
    MergedGroup { group_id, signature, clusters }
}
