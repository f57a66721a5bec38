//! Ponzi feature vectors, path groups and parallel-sets layout data.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::ActionSequence;
use crate::cfg::BlockPath;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize, JsonSchema)]
pub struct FeatureVector {
    pub investing: bool,
    pub payment: bool,
    pub has_loop: bool,
    pub rewarding: bool,
}

impl FeatureVector {
    pub fn get(&self, column: Column) -> bool {
        match column {
            Column::Investing => self.investing,
            Column::Payment => self.payment,
            Column::Loop => self.has_loop,
            Column::Rewarding => self.rewarding,
        }
    }

    pub fn count(&self) -> usize {
        Column::DEFAULT_ORDER.iter().filter(|c| self.get(**c)).count()
    }

    /// Bits in `order`, first column most significant.
    pub fn key(&self, order: &[Column]) -> u8 {
        order.iter().fold(0, |k, c| (k << 1) | self.get(*c) as u8)
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in Column::DEFAULT_ORDER {
            f.write_str(if self.get(c) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

pub fn tag_features(seq: &ActionSequence, path: &BlockPath) -> FeatureVector {
    FeatureVector {
        investing: seq.actions.iter().any(|a| a.is_investing()),
        payment: seq.actions.iter().any(|a| a.is_payment()),
        has_loop: !path.loop_spans.is_empty(),
        rewarding: seq.actions.iter().any(|a| a.is_rewarding()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct PathGroup {
    pub id: usize,
    pub signature: FeatureVector,
    pub path_ids: Vec<usize>,
    pub band_width: usize,
}

/// Partitions `(path id, vector)` pairs by signature. Group ids follow the
/// default column order, so they stay fixed when columns are reordered.
pub fn group_paths(vectors: &[(usize, FeatureVector)]) -> Vec<PathGroup> {
    let mut by_sig: BTreeMap<FeatureVector, Vec<usize>> = BTreeMap::new();
    for (id, v) in vectors {
        by_sig.entry(*v).or_default().push(*id);
    }
    let mut groups: Vec<(FeatureVector, Vec<usize>)> = by_sig.into_iter().collect();
    groups.sort_by_key(|(sig, _)| std::cmp::Reverse(sig.key(&Column::DEFAULT_ORDER)));
    groups
        .into_iter()
        .enumerate()
        .map(|(id, (signature, mut path_ids))| {
            path_ids.sort_unstable();
            PathGroup { id, signature, band_width: path_ids.len(), path_ids }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, JsonSchema)]
pub enum Column {
    Investing,
    Payment,
    Loop,
    Rewarding,
}

impl Column {
    pub const DEFAULT_ORDER: [Column; 4] = [Column::Investing, Column::Payment, Column::Loop, Column::Rewarding];

    pub fn name(self) -> &'static str {
        match self {
            Column::Investing => "Investing",
            Column::Payment => "Payment",
            Column::Loop => "Loop",
            Column::Rewarding => "Rewarding",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ColumnOrderError {
    #[error("unknown column name {0:?}")]
    UnknownColumnName(String),
    #[error("column order must list each of Investing, Payment, Loop, Rewarding exactly once")]
    NotAPermutation,
}

impl FromStr for Column {
    type Err = ColumnOrderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Column::DEFAULT_ORDER
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ColumnOrderError::UnknownColumnName(s.to_string()))
    }
}

/// Parses a column override. Every column must appear exactly once.
pub fn parse_column_order<S: AsRef<str>>(names: &[S]) -> Result<Vec<Column>, ColumnOrderError> {
    let cols = names.iter().map(|n| n.as_ref().parse()).collect::<Result<Vec<Column>, _>>()?;
    let mut sorted = cols.clone();
    sorted.sort();
    if sorted != Column::DEFAULT_ORDER {
        return Err(ColumnOrderError::NotAPermutation);
    }
    Ok(cols)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ColumnTotal {
    pub column: Column,
    pub dark: usize,
    pub light: usize,
}

/// One band: a group plus its dark (true) / light (false) cell per column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Band {
    pub group_id: usize,
    pub signature: FeatureVector,
    pub path_ids: Vec<usize>,
    pub band_width: usize,
    pub dark: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct ParallelSetsData {
    pub columns: Vec<Column>,
    pub groups: Vec<Band>,
    pub column_totals: Vec<ColumnTotal>,
    pub total_paths: usize,
    /// Band pairs whose vertical order flips between adjacent columns.
    pub crossings: usize,
}

/// Vertical rank of each band in one column: dark segment first, then group order.
fn stacking(groups: &[Band], col: usize) -> Vec<(bool, usize)> {
    groups.iter().enumerate().map(|(i, g)| (!g.dark[col], i)).collect()
}

fn count_crossings(groups: &[Band], columns: usize) -> usize {
    let mut total = 0;
    for c in 1..columns {
        let (a, b) = (stacking(groups, c - 1), stacking(groups, c));
        for i in 0..groups.len() {
            for j in i + 1..groups.len() {
                if (a[i] < a[j]) != (b[i] < b[j]) {
                    total += 1;
                }
            }
        }
    }
    total
}

/// Orders columns (default or `order`) and groups by descending signature key.
pub fn order_columns_and_groups(groups: &[PathGroup], order: Option<&[Column]>) -> ParallelSetsData {
    let columns: Vec<Column> = order.map(<[Column]>::to_vec).unwrap_or_else(|| Column::DEFAULT_ORDER.to_vec());
    let mut bands: Vec<Band> = groups
        .iter()
        .map(|g| Band {
            group_id: g.id,
            signature: g.signature,
            path_ids: g.path_ids.clone(),
            band_width: g.band_width,
            dark: columns.iter().map(|c| g.signature.get(*c)).collect(),
        })
        .collect();
    bands.sort_by_key(|b| (std::cmp::Reverse(b.signature.key(&columns)), b.group_id));
    let total_paths = bands.iter().map(|b| b.band_width).sum();
    let column_totals = columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let dark = bands.iter().filter(|b| b.dark[i]).map(|b| b.band_width).sum();
            ColumnTotal { column: *c, dark, light: total_paths - dark }
        })
        .collect();
    let crossings = count_crossings(&bands, columns.len());
    ParallelSetsData { columns, groups: bands, column_totals, total_paths, crossings }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(bits: &str) -> FeatureVector {
        let b: Vec<bool> = bits.chars().map(|c| c == '1').collect();
        FeatureVector { investing: b[0], payment: b[1], has_loop: b[2], rewarding: b[3] }
    }

    #[test]
    fn empty_sequence_has_no_features() {
        let seq = ActionSequence::default();
        let path = BlockPath { blocks: vec![0], loop_spans: vec![] };
        assert_eq!(tag_features(&seq, &path), FeatureVector::default());
    }

    #[test]
    fn grouping_partitions_by_signature() {
        let g = group_paths(&[(0, fv("0100")), (1, fv("0100")), (2, fv("0000"))]);
        assert_eq!(g.len(), 2);
        assert_eq!((g[0].signature, g[0].band_width, g[0].path_ids.clone()), (fv("0100"), 2, vec![0, 1]));
        assert_eq!(g[1].band_width, 1);
    }

    #[test]
    fn default_order_and_sort() {
        let g = group_paths(&[(0, fv("0000")), (1, fv("1010")), (2, fv("1111"))]);
        let d = order_columns_and_groups(&g, None);
        assert_eq!(d.columns, Column::DEFAULT_ORDER.to_vec());
        let sigs: Vec<String> = d.groups.iter().map(|b| b.signature.to_string()).collect();
        assert_eq!(sigs, vec!["1111", "1010", "0000"]);
        for t in &d.column_totals {
            assert_eq!(t.dark + t.light, 3);
        }
    }

    #[test]
    fn single_group_has_no_crossings() {
        let g = group_paths(&[(0, fv("1101"))]);
        assert_eq!(order_columns_and_groups(&g, None).crossings, 0);
    }

    #[test]
    fn crossings_count_flipped_pairs() {
        // 1000 on top in Investing, 0100 on top in Payment, back to group order in Loop
        let g = group_paths(&[(0, fv("1000")), (1, fv("0100"))]);
        assert_eq!(order_columns_and_groups(&g, None).crossings, 2);
    }

    #[test]
    fn override_reorders_only() {
        let g = group_paths(&[(0, fv("1000")), (1, fv("0001")), (2, fv("0001"))]);
        let order = parse_column_order(&["Rewarding", "Loop", "Payment", "Investing"]).unwrap();
        let d = order_columns_and_groups(&g, Some(&order));
        assert_eq!(d.columns, order);
        assert_eq!(d.groups[0].signature, fv("0001"));
        let mut a: Vec<(usize, usize)> = d.groups.iter().map(|b| (b.group_id, b.band_width)).collect();
        a.sort();
        let mut b: Vec<(usize, usize)> = g.iter().map(|x| (x.id, x.band_width)).collect();
        b.sort();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_override_names() {
        assert_eq!(
            parse_column_order(&["Investing", "Payment", "Loop", "Bogus"]),
            Err(ColumnOrderError::UnknownColumnName("Bogus".into()))
        );
        assert_eq!(
            parse_column_order(&["Loop", "Loop", "Payment", "Investing"]),
            Err(ColumnOrderError::NotAPermutation)
        );
    }
}
