//! Comparison of the two unrolled rounds of each loop.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{Diagnostic, Stage};

use super::ActionSequence;

/// A run of text that is either shared by both rounds or specific to one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct Segment {
    pub text: String,
    pub same: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct FieldDiff {
    pub field: String,
    pub first: String,
    pub second: String,
    pub same: bool,
    pub first_segments: Vec<Segment>,
    pub second_segments: Vec<Segment>,
}

/// Differences between a round-one action and its round-two partner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
pub struct RoundDiff {
    pub loop_id: usize,
    pub first_index: usize,
    pub second_index: usize,
    pub fields: Vec<FieldDiff>,
}

fn segments(text: &str, prefix: usize, suffix: usize) -> Vec<Segment> {
    let mid_end = text.len() - suffix;
    [(&text[..prefix], true), (&text[prefix..mid_end], false), (&text[mid_end..], true)]
        .into_iter()
        .filter(|(t, _)| !t.is_empty())
        .map(|(t, same)| Segment { text: t.to_string(), same })
        .collect()
}

fn field_diff(field: &str, a: String, b: String) -> FieldDiff {
    let prefix: usize = a.chars().zip(b.chars()).take_while(|(x, y)| x == y).map(|(x, _)| x.len_utf8()).sum();
    let max_suffix = a.len().min(b.len()) - prefix;
    let suffix: usize = a[prefix..]
        .chars()
        .rev()
        .zip(b[prefix..].chars().rev())
        .take_while(|(x, y)| x == y)
        .map(|(x, _)| x.len_utf8())
        .sum::<usize>()
        .min(max_suffix);
    FieldDiff {
        field: field.to_string(),
        same: a == b,
        first_segments: segments(&a, prefix, suffix),
        second_segments: segments(&b, prefix, suffix),
        first: a,
        second: b,
    }
}

/// Pairs round-one and round-two actions by in-loop position, marks second-round
/// actions whose kind or operands differ, and records field-level diffs for them.
pub fn diff_loop_rounds(seq: &mut ActionSequence) {
    seq.diff_markers.clear();
    seq.round_diffs.clear();
    for pair in &seq.loop_rounds {
        if pair.first.len() != pair.second.len() {
            seq.diagnostics.push(
                Diagnostic::new(
                    Stage::Actions,
                    "round-shape-mismatch",
                    format!(
                        "loop {} performs {} actions in round one and {} in round two",
                        pair.loop_id,
                        pair.first.len(),
                        pair.second.len()
                    ),
                )
                .on_path(seq.path_id),
            );
        }
        for (i, j) in pair.first.clone().zip(pair.second.clone()) {
            let (a, b) = (&seq.actions[i], &seq.actions[j]);
            if a.same_behavior(b) {
                continue;
            }
            seq.diff_markers.insert(j);
            let fields = if a.kind == b.kind {
                a.fields().into_iter().zip(b.fields()).map(|((n, x), (_, y))| field_diff(n, x, y)).collect()
            } else {
                vec![field_diff("kind", format!("{:?}", a.kind), format!("{:?}", b.kind))]
            };
            seq.round_diffs.push(RoundDiff { loop_id: pair.loop_id, first_index: i, second_index: j, fields });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_split_shared_affixes() {
        let d = field_diff("payee", "SLOAD(keccak(1))".into(), "SLOAD(keccak(1) + 1)".into());
        assert!(!d.same);
        let texts: Vec<(&str, bool)> = d.second_segments.iter().map(|s| (s.text.as_str(), s.same)).collect();
        assert_eq!(texts, vec![("SLOAD(keccak(1)", true), (" + 1", false), (")", true)]);
        let first: Vec<(&str, bool)> = d.first_segments.iter().map(|s| (s.text.as_str(), s.same)).collect();
        assert_eq!(first, vec![("SLOAD(keccak(1)", true), (")", true)]);
    }

    #[test]
    fn identical_fields_are_one_same_segment() {
        let d = field_diff("value", "7".into(), "7".into());
        assert!(d.same);
        assert_eq!(d.second_segments, vec![Segment { text: "7".into(), same: true }]);
    }

    #[test]
    fn overlapping_affixes_do_not_overlap() {
        // "aa" vs "aaa": prefix 2, suffix clipped to 0
        let d = field_diff("f", "aa".into(), "aaa".into());
        let joined: String = d.second_segments.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(joined, "aaa");
        let joined: String = d.first_segments.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(joined, "aa");
    }
}
