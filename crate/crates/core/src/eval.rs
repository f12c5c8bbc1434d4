// Copyright 2026 the nebula authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Session-level metrics: AUROC (ties at half credit), average precision
//! over descending tie groups, validation-selected thresholds at an FPR
//! cap, and false positives per hour.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(label: &str) -> Option<Split> {
        [Split::Train, Split::Val, Split::Test]
            .into_iter()
            .find(|s| s.label() == label)
    }
}

/// One evaluated session: its peak alert score and ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSession {
    pub session_id: String,
    pub score: f64,
    pub label: u8,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    /// A metric needs both classes and one is absent.
    DegenerateLabels,
    ZeroDuration,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::DegenerateLabels => write!(f, "labels contain a single class"),
            EvalError::ZeroDuration => write!(f, "stream duration must be positive"),
        }
    }
}

impl core::error::Error for EvalError {}

fn split_classes(scored: &[(f64, u8)]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for &(score, label) in scored {
        if label == 1 {
            pos.push(score);
        } else {
            neg.push(score);
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::DegenerateLabels);
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counted half; computed with average ranks.
pub fn auroc(scored: &[(f64, u8)]) -> Result<f64, EvalError> {
    let (pos, neg) = split_classes(scored)?;
    let mut all: Vec<(f64, u8)> = scored.to_vec();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(core::cmp::Ordering::Equal));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j share the average rank of the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * nn))
}

/// Average precision over the descending score sweep; tied scores form one
/// atomic group.
pub fn average_precision(scored: &[(f64, u8)]) -> Result<f64, EvalError> {
    let (pos, _) = split_classes(scored)?;
    let mut all: Vec<(f64, u8)> = scored.to_vec();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(core::cmp::Ordering::Equal));

    let total_pos = pos.len() as f64;
    let mut ap = 0.0;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut recall_prev = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        for item in &all[i..j] {
            if item.1 == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        ap += (recall - recall_prev) * precision;
        recall_prev = recall;
        i = j;
    }
    Ok(ap)
}

/// Threshold selection and transfer: the smallest validation score whose
/// validation FPR is within `cap`, applied unchanged to the test split.
/// Returns `(threshold, test_recall, test_fpr)`.
pub fn recall_at_fpr(
    val: &[(f64, u8)],
    test: &[(f64, u8)],
    cap: f64,
) -> Result<(f64, f64, f64), EvalError> {
    let (_, val_neg) = split_classes(val)?;
    let (test_pos, test_neg) = split_classes(test)?;

    let threshold = if cap >= 1.0 {
        f64::NEG_INFINITY
    } else {
        let mut candidates: Vec<f64> = val.iter().map(|&(s, _)| s).collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
        candidates.dedup();
        let nn = val_neg.len() as f64;
        candidates
            .into_iter()
            .find(|&t| val_neg.iter().filter(|&&s| s >= t).count() as f64 / nn <= cap)
            .unwrap_or(f64::INFINITY)
    };

    let recall =
        test_pos.iter().filter(|&&s| s >= threshold).count() as f64 / test_pos.len() as f64;
    let fpr =
        test_neg.iter().filter(|&&s| s >= threshold).count() as f64 / test_neg.len() as f64;
    Ok((threshold, recall, fpr))
}

/// Alert-bearing benign sessions per stream hour at a fixed threshold.
pub fn fp_per_hour(
    scored: &[(f64, u8)],
    threshold: f64,
    stream_hours: f64,
) -> Result<f64, EvalError> {
    if !(stream_hours > 0.0) {
        return Err(EvalError::ZeroDuration);
    }
    let fps = scored
        .iter()
        .filter(|&&(s, y)| y == 0 && s >= threshold)
        .count();
    Ok(fps as f64 / stream_hours)
}

/// `(score, label)` pairs of one split.
pub fn split_pairs(sessions: &[ScoredSession], split: Split) -> Vec<(f64, u8)> {
    sessions
        .iter()
        .filter(|s| s.split == split)
        .map(|s| (s.score, s.label))
        .collect()
}

/// Deterministic 60/20/20 split assignment from the session id.
pub fn assign_split(session_id: &str, seed: u64) -> Split {
    let mut h = 0xCBF2_9CE4_8422_2325u64 ^ seed;
    for b in session_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let mut z = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    match (z ^ (z >> 31)) % 100 {
        0..=59 => Split::Train,
        60..=79 => Split::Val,
        _ => Split::Test,
    }
}

impl ScoredSession {
    pub fn to_csv_row(&self) -> String {
        let mut row = String::new();
        row.push_str(&self.session_id);
        row.push(',');
        row.push_str(self.split.label());
        row.push(',');
        row.push_str(&self.label.to_string());
        row.push(',');
        row.push_str(&alloc::format!("{:.6}", self.score));
        row
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(pos: &[f64], neg: &[f64]) -> Vec<(f64, u8)> {
        pos.iter()
            .map(|&s| (s, 1u8))
            .chain(neg.iter().map(|&s| (s, 0u8)))
            .collect()
    }

    #[test]
    fn auroc_separable_and_ties() {
        let p = pairs(&[1.0, 1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(auroc(&p).unwrap(), 1.0);
        let all_equal = pairs(&[0.5, 0.5], &[0.5, 0.5, 0.5]);
        assert_eq!(auroc(&all_equal).unwrap(), 0.5);
        assert_eq!(auroc(&pairs(&[1.0], &[])), Err(EvalError::DegenerateLabels));
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        // Brute force: count positive-negative pairs with half credit.
        let scored = pairs(&[0.9, 0.8, 0.8, 0.3], &[0.8, 0.5, 0.2, 0.2, 0.1]);
        let (pos, neg) = split_classes(&scored).unwrap();
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        let oracle = wins / (pos.len() * neg.len()) as f64;
        assert!((auroc(&scored).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn ap_examples() {
        let perfect = pairs(&[1.0, 0.9, 0.8, 0.7, 0.6], &[0.5, 0.4, 0.3, 0.2, 0.1]);
        assert!((average_precision(&perfect).unwrap() - 1.0).abs() < 1e-12);
        let inverted = pairs(&[0.0], &[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1]);
        assert!((average_precision(&inverted).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn threshold_selection_and_transfer() {
        // Separable validation data at cap 0: threshold sits above every
        // negative.
        let val = pairs(&[0.9, 0.8], &[0.4, 0.3]);
        let test = pairs(&[0.85, 0.2], &[0.5, 0.1]);
        let (t, recall, fpr) = recall_at_fpr(&val, &test, 1e-12).unwrap();
        assert_eq!(t, 0.8);
        assert_eq!(recall, 0.5);
        assert_eq!(fpr, 0.0);

        // Cap 1 admits everything.
        let (t, recall, _) = recall_at_fpr(&val, &test, 1.0).unwrap();
        assert_eq!(t, f64::NEG_INFINITY);
        assert_eq!(recall, 1.0);
    }

    #[test]
    fn fp_rate_arithmetic() {
        let scored = pairs(&[0.9], &[0.8, 0.7, 0.6, 0.1]);
        assert_eq!(fp_per_hour(&scored, 0.5, 1.5).unwrap(), 2.0);
        assert_eq!(fp_per_hour(&scored, 0.95, 2.0).unwrap(), 0.0);
        assert_eq!(fp_per_hour(&scored, 0.5, 0.0), Err(EvalError::ZeroDuration));
    }

    #[test]
    fn splits_are_deterministic_and_partition() {
        for i in 0..50 {
            let sid = alloc::format!("s{i:06}");
            assert_eq!(assign_split(&sid, 7), assign_split(&sid, 7));
        }
    }
}
