//! Tokenizer compatibility statistics and alignment quality metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqalign::SpanAlignment;
use crate::vocab::{CanonicalToken, Vocabulary};
use crate::vocabmap::MappingTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatReport {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub smr: Option<f64>,
    pub vmr: f64,
    pub n_sentences: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub span_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mapping_coverage: Option<f64>,
}

fn jaccard(a: &[CanonicalToken], b: &[CanonicalToken]) -> f64 {
    let a: HashSet<&CanonicalToken> = a.iter().collect();
    let b: HashSet<&CanonicalToken> = b.iter().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Per-sentence Jaccard overlap of the canonical token sets, averaged over
/// sentences. An empty corpus scores 0.
pub fn sequence_matching_rate(tok_a: &[Vec<CanonicalToken>], tok_b: &[Vec<CanonicalToken>]) -> Result<f64> {
    if tok_a.len() != tok_b.len() {
        return Err(Error::LengthMismatch { what: "tokenized sentences", left: tok_a.len(), right: tok_b.len() });
    }
    if tok_a.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = tok_a.iter().zip(tok_b).map(|(a, b)| jaccard(a, b)).sum();
    Ok(total / tok_a.len() as f64)
}

/// Shared canonical forms divided by the smaller vocabulary size.
pub fn vocabulary_matching_rate(v_a: &Vocabulary, v_b: &Vocabulary) -> f64 {
    let a: HashSet<&CanonicalToken> = v_a.canonical_tokens().iter().collect();
    let b: HashSet<&CanonicalToken> = v_b.canonical_tokens().iter().collect();
    let shared = a.intersection(&b).count();
    shared as f64 / v_a.size().min(v_b.size()) as f64
}

fn joined(tokens: &[CanonicalToken], (start, end): (usize, usize)) -> Option<String> {
    tokens.get(start..end).map(|span| span.iter().map(CanonicalToken::surface).collect())
}

/// Number of span pairs whose joined surfaces match, and the total count.
pub fn span_match_counts(
    alignment: &SpanAlignment,
    tok_a: &[CanonicalToken],
    tok_b: &[CanonicalToken],
) -> (usize, usize) {
    let matched = alignment
        .pairs
        .iter()
        .filter(|p| {
            let a = joined(tok_a, p.student);
            a.is_some() && a == joined(tok_b, p.teacher)
        })
        .count();
    (matched, alignment.pairs.len())
}

/// Fraction of span pairs, over the whole corpus, whose joined student and
/// teacher surfaces are string-equal. `tok_a` is the student side.
pub fn span_alignment_accuracy(
    alignments: &[SpanAlignment],
    tok_a: &[Vec<CanonicalToken>],
    tok_b: &[Vec<CanonicalToken>],
) -> f64 {
    let (matched, total) = alignments
        .iter()
        .zip(tok_a.iter().zip(tok_b))
        .map(|(al, (a, b))| span_match_counts(al, a, b))
        .fold((0, 0), |(m, t), (dm, dt)| (m + dm, t + dt));
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// Multiset of source token ids observed in top-k supports.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SupportLog {
    counts: BTreeMap<u32, u64>,
}

impl SupportLog {
    pub fn record(&mut self, ids: &[u32]) {
        for &id in ids {
            *self.counts.entry(id).or_default() += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn mapped(&self, table: &MappingTable) -> u64 {
        self.counts.iter().filter(|(id, _)| table.contains(**id)).map(|(_, c)| c).sum()
    }
}

/// Fraction of observed support occurrences that the table maps. 0 when
/// nothing was observed.
pub fn mapping_coverage(table: &MappingTable, support_log: &SupportLog) -> f64 {
    let total = support_log.total();
    if total == 0 {
        return 0.0;
    }
    support_log.mapped(table) as f64 / total as f64
}

/// One row of the per-sentence CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentenceStats {
    pub index: usize,
    pub student_tokens: usize,
    pub teacher_tokens: usize,
    pub spans: usize,
    pub smr: f64,
    pub span_accuracy: f64,
}

impl SentenceStats {
    pub fn compute(index: usize, alignment: &SpanAlignment, stu: &[CanonicalToken], tea: &[CanonicalToken]) -> Self {
        let (matched, total) = span_match_counts(alignment, stu, tea);
        Self {
            index,
            student_tokens: stu.len(),
            teacher_tokens: tea.len(),
            spans: total,
            smr: jaccard(stu, tea),
            span_accuracy: if total == 0 { 0.0 } else { matched as f64 / total as f64 },
        }
    }
}

pub fn sentence_stats_csv(rows: &[SentenceStats]) -> String {
    let mut out = String::from("sentence,student_tokens,teacher_tokens,spans,smr,span_accuracy\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.index, r.student_tokens, r.teacher_tokens, r.spans, r.smr, r.span_accuracy
        )
        .expect("writing to a string");
    }
    out
}
