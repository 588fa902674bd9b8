//! End-to-end alignment and loss over sentence records.
//!
//! Per sentence: entropies and weights on both sides, weighted DTW, span
//! merging, top-k selection, forward then reverse table update, block
//! assembly and the losses. Sentence preprocessing is independent and may run
//! concurrently; table updates commit strictly in record order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{kl_sum, lm_sum, LossConfig, LossReport, LossSum};
use crate::par;
use crate::seqalign::{alignment_weights, merge_spans, position_entropy, weighted_dtw, SpanAlignment, WeightVector};
use crate::stats::{
    mapping_coverage, sequence_matching_rate, span_alignment_accuracy, vocabulary_matching_rate, CompatReport,
    SentenceStats, SupportLog,
};
use crate::tensorio::{LogitsMatrix, SentenceRecord};
use crate::vocab::{build_exact_match_table, build_reverse_exact_match_table, CanonicalToken, Vocabulary};
use crate::vocabmap::{
    assemble_from_topk, topk_select, update_dynamic_map, AlignedBlock, MappingTable, Side, TopKSelection,
};

/// Records handed to the worker pool at a time.
const CHUNK: usize = 32;

fn default_theta() -> f64 {
    0.3
}
fn default_k() -> usize {
    100
}
fn default_alpha() -> f64 {
    0.5
}
fn default_temperature() -> f64 {
    2.0
}
fn default_c() -> u32 {
    3
}
fn default_epsilon() -> f64 {
    1e-12
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CdmConfig {
    /// fuzzy-match threshold on the normalized edit distance (strict)
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// top-k candidates per position
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// DTW weight range parameter
    #[serde(default = "default_c", alias = "C")]
    pub c: u32,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl Default for CdmConfig {
    fn default() -> Self {
        Self {
            theta: default_theta(),
            k: default_k(),
            alpha: default_alpha(),
            temperature: default_temperature(),
            c: default_c(),
            epsilon: default_epsilon(),
        }
    }
}

impl CdmConfig {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Self::from_json_str(&json)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta {} outside [0, 1]", self.theta)));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.c < 2 {
            return Err(Error::Config(format!("C = {} must be at least 2", self.c)));
        }
        self.loss_config().validate()
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig { alpha: self.alpha, temperature: self.temperature, epsilon: self.epsilon }
    }
}

/// How DTW weights are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    Entropy,
    /// every weight 1: plain edit-distance DTW
    Uniform,
}

/// Mapping tables in both directions plus the supports observed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingState {
    pub forward: MappingTable,
    pub reverse: MappingTable,
    pub forward_support: SupportLog,
    pub reverse_support: SupportLog,
}

impl MappingState {
    /// Both tables start from the exact-match tables.
    pub fn new(v_stu: &Vocabulary, v_tea: &Vocabulary) -> Self {
        Self {
            forward: build_exact_match_table(v_stu, v_tea),
            reverse: build_reverse_exact_match_table(v_stu, v_tea),
            forward_support: SupportLog::default(),
            reverse_support: SupportLog::default(),
        }
    }

    /// Coverage of both directions' observed supports by the current tables.
    pub fn coverage(&self) -> f64 {
        let total = self.forward_support.total() + self.reverse_support.total();
        if total == 0 {
            return 0.0;
        }
        let fwd = mapping_coverage(&self.forward, &self.forward_support) * self.forward_support.total() as f64;
        let rev = mapping_coverage(&self.reverse, &self.reverse_support) * self.reverse_support.total() as f64;
        (fwd + rev) / total as f64
    }

    pub fn export_json(&self) -> String {
        MappingTable::export_json(&[&self.forward, &self.reverse])
    }
}

/// Everything produced for one sentence.
#[derive(Debug, Clone)]
pub struct SentenceOutput {
    pub report: LossReport,
    pub kl: LossSum,
    pub lm: LossSum,
    pub alignment: SpanAlignment,
    pub blocks: Vec<AlignedBlock>,
    pub student_tokens: Vec<CanonicalToken>,
    pub teacher_tokens: Vec<CanonicalToken>,
}

/// Table-independent part of a sentence.
struct Prepared {
    alignment: SpanAlignment,
    stu_seq: LogitsMatrix,
    tea_seq: LogitsMatrix,
    stu_topk: TopKSelection,
    tea_topk: TopKSelection,
    lm: LossSum,
    student_tokens: Vec<CanonicalToken>,
    teacher_tokens: Vec<CanonicalToken>,
}

fn canonical_sequence(m: &LogitsMatrix, v: &Vocabulary, side: Side) -> Result<Vec<CanonicalToken>> {
    if m.vocab_size() != v.size() {
        return Err(Error::LengthMismatch {
            what: if side == Side::Student { "student logits vs vocabulary" } else { "teacher logits vs vocabulary" },
            left: m.vocab_size(),
            right: v.size(),
        });
    }
    Ok(m.token_ids().iter().map(|&id| v.canonical(id).expect("ids validated against vocab_size").clone()).collect())
}

fn weights(m: &LogitsMatrix, c: u32, mode: WeightMode) -> WeightVector {
    match mode {
        WeightMode::Entropy => alignment_weights(&position_entropy(m), c),
        WeightMode::Uniform => WeightVector::uniform(m.n_positions()),
    }
}

/// Sequence alignment only, for inspection.
pub fn align_pair(
    student: &LogitsMatrix,
    teacher: &LogitsMatrix,
    v_stu: &Vocabulary,
    v_tea: &Vocabulary,
    c: u32,
    mode: WeightMode,
) -> Result<SpanAlignment> {
    let stu = canonical_sequence(student, v_stu, Side::Student)?;
    let tea = canonical_sequence(teacher, v_tea, Side::Teacher)?;
    weighted_dtw(&stu, &tea, &weights(student, c, mode), &weights(teacher, c, mode))
}

fn prepare(
    student: &LogitsMatrix,
    teacher: &LogitsMatrix,
    v_stu: &Vocabulary,
    v_tea: &Vocabulary,
    cfg: &CdmConfig,
) -> Result<Prepared> {
    let student_tokens = canonical_sequence(student, v_stu, Side::Student)?;
    let teacher_tokens = canonical_sequence(teacher, v_tea, Side::Teacher)?;
    let alignment = weighted_dtw(
        &student_tokens,
        &teacher_tokens,
        &weights(student, cfg.c, WeightMode::Entropy),
        &weights(teacher, cfg.c, WeightMode::Entropy),
    )?;
    let stu_seq = merge_spans(student, &alignment, Side::Student)?;
    let tea_seq = merge_spans(teacher, &alignment, Side::Teacher)?;
    let stu_topk = topk_select(&stu_seq, cfg.k)?;
    let tea_topk = topk_select(&tea_seq, cfg.k)?;
    let lm = lm_sum(student, student.token_ids())?;
    Ok(Prepared { alignment, stu_seq, tea_seq, stu_topk, tea_topk, lm, student_tokens, teacher_tokens })
}

fn commit(
    p: Prepared,
    v_stu: &Vocabulary,
    v_tea: &Vocabulary,
    state: &mut MappingState,
    cfg: &CdmConfig,
) -> Result<SentenceOutput> {
    update_dynamic_map(&mut state.forward, &p.tea_topk, &p.stu_topk, v_tea, v_stu, cfg.theta)?;
    update_dynamic_map(&mut state.reverse, &p.stu_topk, &p.tea_topk, v_stu, v_tea, cfg.theta)?;
    state.forward_support.record(p.tea_topk.all_ids());
    state.reverse_support.record(p.stu_topk.all_ids());
    let blocks = assemble_from_topk(&p.stu_seq, &p.tea_seq, &p.stu_topk, &p.tea_topk, &state.forward, &state.reverse)?;
    let loss_cfg = cfg.loss_config();
    let kl = kl_sum(&blocks, &loss_cfg);
    Ok(SentenceOutput {
        report: LossReport::from_sums(kl, p.lm, &loss_cfg),
        kl,
        lm: p.lm,
        alignment: p.alignment,
        blocks,
        student_tokens: p.student_tokens,
        teacher_tokens: p.teacher_tokens,
    })
}

/// Runs one sentence against the current tables and grows them.
pub fn run_sentence(
    rec: &SentenceRecord,
    v_stu: &Vocabulary,
    v_tea: &Vocabulary,
    state: &mut MappingState,
    cfg: &CdmConfig,
) -> Result<SentenceOutput> {
    cfg.validate()?;
    let p = prepare(&rec.student, &rec.teacher, v_stu, v_tea, cfg)?;
    commit(p, v_stu, v_tea, state, cfg)
}

#[derive(Debug, Clone)]
pub struct CorpusOutput {
    pub report: LossReport,
    pub state: MappingState,
    pub compat: CompatReport,
    pub alignments: Vec<SpanAlignment>,
    pub sentence_reports: Vec<LossReport>,
    pub sentence_stats: Vec<SentenceStats>,
}

/// Folds [`run_sentence`] over paired dumps in record order. Aggregate losses
/// are means over all contributing positions of the corpus.
pub fn run_corpus(
    student: &[LogitsMatrix],
    teacher: &[LogitsMatrix],
    v_stu: &Vocabulary,
    v_tea: &Vocabulary,
    cfg: &CdmConfig,
) -> Result<CorpusOutput> {
    cfg.validate()?;
    if student.len() != teacher.len() {
        return Err(Error::RecordCountMismatch { student: student.len(), teacher: teacher.len() });
    }
    let mut state = MappingState::new(v_stu, v_tea);
    let mut kl_total = LossSum::default();
    let mut lm_total = LossSum::default();
    let mut alignments = Vec::with_capacity(student.len());
    let mut sentence_reports = Vec::with_capacity(student.len());
    let mut sentence_stats = Vec::with_capacity(student.len());
    let mut stu_tokens = Vec::with_capacity(student.len());
    let mut tea_tokens = Vec::with_capacity(student.len());

    let indices: Vec<usize> = (0..student.len()).collect();
    for chunk in indices.chunks(CHUNK) {
        let prepared = par::map_slice(chunk, |&i| {
            prepare(&student[i], &teacher[i], v_stu, v_tea, cfg).map_err(|e| e.in_sentence(i))
        });
        for (&i, p) in chunk.iter().zip(prepared) {
            let out = commit(p?, v_stu, v_tea, &mut state, cfg).map_err(|e| e.in_sentence(i))?;
            kl_total.add(out.kl);
            lm_total.add(out.lm);
            sentence_stats.push(SentenceStats::compute(i, &out.alignment, &out.student_tokens, &out.teacher_tokens));
            sentence_reports.push(out.report);
            alignments.push(out.alignment);
            stu_tokens.push(out.student_tokens);
            tea_tokens.push(out.teacher_tokens);
        }
    }

    let n = student.len();
    let compat = CompatReport {
        smr: (n > 0).then(|| sequence_matching_rate(&stu_tokens, &tea_tokens)).transpose()?,
        vmr: vocabulary_matching_rate(v_stu, v_tea),
        n_sentences: n,
        span_accuracy: (n > 0).then(|| span_alignment_accuracy(&alignments, &stu_tokens, &tea_tokens)),
        mapping_coverage: (n > 0).then(|| state.coverage()),
    };
    Ok(CorpusOutput {
        report: LossReport::from_sums(kl_total, lm_total, &cfg.loss_config()),
        state,
        compat,
        alignments,
        sentence_reports,
        sentence_stats,
    })
}
