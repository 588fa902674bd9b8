//! Vocabulary-level alignment: top-k candidate selection, contextual growth of
//! the mapping tables and assembly of the masked dual-direction logit blocks.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensorio::LogitsMatrix;
use crate::vocab::{normalized_edit_distance, Vocabulary};

/// Slot value for unmapped entries. It behaves as a `-inf` logit and is never
/// part of a softmax support.
pub const MASK_SENTINEL: f64 = f64::NEG_INFINITY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Student,
    Teacher,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Student => "student",
            Side::Teacher => "teacher",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "t2s")]
    TeacherToStudent,
    #[serde(rename = "s2t")]
    StudentToTeacher,
}

impl Direction {
    pub fn source(self) -> Side {
        match self {
            Direction::TeacherToStudent => Side::Teacher,
            Direction::StudentToTeacher => Side::Student,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Direction::TeacherToStudent => "t2s",
            Direction::StudentToTeacher => "s2t",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Fuzzy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MappingEntry {
    pub target: u32,
    pub provenance: Provenance,
}

/// Token-id lookup from one vocabulary into the other. Keys are never
/// overwritten once inserted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    direction: Direction,
    entries: BTreeMap<u32, MappingEntry>,
}

#[derive(Serialize, Deserialize)]
struct EntryJson {
    src: u32,
    tgt: u32,
    provenance: Provenance,
    direction: Direction,
}

impl MappingTable {
    pub fn new(direction: Direction) -> Self {
        Self { direction, entries: BTreeMap::new() }
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, source: u32) -> Option<u32> {
        self.entries.get(&source).map(|e| e.target)
    }

    pub fn entry(&self, source: u32) -> Option<&MappingEntry> {
        self.entries.get(&source)
    }

    pub fn contains(&self, source: u32) -> bool {
        self.entries.contains_key(&source)
    }

    /// Inserts unless `source` is already a key. Returns whether it inserted.
    pub fn insert(&mut self, source: u32, target: u32, provenance: Provenance) -> bool {
        match self.entries.entry(source) {
            std::collections::btree_map::Entry::Occupied(_) => false,
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(MappingEntry { target, provenance });
                true
            }
        }
    }

    /// Entries in ascending source id order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, &MappingEntry)> {
        self.entries.iter().map(|(&k, v)| (k, v))
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.entries.values().filter(|e| e.provenance == provenance).count()
    }

    /// Serializes one or more tables as a single JSON array, in the given
    /// table order and ascending source id within each table.
    pub fn export_json(tables: &[&MappingTable]) -> String {
        let rows: Vec<EntryJson> = tables
            .iter()
            .flat_map(|t| {
                t.entries().map(move |(src, e)| EntryJson {
                    src,
                    tgt: e.target,
                    provenance: e.provenance,
                    direction: t.direction,
                })
            })
            .collect();
        let mut out = String::from("[");
        for (i, row) in rows.iter().enumerate() {
            out.push_str(if i == 0 { "\n  " } else { ",\n  " });
            out.push_str(&serde_json::to_string(row).expect("entries serialize"));
        }
        out.push_str(if rows.is_empty() { "]\n" } else { "\n]\n" });
        out
    }

    /// Parses an exported array and returns the `t2s` and `s2t` tables.
    pub fn import_json(json: &str) -> Result<(MappingTable, MappingTable)> {
        let rows: Vec<EntryJson> =
            serde_json::from_str(json).map_err(|e| Error::Config(format!("invalid mapping table json: {e}")))?;
        let mut fwd = MappingTable::new(Direction::TeacherToStudent);
        let mut rev = MappingTable::new(Direction::StudentToTeacher);
        for row in rows {
            let table = match row.direction {
                Direction::TeacherToStudent => &mut fwd,
                Direction::StudentToTeacher => &mut rev,
            };
            if !table.insert(row.src, row.tgt, row.provenance) {
                return Err(Error::Config(format!("duplicate {} key {}", row.direction, row.src)));
            }
        }
        Ok((fwd, rev))
    }
}

/// The `k` highest logits at each position, descending, ties by ascending id.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSelection {
    k: usize,
    ids: Vec<u32>,
    logits: Vec<f32>,
}

impl TopKSelection {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_positions(&self) -> usize {
        self.ids.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn ids(&self, position: usize) -> &[u32] {
        &self.ids[position * self.k..(position + 1) * self.k]
    }

    pub fn logits(&self, position: usize) -> &[f32] {
        &self.logits[position * self.k..(position + 1) * self.k]
    }

    /// All selected ids, position-major.
    pub fn all_ids(&self) -> &[u32] {
        &self.ids
    }
}

fn top_k_row(row: &[f32], k: usize) -> Vec<u32> {
    let order =
        |a: &u32, b: &u32| row[*b as usize].partial_cmp(&row[*a as usize]).unwrap_or(Ordering::Equal).then(a.cmp(b));
    let mut idx: Vec<u32> = (0..row.len() as u32).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, order);
        idx.truncate(k);
    }
    idx.sort_unstable_by(order);
    idx
}

pub fn topk_select(m: &LogitsMatrix, k: usize) -> Result<TopKSelection> {
    if k == 0 || k > m.vocab_size() {
        return Err(Error::KTooLarge { k, vocab_size: m.vocab_size() });
    }
    let rows = par::map_range(m.n_positions(), |i| top_k_row(m.row(i), k));
    let ids: Vec<u32> = rows.concat();
    let logits = ids
        .chunks_exact(k)
        .enumerate()
        .flat_map(|(i, chunk)| chunk.iter().map(move |&id| m.row(i)[id as usize]))
        .collect();
    Ok(TopKSelection { k, ids, logits })
}

/// Grows `table` with contextual fuzzy matches.
///
/// For every position and every source-side top-k token that is not yet a key,
/// the target-side top-k candidate at the same position with the smallest
/// normalized edit distance is mapped, provided that distance is strictly below
/// `theta`. Among equal distances the earlier candidate (higher logit) wins.
/// Commits happen in position then slot order. Returns the number of entries
/// added.
pub fn update_dynamic_map(
    table: &mut MappingTable,
    support: &TopKSelection,
    candidates: &TopKSelection,
    v_src: &Vocabulary,
    v_tgt: &Vocabulary,
    theta: f64,
) -> Result<usize> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Config(format!("theta {theta} outside [0, 1]")));
    }
    if support.n_positions() != candidates.n_positions() {
        return Err(Error::LengthMismatch {
            what: "top-k positions",
            left: support.n_positions(),
            right: candidates.n_positions(),
        });
    }
    if theta == 0.0 {
        return Ok(0);
    }
    let snapshot = &*table;
    let best: Vec<Vec<Option<(u32, u32)>>> = par::map_range(support.n_positions(), |pos| {
        support
            .ids(pos)
            .iter()
            .map(|&src| {
                if snapshot.contains(src) {
                    return None;
                }
                let src_tok = v_src.canonical(src)?;
                if src_tok.text.is_empty() {
                    return None;
                }
                let mut found = None;
                let mut min_dist = f64::INFINITY;
                for &tgt in candidates.ids(pos) {
                    let Some(tgt_tok) = v_tgt.canonical(tgt) else { continue };
                    let Ok(d) = normalized_edit_distance(src_tok, tgt_tok) else { continue };
                    if d < theta && d < min_dist {
                        found = Some(tgt);
                        min_dist = d;
                    }
                }
                found.map(|tgt| (src, tgt))
            })
            .collect()
    });
    let mut added = 0;
    for (src, tgt) in best.into_iter().flatten().flatten() {
        if table.insert(src, tgt, Provenance::Fuzzy) {
            added += 1;
        }
    }
    Ok(added)
}

/// One direction of a projection: `k` slots per position, position-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedHalf {
    pub k: usize,
    /// logits of the model that supplied the top-k support
    pub support: Vec<f64>,
    /// logits of the other model at the mapped ids
    pub other: Vec<f64>,
    pub mask: Vec<bool>,
}

/// Gathers, for each top-k support token of model A, A's logit and model B's
/// logit at the mapped id. Unmapped slots are masked in both.
pub fn project_aligned(
    support: &TopKSelection,
    support_side: Side,
    other_full: &LogitsMatrix,
    table: &MappingTable,
) -> Result<ProjectedHalf> {
    if table.direction().source() != support_side {
        let expected = match support_side {
            Side::Teacher => Direction::TeacherToStudent,
            Side::Student => Direction::StudentToTeacher,
        };
        return Err(Error::DirectionMismatch { expected: expected.code(), found: table.direction().code() });
    }
    if support.n_positions() != other_full.n_positions() {
        return Err(Error::LengthMismatch {
            what: "aligned positions",
            left: support.n_positions(),
            right: other_full.n_positions(),
        });
    }
    let k = support.k();
    let n = support.n_positions() * k;
    let mut out =
        ProjectedHalf { k, support: Vec::with_capacity(n), other: Vec::with_capacity(n), mask: Vec::with_capacity(n) };
    for pos in 0..support.n_positions() {
        let row = other_full.row(pos);
        for (&id, &logit) in support.ids(pos).iter().zip(support.logits(pos)) {
            match table.get(id) {
                Some(tgt) => {
                    let other = *row.get(tgt as usize).ok_or_else(|| {
                        Error::Invariant(format!(
                            "{} table maps {id} to {tgt}, outside vocabulary of size {}",
                            table.direction(),
                            row.len()
                        ))
                    })?;
                    out.support.push(logit as f64);
                    out.other.push(other as f64);
                    out.mask.push(true);
                }
                None => {
                    out.support.push(MASK_SENTINEL);
                    out.other.push(MASK_SENTINEL);
                    out.mask.push(false);
                }
            }
        }
    }
    Ok(out)
}

/// Per aligned position: `2k` student slots, `2k` teacher slots and a shared
/// validity mask. Slots `[0, k)` come from the teacher's top-k support, slots
/// `[k, 2k)` from the student's.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedBlock {
    pub stu: Vec<f64>,
    pub tea: Vec<f64>,
    pub mask: Vec<bool>,
}

impl AlignedBlock {
    pub fn valid_slots(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub(crate) fn assemble_from_topk(
    stu_seq: &LogitsMatrix,
    tea_seq: &LogitsMatrix,
    stu_topk: &TopKSelection,
    tea_topk: &TopKSelection,
    fwd_table: &MappingTable,
    rev_table: &MappingTable,
) -> Result<Vec<AlignedBlock>> {
    let fwd = project_aligned(tea_topk, Side::Teacher, stu_seq, fwd_table)?;
    let rev = project_aligned(stu_topk, Side::Student, tea_seq, rev_table)?;
    let k = fwd.k;
    if rev.k != k {
        return Err(Error::LengthMismatch { what: "top-k width", left: k, right: rev.k });
    }
    Ok((0..stu_seq.n_positions())
        .map(|pos| {
            let f = pos * k..(pos + 1) * k;
            AlignedBlock {
                stu: [&fwd.other[f.clone()], &rev.support[f.clone()]].concat(),
                tea: [&fwd.support[f.clone()], &rev.other[f.clone()]].concat(),
                mask: [&fwd.mask[f.clone()], &rev.mask[f]].concat(),
            }
        })
        .collect())
}

/// Builds the dual-direction aligned blocks for sequence-aligned logits.
pub fn assemble_dual(
    stu_seq: &LogitsMatrix,
    tea_seq: &LogitsMatrix,
    fwd_table: &MappingTable,
    rev_table: &MappingTable,
    k: usize,
) -> Result<Vec<AlignedBlock>> {
    if stu_seq.n_positions() != tea_seq.n_positions() {
        return Err(Error::LengthMismatch {
            what: "aligned positions",
            left: stu_seq.n_positions(),
            right: tea_seq.n_positions(),
        });
    }
    let stu_topk = topk_select(stu_seq, k)?;
    let tea_topk = topk_select(tea_seq, k)?;
    assemble_from_topk(stu_seq, tea_seq, &stu_topk, &tea_topk, fwd_table, rev_table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{build_exact_match_table, build_reverse_exact_match_table};

    fn matrix(rows: &[Vec<f32>]) -> LogitsMatrix {
        LogitsMatrix::from_rows(vec![0; rows.len()], rows).unwrap()
    }

    #[test]
    fn topk_examples() {
        let m = matrix(&[vec![5.0, 5.0, 1.0], vec![0.0, 3.0, 2.0]]);
        let t = topk_select(&m, 2).unwrap();
        assert_eq!(t.ids(0), &[0, 1]);
        assert_eq!(t.ids(1), &[1, 2]);
        assert_eq!(t.logits(1), &[3.0, 2.0]);
        assert_eq!(topk_select(&m, 1).unwrap().all_ids(), &[0, 1]);
        assert_eq!(topk_select(&m, 3).unwrap().ids(1), &[1, 2, 0]);
        assert!(matches!(topk_select(&m, 4), Err(Error::KTooLarge { k: 4, vocab_size: 3 })));
        assert!(topk_select(&m, 0).is_err());
    }

    #[test]
    fn topk_ties_on_signed_zero() {
        let m = matrix(&[vec![0.0, -0.0, 0.0]]);
        assert_eq!(topk_select(&m, 3).unwrap().ids(0), &[0, 1, 2]);
    }

    fn sel(ids: &[&[u32]]) -> TopKSelection {
        let k = ids[0].len();
        TopKSelection { k, ids: ids.concat(), logits: vec![0.0; ids.len() * k] }
    }

    #[test]
    fn fuzzy_prefers_minimum_distance() {
        let tea = Vocabulary::from_tokens(["▁fights", "▁the"]).unwrap();
        let stu = Vocabulary::from_tokens(["weights", "fight", "▁the"]).unwrap();
        let mut table = build_exact_match_table(&stu, &tea);
        assert_eq!(table.len(), 1);
        let added = update_dynamic_map(&mut table, &sel(&[&[0, 1]]), &sel(&[&[0, 1]]), &tea, &stu, 0.3).unwrap();
        assert_eq!(added, 1);
        assert_eq!(table.get(0), Some(1));
        assert_eq!(table.entry(0).unwrap().provenance, Provenance::Fuzzy);
    }

    #[test]
    fn nothing_under_threshold_adds_nothing() {
        let tea = Vocabulary::from_tokens(["▁publishers"]).unwrap();
        let stu = Vocabulary::from_tokens(["▁advice", "▁shops", "▁bike"]).unwrap();
        let mut table = build_exact_match_table(&stu, &tea);
        let n = update_dynamic_map(&mut table, &sel(&[&[0]]), &sel(&[&[0, 1, 2]]), &tea, &stu, 0.3).unwrap();
        assert_eq!(n, 0);
        assert!(table.is_empty());
    }

    #[test]
    fn theta_zero_keeps_exact_table() {
        let tea = Vocabulary::from_tokens(["ab", "abc"]).unwrap();
        let stu = Vocabulary::from_tokens(["abd", "ab"]).unwrap();
        let mut table = build_exact_match_table(&stu, &tea);
        let before = table.clone();
        update_dynamic_map(&mut table, &sel(&[&[0, 1]]), &sel(&[&[0, 1]]), &tea, &stu, 0.0).unwrap();
        assert_eq!(table, before);
        assert!(update_dynamic_map(&mut table, &sel(&[&[0]]), &sel(&[&[0]]), &tea, &stu, 1.5).is_err());
    }

    #[test]
    fn first_insert_wins_across_positions() {
        let tea = Vocabulary::from_tokens(["cats"]).unwrap();
        let stu = Vocabulary::from_tokens(["cat", "cots"]).unwrap();
        let mut table = MappingTable::new(Direction::TeacherToStudent);
        update_dynamic_map(&mut table, &sel(&[&[0], &[0]]), &sel(&[&[1], &[0]]), &tea, &stu, 0.3).unwrap();
        assert_eq!(table.get(0), Some(1));
    }

    #[test]
    fn projection_gathers_mapped_logits() {
        let support = TopKSelection { k: 2, ids: vec![4, 7], logits: vec![2.5, 1.5] };
        let other = matrix(&[vec![0.1, 0.9, 0.3, 0.2, 0.0]]);
        let mut table = MappingTable::new(Direction::TeacherToStudent);
        table.insert(4, 1, Provenance::Fuzzy);
        let half = project_aligned(&support, Side::Teacher, &other, &table).unwrap();
        assert_eq!(half.mask, vec![true, false]);
        assert_eq!(half.other[0], 0.9f32 as f64);
        assert_eq!(half.other[1], MASK_SENTINEL);
        assert_eq!(half.support, vec![2.5, MASK_SENTINEL]);

        let err = project_aligned(&support, Side::Student, &other, &table).unwrap_err();
        assert!(matches!(err, Error::DirectionMismatch { .. }));

        let empty = MappingTable::new(Direction::TeacherToStudent);
        let half = project_aligned(&support, Side::Teacher, &other, &empty).unwrap();
        assert!(half.mask.iter().all(|m| !m));
    }

    #[test]
    fn identical_tokenizers_fill_every_slot() {
        let v = Vocabulary::from_tokens(["a", "b", "c"]).unwrap();
        let fwd = build_exact_match_table(&v, &v);
        let rev = build_reverse_exact_match_table(&v, &v);
        let m = matrix(&[vec![1.0, 3.0, 2.0], vec![0.5, -1.0, 4.0]]);
        let blocks = assemble_dual(&m, &m, &fwd, &rev, 2).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].stu, vec![3.0, 2.0, 3.0, 2.0]);
        assert_eq!(blocks[0].tea, blocks[0].stu);
        assert!(blocks.iter().all(|b| b.mask.iter().all(|&m| m)));
    }

    #[test]
    fn disjoint_vocabularies_mask_everything() {
        let stu = Vocabulary::from_tokens(["a", "b"]).unwrap();
        let tea = Vocabulary::from_tokens(["x", "y"]).unwrap();
        let fwd = build_exact_match_table(&stu, &tea);
        let rev = build_reverse_exact_match_table(&stu, &tea);
        let m = matrix(&[vec![1.0, 3.0]]);
        let blocks = assemble_dual(&m, &m, &fwd, &rev, 2).unwrap();
        assert_eq!(blocks[0].valid_slots(), 0);
        assert!(assemble_dual(&m, &matrix(&[vec![1.0, 3.0], vec![0.0, 0.0]]), &fwd, &rev, 2).is_err());
    }

    #[test]
    fn table_json_round_trip() {
        let mut fwd = MappingTable::new(Direction::TeacherToStudent);
        fwd.insert(3, 1, Provenance::Exact);
        fwd.insert(0, 2, Provenance::Fuzzy);
        let mut rev = MappingTable::new(Direction::StudentToTeacher);
        rev.insert(1, 3, Provenance::Exact);
        let json = MappingTable::export_json(&[&fwd, &rev]);
        assert_eq!(
            json,
            "[\n  {\"src\":0,\"tgt\":2,\"provenance\":\"fuzzy\",\"direction\":\"t2s\"},\n  \
             {\"src\":3,\"tgt\":1,\"provenance\":\"exact\",\"direction\":\"t2s\"},\n  \
             {\"src\":1,\"tgt\":3,\"provenance\":\"exact\",\"direction\":\"s2t\"}\n]\n"
        );
        let (f, r) = MappingTable::import_json(&json).unwrap();
        assert_eq!((f, r), (fwd, rev));
        assert_eq!(MappingTable::export_json(&[]), "[]\n");
    }
}
