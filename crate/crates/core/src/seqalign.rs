//! Sequence-level alignment: position entropies, entropy-derived weights,
//! weighted DTW over token strings and span-wise mean pooling of logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tensorio::LogitsMatrix;
use crate::vocab::{levenshtein_chars, CanonicalToken};

/// Predictive entropy (nats) at each position.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyVector(pub Vec<f64>);

/// Integer DTW cost multipliers, one per position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightVector(pub Vec<u32>);

impl WeightVector {
    pub fn uniform(len: usize) -> Self {
        Self(vec![1; len])
    }
}

/// One aligned pair of half-open index ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanPair {
    pub student: (usize, usize),
    pub teacher: (usize, usize),
}

/// Ordered span pairs covering both token sequences, plus the DTW cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAlignment {
    pub pairs: Vec<SpanPair>,
    pub cost: u64,
}

impl SpanAlignment {
    /// Number of aligned positions after merging.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn identity(len: usize) -> Self {
        let pairs = (0..len).map(|i| SpanPair { student: (i, i + 1), teacher: (i, i + 1) }).collect();
        Self { pairs, cost: 0 }
    }

    fn spans(&self, side: Side) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().map(move |p| match side {
            Side::Student => p.student,
            Side::Teacher => p.teacher,
        })
    }

    /// Checks that spans on `side` are non-empty, contiguous and cover `[0, n)`.
    pub fn covers(&self, side: Side, n: usize) -> bool {
        let mut next = 0;
        for (start, end) in self.spans(side) {
            if start != next || end <= start {
                return false;
            }
            next = end;
        }
        next == n && !self.pairs.is_empty()
    }
}

pub use crate::vocabmap::Side;

/// Shannon entropy of `softmax(row)` in nats, computed in f64.
pub(crate) fn row_entropy(row: &[f32]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let mut z = 0.0;
    let mut weighted = 0.0;
    for &v in row {
        let shifted = v as f64 - max;
        let e = shifted.exp();
        z += e;
        weighted += e * shifted;
    }
    // H = ln Z - E_p[x - max]
    let h = z.ln() - weighted / z;
    h.clamp(0.0, (row.len() as f64).ln())
}

pub fn position_entropy(m: &LogitsMatrix) -> EntropyVector {
    EntropyVector(par::map_range(m.n_positions(), |i| row_entropy(m.row(i))))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ceil(sigmoid(minmax(h)) * c + c)` per position. A constant vector
/// normalizes to all zeros.
pub fn alignment_weights(h: &EntropyVector, c: u32) -> WeightVector {
    let (min, max) = h.0.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = max - min;
    let c = c as f64;
    WeightVector(
        h.0.iter()
            .map(|&x| {
                let phi = if range > 0.0 { (x - min) / range } else { 0.0 };
                (sigmoid(phi) * c + c).ceil() as u32
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Start,
    Diagonal,
    /// from `(i, j - 1)`: the teacher side advances
    Teacher,
    /// from `(i - 1, j)`: the student side advances
    Student,
}

/// Weighted DTW between two token sequences.
///
/// Cell cost is `w_stu[i] * w_tea[j] * levenshtein(text_i, text_j)` on the
/// canonical texts. Ties prefer the diagonal predecessor, then the teacher
/// advance, then the student advance. The path is collapsed into span pairs:
/// every diagonal step opens a new pair, other steps extend the current pair
/// on the advancing side.
pub fn weighted_dtw(
    stu_tokens: &[CanonicalToken],
    tea_tokens: &[CanonicalToken],
    w_stu: &WeightVector,
    w_tea: &WeightVector,
) -> Result<SpanAlignment> {
    let (n, m) = (stu_tokens.len(), tea_tokens.len());
    if n == 0 || m == 0 {
        return Err(Error::EmptySequence);
    }
    if w_stu.0.len() != n {
        return Err(Error::LengthMismatch { what: "student weights", left: w_stu.0.len(), right: n });
    }
    if w_tea.0.len() != m {
        return Err(Error::LengthMismatch { what: "teacher weights", left: w_tea.0.len(), right: m });
    }
    let stu_chars: Vec<Vec<char>> = stu_tokens.iter().map(|t| t.text.chars().collect()).collect();
    let tea_chars: Vec<Vec<char>> = tea_tokens.iter().map(|t| t.text.chars().collect()).collect();

    let cost = |i: usize, j: usize| -> u64 {
        w_stu.0[i] as u64 * w_tea.0[j] as u64 * levenshtein_chars(&stu_chars[i], &tea_chars[j]) as u64
    };

    let mut acc = vec![0u64; n * m];
    let mut step = vec![Step::Start; n * m];
    for i in 0..n {
        for j in 0..m {
            let here = cost(i, j);
            let idx = i * m + j;
            if i == 0 && j == 0 {
                acc[idx] = here;
                continue;
            }
            // candidates in tie-break priority order
            let mut best: Option<(u64, Step)> = None;
            let mut consider = |prev: u64, s: Step| {
                if best.is_none_or(|(b, _)| prev < b) {
                    best = Some((prev, s));
                }
            };
            if i > 0 && j > 0 {
                consider(acc[(i - 1) * m + j - 1], Step::Diagonal);
            }
            if j > 0 {
                consider(acc[i * m + j - 1], Step::Teacher);
            }
            if i > 0 {
                consider(acc[(i - 1) * m + j], Step::Student);
            }
            let (prev, s) = best.expect("at least one predecessor");
            acc[idx] = prev.saturating_add(here);
            step[idx] = s;
        }
    }

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n - 1, m - 1);
    loop {
        let s = step[i * m + j];
        path.push(s);
        match s {
            Step::Start => break,
            Step::Diagonal => {
                i -= 1;
                j -= 1;
            }
            Step::Teacher => j -= 1,
            Step::Student => i -= 1,
        }
    }
    path.reverse();

    let mut pairs: Vec<SpanPair> = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    for s in path {
        match s {
            Step::Start => pairs.push(SpanPair { student: (0, 1), teacher: (0, 1) }),
            Step::Diagonal => {
                i += 1;
                j += 1;
                pairs.push(SpanPair { student: (i, i + 1), teacher: (j, j + 1) });
            }
            Step::Teacher => {
                j += 1;
                pairs.last_mut().expect("path starts at the origin").teacher.1 = j + 1;
            }
            Step::Student => {
                i += 1;
                pairs.last_mut().expect("path starts at the origin").student.1 = i + 1;
            }
        }
    }
    Ok(SpanAlignment { pairs, cost: acc[n * m - 1] })
}

/// Mean-pools the rows of `m` over each span on `side`. The merged row keeps
/// the token id of the span's first position.
pub fn merge_spans(m: &LogitsMatrix, spans: &SpanAlignment, side: Side) -> Result<LogitsMatrix> {
    if !spans.covers(side, m.n_positions()) {
        return Err(Error::CoverageMismatch { side: side.name(), positions: m.n_positions() });
    }
    let v = m.vocab_size();
    let ranges: Vec<(usize, usize)> = spans.spans(side).collect();
    let rows: Vec<Vec<f32>> = par::map_slice(&ranges, |&(start, end)| {
        if end - start == 1 {
            return m.row(start).to_vec();
        }
        let mut sum = vec![0f64; v];
        for r in start..end {
            for (s, &x) in sum.iter_mut().zip(m.row(r)) {
                *s += x as f64;
            }
        }
        let width = (end - start) as f64;
        sum.into_iter().map(|s| (s / width) as f32).collect()
    });
    let token_ids = ranges.iter().map(|&(start, _)| m.token_ids()[start]).collect();
    LogitsMatrix::new(token_ids, v, rows.concat())
}
