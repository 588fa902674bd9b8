//! Test-only oracles, written independently of the library's DP code.
#![allow(dead_code)]

use std::collections::HashMap;

pub type Cell = (usize, usize);
pub type Visit<'a> = &'a mut dyn FnMut(&[Cell], u64);

/// Edit distance by memoized recursion over suffixes.
pub fn brute_levenshtein(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(&d) = memo.get(&(i, j)) {
            return d;
        }
        let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo) + 1;
        let ins = go(a, b, i, j + 1, memo) + 1;
        let d = sub.min(del).min(ins);
        memo.insert((i, j), d);
        d
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

/// Weighted cell costs `wa[i] * wb[j] * lev(a[i], b[j])`.
pub fn cost_matrix(a: &[String], b: &[String], wa: &[u32], wb: &[u32]) -> Vec<Vec<u64>> {
    a.iter()
        .zip(wa)
        .map(|(x, &w1)| {
            let cx: Vec<char> = x.chars().collect();
            b.iter()
                .zip(wb)
                .map(|(y, &w2)| {
                    let cy: Vec<char> = y.chars().collect();
                    w1 as u64 * w2 as u64 * brute_levenshtein(&cx, &cy) as u64
                })
                .collect()
        })
        .collect()
}

/// Calls `visit` with every monotone path from (0, 0) to the far corner using
/// right, down and diagonal steps, together with its summed cost.
pub fn for_each_path(cost: &[Vec<u64>], visit: Visit<'_>) {
    fn walk(i: usize, j: usize, acc: u64, cost: &[Vec<u64>], cur: &mut Vec<Cell>, visit: Visit<'_>) {
        let (n, m) = (cost.len(), cost[0].len());
        let acc = acc + cost[i][j];
        cur.push((i, j));
        if i == n - 1 && j == m - 1 {
            visit(cur, acc);
        } else {
            if i + 1 < n && j + 1 < m {
                walk(i + 1, j + 1, acc, cost, cur, visit);
            }
            if j + 1 < m {
                walk(i, j + 1, acc, cost, cur, visit);
            }
            if i + 1 < n {
                walk(i + 1, j, acc, cost, cur, visit);
            }
        }
        cur.pop();
    }
    walk(0, 0, 0, cost, &mut Vec::new(), visit);
}

pub fn count_paths(n: usize, m: usize) -> usize {
    let zeros = vec![vec![0u64; m]; n];
    let mut count = 0;
    for_each_path(&zeros, &mut |_, _| count += 1);
    count
}

pub type Spans = Vec<((usize, usize), (usize, usize))>;

/// Collapses a cell path into span pairs: a diagonal move opens a new pair.
pub fn collapse(path: &[(usize, usize)]) -> Spans {
    let mut spans: Spans = vec![((0, 1), (0, 1))];
    for w in path.windows(2) {
        let ((i0, j0), (i1, j1)) = (w[0], w[1]);
        let last = spans.last_mut().unwrap();
        match (i1 - i0, j1 - j0) {
            (1, 1) => spans.push(((i1, i1 + 1), (j1, j1 + 1))),
            (0, 1) => last.1 .1 = j1 + 1,
            (1, 0) => last.0 .1 = i1 + 1,
            _ => unreachable!(),
        }
    }
    spans
}

/// Minimum cost, the span groupings of every optimal path, and the smallest
/// cost strictly above the minimum.
pub struct Optima {
    pub best: u64,
    pub groupings: Vec<Spans>,
    pub runner_up: Option<u64>,
}

pub fn optima(cost: &[Vec<u64>]) -> Optima {
    let mut best = u64::MAX;
    let mut runner_up: Option<u64> = None;
    let mut groupings: Vec<Spans> = Vec::new();
    for_each_path(cost, &mut |path, c| {
        if c < best {
            if best != u64::MAX {
                runner_up = Some(best);
            }
            best = c;
            groupings = vec![collapse(path)];
        } else if c == best {
            let g = collapse(path);
            if !groupings.contains(&g) {
                groupings.push(g);
            }
        } else if runner_up.is_none_or(|r| c < r) {
            runner_up = Some(c);
        }
    });
    Optima { best, groupings, runner_up }
}
