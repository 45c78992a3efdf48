//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srrdoc::eval::{rename_cost, TableNode, TableTree};

/// Literal simulation of the greedy rank rule on a dense `N x P` matrix.
///
/// Every round, each unplaced element files a claim on its best column that
/// no earlier round has settled. Claims are grouped per column; in each
/// group the highest logit wins and the rest wait for the next round.
pub fn greedy_oracle(m: &[Vec<f64>]) -> Vec<usize> {
    let n = m.len();
    let mut settled: BTreeMap<usize, usize> = BTreeMap::new(); // column -> element
    let mut placed = vec![None; n];
    loop {
        let waiting: Vec<usize> = (0..n).filter(|&e| placed[e].is_none()).collect();
        if waiting.is_empty() {
            break;
        }
        let mut claims: BTreeMap<usize, Vec<(f64, usize)>> = BTreeMap::new();
        for &e in &waiting {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..n {
                if settled.contains_key(&c) {
                    continue;
                }
                let v = m[e][c];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            let (c, v) = best.expect("free column exists");
            claims.entry(c).or_default().push((v, e));
        }
        for (c, mut group) in claims {
            // highest logit first, lower element index among equals
            group.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let winner = group[0].1;
            settled.insert(c, winner);
            placed[winner] = Some(c);
        }
    }
    placed.into_iter().map(Option::unwrap).collect()
}

/// Levenshtein distance by the full `(|a|+1) x (|b|+1)` table.
pub fn edit_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

/// Preorder positions and ancestor matrix of a tree.
struct Shape {
    pre: Vec<usize>,
    anc: Vec<Vec<bool>>,
}

fn shape(t: &TableTree) -> Shape {
    let n = t.len();
    let mut pre = vec![0; n];
    let mut anc = vec![vec![false; n]; n];
    let mut counter = 0;
    fn walk(t: &TableTree, v: usize, path: &mut Vec<usize>, pre: &mut [usize], anc: &mut [Vec<bool>], counter: &mut usize) {
        pre[v] = *counter;
        *counter += 1;
        for &a in path.iter() {
            anc[a][v] = true;
        }
        path.push(v);
        for &c in &t.node(v).children {
            walk(t, c, path, pre, anc, counter);
        }
        path.pop();
    }
    if n > 0 {
        walk(t, 0, &mut Vec::new(), &mut pre, &mut anc, &mut counter);
    }
    Shape { pre, anc }
}

/// Minimum-cost edit mapping found by enumerating every valid mapping:
/// one-to-one pairs that preserve ancestry and left-to-right order.
pub fn brute_ted(t1: &TableTree, t2: &TableTree, structure_only: bool) -> f64 {
    let (s1, s2) = (shape(t1), shape(t2));
    let (n1, n2) = (t1.len(), t2.len());
    let mut best = f64::INFINITY;
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut used = vec![false; n2];

    #[allow(clippy::too_many_arguments)]
    fn go(
        i: usize,
        t1: &TableTree,
        t2: &TableTree,
        s1: &Shape,
        s2: &Shape,
        pairs: &mut Vec<(usize, usize)>,
        used: &mut [bool],
        cost: f64,
        best: &mut f64,
        structure_only: bool,
    ) {
        let (n1, n2) = (t1.len(), t2.len());
        if i == n1 {
            let unmapped = (n1 - pairs.len()) + (n2 - pairs.len());
            *best = best.min(cost + unmapped as f64);
            return;
        }
        go(i + 1, t1, t2, s1, s2, pairs, used, cost, best, structure_only);
        for j in 0..n2 {
            if used[j] {
                continue;
            }
            let ok = pairs.iter().all(|&(a, b)| {
                s1.anc[a][i] == s2.anc[b][j] && s1.anc[i][a] == s2.anc[j][b] && (s1.pre[a] < s1.pre[i]) == (s2.pre[b] < s2.pre[j])
            });
            if !ok {
                continue;
            }
            used[j] = true;
            pairs.push((i, j));
            let c = rename_cost(t1.node(i), t2.node(j), structure_only);
            go(i + 1, t1, t2, s1, s2, pairs, used, cost + c, best, structure_only);
            pairs.pop();
            used[j] = false;
        }
    }

    go(0, t1, t2, &s1, &s2, &mut pairs, &mut used, 0.0, &mut best, structure_only);
    if n1 == 0 {
        return n2 as f64;
    }
    best
}

/// Random tree with `1..=max_nodes` nodes and labels from a small alphabet
/// so that equal and near-equal labels are common.
pub fn random_tree(rng: &mut ChaCha8Rng, max_nodes: usize) -> TableTree {
    const TAGS: [&str; 4] = ["table", "tr", "td", "th"];
    const TEXTS: [&str; 4] = ["", "a", "ab", "b"];
    let n = rng.random_range(1..=max_nodes);
    let mut t = TableTree::empty();
    for i in 0..n {
        let mut node = TableNode::new(TAGS[rng.random_range(0..TAGS.len())]);
        if node.is_cell() {
            node.text = TEXTS[rng.random_range(0..TEXTS.len())].to_string();
            node.colspan = rng.random_range(1..=2);
        }
        let parent = (i > 0).then(|| rng.random_range(0..i));
        t.add(parent, node).unwrap();
    }
    t
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
