use std::collections::HashMap;
use std::hash::Hash;

use super::edit::normalized_sequence_distance;
use crate::error::{invalid, Result};

/// Normalized edit distance between two orderings of the same id set.
pub fn order_edit<T: Eq + Hash + Clone>(pred: &[T], gt: &[T]) -> Result<f64> {
    let mut counts: HashMap<T, i64> = HashMap::new();
    for id in gt {
        *counts.entry(id.clone()).or_default() += 1;
    }
    for id in pred {
        *counts.entry(id.clone()).or_default() -= 1;
    }
    if counts.values().any(|&c| c != 0) {
        return Err(invalid("predicted and ground-truth orders cover different ids"));
    }
    Ok(normalized_sequence_distance(pred, gt))
}

/// Kendall rank correlation between two rank vectors over the same elements.
/// Defined as 1 for fewer than two elements.
pub fn kendall_tau(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "rank vectors differ in length");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let s = (a[i] as i64 - a[j] as i64).signum() * (b[i] as i64 - b[j] as i64).signum();
            match s {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    (concordant - discordant) as f64 / (n * (n - 1) / 2) as f64
}
