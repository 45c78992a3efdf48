use ndarray::Array2;

use crate::document::ReadingOrder;
use crate::error::{invalid, Result};

/// `N x P` position scores, one row per element and one column per rank.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderLogits(Array2<f64>);

impl OrderLogits {
    pub fn new(m: Array2<f64>) -> Result<Self> {
        if m.nrows() > m.ncols() {
            return Err(invalid(format!("{} elements but only {} rank columns", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite logit"));
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(invalid("ragged logit rows"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((n, p), flat).expect("shape checked"))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Iterative greedy rank assignment.
///
/// Every unresolved element claims its best column among the first `N` not
/// yet held (lower column on equal scores). On each claimed column the
/// claimant with the highest score keeps it (lower element index on equal
/// scores); the others try again in the next round. Returns ranks.
pub fn greedy_decode(logits: &OrderLogits) -> ReadingOrder {
    let m = logits.matrix();
    let n = m.nrows();
    let mut rank: Vec<Option<usize>> = vec![None; n];
    let mut held = vec![false; n];
    let mut pending: Vec<usize> = (0..n).collect();
    while !pending.is_empty() {
        // best claimant per column this round: (element, score)
        let mut winner: Vec<Option<(usize, f64)>> = vec![None; n];
        for &e in &pending {
            let col = (0..n)
                .filter(|&c| !held[c])
                .fold(None, |best: Option<usize>, c| match best {
                    Some(b) if m[[e, b]] >= m[[e, c]] => Some(b),
                    _ => Some(c),
                })
                .expect("an unresolved element always has a free column");
            let score = m[[e, col]];
            match winner[col] {
                Some((_, s)) if s >= score => {}
                _ => winner[col] = Some((e, score)),
            }
        }
        for (col, w) in winner.into_iter().enumerate() {
            if let Some((e, _)) = w {
                held[col] = true;
                rank[e] = Some(col);
            }
        }
        pending.retain(|&e| rank[e].is_none());
    }
    ReadingOrder::from_ranks(rank.into_iter().map(|r| r.expect("all resolved")).collect()).expect("distinct columns form a permutation")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let diag = OrderLogits::from_rows(&[vec![5.0, 1.0, 0.0], vec![0.0, 4.0, 1.0], vec![1.0, 0.0, 3.0]]).unwrap();
        assert_eq!(greedy_decode(&diag).ranks(), &[0, 1, 2]);
        let l = OrderLogits::from_rows(&[vec![2.0, 1.0], vec![1.5, 0.2]]).unwrap();
        assert_eq!(greedy_decode(&l).ranks(), &[0, 1]);
        let tie = OrderLogits::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(greedy_decode(&tie).ranks(), &[0, 1]);
    }

    #[test]
    fn ignores_columns_beyond_n() {
        let l = OrderLogits::from_rows(&[vec![0.0, 0.0, 9.0], vec![1.0, 0.0, 9.0]]).unwrap();
        assert_eq!(greedy_decode(&l).ranks(), &[1, 0]);
    }

    #[test]
    fn empty_and_oversized() {
        assert!(greedy_decode(&OrderLogits::new(Array2::zeros((0, 4))).unwrap()).is_empty());
        assert!(OrderLogits::new(Array2::zeros((3, 2))).is_err());
    }
}
