//! Synthetic table markup with row/column spans.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::html;

/// A merged cell anchored at `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub row: usize,
    pub col: usize,
    pub rowspan: usize,
    pub colspan: usize,
}

/// Character pool for cell text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillAlphabet {
    Latin,
    Digits,
    /// CJK unified ideographs U+4E00..U+9FA5.
    Cjk,
    Mixed,
}

impl FillAlphabet {
    pub fn sample_char<R: Rng>(self, rng: &mut R) -> char {
        match self {
            FillAlphabet::Latin => rng.random_range(b'a'..=b'z') as char,
            FillAlphabet::Digits => rng.random_range(b'0'..=b'9') as char,
            FillAlphabet::Cjk => char::from_u32(rng.random_range(0x4E00..=0x9FA5)).unwrap_or('中'),
            FillAlphabet::Mixed => match rng.random_range(0..3) {
                0 => FillAlphabet::Latin.sample_char(rng),
                1 => FillAlphabet::Digits.sample_char(rng),
                _ => FillAlphabet::Cjk.sample_char(rng),
            },
        }
    }

    pub fn sample_word<R: Rng>(self, rng: &mut R, min: usize, max: usize) -> String {
        let len = rng.random_range(min..=max);
        (0..len).map(|_| self.sample_char(rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableCell {
    pub row: usize,
    pub col: usize,
    pub rowspan: usize,
    pub colspan: usize,
    pub text: String,
}

/// Cell layout of a generated table; `slots[r][c]` indexes into `cells`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellGrid {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<TableCell>,
    pub slots: Vec<Vec<usize>>,
}

/// Render a `rows` x `cols` table whose first row holds header labels.
pub fn render_table_html(
    rows: usize,
    cols: usize,
    merges: &[Merge],
    alphabet: FillAlphabet,
    seed: u64,
) -> Result<(String, CellGrid)> {
    if rows == 0 || cols == 0 {
        return Err(invalid("table needs at least one row and one column"));
    }
    let mut owner: Vec<Vec<Option<usize>>> = vec![vec![None; cols]; rows];
    for (mi, m) in merges.iter().enumerate() {
        if m.rowspan == 0 || m.colspan == 0 || m.row + m.rowspan > rows || m.col + m.colspan > cols {
            return Err(invalid(format!("merge {m:?} leaves the {rows}x{cols} grid")));
        }
        for row in owner.iter_mut().skip(m.row).take(m.rowspan) {
            for slot in row.iter_mut().skip(m.col).take(m.colspan) {
                if slot.is_some() {
                    return Err(invalid(format!("merge {m:?} overlaps another merge")));
                }
                *slot = Some(mi);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    let mut slots = vec![vec![usize::MAX; cols]; rows];
    let mut out = String::from("<table>");
    for r in 0..rows {
        out.push_str("<tr>");
        for c in 0..cols {
            let (rowspan, colspan) = match owner[r][c] {
                Some(mi) if merges[mi].row == r && merges[mi].col == c => {
                    (merges[mi].rowspan, merges[mi].colspan)
                }
                Some(mi) => {
                    let m = &merges[mi];
                    slots[r][c] = slots[m.row][m.col];
                    continue;
                }
                None => (1, 1),
            };
            let text = if r == 0 {
                alphabet.sample_word(&mut rng, 2, 4)
            } else {
                alphabet.sample_word(&mut rng, 1, 6)
            };
            out.push_str("<td");
            if rowspan > 1 {
                out.push_str(&format!(" rowspan=\"{rowspan}\""));
            }
            if colspan > 1 {
                out.push_str(&format!(" colspan=\"{colspan}\""));
            }
            out.push('>');
            out.push_str(&html::escape(&text));
            out.push_str("</td>");
            slots[r][c] = cells.len();
            cells.push(TableCell {
                row: r,
                col: c,
                rowspan,
                colspan,
                text,
            });
        }
        out.push_str("</tr>");
    }
    out.push_str("</table>");
    Ok((
        out,
        CellGrid {
            rows,
            cols,
            cells,
            slots,
        },
    ))
}

/// Well-formedness check for generated table markup.
pub fn validate_table_html(markup: &str) -> Result<()> {
    html::validate_well_formed(markup)
}
