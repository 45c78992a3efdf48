use serde::{Deserialize, Serialize};

use super::edit::{normalize_text, normalized_edit_distance};
use super::order::order_edit;
use super::ted::teds;
use crate::corpus::CorpusRecord;
use crate::document::{Block, Category, ParsedDocument};

/// Minimum share of a predicted block that must lie inside a GT block for the two to match.
pub const MATCH_IOA: f64 = 0.5;

/// Scores for one page. A field is `None` when the page has nothing to score for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageMetrics {
    pub page_id: String,
    pub text_edit: Option<f64>,
    pub formula_edit: Option<f64>,
    pub table_teds: Option<f64>,
    pub table_teds_s: Option<f64>,
    pub order_edit: Option<f64>,
    pub overall_edit: Option<f64>,
}

/// Corpus-level scores (means over the pages that define each field) plus the per-page rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub text_edit: Option<f64>,
    pub formula_edit: Option<f64>,
    pub table_teds: Option<f64>,
    pub table_teds_s: Option<f64>,
    pub order_edit: Option<f64>,
    /// Mean of text, formula, table (1 − TEDS) and order edits.
    pub overall_edit: Option<f64>,
    pub pages: Vec<PageMetrics>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn overall(text: Option<f64>, formula: Option<f64>, teds: Option<f64>, order: Option<f64>) -> Option<f64> {
    mean([text, formula, teds.map(|t| 1.0 - t), order].into_iter().flatten())
}

impl MetricReport {
    pub fn from_pages(pages: Vec<PageMetrics>) -> Self {
        let field = |f: fn(&PageMetrics) -> Option<f64>| mean(pages.iter().filter_map(f));
        let text_edit = field(|p| p.text_edit);
        let formula_edit = field(|p| p.formula_edit);
        let table_teds = field(|p| p.table_teds);
        let table_teds_s = field(|p| p.table_teds_s);
        let order_edit = field(|p| p.order_edit);
        Self {
            text_edit,
            formula_edit,
            table_teds,
            table_teds_s,
            order_edit,
            overall_edit: overall(text_edit, formula_edit, table_teds, order_edit),
            pages,
        }
    }

    /// One header row and one row of corpus means, `-` for undefined fields.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        format!(
            "overall_edit,text_edit,formula_edit,table_teds,table_teds_s,order_edit\n{},{},{},{},{},{}\n",
            cell(self.overall_edit),
            cell(self.text_edit),
            cell(self.formula_edit),
            cell(self.table_teds),
            cell(self.table_teds_s),
            cell(self.order_edit),
        )
    }
}

fn is_text(cat: Category) -> bool {
    matches!(cat, Category::Text | Category::Title | Category::Caption)
}

/// For each predicted block, the GT block holding most of it, if that share reaches [`MATCH_IOA`].
pub fn match_blocks(pred: &[Block], gt: &[Block]) -> Vec<Option<usize>> {
    pred.iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gt.iter().enumerate() {
                let share = p.bbox.ioa(&g.bbox);
                if share >= MATCH_IOA && best.is_none_or(|(_, s)| share > s) {
                    best = Some((j, share));
                }
            }
            best.map(|(j, _)| j)
        })
        .collect()
}

/// Score a parsed page against its ground truth.
///
/// Predicted blocks are matched to GT blocks by overlap. Text and formula
/// edits pool each GT block's content against the concatenation of its
/// matched fragments (top to bottom), in GT reading order; unmatched
/// predictions of the same kind are appended to the prediction. Each GT
/// table is scored against its best-overlapping prediction. The order edit
/// compares the GT sequence of matched GT blocks with the sequence implied
/// by the first prediction matched to each.
pub fn end_to_end_report(parsed: &ParsedDocument, gt: &CorpusRecord) -> PageMetrics {
    let gt_blocks = &gt.page.blocks;
    let matches = match_blocks(&parsed.blocks, gt_blocks);
    let mut fragments: Vec<Vec<&Block>> = vec![Vec::new(); gt_blocks.len()];
    let mut unmatched: Vec<&Block> = Vec::new();
    for (p, m) in parsed.blocks.iter().zip(&matches) {
        match m {
            Some(j) => fragments[*j].push(p),
            None => unmatched.push(p),
        }
    }
    for f in &mut fragments {
        f.sort_by(|a, b| a.bbox.y1().total_cmp(&b.bbox.y1()).then(a.bbox.x1().total_cmp(&b.bbox.x1())));
    }
    let gt_sequence = gt.gt_order.sequence();
    let content = |b: &Block| b.content.clone().unwrap_or_default();

    let pooled = |keep: fn(Category) -> bool| -> Option<f64> {
        let mut gt_parts = Vec::new();
        let mut pred_parts = Vec::new();
        for &j in &gt_sequence {
            if keep(gt_blocks[j].category) {
                gt_parts.push(content(&gt_blocks[j]));
                pred_parts.push(fragments[j].iter().map(|b| content(b)).collect::<Vec<_>>().join("\n"));
            }
        }
        let extra: Vec<String> = unmatched.iter().filter(|b| keep(b.category)).map(|b| content(b)).collect();
        if gt_parts.is_empty() && extra.is_empty() {
            return None;
        }
        pred_parts.extend(extra);
        let g = normalize_text(&gt_parts.join("\n"));
        let p = normalize_text(&pred_parts.join("\n"));
        Some(normalized_edit_distance(&p, &g))
    };
    let text_edit = pooled(is_text);
    let formula_edit = pooled(|c| c == Category::Formula);

    let mut teds_full = Vec::new();
    let mut teds_struct = Vec::new();
    for (j, g) in gt_blocks.iter().enumerate() {
        if g.category != Category::Table {
            continue;
        }
        let gt_html = content(g);
        let best = fragments[j]
            .iter()
            .max_by(|a, b| a.bbox.intersection_area(&g.bbox).total_cmp(&b.bbox.intersection_area(&g.bbox)))
            .map(|b| content(b))
            .unwrap_or_default();
        teds_full.push(teds(&best, &gt_html, false));
        teds_struct.push(teds(&best, &gt_html, true));
    }
    let table_teds = mean(teds_full);
    let table_teds_s = mean(teds_struct);

    let gt_matched: Vec<usize> = gt_sequence.iter().copied().filter(|&j| !fragments[j].is_empty()).collect();
    let mut seen = vec![false; gt_blocks.len()];
    let pred_matched: Vec<usize> = matches
        .iter()
        .flatten()
        .copied()
        .filter(|&j| !std::mem::replace(&mut seen[j], true))
        .collect();
    let order = if gt_matched.is_empty() {
        None
    } else {
        Some(order_edit(&pred_matched, &gt_matched).expect("both sequences list each matched GT block once"))
    };

    PageMetrics {
        page_id: gt.page.id.clone(),
        text_edit,
        formula_edit,
        table_teds,
        table_teds_s,
        order_edit: order,
        overall_edit: overall(text_edit, formula_edit, table_teds, order),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_page, LayoutTemplate};
    use crate::document::{assemble_document, ReadingOrder};

    fn identity(r: &CorpusRecord, order: &ReadingOrder) -> ParsedDocument {
        let contents: Vec<String> = r.page.blocks.iter().map(|b| b.content.clone().unwrap_or_default()).collect();
        assemble_document(&r.page.id, &r.page.blocks, &contents, order).unwrap()
    }

    #[test]
    fn identity_pipeline_scores_perfectly() {
        for t in LayoutTemplate::ALL {
            let r = synthesize_page(t, 11);
            let m = end_to_end_report(&identity(&r, &r.gt_order), &r);
            assert_eq!(m.text_edit, Some(0.0));
            assert_eq!(m.order_edit, Some(0.0));
            assert!(m.formula_edit.is_none_or(|v| v == 0.0));
            assert!(m.table_teds.is_none_or(|v| v == 1.0));
            assert_eq!(m.overall_edit, Some(0.0));
        }
    }

    #[test]
    fn reversed_order_only_moves_order_edit() {
        let r = synthesize_page(LayoutTemplate::SingleColumn, 2);
        let n = r.page.blocks.len();
        let reversed: Vec<usize> = r.gt_order.ranks().iter().map(|&k| n - 1 - k).collect();
        let m = end_to_end_report(&identity(&r, &ReadingOrder::from_ranks(reversed).unwrap()), &r);
        assert_eq!(m.text_edit, Some(0.0));
        let expected = if n % 2 == 1 { (n - 1) as f64 / n as f64 } else { 1.0 };
        assert!((m.order_edit.unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn aggregate_skips_undefined_fields() {
        let page = |t: Option<f64>, teds: Option<f64>| PageMetrics {
            page_id: "p".into(),
            text_edit: t,
            formula_edit: None,
            table_teds: teds,
            table_teds_s: teds,
            order_edit: Some(0.0),
            overall_edit: None,
        };
        let r = MetricReport::from_pages(vec![page(Some(0.2), None), page(Some(0.4), Some(0.5))]);
        assert!((r.text_edit.unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(r.table_teds, Some(0.5));
        assert!(r.formula_edit.is_none());
        assert!((r.overall_edit.unwrap() - (0.3 + 0.5 + 0.0) / 3.0).abs() < 1e-12);
        assert!(r.to_csv().starts_with("overall_edit,"));
    }
}
