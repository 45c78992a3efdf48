//! Annotation hygiene: nested-box removal, low-coverage filtering and
//! caption linking.

use serde::{Deserialize, Serialize};

use crate::document::{BBox, Block, Category, Page};

/// Intersection-over-smaller-area at which two boxes count as nested.
pub const NESTED_IOA: f64 = 0.95;

/// Default minimum fraction of the page covered by blocks.
pub const DEFAULT_COVERAGE_THRESHOLD: f64 = 0.35;

/// Relative distance band inside which a caption prefers the target above it.
const ABOVE_PREFERENCE_BAND: f64 = 0.01;

/// `true` for every box that sits inside a larger (or equal, earlier) box.
pub fn nested_box_mask(boxes: &[BBox]) -> Vec<bool> {
    (0..boxes.len())
        .map(|i| {
            let inner = &boxes[i];
            boxes.iter().enumerate().any(|(j, outer)| {
                if i == j {
                    return false;
                }
                let larger = outer.area() > inner.area() || (outer.area() == inner.area() && j < i);
                larger && inner.intersection_area(outer) / inner.area() >= NESTED_IOA
            })
        })
        .collect()
}

/// Drop every block nested inside another one; survivors keep their order.
pub fn remove_nested_boxes(blocks: Vec<Block>) -> Vec<Block> {
    let boxes: Vec<BBox> = blocks.iter().map(|b| b.bbox).collect();
    let mask = nested_box_mask(&boxes);
    blocks
        .into_iter()
        .zip(mask)
        .filter_map(|(b, nested)| (!nested).then_some(b))
        .collect()
}

/// Area of the union of `boxes`, overlaps counted once.
pub fn union_area(boxes: &[BBox]) -> f64 {
    let mut xs: Vec<f64> = boxes.iter().flat_map(|b| [b.x1(), b.x2()]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut area = 0.0;
    for w in xs.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let mut spans: Vec<(f64, f64)> = boxes
            .iter()
            .filter(|b| b.x1() <= lo && b.x2() >= hi)
            .map(|b| (b.y1(), b.y2()))
            .collect();
        spans.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut covered = 0.0;
        let mut cur: Option<(f64, f64)> = None;
        for (s, e) in spans {
            match cur {
                Some((cs, ce)) if s <= ce => cur = Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    covered += ce - cs;
                    cur = Some((s, e));
                }
                None => cur = Some((s, e)),
            }
        }
        if let Some((cs, ce)) = cur {
            covered += ce - cs;
        }
        area += covered * (hi - lo);
    }
    area
}

/// Fraction of the page area covered by its blocks.
pub fn page_coverage(page: &Page) -> f64 {
    let boxes: Vec<BBox> = page.blocks.iter().map(|b| b.bbox).collect();
    union_area(&boxes) / page.area()
}

/// Keep a page iff its block coverage reaches `threshold`.
pub fn coverage_filter(page: &Page, threshold: f64) -> bool {
    !page.blocks.is_empty() && page_coverage(page) >= threshold
}

/// A caption and the figure or table it describes, as indices into the block list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionLink {
    pub caption: usize,
    /// `None` when the page holds no figure or table.
    pub target: Option<usize>,
}

/// Link every caption to the nearest figure or table by center distance,
/// preferring a target directly above the caption when distances are close.
pub fn link_captions(blocks: &[Block]) -> Vec<CaptionLink> {
    let targets: Vec<usize> = (0..blocks.len())
        .filter(|&i| blocks[i].category.is_caption_target())
        .collect();
    blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.category == Category::Caption)
        .map(|(ci, cap)| {
            let best = targets
                .iter()
                .map(|&ti| {
                    let t = &blocks[ti].bbox;
                    let (cx, cy) = cap.bbox.center();
                    let (tx, ty) = t.center();
                    let dist = (cx - tx).hypot(cy - ty);
                    (ti, dist, is_directly_above(t, &cap.bbox))
                })
                .min_by(|a, b| {
                    let band = ABOVE_PREFERENCE_BAND * a.1.max(b.1);
                    if (a.1 - b.1).abs() <= band && a.2 != b.2 {
                        // the target above wins inside the band
                        b.2.cmp(&a.2)
                    } else {
                        a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
                    }
                })
                .map(|(ti, _, _)| ti);
            CaptionLink {
                caption: ci,
                target: best,
            }
        })
        .collect()
}

fn is_directly_above(target: &BBox, caption: &BBox) -> bool {
    let overlaps_x = target.x1() < caption.x2() && caption.x1() < target.x2();
    overlaps_x && target.center().1 < caption.center().1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn blk(id: &str, b: BBox, c: Category) -> Block {
        Block::new(id, b, c)
    }

    #[test]
    fn disjoint_boxes_unchanged() {
        let blocks = vec![
            blk("a", bb(0.0, 0.0, 10.0, 10.0), Category::Text),
            blk("b", bb(20.0, 0.0, 30.0, 10.0), Category::Text),
        ];
        assert_eq!(remove_nested_boxes(blocks.clone()), blocks);
    }

    #[test]
    fn inner_box_dropped() {
        let blocks = vec![
            blk("inner", bb(2.0, 2.0, 5.0, 5.0), Category::Text),
            blk("outer", bb(0.0, 0.0, 10.0, 10.0), Category::Text),
        ];
        let kept = remove_nested_boxes(blocks);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "outer");
    }

    #[test]
    fn half_overlap_keeps_both() {
        let blocks = vec![
            blk("a", bb(0.0, 0.0, 10.0, 10.0), Category::Text),
            blk("b", bb(5.0, 0.0, 15.0, 10.0), Category::Text),
        ];
        assert_eq!(remove_nested_boxes(blocks).len(), 2);
    }

    #[test]
    fn identical_boxes_keep_first() {
        let blocks = vec![
            blk("a", bb(0.0, 0.0, 10.0, 10.0), Category::Text),
            blk("b", bb(0.0, 0.0, 10.0, 10.0), Category::Title),
        ];
        let kept = remove_nested_boxes(blocks);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "a");
    }

    #[test]
    fn coverage_examples() {
        let mut p = Page::new("p", 100.0, 100.0);
        assert!(!coverage_filter(&p, DEFAULT_COVERAGE_THRESHOLD));
        p.blocks.push(blk("a", bb(0.0, 0.0, 100.0, 30.0), Category::Text));
        assert!((page_coverage(&p) - 0.3).abs() < 1e-12);
        assert!(!coverage_filter(&p, 0.35));
        p.blocks[0].bbox = bb(0.0, 0.0, 100.0, 100.0);
        assert!(coverage_filter(&p, 0.35));
    }

    #[test]
    fn union_area_counts_overlap_once() {
        let boxes = [bb(0.0, 0.0, 10.0, 10.0), bb(5.0, 5.0, 15.0, 15.0)];
        assert!((union_area(&boxes) - 175.0).abs() < 1e-9);
    }

    #[test]
    fn caption_below_figure_links() {
        let blocks = vec![
            blk("fig", bb(100.0, 100.0, 500.0, 400.0), Category::Figure),
            blk("cap", bb(100.0, 410.0, 500.0, 440.0), Category::Caption),
        ];
        assert_eq!(link_captions(&blocks), vec![CaptionLink { caption: 1, target: Some(0) }]);
    }

    #[test]
    fn equidistant_caption_prefers_above() {
        let blocks = vec![
            blk("tab", bb(100.0, 500.0, 500.0, 600.0), Category::Table),
            blk("cap", bb(100.0, 400.0, 500.0, 450.0), Category::Caption),
            blk("fig", bb(100.0, 250.0, 500.0, 350.0), Category::Figure),
        ];
        assert_eq!(link_captions(&blocks)[0].target, Some(2));
    }

    #[test]
    fn caption_without_targets_is_unlinked() {
        let blocks = vec![
            blk("t", bb(0.0, 0.0, 10.0, 10.0), Category::Text),
            blk("cap", bb(0.0, 20.0, 10.0, 30.0), Category::Caption),
        ];
        assert_eq!(link_captions(&blocks), vec![CaptionLink { caption: 1, target: None }]);
    }
}
