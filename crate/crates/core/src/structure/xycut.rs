//! Recursive XY-cut over line and block occupancy.

use super::{Detection, Detector};
use crate::document::{BBox, Category, Page};
use crate::error::Result;

/// Minimum whitespace gap, in units of a 1000-wide (or 1000-tall) page,
/// that separates two regions.
pub const DEFAULT_GAP_THRESHOLD: f64 = 12.0;

#[derive(Debug, Clone, Copy)]
pub struct XyCutDetector {
    pub gap_threshold: f64,
}

impl Default for XyCutDetector {
    fn default() -> Self {
        Self {
            gap_threshold: DEFAULT_GAP_THRESHOLD,
        }
    }
}

impl Detector for XyCutDetector {
    fn detect(&self, page: &Page) -> Result<Vec<Detection>> {
        Ok(self.detect_page(page))
    }
}

impl XyCutDetector {
    pub fn detect_page(&self, page: &Page) -> Vec<Detection> {
        let evidence = occupancy(page);
        let gap_x = self.gap_threshold * page.width / 1000.0;
        let gap_y = self.gap_threshold * page.height / 1000.0;
        xycut_leaves(evidence, gap_x, gap_y)
            .into_iter()
            .map(|bbox| Detection {
                bbox,
                category: Category::Text,
                score: 1.0,
                perturbed: false,
            })
            .collect()
    }
}

/// Text lines, plus the boxes of blocks that contain no line.
fn occupancy(page: &Page) -> Vec<BBox> {
    let mut rects: Vec<BBox> = page.lines.iter().map(|l| l.bbox).collect();
    for b in &page.blocks {
        let has_line = page.lines.iter().any(|l| {
            let (cx, cy) = l.bbox.center();
            b.bbox.contains_point(cx, cy)
        });
        if !has_line {
            rects.push(b.bbox);
        }
    }
    rects
}

/// Split `rects` recursively at whitespace gaps of at least `gap_y`
/// (horizontal cuts, tried first) or `gap_x` (vertical cuts). Leaves are the
/// tight bounds of the rectangles that could not be separated further.
pub fn xycut_leaves(rects: Vec<BBox>, gap_x: f64, gap_y: f64) -> Vec<BBox> {
    let mut out = Vec::new();
    cut(rects, gap_x, gap_y, &mut out);
    out
}

fn cut(rects: Vec<BBox>, gap_x: f64, gap_y: f64, out: &mut Vec<BBox>) {
    if rects.is_empty() {
        return;
    }
    if rects.len() > 1 {
        for axis in [Axis::Y, Axis::X] {
            let gap = match axis {
                Axis::Y => gap_y,
                Axis::X => gap_x,
            };
            let groups = split(&rects, axis, gap);
            if groups.len() > 1 {
                for g in groups {
                    cut(g, gap_x, gap_y, out);
                }
                return;
            }
        }
    }
    let leaf = rects[1..].iter().fold(rects[0], |acc, r| acc.union(r));
    out.push(leaf);
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

/// Group rectangles whose projections on `axis` are closer than `gap`.
fn split(rects: &[BBox], axis: Axis, gap: f64) -> Vec<Vec<BBox>> {
    let span = |r: &BBox| match axis {
        Axis::X => (r.x1(), r.x2()),
        Axis::Y => (r.y1(), r.y2()),
    };
    let mut sorted: Vec<BBox> = rects.to_vec();
    sorted.sort_by(|a, b| span(a).0.total_cmp(&span(b).0).then(span(a).1.total_cmp(&span(b).1)));
    let mut groups: Vec<Vec<BBox>> = Vec::new();
    let mut reach = f64::NEG_INFINITY;
    for r in sorted {
        let (lo, hi) = span(&r);
        match groups.last_mut() {
            Some(g) if lo - reach < gap => g.push(r),
            _ => groups.push(vec![r]),
        }
        reach = reach.max(hi);
    }
    groups
}
