//! Shared domain types: boxes, categories, blocks, pages and reading orders.
//!
//! Geometry is in page pixels with the origin at the top-left corner. The
//! relation model consumes boxes on a 0..=1000 integer grid produced by
//! [`normalize_bbox`].

mod markdown;
mod region;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use markdown::{assemble_document, render_block, ParsedDocument};
pub use region::{crop_raster, crop_region, Region};

/// Side length of the normalized coordinate grid.
pub const GRID_SIZE: u16 = 1000;

/// Axis-aligned box `(x1, y1, x2, y2)` in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|c| c.is_finite());
        if !finite || x1 < 0.0 || y1 < 0.0 || x2 <= x1 || y2 <= y1 {
            return Err(invalid(format!(
                "bbox ({x1}, {y1}, {x2}, {y2}) violates 0 <= x1 < x2, 0 <= y1 < y2"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }

    pub fn y1(&self) -> f64 {
        self.y1
    }

    pub fn x2(&self) -> f64 {
        self.x2
    }

    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Overlap area with `other` (0 when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x2.min(other.x2) - self.x1.max(other.x1);
        let h = self.y2.min(other.y2) - self.y1.max(other.y1);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Intersection over the area of `self`.
    pub fn ioa(&self, other: &BBox) -> f64 {
        self.intersection_area(other) / self.area()
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }

    /// Clamp to `[0, width] x [0, height]`; `None` if nothing of the box remains.
    pub fn clamp_to(&self, width: f64, height: f64) -> Option<BBox> {
        BBox::new(
            self.x1.min(width),
            self.y1.min(height),
            self.x2.min(width),
            self.y2.min(height),
        )
        .ok()
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x2 <= width && self.y2 <= height
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<BBox> {
        BBox::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = crate::Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// A box on the `0..=GRID_SIZE` integer grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridBox {
    pub x1: u16,
    pub y1: u16,
    pub x2: u16,
    pub y2: u16,
}

impl GridBox {
    pub fn width(&self) -> u16 {
        self.x2.saturating_sub(self.x1)
    }

    pub fn height(&self) -> u16 {
        self.y2.saturating_sub(self.y1)
    }

    /// The six embedding indices `(x1, y1, x2, y2, w, h)`.
    pub fn features(&self) -> [u16; 6] {
        [self.x1, self.y1, self.x2, self.y2, self.width(), self.height()]
    }
}

/// Map a pixel box onto the 0..=1000 grid of a `page_w` x `page_h` page.
pub fn normalize_bbox(bbox: &BBox, page_w: f64, page_h: f64) -> Result<GridBox> {
    if !(page_w.is_finite() && page_h.is_finite()) || page_w <= 0.0 || page_h <= 0.0 {
        return Err(invalid(format!("degenerate page size {page_w}x{page_h}")));
    }
    let scale = |c: f64, dim: f64| -> u16 {
        (c / dim * f64::from(GRID_SIZE))
            .round()
            .clamp(0.0, f64::from(GRID_SIZE)) as u16
    };
    Ok(GridBox {
        x1: scale(bbox.x1, page_w),
        y1: scale(bbox.y1, page_h),
        x2: scale(bbox.x2, page_w),
        y2: scale(bbox.y2, page_h),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Text,
    Title,
    Table,
    Figure,
    Formula,
    Caption,
    Code,
    PageHeader,
    PageFooter,
}

impl Category {
    pub const ALL: [Category; 9] = [
        Category::Text,
        Category::Title,
        Category::Table,
        Category::Figure,
        Category::Formula,
        Category::Caption,
        Category::Code,
        Category::PageHeader,
        Category::PageFooter,
    ];

    pub const COUNT: usize = Self::ALL.len();

    /// Dense index used for embedding lookups.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Text => "text",
            Category::Title => "title",
            Category::Table => "table",
            Category::Figure => "figure",
            Category::Formula => "formula",
            Category::Caption => "caption",
            Category::Code => "code",
            Category::PageHeader => "pageheader",
            Category::PageFooter => "pagefooter",
        }
    }

    /// Figures and tables are the targets captions attach to.
    pub fn is_caption_target(self) -> bool {
        matches!(self, Category::Figure | Category::Table)
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A layout element on a page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: String,
    pub bbox: BBox,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
}

impl Block {
    pub fn new(id: impl Into<String>, bbox: BBox, category: Category) -> Self {
        Self {
            id: id.into(),
            bbox,
            category,
            content: None,
        }
    }

    pub fn with_content(mut self, content: impl Into<String>) -> Self {
        self.content = Some(content.into());
        self
    }
}

/// A text line with its line-level reading order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextLine {
    pub bbox: BBox,
    pub order: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// A document page as an annotation record, optionally backed by a raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Page {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub blocks: Vec<Block>,
    pub lines: Vec<TextLine>,
    pub image: Option<PathBuf>,
}

impl Page {
    pub fn new(id: impl Into<String>, width: f64, height: f64) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            blocks: Vec::new(),
            lines: Vec::new(),
            image: None,
        }
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    pub fn bounds(&self) -> BBox {
        BBox {
            x1: 0.0,
            y1: 0.0,
            x2: self.width,
            y2: self.height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(invalid(format!(
                "page {} has degenerate size {}x{}",
                self.id, self.width, self.height
            )));
        }
        let mut seen = HashSet::new();
        for b in &self.blocks {
            if !seen.insert(b.id.as_str()) {
                return Err(invalid(format!("duplicate block id {} on page {}", b.id, self.id)));
            }
            if !b.bbox.within(self.width, self.height) {
                return Err(invalid(format!("block {} lies outside page {}", b.id, self.id)));
            }
        }
        Ok(())
    }

    pub fn block(&self, id: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }
}

/// A reading order, stored as the rank of each element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ReadingOrder {
    ranks: Vec<usize>,
}

impl ReadingOrder {
    pub fn identity(n: usize) -> Self {
        Self {
            ranks: (0..n).collect(),
        }
    }

    /// `ranks[i]` is the position of element `i` in the reading sequence.
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self> {
        let n = ranks.len();
        let mut seen = vec![false; n];
        for &r in &ranks {
            if r >= n || std::mem::replace(&mut seen[r], true) {
                return Err(invalid(format!("{ranks:?} is not a permutation of 0..{n}")));
            }
        }
        Ok(Self { ranks })
    }

    /// `sequence[k]` is the element read at position `k`.
    pub fn from_sequence(sequence: &[usize]) -> Result<Self> {
        let n = sequence.len();
        let mut ranks = vec![usize::MAX; n];
        for (pos, &el) in sequence.iter().enumerate() {
            if el >= n || ranks[el] != usize::MAX {
                return Err(invalid(format!("{sequence:?} is not a permutation of 0..{n}")));
            }
            ranks[el] = pos;
        }
        Ok(Self { ranks })
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn sequence(&self) -> Vec<usize> {
        let mut seq = vec![0; self.ranks.len()];
        for (el, &r) in self.ranks.iter().enumerate() {
            seq[r] = el;
        }
        seq
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }
}

impl TryFrom<Vec<usize>> for ReadingOrder {
    type Error = crate::Error;

    fn try_from(ranks: Vec<usize>) -> Result<Self> {
        Self::from_ranks(ranks)
    }
}

impl From<ReadingOrder> for Vec<usize> {
    fn from(o: ReadingOrder) -> Self {
        o.ranks
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn bbox_rejects_degenerate() {
        assert!(BBox::new(10.0, 0.0, 10.0, 5.0).is_err());
        assert!(BBox::new(-1.0, 0.0, 10.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, f64::NAN, 5.0).is_err());
        assert!(serde_json::from_str::<BBox>("[5, 5, 1, 1]").is_err());
    }

    #[test]
    fn normalize_examples() {
        let g = normalize_bbox(&bb(100.0, 200.0, 300.0, 400.0), 1000.0, 1000.0).unwrap();
        assert_eq!((g.x1, g.y1, g.x2, g.y2), (100, 200, 300, 400));
        let g = normalize_bbox(&bb(1000.0, 500.0, 2000.0, 1000.0), 2000.0, 1000.0).unwrap();
        assert_eq!((g.x1, g.y1, g.x2, g.y2), (500, 500, 1000, 1000));
        let g = normalize_bbox(&bb(0.0, 0.0, 2000.0, 1000.0), 2000.0, 1000.0).unwrap();
        assert_eq!((g.x1, g.y1, g.x2, g.y2), (0, 0, 1000, 1000));
        assert_eq!(g.features(), [0, 0, 1000, 1000, 1000, 1000]);
    }

    #[test]
    fn normalize_rejects_degenerate_page() {
        let b = bb(0.0, 0.0, 1.0, 1.0);
        assert!(normalize_bbox(&b, 0.0, 10.0).is_err());
        assert!(normalize_bbox(&b, 10.0, -1.0).is_err());
    }

    #[test]
    fn reading_order_round_trip() {
        let o = ReadingOrder::from_ranks(vec![2, 0, 1]).unwrap();
        assert_eq!(o.sequence(), vec![1, 2, 0]);
        assert_eq!(ReadingOrder::from_sequence(&o.sequence()).unwrap(), o);
        assert!(ReadingOrder::from_ranks(vec![0, 0]).is_err());
        assert!(ReadingOrder::from_ranks(vec![0, 2]).is_err());
        assert!(ReadingOrder::from_sequence(&[1, 1]).is_err());
    }

    #[test]
    fn category_serializes_lowercase() {
        assert_eq!(serde_json::to_string(&Category::PageHeader).unwrap(), "\"pageheader\"");
        for c in Category::ALL {
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(s, format!("\"{}\"", c.as_str()));
        }
    }

    #[test]
    fn page_validate_checks_ids_and_bounds() {
        let mut p = Page::new("p", 100.0, 100.0);
        p.blocks.push(Block::new("a", bb(0.0, 0.0, 10.0, 10.0), Category::Text));
        assert!(p.validate().is_ok());
        p.blocks.push(Block::new("a", bb(0.0, 20.0, 10.0, 30.0), Category::Text));
        assert!(p.validate().is_err());
        p.blocks[1].id = "b".into();
        p.blocks[1].bbox = bb(90.0, 0.0, 110.0, 10.0);
        assert!(p.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_idempotent_on_grid_page(x1 in 0u16..999, y1 in 0u16..999, w in 1u16..500, h in 1u16..500) {
                let x2 = (x1 + w).min(1000);
                let y2 = (y1 + h).min(1000);
                let b = bb(f64::from(x1), f64::from(y1), f64::from(x2), f64::from(y2));
                let g = normalize_bbox(&b, 1000.0, 1000.0).unwrap();
                prop_assert_eq!((g.x1, g.y1, g.x2, g.y2), (x1, y1, x2, y2));
            }

            #[test]
            fn normalize_monotone_per_axis(a in 0.0f64..1500.0, d in 0.0f64..400.0, w in 100.0f64..3000.0) {
                let lo = bb(a, 0.0, a + 1.0, 1.0);
                let hi = bb(a + d, 0.0, a + d + 1.0, 1.0);
                let gl = normalize_bbox(&lo, w, 10.0).unwrap();
                let gh = normalize_bbox(&hi, w, 10.0).unwrap();
                prop_assert!(gl.x1 <= gh.x1);
                prop_assert!(gl.x2 <= gh.x2);
            }
        }
    }
}
