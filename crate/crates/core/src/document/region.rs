use image::DynamicImage;
use serde::{Deserialize, Serialize};

use super::{BBox, Page};
use crate::error::{invalid, Result};

/// Fraction of a block that must fall inside a region for its whole content
/// to be attributed to that region.
const BLOCK_INCLUSION_IOA: f64 = 0.9;

/// The part of a page covered by a crop box.
///
/// For rasterless pages the region carries the ground-truth text that falls
/// inside the crop, which is what the mock recognizer transcribes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: BBox,
    /// Set when the requested box extended past the page and was clipped.
    pub clipped: bool,
    /// Ground-truth text inside the region; `None` when the page has no GT content.
    pub content: Option<String>,
}

impl Region {
    pub fn width(&self) -> f64 {
        self.bbox.width()
    }

    pub fn height(&self) -> f64 {
        self.bbox.height()
    }

    /// Map a region-relative offset back to page coordinates.
    pub fn to_page_point(&self, dx: f64, dy: f64) -> (f64, f64) {
        (self.bbox.x1() + dx, self.bbox.y1() + dy)
    }
}

/// Cut `bbox` out of `page`, clipping to the page bounds.
pub fn crop_region(page: &Page, bbox: &BBox) -> Result<Region> {
    let clipped_box = bbox.clamp_to(page.width, page.height).ok_or_else(|| {
        invalid(format!(
            "crop box {:?} does not intersect page {}",
            <[f64; 4]>::from(*bbox),
            page.id
        ))
    })?;
    let clipped = clipped_box != *bbox;

    let has_gt = page.blocks.iter().any(|b| b.content.is_some());
    let content = has_gt.then(|| restricted_text(page, &clipped_box));
    Ok(Region {
        bbox: clipped_box,
        clipped,
        content,
    })
}

fn restricted_text(page: &Page, region: &BBox) -> String {
    // (y, x, text) fragments, emitted top-to-bottom
    let mut parts: Vec<(f64, f64, String)> = Vec::new();
    for block in &page.blocks {
        let Some(content) = block.content.as_deref() else {
            continue;
        };
        if block.bbox.ioa(region) >= BLOCK_INCLUSION_IOA {
            parts.push((block.bbox.y1(), block.bbox.x1(), content.to_string()));
            continue;
        }
        if block.bbox.intersection_area(region) <= 0.0 {
            continue;
        }
        let mut lines: Vec<_> = page
            .lines
            .iter()
            .filter(|l| l.text.is_some())
            .filter(|l| {
                let (cx, cy) = l.bbox.center();
                block.bbox.contains_point(cx, cy)
            })
            .collect();
        if lines.is_empty() {
            let (cx, cy) = block.bbox.center();
            if region.contains_point(cx, cy) {
                parts.push((block.bbox.y1(), block.bbox.x1(), content.to_string()));
            }
            continue;
        }
        lines.sort_by_key(|l| l.order);
        for line in lines {
            let (cx, cy) = line.bbox.center();
            if region.contains_point(cx, cy) {
                let text = line.text.clone().unwrap_or_default();
                parts.push((line.bbox.y1(), line.bbox.x1(), text));
            }
        }
    }
    parts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    parts
        .into_iter()
        .map(|(_, _, t)| t)
        .collect::<Vec<_>>()
        .join("\n")
}

/// Crop the pixels under `bbox` from a raster of the page. The raster may
/// have a different resolution than the page coordinate frame.
pub fn crop_raster(image: &DynamicImage, bbox: &BBox, page_w: f64, page_h: f64) -> DynamicImage {
    let sx = f64::from(image.width()) / page_w;
    let sy = f64::from(image.height()) / page_h;
    let x = (bbox.x1() * sx).floor().max(0.0) as u32;
    let y = (bbox.y1() * sy).floor().max(0.0) as u32;
    let x = x.min(image.width().saturating_sub(1));
    let y = y.min(image.height().saturating_sub(1));
    let w = ((bbox.x2() * sx).ceil() as u32).min(image.width()).saturating_sub(x).max(1);
    let h = ((bbox.y2() * sy).ceil() as u32).min(image.height()).saturating_sub(y).max(1);
    image.crop_imm(x, y, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{Block, Category, TextLine};

    fn bb(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    fn sample_page() -> Page {
        let mut p = Page::new("p0", 200.0, 300.0);
        p.blocks.push(
            Block::new("b0", bb(10.0, 10.0, 190.0, 70.0), Category::Text)
                .with_content("first line\nsecond line"),
        );
        p.blocks.push(
            Block::new("b1", bb(10.0, 100.0, 190.0, 130.0), Category::Title).with_content("Heading"),
        );
        p.lines = vec![
            TextLine {
                bbox: bb(10.0, 10.0, 190.0, 35.0),
                order: 0,
                text: Some("first line".into()),
            },
            TextLine {
                bbox: bb(10.0, 45.0, 150.0, 70.0),
                order: 1,
                text: Some("second line".into()),
            },
            TextLine {
                bbox: bb(10.0, 100.0, 190.0, 130.0),
                order: 2,
                text: Some("Heading".into()),
            },
        ];
        p
    }

    #[test]
    fn full_page_crop_equals_page() {
        let p = sample_page();
        let r = crop_region(&p, &p.bounds()).unwrap();
        assert_eq!(r.bbox, p.bounds());
        assert!(!r.clipped);
        assert_eq!(r.content.as_deref(), Some("first line\nsecond line\nHeading"));
    }

    #[test]
    fn block_crop_returns_block_content() {
        let p = sample_page();
        let r = crop_region(&p, &p.blocks[0].bbox).unwrap();
        assert_eq!((r.width(), r.height()), (180.0, 60.0));
        assert_eq!(r.content.as_deref(), p.blocks[0].content.as_deref());
    }

    #[test]
    fn line_crop_returns_line_text() {
        let p = sample_page();
        let r = crop_region(&p, &bb(8.0, 43.0, 152.0, 72.0)).unwrap();
        assert_eq!(r.content.as_deref(), Some("second line"));
    }

    #[test]
    fn overhanging_crop_is_clipped_and_flagged() {
        let p = sample_page();
        let r = crop_region(&p, &bb(150.0, 10.0, 210.0, 70.0)).unwrap();
        assert!(r.clipped);
        assert_eq!(r.bbox, bb(150.0, 10.0, 200.0, 70.0));
        assert!(crop_region(&p, &bb(250.0, 10.0, 260.0, 20.0)).is_err());
    }

    #[test]
    fn region_offsets_map_to_page() {
        let p = sample_page();
        let r = crop_region(&p, &p.blocks[1].bbox).unwrap();
        assert_eq!(r.to_page_point(0.0, 0.0), (10.0, 100.0));
        assert_eq!(r.to_page_point(5.0, 2.0), (15.0, 102.0));
    }

    #[test]
    fn raster_crop_scales_to_image() {
        let img = DynamicImage::new_rgb8(400, 600);
        let c = crop_raster(&img, &bb(10.0, 10.0, 110.0, 60.0), 200.0, 300.0);
        assert_eq!((c.width(), c.height()), (200, 100));
    }
}
