//! Detection noise that mimics fine-grained text-line detection stages.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Detection;
use crate::document::{BBox, Category, Page};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Chance that a text detection is replaced by its line boxes.
    pub split_probability: f64,
    /// Maximum absolute shift of each edge of a split line box, in pixels.
    pub boundary_jitter: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub const IDENTITY: NoiseConfig = NoiseConfig {
        split_probability: 0.0,
        boundary_jitter: 0.0,
        seed: 0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.split_probability) {
            return Err(invalid(format!("split_probability {} outside [0, 1]", self.split_probability)));
        }
        if !(self.boundary_jitter >= 0.0 && self.boundary_jitter.is_finite()) {
            return Err(invalid(format!("boundary_jitter {} must be >= 0", self.boundary_jitter)));
        }
        Ok(())
    }
}

/// Split text detections into jittered line detections.
///
/// Each text detection is, with probability `split_probability`, replaced
/// in place by the page lines whose centers it contains (in line order).
/// Every edge of a replacement box moves by an independent uniform offset in
/// `[-boundary_jitter, boundary_jitter]`, clamped to the page. Replacement
/// boxes are flagged `perturbed`. Other detections pass through unchanged.
/// The stream of random draws depends only on `cfg.seed` and the page id.
pub fn perturb_detections(dets: &[Detection], cfg: &NoiseConfig, page: &Page) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let page_seed = cfg.seed ^ crate::stable_hash(&[page.id.as_bytes()]);
    // split decisions and jitter draw from separate streams so that the
    // jitter amount never changes which detections are split
    let mut rng = ChaCha8Rng::seed_from_u64(page_seed);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(page_seed.rotate_left(17) ^ 0x5bd1_e995);
    let mut out = Vec::with_capacity(dets.len());
    for det in dets {
        if det.category != Category::Text || !rng.random_bool(cfg.split_probability) {
            out.push(det.clone());
            continue;
        }
        let mut lines: Vec<_> = page
            .lines
            .iter()
            .filter(|l| {
                let (cx, cy) = l.bbox.center();
                det.bbox.contains_point(cx, cy)
            })
            .collect();
        if lines.is_empty() {
            out.push(det.clone());
            continue;
        }
        lines.sort_by_key(|l| l.order);
        for line in lines {
            let bbox = jitter(&line.bbox, cfg.boundary_jitter, page, &mut jitter_rng);
            out.push(Detection {
                bbox,
                category: det.category,
                score: det.score,
                perturbed: true,
            });
        }
    }
    Ok(out)
}

fn jitter(b: &BBox, amount: f64, page: &Page, rng: &mut ChaCha8Rng) -> BBox {
    if amount == 0.0 {
        return *b;
    }
    let mut shift = |c: f64, hi: f64| (c + rng.random_range(-amount..=amount)).clamp(0.0, hi);
    let x1 = shift(b.x1(), page.width);
    let y1 = shift(b.y1(), page.height);
    let x2 = shift(b.x2(), page.width);
    let y2 = shift(b.y2(), page.height);
    BBox::new(x1, y1, x2, y2).unwrap_or(*b)
}
