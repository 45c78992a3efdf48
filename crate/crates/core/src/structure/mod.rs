//! Structure detection: the detector contract, reference detectors, query
//! selection and detection-noise injection.

mod noise;
mod xycut;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_raw_jsonl, nested_box_mask};
use crate::document::{BBox, Category, Page};
use crate::error::{invalid, Error, Result};

pub use noise::{perturb_detections, NoiseConfig};
pub use xycut::{xycut_leaves, XyCutDetector, DEFAULT_GAP_THRESHOLD};

/// One layout prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub category: Category,
    pub score: f64,
    /// Set on boxes produced by [`perturb_detections`].
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub perturbed: bool,
}

impl Detection {
    pub fn new(bbox: BBox, category: Category, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(invalid(format!("detection score {score} outside [0, 1]")));
        }
        Ok(Self {
            bbox,
            category,
            score,
            perturbed: false,
        })
    }
}

/// A structure-detection stage.
pub trait Detector: Send + Sync {
    fn detect(&self, page: &Page) -> Result<Vec<Detection>>;

    /// Whether concurrent `detect` calls must be serialized by the caller.
    fn is_serial(&self) -> bool {
        false
    }
}

/// Returns the ground-truth blocks with confidence 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleDetector;

impl Detector for OracleDetector {
    fn detect(&self, page: &Page) -> Result<Vec<Detection>> {
        oracle_detect(page)
    }
}

/// Ground-truth passthrough.
pub fn oracle_detect(page: &Page) -> Result<Vec<Detection>> {
    let annotated = page.blocks.iter().any(|b| b.content.is_some());
    if !annotated && !page.blocks.is_empty() {
        return Err(Error::MissingGroundTruth {
            page_id: page.id.clone(),
        });
    }
    Ok(page
        .blocks
        .iter()
        .map(|b| Detection {
            bbox: b.bbox,
            category: b.category,
            score: 1.0,
            perturbed: false,
        })
        .collect())
}

/// Replays detections produced elsewhere, read from a JSONL file in the
/// corpus schema (blocks may carry a `score`).
#[derive(Debug, Clone, Default)]
pub struct ExternalDetector {
    by_page: HashMap<String, Vec<Detection>>,
}

impl ExternalDetector {
    pub fn from_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let mut by_page = HashMap::new();
        for rec in load_raw_jsonl(path)? {
            let dets = rec
                .blocks
                .iter()
                .map(|b| Detection::new(b.bbox, b.category, b.score.unwrap_or(1.0)))
                .collect::<Result<Vec<_>>>()?;
            by_page.insert(rec.page.id.clone(), dets);
        }
        Ok(Self { by_page })
    }
}

impl Detector for ExternalDetector {
    fn detect(&self, page: &Page) -> Result<Vec<Detection>> {
        self.by_page.get(&page.id).cloned().ok_or_else(|| Error::Stage {
            stage: "structure",
            page_id: page.id.clone(),
            message: "no external detections for this page".into(),
        })
    }
}

/// Indices of the `k` highest scores, best first; ties go to the lower index.
pub fn select_topk_queries(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Drop detections nested inside other detections and clip the rest to the page.
pub fn clean_detections(dets: Vec<Detection>, page: &Page) -> Vec<Detection> {
    let boxes: Vec<BBox> = dets.iter().map(|d| d.bbox).collect();
    let mask = nested_box_mask(&boxes);
    dets.into_iter()
        .zip(mask)
        .filter(|(_, nested)| !nested)
        .filter_map(|(mut d, _)| {
            d.bbox = d.bbox.clamp_to(page.width, page.height)?;
            Some(d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_page, LayoutTemplate};
    use crate::document::Block;

    #[test]
    fn topk_examples() {
        assert_eq!(select_topk_queries(&[0.9, 0.1, 0.5], 2), vec![0, 2]);
        assert_eq!(select_topk_queries(&[0.9, 0.1, 0.5], 3), vec![0, 2, 1]);
        assert_eq!(select_topk_queries(&[0.9, 0.1, 0.5], 0), Vec::<usize>::new());
        assert_eq!(select_topk_queries(&[0.9, 0.1], 5), vec![0, 1]);
        assert_eq!(select_topk_queries(&[0.5, 0.7, 0.5], 2), vec![1, 0]);
    }

    #[test]
    fn oracle_passthrough() {
        let empty = Page::new("e", 100.0, 100.0);
        assert!(oracle_detect(&empty).unwrap().is_empty());

        let r = synthesize_page(LayoutTemplate::TableReport, 3);
        let dets = oracle_detect(&r.page).unwrap();
        assert_eq!(dets.len(), r.page.blocks.len());
        for (d, b) in dets.iter().zip(&r.page.blocks) {
            assert_eq!(d.bbox, b.bbox);
            assert_eq!(d.category, b.category);
            assert_eq!(d.score, 1.0);
        }
    }

    #[test]
    fn oracle_requires_ground_truth() {
        let mut p = Page::new("p", 100.0, 100.0);
        p.blocks.push(Block::new("a", BBox::new(0.0, 0.0, 10.0, 10.0).unwrap(), Category::Text));
        assert!(matches!(oracle_detect(&p), Err(Error::MissingGroundTruth { .. })));
    }

    #[test]
    fn score_must_be_probability() {
        let b = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Detection::new(b, Category::Text, 1.2).is_err());
        assert!(Detection::new(b, Category::Text, 0.3).is_ok());
    }

    #[test]
    fn external_detector_reads_corpus_schema() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dets.jsonl");
        std::fs::write(
            &path,
            r#"{"page":{"id":"p1","w":100,"h":100},"blocks":[{"id":"d0","bbox":[1,2,30,40],"category":"table","score":0.8}]}"#,
        )
        .unwrap();
        let det = ExternalDetector::from_jsonl(&path).unwrap();
        let got = det.detect(&Page::new("p1", 100.0, 100.0)).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].category, Category::Table);
        assert_eq!(got[0].score, 0.8);
        assert!(det.detect(&Page::new("p2", 100.0, 100.0)).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn brute_force(scores: &[f64], k: usize) -> Vec<usize> {
            // stable sort by descending score keeps lower indices first on ties
            let mut pairs: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
            pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
            pairs.into_iter().take(k).map(|(i, _)| i).collect()
        }

        proptest! {
            #[test]
            fn topk_matches_stable_sort(
                scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]), 0..=12),
                k in 0usize..15,
            ) {
                let got = select_topk_queries(&scores, k);
                prop_assert_eq!(&got, &brute_force(&scores, k));
                prop_assert_eq!(got.len(), k.min(scores.len()));
                let mut dedup = got.clone();
                dedup.sort_unstable();
                dedup.dedup();
                prop_assert_eq!(dedup.len(), got.len());
                prop_assert!(got.windows(2).all(|w| scores[w[0]] >= scores[w[1]]));
            }
        }
    }
}
