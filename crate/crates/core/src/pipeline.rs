//! End-to-end parsing: detect, recognize blocks concurrently, order, and
//! assemble markdown, with on-disk artifacts and an optional metric report.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::CorpusRecord;
use crate::document::{assemble_document, Block, Page, ParsedDocument, ReadingOrder};
use crate::error::{invalid, Error, Result};
use crate::eval::{end_to_end_report, match_blocks, MetricReport, PageMetrics};
use crate::recognition::{
    recognize_page_blocks, ErrorModel, LatencyModel, MockRecognizer, Recognizer, RemoteConfig, RemoteRecognizer, RetryPolicy,
};
use crate::relation::{predict_order, RelationModelParams};
use crate::structure::{clean_detections, perturb_detections, Detection, Detector, ExternalDetector, NoiseConfig, OracleDetector, XyCutDetector};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Oracle,
    Xycut,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub kind: DetectorKind,
    /// Detections JSONL for `external`.
    pub path: Option<PathBuf>,
    pub gap_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            kind: DetectorKind::Oracle,
            path: None,
            gap_threshold: crate::structure::DEFAULT_GAP_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbConfig {
    pub enabled: bool,
    pub split_probability: f64,
    pub boundary_jitter: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            split_probability: 0.5,
            boundary_jitter: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecognizerKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerConfig {
    pub kind: RecognizerKind,
    pub char_error_rate: f64,
    pub boundary_artifact: bool,
    pub per_request_ms: u64,
    pub per_token_ms: u64,
    pub api_base: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        Self {
            kind: RecognizerKind::Mock,
            char_error_rate: 0.0,
            boundary_artifact: false,
            per_request_ms: 0,
            per_token_ms: 0,
            api_base: String::new(),
            model: String::new(),
            timeout_secs: 60.0,
            max_attempts: 3,
            backoff_ms: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderKind {
    /// Relation model from `order.model`.
    #[default]
    Model,
    /// Ground-truth order transferred through block matching.
    Gt,
    /// Top to bottom, then left to right.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrderConfig {
    pub kind: OrderKind,
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Concurrent recognition requests per page.
    pub parallelism: usize,
    pub out: PathBuf,
    pub detector: DetectorConfig,
    pub perturb: PerturbConfig,
    pub recognizer: RecognizerConfig,
    pub order: OrderConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            parallelism: 1,
            out: PathBuf::from("out"),
            detector: DetectorConfig::default(),
            perturb: PerturbConfig::default(),
            recognizer: RecognizerConfig::default(),
            order: OrderConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Check values and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(invalid("parallelism must be at least 1"));
        }
        if self.detector.kind == DetectorKind::External {
            let path = self.detector.path.as_ref().ok_or_else(|| invalid("external detector needs detector.path"))?;
            require_file(path)?;
        }
        if self.perturb.enabled {
            self.noise().validate()?;
        }
        self.error_model().validate()?;
        if self.recognizer.max_attempts == 0 {
            return Err(invalid("recognizer.max_attempts must be at least 1"));
        }
        if self.order.kind == OrderKind::Model {
            let path = self.order.model.as_ref().ok_or_else(|| invalid("model ordering needs order.model"))?;
            require_file(path)?;
        }
        Ok(())
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig {
            split_probability: self.perturb.split_probability,
            boundary_jitter: self.perturb.boundary_jitter,
            seed: self.seed,
        }
    }

    pub fn error_model(&self) -> ErrorModel {
        ErrorModel {
            char_error_rate: self.recognizer.char_error_rate,
            boundary_artifact: self.recognizer.boundary_artifact,
            seed: self.seed,
        }
    }

    pub fn retry(&self) -> RetryPolicy {
        RetryPolicy {
            max_attempts: self.recognizer.max_attempts,
            base_backoff: Duration::from_millis(self.recognizer.backoff_ms),
        }
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(invalid(format!("{} does not exist", path.display())))
    }
}

/// How blocks are put in reading order.
pub enum Orderer {
    Model(Box<RelationModelParams>),
    Gt,
    Geometric,
}

fn geometric_order(blocks: &[Block]) -> ReadingOrder {
    let mut idx: Vec<usize> = (0..blocks.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (&blocks[a].bbox, &blocks[b].bbox);
        p.y1().total_cmp(&q.y1()).then(p.x1().total_cmp(&q.x1())).then(a.cmp(&b))
    });
    ReadingOrder::from_sequence(&idx).expect("sorted indices form a permutation")
}

/// Transfer the ground-truth order to predicted blocks: each block takes
/// the rank of the GT block it matches; unmatched blocks go last. Ties
/// fall back to position.
fn gt_transfer_order(blocks: &[Block], gt: &CorpusRecord) -> ReadingOrder {
    let matches = match_blocks(blocks, &gt.page.blocks);
    let ranks = gt.gt_order.ranks();
    let key = |i: usize| matches[i].map_or(usize::MAX, |j| ranks[j]);
    let mut idx: Vec<usize> = (0..blocks.len()).collect();
    idx.sort_by(|&a, &b| {
        let (p, q) = (&blocks[a].bbox, &blocks[b].bbox);
        key(a)
            .cmp(&key(b))
            .then(p.y1().total_cmp(&q.y1()))
            .then(p.x1().total_cmp(&q.x1()))
            .then(a.cmp(&b))
    });
    ReadingOrder::from_sequence(&idx).expect("sorted indices form a permutation")
}

impl Orderer {
    pub fn order(&self, blocks: &[Block], record: &CorpusRecord, warnings: &mut Vec<String>) -> Result<ReadingOrder> {
        match self {
            Orderer::Model(params) => {
                if blocks.len() > params.config.max_elements {
                    warnings.push(format!(
                        "{} blocks exceed the model's {} rank columns; geometric order used",
                        blocks.len(),
                        params.config.max_elements
                    ));
                    return Ok(geometric_order(blocks));
                }
                predict_order(blocks, record.page.width, record.page.height, params)
            }
            Orderer::Gt => {
                if !has_gt_order(record) {
                    return Err(Error::MissingGroundTruth {
                        page_id: record.page.id.clone(),
                    });
                }
                Ok(gt_transfer_order(blocks, record))
            }
            Orderer::Geometric => Ok(geometric_order(blocks)),
        }
    }
}

/// The assembled stages.
pub struct Pipeline {
    pub detector: Box<dyn Detector>,
    pub noise: Option<NoiseConfig>,
    pub recognizer: Box<dyn Recognizer>,
    pub orderer: Orderer,
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Pipeline {
    /// Validate `config` and load everything it references.
    pub fn from_config(config: &PipelineConfig) -> Result<Self> {
        config.validate()?;
        let detector: Box<dyn Detector> = match config.detector.kind {
            DetectorKind::Oracle => Box::new(OracleDetector),
            DetectorKind::Xycut => Box::new(XyCutDetector {
                gap_threshold: config.detector.gap_threshold,
            }),
            DetectorKind::External => Box::new(ExternalDetector::from_jsonl(config.detector.path.as_ref().expect("validated"))?),
        };
        let r = &config.recognizer;
        let recognizer: Box<dyn Recognizer> = match r.kind {
            RecognizerKind::Mock => Box::new(MockRecognizer::new(
                config.error_model(),
                LatencyModel {
                    per_request: Duration::from_millis(r.per_request_ms),
                    per_token: Duration::from_millis(r.per_token_ms),
                },
            )?),
            RecognizerKind::Remote => Box::new(RemoteRecognizer::new(
                RemoteConfig {
                    api_base: r.api_base.clone(),
                    model: r.model.clone(),
                    api_key: None,
                    timeout_secs: r.timeout_secs,
                }
                .with_env(),
            )?),
        };
        let orderer = match config.order.kind {
            OrderKind::Model => {
                let (params, _) = RelationModelParams::load(config.order.model.as_ref().expect("validated"))?;
                Orderer::Model(Box::new(params))
            }
            OrderKind::Gt => Orderer::Gt,
            OrderKind::Geometric => Orderer::Geometric,
        };
        Ok(Self {
            detector,
            noise: config.perturb.enabled.then(|| config.noise()),
            recognizer,
            orderer,
            parallelism: config.parallelism,
            retry: config.retry(),
        })
    }

    /// Detections for one page after cleanup and optional perturbation.
    pub fn detect(&self, page: &Page) -> Result<Vec<Detection>> {
        let dets = clean_detections(self.detector.detect(page)?, page);
        match &self.noise {
            Some(noise) => perturb_detections(&dets, noise, page),
            None => Ok(dets),
        }
    }

    pub fn parse_page(&self, record: &CorpusRecord) -> Result<PageOutcome> {
        let page = &record.page;
        let dets = self.detect(page)?;
        let results = recognize_page_blocks(page, &dets, self.recognizer.as_ref(), self.parallelism, &self.retry)?;
        let blocks: Vec<Block> = dets
            .iter()
            .enumerate()
            .map(|(i, d)| Block::new(format!("d{i}"), d.bbox, d.category))
            .collect();
        let mut warnings: Vec<String> = results
            .iter()
            .filter_map(|r| r.error.as_ref().map(|e| format!("block {}: {e}", r.block_id)))
            .collect();
        let order = self.orderer.order(&blocks, record, &mut warnings)?;
        let contents: Vec<String> = results.into_iter().map(|r| r.content).collect();
        let document = assemble_document(&page.id, &blocks, &contents, &order)?;
        Ok(PageOutcome { document, warnings })
    }

    /// Parse every page; a failing page is recorded and does not stop the run.
    /// Pages with annotated contents and a full `gt_order` are scored; an
    /// empty `gt_order` on a page with blocks marks the order as unknown.
    pub fn run(&self, records: &[CorpusRecord]) -> ParseRun {
        let mut pages = Vec::with_capacity(records.len());
        let mut metrics = Vec::new();
        for record in records {
            match self.parse_page(record) {
                Ok(out) => {
                    if has_ground_truth(&record.page) && has_gt_order(record) {
                        metrics.push(end_to_end_report(&out.document, record));
                    }
                    pages.push(PageResult {
                        page_id: record.page.id.clone(),
                        outcome: Ok(out),
                    });
                }
                Err(e) => {
                    log::warn!("page {} failed: {e}", record.page.id);
                    pages.push(PageResult {
                        page_id: record.page.id.clone(),
                        outcome: Err(e.to_string()),
                    });
                }
            }
        }
        let report = (!metrics.is_empty()).then(|| MetricReport::from_pages(metrics));
        ParseRun { pages, report }
    }
}

/// Whether the page carries annotated block contents to score against.
pub fn has_ground_truth(page: &Page) -> bool {
    page.blocks.iter().any(|b| b.content.is_some())
}

pub fn has_gt_order(record: &CorpusRecord) -> bool {
    record.gt_order.len() == record.page.blocks.len()
}

/// Wrap a page whose reading order is unknown.
pub fn unordered_record(page: Page) -> CorpusRecord {
    CorpusRecord {
        page,
        gt_order: ReadingOrder::identity(0),
        links: Vec::new(),
        template: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageOutcome {
    pub document: ParsedDocument,
    /// Failed blocks and ordering fallbacks.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageResult {
    pub page_id: String,
    pub outcome: std::result::Result<PageOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseRun {
    pub pages: Vec<PageResult>,
    pub report: Option<MetricReport>,
}

impl ParseRun {
    pub fn failed(&self) -> usize {
        self.pages.iter().filter(|p| p.outcome.is_err()).count()
    }

    pub fn all_failed(&self) -> bool {
        !self.pages.is_empty() && self.failed() == self.pages.len()
    }

    pub fn metrics(&self) -> Option<&[PageMetrics]> {
        self.report.as_ref().map(|r| r.pages.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestPage {
    pub id: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub markdown: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub blocks: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: PipelineConfig,
    pub pages: Vec<ManifestPage>,
}

/// File name for a page id, keeping only portable characters.
pub fn page_file_stem(id: &str) -> String {
    let stem: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if stem.is_empty() || stem.chars().all(|c| c == '.') {
        format!("page_{}", hex::encode(id.as_bytes()))
    } else {
        stem
    }
}

/// Write markdown under `out/pages`, `predictions.jsonl`, `manifest.json`,
/// and `report.json` / `report.csv` when a report exists. Returns the
/// manifest.
pub fn write_run(run: &ParseRun, config: &PipelineConfig, out: &Path) -> Result<Manifest> {
    let pages_dir = out.join("pages");
    fs::create_dir_all(&pages_dir)?;
    let mut entries = Vec::with_capacity(run.pages.len());
    let mut predictions = String::new();
    let mut used = std::collections::HashSet::new();
    for p in &run.pages {
        match &p.outcome {
            Ok(o) => {
                let mut stem = page_file_stem(&p.page_id);
                let mut k = 1;
                while !used.insert(stem.clone()) {
                    stem = format!("{}_{k}", page_file_stem(&p.page_id));
                    k += 1;
                }
                let rel = format!("pages/{stem}.md");
                fs::write(out.join(&rel), &o.document.markdown)?;
                predictions.push_str(&serde_json::to_string(&o.document)?);
                predictions.push('\n');
                entries.push(ManifestPage {
                    id: p.page_id.clone(),
                    status: "ok".into(),
                    sha256: Some(hex::encode(Sha256::digest(o.document.markdown.as_bytes()))),
                    markdown: Some(rel),
                    blocks: Some(o.document.blocks.len()),
                    warnings: o.warnings.clone(),
                    error: None,
                });
            }
            Err(e) => entries.push(ManifestPage {
                id: p.page_id.clone(),
                status: "failed".into(),
                markdown: None,
                sha256: None,
                blocks: None,
                warnings: Vec::new(),
                error: Some(e.clone()),
            }),
        }
    }
    fs::write(out.join("predictions.jsonl"), predictions)?;
    if let Some(report) = &run.report {
        fs::write(out.join("report.json"), serde_json::to_string_pretty(report)?)?;
        fs::write(out.join("report.csv"), report.to_csv())?;
    }
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_hash: config.hash(),
        config: config.clone(),
        pages: entries,
    };
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(out.join("manifest.json"), json)?;
    Ok(manifest)
}

/// Build the pipeline from `config`, parse `records` and write all
/// artifacts to `config.out`.
pub fn run_parse(config: &PipelineConfig, records: &[CorpusRecord]) -> Result<(ParseRun, Manifest)> {
    let pipeline = Pipeline::from_config(config)?;
    let run = pipeline.run(records);
    let manifest = write_run(&run, config, &config.out)?;
    if run.all_failed() {
        let first = run.pages.iter().find_map(|p| p.outcome.as_ref().err()).cloned().unwrap_or_default();
        return Err(Error::Stage {
            stage: "pipeline",
            page_id: run.pages[0].page_id.clone(),
            message: format!("all {} pages failed; first error: {first}", run.pages.len()),
        });
    }
    Ok((run, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, LayoutTemplate};

    fn identity_config(out: &Path) -> PipelineConfig {
        PipelineConfig {
            out: out.to_path_buf(),
            order: OrderConfig { kind: OrderKind::Gt, model: None },
            ..Default::default()
        }
    }

    #[test]
    fn identity_run_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let recs = synthesize_corpus(&LayoutTemplate::ALL, 10, 3);
        let (run, manifest) = run_parse(&identity_config(dir.path()), &recs).unwrap();
        assert_eq!(run.failed(), 0);
        assert_eq!(manifest.pages.len(), 10);
        let report = run.report.unwrap();
        assert_eq!(report.overall_edit, Some(0.0));
        assert_eq!(report.order_edit, Some(0.0));
        assert_eq!(fs::read_dir(dir.path().join("pages")).unwrap().count(), 10);
        assert!(dir.path().join("report.csv").is_file());
    }

    #[test]
    fn missing_model_fails_at_startup() {
        let mut cfg = identity_config(Path::new("/nonexistent/out"));
        cfg.order = OrderConfig { kind: OrderKind::Model, model: Some("/nonexistent/model.bin".into()) };
        assert!(matches!(Pipeline::from_config(&cfg), Err(Error::InvalidInput(_))));
        cfg.order.model = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn failures_are_recorded_per_page() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = synthesize_corpus(&[LayoutTemplate::SingleColumn], 2, 1);
        for b in &mut recs[1].page.blocks {
            b.content = None;
        }
        let (run, manifest) = run_parse(&identity_config(dir.path()), &recs).unwrap();
        assert_eq!(run.failed(), 1);
        assert_eq!(manifest.pages[1].status, "failed");
        recs.remove(0);
        assert!(run_parse(&identity_config(dir.path()), &recs).is_err());
    }

    #[test]
    fn gt_transfer_puts_unmatched_last() {
        let r = &synthesize_corpus(&[LayoutTemplate::DoubleColumn], 1, 4)[0];
        let mut blocks = r.page.blocks.clone();
        blocks.push(Block::new("x", crate::document::BBox::new(0.0, 0.0, 5.0, 5.0).unwrap(), crate::document::Category::Text));
        let order = gt_transfer_order(&blocks, r);
        assert_eq!(order.ranks()[blocks.len() - 1], blocks.len() - 1);
        assert_eq!(&order.ranks()[..blocks.len() - 1], r.gt_order.ranks());
    }

    #[test]
    fn file_stems() {
        assert_eq!(page_file_stem("a/b c"), "a_b_c");
        assert_eq!(page_file_stem("p-1.x"), "p-1.x");
        assert!(page_file_stem("..").starts_with("page_"));
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = PipelineConfig::default();
        let b = PipelineConfig { seed: 1, ..Default::default() };
        assert_eq!(a.hash(), PipelineConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
