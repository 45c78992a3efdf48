//! Synthetic ground-truth corpus: generation, annotation hygiene and JSONL
//! persistence.
//!
//! One JSON object per line per page:
//!
//! ```text
//! {"page":{"id":"p","w":1000,"h":1400},
//!  "blocks":[{"id":"b0","bbox":[x1,y1,x2,y2],"category":"text","content":"..."}],
//!  "lines":[{"bbox":[...],"order":0,"text":"..."}],
//!  "gt_order":["b3","b0",...],
//!  "links":[{"caption":"b2","target":"b1"}],
//!  "template":"doublecolumn"}
//! ```
//!
//! `gt_order` lists block ids in reading order. Blocks may carry an optional
//! `score`, which external detectors use to report confidences.

mod formula;
mod hygiene;
mod synth;
mod table;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::document::{BBox, Block, Category, Page, ReadingOrder, TextLine};
use crate::error::{invalid, Error, Result};

pub use formula::synthesize_formula;
pub use hygiene::{
    coverage_filter, link_captions, nested_box_mask, page_coverage, remove_nested_boxes, union_area,
    CaptionLink, DEFAULT_COVERAGE_THRESHOLD, NESTED_IOA,
};
pub use synth::{synthesize_corpus, synthesize_page, LayoutTemplate, PAGE_HEIGHT, PAGE_WIDTH};
pub use table::{render_table_html, validate_table_html, CellGrid, FillAlphabet, Merge, TableCell};

/// A page with its ground-truth reading order and caption links.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub page: Page,
    pub gt_order: ReadingOrder,
    /// `(caption index, target index)` pairs over `page.blocks`.
    pub links: Vec<(usize, Option<usize>)>,
    pub template: Option<LayoutTemplate>,
}

impl CorpusRecord {
    /// Blocks in ground-truth reading order.
    pub fn ordered_blocks(&self) -> Vec<&Block> {
        self.gt_order
            .sequence()
            .into_iter()
            .map(|i| &self.page.blocks[i])
            .collect()
    }

    /// The first `k` blocks in reading order, with their lines, links and
    /// order carried over. `None` when the page has fewer than `k` blocks.
    pub fn truncated(&self, k: usize) -> Option<CorpusRecord> {
        if self.page.blocks.len() < k {
            return None;
        }
        let keep: Vec<usize> = self.gt_order.sequence().into_iter().take(k).collect();
        let mut new_index = vec![None; self.page.blocks.len()];
        for (new, &old) in keep.iter().enumerate() {
            new_index[old] = Some(new);
        }
        let mut page = self.page.clone();
        page.blocks = keep.iter().map(|&i| self.page.blocks[i].clone()).collect();
        page.lines.retain(|l| {
            let (cx, cy) = l.bbox.center();
            page.blocks.iter().any(|b| b.bbox.contains_point(cx, cy))
        });
        let links = self
            .links
            .iter()
            .filter_map(|&(c, t)| {
                let c = new_index[c]?;
                Some((c, t.and_then(|t| new_index[t])))
            })
            .collect();
        Some(CorpusRecord {
            page,
            gt_order: ReadingOrder::identity(k),
            links,
            template: self.template,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageHeaderJson {
    pub id: String,
    pub w: f64,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockJson {
    pub id: String,
    pub bbox: BBox,
    pub category: Category,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkJson {
    pub caption: String,
    pub target: Option<String>,
}

/// Wire form of one JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordJson {
    pub page: PageHeaderJson,
    #[serde(default)]
    pub blocks: Vec<BlockJson>,
    #[serde(default)]
    pub lines: Vec<TextLine>,
    #[serde(default)]
    pub gt_order: Vec<String>,
    #[serde(default)]
    pub links: Vec<LinkJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<LayoutTemplate>,
}

impl RecordJson {
    pub fn from_record(r: &CorpusRecord) -> Self {
        let ids: Vec<&str> = r.page.blocks.iter().map(|b| b.id.as_str()).collect();
        Self {
            page: PageHeaderJson {
                id: r.page.id.clone(),
                w: r.page.width,
                h: r.page.height,
                image: r.page.image.clone(),
            },
            blocks: r
                .page
                .blocks
                .iter()
                .map(|b| BlockJson {
                    id: b.id.clone(),
                    bbox: b.bbox,
                    category: b.category,
                    content: b.content.clone(),
                    score: None,
                })
                .collect(),
            lines: r.page.lines.clone(),
            gt_order: r.gt_order.sequence().into_iter().map(|i| ids[i].to_string()).collect(),
            links: r
                .links
                .iter()
                .map(|&(c, t)| LinkJson {
                    caption: ids[c].to_string(),
                    target: t.map(|t| ids[t].to_string()),
                })
                .collect(),
            template: r.template,
        }
    }

    pub fn to_page(&self) -> Page {
        Page {
            id: self.page.id.clone(),
            width: self.page.w,
            height: self.page.h,
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    id: b.id.clone(),
                    bbox: b.bbox,
                    category: b.category,
                    content: b.content.clone(),
                })
                .collect(),
            lines: self.lines.clone(),
            image: self.page.image.clone(),
        }
    }

    /// `None` when the line carries no reading order.
    pub fn reading_order(&self) -> Result<Option<ReadingOrder>> {
        if self.gt_order.is_empty() && !self.blocks.is_empty() {
            return Ok(None);
        }
        let index = self.id_index()?;
        let seq = self
            .gt_order
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| invalid(format!("gt_order names unknown block {id}"))))
            .collect::<Result<Vec<_>>>()?;
        ReadingOrder::from_sequence(&seq).map(Some)
    }

    fn id_index(&self) -> Result<HashMap<&str, usize>> {
        let mut index = HashMap::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if index.insert(b.id.as_str(), i).is_some() {
                return Err(invalid(format!("duplicate block id {}", b.id)));
            }
        }
        Ok(index)
    }

    pub fn into_record(self) -> Result<CorpusRecord> {
        let page = self.to_page();
        page.validate()?;
        let gt_order = self
            .reading_order()?
            .ok_or_else(|| invalid(format!("page {} has no gt_order", page.id)))?;
        let index = self.id_index()?;
        let lookup = |id: &str| {
            index
                .get(id)
                .copied()
                .ok_or_else(|| invalid(format!("link names unknown block {id}")))
        };
        let links = self
            .links
            .iter()
            .map(|l| Ok((lookup(&l.caption)?, l.target.as_deref().map(lookup).transpose()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(CorpusRecord {
            page,
            gt_order,
            links,
            template: self.template,
        })
    }
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, &RecordJson::from_record(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read raw lines without requiring ground truth.
pub fn load_raw_jsonl(path: impl AsRef<Path>) -> Result<Vec<RecordJson>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordJson = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<CorpusRecord>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let to_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: RecordJson = serde_json::from_str(&line).map_err(|e| to_err(e.to_string()))?;
        out.push(rec.into_record().map_err(|e| to_err(e.to_string()))?);
    }
    Ok(out)
}

/// Resolve a corpus argument that may name a directory holding `corpus.jsonl`.
pub fn corpus_file(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    if path.is_dir() {
        path.join("corpus.jsonl")
    } else {
        path.to_path_buf()
    }
}
