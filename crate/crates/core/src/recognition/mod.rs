//! Block-level recognition: per-category prompts, the recognizer contract,
//! a deterministic mock, an HTTP client and the parallel block scheduler.

mod mock;
mod remote;
mod scheduler;

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::document::{Category, Region};
use crate::error::{invalid, Result};

pub use mock::{ErrorModel, LatencyModel, MockRecognizer};
pub use remote::{RemoteConfig, RemoteRecognizer};
pub use scheduler::{build_requests, recognize_page_blocks, recognize_requests, RecognitionResult, RetryPolicy};

const DEFAULT_PROMPTS: &str = include_str!("prompts.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub category: Category,
    pub prompt_text: String,
}

/// One prompt per category, loaded from a JSON object keyed by category name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    prompts: HashMap<Category, String>,
}

impl PromptSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let prompts: HashMap<Category, String> = serde_json::from_str(text)?;
        for cat in Category::ALL {
            match prompts.get(&cat) {
                Some(p) if !p.trim().is_empty() => {}
                Some(_) => return Err(invalid(format!("empty prompt for {}", cat.as_str()))),
                None => return Err(invalid(format!("no prompt for {}", cat.as_str()))),
            }
        }
        Ok(Self { prompts })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn template(&self, cat: Category) -> PromptTemplate {
        PromptTemplate {
            category: cat,
            prompt_text: self.prompts[&cat].clone(),
        }
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        default_prompts().clone()
    }
}

fn default_prompts() -> &'static PromptSet {
    static SET: OnceLock<PromptSet> = OnceLock::new();
    SET.get_or_init(|| PromptSet::from_json(DEFAULT_PROMPTS).expect("bundled prompts are complete"))
}

/// The bundled prompt for `cat`.
pub fn prompt_for_category(cat: Category) -> PromptTemplate {
    default_prompts().template(cat)
}

/// One block sent to a recognizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionRequest {
    pub page_id: String,
    pub block_id: String,
    pub category: Category,
    pub region: Region,
    pub prompt: String,
    /// The region came from a perturbed detection.
    pub perturbed: bool,
    /// PNG encoding of the cropped raster, when the page has one.
    pub image_png: Option<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecognizeError {
    #[error("retryable: {0}")]
    Retryable(String),
    #[error("fatal: {0}")]
    Fatal(String),
}

impl RecognizeError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RecognizeError::Retryable(_))
    }
}

/// A recognition backend.
pub trait Recognizer: Send + Sync {
    fn recognize(&self, req: &RecognitionRequest) -> std::result::Result<String, RecognizeError>;

    /// Whether concurrent calls must be serialized by the scheduler.
    fn is_serial(&self) -> bool {
        false
    }

    /// Whether requests should carry PNG crops.
    fn wants_image(&self) -> bool {
        false
    }
}

impl<R: Recognizer + ?Sized> Recognizer for &R {
    fn recognize(&self, req: &RecognitionRequest) -> std::result::Result<String, RecognizeError> {
        (**self).recognize(req)
    }
    fn is_serial(&self) -> bool {
        (**self).is_serial()
    }
    fn wants_image(&self) -> bool {
        (**self).wants_image()
    }
}
