use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{RecognitionRequest, RecognizeError, Recognizer};
use crate::error::{invalid, Result};

/// Superscript-like debris a line-level detector leaves at block edges.
const ARTIFACTS: [&str; 5] = ["^{1}", "^{2}", "^{*}", "^{a}", "^{\\dagger}"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    /// Probability that each character is replaced by a different one.
    pub char_error_rate: f64,
    /// Add spurious superscript tokens to regions cut from perturbed detections.
    pub boundary_artifact: bool,
    pub seed: u64,
}

impl ErrorModel {
    pub const NONE: ErrorModel = ErrorModel {
        char_error_rate: 0.0,
        boundary_artifact: false,
        seed: 0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.char_error_rate) {
            return Err(invalid(format!("char_error_rate {} outside [0, 1]", self.char_error_rate)));
        }
        Ok(())
    }
}

impl Default for ErrorModel {
    fn default() -> Self {
        Self::NONE
    }
}

/// Simulated service time: a fixed cost per request plus a cost per output token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LatencyModel {
    pub per_request: Duration,
    pub per_token: Duration,
}

impl LatencyModel {
    pub fn cost(&self, text: &str) -> Duration {
        self.per_request + self.per_token * token_count(text)
    }
}

/// Output tokens billed for `text`: one per four characters, rounded up.
pub fn token_count(text: &str) -> u32 {
    text.chars().count().div_ceil(4) as u32
}

/// Transcribes the ground-truth text of the requested region, optionally
/// corrupted by an [`ErrorModel`] and delayed by a [`LatencyModel`].
#[derive(Debug, Clone, Copy, Default)]
pub struct MockRecognizer {
    pub errors: ErrorModel,
    pub latency: LatencyModel,
}

impl MockRecognizer {
    pub fn new(errors: ErrorModel, latency: LatencyModel) -> Result<Self> {
        errors.validate()?;
        Ok(Self { errors, latency })
    }

    /// The text this recognizer returns for `req`, without waiting.
    pub fn transcribe(&self, req: &RecognitionRequest) -> std::result::Result<String, RecognizeError> {
        let gt = req
            .region
            .content
            .as_deref()
            .ok_or_else(|| RecognizeError::Fatal(format!("page {} has no ground truth to transcribe", req.page_id)))?;
        let seed = crate::stable_hash(&[req.page_id.as_bytes(), req.block_id.as_bytes()]) ^ self.errors.seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: String = if self.errors.char_error_rate > 0.0 {
            gt.chars()
                .map(|c| {
                    if rng.random_bool(self.errors.char_error_rate) {
                        substitute(c, &mut rng)
                    } else {
                        c
                    }
                })
                .collect()
        } else {
            gt.to_string()
        };
        if self.errors.boundary_artifact && req.perturbed {
            let lead = ARTIFACTS[rng.random_range(0..ARTIFACTS.len())];
            out.insert_str(0, lead);
            if rng.random_bool(0.5) {
                out.push_str(ARTIFACTS[rng.random_range(0..ARTIFACTS.len())]);
            }
        }
        Ok(out)
    }
}

impl Recognizer for MockRecognizer {
    fn recognize(&self, req: &RecognitionRequest) -> std::result::Result<String, RecognizeError> {
        let out = self.transcribe(req)?;
        let wait = self.latency.cost(req.region.content.as_deref().unwrap_or(""));
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        Ok(out)
    }
}

/// A character of the same script as `c` but different from it.
fn substitute(c: char, rng: &mut ChaCha8Rng) -> char {
    let (lo, hi) = if ('\u{4e00}'..='\u{9fa5}').contains(&c) {
        (0x4e00u32, 0x9fa5u32)
    } else if c.is_ascii_digit() {
        ('0' as u32, '9' as u32)
    } else {
        ('a' as u32, 'z' as u32)
    };
    loop {
        let v = char::from_u32(rng.random_range(lo..=hi)).expect("range holds valid scalars");
        if v != c {
            return v;
        }
    }
}
