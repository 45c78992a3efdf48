use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{PromptSet, RecognitionRequest, Recognizer};
use crate::document::{crop_raster, crop_region, Page};
use crate::error::{invalid, Error, Result};
use crate::structure::Detection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Wait before the second attempt; doubles for each further attempt.
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_backoff: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, failed_attempts: u32) -> Duration {
        self.base_backoff * 2u32.saturating_pow(failed_attempts.saturating_sub(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognitionResult {
    pub block_id: String,
    /// Empty when recognition failed.
    pub content: String,
    /// Seconds spent across all attempts, backoff included.
    pub latency: f64,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RecognitionResult {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// One request per detection, with block ids `d0, d1, ...` in detection order.
pub fn build_requests(page: &Page, detections: &[Detection], prompts: &PromptSet, with_images: bool) -> Result<Vec<RecognitionRequest>> {
    let raster = match (&page.image, with_images) {
        (Some(path), true) => Some(image::open(path).map_err(|e| Error::Stage {
            stage: "recognition",
            page_id: page.id.clone(),
            message: format!("cannot read {}: {e}", path.display()),
        })?),
        _ => None,
    };
    detections
        .iter()
        .enumerate()
        .map(|(i, det)| {
            let region = crop_region(page, &det.bbox)?;
            let image_png = match &raster {
                Some(img) => {
                    let crop = crop_raster(img, &region.bbox, page.width, page.height);
                    let mut buf = Cursor::new(Vec::new());
                    crop.write_to(&mut buf, image::ImageFormat::Png)
                        .map_err(|e| invalid(format!("png encoding failed: {e}")))?;
                    Some(buf.into_inner())
                }
                None => None,
            };
            Ok(RecognitionRequest {
                page_id: page.id.clone(),
                block_id: format!("d{i}"),
                category: det.category,
                prompt: prompts.template(det.category).prompt_text,
                region,
                perturbed: det.perturbed,
                image_png,
            })
        })
        .collect()
}

/// Recognize every detection of `page`. Results come back in detection order.
pub fn recognize_page_blocks<R: Recognizer + ?Sized>(
    page: &Page,
    detections: &[Detection],
    recognizer: &R,
    parallelism: usize,
    retry: &RetryPolicy,
) -> Result<Vec<RecognitionResult>> {
    let requests = build_requests(page, detections, &PromptSet::default(), recognizer.wants_image())?;
    recognize_requests(&requests, recognizer, parallelism, retry)
}

/// Run `requests` with at most `parallelism` in flight, dispatched in order.
/// A request that still fails after the retry budget yields a failed result.
pub fn recognize_requests<R: Recognizer + ?Sized>(
    requests: &[RecognitionRequest],
    recognizer: &R,
    parallelism: usize,
    retry: &RetryPolicy,
) -> Result<Vec<RecognitionResult>> {
    if parallelism == 0 {
        return Err(invalid("parallelism must be at least 1"));
    }
    if retry.max_attempts == 0 {
        return Err(invalid("retry policy needs at least one attempt"));
    }
    let workers = if recognizer.is_serial() { 1 } else { parallelism.min(requests.len()) };
    if workers <= 1 {
        return Ok(requests.iter().map(|r| run_one(r, recognizer, retry)).collect());
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RecognitionResult>>> = Mutex::new(vec![None; requests.len()]);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(req) = requests.get(i) else { break };
                let res = run_one(req, recognizer, retry);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(res);
            });
        }
    });
    Ok(slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect())
}

fn run_one<R: Recognizer + ?Sized>(req: &RecognitionRequest, recognizer: &R, retry: &RetryPolicy) -> RecognitionResult {
    let start = Instant::now();
    let mut attempts = 0;
    let outcome = loop {
        attempts += 1;
        match recognizer.recognize(req) {
            Ok(content) => break Ok(content),
            Err(e) if e.is_retryable() && attempts < retry.max_attempts => {
                log::debug!("block {} of page {}: {e}; retrying", req.block_id, req.page_id);
                std::thread::sleep(retry.backoff(attempts));
            }
            Err(e) => break Err(e),
        }
    };
    let latency = start.elapsed().as_secs_f64();
    match outcome {
        Ok(content) => RecognitionResult {
            block_id: req.block_id.clone(),
            content,
            latency,
            attempts,
            error: None,
        },
        Err(e) => {
            log::warn!("block {} of page {} failed after {attempts} attempts: {e}", req.block_id, req.page_id);
            RecognitionResult {
                block_id: req.block_id.clone(),
                content: String::new(),
                latency,
                attempts,
                error: Some(e.to_string()),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_page, LayoutTemplate};
    use crate::recognition::{LatencyModel, MockRecognizer, RecognizeError};
    use crate::structure::oracle_detect;
    use std::collections::HashMap;

    const FAST: RetryPolicy = RetryPolicy {
        max_attempts: 3,
        base_backoff: Duration::from_millis(1),
    };

    /// Fails a fixed number of times per block before succeeding.
    struct Flaky {
        failures: u32,
        retryable: bool,
        seen: Mutex<HashMap<String, u32>>,
    }

    impl Recognizer for Flaky {
        fn recognize(&self, req: &RecognitionRequest) -> std::result::Result<String, RecognizeError> {
            let mut seen = self.seen.lock().unwrap();
            let n = seen.entry(req.block_id.clone()).or_default();
            *n += 1;
            if *n <= self.failures {
                return Err(if self.retryable {
                    RecognizeError::Retryable("busy".into())
                } else {
                    RecognizeError::Fatal("bad".into())
                });
            }
            Ok(format!("ok {}", req.block_id))
        }
    }

    fn flaky(failures: u32, retryable: bool) -> Flaky {
        Flaky {
            failures,
            retryable,
            seen: Mutex::new(HashMap::new()),
        }
    }

    #[test]
    fn no_detections_no_results() {
        let r = synthesize_page(LayoutTemplate::SingleColumn, 0);
        let out = recognize_page_blocks(&r.page, &[], &MockRecognizer::default(), 4, &FAST).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn serial_and_parallel_agree() {
        let r = synthesize_page(LayoutTemplate::Newspaper3Col, 3);
        let dets = oracle_detect(&r.page).unwrap();
        let m = MockRecognizer::new(
            crate::recognition::ErrorModel { char_error_rate: 0.1, boundary_artifact: false, seed: 2 },
            LatencyModel::default(),
        )
        .unwrap();
        let strip = |v: Vec<RecognitionResult>| v.into_iter().map(|r| (r.block_id, r.content)).collect::<Vec<_>>();
        let a = strip(recognize_page_blocks(&r.page, &dets, &m, 1, &FAST).unwrap());
        let b = strip(recognize_page_blocks(&r.page, &dets, &m, 4, &FAST).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.len(), dets.len());
    }

    #[test]
    fn two_failures_then_success_takes_three_attempts() {
        let r = synthesize_page(LayoutTemplate::SingleColumn, 0);
        let dets = oracle_detect(&r.page).unwrap();
        let out = recognize_page_blocks(&r.page, &dets[..2], &flaky(2, true), 2, &FAST).unwrap();
        for (i, res) in out.iter().enumerate() {
            assert_eq!(res.attempts, 3);
            assert_eq!(res.content, format!("ok d{i}"));
            assert!(res.is_ok());
        }
    }

    #[test]
    fn exhausted_retries_record_failure() {
        let r = synthesize_page(LayoutTemplate::SingleColumn, 0);
        let dets = oracle_detect(&r.page).unwrap();
        let out = recognize_page_blocks(&r.page, &dets[..1], &flaky(5, true), 1, &FAST).unwrap();
        assert_eq!(out[0].attempts, 3);
        assert!(!out[0].is_ok());
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let r = synthesize_page(LayoutTemplate::SingleColumn, 0);
        let dets = oracle_detect(&r.page).unwrap();
        let out = recognize_page_blocks(&r.page, &dets[..1], &flaky(1, false), 1, &FAST).unwrap();
        assert_eq!(out[0].attempts, 1);
        assert!(out[0].error.as_deref().unwrap().contains("bad"));
    }

    #[test]
    fn parallel_dispatch_overlaps_latency() {
        let r = synthesize_page(LayoutTemplate::DoubleColumn, 1);
        let dets: Vec<_> = oracle_detect(&r.page).unwrap().into_iter().take(8).collect();
        assert_eq!(dets.len(), 8);
        let m = MockRecognizer {
            latency: LatencyModel {
                per_request: Duration::from_millis(50),
                per_token: Duration::ZERO,
            },
            ..Default::default()
        };
        let start = Instant::now();
        recognize_page_blocks(&r.page, &dets, &m, 4, &FAST).unwrap();
        let wall = start.elapsed();
        assert!(wall < Duration::from_millis(400), "{wall:?}");
        assert!(wall > Duration::from_millis(100), "{wall:?}");
    }

    #[test]
    fn zero_parallelism_is_rejected() {
        let r = synthesize_page(LayoutTemplate::SingleColumn, 0);
        assert!(recognize_page_blocks(&r.page, &[], &MockRecognizer::default(), 0, &FAST).is_err());
    }
}
