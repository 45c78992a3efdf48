use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::error::{invalid, Result};
use crate::recognition::{build_requests, recognize_requests, PromptSet, Recognizer, RetryPolicy};
use crate::structure::{oracle_detect, Detection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    /// One request per detected block, up to `parallelism` in flight.
    Srr,
    /// One request per page covering all of its content.
    FullPage,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Srr => "srr",
            BenchMode::FullPage => "fullpage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: BenchMode,
    pub parallelism: usize,
    pub pages: usize,
    pub requests: usize,
    pub seconds: f64,
    pub pages_per_s: f64,
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("mode,parallelism,pages_per_s\n");
    for r in rows {
        out.push_str(&format!("{},{},{:.4}\n", r.mode.as_str(), r.parallelism, r.pages_per_s));
    }
    out
}

/// Measure pages/s of block-parallel recognition at each parallelism, then
/// of sequential full-page recognition. Pages are processed one after
/// another; only blocks within a page run concurrently. Detections come
/// from the ground truth.
pub fn throughput_bench<R: Recognizer + ?Sized>(
    corpus: &[CorpusRecord],
    recognizer: &R,
    parallelism_list: &[usize],
) -> Result<Vec<BenchRow>> {
    if corpus.is_empty() {
        return Err(invalid("throughput bench needs at least one page"));
    }
    let prompts = PromptSet::default();
    let retry = RetryPolicy::default();
    let mut block_requests = Vec::with_capacity(corpus.len());
    let mut page_requests = Vec::with_capacity(corpus.len());
    for r in corpus {
        let dets = oracle_detect(&r.page)?;
        block_requests.push(build_requests(&r.page, &dets, &prompts, recognizer.wants_image())?);
        let whole = Detection::new(r.page.bounds(), crate::document::Category::Text, 1.0)?;
        page_requests.push(build_requests(&r.page, &[whole], &prompts, recognizer.wants_image())?);
    }

    let mut rows = Vec::new();
    let mut run = |mode: BenchMode, parallelism: usize, batches: &[Vec<crate::recognition::RecognitionRequest>]| -> Result<()> {
        let start = Instant::now();
        let mut requests = 0;
        for reqs in batches {
            requests += reqs.len();
            let results = recognize_requests(reqs, recognizer, parallelism, &retry)?;
            if let Some(failed) = results.iter().find(|r| !r.is_ok()) {
                return Err(invalid(format!("bench request failed: {:?}", failed.error)));
            }
        }
        let seconds = start.elapsed().as_secs_f64();
        rows.push(BenchRow {
            mode,
            parallelism,
            pages: batches.len(),
            requests,
            seconds,
            pages_per_s: batches.len() as f64 / seconds.max(f64::MIN_POSITIVE),
        });
        Ok(())
    };
    for &p in parallelism_list {
        run(BenchMode::Srr, p, &block_requests)?;
    }
    run(BenchMode::FullPage, 1, &page_requests)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_page, LayoutTemplate};
    use crate::recognition::{LatencyModel, MockRecognizer};
    use std::time::Duration;

    #[test]
    fn single_block_page_runs_at_one_over_latency() {
        let mut r = synthesize_page(LayoutTemplate::SingleColumn, 0);
        r.page.blocks.truncate(1);
        r.page.blocks[0].content = Some(String::new());
        let m = MockRecognizer {
            latency: LatencyModel { per_request: Duration::from_millis(40), per_token: Duration::ZERO },
            ..Default::default()
        };
        let rows = throughput_bench(&[r], &m, &[1]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].requests, 1);
        assert!((rows[0].pages_per_s - 25.0).abs() < 5.0, "{}", rows[0].pages_per_s);
        assert!(bench_csv(&rows).starts_with("mode,parallelism,pages_per_s\nsrr,1,"));
    }
}
