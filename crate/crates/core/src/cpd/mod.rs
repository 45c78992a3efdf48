//! Depth reduction for the relation transformer: single-layer skip sweeps,
//! layer pruning under several window strategies, recovery fine-tuning and
//! parameter accounting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::relation::{evaluate_order, finetune, layer_states, ModelMeta, RelationModelParams, TrainConfig, TrainingExample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneStrategy {
    ContiguousMiddle,
    Shallow,
    Deep,
    Importance,
}

impl PruneStrategy {
    pub const ALL: [PruneStrategy; 4] = [Self::ContiguousMiddle, Self::Shallow, Self::Deep, Self::Importance];

    pub fn name(self) -> &'static str {
        match self {
            Self::ContiguousMiddle => "middle",
            Self::Shallow => "shallow",
            Self::Deep => "deep",
            Self::Importance => "importance",
        }
    }
}

impl fmt::Display for PruneStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PruneStrategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "middle" | "contiguous_middle" | "contiguous-middle" => Ok(Self::ContiguousMiddle),
            "shallow" => Ok(Self::Shallow),
            "deep" => Ok(Self::Deep),
            "importance" => Ok(Self::Importance),
            other => Err(invalid(format!("unknown prune strategy `{other}`"))),
        }
    }
}

/// How many layers to keep and how to pick them. `Importance` scores
/// layers on `calibration`.
#[derive(Debug, Clone, Copy)]
pub struct PruneSpec<'a> {
    pub strategy: PruneStrategy,
    pub keep: usize,
    pub calibration: &'a [TrainingExample],
}

impl<'a> PruneSpec<'a> {
    pub fn new(strategy: PruneStrategy, keep: usize) -> Self {
        Self { strategy, keep, calibration: &[] }
    }

    pub fn with_calibration(mut self, calibration: &'a [TrainingExample]) -> Self {
        self.calibration = calibration;
        self
    }
}

/// Indices of the layers that survive pruning, ascending.
pub fn retained_layers(total: usize, strategy: PruneStrategy, keep: usize, importance: Option<&[f64]>) -> Result<Vec<usize>> {
    if keep == 0 || keep > total {
        return Err(invalid(format!("cannot keep {keep} of {total} layers")));
    }
    let drop = total - keep;
    let removed: Vec<usize> = match strategy {
        PruneStrategy::ContiguousMiddle => {
            // shifted to keep layer 0 and to stay inside the stack
            let start = if drop == 0 { 0 } else { (drop / 2).clamp(1, keep) };
            (start..start + drop).collect()
        }
        PruneStrategy::Shallow => (0..drop).collect(),
        PruneStrategy::Deep => (keep..total).collect(),
        PruneStrategy::Importance => {
            let scores = importance.ok_or_else(|| invalid("importance pruning needs layer scores"))?;
            if scores.len() != total {
                return Err(invalid(format!("{} importance scores for {total} layers", scores.len())));
            }
            let mut by_score: Vec<usize> = (0..total).collect();
            by_score.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            by_score.truncate(drop);
            by_score
        }
    };
    Ok((0..total).filter(|l| !removed.contains(l)).collect())
}

/// Remove layers per `spec` and reconnect the rest in their original order.
pub fn prune_layers(params: &RelationModelParams, spec: &PruneSpec<'_>) -> Result<RelationModelParams> {
    let total = params.layers.len();
    let scores = match spec.strategy {
        PruneStrategy::Importance => Some(layer_importance(params, spec.calibration)?),
        _ => None,
    };
    let keep = retained_layers(total, spec.strategy, spec.keep, scores.as_deref())?;
    let mut out = params.clone();
    out.layers = keep.iter().map(|&l| params.layers[l].clone()).collect();
    out.config.layers = keep.len();
    Ok(out)
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Per-layer mean over calibration elements of one minus the cosine
/// similarity between the hidden state entering and leaving the layer.
/// Scores lie in `[0, 2]`; higher means the layer changes more.
pub fn layer_importance(params: &RelationModelParams, calibration: &[TrainingExample]) -> Result<Vec<f64>> {
    if calibration.is_empty() {
        return Err(invalid("importance needs a non-empty calibration set"));
    }
    let layers = params.layers.len();
    let mut sum = vec![0.0; layers];
    let mut tokens = 0usize;
    for ex in calibration {
        let states = layer_states(&ex.boxes, &ex.cats, params)?;
        for (l, s) in sum.iter_mut().enumerate() {
            for (a, b) in states[l].rows().into_iter().zip(states[l + 1].rows()) {
                *s += 1.0 - cosine(a, b);
            }
        }
        tokens += ex.len();
    }
    let tokens = tokens.max(1) as f64;
    Ok(sum.into_iter().map(|s| s / tokens).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Exact-order accuracy with every layer active.
    pub baseline: f64,
    /// `baseline` minus the accuracy with layer `l` bypassed.
    pub deltas: Vec<f64>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,delta\n");
        for (l, d) in self.deltas.iter().enumerate() {
            s.push_str(&format!("{l},{d:.6}\n"));
        }
        s
    }

    /// Whether skipping layer 0 hurts at least as much as the median of
    /// the other layers.
    pub fn first_layer_dominates(&self) -> bool {
        let Some((&first, rest)) = self.deltas.split_first() else {
            return false;
        };
        if rest.is_empty() {
            return true;
        }
        let mut rest = rest.to_vec();
        rest.sort_by(f64::total_cmp);
        let m = rest.len();
        let median = if m % 2 == 1 { rest[m / 2] } else { 0.5 * (rest[m / 2 - 1] + rest[m / 2]) };
        first >= median
    }
}

/// Accuracy drop from bypassing each layer alone. Layers are evaluated on
/// separate threads against the same parameters.
pub fn skip_layer_sweep(params: &RelationModelParams, eval_set: &[TrainingExample]) -> Result<SweepReport> {
    let layers = params.layers.len();
    let baseline = evaluate_order(params, eval_set, &[])?.accuracy;
    let accs: Vec<Result<f64>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..layers)
            .map(|l| {
                scope.spawn(move || {
                    let mut skip = vec![false; layers];
                    skip[l] = true;
                    evaluate_order(params, eval_set, &skip).map(|s| s.accuracy)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let deltas = accs.into_iter().map(|a| a.map(|a| baseline - a)).collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { baseline, deltas })
}

/// Parameter count after keeping `keep_layers` of `total_layers` equally
/// sized layers, with `non_layer_params` outside the stack.
pub fn estimate_params(total_params: u64, total_layers: usize, keep_layers: usize, non_layer_params: u64) -> Result<u64> {
    if total_layers == 0 {
        return Err(invalid("total_layers must be positive"));
    }
    if keep_layers > total_layers {
        return Err(invalid(format!("cannot keep {keep_layers} of {total_layers} layers")));
    }
    if non_layer_params > total_params {
        return Err(invalid("non-layer parameters exceed the total"));
    }
    let per_stack = u128::from(total_params - non_layer_params);
    let kept = per_stack * keep_layers as u128 / total_layers as u128;
    Ok(non_layer_params + kept as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub strategy: PruneStrategy,
    pub retained: Vec<usize>,
    pub params: usize,
    pub pruned_accuracy: f64,
    pub finetuned_accuracy: f64,
}

/// Prune with every strategy to `keep` layers, fine-tune each for the same
/// `fraction` of the original budget, and score on `eval_set`. Importance
/// scores are computed on `train`.
pub fn compare_strategies(
    params: &RelationModelParams,
    meta: &ModelMeta,
    train: &[TrainingExample],
    eval_set: &[TrainingExample],
    keep: usize,
    fraction: f64,
    cfg: &TrainConfig,
) -> Result<Vec<StrategyRow>> {
    let scores = layer_importance(params, train)?;
    let mut rows = Vec::new();
    for strategy in PruneStrategy::ALL {
        let retained = retained_layers(params.layers.len(), strategy, keep, Some(&scores))?;
        let mut pruned = params.clone();
        pruned.layers = retained.iter().map(|&l| params.layers[l].clone()).collect();
        pruned.config.layers = retained.len();
        let pruned_accuracy = evaluate_order(&pruned, eval_set, &[])?.accuracy;
        let (tuned, _) = finetune(pruned, train, fraction, meta, cfg)?;
        rows.push(StrategyRow {
            strategy,
            retained,
            params: tuned.num_params(),
            pruned_accuracy,
            finetuned_accuracy: evaluate_order(&tuned, eval_set, &[])?.accuracy,
        });
    }
    Ok(rows)
}

pub fn strategy_csv(rows: &[StrategyRow]) -> String {
    let mut s = String::from("strategy,retained,params,pruned_accuracy,finetuned_accuracy\n");
    for r in rows {
        let kept: Vec<String> = r.retained.iter().map(usize::to_string).collect();
        s.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.strategy,
            kept.join(" "),
            r.params,
            r.pruned_accuracy,
            r.finetuned_accuracy
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_corpus, LayoutTemplate};
    use crate::relation::RelationModelConfig;

    fn model(layers: usize) -> RelationModelParams {
        let cfg = RelationModelConfig { coord_embed_dim: 4, layers, heads: 2, max_elements: 32, ..Default::default() };
        RelationModelParams::init(&cfg, 3).unwrap()
    }

    fn data(n: usize) -> Vec<TrainingExample> {
        synthesize_corpus(&LayoutTemplate::ALL, n, 5)
            .iter()
            .map(|r| TrainingExample::from_record(r).unwrap())
            .collect()
    }

    #[test]
    fn windows() {
        use PruneStrategy::*;
        assert_eq!(retained_layers(4, ContiguousMiddle, 2, None).unwrap(), vec![0, 3]);
        assert_eq!(retained_layers(4, Deep, 2, None).unwrap(), vec![0, 1]);
        assert_eq!(retained_layers(4, Shallow, 2, None).unwrap(), vec![2, 3]);
        assert_eq!(retained_layers(4, ContiguousMiddle, 4, None).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(retained_layers(2, ContiguousMiddle, 1, None).unwrap(), vec![0]);
        assert_eq!(retained_layers(36, ContiguousMiddle, 12, None).unwrap().len(), 12);
        assert_eq!(retained_layers(4, Importance, 2, Some(&[0.5, 0.1, 0.3, 0.1])).unwrap(), vec![0, 2]);
        assert!(retained_layers(4, Deep, 5, None).is_err());
        assert!(retained_layers(4, Deep, 0, None).is_err());
        assert!(retained_layers(4, Importance, 2, None).is_err());
    }

    #[test]
    fn middle_never_drops_first_layer() {
        for total in 1..20 {
            for keep in 1..=total {
                let kept = retained_layers(total, PruneStrategy::ContiguousMiddle, keep, None).unwrap();
                assert_eq!(kept.len(), keep);
                assert_eq!(kept[0], 0);
            }
        }
    }

    #[test]
    fn pruning_reconnects_layers() {
        let p = model(4);
        let q = prune_layers(&p, &PruneSpec::new(PruneStrategy::ContiguousMiddle, 2)).unwrap();
        assert_eq!(q.config.layers, 2);
        assert_eq!(q.layers, vec![p.layers[0].clone(), p.layers[3].clone()]);
        assert_eq!(prune_layers(&p, &PruneSpec::new(PruneStrategy::Deep, 4)).unwrap(), p);
        assert!(prune_layers(&p, &PruneSpec::new(PruneStrategy::Importance, 2)).is_err());
    }

    #[test]
    fn identity_layer_scores_zero() {
        let mut p = model(3);
        p.layers[1].make_identity();
        let ex = data(6);
        let imp = layer_importance(&p, &ex).unwrap();
        assert!(imp[1].abs() < 1e-12, "{imp:?}");
        assert!(imp.iter().all(|&s| (0.0..=2.0).contains(&s)));
        let kept = prune_layers(&p, &PruneSpec::new(PruneStrategy::Importance, 2).with_calibration(&ex)).unwrap();
        assert_eq!(kept.layers, vec![p.layers[0].clone(), p.layers[2].clone()]);

        let sweep = skip_layer_sweep(&p, &ex).unwrap();
        assert_eq!(sweep.deltas.len(), 3);
        assert_eq!(sweep.deltas[1], 0.0);
        assert!(sweep.to_csv().starts_with("layer,delta\n0,"));
        assert_eq!(skip_layer_sweep(&model(1), &ex).unwrap().deltas.len(), 1);
    }

    #[test]
    fn median_rule() {
        let r = |d: &[f64]| SweepReport { baseline: 1.0, deltas: d.to_vec() }.first_layer_dominates();
        assert!(r(&[0.3, 0.1, 0.5, 0.2]));
        assert!(!r(&[0.1, 0.1, 0.5, 0.2]));
        assert!(r(&[0.0]));
        assert!(r(&[0.2, 0.1, 0.3]));
    }

    #[test]
    fn parameter_accounting() {
        const B: u64 = 100_000_000;
        assert_eq!(estimate_params(30 * B, 36, 12, 3 * B).unwrap(), 12 * B);
        assert_eq!(estimate_params(30 * B, 36, 8, 3 * B).unwrap(), 9 * B);
        assert_eq!(estimate_params(30 * B, 36, 4, 3 * B).unwrap(), 6 * B);
        assert_eq!(estimate_params(30 * B, 36, 36, 3 * B).unwrap(), 30 * B);
        assert!(estimate_params(30 * B, 0, 0, 3 * B).is_err());
        assert!(estimate_params(B, 4, 2, 2 * B).is_err());

        let p = model(4);
        let q = prune_layers(&p, &PruneSpec::new(PruneStrategy::ContiguousMiddle, 2)).unwrap();
        let est = estimate_params(p.num_params() as u64, 4, 2, p.non_layer_params() as u64).unwrap();
        assert_eq!(est, q.num_params() as u64);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in PruneStrategy::ALL {
            assert_eq!(s.name().parse::<PruneStrategy>().unwrap(), s);
        }
        assert!("sideways".parse::<PruneStrategy>().is_err());
    }
}
