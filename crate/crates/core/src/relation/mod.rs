//! Block-level reading-order model: bounding-box and category embeddings,
//! a pre-norm transformer encoder, a rank classifier and greedy decoding,
//! plus training and line-to-block order auto-labeling.

mod autolabel;
mod decode;
mod model;
mod params;
mod train;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::CorpusRecord;
use crate::document::{normalize_bbox, Block, Category, GridBox, ReadingOrder};
use crate::error::{invalid, Result};
use crate::eval::{kendall_tau, normalized_sequence_distance};

pub use autolabel::autolabel_block_order;
pub use decode::{greedy_decode, OrderLogits};
pub use model::{embed_elements, Segment};
pub use params::{LayerParams, ModelMeta, RelationModelParams, COORD_ROWS};
pub use train::{dataset_loss, finetune, loss_and_gradients, LrSchedule, train_relation_model, train_steps, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationModelConfig {
    /// Width `d` of each coordinate embedding; the model width is `6d`.
    pub coord_embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_multiplier: usize,
    /// Number of rank columns `P`, the most elements a page may have.
    pub max_elements: usize,
    pub dropout: f64,
    /// Add the per-category embedding to the box features.
    #[serde(default = "yes")]
    pub category_embedding: bool,
    #[serde(default)]
    pub coord_init: CoordInit,
}

/// Starting values of the coordinate tables.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordInit {
    /// Half-amplitude sine/cosine pairs over the grid position, so nearby
    /// coordinates start with nearby embeddings.
    #[default]
    Sinusoidal,
    /// Uniform `±1/sqrt(D)` like every other weight.
    Uniform,
}

fn yes() -> bool {
    true
}

impl Default for RelationModelConfig {
    fn default() -> Self {
        Self {
            coord_embed_dim: 32,
            layers: 4,
            heads: 4,
            ffn_multiplier: 4,
            max_elements: 64,
            dropout: 0.1,
            category_embedding: true,
            coord_init: CoordInit::Sinusoidal,
        }
    }
}

impl RelationModelConfig {
    pub fn model_dim(&self) -> usize {
        6 * self.coord_embed_dim
    }

    pub fn ffn_dim(&self) -> usize {
        self.ffn_multiplier * self.model_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.coord_embed_dim == 0 || self.heads == 0 || self.ffn_multiplier == 0 {
            return Err(invalid("embedding width, heads and ffn multiplier must be positive"));
        }
        if !self.model_dim().is_multiple_of(self.heads) {
            return Err(invalid(format!("model width {} not divisible by {} heads", self.model_dim(), self.heads)));
        }
        if self.max_elements == 0 {
            return Err(invalid("max_elements must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Normalized boxes and categories of one page with target ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub boxes: Vec<GridBox>,
    pub cats: Vec<Category>,
    pub target: ReadingOrder,
}

impl TrainingExample {
    pub fn new(boxes: Vec<GridBox>, cats: Vec<Category>, target: ReadingOrder) -> Result<Self> {
        if boxes.len() != cats.len() || boxes.len() != target.len() {
            return Err(invalid("boxes, categories and target differ in length"));
        }
        Ok(Self { boxes, cats, target })
    }

    pub fn from_blocks(blocks: &[Block], page_w: f64, page_h: f64, target: ReadingOrder) -> Result<Self> {
        let boxes = blocks
            .iter()
            .map(|b| normalize_bbox(&b.bbox, page_w, page_h))
            .collect::<Result<Vec<_>>>()?;
        Self::new(boxes, blocks.iter().map(|b| b.category).collect(), target)
    }

    pub fn from_record(r: &CorpusRecord) -> Result<Self> {
        Self::from_blocks(&r.page.blocks, r.page.width, r.page.height, r.gt_order.clone())
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    fn check(&self, max_elements: usize) -> Result<()> {
        if self.len() > max_elements {
            return Err(invalid(format!("{} elements exceed the model's {max_elements} rank columns", self.len())));
        }
        Ok(())
    }
}

/// Logits for one page of precomputed features.
pub fn encode(features: Array2<f64>, params: &RelationModelParams) -> Result<OrderLogits> {
    encode_with_skip(features, params, &[])
}

/// As [`encode`], bypassing the layers flagged in `skip`.
pub fn encode_with_skip(features: Array2<f64>, params: &RelationModelParams, skip: &[bool]) -> Result<OrderLogits> {
    let n = features.nrows();
    if n > params.config.max_elements {
        return Err(invalid(format!("{n} elements exceed the model's {} rank columns", params.config.max_elements)));
    }
    if features.ncols() != params.config.model_dim() {
        return Err(invalid(format!("features have width {}, model expects {}", features.ncols(), params.config.model_dim())));
    }
    let out = model::forward::<ChaCha8Rng>(params, features, &[(0, n)], &model::PassOptions { skip }, None, false, false);
    OrderLogits::new(out.logits)
}

/// Hidden states entering each layer plus the final one, for one page.
pub fn layer_states(boxes: &[GridBox], cats: &[Category], params: &RelationModelParams) -> Result<Vec<Array2<f64>>> {
    let feats = embed_elements(boxes, cats, params)?;
    let n = feats.nrows();
    let out = model::forward::<ChaCha8Rng>(params, feats, &[(0, n)], &model::PassOptions::default(), None, false, true);
    Ok(out.states.expect("states requested"))
}

pub fn predict_example(boxes: &[GridBox], cats: &[Category], params: &RelationModelParams, skip: &[bool]) -> Result<ReadingOrder> {
    let feats = embed_elements(boxes, cats, params)?;
    Ok(greedy_decode(&encode_with_skip(feats, params, skip)?))
}

/// Predict the reading order of `blocks` on a `page_w` x `page_h` page.
pub fn predict_order(blocks: &[Block], page_w: f64, page_h: f64, params: &RelationModelParams) -> Result<ReadingOrder> {
    let boxes = blocks
        .iter()
        .map(|b| normalize_bbox(&b.bbox, page_w, page_h))
        .collect::<Result<Vec<_>>>()?;
    let cats: Vec<Category> = blocks.iter().map(|b| b.category).collect();
    predict_example(&boxes, &cats, params, &[])
}

/// Held-out ordering quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    /// Share of pages whose predicted order equals the target exactly.
    pub accuracy: f64,
    pub mean_kendall_tau: f64,
    pub mean_order_edit: f64,
    pub pages: usize,
}

pub fn evaluate_order(params: &RelationModelParams, examples: &[TrainingExample], skip: &[bool]) -> Result<OrderStats> {
    if examples.is_empty() {
        return Err(invalid("evaluation needs at least one example"));
    }
    let mut exact = 0usize;
    let mut tau = 0.0;
    let mut edit = 0.0;
    for ex in examples {
        let pred = predict_example(&ex.boxes, &ex.cats, params, skip)?;
        if pred == ex.target {
            exact += 1;
        }
        tau += kendall_tau(pred.ranks(), ex.target.ranks());
        edit += normalized_sequence_distance(&pred.sequence(), &ex.target.sequence());
    }
    let n = examples.len() as f64;
    Ok(OrderStats {
        accuracy: exact as f64 / n,
        mean_kendall_tau: tau / n,
        mean_order_edit: edit / n,
        pages: examples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize_page, LayoutTemplate};

    fn cfg() -> RelationModelConfig {
        RelationModelConfig {
            coord_embed_dim: 4,
            layers: 2,
            heads: 2,
            max_elements: 32,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(RelationModelConfig::default().validate().is_ok());
        assert_eq!(RelationModelConfig::default().model_dim(), 192);
        assert!(RelationModelConfig { heads: 5, ..Default::default() }.validate().is_err());
        assert!(RelationModelConfig { max_elements: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn embedding_structure() {
        let p = RelationModelParams::init(&cfg(), 1).unwrap();
        let b = GridBox { x1: 10, y1: 20, x2: 300, y2: 40 };
        let f = embed_elements(&[b, b, b], &[Category::Text, Category::Text, Category::Table], &p).unwrap();
        assert_eq!(f.row(0), f.row(1));
        let diff = &f.row(2) - &f.row(0);
        let expect = &p.category.row(Category::Table.index()) - &p.category.row(Category::Text.index());
        assert!(diff.iter().zip(expect.iter()).all(|(a, b)| (a - b).abs() < 1e-12));

        let mut z = p.clone();
        for t in &mut z.coord {
            t.fill(0.0);
        }
        let f = embed_elements(&[b], &[Category::Formula], &z).unwrap();
        assert_eq!(f.row(0), p.category.row(Category::Formula.index()));

        let bad = GridBox { x1: 0, y1: 0, x2: 1001, y2: 5 };
        assert!(embed_elements(&[bad], &[Category::Text], &p).is_err());
    }

    #[test]
    fn encode_shapes_and_limits() {
        let p = RelationModelParams::init(&cfg(), 1).unwrap();
        let one = embed_elements(&[GridBox { x1: 0, y1: 0, x2: 5, y2: 5 }], &[Category::Text], &p).unwrap();
        let l = encode(one, &p).unwrap();
        assert_eq!(l.matrix().dim(), (1, 32));
        assert!(encode(Array2::zeros((33, 24)), &p).is_err());
    }

    #[test]
    fn predictions_are_permutations_and_listing_invariant() {
        let p = RelationModelParams::init(&cfg(), 7).unwrap();
        let r = synthesize_page(LayoutTemplate::DoubleColumn, 3);
        let order = predict_order(&r.page.blocks, r.page.width, r.page.height, &p).unwrap();
        assert_eq!(order.len(), r.page.blocks.len());
        let mut reversed = r.page.blocks.clone();
        reversed.reverse();
        let rev_order = predict_order(&reversed, r.page.width, r.page.height, &p).unwrap();
        let n = reversed.len();
        for i in 0..n {
            assert_eq!(order.ranks()[i], rev_order.ranks()[n - 1 - i]);
        }
        let single = predict_order(&r.page.blocks[..1], r.page.width, r.page.height, &p).unwrap();
        assert_eq!(single.ranks(), &[0]);
    }
}
