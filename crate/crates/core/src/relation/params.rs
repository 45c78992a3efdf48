use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CoordInit, RelationModelConfig};
use crate::document::{Category, GRID_SIZE};
use crate::error::{Error, Result};

pub const COORD_ROWS: usize = GRID_SIZE as usize + 1;

const MAGIC: &[u8; 4] = b"SRRM";
const FORMAT_VERSION: u32 = 1;

/// Weights of one pre-norm transformer layer. Vectors are stored as `1 x n` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Array2<f64>,
    pub ln1_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
    pub bo: Array2<f64>,
    pub ln2_g: Array2<f64>,
    pub ln2_b: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

const LAYER_TENSORS: usize = 16;

impl LayerParams {
    fn zeros(d: usize, f: usize) -> Self {
        let z = |r, c| Array2::zeros((r, c));
        Self {
            ln1_g: z(1, d),
            ln1_b: z(1, d),
            wq: z(d, d),
            bq: z(1, d),
            wk: z(d, d),
            bk: z(1, d),
            wv: z(d, d),
            bv: z(1, d),
            wo: z(d, d),
            bo: z(1, d),
            ln2_g: z(1, d),
            ln2_b: z(1, d),
            w1: z(d, f),
            b1: z(1, f),
            w2: z(f, d),
            b2: z(1, d),
        }
    }

    fn tensors(&self) -> [&Array2<f64>; LAYER_TENSORS] {
        [
            &self.ln1_g, &self.ln1_b, &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo,
            &self.ln2_g, &self.ln2_b, &self.w1, &self.b1, &self.w2, &self.b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Array2<f64>; LAYER_TENSORS] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }

    /// Weight matrices take weight decay; norms and biases do not.
    const DECAY: [bool; LAYER_TENSORS] = [
        false, false, true, false, true, false, true, false, true, false, false, false, true, false, true, false,
    ];

    /// Zero the output projections so the layer reduces to its residual path.
    pub fn make_identity(&mut self) {
        self.wo.fill(0.0);
        self.bo.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
    }
}

/// All learnable tensors of the reading-order model.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationModelParams {
    pub config: RelationModelConfig,
    /// Tables for x1, y1, x2, y2, w, h; each `1001 x d`.
    pub coord: [Array2<f64>; 6],
    /// `|Category| x D`.
    pub category: Array2<f64>,
    pub layers: Vec<LayerParams>,
    /// `D x P`.
    pub classifier: Array2<f64>,
}

fn sinusoidal_table(d: usize) -> Array2<f64> {
    Array2::from_shape_fn((COORD_ROWS, d), |(pos, c)| {
        let angle = pos as f64 / 10000f64.powf((c / 2 * 2) as f64 / d as f64);
        0.5 * if c % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

impl RelationModelParams {
    pub fn zeros(config: &RelationModelConfig) -> Self {
        let d = config.coord_embed_dim;
        let dm = config.model_dim();
        Self {
            config: config.clone(),
            coord: std::array::from_fn(|_| Array2::zeros((COORD_ROWS, d))),
            category: Array2::zeros((Category::COUNT, dm)),
            layers: (0..config.layers).map(|_| LayerParams::zeros(dm, config.ffn_dim())).collect(),
            classifier: Array2::zeros((dm, config.max_elements)),
        }
    }

    /// Uniform `±1/sqrt(D)` weights, unit norm gains, zero biases. The
    /// coordinate tables follow [`CoordInit`].
    pub fn init(config: &RelationModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let bound = 1.0 / (config.model_dim() as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |a: &mut Array2<f64>| a.mapv_inplace(|_| rng.random_range(-bound..bound));
        for t in &mut p.coord {
            fill(t);
        }
        if config.coord_init == CoordInit::Sinusoidal {
            let table = sinusoidal_table(config.coord_embed_dim);
            for t in &mut p.coord {
                t.assign(&table);
            }
        }
        if config.category_embedding {
            fill(&mut p.category);
        }
        for layer in &mut p.layers {
            layer.ln1_g.fill(1.0);
            layer.ln2_g.fill(1.0);
            for w in [&mut layer.wq, &mut layer.wk, &mut layer.wv, &mut layer.wo, &mut layer.w1, &mut layer.w2] {
                fill(w);
            }
        }
        fill(&mut p.classifier);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v: Vec<&Array2<f64>> = self.coord.iter().collect();
        v.push(&self.category);
        for l in &self.layers {
            v.extend(l.tensors());
        }
        v.push(&self.classifier);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v: Vec<&mut Array2<f64>> = self.coord.iter_mut().collect();
        v.push(&mut self.category);
        for l in &mut self.layers {
            v.extend(l.tensors_mut());
        }
        v.push(&mut self.classifier);
        v
    }

    /// Weight-decay flag per entry of [`Self::tensors`].
    pub fn decay_mask(&self) -> Vec<bool> {
        let mut v = vec![true; 7];
        for _ in &self.layers {
            v.extend(LayerParams::DECAY);
        }
        v.push(true);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameters outside the transformer layers.
    pub fn non_layer_params(&self) -> usize {
        self.num_params() - self.layers.iter().map(|l| l.tensors().iter().map(|t| t.len()).sum::<usize>()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &ModelMeta) -> Result<()> {
        let header = serde_json::to_vec(&FileHeader {
            config: self.config.clone(),
            meta: meta.clone(),
        })?;
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        for t in self.tensors() {
            for v in t.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ModelMeta)> {
        let path = path.as_ref();
        let mut input = BufReader::new(File::open(path)?);
        let bad = |m: &str| Error::ModelFormat(format!("{}: {m}", path.display()));
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a relation model file"));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word).map_err(|_| bad("truncated header"))?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(|_| bad("truncated header"))?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return Err(bad("implausible header length"));
        }
        let mut header = vec![0u8; len];
        input.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        let header: FileHeader = serde_json::from_slice(&header).map_err(|e| bad(&e.to_string()))?;
        header.config.validate()?;
        let mut p = Self::zeros(&header.config);
        let mut buf = [0u8; 8];
        for t in p.tensors_mut() {
            for v in t.iter_mut() {
                input.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
                *v = f64::from_le_bytes(buf);
            }
        }
        if input.read(&mut buf)? != 0 {
            return Err(bad("trailing bytes after tensors"));
        }
        if !p.is_finite() {
            return Err(bad("non-finite weights"));
        }
        Ok((p, header.meta))
    }
}

/// Provenance stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    /// Loss before training, then the mean training loss of each epoch.
    #[serde(default)]
    pub loss_curve: Vec<f64>,
    /// Optimizer steps taken to produce these weights.
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub learning_rate: f64,
    /// Free-form history, e.g. pruning operations applied.
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    config: RelationModelConfig,
    meta: ModelMeta,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RelationModelConfig {
        RelationModelConfig {
            coord_embed_dim: 4,
            layers: 2,
            heads: 2,
            max_elements: 8,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_follow_config() {
        let p = RelationModelParams::init(&small(), 1).unwrap();
        assert_eq!(p.coord[0].dim(), (1001, 4));
        assert_eq!(p.category.dim(), (9, 24));
        assert_eq!(p.layers.len(), 2);
        assert_eq!(p.layers[0].w1.dim(), (24, 96));
        assert_eq!(p.classifier.dim(), (24, 8));
        assert_eq!(p.tensors().len(), p.decay_mask().len());
        let per_layer = 4 * 24 * 24 + 4 * 24 + 4 * 24 + 2 * 24 * 96 + 96 + 24;
        assert_eq!(p.num_params() - p.non_layer_params(), 2 * per_layer);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = RelationModelParams::init(&small(), 3).unwrap();
        let bound = 1.0 / 24f64.sqrt();
        assert!(a.classifier.iter().all(|v| v.abs() <= bound));
        assert_eq!(a, RelationModelParams::init(&small(), 3).unwrap());
        assert_ne!(a, RelationModelParams::init(&small(), 4).unwrap());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let p = RelationModelParams::init(&small(), 5).unwrap();
        let meta = ModelMeta {
            seed: 5,
            loss_curve: vec![2.0, 1.0],
            steps: 10,
            learning_rate: 1e-3,
            notes: vec![],
        };
        p.save(&path, &meta).unwrap();
        let (q, m) = RelationModelParams::load(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(meta, m);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(RelationModelParams::load(&path), Err(Error::ModelFormat(_))));
        let p = RelationModelParams::init(&small(), 5).unwrap();
        p.save(&path, &ModelMeta::default()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(RelationModelParams::load(&path), Err(Error::ModelFormat(_))));
    }
}
