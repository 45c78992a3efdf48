//! Forward and backward passes of the relation transformer over a batch of
//! pages stacked row-wise. Attention never crosses page boundaries.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::params::{LayerParams, RelationModelParams, COORD_ROWS};
use crate::document::{Category, GridBox};
use crate::error::{invalid, Result};

const LN_EPS: f64 = 1e-5;

/// Rows `start..start + len` of a stacked batch belong to one page.
pub type Segment = (usize, usize);

/// Per-element features: six concatenated coordinate embeddings plus the
/// category embedding.
pub fn embed_elements(boxes: &[GridBox], cats: &[Category], params: &RelationModelParams) -> Result<Array2<f64>> {
    if boxes.len() != cats.len() {
        return Err(invalid(format!("{} boxes but {} categories", boxes.len(), cats.len())));
    }
    let d = params.config.coord_embed_dim;
    let mut out = Array2::zeros((boxes.len(), 6 * d));
    for (i, (b, c)) in boxes.iter().zip(cats).enumerate() {
        let feats = b.features();
        if let Some(bad) = feats.iter().find(|&&v| usize::from(v) >= COORD_ROWS) {
            return Err(invalid(format!("grid coordinate {bad} outside 0..={}", COORD_ROWS - 1)));
        }
        let mut row = out.row_mut(i);
        for (k, &v) in feats.iter().enumerate() {
            row.slice_mut(s![k * d..(k + 1) * d]).assign(&params.coord[k].row(usize::from(v)));
        }
        if params.config.category_embedding {
            row += &params.category.row(c.index());
        }
    }
    Ok(out)
}

/// Options for a forward pass.
#[derive(Debug, Clone, Default)]
pub struct PassOptions<'a> {
    /// Layers to bypass (their residual path only).
    pub skip: &'a [bool],
}

struct LayerCache {
    xhat1: Array2<f64>,
    rstd1: Vec<f64>,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    mask1: Option<Array2<f64>>,
    xhat2: Array2<f64>,
    rstd2: Vec<f64>,
    b: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
    mask2: Option<Array2<f64>>,
}

pub(crate) struct Trace {
    caches: Vec<Option<LayerCache>>,
    hidden: Array2<f64>,
}

pub(crate) struct ForwardOut {
    pub logits: Array2<f64>,
    /// Hidden states entering each layer, plus the final one.
    pub states: Option<Vec<Array2<f64>>>,
    pub trace: Option<Trace>,
}

fn layer_norm(x: &Array2<f64>, g: &Array2<f64>, b: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| v * r);
        rstd.push(r);
    }
    let y = &xhat * g + b;
    (y, xhat, rstd)
}

fn layer_norm_backward(dy: &Array2<f64>, xhat: &Array2<f64>, rstd: &[f64], g: &Array2<f64>, dg: &mut Array2<f64>, db: &mut Array2<f64>) -> Array2<f64> {
    *dg += &(dy * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    *db += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * g;
    let d = xhat.ncols() as f64;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let dh = dxhat.row(i);
        let xh = xhat.row(i);
        let sum = dh.sum();
        let dot = dh.dot(&xh);
        let r = rstd[i] / d;
        for j in 0..row.len() {
            row[j] = r * (d * dh[j] - sum - xh[j] * dot);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn dropout_mask<R: Rng>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_simple_fn(shape, || if rng.random_bool(p) { 0.0 } else { keep })
}

fn attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    segments: &[Segment],
    heads: usize,
    keep_probs: bool,
) -> (Array2<f64>, Vec<Array2<f64>>) {
    let dm = q.ncols();
    let dh = dm / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut ctx = Array2::zeros(q.raw_dim());
    let mut all = Vec::new();
    for &(start, len) in segments {
        for h in 0..heads {
            let cols = s![start..start + len, h * dh..(h + 1) * dh];
            let qh = q.slice(cols);
            let kh = k.slice(cols);
            let mut p = qh.dot(&kh.t()) * scale;
            softmax_rows(&mut p);
            ctx.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
            if keep_probs {
                all.push(p);
            }
        }
    }
    (ctx, all)
}

fn layer_forward<R: Rng>(
    lp: &LayerParams,
    x: Array2<f64>,
    segments: &[Segment],
    heads: usize,
    dropout: Option<(f64, &mut R)>,
    keep_cache: bool,
) -> (Array2<f64>, Option<LayerCache>) {
    let (a, xhat1, rstd1) = layer_norm(&x, &lp.ln1_g, &lp.ln1_b);
    let q = a.dot(&lp.wq) + &lp.bq;
    let k = a.dot(&lp.wk) + &lp.bk;
    let v = a.dot(&lp.wv) + &lp.bv;
    let (ctx, probs) = attention(&q, &k, &v, segments, heads, keep_cache);
    let mut attn = ctx.dot(&lp.wo) + &lp.bo;
    let (mask1, mask2_rng) = match dropout {
        Some((p, rng)) if p > 0.0 => {
            let m = dropout_mask(attn.dim(), p, rng);
            attn *= &m;
            (Some(m), Some((p, rng)))
        }
        other => (None, other),
    };
    let h = x + &attn;
    let (b, xhat2, rstd2) = layer_norm(&h, &lp.ln2_g, &lp.ln2_b);
    let u = b.dot(&lp.w1) + &lp.b1;
    let g = u.mapv(gelu);
    let mut f = g.dot(&lp.w2) + &lp.b2;
    let mask2 = match mask2_rng {
        Some((p, rng)) if p > 0.0 => {
            let m = dropout_mask(f.dim(), p, rng);
            f *= &m;
            Some(m)
        }
        _ => None,
    };
    let y = h + &f;
    let cache = keep_cache.then_some(LayerCache {
        xhat1,
        rstd1,
        a,
        q,
        k,
        v,
        probs,
        ctx,
        mask1,
        xhat2,
        rstd2,
        b,
        u,
        g,
        mask2,
    });
    (y, cache)
}

/// Run the transformer stack and classifier over stacked pages.
pub(crate) fn forward<R: Rng>(
    params: &RelationModelParams,
    features: Array2<f64>,
    segments: &[Segment],
    opts: &PassOptions,
    mut dropout_rng: Option<&mut R>,
    keep_trace: bool,
    keep_states: bool,
) -> ForwardOut {
    let heads = params.config.heads;
    let p = params.config.dropout;
    let mut x = features;
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut states = keep_states.then(Vec::new);
    for (l, lp) in params.layers.iter().enumerate() {
        if let Some(s) = states.as_mut() {
            s.push(x.clone());
        }
        if opts.skip.get(l).copied().unwrap_or(false) {
            caches.push(None);
            continue;
        }
        let drop = dropout_rng.as_deref_mut().map(|r| (p, r));
        let (y, cache) = layer_forward(lp, x, segments, heads, drop, keep_trace);
        x = y;
        caches.push(cache);
    }
    if let Some(s) = states.as_mut() {
        s.push(x.clone());
    }
    let logits = x.dot(&params.classifier);
    ForwardOut {
        logits,
        states,
        trace: keep_trace.then_some(Trace { caches, hidden: x }),
    }
}

/// Mean cross-entropy of each row against its target rank, restricted to the
/// first `len` columns of its page. Returns the loss and its gradient.
pub(crate) fn masked_cross_entropy(logits: &Array2<f64>, segments: &[Segment], targets: &[usize]) -> (f64, Array2<f64>) {
    let total = targets.len() as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for &(start, len) in segments {
        for i in start..start + len {
            let row = logits.slice(s![i, ..len]);
            let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let t = targets[i];
            loss -= (exps[t] / sum).ln();
            for (j, e) in exps.iter().enumerate() {
                grad[[i, j]] = (e / sum - if j == t { 1.0 } else { 0.0 }) / total;
            }
        }
    }
    (loss / total, grad)
}

fn layer_backward(lp: &LayerParams, c: &LayerCache, dy: Array2<f64>, segments: &[Segment], heads: usize, g: &mut LayerParams) -> Array2<f64> {
    // y = h + drop(f)
    let mut dh = dy.clone();
    let df = match &c.mask2 {
        Some(m) => dy * m,
        None => dy,
    };
    g.w2 += &c.g.t().dot(&df);
    g.b2 += &df.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dg = df.dot(&lp.w2.t());
    let du = dg * &c.u.mapv(gelu_grad);
    g.w1 += &c.b.t().dot(&du);
    g.b1 += &du.sum_axis(Axis(0)).insert_axis(Axis(0));
    let db = du.dot(&lp.w1.t());
    dh += &layer_norm_backward(&db, &c.xhat2, &c.rstd2, &lp.ln2_g, &mut g.ln2_g, &mut g.ln2_b);

    // h = x + drop(ctx Wo + bo)
    let dattn = match &c.mask1 {
        Some(m) => &dh * m,
        None => dh.clone(),
    };
    g.wo += &c.ctx.t().dot(&dattn);
    g.bo += &dattn.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dctx = dattn.dot(&lp.wo.t());

    let dm = c.q.ncols();
    let dh_ = dm / heads;
    let scale = 1.0 / (dh_ as f64).sqrt();
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    let mut idx = 0;
    for &(start, len) in segments {
        for h in 0..heads {
            let cols = s![start..start + len, h * dh_..(h + 1) * dh_];
            let p = &c.probs[idx];
            idx += 1;
            let dctx_h: ArrayView2<f64> = dctx.slice(cols);
            let dp = dctx_h.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let mut ds = dp;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = row.dot(&prow);
                row.zip_mut_with(&prow, |d, &pv| *d = pv * (*d - dot) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
    }
    g.wq += &c.a.t().dot(&dq);
    g.bq += &dq.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.wk += &c.a.t().dot(&dk);
    g.bk += &dk.sum_axis(Axis(0)).insert_axis(Axis(0));
    g.wv += &c.a.t().dot(&dv);
    g.bv += &dv.sum_axis(Axis(0)).insert_axis(Axis(0));
    let da = dq.dot(&lp.wq.t()) + dk.dot(&lp.wk.t()) + dv.dot(&lp.wv.t());
    dh + layer_norm_backward(&da, &c.xhat1, &c.rstd1, &lp.ln1_g, &mut g.ln1_g, &mut g.ln1_b)
}

/// Accumulate parameter gradients into `grads` given d(loss)/d(logits).
pub(crate) fn backward(
    params: &RelationModelParams,
    trace: &Trace,
    dlogits: &Array2<f64>,
    boxes: &[GridBox],
    cats: &[Category],
    segments: &[Segment],
    grads: &mut RelationModelParams,
) {
    grads.classifier += &trace.hidden.t().dot(dlogits);
    let mut dx = dlogits.dot(&params.classifier.t());
    for l in (0..params.layers.len()).rev() {
        if let Some(cache) = &trace.caches[l] {
            dx = layer_backward(&params.layers[l], cache, dx, segments, params.config.heads, &mut grads.layers[l]);
        }
    }
    let d = params.config.coord_embed_dim;
    for (i, (b, c)) in boxes.iter().zip(cats).enumerate() {
        let row = dx.row(i);
        for (k, &v) in b.features().iter().enumerate() {
            let mut target = grads.coord[k].row_mut(usize::from(v));
            target += &row.slice(s![k * d..(k + 1) * d]);
        }
        if params.config.category_embedding {
            let mut target = grads.category.row_mut(c.index());
            target += &row;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::RelationModelConfig;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gelu_derivative_matches_difference() {
        for u in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(u + h) - gelu(u - h)) / (2.0 * h);
            assert!((fd - gelu_grad(u)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_layer_logits_are_a_matrix_product() {
        let cfg = RelationModelConfig {
            coord_embed_dim: 2,
            layers: 0,
            heads: 1,
            max_elements: 3,
            ..Default::default()
        };
        let p = RelationModelParams::init(&cfg, 1).unwrap();
        let feats = Array2::from_shape_fn((2, 12), |(i, j)| (i * 12 + j) as f64 * 0.1 - 1.0);
        let out = forward::<ChaCha8Rng>(&p, feats.clone(), &[(0, 2)], &PassOptions::default(), None, false, false);
        for i in 0..2 {
            for c in 0..3 {
                let direct: f64 = (0..12).map(|j| feats[[i, j]] * p.classifier[[j, c]]).sum();
                assert!((out.logits[[i, c]] - direct).abs() < 1e-12);
            }
        }
    }
}
