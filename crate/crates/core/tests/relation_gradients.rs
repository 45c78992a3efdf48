use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srrdoc::document::{Category, GridBox, ReadingOrder};
use srrdoc::relation::{dataset_loss, loss_and_gradients, CoordInit, RelationModelConfig, RelationModelParams, TrainingExample};

fn config() -> RelationModelConfig {
    RelationModelConfig {
        coord_embed_dim: 2,
        layers: 1,
        heads: 2,
        ffn_multiplier: 4,
        max_elements: 4,
        dropout: 0.0,
        category_embedding: true,
        coord_init: CoordInit::Uniform,
    }
}

fn example() -> TrainingExample {
    TrainingExample::new(
        vec![GridBox { x1: 100, y1: 600, x2: 900, y2: 700 }, GridBox { x1: 120, y1: 80, x2: 500, y2: 120 }],
        vec![Category::Text, Category::Title],
        ReadingOrder::from_ranks(vec![1, 0]).unwrap(),
    )
    .unwrap()
}

/// Perturb every non-zero-gradient coordinate and compare with central differences.
fn check(params: RelationModelParams) {
    let ex = [example()];
    let (_, grads) = loss_and_gradients(&params, &ex).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let n_tensors = params.tensors().len();
    for t in 0..n_tensors {
        let len = params.tensors()[t].len();
        for k in 0..len {
            let analytic = grads.tensors()[t].as_slice().unwrap()[k];
            // coordinate tables are sparse; only the looked-up rows carry gradient
            if t < 6 && analytic == 0.0 {
                continue;
            }
            let mut plus = params.clone();
            plus.tensors_mut()[t].as_slice_mut().unwrap()[k] += h;
            let mut minus = params.clone();
            minus.tensors_mut()[t].as_slice_mut().unwrap()[k] -= h;
            let numeric = (dataset_loss(&plus, &ex).unwrap() - dataset_loss(&minus, &ex).unwrap()) / (2.0 * h);
            let scale = analytic.abs().max(numeric.abs());
            let err = if scale < 1e-7 { (analytic - numeric).abs() } else { (analytic - numeric).abs() / scale };
            assert!(err < 1e-3, "tensor {t} entry {k}: analytic {analytic} numeric {numeric}");
            worst = worst.max(err);
            checked += 1;
        }
    }
    assert!(checked > 500, "only {checked} coordinates checked");
    eprintln!("checked {checked} coordinates, worst relative error {worst:.2e}");
}

#[test]
fn gradients_match_central_differences() {
    check(RelationModelParams::init(&config(), 11).unwrap());
}

#[test]
fn gradients_match_with_perturbed_norms_and_biases() {
    let mut p = RelationModelParams::init(&config(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in p.tensors_mut() {
        t.mapv_inplace(|v| v + rng.random_range(-0.3..0.3));
    }
    check(p);
}
