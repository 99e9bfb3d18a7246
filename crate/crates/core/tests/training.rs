mod common;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gcnn::data::{build_vocab_from_text, Mode};
use gcnn::layers::preset;
use gcnn::model::{Model, ModelOptions};
use gcnn::optim::DEFAULT_CLIP;
use gcnn::train::{prepare_batches, train, Budget, TrainConfig};

fn run(seed: u64, steps: usize) -> (gcnn::train::RunLog, Model<f32>) {
    let text = small_text(20);
    let vocab = build_vocab_from_text(&text, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model: Model<f32> =
        Model::new(&preset("gcnnsweep-w10").unwrap(), vocab.len(), ModelOptions::default(), &mut rng).unwrap();
    let batches = prepare_batches(&text, &vocab, Mode::Paragraph, 8, 32, model.receptive_field()).unwrap();
    let cfg = TrainConfig {
        budget: Budget::Steps(steps),
        seed,
        ..TrainConfig::default()
    };
    let log = train(&mut model, &batches, &batches[..3], &cfg).unwrap();
    (log, model)
}

#[test]
fn post_clip_norm_never_exceeds_threshold() {
    assert!(max_applied_norm() <= DEFAULT_CLIP);
}

#[test]
fn clipping_is_idempotent_and_keeps_direction() {
    let (idem, cos) = clip_properties(10);
    assert_eq!(idem, 0.0);
    assert!(cos <= 1.0 - CLIP_COSINE, "{cos:e}");
}

#[test]
fn short_run_lowers_training_loss() {
    let (log, _) = run(1, 60);
    let first: f64 = log.records[..5].iter().map(|r| r.train_nll).sum::<f64>() / 5.0;
    let last: f64 = log.records[55..].iter().map(|r| r.train_nll).sum::<f64>() / 5.0;
    assert!(last < first - 0.3, "{first} -> {last}");
    assert!(log.final_val_ppl().unwrap().is_finite());
}

#[test]
fn same_seed_same_run() {
    let (a, ma) = run(4, 12);
    let (b, mb) = run(4, 12);
    assert_eq!(a.without_timing().to_csv(), b.without_timing().to_csv());
    for (p, q) in ma.params().iter().zip(mb.params()) {
        assert_eq!(p.direction.value, q.direction.value);
    }
    let (c, _) = run(5, 12);
    assert_ne!(a.without_timing().to_csv(), c.without_timing().to_csv());
}

#[test]
fn checkpoints_reproduce_scores_bitwise() {
    assert!(checkpoint_bit_exact());
}
