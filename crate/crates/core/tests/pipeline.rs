//! End-to-end training pipeline checks on a small separable problem:
//! learning actually happens, results are bitwise reproducible, checkpoints
//! survive round trips, and ablation variants carry exactly the parameters
//! their configuration implies.

use high_ts::checkpoint::{decode, encode, Checkpoint};
use high_ts::config::TrainConfig;
use high_ts::data::{split_train_val, synthetic_sine_vs_noise};
use high_ts::eval::evaluate_accuracy;
use high_ts::model::Model;
use high_ts::train::{ablation_variants, fit, grid_search, GridSpec};

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.scales = vec![1, 2];
    cfg.vertices = 8;
    cfg.latent_dim = 8;
    cfg.contrast_dim = 8;
    cfg.heads = 2;
    cfg.mp_layers = 1;
    cfg.batch = 16;
    cfg.epochs = 10;
    cfg.patience = 10;
    cfg.seed = 4;
    cfg
}

#[test]
fn training_learns_the_separable_problem() {
    let (train, test) = synthetic_sine_vs_noise(80, 40, 64, 5);
    let split = split_train_val(&train, 0.25, 4).expect("split");
    let mut cfg = small_config();
    cfg.epochs = 40;
    cfg.patience = 40;
    cfg.lr = 1e-3;
    let result = fit(&split.train, &split.val, &cfg).expect("fit");
    let accuracy = evaluate_accuracy(&result.model, &test).expect("accuracy");
    assert!(
        accuracy >= 0.85,
        "expected clearly-above-chance accuracy, got {accuracy}"
    );
    let first = result.history.first().expect("history");
    let last = result.history.last().expect("history");
    assert!(last.train_loss < first.train_loss, "loss must trend down");
    assert!(result.history.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn fit_is_bitwise_deterministic() {
    let (train, _) = synthetic_sine_vs_noise(40, 2, 48, 6);
    let split = split_train_val(&train, 0.25, 4).expect("split");
    let mut cfg = small_config();
    cfg.epochs = 4;
    let a = fit(&split.train, &split.val, &cfg).expect("fit a");
    let b = fit(&split.train, &split.val, &cfg).expect("fit b");
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(
        a.best_val_accuracy.to_bits(),
        b.best_val_accuracy.to_bits()
    );
    let ta = a.model.to_named_tensors();
    let tb = b.model.to_named_tensors();
    assert_eq!(ta.len(), tb.len());
    for ((na, sa, da), (nb, sb, db)) in ta.iter().zip(&tb) {
        assert_eq!(na, nb);
        assert_eq!(sa, sb);
        let bits_a: Vec<u64> = da.iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = db.iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b, "parameter {na} diverged");
    }
    for (ra, rb) in a.history.iter().zip(&b.history) {
        assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
        assert_eq!(ra.val_accuracy.to_bits(), rb.val_accuracy.to_bits());
    }
}

#[test]
fn checkpoint_preserves_model_behavior_exactly() {
    let (train, test) = synthetic_sine_vs_noise(40, 20, 48, 7);
    let split = split_train_val(&train, 0.25, 4).expect("split");
    let mut cfg = small_config();
    cfg.epochs = 3;
    let result = fit(&split.train, &split.val, &cfg).expect("fit");

    let xs: Vec<&[f64]> = test.samples.iter().map(|s| s.values.as_slice()).collect();
    let before_acc = evaluate_accuracy(&result.model, &test).expect("accuracy");
    let before_probs = result.model.predict_probs(&xs).expect("probs");

    let ckpt = Checkpoint::from_model(&result.model, result.best_val_accuracy);
    let bytes = encode(&ckpt);
    let reloaded = decode(&bytes).expect("decode");
    let model = reloaded.to_model().expect("to_model");

    let after_acc = evaluate_accuracy(&model, &test).expect("accuracy");
    let after_probs = model.predict_probs(&xs).expect("probs");
    assert_eq!(before_acc.to_bits(), after_acc.to_bits());
    for (pa, pb) in before_probs.iter().zip(&after_probs) {
        for (a, b) in pa.iter().zip(pb) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    assert_eq!(bytes, encode(&reloaded), "re-encoding must be stable");
}

#[test]
fn single_cell_grid_equals_plain_fit() {
    let (train, _) = synthetic_sine_vs_noise(40, 2, 48, 8);
    let split = split_train_val(&train, 0.25, 4).expect("split");
    let mut cfg = small_config();
    cfg.epochs = 3;
    let grid = GridSpec {
        vertices: vec![cfg.vertices],
        latent_dims: vec![cfg.latent_dim],
    };
    let outcome = grid_search(&split.train, &split.val, &cfg, &grid).expect("grid");
    assert_eq!(outcome.cells.len(), 1);
    let direct = fit(&split.train, &split.val, &cfg).expect("fit");
    assert_eq!(
        outcome.best_val_accuracy.to_bits(),
        direct.best_val_accuracy.to_bits()
    );
    assert_eq!(outcome.best_vertices, cfg.vertices);
    assert_eq!(outcome.best_latent_dim, cfg.latent_dim);
}

#[test]
fn ablation_variants_only_own_their_parameters() {
    let base = small_config();
    for (name, mutate) in ablation_variants() {
        let mut cfg = base.clone();
        mutate(&mut cfg);
        let model = Model::new(&cfg, 48, 2).expect("model");
        let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        let has = |prefix: &str| names.iter().any(|n| n.starts_with(prefix));
        match name {
            "full" | "no_contrastive" => {
                assert!(has("temporal.s1") && has("spatial.k0"), "{name}");
            }
            "no_2simplex" => {
                assert!(has("spatial.k1") && !has("spatial.k2"), "{name}");
            }
            "no_1simplex" => {
                assert!(has("spatial.k0") && !has("spatial.k1"), "{name}");
            }
            "no_scale3" | "no_scale23" => {
                // The base already runs scales {1,2}; dropping the top
                // scale must never add parameters beyond the kept scales.
                assert!(has("temporal.s1"), "{name}");
            }
            "temporal_only" => {
                assert!(has("temporal.s1") && !has("spatial."), "{name}");
                assert!(!has("proj_"), "single-branch variants drop contrast: {name}");
            }
            "spatial_only" => {
                assert!(has("spatial.k0") && !has("temporal."), "{name}");
                assert!(!has("proj_"), "single-branch variants drop contrast: {name}");
            }
            other => panic!("unexpected variant {other}"),
        }
        if name == "no_contrastive" {
            assert!(!has("proj_"), "projection heads exist only for contrast");
        }
        assert!(has("classifier."), "{name} must keep the classifier");
    }
}

#[test]
fn scale_ablation_drops_the_top_scale_parameters() {
    let mut cfg = small_config();
    cfg.scales = vec![1, 2, 3];
    let full = Model::new(&cfg, 48, 2).expect("model");
    let full_names: Vec<String> = full.params().iter().map(|p| p.name.clone()).collect();
    assert!(full_names.iter().any(|n| n.starts_with("temporal.s3")));

    let mut no3 = cfg.clone();
    no3.use_scale3 = false;
    let model = Model::new(&no3, 48, 2).expect("model");
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    assert!(names.iter().any(|n| n.starts_with("temporal.s2")));
    assert!(!names.iter().any(|n| n.starts_with("temporal.s3")));

    let mut no23 = cfg.clone();
    no23.use_scale2 = false;
    let model = Model::new(&no23, 48, 2).expect("model");
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    assert!(names.iter().any(|n| n.starts_with("temporal.s1")));
    assert!(!names.iter().any(|n| n.starts_with("temporal.s2")));
}
