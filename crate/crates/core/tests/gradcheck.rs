//! Full-model gradient check against central finite differences.
//!
//! One small model exercises every parameterized operation at once: patch
//! embedding, attention and feed-forward encoder layers with their layer
//! norms, simplicial message passing on all three levels, both projection
//! heads, the classifier, and the combined cross-entropy plus contrastive
//! objective. Differentiating the total loss therefore checks every
//! backward rule the trainer relies on.

use std::collections::BTreeMap;
use std::time::Instant;

use high_ts::config::TrainConfig;
use high_ts::model::Model;
use high_ts::tensor::Tape;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const MAX_REL_ERR: f64 = 1e-4;

fn small_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.scales = vec![1, 2];
    cfg.vertices = 8;
    cfg.latent_dim = 8;
    cfg.contrast_dim = 8;
    cfg.heads = 2;
    cfg.mp_layers = 2;
    cfg.batch = 4;
    // A generous edge fraction so the sample complexes contain triangles
    // and the level-2 message-passing weights see nonzero input.
    cfg.cutoff_frac = 0.4;
    cfg.seed = 11;
    cfg
}

fn random_batch(len: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn loss_of(model: &Model, xs: &[&[f64]], labels: &[usize]) -> f64 {
    let mut tape = Tape::new();
    let ids = model.register(&mut tape);
    let out = model
        .forward_loss(&mut tape, &ids, xs, labels)
        .expect("forward");
    assert!(
        !out.contrastive_skipped,
        "contrastive term must be active for full coverage"
    );
    tape.value(out.loss)[0]
}

/// Component key for coverage accounting: the parameter name up to the
/// second dot, so "temporal.s2.ff_w1" groups under "temporal.s2".
fn component_of(name: &str) -> String {
    name.splitn(3, '.').take(2).collect::<Vec<_>>().join(".")
}

#[test]
fn analytic_gradients_match_central_differences() {
    let started = Instant::now();
    let cfg = small_config();
    let series_len = 24;
    let mut model = Model::new(&cfg, series_len, 2).expect("model");
    let series = random_batch(series_len, 4, 17);
    let xs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
    let labels = [0usize, 1, 0, 1];

    for x in &xs {
        let complex = model.complex_for(x).expect("complex");
        assert!(
            !complex.triangles.is_empty(),
            "test input must produce triangles so level-2 weights are live"
        );
    }

    let mut tape = Tape::new();
    let ids = model.register(&mut tape);
    let out = model
        .forward_loss(&mut tape, &ids, &xs, &labels)
        .expect("forward");
    assert!(out.contrastive.is_some(), "contrastive branch must be on");
    tape.backward(out.loss).expect("backward");

    let flat = ids.flatten();
    let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
    assert_eq!(flat.len(), names.len());
    let analytic: Vec<Vec<f64>> = flat
        .iter()
        .map(|&id| tape.grad(id).expect("every parameter gets a gradient").to_vec())
        .collect();
    drop(tape);

    let mut worst: BTreeMap<String, f64> = BTreeMap::new();
    let mut worst_overall = (0.0f64, String::new());
    let mut coords = 0usize;
    for (pi, name) in names.iter().enumerate() {
        let numel = model.params()[pi].numel();
        for c in 0..numel {
            let orig = model.params()[pi].data[c];
            model.params_mut()[pi].data[c] = orig + H;
            let plus = loss_of(&model, &xs, &labels);
            model.params_mut()[pi].data[c] = orig - H;
            let minus = loss_of(&model, &xs, &labels);
            model.params_mut()[pi].data[c] = orig;
            let fd = (plus - minus) / (2.0 * H);
            let a = analytic[pi][c];
            // Relative where the gradient has size, absolute (at 1e-10
            // scale) for near-zero coordinates where division is noise.
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            let entry = worst.entry(component_of(name)).or_insert(0.0);
            *entry = entry.max(rel);
            if rel > worst_overall.0 {
                worst_overall = (rel, format!("{name}[{c}]"));
            }
            coords += 1;
        }
    }

    let mut groups: Vec<&str> = worst.keys().map(|s| s.as_str()).collect();
    groups.sort_unstable();
    for needed in [
        "temporal.s1",
        "temporal.s2",
        "spatial.k0",
        "spatial.k1",
        "spatial.k2",
        "proj_temporal.w",
        "proj_spatial.w",
        "classifier.w",
    ] {
        assert!(
            worst.keys().any(|k| k.starts_with(needed) || needed.starts_with(k.as_str())),
            "missing coverage for {needed}: have {groups:?}"
        );
    }

    for (component, rel) in &worst {
        assert!(
            *rel < MAX_REL_ERR,
            "{component}: max relative error {rel:.3e} exceeds {MAX_REL_ERR:.0e} \
             (worst overall {} at {})",
            worst_overall.0,
            worst_overall.1
        );
    }

    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "gradient check took {elapsed:?}, budget is one minute"
    );
    println!(
        "checked {coords} coordinates across {} tensors; worst {:.3e} at {}; {elapsed:?}",
        names.len(),
        worst_overall.0,
        worst_overall.1
    );
}
