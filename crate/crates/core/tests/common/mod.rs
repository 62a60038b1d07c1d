//! Helpers shared by integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use expressway_core::neural::{batch_loss, loss_and_gradients, ModelConfig, ModelKind, SequenceModel};
use expressway_core::pipeline::{sha256_file, SiteConfig, TIMINGS};
use expressway_core::preprocess::WindowedSample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<WindowedSample> {
    (0..n)
        .map(|i| WindowedSample {
            sequence: (0..t)
                .map(|_| std::array::from_fn(|_| rng.random_range(-2.0..2.0)))
                .collect(),
            label: (i % 2) as u8,
            end_index: i,
        })
        .collect()
}

/// Worst relative error between analytic and central-difference gradients,
/// per parameter tensor.
pub fn model_gradient_errors(kind: ModelKind, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SequenceModel::new(
        ModelConfig {
            kind,
            hidden_dim: 8,
            input_dim: 3,
            attention_dim: None,
        },
        seed,
    )
    .unwrap();
    let data = random_batch(&mut rng, 4, 10);
    let (_, grads) = loss_and_gradients(&model, &data).unwrap();
    let analytic: Vec<(&'static str, Vec<f64>)> =
        grads.tensors().into_iter().map(|(n, t, _)| (n, t.to_vec())).collect();

    let mut out = Vec::new();
    for (k, (name, g)) in analytic.iter().enumerate() {
        let mut worst: f64 = 0.0;
        for (i, &gi) in g.iter().enumerate() {
            let mut plus = model.clone();
            plus.tensors_mut()[k].1[i] += FD_STEP;
            let mut minus = model.clone();
            minus.tensors_mut()[k].1[i] -= FD_STEP;
            let numeric = (batch_loss(&plus, &data) - batch_loss(&minus, &data)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(gi, numeric));
        }
        out.push((*name, worst));
    }
    out
}

/// A site small enough to run every stage in a few seconds.
pub fn small_site(seed: u64) -> SiteConfig {
    let mut cfg = SiteConfig::default();
    cfg.seed = seed;
    cfg.simulation.duration_min = 240.0;
    cfg.simulation.events = 1;
    cfg.simulation.trajectory.frame_count = 120;
    cfg.model.hidden_dim = 8;
    cfg.train.epochs = 2;
    cfg.window.train_stride = 20;
    cfg.window.test_stride = 5;
    cfg
}

/// sha256 of every file under `root` except the timings, keyed by relative path.
pub fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().is_some_and(|n| n != TIMINGS) {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, sha256_file(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
