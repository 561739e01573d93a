//! Fixtures shared by the integration tests: a two-topic corpus, a
//! separable labelled set in embedding space, and a platform wired to a
//! deterministic clock.

#![allow(dead_code)]

pub mod oracles;
pub mod scenario;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use saturn_core::clock::SteppingClock;
use saturn_core::governance::Principal;
use saturn_core::modelkit::dataset::format_labeled;
use saturn_core::modelkit::{LabeledExample, ModelInput};
use saturn_core::platform::{Platform, PlatformConfig};
use saturn_core::registry::Modality;
use tempfile::TempDir;

pub const DIM: usize = 8;
/// Class means sit at ±MEAN on every coordinate.
pub const MEAN: f64 = 1.0;
pub const SIGMA: f64 = 0.5;

const TOPIC_A: [&str; 6] = ["river", "boat", "water", "fish", "shore", "sail"];
const TOPIC_B: [&str; 6] = ["stock", "bank", "loan", "rate", "fund", "debt"];

pub fn topic_line(rng: &mut ChaCha8Rng, topic_a: bool, len: usize) -> Vec<String> {
    let words = if topic_a { &TOPIC_A } else { &TOPIC_B };
    (0..len).map(|_| words.choose(rng).unwrap().to_string()).collect()
}

pub fn corpus_text(rng: &mut ChaCha8Rng, lines: usize) -> String {
    let mut s = String::new();
    for i in 0..lines {
        s.push_str(&topic_line(rng, i % 2 == 0, 8).join(" "));
        s.push('\n');
    }
    s
}

/// Token examples labelled by topic, for the linear probe of a pretrained
/// embedder.
pub fn probe_examples(rng: &mut ChaCha8Rng, n: usize) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            let label = i % 4 < 2;
            LabeledExample {
                input: ModelInput::Tokens(topic_line(rng, label, 5)),
                label,
                group: if i % 2 == 0 { "A" } else { "B" }.into(),
            }
        })
        .collect()
}

/// One feature vector from the class-conditional Gaussian.
pub fn class_sample(rng: &mut ChaCha8Rng, label: bool, shift: f64) -> Vec<f64> {
    let mu = if label { MEAN } else { -MEAN };
    let n = Normal::new(mu + shift, SIGMA).unwrap();
    (0..DIM).map(|_| n.sample(rng)).collect()
}

/// A draw from the equal-weight two-class mixture.
pub fn mixture_sample(rng: &mut ChaCha8Rng, shift: f64) -> Vec<f64> {
    let label = rng.gen_bool(0.5);
    class_sample(rng, label, shift)
}

/// Per-coordinate standard deviation of the mixture.
pub fn mixture_sigma() -> f64 {
    (MEAN * MEAN + SIGMA * SIGMA).sqrt()
}

/// Balanced classes with groups alternating inside each class, so the
/// groups are exchangeable and demographic parity holds up to noise.
pub fn separable_examples(rng: &mut ChaCha8Rng, n: usize) -> Vec<LabeledExample> {
    (0..n)
        .map(|i| {
            let label = i % 2 == 0;
            LabeledExample {
                input: ModelInput::Features(class_sample(rng, label, 0.0)),
                label,
                group: if (i / 2) % 2 == 0 { "A" } else { "B" }.into(),
            }
        })
        .collect()
}

pub struct Fixture {
    pub dir: TempDir,
    pub corpus: PathBuf,
    pub probe: PathBuf,
    pub train: PathBuf,
    pub holdout: PathBuf,
}

impl Fixture {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = tempfile::tempdir().unwrap();
        let write = |name: &str, text: String| {
            let p = dir.path().join(name);
            std::fs::write(&p, text).unwrap();
            p
        };
        let corpus = write("corpus.txt", corpus_text(&mut rng, 200));
        let probe = write("probe.tsv", format_labeled(&probe_examples(&mut rng, 80)));
        let train = write("train.tsv", format_labeled(&separable_examples(&mut rng, 200)));
        let holdout = write("holdout.tsv", format_labeled(&separable_examples(&mut rng, 200)));
        Self {
            dir,
            corpus,
            probe,
            train,
            holdout,
        }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Writes a spec file next to the data and returns its path.
    pub fn spec(&self, name: &str, text: &str) -> PathBuf {
        let p = self.dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    pub fn pretrain_spec(&self, model_id: &str) -> PathBuf {
        self.spec(
            "pretrain.spec",
            &format!(
                "task = pretrain\nmodel_id = {model_id}\ndataset = corpus.txt\nvalidation = probe.tsv\nk = {DIM}\nseed = 7\n"
            ),
        )
    }

    pub fn finetune_spec(&self, model_id: &str, parent: &str, extra: &str) -> PathBuf {
        self.spec(
            "finetune.spec",
            &format!(
                "task = finetune\nmodel_id = {model_id}\nparent_version = {parent}\ndataset = train.tsv\nvalidation = holdout.tsv\n{extra}"
            ),
        )
    }
}

pub fn inline_config() -> PlatformConfig {
    let mut cfg = PlatformConfig::default();
    cfg.pipeline.workers = 0;
    cfg
}

pub fn platform() -> Arc<Platform> {
    Platform::open_with_clock(inline_config(), Arc::new(SteppingClock::fixed())).unwrap()
}

pub fn system() -> Principal {
    Principal::system()
}

pub fn new_model(p: &Platform, name: &str) -> String {
    p.registry.register_model(&system(), name, Modality::Text).unwrap().model_id
}
