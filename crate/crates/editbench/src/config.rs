//! Experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use editbench_core::{
    seed, BenchConfig, EditMethod, EditorConfig, KgConfig, TrainConfig,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{RunError, RunResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Prompt variants averaged per fact probability: the canonical prompt
    /// plus `variants − 1` paraphrases.
    pub variants: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { variants: 11 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Editor whose round trip is drawn against the original model.
    pub method: EditMethod,
    /// Optional second editor drawn alongside.
    pub compare: Option<EditMethod>,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { method: EditMethod::Rome, compare: Some(EditMethod::MemitMle) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every stochastic component derives its own seed from it.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Methods evaluated when `eval` gets no `--method`, and listed by `report`.
    pub methods: Vec<EditMethod>,
    pub kg: KgConfig,
    pub train: TrainConfig,
    pub editor: EditorConfig,
    pub bench: BenchConfig,
    pub metrics: MetricsConfig,
    pub plot: PlotConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            output_dir: PathBuf::from("out"),
            methods: EditMethod::BENCHMARKED.to_vec(),
            kg: KgConfig::default(),
            train: TrainConfig::default(),
            editor: EditorConfig::default(),
            bench: BenchConfig::default(),
            metrics: MetricsConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

const DOCS: &[(&str, &str, &str)] = &[
    ("", "seed", "master seed; component seeds are derived from it"),
    ("", "output_dir", "directory receiving every artifact"),
    ("", "methods", "editors run by `eval` without --method: identity, ft, rome, memit, memit+mle"),
    ("kg", "entities", "number of entities (at least 50)"),
    ("kg", "cluster_size", "entities per semantic cluster"),
    ("kg", "subject_fraction", "share of entities used as subjects of each relation"),
    ("kg", "max_fanout", "largest object set of a one-to-many relation (2..=10)"),
    ("kg", "coherent_fraction", "probability that a one-to-many object set comes from one cluster"),
    ("kg", "reverse_pairs", "inverse relation pairs"),
    ("kg", "composite_rules", "[tie, premise, conclusion] rule relations"),
    ("kg", "one_to_many", "one-to-many relations"),
    ("train", "dim", "embedding dimension; keys have twice this length"),
    ("train", "temperature", "softmax temperature"),
    ("train", "cluster_weight", "share of an entity embedding taken from its cluster centre"),
    ("train", "inverse_similarity", "cosine between the embeddings of inverse relations"),
    ("train", "noise_scale", "standard deviation of paraphrase noise on the relation half of a key"),
    ("train", "step_size", "gradient descent step"),
    ("train", "max_epochs", "training epoch limit"),
    ("train", "accuracy_target", "training stops once this top-1 accuracy is reached"),
    ("train", "ridge", "ridge added to the key covariance"),
    ("editor", "step_size", "gradient edit step"),
    ("editor", "target_prob", "gradient edit stops at this new-object probability"),
    ("editor", "max_iters", "gradient edit iteration limit"),
    ("editor", "value_gamma", "proximity weight of single-target value solves"),
    ("editor", "mle_gamma", "proximity weight of multi-target value solves"),
    ("editor", "value_iters", "value solve iteration limit"),
    ("editor", "value_step", "first trial step of the value solve line search"),
    ("editor", "value_span", "entity-span keeps value updates in the entity embedding span; full does not"),
    ("editor", "mle_budget", "targets per multi-label edit, new object included"),
    ("editor", "singular_tolerance", "smallest accepted key norm under the inverse covariance"),
    ("bench", "cases_per_split", "cases generated for each split"),
    ("bench", "easy_threshold", "easy round cases use intermediates at least this close to the label centroid"),
    ("bench", "hard_threshold", "hard round cases use intermediates at most this close"),
    ("metrics", "variants", "prompts averaged per probability: canonical plus paraphrases"),
    ("plot", "method", "editor drawn in distribution plots"),
    ("plot", "compare", "second editor drawn in distribution plots"),
];

impl ExperimentConfig {
    pub fn load(path: &Path) -> RunResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            RunError::Config(msg) => RunError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> RunResult<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Default configuration as TOML with a comment above every key.
    pub fn documented_default() -> String {
        let mut out = String::from("# editbench experiment configuration (defaults)\n");
        let mut section = String::new();
        for line in Self::default().to_toml().lines() {
            let trimmed = line.trim();
            if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.to_string();
                out.push('\n');
            } else if let Some((key, _)) = trimmed.split_once(" = ") {
                if let Some((_, _, doc)) = DOCS.iter().find(|(s, k, _)| *s == section && *k == key) {
                    out.push_str(&format!("# {doc}\n"));
                }
            }
            out.push_str(line);
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> RunResult<()> {
        self.kg.validate()?;
        self.train.validate()?;
        if self.metrics.variants == 0 {
            return Err(RunError::Config("metrics.variants must be at least 1".into()));
        }
        if self.bench.cases_per_split == 0 {
            return Err(RunError::Config("bench.cases_per_split must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(RunError::Config("methods must name at least one editor".into()));
        }
        let e = &self.editor;
        let positive = [
            ("editor.step_size", e.step_size),
            ("editor.value_step", e.value_step),
            ("editor.target_prob", e.target_prob),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(RunError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(e.target_prob < 1.0) {
            return Err(RunError::Config(format!("editor.target_prob must be below 1, got {}", e.target_prob)));
        }
        for (name, v) in [("editor.value_gamma", e.value_gamma), ("editor.mle_gamma", e.mle_gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(RunError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if e.mle_budget == 0 {
            return Err(RunError::Config("editor.mle_budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Copy with every component seed derived from the master seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.kg.seed = seed::derive(self.seed, "kg");
        c.train.seed = seed::derive(self.seed, "train");
        c.bench.seed = seed::derive(self.seed, "bench");
        c
    }

    /// SHA-256 of the serialised configuration, output location excluded.
    pub fn digest(&self) -> String {
        let content = ExperimentConfig { output_dir: PathBuf::new(), ..self.clone() };
        hex::encode(Sha256::digest(content.to_toml().as_bytes()))
    }
}
