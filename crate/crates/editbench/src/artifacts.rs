//! On-disk layout and record formats.
//!
//! ```text
//! <out>/kg.txt                      knowledge graph
//! <out>/model.ckpt                  trained parameters
//! <out>/data/<split>.jsonl          one case per line
//! <out>/results/<method>_<split>.csv  per-case scores
//! <out>/results/<method>_<split>.txt  aggregate table
//! <out>/plots/<case>.json|.svg      label distributions
//! <out>/report.txt                  combined tables
//! <out>/manifest.json               digests, counts, timings
//! ```

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use editbench_core::metrics::CaseScores;
use editbench_core::{ConflictSplit, EditMethod, KnowledgeGraph, ModelParams, RoundSplit};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{RunError, RunResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Any benchmark split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Conflict(ConflictSplit),
    Round(RoundSplit),
}

impl Split {
    pub const ALL: [Split; 6] = [
        Split::Conflict(ConflictSplit::Single),
        Split::Conflict(ConflictSplit::Coverage),
        Split::Conflict(ConflictSplit::Reverse),
        Split::Conflict(ConflictSplit::Composite),
        Split::Round(RoundSplit::Easy),
        Split::Round(RoundSplit::Hard),
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Split::Conflict(s) => s.tag(),
            Split::Round(s) => s.tag(),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Split {
    type Err = RunError;

    fn from_str(s: &str) -> RunResult<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.tag() == s)
            .ok_or_else(|| RunError::UnknownSplit(s.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

const GEN_HINT: &str = "run `editbench gen` with the same config first";
const EVAL_HINT: &str = "run `editbench eval` for this method and split first";

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn kg(&self) -> PathBuf {
        self.root.join("kg.txt")
    }

    pub fn model(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        self.root.join("data").join(format!("{}.jsonl", split.tag()))
    }

    fn result_stem(&self, method: EditMethod, split: Split) -> PathBuf {
        self.root.join("results").join(format!("{}_{}", method.tag(), split.tag()))
    }

    pub fn results_csv(&self, method: EditMethod, split: Split) -> PathBuf {
        self.result_stem(method, split).with_extension("csv")
    }

    pub fn results_table(&self, method: EditMethod, split: Split) -> PathBuf {
        self.result_stem(method, split).with_extension("txt")
    }

    pub fn plot_data(&self, case_id: &str) -> PathBuf {
        self.root.join("plots").join(format!("{case_id}.json"))
    }

    pub fn plot_svg(&self, case_id: &str) -> PathBuf {
        self.root.join("plots").join(format!("{case_id}.svg"))
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// Path relative to the output root, with forward slashes.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn load_kg(&self) -> RunResult<KnowledgeGraph> {
        let path = self.kg();
        let text = read_artifact(&path, GEN_HINT)?;
        let text = String::from_utf8(text).map_err(|e| RunError::parse(&path, 0, e))?;
        KnowledgeGraph::from_text(&text).map_err(|e| match e {
            editbench_core::KgError::Parse { line, msg } => RunError::parse(&path, line, msg),
            other => other.into(),
        })
    }

    pub fn load_model(&self) -> RunResult<ModelParams> {
        let path = self.model();
        let bytes = read_artifact(&path, GEN_HINT)?;
        ModelParams::from_checkpoint_bytes(&bytes)
            .map_err(|e| RunError::parse(&path, 0, e))
    }

    pub fn load_dataset<T: DeserializeOwned>(&self, split: Split) -> RunResult<Vec<T>> {
        let path = self.dataset(split);
        let text = read_artifact(&path, GEN_HINT)?;
        let text = String::from_utf8(text).map_err(|e| RunError::parse(&path, 0, e))?;
        read_jsonl(&path, &text)
    }

    pub fn load_scores(&self, method: EditMethod, split: Split) -> RunResult<Vec<CaseScores>> {
        let path = self.results_csv(method, split);
        let bytes = read_artifact(&path, EVAL_HINT)?;
        read_scores_csv(&path, &bytes)
    }
}

fn read_artifact(path: &Path, hint: &'static str) -> RunResult<Vec<u8>> {
    match fs::read(path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(RunError::MissingArtifact { path: path.to_path_buf(), hint })
        }
        Err(e) => Err(RunError::io(path, e)),
    }
}

#[derive(Serialize, Deserialize)]
struct Record<T> {
    schema: u32,
    #[serde(flatten)]
    case: T,
}

pub fn to_jsonl<T: Serialize>(cases: &[&T]) -> String {
    let mut out = String::new();
    for case in cases {
        let line = serde_json::to_string(&Record { schema: SCHEMA_VERSION, case }).expect("case serialises");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, text: &str) -> RunResult<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record<T> = serde_json::from_str(line).map_err(|e| RunError::parse(path, i + 1, e))?;
        if rec.schema != SCHEMA_VERSION {
            return Err(RunError::parse(
                path,
                i + 1,
                format!("schema version {} (this build reads {SCHEMA_VERSION})", rec.schema),
            ));
        }
        out.push(rec.case);
    }
    Ok(out)
}

pub fn scores_to_csv(cases: &[CaseScores]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in cases {
        w.serialize(c).expect("scores serialise");
    }
    w.into_inner().expect("in-memory writer")
}

pub fn read_scores_csv(path: &Path, bytes: &[u8]) -> RunResult<Vec<CaseScores>> {
    let mut r = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for (i, row) in r.deserialize().enumerate() {
        out.push(row.map_err(|e| RunError::parse(path, i + 2, e))?);
    }
    Ok(out)
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_file(path: &Path, bytes: &[u8]) -> RunResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| RunError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| RunError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
