//! Shared domain types and the per-problem workspace on disk.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::compare::TolerancePolicy;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input error: {0}")]
    Input(String),
    #[error("storage error: {0}")]
    Storage(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Category {
    CircuitAnalysis,
    CircuitSynthesis,
    NetworkFunctionAnalysis,
    NetworkFunctionSynthesis,
    NoDiagram,
    NotSimulable { reason: String },
}

impl Category {
    pub fn is_simulable(&self) -> bool {
        !matches!(self, Category::NoDiagram | Category::NotSimulable { .. })
    }

    pub fn is_synthesis(&self) -> bool {
        matches!(
            self,
            Category::CircuitSynthesis | Category::NetworkFunctionSynthesis
        )
    }

    pub fn is_network_function(&self) -> bool {
        matches!(
            self,
            Category::NetworkFunctionAnalysis | Category::NetworkFunctionSynthesis
        )
    }

    pub fn slug(&self) -> &'static str {
        match self {
            Category::CircuitAnalysis => "circuit-analysis",
            Category::CircuitSynthesis => "circuit-synthesis",
            Category::NetworkFunctionAnalysis => "network-function-analysis",
            Category::NetworkFunctionSynthesis => "network-function-synthesis",
            Category::NoDiagram => "no-diagram",
            Category::NotSimulable { .. } => "not-simulable",
        }
    }

    fn from_meta(slug: &str, reason: Option<String>) -> Result<Self, ModelError> {
        Ok(match slug {
            "circuit-analysis" => Category::CircuitAnalysis,
            "circuit-synthesis" => Category::CircuitSynthesis,
            "network-function-analysis" => Category::NetworkFunctionAnalysis,
            "network-function-synthesis" => Category::NetworkFunctionSynthesis,
            "no-diagram" => Category::NoDiagram,
            "not-simulable" => {
                let reason = reason.filter(|r| !r.trim().is_empty()).ok_or_else(|| {
                    ModelError::Input("category not-simulable requires a nonempty `reason`".into())
                })?;
                Category::NotSimulable { reason }
            }
            other => return Err(ModelError::Input(format!("unknown category `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    TimeSeries,
    NetworkFunction,
    Scalar,
}

/// An output variable the answer must provide and the simulator prints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub kind: TargetKind,
    /// Printed magnitude column for network functions; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnitude: Option<String>,
    /// Printed phase column (degrees) for network functions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
}

impl Target {
    pub fn time_series(name: &str) -> Self {
        Target {
            name: name.into(),
            kind: TargetKind::TimeSeries,
            magnitude: None,
            phase: None,
        }
    }

    pub fn magnitude_column(&self) -> &str {
        self.magnitude.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub diagram: Option<PathBuf>,
    pub category: Category,
    pub statement_overrides: Option<String>,
    pub targets: Vec<Target>,
    pub tolerance: Option<TolerancePolicy>,
}

impl Problem {
    /// Statement with overrides appended, as shown to the model.
    pub fn full_statement(&self) -> String {
        match &self.statement_overrides {
            Some(o) if !o.trim().is_empty() => format!("{}\n\nNote: {}", self.statement.trim_end(), o.trim()),
            _ => self.statement.clone(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    id: Option<String>,
    category: Option<String>,
    reason: Option<String>,
    overrides: Option<String>,
    tolerance_rel: Option<f64>,
    tolerance_abs: Option<f64>,
    #[serde(default)]
    targets: Vec<Target>,
}

pub const STATEMENT_FILE: &str = "statement.txt";
pub const META_FILE: &str = "meta.toml";
const DIAGRAM_NAMES: [&str; 3] = ["diagram.png", "diagram.jpg", "diagram.jpeg"];

/// Reads `statement.txt`, an optional `diagram.{png,jpg,jpeg}` and an
/// optional `meta.toml`.
pub fn load_problem(dir: &Path) -> Result<Problem, ModelError> {
    let statement = fs::read_to_string(dir.join(STATEMENT_FILE)).map_err(|e| {
        ModelError::Input(format!("{}: cannot read {STATEMENT_FILE}: {e}", dir.display()))
    })?;
    if statement.trim().is_empty() {
        return Err(ModelError::Input(format!("{}: empty statement", dir.display())));
    }
    let diagram = DIAGRAM_NAMES.iter().map(|n| dir.join(n)).find(|p| p.is_file());
    if let Some(p) = &diagram {
        image::open(p)
            .map_err(|e| ModelError::Input(format!("{}: unreadable image: {e}", p.display())))?;
    }
    let meta_path = dir.join(META_FILE);
    let meta: Meta = if meta_path.is_file() {
        let text = fs::read_to_string(&meta_path)?;
        toml::from_str(&text)
            .map_err(|e| ModelError::Input(format!("{}: {e}", meta_path.display())))?
    } else {
        Meta {
            id: None,
            category: None,
            reason: None,
            overrides: None,
            tolerance_rel: None,
            tolerance_abs: None,
            targets: Vec::new(),
        }
    };
    let category = match meta.category.as_deref() {
        Some(slug) => Category::from_meta(slug, meta.reason)?,
        None if diagram.is_some() => Category::CircuitAnalysis,
        None => Category::NoDiagram,
    };
    if (category == Category::NoDiagram) != diagram.is_none() {
        return Err(ModelError::Input(format!(
            "{}: category no-diagram must be used exactly when no diagram file exists",
            dir.display()
        )));
    }
    if category.is_simulable() && meta.targets.is_empty() {
        return Err(ModelError::Input(format!(
            "{}: simulable category {} needs at least one [[targets]] entry",
            dir.display(),
            category.slug()
        )));
    }
    let id = match meta.id {
        Some(id) => id,
        None => dir
            .file_name()
            .and_then(|n| n.to_str())
            .map(str::to_string)
            .ok_or_else(|| ModelError::Input(format!("{}: cannot derive problem id", dir.display())))?,
    };
    if !valid_name(&id) {
        return Err(ModelError::Input(format!("invalid problem id `{id}`")));
    }
    let tolerance = match (meta.tolerance_rel, meta.tolerance_abs) {
        (None, None) => None,
        (r, a) => {
            let d = TolerancePolicy::default();
            Some(TolerancePolicy {
                rel: r.unwrap_or(d.rel),
                abs: a.unwrap_or(d.abs),
                ..d
            })
        }
    };
    Ok(Problem {
        id,
        statement,
        diagram,
        category,
        statement_overrides: meta.overrides,
        targets: meta.targets,
        tolerance,
    })
}

/// Loads every subdirectory holding a statement, in name order. A directory
/// that is itself a problem loads as one.
pub fn load_problems(dir: &Path) -> Result<Vec<Problem>, ModelError> {
    if dir.join(STATEMENT_FILE).is_file() {
        return Ok(vec![load_problem(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ModelError::Input(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(STATEMENT_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_problem(d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    InitialRecognition,
    PolarityCorrected,
    HumanCorrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitDescription {
    pub version: u32,
    pub text: String,
    pub provenance: Provenance,
}

impl CircuitDescription {
    pub fn artifact_name(&self) -> String {
        format!("desc_v{}.txt", self.version)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceKind {
    IndependentVoltage,
    IndependentCurrent,
    Dependent,
}

impl SourceKind {
    /// Noun used in the inset prompt.
    pub fn describe(self) -> &'static str {
        match self {
            SourceKind::IndependentVoltage => "independent voltage source",
            SourceKind::IndependentCurrent => "independent current source",
            SourceKind::Dependent => "dependent source",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    RuleBased,
    ExternalDetector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub x1: i64,
    pub y1: i64,
    pub x2: i64,
    pub y2: i64,
    pub kind: SourceKind,
    pub origin: Origin,
    pub confidence: f64,
}

impl DetectionBox {
    /// Clamps to `[0, width] x [0, height]`; `None` if nothing is left.
    pub fn clamped(&self, width: u32, height: u32) -> Option<DetectionBox> {
        let c = DetectionBox {
            x1: self.x1.clamp(0, width as i64),
            y1: self.y1.clamp(0, height as i64),
            x2: self.x2.clamp(0, width as i64),
            y2: self.y2.clamp(0, height as i64),
            ..*self
        };
        (c.x1 < c.x2 && c.y1 < c.y2).then_some(c)
    }

    pub fn width(&self) -> i64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> i64 {
        self.y2 - self.y1
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x1 as f64 && x <= self.x2 as f64 && y >= self.y1 as f64 && y <= self.y2 as f64
    }

    pub fn xyxy(&self) -> String {
        format!("[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrialOutcome {
    Match,
    Mismatch,
    SimFailure,
    AwaitingHuman,
    Accepted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub llm_trial: u8,
    pub sim_trial: u8,
    pub temperature: f64,
    pub outcome: TrialOutcome,
}

/// Plain file or problem id: no separators, not `.` or `..`.
pub fn valid_name(name: &str) -> bool {
    !name.is_empty() && name != "." && name != ".." && !name.contains(['/', '\\', '\0'])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub name: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub name: String,
    pub requested: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm_trial: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim_trial: Option<u8>,
    pub sha256: String,
}

pub const ARTIFACT_DIR: &str = "artifacts";
pub const INDEX_FILE: &str = "index.json";
pub const STATE_FILE: &str = "state.json";
pub const EVENTS_FILE: &str = "events.jsonl";

/// Per-problem directory. Artifacts are immutable; state files are
/// replaced atomically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    pub root: PathBuf,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Workspace {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, ModelError> {
        let root = root.into();
        fs::create_dir_all(root.join(ARTIFACT_DIR))?;
        Ok(Workspace { root })
    }

    pub fn artifact_dir(&self) -> PathBuf {
        self.root.join(ARTIFACT_DIR)
    }

    pub fn artifact_path(&self, name: &str) -> Option<PathBuf> {
        valid_name(name).then(|| self.artifact_dir().join(name))
    }

    pub fn persist_artifact(&self, name: &str, bytes: &[u8]) -> Result<ArtifactRef, ModelError> {
        self.persist_for_trial(name, bytes, None)
    }

    /// Writes a new artifact. An existing name gets a `stem~N.ext` sibling.
    pub fn persist_for_trial(
        &self,
        name: &str,
        bytes: &[u8],
        trial: Option<(u8, u8)>,
    ) -> Result<ArtifactRef, ModelError> {
        if !valid_name(name) {
            return Err(ModelError::Input(format!("invalid artifact name `{name}`")));
        }
        let dir = self.artifact_dir();
        let (stem, ext) = match name.rfind('.') {
            Some(i) if i > 0 => (&name[..i], &name[i..]),
            _ => (name, ""),
        };
        let mut actual = name.to_string();
        let mut n = 1;
        while dir.join(&actual).exists() {
            n += 1;
            actual = format!("{stem}~{n}{ext}");
        }
        let path = dir.join(&actual);
        write_atomic(&path, bytes)?;
        let sha256 = sha256_hex(bytes);
        let mut index = self.index()?;
        index.push(IndexEntry {
            name: actual.clone(),
            requested: name.to_string(),
            llm_trial: trial.map(|t| t.0),
            sim_trial: trial.map(|t| t.1),
            sha256: sha256.clone(),
        });
        write_atomic(
            &self.root.join(INDEX_FILE),
            serde_json::to_string_pretty(&index).expect("index serializes").as_bytes(),
        )?;
        Ok(ArtifactRef {
            name: actual,
            path,
            sha256,
        })
    }

    pub fn index(&self) -> Result<Vec<IndexEntry>, ModelError> {
        let path = self.root.join(INDEX_FILE);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let text = fs::read_to_string(&path)?;
        serde_json::from_str(&text).map_err(|e| ModelError::Input(format!("{}: {e}", path.display())))
    }

    /// Most recent version written under `requested`.
    pub fn latest(&self, requested: &str) -> Result<Option<String>, ModelError> {
        Ok(self
            .index()?
            .into_iter()
            .rev()
            .find(|e| e.requested == requested)
            .map(|e| e.name))
    }

    pub fn read_artifact(&self, name: &str) -> Result<Vec<u8>, ModelError> {
        let path = self
            .artifact_path(name)
            .ok_or_else(|| ModelError::Input(format!("invalid artifact name `{name}`")))?;
        Ok(fs::read(path)?)
    }

    pub fn read_text(&self, name: &str) -> Result<String, ModelError> {
        String::from_utf8(self.read_artifact(name)?)
            .map_err(|_| ModelError::Input(format!("artifact `{name}` is not UTF-8")))
    }

    /// Replaces a mutable file in the workspace root atomically.
    pub fn write_file(&self, name: &str, bytes: &[u8]) -> Result<(), ModelError> {
        Ok(write_atomic(&self.root.join(name), bytes)?)
    }

    pub fn read_file(&self, name: &str) -> Result<Option<String>, ModelError> {
        match fs::read_to_string(self.root.join(name)) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Appends one JSON line to the event log.
    pub fn append_event<T: Serialize>(&self, event: &T) -> Result<(), ModelError> {
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.root.join(EVENTS_FILE))?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn events<T: for<'de> Deserialize<'de>>(&self) -> Result<Vec<T>, ModelError> {
        let Some(text) = self.read_file(EVENTS_FILE)? else {
            return Ok(Vec::new());
        };
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| serde_json::from_str(l).map_err(|e| ModelError::Input(format!("{EVENTS_FILE}: {e}"))))
            .collect()
    }
}
