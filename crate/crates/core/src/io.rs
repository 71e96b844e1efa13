//! On-disk formats: map files, trajectory files and run manifests.
//!
//! All files are JSON. Floats are written in shortest round-trip form, so a
//! parse of a written file reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{ElementClass, Point2, Polyline, Pose2, NUM_CLASSES};
use crate::map::{MapElement, PerceptionRange, VectorMap};
use crate::probmap::{hard_label_logits, LaplaceParam, ProbMapElement, ProbVectorMap, ProbVertex};
use crate::synth::{Condition, Layout, Maneuver, RATE_HZ};

pub const SCHEMA_VERSION: &str = "uncmap/1";

fn schema_version() -> String {
    SCHEMA_VERSION.to_string()
}

fn check_version(found: &str, what: &str) -> Result<()> {
    if found == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::Schema(format!(
            "{what}: schema_version '{found}' is not '{SCHEMA_VERSION}'"
        )))
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexRecord {
    pub mu: Point2,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_logits: Option<[f64; NUM_CLASSES]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElementRecord {
    pub class: ElementClass,
    pub confidence: f64,
    /// Polygon elements (crossings); absent means open.
    #[serde(default, skip_serializing_if = "is_false")]
    pub closed: bool,
    pub vertices: Vec<VertexRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapFileV1 {
    pub schema_version: String,
    #[serde(default)]
    pub ego_pose: Pose2,
    #[serde(default)]
    pub perception_range: PerceptionRange,
    pub elements: Vec<ElementRecord>,
}

impl MapFileV1 {
    pub fn validate(&self) -> Result<()> {
        check_version(&self.schema_version, "map file")?;
        let with_b = self
            .elements
            .iter()
            .flat_map(|e| &e.vertices)
            .filter(|v| v.b.is_some())
            .count();
        let total: usize = self.elements.iter().map(|e| e.vertices.len()).sum();
        if with_b != 0 && with_b != total {
            return Err(Error::Schema(format!(
                "map file: b present on {with_b} of {total} vertices; it must be on all or none"
            )));
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.vertices.len() < 2 {
                return Err(Error::Schema(format!("element {i}: fewer than 2 vertices")));
            }
            if !(0.0..=1.0).contains(&e.confidence) {
                return Err(Error::Schema(format!(
                    "element {i}: confidence outside [0, 1]"
                )));
            }
            if e.vertices.iter().any(|v| !v.mu.is_finite()) {
                return Err(Error::Schema(format!("element {i}: non-finite vertex")));
            }
        }
        Ok(())
    }

    /// Whether the file carries scales, i.e. is a probabilistic map.
    pub fn is_probabilistic(&self) -> bool {
        self.elements
            .iter()
            .any(|e| e.vertices.iter().any(|v| v.b.is_some()))
    }

    pub fn from_prob_map(map: &ProbVectorMap) -> Self {
        let elements = map
            .elements
            .iter()
            .map(|e| ElementRecord {
                class: e.class,
                confidence: e.confidence,
                closed: e.closed,
                vertices: e
                    .vertices()
                    .iter()
                    .map(|v| VertexRecord {
                        mu: v.mu(),
                        b: Some(v.b()),
                        class_logits: Some(v.class_logits),
                    })
                    .collect(),
            })
            .collect();
        Self {
            schema_version: schema_version(),
            ego_pose: map.ego_pose,
            perception_range: map.perception_range,
            elements,
        }
    }

    pub fn from_vector_map(map: &VectorMap) -> Self {
        let elements = map
            .elements
            .iter()
            .map(|e| ElementRecord {
                class: e.class,
                confidence: e.confidence,
                closed: e.polyline.is_closed(),
                vertices: e
                    .polyline
                    .vertices()
                    .iter()
                    .map(|&mu| VertexRecord {
                        mu,
                        b: None,
                        class_logits: None,
                    })
                    .collect(),
            })
            .collect();
        Self {
            schema_version: schema_version(),
            ego_pose: map.ego_pose,
            perception_range: map.perception_range,
            elements,
        }
    }

    /// Probabilistic view. Missing logits default to hard labels.
    pub fn to_prob_map(&self) -> Result<ProbVectorMap> {
        self.validate()?;
        if !self.is_probabilistic() && !self.elements.is_empty() {
            return Err(Error::Schema(
                "map file has no scales (b); it is a mean map".into(),
            ));
        }
        let mut elements = Vec::with_capacity(self.elements.len());
        for e in &self.elements {
            let mut verts = Vec::with_capacity(e.vertices.len());
            for v in &e.vertices {
                let [bx, by] = v.b.expect("validated");
                let logits = v.class_logits.unwrap_or_else(|| hard_label_logits(e.class));
                verts.push(
                    ProbVertex::new(
                        LaplaceParam::new(v.mu.x, bx).map_err(schema)?,
                        LaplaceParam::new(v.mu.y, by).map_err(schema)?,
                        logits,
                    )
                    .map_err(schema)?,
                );
            }
            elements
                .push(ProbMapElement::new(verts, e.class, e.confidence, e.closed).map_err(schema)?);
        }
        Ok(ProbVectorMap {
            elements,
            ego_pose: self.ego_pose,
            perception_range: self.perception_range,
        })
    }

    /// Mean-geometry view; scales, if any, are ignored.
    pub fn to_vector_map(&self) -> Result<VectorMap> {
        self.validate()?;
        let mut elements = Vec::with_capacity(self.elements.len());
        for e in &self.elements {
            let pts = e.vertices.iter().map(|v| v.mu).collect();
            let polyline = Polyline::new(pts, e.closed).map_err(schema)?;
            elements.push(MapElement {
                polyline,
                class: e.class,
                confidence: e.confidence,
            });
        }
        Ok(VectorMap {
            elements,
            ego_pose: self.ego_pose,
            perception_range: self.perception_range,
        })
    }
}

fn schema(e: Error) -> Error {
    match e {
        Error::Schema(_) => e,
        other => Error::Schema(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maneuver: Option<Maneuver>,
    pub history: Vec<Point2>,
    pub future_gt: Vec<Point2>,
    #[serde(default)]
    pub modes: Vec<Vec<Point2>>,
}

fn default_rate() -> f64 {
    RATE_HZ
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajFileV1 {
    pub schema_version: String,
    #[serde(default = "default_rate")]
    pub rate_hz: f64,
    pub agents: Vec<AgentRecord>,
}

impl TrajFileV1 {
    pub fn new(agents: Vec<AgentRecord>) -> Self {
        Self {
            schema_version: schema_version(),
            rate_hz: RATE_HZ,
            agents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_version(&self.schema_version, "trajectory file")?;
        if !(self.rate_hz > 0.0) {
            return Err(Error::Schema("rate_hz must be positive".into()));
        }
        for a in &self.agents {
            if a.history.is_empty() || a.future_gt.is_empty() {
                return Err(Error::Schema(format!(
                    "agent {}: empty history or future",
                    a.id
                )));
            }
            if let Some(m) = a.modes.iter().find(|m| m.len() != a.future_gt.len()) {
                return Err(Error::Schema(format!(
                    "agent {}: mode has {} points but future has {}",
                    a.id,
                    m.len(),
                    a.future_gt.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneEntry {
    pub id: String,
    /// Paths are relative to the manifest's directory.
    pub gt_map: PathBuf,
    pub observed_map: PathBuf,
    pub trajectories: PathBuf,
    pub seed: u64,
    pub observe_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Layout>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub scenes: Vec<SceneEntry>,
}

impl RunManifest {
    pub fn new(master_seed: Option<u64>, scenes: Vec<SceneEntry>) -> Self {
        Self {
            schema_version: schema_version(),
            master_seed,
            scenes,
        }
    }

    pub fn validate(&self, root: &Path) -> Result<()> {
        check_version(&self.schema_version, "manifest")?;
        if self.scenes.is_empty() {
            return Err(Error::Schema("manifest lists no scenes".into()));
        }
        let mut ids = std::collections::HashSet::new();
        for s in &self.scenes {
            if !ids.insert(&s.id) {
                return Err(Error::Schema(format!("duplicate scene id '{}'", s.id)));
            }
            for p in [&s.gt_map, &s.observed_map, &s.trajectories] {
                if !root.join(p).is_file() {
                    return Err(Error::Schema(format!(
                        "scene '{}': referenced file {} does not exist",
                        s.id,
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.scenes
            .iter()
            .flat_map(|s| [s.seed, s.observe_seed])
            .collect()
    }
}

/// A manifest together with the directory its paths are relative to.
#[derive(Debug, Clone)]
pub struct LoadedManifest {
    pub root: PathBuf,
    pub manifest: RunManifest,
    /// SHA-256 of the manifest file bytes.
    pub sha256: String,
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: RunManifest =
            serde_json::from_slice(&bytes).map_err(|e| json_error(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate(&root)?;
        Ok(Self {
            root,
            manifest,
            sha256: sha256_hex(&bytes),
        })
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    if e.is_io() {
        Error::Json(e)
    } else {
        Error::Schema(format!("{}: {e}", path.display()))
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| json_error(path, e))
}

/// Pretty JSON with a trailing newline. Creates parent directories.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_map(path: &Path) -> Result<MapFileV1> {
    let m: MapFileV1 = read_json(path)?;
    m.validate()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    Ok(m)
}

pub fn read_traj(path: &Path) -> Result<TrajFileV1> {
    let t: TrajFileV1 = read_json(path)?;
    t.validate()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    Ok(t)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Rows of a CSV file with the given header, serialized deterministically.
pub fn csv_bytes<R: AsRef<[String]>>(header: &[&str], rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.as_ref())?;
    }
    w.into_inner()
        .map_err(|e| Error::Schema(format!("csv buffer: {e}")))
}

/// Float cell; empty for undefined values.
pub fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
