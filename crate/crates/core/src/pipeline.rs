//! End-to-end commands over manifests. Each command writes a JSON report
//! with a reproducibility block plus CSV tables, and contains nothing that
//! varies between runs with the same inputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{self, CoverageReport, ReliabilityReport};
use crate::error::{Error, Result};
use crate::geometry::{ElementClass, Point2};
use crate::io::{
    self, cell, csv_bytes, sha256_hex, AgentRecord, LoadedManifest, MapFileV1, RunManifest,
    SceneEntry, TrajFileV1,
};
use crate::map::VectorMap;
use crate::map_eval::{self, ApConfig, MapEvalReport};
use crate::pred_eval::{self, AgentMetrics, BinnedStat, PredEvalReport, TrajectorySet};
use crate::probmap::{
    hard_label_logits, mean_map, LaplaceParam, ProbMapElement, ProbVectorMap, ProbVertex, B_FLOOR,
};
use crate::stats;
use crate::synth::{
    self, predict_blind, predict_weighted, Condition, DatasetConfig, PredictorConfig,
};

pub const TOOL: &str = "uncmap";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reproducibility {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// SHA-256 of the effective options serialized as compact JSON.
    pub config_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_sha256: Option<String>,
    pub seeds: Vec<u64>,
}

impl Reproducibility {
    fn new<C: Serialize>(
        command: &str,
        config: &C,
        manifest: Option<&LoadedManifest>,
        seeds: Vec<u64>,
    ) -> Result<Self> {
        Ok(Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config_sha256: sha256_hex(&serde_json::to_vec(config)?),
            manifest_sha256: manifest.map(|m| m.sha256.clone()),
            seeds,
        })
    }

    fn for_manifest<C: Serialize>(command: &str, config: &C, m: &LoadedManifest) -> Result<Self> {
        Self::new(command, config, Some(m), m.manifest.seeds())
    }
}

/// Files produced by a command, relative to its output directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outputs {
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl Outputs {
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.files.push((name.into(), text.into_bytes()));
        Ok(())
    }

    fn csv<R: AsRef<[String]>>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<()> {
        self.files.push((name.into(), csv_bytes(header, rows)?));
        Ok(())
    }

    pub fn write_all(&self, out_dir: &Path) -> Result<()> {
        for (rel, bytes) in &self.files {
            io::write_bytes(&out_dir.join(rel), bytes)?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(p, _)| p == Path::new(name))
            .map(|(_, b)| b.as_slice())
    }
}

/// Loads a map file as a probabilistic map. Mean-only files are lifted with
/// floor scales and hard labels, which is enough for geometric evaluation.
pub fn load_prob_map(path: &Path) -> Result<ProbVectorMap> {
    let f = io::read_map(path)?;
    if f.is_probabilistic() {
        return f.to_prob_map();
    }
    let vm = f.to_vector_map()?;
    lift_mean_map(&vm)
}

pub fn lift_mean_map(vm: &VectorMap) -> Result<ProbVectorMap> {
    let mut elements = Vec::with_capacity(vm.elements.len());
    for e in &vm.elements {
        let verts = e
            .polyline
            .vertices()
            .iter()
            .map(|p| {
                ProbVertex::new(
                    LaplaceParam::new(p.x, B_FLOOR)?,
                    LaplaceParam::new(p.y, B_FLOOR)?,
                    hard_label_logits(e.class),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        elements.push(ProbMapElement::new(
            verts,
            e.class,
            e.confidence,
            e.polyline.is_closed(),
        )?);
    }
    Ok(ProbVectorMap {
        elements,
        ego_pose: vm.ego_pose,
        perception_range: vm.perception_range,
    })
}

struct SceneData {
    entry: SceneEntry,
    gt: VectorMap,
    observed: ProbVectorMap,
}

fn load_maps(m: &LoadedManifest) -> Result<Vec<SceneData>> {
    m.manifest
        .scenes
        .par_iter()
        .map(|s| {
            Ok(SceneData {
                entry: s.clone(),
                gt: io::read_map(&m.path(&s.gt_map))?.to_vector_map()?,
                observed: load_prob_map(&m.path(&s.observed_map))?,
            })
        })
        .collect()
}

fn load_trajs(m: &LoadedManifest) -> Result<Vec<TrajFileV1>> {
    m.manifest
        .scenes
        .par_iter()
        .map(|s| io::read_traj(&m.path(&s.trajectories)))
        .collect()
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub reproducibility: Reproducibility,
    pub config: DatasetConfig,
    pub n_scenes: usize,
    pub n_agents: usize,
    pub n_elements: usize,
    pub files: Vec<FileDigest>,
}

/// Parses a dataset config from TOML. Fails with a config error.
pub fn parse_dataset_config(text: &str) -> Result<DatasetConfig> {
    let cfg: DatasetConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn rel(path: &Path) -> String {
    path.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Synthesises the dataset: per-scene map files, trajectory files whose
/// modes come from the uncertainty-weighted predictor, the manifest, and a
/// report listing every file's digest.
pub fn generate(cfg: &DatasetConfig) -> Result<(GenerateReport, Outputs)> {
    cfg.validate()?;
    let scenes = synth::generate_dataset(cfg)?;
    type SceneFiles = (SceneEntry, Vec<(PathBuf, Vec<u8>)>);
    let per_scene: Vec<SceneFiles> = scenes
        .par_iter()
        .map(|s| -> Result<SceneFiles> {
            let dir = PathBuf::from("scenes").join(&s.id);
            let agents = s
                .agents
                .iter()
                .map(|a| {
                    Ok(AgentRecord {
                        id: a.id,
                        maneuver: Some(a.maneuver),
                        history: a.history.clone(),
                        future_gt: a.future.clone(),
                        modes: predict_weighted(&a.history, &s.observed, &cfg.predictor)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut out = Outputs::default();
            out.json("gt.json", &MapFileV1::from_vector_map(&s.gt))?;
            out.json("observed.json", &MapFileV1::from_prob_map(&s.observed))?;
            out.json("traj.json", &TrajFileV1::new(agents))?;
            let files = out
                .files
                .into_iter()
                .map(|(p, b)| (dir.join(p), b))
                .collect();
            let entry = SceneEntry {
                id: s.id.clone(),
                gt_map: dir.join("gt.json"),
                observed_map: dir.join("observed.json"),
                trajectories: dir.join("traj.json"),
                seed: s.spec.seed,
                observe_seed: s.observe_seed,
                layout: Some(s.spec.layout),
                condition: Some(s.spec.condition),
                tags: BTreeMap::from([(
                    "occluders".to_string(),
                    s.spec.occluders.len().to_string(),
                )]),
            };
            Ok((entry, files))
        })
        .collect::<Result<_>>()?;

    let mut outputs = Outputs::default();
    let mut entries = Vec::with_capacity(per_scene.len());
    for (entry, files) in per_scene {
        entries.push(entry);
        outputs.files.extend(files);
    }
    let manifest = RunManifest::new(Some(cfg.seed), entries);
    outputs.json(MANIFEST_FILE, &manifest)?;
    let digests = outputs
        .files
        .iter()
        .map(|(p, b)| FileDigest {
            path: rel(p),
            sha256: sha256_hex(b),
        })
        .collect();
    let report = GenerateReport {
        reproducibility: Reproducibility::new("generate", cfg, None, manifest.seeds())?,
        config: cfg.clone(),
        n_scenes: scenes.len(),
        n_agents: scenes.iter().map(|s| s.agents.len()).sum(),
        n_elements: scenes.iter().map(|s| s.gt.elements.len()).sum(),
        files: digests,
    };
    outputs.json("generate_report.json", &report)?;
    Ok((report, outputs))
}

// ---------------------------------------------------------------- eval-map

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMapDoc {
    pub reproducibility: Reproducibility,
    pub config: ApConfig,
    pub n_scenes: usize,
    pub report: MapEvalReport,
}

pub fn eval_map(m: &LoadedManifest, cfg: &ApConfig) -> Result<(EvalMapDoc, Outputs)> {
    cfg.validate()?;
    let scenes = load_maps(m)?;
    let pairs: Vec<(&ProbVectorMap, &VectorMap)> =
        scenes.iter().map(|s| (&s.observed, &s.gt)).collect();
    let report = map_eval::evaluate_maps(&pairs, cfg)?;
    let mut rows = Vec::new();
    for c in &report.classes {
        for (t, ap) in report.thresholds.iter().zip(&c.ap) {
            rows.push(vec![
                c.class.to_string(),
                t.to_string(),
                cell(*ap),
                c.n_gt.to_string(),
                c.n_pred.to_string(),
            ]);
        }
    }
    rows.push(vec![
        "mAP".into(),
        String::new(),
        cell(report.map),
        String::new(),
        String::new(),
    ]);
    let doc = EvalMapDoc {
        reproducibility: Reproducibility::for_manifest("eval-map", cfg, m)?,
        config: cfg.clone(),
        n_scenes: scenes.len(),
        report,
    };
    let mut out = Outputs::default();
    out.json("map_eval.json", &doc)?;
    out.csv(
        "map_eval.csv",
        &["class", "threshold", "ap", "n_gt", "n_pred"],
        &rows,
    )?;
    Ok((doc, out))
}

// ---------------------------------------------------------------- eval-pred

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPredOptions {
    pub miss_threshold: f64,
}

impl Default for EvalPredOptions {
    fn default() -> Self {
        Self {
            miss_threshold: pred_eval::DEFAULT_MISS_THRESHOLD,
        }
    }
}

fn check_miss_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::Config("miss threshold must be positive".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPredDoc {
    pub reproducibility: Reproducibility,
    pub config: EvalPredOptions,
    pub report: PredEvalReport,
}

fn agent_rows(scene: &str, id: usize, m: &AgentMetrics) -> Vec<String> {
    vec![
        scene.to_string(),
        id.to_string(),
        m.min_ade.to_string(),
        m.min_fde.to_string(),
        u8::from(m.miss).to_string(),
        m.best_mode.to_string(),
    ]
}

pub fn eval_pred(m: &LoadedManifest, opts: &EvalPredOptions) -> Result<(EvalPredDoc, Outputs)> {
    check_miss_threshold(opts.miss_threshold)?;
    let trajs = load_trajs(m)?;
    let mut metrics = Vec::new();
    let mut rows = Vec::new();
    for (entry, t) in m.manifest.scenes.iter().zip(&trajs) {
        for a in &t.agents {
            if a.modes.is_empty() {
                return Err(Error::Schema(format!(
                    "scene '{}' agent {}: no predicted modes",
                    entry.id, a.id
                )));
            }
            let ts = TrajectorySet::new(a.modes.clone(), a.future_gt.clone())
                .map_err(|e| Error::Schema(format!("scene '{}' agent {}: {e}", entry.id, a.id)))?;
            let am = pred_eval::agent_metrics(&ts, opts.miss_threshold);
            rows.push(agent_rows(&entry.id, a.id, &am));
            metrics.push(am);
        }
    }
    let report = pred_eval::summarize(&metrics)
        .map_err(|_| Error::Schema("manifest contains no agents".into()))?;
    let doc = EvalPredDoc {
        reproducibility: Reproducibility::for_manifest("eval-pred", opts, m)?,
        config: opts.clone(),
        report,
    };
    let mut out = Outputs::default();
    out.json("pred_eval.json", &doc)?;
    out.csv(
        "pred_agents.csv",
        &["scene", "agent", "min_ade", "min_fde", "miss", "best_mode"],
        &rows,
    )?;
    Ok((doc, out))
}

// ---------------------------------------------------------------- calibrate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateOptions {
    pub levels: Vec<f64>,
    pub bins: usize,
    pub pair_threshold: f64,
    pub matching: ApConfig,
}

impl Default for CalibrateOptions {
    fn default() -> Self {
        Self {
            levels: calibration::DEFAULT_LEVELS.to_vec(),
            bins: calibration::DEFAULT_RELIABILITY_BINS,
            pair_threshold: calibration::DEFAULT_PAIR_THRESHOLD,
            matching: ApConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrateDoc {
    pub reproducibility: Reproducibility,
    pub config: CalibrateOptions,
    pub coverage: CoverageReport,
    pub reliability: ReliabilityReport,
}

pub fn calibrate(m: &LoadedManifest, opts: &CalibrateOptions) -> Result<(CalibrateDoc, Outputs)> {
    if opts.levels.is_empty() || opts.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::Config("coverage levels must lie in (0, 1)".into()));
    }
    if opts.bins == 0 {
        return Err(Error::Config("reliability needs at least one bin".into()));
    }
    if !(opts.pair_threshold > 0.0) {
        return Err(Error::Config("pair threshold must be positive".into()));
    }
    opts.matching.validate()?;
    let scenes = load_maps(m)?;
    type ScenePairs = (Vec<(ProbVertex, Point2)>, Vec<([f64; 4], usize)>);
    let per_scene: Vec<ScenePairs> = scenes
        .par_iter()
        .map(|s| {
            Ok((
                calibration::scene_pairs(&s.observed, &s.gt, opts.pair_threshold, &opts.matching)?,
                calibration::class_predictions(&s.observed),
            ))
        })
        .collect::<Result<_>>()?;
    let (mut pairs, mut classes) = (Vec::new(), Vec::new());
    for (p, c) in per_scene {
        pairs.extend(p);
        classes.extend(c);
    }
    if pairs.is_empty() {
        return Err(Error::Schema(
            "no predicted element matched a ground-truth element".into(),
        ));
    }
    let coverage = calibration::coverage(&pairs, &opts.levels)?;
    let reliability = calibration::reliability(&classes, opts.bins)?;
    let cov_rows: Vec<Vec<String>> = (0..coverage.nominal_levels.len())
        .map(|i| {
            vec![
                coverage.nominal_levels[i].to_string(),
                coverage.empirical_coverage[i].to_string(),
                coverage.coverage_x[i].to_string(),
                coverage.coverage_y[i].to_string(),
                coverage.n.to_string(),
            ]
        })
        .collect();
    let rel_rows: Vec<Vec<String>> = (0..reliability.bin_count.len())
        .map(|i| {
            vec![
                reliability.bin_edges[i].to_string(),
                reliability.bin_edges[i + 1].to_string(),
                cell(reliability.bin_confidence[i]),
                cell(reliability.bin_accuracy[i]),
                reliability.bin_count[i].to_string(),
            ]
        })
        .collect();
    let doc = CalibrateDoc {
        reproducibility: Reproducibility::for_manifest("calibrate", opts, m)?,
        config: opts.clone(),
        coverage,
        reliability,
    };
    let mut out = Outputs::default();
    out.json("calibration.json", &doc)?;
    out.csv(
        "coverage.csv",
        &[
            "level",
            "coverage",
            "coverage_x",
            "coverage_y",
            "n_vertices",
        ],
        &cov_rows,
    )?;
    out.csv(
        "reliability.csv",
        &["bin_lo", "bin_hi", "confidence", "accuracy", "count"],
        &rel_rows,
    )?;
    Ok((doc, out))
}

// ------------------------------------------------------ analyze-uncertainty

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOptions {
    pub bin_edges: Vec<f64>,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        Self {
            bin_edges: pred_eval::uniform_edges(35.0, 5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: String,
    pub n_vertices: usize,
    pub mean_b: Option<f64>,
    /// Rank correlation of scale with distance from the ego.
    pub spearman: Option<f64>,
    pub binned: BinnedStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeDoc {
    pub reproducibility: Reproducibility,
    pub config: AnalyzeOptions,
    pub groups: Vec<GroupStat>,
}

impl AnalyzeDoc {
    pub fn group(&self, name: &str) -> Option<&GroupStat> {
        self.groups.iter().find(|g| g.group == name)
    }
}

/// `(distance from ego, mean scale)` of every observed vertex.
pub fn vertex_scales(map: &ProbVectorMap) -> Vec<(ElementClass, f64, f64)> {
    let ego = map.ego_pose.position;
    map.elements
        .iter()
        .flat_map(|e| {
            e.vertices()
                .iter()
                .map(move |v| (e.class, v.mu().dist(ego), v.mean_b()))
        })
        .collect()
}

/// Scale-versus-distance statistics overall, per class, per condition and
/// per condition and class.
pub fn analyze_uncertainty(
    m: &LoadedManifest,
    opts: &AnalyzeOptions,
) -> Result<(AnalyzeDoc, Outputs)> {
    let e = &opts.bin_edges;
    if e.len() < 2 || e.windows(2).any(|w| !(w[1] > w[0])) || e.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(
            "bin edges must be at least two strictly increasing numbers".into(),
        ));
    }
    let scenes = load_maps(m)?;
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for s in &scenes {
        let cond = s
            .entry
            .condition
            .map(Condition::as_str)
            .unwrap_or("untagged");
        for (class, d, b) in vertex_scales(&s.observed) {
            for key in [
                "all".to_string(),
                format!("class={class}"),
                format!("condition={cond}"),
                format!("condition={cond},class={class}"),
            ] {
                groups.entry(key).or_default().push((d, b));
            }
        }
    }
    let mut stats_out = Vec::new();
    let mut rows = Vec::new();
    for (name, values) in &groups {
        let binned = pred_eval::binned_ci(values, &opts.bin_edges)?;
        let (ds, bs): (Vec<f64>, Vec<f64>) = values.iter().copied().unzip();
        let spearman = (values.len() >= 2)
            .then(|| stats::spearman(&ds, &bs))
            .filter(|r| r.is_finite());
        for i in 0..binned.count.len() {
            rows.push(vec![
                name.clone(),
                binned.bin_edges[i].to_string(),
                binned.bin_edges[i + 1].to_string(),
                cell(binned.mean[i]),
                binned.ci95_half_width[i].to_string(),
                binned.count[i].to_string(),
            ]);
        }
        stats_out.push(GroupStat {
            group: name.clone(),
            n_vertices: values.len(),
            mean_b: stats::mean(&bs),
            spearman,
            binned,
        });
    }
    let doc = AnalyzeDoc {
        reproducibility: Reproducibility::for_manifest("analyze-uncertainty", opts, m)?,
        config: opts.clone(),
        groups: stats_out,
    };
    let mut out = Outputs::default();
    out.json("uncertainty.json", &doc)?;
    out.csv(
        "uncertainty.csv",
        &[
            "group",
            "bin_lo",
            "bin_hi",
            "mean_b",
            "ci95_half_width",
            "count",
        ],
        &rows,
    )?;
    Ok((doc, out))
}

// ------------------------------------------------------ compare-predictors

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub predictor: PredictorConfig,
    pub miss_threshold: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            predictor: PredictorConfig::default(),
            miss_threshold: pred_eval::DEFAULT_MISS_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub blind: f64,
    pub weighted: f64,
    /// Relative change of weighted over blind in percent; `None` when the
    /// blind value is zero and the weighted is not.
    pub delta_pct: Option<f64>,
    /// Weighted value with its rounded relative change, e.g. `0.9524 (-3%)`.
    pub formatted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareDoc {
    pub reproducibility: Reproducibility,
    pub config: CompareOptions,
    pub blind: PredEvalReport,
    pub weighted: PredEvalReport,
    pub deltas: Vec<MetricDelta>,
    /// Per-maneuver reports where trajectory files carry maneuver tags.
    pub by_maneuver: BTreeMap<String, [PredEvalReport; 2]>,
    /// Number of agents whose blind and weighted modes are bit-identical.
    pub identical_agents: usize,
}

pub fn delta_pct(blind: f64, weighted: f64) -> Option<f64> {
    if blind == 0.0 {
        (weighted == 0.0).then_some(0.0)
    } else {
        Some((weighted - blind) / blind * 100.0)
    }
}

/// `0.3854 (-4%)`; a change that rounds to zero prints as `(0%)`.
pub fn format_delta(value: f64, pct: Option<f64>) -> String {
    let pct = match pct {
        None => "n/a".to_string(),
        Some(p) if p.round() == 0.0 => "0%".to_string(),
        Some(p) => format!("{:+.0}%", p),
    };
    format!("{value:.4} ({pct})")
}

fn deltas(b: &PredEvalReport, w: &PredEvalReport) -> Vec<MetricDelta> {
    [
        ("minADE", b.min_ade, w.min_ade),
        ("minFDE", b.min_fde, w.min_fde),
        ("MR", b.miss_rate, w.miss_rate),
    ]
    .into_iter()
    .map(|(name, bv, wv)| {
        let d = delta_pct(bv, wv);
        MetricDelta {
            metric: name.into(),
            blind: bv,
            weighted: wv,
            delta_pct: d,
            formatted: format_delta(wv, d),
        }
    })
    .collect()
}

struct AgentComparison {
    maneuver: Option<String>,
    blind: AgentMetrics,
    weighted: AgentMetrics,
    identical: bool,
}

/// Re-predicts every agent with both baselines from the observed maps.
pub fn compare_predictors(
    m: &LoadedManifest,
    opts: &CompareOptions,
) -> Result<(CompareDoc, Outputs)> {
    opts.predictor.validate()?;
    check_miss_threshold(opts.miss_threshold)?;
    let scenes = load_maps(m)?;
    let trajs = load_trajs(m)?;
    let per_scene: Vec<Vec<AgentComparison>> = scenes
        .par_iter()
        .zip(trajs.par_iter())
        .map(|(s, t)| {
            let mean = mean_map(&s.observed)?;
            t.agents
                .iter()
                .map(|a| {
                    let b = predict_blind(&a.history, &mean, &opts.predictor)?;
                    let w = predict_weighted(&a.history, &s.observed, &opts.predictor)?;
                    let identical = b == w;
                    let mb = pred_eval::agent_metrics(
                        &TrajectorySet::new(b, a.future_gt.clone())?,
                        opts.miss_threshold,
                    );
                    let mw = pred_eval::agent_metrics(
                        &TrajectorySet::new(w, a.future_gt.clone())?,
                        opts.miss_threshold,
                    );
                    Ok(AgentComparison {
                        maneuver: a.maneuver.map(|x| format!("{x:?}").to_lowercase()),
                        blind: mb,
                        weighted: mw,
                        identical,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let (mut all_b, mut all_w) = (Vec::new(), Vec::new());
    let mut by: BTreeMap<String, (Vec<AgentMetrics>, Vec<AgentMetrics>)> = BTreeMap::new();
    let mut identical = 0;
    for (entry, agents) in m.manifest.scenes.iter().zip(&per_scene) {
        for (i, a) in agents.iter().enumerate() {
            let mut row = vec![
                entry.id.clone(),
                i.to_string(),
                a.maneuver.clone().unwrap_or_default(),
            ];
            row.extend(agent_rows("", 0, &a.blind).into_iter().skip(2));
            row.extend(agent_rows("", 0, &a.weighted).into_iter().skip(2));
            rows.push(row);
            all_b.push(a.blind);
            all_w.push(a.weighted);
            identical += usize::from(a.identical);
            if let Some(k) = &a.maneuver {
                let e = by.entry(k.clone()).or_default();
                e.0.push(a.blind);
                e.1.push(a.weighted);
            }
        }
    }
    let no_agents = || Error::Schema("manifest contains no agents".into());
    let blind = pred_eval::summarize(&all_b).map_err(|_| no_agents())?;
    let weighted = pred_eval::summarize(&all_w).map_err(|_| no_agents())?;
    let by_maneuver = by
        .into_iter()
        .map(|(k, (b, w))| Ok((k, [pred_eval::summarize(&b)?, pred_eval::summarize(&w)?])))
        .collect::<Result<_>>()?;
    let deltas = deltas(&blind, &weighted);
    let delta_rows: Vec<Vec<String>> = deltas
        .iter()
        .map(|d| {
            vec![
                d.metric.clone(),
                d.blind.to_string(),
                d.weighted.to_string(),
                cell(d.delta_pct),
                d.formatted.clone(),
            ]
        })
        .collect();
    let doc = CompareDoc {
        reproducibility: Reproducibility::for_manifest("compare-predictors", opts, m)?,
        config: opts.clone(),
        blind,
        weighted,
        deltas,
        by_maneuver,
        identical_agents: identical,
    };
    let mut out = Outputs::default();
    out.json("compare.json", &doc)?;
    out.csv(
        "compare.csv",
        &[
            "metric",
            "blind",
            "weighted",
            "delta_pct",
            "weighted_formatted",
        ],
        &delta_rows,
    )?;
    out.csv(
        "compare_agents.csv",
        &[
            "scene",
            "agent",
            "maneuver",
            "blind_min_ade",
            "blind_min_fde",
            "blind_miss",
            "blind_best_mode",
            "weighted_min_ade",
            "weighted_min_fde",
            "weighted_miss",
            "weighted_best_mode",
        ],
        &rows,
    )?;
    Ok((doc, out))
}

/// Writes a generated dataset and returns the loaded manifest.
pub fn generate_into(
    cfg: &DatasetConfig,
    out_dir: &Path,
) -> Result<(GenerateReport, LoadedManifest)> {
    let (report, outputs) = generate(cfg)?;
    outputs.write_all(out_dir)?;
    Ok((report, LoadedManifest::load(&out_dir.join(MANIFEST_FILE))?))
}
