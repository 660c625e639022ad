//! The end-to-end run: RoI crop, blood pool, chamber refinement, skeleton,
//! vessel graph, template matching, vessel labeling, Dice report and meshes.
//!
//! Every stage writes its output into the run directory before the next one
//! starts, and the log holds no timings, so identical configs give
//! byte-identical run directories.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{extract_graph, vessel_mask, GraphParams, VesselGraph};
use crate::matching::{load_templates, match_graph, EdgeClass, MatchResult, TemplateSet};
use crate::mesh::{make_shell, marching_cubes, write_stl};
use crate::metrics::{assign_vessel_labels, report, MetricsReport};
use crate::nifti::{read_intensity, read_labels, write_nifti};
use crate::phantom::{degrade_labels, generate_phantom, DegradeSpec, Phantom, PhantomSpec};
use crate::segment::{refine_chambers, roi_crop, segment_blood_pool, SegmentParams};
use crate::skeleton::skeletonize;
use crate::volume::{crop, paste, BoundingBox, IntensityVolume, Label, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Roi,
    Pool,
    Refine,
    Skeleton,
    Graph,
    Match,
    Assign,
    Report,
    Mesh,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Roi,
        Stage::Pool,
        Stage::Refine,
        Stage::Skeleton,
        Stage::Graph,
        Stage::Match,
        Stage::Assign,
        Stage::Report,
        Stage::Mesh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Roi => "roi",
            Stage::Pool => "pool",
            Stage::Refine => "refine",
            Stage::Skeleton => "skeleton",
            Stage::Graph => "graph",
            Stage::Match => "match",
            Stage::Assign => "assign",
            Stage::Report => "report",
            Stage::Mesh => "mesh",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s.to_ascii_lowercase())
            .ok_or_else(|| {
                let names: Vec<_> = Stage::ALL.iter().map(|s| s.name()).collect();
                Error::InvalidParameter(format!(
                    "unknown stage {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Phantom inputs generated in-process instead of read from disk.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomInput {
    pub spec: PhantomSpec,
    /// Applied to the phantom chambers to mimic a chamber segmenter.
    pub degrade: DegradeSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshParams {
    pub smoothing_iterations: usize,
    pub smoothing_lambda: f64,
    /// Wall thickness of an extra hollow blood-pool shell, mm; 0 skips it.
    pub shell_thickness_mm: f64,
}

impl Default for MeshParams {
    fn default() -> Self {
        Self {
            smoothing_iterations: 0,
            smoothing_lambda: 0.5,
            shell_thickness_mm: 0.0,
        }
    }
}

impl MeshParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothing_lambda.is_finite() && (0.0..=1.0).contains(&self.smoothing_lambda)) {
            return Err(Error::InvalidParameter(format!(
                "mesh.smoothing_lambda must be in [0, 1], got {}",
                self.smoothing_lambda
            )));
        }
        if !(self.shell_thickness_mm.is_finite() && self.shell_thickness_mm >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "mesh.shell_thickness_mm must be >= 0, got {}",
                self.shell_thickness_mm
            )));
        }
        Ok(())
    }
}

/// Run configuration, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// CT intensity NIfTI; with `chambers`, the alternative to `phantom`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<PathBuf>,
    /// Chamber mask NIfTI (codes LV, RV, LA, RA, Myo) on the intensity grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chambers: Option<PathBuf>,
    /// Ground-truth labels for the Dice report; optional with file inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phantom: Option<PhantomInput>,
    /// Template JSON file, or "builtin".
    pub templates: String,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub segment: SegmentParams,
    #[serde(default)]
    pub graph: GraphParams,
    #[serde(default)]
    pub mesh: MeshParams,
    /// Last stage to run; all stages when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<Stage>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidParameter(m) => {
                Error::InvalidParameter(format!("{}: {m}", path.display()))
            }
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Checks inputs exist and every parameter block is valid.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match (&self.phantom, &self.intensity, &self.chambers) {
            (Some(_), None, None) => {}
            (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => {
                return bad("config: give either phantom or intensity + chambers, not both".into())
            }
            (None, None, _) => {
                return bad("config: missing field `intensity` (or `phantom`)".into())
            }
            (None, _, None) => return bad("config: missing field `chambers`".into()),
        }
        if let Some(p) = &self.phantom {
            p.spec.validate()?;
            p.degrade.validate()?;
            if self.truth.is_some() {
                return bad("config: `truth` comes from the phantom; leave it out".into());
            }
        }
        let files = [
            ("intensity", self.intensity.as_ref()),
            ("chambers", self.chambers.as_ref()),
            ("truth", self.truth.as_ref()),
        ];
        for (field, path) in files {
            if let Some(p) = path {
                if !p.is_file() {
                    return bad(format!(
                        "config: `{field}` file {} does not exist",
                        p.display()
                    ));
                }
            }
        }
        if self.templates.trim().is_empty() {
            return bad("config: `templates` is empty".into());
        }
        if self.templates != "builtin" && !Path::new(&self.templates).is_file() {
            return bad(format!(
                "config: `templates` file {} does not exist",
                self.templates
            ));
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("config: `output_dir` is empty".into());
        }
        self.segment.validate()?;
        self.graph.validate()?;
        self.mesh.validate()
    }

    fn runs(&self, stage: Stage) -> bool {
        self.stop_after.is_none_or(|last| stage <= last)
    }
}

/// A stage failure, tagged with the stage.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

#[derive(Debug)]
pub enum PipelineError {
    /// Bad config or inputs; nothing ran.
    Validation(Error),
    Stage(StageError),
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Validation(e) => write!(f, "invalid configuration: {e}"),
            PipelineError::Stage(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for PipelineError {}

/// What a run produced, besides the files.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub stages: Vec<Stage>,
    pub variant: Option<String>,
    pub edge_classes: Vec<EdgeClass>,
    pub metrics: Option<MetricsReport>,
    pub meshes: Vec<PathBuf>,
}

/// Contents of metrics.json.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub variant: String,
    pub match_cost: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<MetricsReport>,
}

struct Run<'a> {
    config: &'a PipelineConfig,
    dir: PathBuf,
    log: String,
    stages: Vec<Stage>,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn note(&mut self, stage: Stage, msg: impl AsRef<str>) {
        let _ = writeln!(self.log, "[{stage}] {}", msg.as_ref());
    }

    fn flush_log(&self) -> Result<()> {
        let p = self.path("run.log");
        std::fs::write(&p, &self.log).map_err(|e| Error::io(p, e))
    }

    fn stage<T>(
        &mut self,
        stage: Stage,
        f: impl FnOnce(&mut Self) -> Result<T>,
    ) -> std::result::Result<T, PipelineError> {
        let out = f(self).map_err(|source| {
            let _ = writeln!(self.log, "[{stage}] FAILED: {source}");
            let _ = self.flush_log();
            PipelineError::Stage(StageError { stage, source })
        })?;
        self.stages.push(stage);
        Ok(out)
    }
}

struct Inputs {
    intensity: IntensityVolume,
    chambers: LabelVolume,
    truth: Option<LabelVolume>,
}

fn load_inputs(config: &PipelineConfig, dir: &Path) -> Result<Inputs> {
    if let Some(p) = &config.phantom {
        let ph = generate_phantom(&p.spec)?;
        let chambers = degrade_labels(&ph.chambers, &p.degrade)?;
        write_nifti(&ph.intensity, dir.join("input_intensity.nii.gz"), true)?;
        write_nifti(&chambers, dir.join("input_chambers.nii.gz"), true)?;
        write_nifti(&ph.labels, dir.join("truth.nii.gz"), true)?;
        return Ok(Inputs {
            intensity: ph.intensity,
            chambers,
            truth: Some(ph.labels),
        });
    }
    let intensity = read_intensity(config.intensity.as_ref().expect("validated"))?;
    let chambers = read_labels(config.chambers.as_ref().expect("validated"))?;
    intensity.check_same_grid(&chambers)?;
    let truth = match &config.truth {
        Some(p) => {
            let t = read_labels(p)?;
            t.check_same_grid(&chambers)?;
            Some(t)
        }
        None => None,
    };
    Ok(Inputs {
        intensity,
        chambers,
        truth,
    })
}

fn templates_of(config: &PipelineConfig) -> Result<TemplateSet> {
    if config.templates == "builtin" {
        Ok(TemplateSet::builtin())
    } else {
        load_templates(&config.templates)
    }
}

/// Per-label surfaces of `labels`, smoothed as configured, one STL per
/// present substructure plus the optional blood-pool shell.
pub fn export_meshes(
    labels: &LabelVolume,
    params: &MeshParams,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    params.validate()?;
    let mut jobs: Vec<(String, crate::volume::Mask)> = Label::SUBSTRUCTURES
        .iter()
        .filter(|&&l| labels.count(l) > 0)
        .map(|&l| (format!("mesh_{}.stl", l.name()), labels.mask_of(l)))
        .collect();
    if params.shell_thickness_mm > 0.0 {
        let pool = labels.mask_where(|l| l.is_blood_pool());
        if pool.count_true() > 0 {
            jobs.push((
                "shell_blood_pool.stl".into(),
                make_shell(&pool, params.shell_thickness_mm)?,
            ));
        }
    }
    jobs.par_iter()
        .map(|(name, mask)| {
            let mesh = marching_cubes(mask)?
                .laplacian_smooth(params.smoothing_iterations, params.smoothing_lambda);
            let path = dir.join(name);
            write_stl(&mesh, &path)?;
            Ok(path)
        })
        .collect()
}

/// Runs the configured stages, writing every intermediate under
/// `config.output_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<RunSummary, PipelineError> {
    config.validate().map_err(PipelineError::Validation)?;
    let templates = templates_of(config).map_err(PipelineError::Validation)?;
    let dir = config.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| PipelineError::Validation(Error::io(&dir, e)))?;
    let mut run = Run {
        config,
        dir,
        log: String::new(),
        stages: Vec::new(),
    };
    let cfg_path = run.path("config.json");
    std::fs::write(&cfg_path, config.to_json())
        .map_err(|e| PipelineError::Validation(Error::io(cfg_path, e)))?;

    let inputs = load_inputs(config, &run.dir).map_err(|source| {
        run.note(Stage::Roi, format!("FAILED loading inputs: {source}"));
        let _ = run.flush_log();
        PipelineError::Stage(StageError {
            stage: Stage::Roi,
            source,
        })
    })?;
    let mut summary = RunSummary {
        stages: Vec::new(),
        variant: None,
        edge_classes: Vec::new(),
        metrics: None,
        meshes: Vec::new(),
    };

    let (bbox, roi) = run.stage(Stage::Roi, |r| {
        let (bbox, roi) = roi_crop(&inputs.intensity, &r.config.segment)?;
        write_nifti(&roi, r.path("roi_intensity.nii.gz"), true)?;
        let p = r.path("roi.json");
        std::fs::write(
            &p,
            serde_json::to_string_pretty(&bbox).expect("bbox serializes"),
        )
        .map_err(|e| Error::io(p, e))?;
        r.note(
            Stage::Roi,
            format!(
                "box {:?}..={:?}, {} voxels",
                bbox.min,
                bbox.max,
                roi.dims().len()
            ),
        );
        Ok((bbox, roi))
    })?;
    if !finish_if_done(&mut run, Stage::Roi, &mut summary)? {
        return Ok(summary);
    }

    let pool = run.stage(Stage::Pool, |r| {
        let pool = segment_blood_pool(&roi, &r.config.segment)?;
        write_nifti(&pool, r.path("pool.nii.gz"), true)?;
        r.note(
            Stage::Pool,
            format!(
                "{} pool voxels, {} boundary voxels",
                pool.count(Label::BloodPool),
                pool.count(Label::PoolBoundary)
            ),
        );
        Ok(pool)
    })?;
    if !finish_if_done(&mut run, Stage::Pool, &mut summary)? {
        return Ok(summary);
    }

    let refined = run.stage(Stage::Refine, |r| {
        let chambers = crop(&inputs.chambers, &bbox)?;
        let refined = refine_chambers(&chambers, &pool, r.config.segment.refine_cap_mm)?;
        write_nifti(&refined, r.path("refined.nii.gz"), true)?;
        let counts: Vec<String> = [
            Label::LV,
            Label::RV,
            Label::LA,
            Label::RA,
            Label::Myo,
            Label::VesselCandidate,
        ]
        .iter()
        .map(|&l| format!("{}={}", l.name(), refined.count(l)))
        .collect();
        r.note(Stage::Refine, counts.join(" "));
        Ok(refined)
    })?;
    if !finish_if_done(&mut run, Stage::Refine, &mut summary)? {
        return Ok(summary);
    }

    let skeleton = run.stage(Stage::Skeleton, |r| {
        let mask = vessel_mask(&refined, &r.config.graph)?;
        let skel = skeletonize(&mask)?;
        let as_labels = skel.to_mask().map(|b| {
            if b {
                Label::VesselCandidate
            } else {
                Label::Background
            }
        });
        write_nifti(&as_labels, r.path("skeleton.nii.gz"), true)?;
        r.note(
            Stage::Skeleton,
            format!(
                "{} candidate voxels after opening, {} skeleton voxels",
                mask.count_true(),
                skel.len()
            ),
        );
        Ok(skel)
    })?;
    if !finish_if_done(&mut run, Stage::Skeleton, &mut summary)? {
        return Ok(summary);
    }

    let graph = run.stage(Stage::Graph, |r| {
        let g = extract_graph(&skeleton, &refined, &r.config.graph)?;
        g.write(r.path("graph.json"))?;
        r.note(Stage::Graph, describe_graph(&g));
        Ok(g)
    })?;
    if !finish_if_done(&mut run, Stage::Graph, &mut summary)? {
        return Ok(summary);
    }

    let matched = run.stage(Stage::Match, |r| {
        let m = match_graph(&graph, &templates)?;
        m.write(r.path("match.json"))?;
        r.note(Stage::Match, describe_match(&m));
        Ok(m)
    })?;
    summary.variant = Some(matched.variant.clone());
    summary.edge_classes = matched.classes.clone();
    if !finish_if_done(&mut run, Stage::Match, &mut summary)? {
        return Ok(summary);
    }

    let labels = run.stage(Stage::Assign, |r| {
        let roi_labels = assign_vessel_labels(
            &refined.mask_of(Label::VesselCandidate),
            &graph,
            &matched,
            &refined,
        )?;
        let mut full = inputs.chambers.like(Label::Background);
        paste(&mut full, &roi_labels, bbox.min)?;
        write_nifti(&full, r.path("labels.nii.gz"), true)?;
        let counts: Vec<String> = Label::SUBSTRUCTURES
            .iter()
            .map(|&l| format!("{}={}", l.name(), full.count(l)))
            .collect();
        r.note(Stage::Assign, counts.join(" "));
        Ok(full)
    })?;
    if !finish_if_done(&mut run, Stage::Assign, &mut summary)? {
        return Ok(summary);
    }

    let metrics = run.stage(Stage::Report, |r| {
        let rep = inputs
            .truth
            .as_ref()
            .map(|t| report(&labels, t))
            .transpose()?;
        let out = RunMetrics {
            variant: matched.variant.clone(),
            match_cost: matched.cost.total,
            report: rep.clone(),
        };
        let p = r.path("metrics.json");
        std::fs::write(
            &p,
            serde_json::to_string_pretty(&out).expect("metrics serialize"),
        )
        .map_err(|e| Error::io(p, e))?;
        match &rep {
            Some(rep) => {
                let p = r.path("metrics.txt");
                std::fs::write(&p, rep.to_table()).map_err(|e| Error::io(p, e))?;
                r.note(Stage::Report, format!("mean Dice {:.4}", rep.mean_dice));
            }
            None => r.note(Stage::Report, "no truth given, Dice skipped"),
        }
        Ok(rep)
    })?;
    summary.metrics = metrics;
    if !finish_if_done(&mut run, Stage::Report, &mut summary)? {
        return Ok(summary);
    }

    let meshes = run.stage(Stage::Mesh, |r| {
        let paths = export_meshes(&labels, &r.config.mesh, &r.dir)?;
        let names: Vec<String> = paths
            .iter()
            .map(|p| {
                p.file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()
            })
            .collect();
        r.note(Stage::Mesh, names.join(" "));
        Ok(paths)
    })?;
    summary.meshes = meshes;
    finish_if_done(&mut run, Stage::Mesh, &mut summary)?;
    Ok(summary)
}

/// Records progress; false when the run should stop after `stage`.
fn finish_if_done(
    run: &mut Run,
    stage: Stage,
    summary: &mut RunSummary,
) -> std::result::Result<bool, PipelineError> {
    summary.stages = run.stages.clone();
    let go_on = stage != Stage::Mesh && run.config.runs(Stage::ALL[stage as usize + 1]);
    if !go_on {
        run.note(stage, "done");
        run.flush_log()
            .map_err(|source| PipelineError::Stage(StageError { stage, source }))?;
    }
    Ok(go_on)
}

fn describe_graph(g: &VesselGraph) -> String {
    let ports: Vec<String> = g
        .nodes
        .iter()
        .filter_map(|n| n.chamber.map(|c| format!("{}@{}", c.name(), n.id)))
        .collect();
    format!(
        "{} nodes, {} edges, ports {}",
        g.nodes.len(),
        g.edges.len(),
        ports.join(",")
    )
}

fn describe_match(m: &MatchResult) -> String {
    let classes: Vec<String> = m
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| format!("e{i}={c}"))
        .collect();
    format!(
        "variant {} cost {:.4} {}",
        m.variant,
        m.cost.total,
        classes.join(" ")
    )
}

/// Vessel graph of a phantom's ground truth: every blood-pool voxel outside
/// the chamber bodies is a vessel candidate.
pub fn truth_graph(phantom: &Phantom, params: &GraphParams) -> Result<VesselGraph> {
    let mut labels = phantom.chambers.clone();
    for (out, (&t, &c)) in labels
        .data_mut()
        .iter_mut()
        .zip(phantom.labels.data().iter().zip(phantom.chambers.data()))
    {
        if t.is_blood_pool() && !c.is_chamber() {
            *out = Label::VesselCandidate;
        }
    }
    let skel = skeletonize(&vessel_mask(&labels, params)?)?;
    extract_graph(&skel, &labels, params)
}

/// Bounding box JSON written by the RoI stage.
pub fn read_roi(path: impl AsRef<Path>) -> Result<BoundingBox> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
