//! `chdseg`: phantom generation, the individual pipeline stages, and full
//! runs driven by a JSON config.
//!
//! Exit codes: 0 success, 1 usage or validation error, 2 stage failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use chdseg::graph::{extract_graph, vessel_mask, GraphParams, VesselGraph};
use chdseg::matching::{load_templates, match_graph, MatchResult, TemplateSet};
use chdseg::metrics::{assign_vessel_labels, report, summarize, MetricsReport};
use chdseg::nifti::{read_intensity, read_labels, write_nifti};
use chdseg::phantom::{degrade_labels, generate_phantom, DegradeSpec, PhantomSpec, Variant};
use chdseg::pipeline::{
    export_meshes, read_roi, run_pipeline, truth_graph, MeshParams, PipelineConfig, PipelineError,
    Stage,
};
use chdseg::segment::{refine_chambers, roi_crop, segment_blood_pool, SegmentParams};
use chdseg::skeleton::skeletonize;
use chdseg::{paste, Label};

#[derive(Parser)]
#[command(
    name = "chdseg",
    version,
    about = "Whole-heart substructure labeling from CT and chamber masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom with ground truth.
    Phantom(PhantomArgs),
    /// RoI crop, blood-pool segmentation and chamber refinement.
    Segment(SegmentArgs),
    /// Skeletonize vessel candidates and extract the vessel graph.
    Graph(GraphArgs),
    /// Match a vessel graph against templates, optionally labeling vessels.
    Match(MatchArgs),
    /// Per-class Dice of predicted against truth label maps.
    Evaluate(EvaluateArgs),
    /// Export per-label STL surfaces.
    Mesh(MeshArgs),
    /// Run every stage from a JSON config.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// normal, tga, cat or pua
    #[arg(long, value_parser = parse_variant)]
    variant: Variant,
    /// One size for a cube, or three comma-separated sizes.
    #[arg(long, value_delimiter = ',', num_args = 1..=3, default_value = "128")]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    spacing: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0.0)]
    vsd_radius: f64,
    /// Boundary jitter applied to chambers.nii.gz, mm.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    intensity: PathBuf,
    #[arg(long)]
    chambers: PathBuf,
    /// SegmentParams JSON; defaults when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GraphArgs {
    /// Refined label volume from `segment`.
    #[arg(long)]
    refined: PathBuf,
    /// GraphParams JSON; defaults when absent.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    graph: PathBuf,
    /// Template JSON, or "builtin".
    #[arg(long, default_value = "builtin")]
    templates: String,
    /// Refined volume the graph came from; enables vessel labeling.
    #[arg(long)]
    refined: Option<PathBuf>,
    /// RoI box from `segment`; with --reference, pastes labels onto the full grid.
    #[arg(long, requires = "reference", requires = "refined")]
    roi: Option<PathBuf>,
    /// Any volume on the full input grid.
    #[arg(long, requires = "roi")]
    reference: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predicted labels; repeat together with --truth for a cohort.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    /// Also write the reports as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct MeshArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = 0)]
    smoothing_iterations: usize,
    #[arg(long, default_value_t = 0.5)]
    smoothing_lambda: f64,
    /// Wall thickness of a hollow blood-pool shell, mm; 0 skips it.
    #[arg(long, default_value_t = 0.0)]
    shell_thickness: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `stop_after`.
    #[arg(long, value_parser = parse_stage)]
    stop_after: Option<Stage>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: chdseg::Error| e.to_string())
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse().map_err(|e: chdseg::Error| e.to_string())
}

enum Failure {
    Invalid(String),
    Stage(String),
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

fn stage(name: &'static str) -> impl Fn(chdseg::Error) -> Failure {
    move |e| Failure::Stage(format!("stage {name} failed: {e}"))
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text =
        std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn out_dir(path: &Path) -> Outcome {
    std::fs::create_dir_all(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Stage(format!("{}: {e}", path.display())))
}

fn cmd_phantom(a: &PhantomArgs) -> Outcome {
    let dims = match a.dims[..] {
        [n] => [n; 3],
        [x, y, z] => [x, y, z],
        _ => return Err(invalid("--dims takes one or three sizes")),
    };
    let spec = PhantomSpec {
        variant: a.variant,
        dims,
        spacing: [a.spacing; 3],
        seed: a.seed,
        scale: a.scale,
        vsd_radius_mm: a.vsd_radius,
    };
    spec.validate().map_err(invalid)?;
    let degrade = DegradeSpec::jitter(a.jitter, a.seed);
    degrade.validate().map_err(invalid)?;
    out_dir(&a.out)?;
    let p = generate_phantom(&spec).map_err(stage("phantom"))?;
    let chambers = degrade_labels(&p.chambers, &degrade).map_err(stage("phantom"))?;
    let graph = truth_graph(&p, &GraphParams::default()).map_err(stage("phantom"))?;
    write_nifti(&p.intensity, a.out.join("intensity.nii.gz"), true).map_err(stage("phantom"))?;
    write_nifti(&p.labels, a.out.join("labels.nii.gz"), true).map_err(stage("phantom"))?;
    write_nifti(&chambers, a.out.join("chambers.nii.gz"), true).map_err(stage("phantom"))?;
    graph
        .write(a.out.join("graph.json"))
        .map_err(stage("phantom"))?;
    println!(
        "{} phantom {:?}, {} graph nodes, {} edges -> {}",
        spec.variant,
        spec.dims,
        graph.nodes.len(),
        graph.edges.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_segment(a: &SegmentArgs) -> Outcome {
    let params: SegmentParams = read_json(a.params.as_deref())?;
    params.validate().map_err(invalid)?;
    let intensity = read_intensity(&a.intensity).map_err(invalid)?;
    let chambers = read_labels(&a.chambers).map_err(invalid)?;
    intensity.check_same_grid(&chambers).map_err(invalid)?;
    out_dir(&a.out)?;

    let (bbox, roi) = roi_crop(&intensity, &params).map_err(stage("roi"))?;
    write_nifti(&roi, a.out.join("roi_intensity.nii.gz"), true).map_err(stage("roi"))?;
    write_text(
        &a.out.join("roi.json"),
        &serde_json::to_string_pretty(&bbox).expect("bbox serializes"),
    )?;
    let pool = segment_blood_pool(&roi, &params).map_err(stage("pool"))?;
    write_nifti(&pool, a.out.join("pool.nii.gz"), true).map_err(stage("pool"))?;
    let cropped = chdseg::crop(&chambers, &bbox).map_err(stage("refine"))?;
    let refined =
        refine_chambers(&cropped, &pool, params.refine_cap_mm).map_err(stage("refine"))?;
    write_nifti(&refined, a.out.join("refined.nii.gz"), true).map_err(stage("refine"))?;
    println!(
        "roi {:?}..={:?}, {} pool voxels, {} vessel candidates -> {}",
        bbox.min,
        bbox.max,
        pool.count(Label::BloodPool),
        refined.count(Label::VesselCandidate),
        a.out.display()
    );
    Ok(())
}

fn cmd_graph(a: &GraphArgs) -> Outcome {
    let params: GraphParams = read_json(a.params.as_deref())?;
    params.validate().map_err(invalid)?;
    let refined = read_labels(&a.refined).map_err(invalid)?;
    out_dir(&a.out)?;
    let mask = vessel_mask(&refined, &params).map_err(stage("skeleton"))?;
    let skel = skeletonize(&mask).map_err(stage("skeleton"))?;
    let skel_labels = skel.to_mask().map(|b| {
        if b {
            Label::VesselCandidate
        } else {
            Label::Background
        }
    });
    write_nifti(&skel_labels, a.out.join("skeleton.nii.gz"), true).map_err(stage("skeleton"))?;
    let graph = extract_graph(&skel, &refined, &params).map_err(stage("graph"))?;
    graph
        .write(a.out.join("graph.json"))
        .map_err(stage("graph"))?;
    println!(
        "{} skeleton voxels, {} nodes, {} edges",
        skel.len(),
        graph.nodes.len(),
        graph.edges.len()
    );
    Ok(())
}

fn cmd_match(a: &MatchArgs) -> Outcome {
    let templates = if a.templates == "builtin" {
        TemplateSet::builtin()
    } else {
        load_templates(&a.templates).map_err(invalid)?
    };
    let graph = VesselGraph::read(&a.graph).map_err(invalid)?;
    graph.validate().map_err(invalid)?;
    let refined = a
        .refined
        .as_ref()
        .map(read_labels)
        .transpose()
        .map_err(invalid)?;
    out_dir(&a.out)?;

    let m = match_graph(&graph, &templates).map_err(stage("match"))?;
    m.write(a.out.join("match.json")).map_err(stage("match"))?;
    print_match(&m);

    if let Some(refined) = refined {
        let candidates = refined.mask_of(Label::VesselCandidate);
        let mut labels =
            assign_vessel_labels(&candidates, &graph, &m, &refined).map_err(stage("assign"))?;
        if let (Some(roi), Some(reference)) = (&a.roi, &a.reference) {
            let bbox = read_roi(roi).map_err(invalid)?;
            let reference = read_labels(reference)
                .map(|v| v.like(Label::Background))
                .or_else(|_| read_intensity(reference).map(|v| v.like(Label::Background)))
                .map_err(invalid)?;
            let mut full = reference;
            paste(&mut full, &labels, bbox.min).map_err(stage("assign"))?;
            labels = full;
        }
        write_nifti(&labels, a.out.join("labels.nii.gz"), true).map_err(stage("assign"))?;
    }
    Ok(())
}

fn print_match(m: &MatchResult) {
    println!("variant {} (cost {:.4})", m.variant, m.cost.total);
    for (i, c) in m.classes.iter().enumerate() {
        println!("  edge {i}: {c}");
    }
}

fn cmd_evaluate(a: &EvaluateArgs) -> Outcome {
    if a.pred.len() != a.truth.len() {
        return Err(invalid(format!(
            "--pred given {} times but --truth {} times",
            a.pred.len(),
            a.truth.len()
        )));
    }
    let mut reports: Vec<MetricsReport> = Vec::new();
    for (p, t) in a.pred.iter().zip(&a.truth) {
        let pred = read_labels(p).map_err(invalid)?;
        let truth = read_labels(t).map_err(invalid)?;
        pred.check_same_grid(&truth).map_err(invalid)?;
        let r = report(&pred, &truth).map_err(stage("report"))?;
        println!("{}", p.display());
        print!("{}", r.to_table());
        reports.push(r);
    }
    let cohort = (reports.len() > 1).then(|| summarize(&reports));
    if let Some(c) = &cohort {
        println!("cohort of {}: mean ± sample std", c.cases);
        for (l, m, s) in &c.classes {
            println!("{:<6} {:.4} ± {:.4}", l.name(), m, s);
        }
        println!("{:<6} {:.4} ± {:.4}", "mean", c.mean_dice.0, c.mean_dice.1);
    }
    if let Some(path) = &a.json {
        let doc = serde_json::json!({ "cases": reports, "cohort": cohort });
        write_text(
            path,
            &serde_json::to_string_pretty(&doc).expect("reports serialize"),
        )?;
    }
    Ok(())
}

fn cmd_mesh(a: &MeshArgs) -> Outcome {
    let params = MeshParams {
        smoothing_iterations: a.smoothing_iterations,
        smoothing_lambda: a.smoothing_lambda,
        shell_thickness_mm: a.shell_thickness,
    };
    params.validate().map_err(invalid)?;
    let labels = read_labels(&a.labels).map_err(invalid)?;
    out_dir(&a.out)?;
    let paths = export_meshes(&labels, &params, &a.out).map_err(stage("mesh"))?;
    for p in paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_pipeline(a: &PipelineArgs) -> Outcome {
    let mut config = PipelineConfig::read(&a.config).map_err(invalid)?;
    if a.stop_after.is_some() {
        config.stop_after = a.stop_after;
    }
    if let Some(dir) = &a.output_dir {
        config.output_dir = dir.clone();
    }
    match run_pipeline(&config) {
        Ok(s) => {
            let last = s.stages.last().map_or("none", |st| st.name());
            println!(
                "completed through {last} -> {}",
                config.output_dir.display()
            );
            if let Some(v) = &s.variant {
                println!("variant {v}");
            }
            if let Some(m) = &s.metrics {
                print!("{}", m.to_table());
            }
            Ok(())
        }
        Err(PipelineError::Validation(e)) => Err(invalid(e)),
        Err(e @ PipelineError::Stage(_)) => Err(Failure::Stage(e.to_string())),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Segment(a) => cmd_segment(a),
        Command::Graph(a) => cmd_graph(a),
        Command::Match(a) => cmd_match(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Mesh(a) => cmd_mesh(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
