use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;

use mrae_core::backbone::{random_level, BackboneConfig, Level};
use mrae_core::checks::gradient_suite;
use mrae_core::data::{
    cluster_anchors as cluster, filter_dataset, generate_synthetic, parse_coco, size_histogram, HistogramBins,
    SyntheticConfig,
};
use mrae_core::fusion::FusionMode;
use mrae_core::tensor::Real;
use mrae_core::train::{train as run_training, Evaluation, LrSchedule, TemplateSwitch, TrainConfig, TrainOutcome};
use mrae_core::Error;

use crate::output::{csv_bytes, json_bytes, manifest_path, write_atomic, RunManifest};
use crate::{
    AnchorArgs, CompareArgs, FilterArgs, FusionKind, GradcheckArgs, HistogramArgs, Precision, TableFormat, TrainArgs,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numerical,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numerical => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

fn fail(kind: Kind, error: impl Into<anyhow::Error>) -> Failure {
    Failure { kind, error: error.into() }
}

fn usage(msg: impl Into<String>) -> Failure {
    fail(Kind::Usage, anyhow!(msg.into()))
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Config(_) => Kind::Usage,
            Error::Parse { .. } | Error::Io { .. } | Error::Data(_) => Kind::Data,
            Error::NonFiniteLoss { .. } | Error::Tensor(_) => Kind::Numerical,
        };
        fail(kind, e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        fail(Kind::Data, e)
    }
}

type CmdResult = Result<(), Failure>;

fn finite_non_negative(name: &str, v: f64) -> Result<(), Failure> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(usage(format!("--{name} must be finite and non-negative, got {v}")))
    }
}

pub fn filter_coco(a: FilterArgs) -> CmdResult {
    let started = Utc::now();
    finite_non_negative("max-area", a.max_area)?;
    let dataset = parse_coco(&a.input)?;
    let (subset, stats) = filter_dataset(&dataset, a.max_area)?;
    write_atomic(&a.out, subset.to_json_string()?.as_bytes())?;
    let mut manifest = RunManifest::new(
        "filter-coco",
        json!({ "in": a.input, "out": a.out, "max_area": a.max_area, "stats": stats }),
        None,
        started,
    );
    manifest.outputs.push(a.out.clone());
    manifest.write(&manifest_path(&a.out))?;
    println!(
        "retained {} / dropped {} annotations; retained {} / dropped {} images",
        stats.annotations_retained, stats.annotations_dropped, stats.images_retained, stats.images_dropped
    );
    Ok(())
}

#[derive(Serialize)]
struct AnchorRow {
    kind: &'static str,
    index: usize,
    value: f64,
}

pub fn cluster_anchors(a: AnchorArgs) -> CmdResult {
    let started = Utc::now();
    if a.scales == 0 || a.ratios == 0 {
        return Err(usage("--scales and --ratios must be positive"));
    }
    let annotations = parse_coco(&a.input)?.typed_annotations()?;
    let fit = cluster(&annotations, a.scales, a.ratios, a.seed)?;
    let bytes = match a.format {
        TableFormat::Json => json_bytes(&json!({
            "scales": fit.anchors.scales,
            "ratios": fit.anchors.ratios,
            "degenerate": fit.anchors.degenerate,
            "scale_wcss": fit.scale_fit.wcss_history,
            "ratio_wcss": fit.ratio_fit.wcss_history,
        }))?,
        TableFormat::Csv => {
            let rows: Vec<AnchorRow> = fit
                .anchors
                .scales
                .iter()
                .enumerate()
                .map(|(index, &value)| AnchorRow { kind: "scale", index, value })
                .chain(fit.anchors.ratios.iter().enumerate().map(|(index, &value)| AnchorRow { kind: "ratio", index, value }))
                .collect();
            csv_bytes(&rows, &["kind", "index", "value"])?
        }
    };
    write_atomic(&a.out, &bytes)?;
    let mut manifest = RunManifest::new(
        "cluster-anchors",
        json!({ "in": a.input, "out": a.out, "scales": a.scales, "ratios": a.ratios, "format": format!("{:?}", a.format).to_lowercase() }),
        Some(a.seed),
        started,
    );
    manifest.outputs.push(a.out.clone());
    manifest.write(&manifest_path(&a.out))?;
    if fit.anchors.degenerate {
        eprintln!("warning: fewer distinct values than clusters; centroids repeat");
    }
    println!("scales {:?}", fit.anchors.scales);
    println!("ratios {:?}", fit.anchors.ratios);
    Ok(())
}

pub fn histogram(a: HistogramArgs) -> CmdResult {
    let started = Utc::now();
    let bins = HistogramBins { bin_width: a.bin_width, bins: a.bins };
    bins.validate()?;
    let annotations = parse_coco(&a.input)?.typed_annotations()?;
    let hist = size_histogram(&annotations, bins)?;
    let bytes = csv_bytes(&hist.rows(), &["w_bin", "h_bin", "w_lo", "w_hi", "h_lo", "h_hi", "count"])?;
    write_atomic(&a.out, &bytes)?;
    let mut manifest =
        RunManifest::new("histogram", json!({ "in": a.input, "out": a.out, "bins": bins }), None, started);
    manifest.outputs.push(a.out.clone());
    manifest.write(&manifest_path(&a.out))?;
    println!("{} annotations in {}x{} bins", hist.total(), a.bins, a.bins);
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let started = Utc::now();
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(usage(format!("--eps must be positive, got {}", a.eps)));
    }
    if a.tol.is_nan() || a.tol < 0.0 {
        return Err(usage(format!("--tol must be non-negative, got {}", a.tol)));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let mut entries = Vec::new();
    for seed in a.seed..a.seed + a.seeds {
        entries.extend(gradient_suite(seed, a.eps, a.tol)?);
    }
    println!("{:<46} {:>5} {:>7} {:>12}  result", "check", "seed", "coords", "max rel err");
    for e in &entries {
        println!(
            "{:<46} {:>5} {:>7} {:>12.3e}  {}",
            e.name,
            e.seed,
            e.coords_checked,
            e.max_rel_error,
            if e.passed { "pass" } else { "FAIL" }
        );
    }
    if let Some(out) = &a.out {
        write_atomic(out, &csv_bytes(&entries, &["name", "seed", "coords_checked", "max_rel_error", "passed"])?)?;
        let mut manifest = RunManifest::new(
            "gradcheck",
            json!({ "seeds": a.seeds, "eps": a.eps, "tol": a.tol, "out": out }),
            Some(a.seed),
            started,
        );
        manifest.outputs.push(out.clone());
        manifest.write(&manifest_path(out))?;
    }
    let failed = entries.iter().filter(|e| !e.passed).count();
    if failed > 0 {
        return Err(fail(Kind::Numerical, anyhow!("{failed} of {} gradient checks failed", entries.len())));
    }
    println!("all {} checks passed", entries.len());
    Ok(())
}

/// Seed of the held-out evaluation images.
fn validation_seed(seed: u64) -> u64 {
    seed ^ 0x7661_6c69_6461_7465
}

fn resolve_mode(a: &TrainArgs) -> Result<FusionMode, Failure> {
    let level = |n: u8, flag: &str| Level::try_from(n).map_err(|_| usage(format!("--{flag} must be 1, 2 or 3, got {n}")));
    match a.fusion {
        FusionKind::Soft | FusionKind::Hard if a.template.is_some() => {
            Err(usage("--template is only valid with --fusion mrae"))
        }
        FusionKind::Soft | FusionKind::Mrae if a.hard_level.is_some() => {
            Err(usage("--hard-level is only valid with --fusion hard"))
        }
        _ if a.switch_template.is_some() && !matches!(a.fusion, FusionKind::Mrae) => {
            Err(usage("--switch-template is only valid with --fusion mrae"))
        }
        FusionKind::Soft => Ok(FusionMode::Soft),
        FusionKind::Mrae => {
            let t = a.template.ok_or_else(|| usage("--fusion mrae needs --template 1, 2 or 3"))?;
            Ok(FusionMode::Mrae { template: level(t, "template")? })
        }
        FusionKind::Hard => {
            let spec = a.hard_level.as_deref().ok_or_else(|| usage("--fusion hard needs --hard-level 1, 2, 3 or random"))?;
            let lvl = match spec {
                "random" => random_level(a.seed),
                n => level(n.parse().map_err(|_| usage(format!("--hard-level {n:?} is not 1, 2, 3 or random")))?, "hard-level")?,
            };
            Ok(FusionMode::Hard { level: lvl })
        }
    }
}

/// Deterministic run summary written as `summary.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub fusion: String,
    pub steps: usize,
    pub seed: u64,
    pub precision: String,
    pub n_images: usize,
    pub val_images: usize,
    pub val_seed: u64,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub evaluation: Evaluation,
    pub config: TrainConfig,
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    loss: f64,
    a1: f64,
    a2: f64,
    a3: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Timing {
    mean_ms_per_step: f64,
    ms_per_step: Vec<f64>,
}

pub fn train(a: TrainArgs) -> CmdResult {
    let started = Utc::now();
    let fusion = resolve_mode(&a)?;
    let mut cfg = TrainConfig::new(fusion, a.steps, a.seed);
    cfg.momentum = a.momentum;
    if let Some(sw) = &a.switch_template {
        cfg.switch_template_at = Some(sw.parse::<TemplateSwitch>()?);
    }
    if let Some(s) = &a.lr_schedule {
        cfg.lr_schedule = LrSchedule::parse(s)?;
    }
    if let Some(path) = &a.backbone_config {
        let seed = cfg.model.backbone.seed;
        cfg.model.backbone = BackboneConfig { seed, ..BackboneConfig::load(path)? };
    }
    cfg.validate()?;
    if a.val_images == 0 {
        return Err(usage("--val-images must be at least 1"));
    }
    if a.n_images == 0 && a.steps > 0 {
        return Err(usage("--n-images must be at least 1 when training"));
    }
    let synth = SyntheticConfig {
        n_images: a.n_images.max(1),
        objects_per_image: a.objects_per_image,
        n_classes: cfg.model.n_classes,
        seed: a.seed,
        ..SyntheticConfig::default()
    };
    let data = generate_synthetic(&synth)?;
    let val_seed = validation_seed(a.seed);
    let val = generate_synthetic(&SyntheticConfig { n_images: a.val_images, seed: val_seed, ..synth.clone() })?;

    let (report, ms) = match a.precision {
        Precision::F64 => outcome_parts(run_training::<f64>(&cfg, &data, Some(&val))?),
        Precision::F32 => outcome_parts(run_training::<f32>(&cfg, &data, Some(&val))?),
    };
    let evaluation = report.evaluation.ok_or_else(|| fail(Kind::Data, anyhow!("evaluation missing")))?;

    let rows: Vec<StepRow> = report
        .losses
        .iter()
        .zip(&report.weights)
        .enumerate()
        .map(|(step, (&loss, w))| StepRow { step, loss, a1: w.0[0], a2: w.0[1], a3: w.0[2] })
        .collect();
    let summary = Summary {
        fusion: report.fusion.clone(),
        steps: report.len(),
        seed: a.seed,
        precision: format!("{:?}", a.precision).to_lowercase(),
        n_images: synth.n_images,
        val_images: a.val_images,
        val_seed,
        first_loss: report.losses.first().copied(),
        final_loss: report.final_loss,
        evaluation,
        config: cfg.clone(),
    };
    let timing = Timing { mean_ms_per_step: mean(&ms), ms_per_step: ms };

    let out = &a.out;
    let files = [
        (out.join("report.csv"), csv_bytes(&rows, &["step", "loss", "a1", "a2", "a3"])?),
        (out.join("summary.json"), json_bytes(&summary)?),
        (out.join("timing.json"), json_bytes(&timing)?),
    ];
    for (path, bytes) in &files {
        write_atomic(path, bytes)?;
    }
    let mut manifest = RunManifest::new(
        "train",
        serde_json::to_value(json!({ "train": cfg, "synthetic": synth, "val_images": a.val_images, "val_seed": val_seed, "precision": summary.precision }))
            .map_err(anyhow::Error::from)?,
        Some(a.seed),
        started,
    );
    manifest.outputs = files.iter().map(|(p, _)| p.clone()).collect();
    manifest.write(&out.join("manifest.json"))?;

    println!(
        "{}: {} steps, final loss {}, localization {:.4} ({}/{}), mean weights [{:.4}, {:.4}, {:.4}], {:.2} ms/step",
        summary.fusion,
        summary.steps,
        summary.final_loss.map_or("n/a".into(), |l| format!("{l:.6}")),
        evaluation.localization_score,
        evaluation.hits,
        evaluation.targets,
        evaluation.mean_weights[0],
        evaluation.mean_weights[1],
        evaluation.mean_weights[2],
        timing.mean_ms_per_step,
    );
    Ok(())
}

fn outcome_parts<T: Real>(o: TrainOutcome<T>) -> (mrae_core::train::TrainReport, Vec<f64>) {
    (o.report, o.ms_per_step)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Serialize)]
struct CompareRow {
    run: String,
    fusion: String,
    steps: usize,
    seed: u64,
    final_loss: Option<f64>,
    localization_score: f64,
    a1: f64,
    a2: f64,
    a3: f64,
    ms_per_step: Option<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn compare_row(dir: &Path) -> anyhow::Result<CompareRow> {
    let summary_path = dir.join("summary.json");
    if !summary_path.is_file() {
        return Err(anyhow!("{} holds no training report (summary.json missing)", dir.display()));
    }
    let s: Summary = read_json(&summary_path)?;
    let timing = dir.join("timing.json");
    let ms = if timing.is_file() { Some(read_json::<Timing>(&timing)?.mean_ms_per_step) } else { None };
    let w = s.evaluation.mean_weights;
    Ok(CompareRow {
        run: dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned()),
        fusion: s.fusion,
        steps: s.steps,
        seed: s.seed,
        final_loss: s.final_loss,
        localization_score: s.evaluation.localization_score,
        a1: w[0],
        a2: w[1],
        a3: w[2],
        ms_per_step: ms,
    })
}

const COMPARE_HEADER: [&str; 10] =
    ["run", "fusion", "steps", "seed", "final_loss", "localization_score", "a1", "a2", "a3", "ms_per_step"];

pub fn compare(a: CompareArgs) -> CmdResult {
    let started = Utc::now();
    let rows = a.reports.iter().map(|d| compare_row(d)).collect::<anyhow::Result<Vec<_>>>()?;
    write_atomic(&a.out, &csv_bytes(&rows, &COMPARE_HEADER)?)?;
    let mut outputs = vec![a.out.clone()];
    if let Some(md) = &a.markdown {
        let mut text = format!("| {} |\n|{}\n", COMPARE_HEADER.join(" | "), "---|".repeat(COMPARE_HEADER.len()));
        let opt = |v: Option<f64>, prec: usize| v.map_or("".to_string(), |x| format!("{x:.prec$}"));
        for r in &rows {
            let _ = writeln!(
                text,
                "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {} |",
                r.run,
                r.fusion,
                r.steps,
                r.seed,
                opt(r.final_loss, 6),
                r.localization_score,
                r.a1,
                r.a2,
                r.a3,
                opt(r.ms_per_step, 2)
            );
        }
        write_atomic(md, text.as_bytes())?;
        outputs.push(md.clone());
    }
    let mut manifest = RunManifest::new("compare", json!({ "reports": a.reports, "out": a.out, "markdown": a.markdown }), None, started);
    manifest.outputs = outputs;
    manifest.write(&manifest_path(&a.out))?;
    println!("{} reports merged", rows.len());
    Ok(())
}

