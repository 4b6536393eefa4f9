//! Subcommand implementations. Each returns the bytes it would write, so
//! the binary and the tests share one code path.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use spsconv::backbone::{build_backbone, BackboneConfig, BackboneMode, StageStats};
use spsconv::pointfile::{read_points, write_points};
use spsconv::tensor::{voxelize, voxelize_with_assignment, SparseTensor, VoxelGridSpec};

use crate::config::Config;
use crate::error::{CliError, Result};
use crate::scene::{format_labels, generate, parse_labels, SceneSpec};

/// Sidecar label path used when `--labels` is not given.
pub fn default_labels_path(points: &Path) -> std::path::PathBuf {
    let mut s = points.as_os_str().to_owned();
    s.push(".labels");
    s.into()
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthSummary {
    pub scene: SceneSpec,
    pub points: usize,
    pub foreground_points: usize,
    pub foreground_fraction: f64,
}

pub fn cmd_synth(cfg: &Config, out: &Path, labels_out: &Path) -> Result<SynthSummary> {
    let spec = SceneSpec::new(cfg.grid()?.clone(), cfg.scene()?, cfg.backbone.seed);
    let scene = generate(&spec)?;
    write_points(out, &scene.cloud).map_err(|e| match e {
        spsconv::Error::Io(io) => CliError::io(out, io),
        other => other.into(),
    })?;
    std::fs::write(labels_out, format_labels(&scene.labels))
        .map_err(|e| CliError::io(labels_out, e))?;
    let fg = scene.labels.iter().filter(|&&l| l).count();
    Ok(SynthSummary {
        points: scene.labels.len(),
        foreground_points: fg,
        foreground_fraction: if scene.labels.is_empty() {
            0.0
        } else {
            fg as f64 / scene.labels.len() as f64
        },
        scene: spec,
    })
}

pub fn load_voxels(input: &Path, grid: &VoxelGridSpec) -> Result<SparseTensor> {
    let cloud = read_points(input).map_err(|e| io_context(input, e))?;
    Ok(voxelize(&cloud, grid)?)
}

fn io_context(path: &Path, e: spsconv::Error) -> CliError {
    match e {
        spsconv::Error::Io(io) => CliError::io(path, io),
        other => other.into(),
    }
}

/// `b,x,y,z,f0,...` rows in canonical order.
pub fn cmd_voxelize(cfg: &Config, input: &Path) -> Result<String> {
    let t = load_voxels(input, cfg.grid()?)?;
    let mut s = String::from("b,x,y,z");
    for c in 0..t.channels() {
        let _ = write!(s, ",f{c}");
    }
    s.push('\n');
    for (row, c) in t.coords().iter().enumerate() {
        let _ = write!(s, "{},{},{},{}", c.b, c.x, c.y, c.z);
        for f in t.row(row) {
            let _ = write!(s, ",{f}");
        }
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackboneRun {
    pub stages: Vec<StageStats>,
    pub total_flops: u64,
    pub output_voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: Config,
    pub seed: u64,
    pub input_voxels: usize,
    pub baseline: BackboneRun,
    pub pruned: BackboneRun,
    /// `1 - pruned.total_flops / baseline.total_flops`.
    pub reduction: f64,
}

pub fn run_backbone(cfg: &BackboneConfig, t: &SparseTensor) -> Result<BackboneRun> {
    let bb = build_backbone(cfg)?;
    let (out, stages) = bb.forward(t)?;
    Ok(BackboneRun {
        total_flops: stages.iter().map(|s| s.conv_flops).sum(),
        output_voxels: out.len(),
        stages,
    })
}

pub fn reduction(baseline: u64, pruned: u64) -> f64 {
    if baseline == 0 {
        0.0
    } else {
        1.0 - pruned as f64 / baseline as f64
    }
}

/// Baseline and pruned backbones on the same voxelized input.
pub fn run_report(cfg: &Config, t: &SparseTensor) -> Result<RunReport> {
    let base_cfg = BackboneConfig {
        mode: BackboneMode::Baseline,
        ..cfg.backbone.clone()
    };
    let pruned_cfg = BackboneConfig {
        mode: BackboneMode::Pruned,
        ..cfg.backbone.clone()
    };
    let baseline = run_backbone(&base_cfg, t)?;
    let pruned = run_backbone(&pruned_cfg, t)?;
    let reduction = reduction(baseline.total_flops, pruned.total_flops);
    Ok(RunReport {
        config: cfg.clone(),
        seed: cfg.backbone.seed,
        input_voxels: t.len(),
        baseline,
        pruned,
        reduction,
    })
}

pub fn cmd_run(cfg: &Config, input: &Path) -> Result<String> {
    let t = load_voxels(input, cfg.grid()?)?;
    let report = run_report(cfg, &t)?;
    Ok(to_json(&report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub baseline_flops: u64,
    /// SPSS at `ratio`, SPRS at 0.
    pub spss_flops: u64,
    /// FLOPs of the SPSS layers alone in the SPSS-only network.
    pub spss_subm_flops: u64,
    /// SPRS at `ratio`, SPSS at 0.
    pub sprs_flops: u64,
    pub both_flops: u64,
}

pub fn sweep_rows(cfg: &BackboneConfig, t: &SparseTensor, ratios: &[f64]) -> Result<Vec<SweepRow>> {
    let base = run_backbone(
        &BackboneConfig {
            mode: BackboneMode::Baseline,
            ..cfg.clone()
        },
        t,
    )?;
    let pruned = BackboneConfig {
        mode: BackboneMode::Pruned,
        ..cfg.clone()
    };
    ratios
        .iter()
        .map(|&r| {
            let spss = run_backbone(&pruned.with_ratios(r, 0.0), t)?;
            let sprs = run_backbone(&pruned.with_ratios(0.0, r), t)?;
            let both = run_backbone(&pruned.with_ratios(r, r), t)?;
            let spss_subm_flops = spss
                .stages
                .iter()
                .flat_map(|s| &s.layers)
                .filter(|l| l.op == "spss")
                .map(|l| l.flops)
                .sum();
            Ok(SweepRow {
                ratio: r,
                baseline_flops: base.total_flops,
                spss_flops: spss.total_flops,
                spss_subm_flops,
                sprs_flops: sprs.total_flops,
                both_flops: both.total_flops,
            })
        })
        .collect()
}

pub fn format_sweep(rows: &[SweepRow]) -> String {
    let mut s =
        String::from("ratio,baseline_flops,spss_flops,spss_subm_flops,sprs_flops,both_flops\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.ratio, r.baseline_flops, r.spss_flops, r.spss_subm_flops, r.sprs_flops, r.both_flops
        );
    }
    s
}

pub fn cmd_sweep(cfg: &Config, input: &Path, ratios: &[f64]) -> Result<String> {
    let t = load_voxels(input, cfg.grid()?)?;
    Ok(format_sweep(&sweep_rows(&cfg.backbone, &t, ratios)?))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageForeground {
    pub name: String,
    pub voxels: usize,
    pub foreground_voxels: usize,
    pub foreground_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub config: Config,
    pub points: usize,
    pub foreground_points: usize,
    pub stages: Vec<StageForeground>,
}

fn stage_fg(name: &str, labels: &[bool]) -> StageForeground {
    let fg = labels.iter().filter(|&&l| l).count();
    StageForeground {
        name: name.into(),
        voxels: labels.len(),
        foreground_voxels: fg,
        foreground_fraction: if labels.is_empty() {
            0.0
        } else {
            fg as f64 / labels.len() as f64
        },
    }
}

/// Foreground fraction at the input and after every baseline stage.
///
/// A voxel is foreground if any point in it is. Submanifold layers keep
/// labels; a voxel created by a downsampling layer is foreground if any
/// input in its kernel window was.
pub fn stats_report(
    cfg: &Config,
    cloud_points: &spsconv::tensor::PointCloud,
    point_labels: &[bool],
) -> Result<StatsReport> {
    if point_labels.len() != cloud_points.len() {
        return Err(CliError::Input(format!(
            "{} labels for {} points",
            point_labels.len(),
            cloud_points.len()
        )));
    }
    let (t, assignment) = voxelize_with_assignment(cloud_points, cfg.grid()?)?;
    let mut labels = vec![false; t.len()];
    for (row, &l) in assignment.iter().zip(point_labels) {
        if let (Some(r), true) = (row, l) {
            labels[*r] = true;
        }
    }

    let base_cfg = BackboneConfig {
        mode: BackboneMode::Baseline,
        ..cfg.backbone.clone()
    };
    let trace = build_backbone(&base_cfg)?.forward_traced(&t)?;
    let mut stages = vec![stage_fg("input", &labels)];
    for (st, rbs) in trace.stats.iter().zip(&trace.rulebooks) {
        for rb in rbs {
            if rb.mode() == spsconv::rulebook::ConvMode::Regular {
                let mut next = vec![false; rb.n_out()];
                for (_, i, o) in rb.iter() {
                    next[o] |= labels[i];
                }
                labels = next;
            }
        }
        stages.push(stage_fg(&st.name, &labels));
    }
    Ok(StatsReport {
        config: cfg.clone(),
        points: cloud_points.len(),
        foreground_points: point_labels.iter().filter(|&&l| l).count(),
        stages,
    })
}

pub fn cmd_stats(cfg: &Config, input: &Path, labels: &Path) -> Result<String> {
    let cloud = read_points(input).map_err(|e| io_context(input, e))?;
    let src = std::fs::read_to_string(labels).map_err(|e| CliError::io(labels, e))?;
    let point_labels = parse_labels(&src)?;
    Ok(to_json(&stats_report(cfg, &cloud, &point_labels)?))
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}
