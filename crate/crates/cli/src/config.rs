//! Flat `key = value` configuration files.
//!
//! One key per line, `#` starts a comment, list values are comma separated.
//! Keys are the field names of the grid, backbone and scene settings:
//!
//! ```text
//! origin = 0, 0, 0
//! voxel_size = 0.2, 0.2, 0.2
//! shape = 128, 128, 16
//! stage_channels = 16, 32, 64, 128
//! subm_ratios = 0.3, 0.3, 0.3, 0.3
//! down_ratios = 0.5, 0.5, 0.5
//! mode = pruned
//! seed = 7
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use spsconv::backbone::{BackboneConfig, BackboneMode, StrategyKind};
use spsconv::tensor::VoxelGridSpec;

use crate::error::{CliError, Result};
use crate::scene::SceneParams;

const GRID_KEYS: [&str; 3] = ["origin", "voxel_size", "shape"];
const BACKBONE_KEYS: [&str; 10] = [
    "in_channels",
    "stem_channels",
    "stage_channels",
    "stage_strides",
    "subm_ratios",
    "down_ratios",
    "kernel_size",
    "mode",
    "strategy",
    "seed",
];
const SCENE_KEYS: [&str; 4] = [
    "n_background",
    "n_foreground_clusters",
    "cluster_size",
    "foreground_feature_scale",
];

/// Everything a config file can carry. Sections whose keys are all absent
/// are `None`; backbone keys fall back to [`BackboneConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Config {
    pub grid: Option<VoxelGridSpec>,
    pub backbone: BackboneConfig,
    pub scene: Option<SceneParams>,
}

impl Config {
    pub fn grid(&self) -> Result<&VoxelGridSpec> {
        self.grid.as_ref().ok_or_else(|| {
            CliError::Config("config needs grid keys origin, voxel_size and shape".into())
        })
    }

    pub fn scene(&self) -> Result<&SceneParams> {
        self.scene.as_ref().ok_or_else(|| {
            CliError::Config(format!("config needs scene keys {}", SCENE_KEYS.join(", ")))
        })
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.backbone.seed = s;
        }
        self
    }
}

pub fn load(path: &Path) -> Result<Config> {
    let src = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&src)
}

struct Entry {
    line: usize,
    value: String,
}

struct Entries(BTreeMap<String, Entry>);

impl Entries {
    fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    fn err(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        match self.0.get(key) {
            Some(e) => CliError::Config(format!("line {}, key `{key}`: {msg}", e.line)),
            None => CliError::Config(format!("key `{key}`: {msg}")),
        }
    }

    fn scalar<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .trim()
                .parse()
                .map(Some)
                .map_err(|err| self.err(key, err)),
        }
    }

    fn list<T: FromStr, const N: usize>(&self, key: &str) -> Result<Option<[T; N]>>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.0.get(key) else {
            return Ok(None);
        };
        let items = e
            .value
            .split(',')
            .map(|s| s.trim().parse::<T>())
            .collect::<std::result::Result<Vec<T>, _>>()
            .map_err(|err| self.err(key, err))?;
        let n = items.len();
        items
            .try_into()
            .map(Some)
            .map_err(|_| self.err(key, format!("expected {N} comma-separated values, got {n}")))
    }

    fn required<T>(&self, key: &str, v: Option<T>) -> Result<T> {
        v.ok_or_else(|| self.err(key, "missing"))
    }
}

pub fn parse(src: &str) -> Result<Config> {
    let known: Vec<&str> = GRID_KEYS
        .iter()
        .chain(&BACKBONE_KEYS)
        .chain(&SCENE_KEYS)
        .copied()
        .collect();
    let mut map = BTreeMap::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                i + 1
            ))
        })?;
        let key = key.trim();
        if !known.contains(&key) {
            return Err(CliError::Config(format!(
                "line {}: unknown key `{key}`",
                i + 1
            )));
        }
        let entry = Entry {
            line: i + 1,
            value: value.trim().to_string(),
        };
        if let Some(prev) = map.insert(key.to_string(), entry) {
            return Err(CliError::Config(format!(
                "line {}: key `{key}` already set on line {}",
                i + 1,
                prev.line
            )));
        }
    }
    let e = Entries(map);

    let grid = if GRID_KEYS.iter().any(|k| e.has(k)) {
        let grid = VoxelGridSpec {
            origin: e.required("origin", e.list("origin")?)?,
            voxel_size: e.required("voxel_size", e.list("voxel_size")?)?,
            shape: e.required("shape", e.list("shape")?)?,
        };
        grid.validate().map_err(|err| e.err("voxel_size", err))?;
        Some(grid)
    } else {
        None
    };

    let d = BackboneConfig::default();
    let backbone = BackboneConfig {
        in_channels: e.scalar("in_channels")?.unwrap_or(d.in_channels),
        stem_channels: e.scalar("stem_channels")?.unwrap_or(d.stem_channels),
        stage_channels: e.list("stage_channels")?.unwrap_or(d.stage_channels),
        stage_strides: e.list("stage_strides")?.unwrap_or(d.stage_strides),
        subm_ratios: e.list("subm_ratios")?.unwrap_or(d.subm_ratios),
        down_ratios: e.list("down_ratios")?.unwrap_or(d.down_ratios),
        kernel_size: e.scalar("kernel_size")?.unwrap_or(d.kernel_size),
        mode: match e.scalar::<String>("mode")?.as_deref() {
            None => d.mode,
            Some("baseline") => BackboneMode::Baseline,
            Some("pruned") => BackboneMode::Pruned,
            Some(other) => {
                return Err(e.err("mode", format!("expected baseline|pruned, got `{other}`")))
            }
        },
        strategy: match e.scalar::<String>("strategy")?.as_deref() {
            None => d.strategy,
            Some("magnitude") => StrategyKind::Magnitude,
            Some("random") => StrategyKind::Random,
            Some("inverse") => StrategyKind::Inverse,
            Some(other) => {
                return Err(e.err(
                    "strategy",
                    format!("expected magnitude|random|inverse, got `{other}`"),
                ))
            }
        },
        seed: e.scalar("seed")?.unwrap_or(d.seed),
    };
    backbone
        .validate()
        .map_err(|err| CliError::Config(err.to_string()))?;

    let scene = if SCENE_KEYS.iter().any(|k| e.has(k)) {
        let scene = SceneParams {
            n_background: e.required("n_background", e.scalar("n_background")?)?,
            n_foreground_clusters: e
                .required("n_foreground_clusters", e.scalar("n_foreground_clusters")?)?,
            cluster_size: e.required("cluster_size", e.scalar("cluster_size")?)?,
            foreground_feature_scale: e.required(
                "foreground_feature_scale",
                e.scalar("foreground_feature_scale")?,
            )?,
        };
        if !(scene.foreground_feature_scale > 1.0) {
            return Err(e.err("foreground_feature_scale", "must be greater than 1"));
        }
        Some(scene)
    } else {
        None
    };

    Ok(Config {
        grid,
        backbone,
        scene,
    })
}

/// Parses a `--ratios` list such as `0.1,0.3,0.5`.
pub fn parse_ratios(src: &str) -> Result<Vec<f64>> {
    src.split(',')
        .map(|s| {
            let r: f64 = s
                .trim()
                .parse()
                .map_err(|e| CliError::Config(format!("--ratios: `{}`: {e}", s.trim())))?;
            if !(0.0..=1.0).contains(&r) {
                return Err(CliError::Config(format!("--ratios: {r} outside [0, 1]")));
            }
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = "\
# grid
origin = 0, 0, -1
voxel_size = 0.5, 0.5, 0.25
shape = 32, 32, 8
subm_ratios = 0.3, 0.3, 0.3, 0.3   # nuScenes-like
down_ratios = 0.5, 0.5, 0.5
mode = pruned
seed = 9
n_background = 100
n_foreground_clusters = 2
cluster_size = 5
foreground_feature_scale = 4
";

    #[test]
    fn parses_all_sections() {
        let c = parse(FULL).unwrap();
        let g = c.grid.as_ref().unwrap();
        assert_eq!(g.shape, [32, 32, 8]);
        assert_eq!(g.origin, [0.0, 0.0, -1.0]);
        assert_eq!(c.backbone.subm_ratios, [0.3; 4]);
        assert_eq!(c.backbone.mode, BackboneMode::Pruned);
        assert_eq!(c.backbone.seed, 9);
        assert_eq!(c.backbone.stage_channels, [16, 32, 64, 128]);
        assert_eq!(c.scene.unwrap().cluster_size, 5);
    }

    #[test]
    fn empty_config_uses_defaults() {
        let c = parse("# nothing\n\n").unwrap();
        assert!(c.grid.is_none() && c.scene.is_none());
        assert_eq!(c.backbone, BackboneConfig::default());
        assert!(c.grid().is_err());
    }

    fn msg(src: &str) -> String {
        match parse(src) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_and_key() {
        assert!(msg("seed = 1\nbogus = 2\n").contains("line 2"));
        let m = msg("shape = 1, 2\norigin = 0,0,0\nvoxel_size = 1,1,1\n");
        assert!(m.contains("line 1") && m.contains("shape"), "{m}");
        assert!(msg("mode = fast\n").contains("mode"));
        assert!(msg("seed = 1\nseed = 2\n").contains("already set"));
        assert!(msg("subm_ratios = 0.1, 0.2, 2, 0\n").contains("[0, 1]"));
        assert!(msg("no equals sign\n").contains("line 1"));
        assert!(msg("origin = 0,0,0\n").contains("voxel_size"));
        let m = msg("origin = 0,0,0\nvoxel_size = 1,0,1\nshape = 2,2,2\n");
        assert!(m.contains("voxel_size"), "{m}");
    }

    #[test]
    fn ratio_lists() {
        assert_eq!(parse_ratios("0.1, 0.5,1").unwrap(), vec![0.1, 0.5, 1.0]);
        assert!(parse_ratios("0.1,x").is_err());
        assert!(parse_ratios("1.2").is_err());
    }
}
