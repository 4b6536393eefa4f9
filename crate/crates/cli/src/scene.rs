//! Synthetic scenes: a sparse ground band plus compact foreground clusters.
//!
//! Every occupied cell receives exactly one point, so the voxel-level
//! foreground fraction is `clusters * cluster_size / total` exactly.
//! Foreground intensities are the background distribution scaled by
//! `foreground_feature_scale`.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use spsconv::tensor::{PointCloud, VoxelGridSpec};

use crate::error::{CliError, Result};

/// Scene settings read from a config file; grid and seed live elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub n_background: usize,
    pub n_foreground_clusters: usize,
    pub cluster_size: usize,
    pub foreground_feature_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid: VoxelGridSpec,
    pub n_background: usize,
    pub n_foreground_clusters: usize,
    pub cluster_size: usize,
    pub foreground_feature_scale: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(grid: VoxelGridSpec, params: &SceneParams, seed: u64) -> Self {
        SceneSpec {
            grid,
            n_background: params.n_background,
            n_foreground_clusters: params.n_foreground_clusters,
            cluster_size: params.cluster_size,
            foreground_feature_scale: params.foreground_feature_scale,
            seed,
        }
    }

    pub fn foreground_voxels(&self) -> usize {
        self.n_foreground_clusters * self.cluster_size
    }

    pub fn foreground_fraction(&self) -> f64 {
        let total = self.n_background + self.foreground_voxels();
        if total == 0 {
            0.0
        } else {
            self.foreground_voxels() as f64 / total as f64
        }
    }

    /// Height in cells of the ground band: `ceil(sz / 8)`, at least one.
    pub fn band_height(&self) -> i32 {
        ((self.grid.shape[2] + 7) / 8).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    /// True for foreground points, aligned with `cloud`.
    pub labels: Vec<bool>,
}

const INTENSITY_LO: f32 = 0.1;
const INTENSITY_HI: f32 = 0.3;
const MAX_PLACEMENT_TRIES: usize = 256;

pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.grid
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    if !(spec.foreground_feature_scale > 1.0) {
        return Err(CliError::Config(
            "foreground_feature_scale must be greater than 1".into(),
        ));
    }
    let [sx, sy, sz] = spec.grid.shape;
    let band = spec.band_height().min(sz);
    let band_cells = sx as usize * sy as usize * band as usize;
    if spec.n_background > band_cells {
        return Err(CliError::Config(format!(
            "n_background = {} exceeds the {band_cells} cells of the ground band",
            spec.n_background
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut occupied: HashSet<[i32; 3]> = HashSet::new();
    let mut cells: Vec<([i32; 3], bool)> = Vec::new();

    for idx in rand::seq::index::sample(&mut rng, band_cells, spec.n_background).into_iter() {
        let z = (idx % band as usize) as i32;
        let y = ((idx / band as usize) % sy as usize) as i32;
        let x = (idx / (band as usize * sy as usize)) as i32;
        occupied.insert([x, y, z]);
        cells.push(([x, y, z], false));
    }

    let blob = blob_offsets(spec.cluster_size);
    for _ in 0..spec.n_foreground_clusters {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let centre = [rng.gen_range(0..sx), rng.gen_range(0..sy), band];
            let picked: Vec<[i32; 3]> = blob
                .iter()
                .map(|d| [centre[0] + d[0], centre[1] + d[1], centre[2] + d[2]])
                .filter(|c| (0..3).all(|i| c[i] >= 0 && c[i] < spec.grid.shape[i]))
                .filter(|c| !occupied.contains(c))
                .take(spec.cluster_size)
                .collect();
            if picked.len() == spec.cluster_size {
                for c in picked {
                    occupied.insert(c);
                    cells.push((c, true));
                }
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(CliError::Config(format!(
                "could not place a cluster of {} cells in grid {:?}",
                spec.cluster_size, spec.grid.shape
            )));
        }
    }

    let mut cloud = PointCloud::new(1);
    let mut labels = Vec::with_capacity(cells.len());
    let scale = spec.foreground_feature_scale as f32;
    for (cell, fg) in cells {
        let mut pos = [0.0f64; 3];
        for i in 0..3 {
            let jitter = rng.gen_range(0.1..0.9);
            pos[i] = spec.grid.origin[i] + (cell[i] as f64 + jitter) * spec.grid.voxel_size[i];
        }
        let base = rng.gen_range(INTENSITY_LO..INTENSITY_HI);
        let intensity = if fg { base * scale } else { base };
        cloud.push(pos, &[intensity]).expect("single-channel cloud");
        labels.push(fg);
    }
    Ok(Scene { cloud, labels })
}

/// Offsets of a compact mound resting on `z = 0`, nearest first.
fn blob_offsets(size: usize) -> Vec<[i32; 3]> {
    let mut r = 1i32;
    while (((2 * r + 1) * (2 * r + 1) * (r + 1)) as usize) < 2 * size {
        r += 1;
    }
    let mut out = Vec::new();
    for dz in 0..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                out.push([dx, dy, dz]);
            }
        }
    }
    out.sort_by_key(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], d[2], d[1], d[0]));
    out
}

pub fn format_labels(labels: &[bool]) -> String {
    labels
        .iter()
        .map(|&l| if l { "1\n" } else { "0\n" })
        .collect()
}

/// One `0`/`1` per line; blank lines are ignored.
pub fn parse_labels(src: &str) -> Result<Vec<bool>> {
    let labels = src
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(CliError::Input(format!(
                "labels line {}: expected 0 or 1, got `{other}`",
                i + 1
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.is_empty() {
        return Err(CliError::Input("label file is empty".into()));
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use spsconv::tensor::voxelize;

    fn spec(n_bg: usize, clusters: usize, size: usize) -> SceneSpec {
        SceneSpec {
            grid: VoxelGridSpec {
                origin: [0.0; 3],
                voxel_size: [0.2; 3],
                shape: [64, 64, 16],
            },
            n_background: n_bg,
            n_foreground_clusters: clusters,
            cluster_size: size,
            foreground_feature_scale: 4.0,
            seed: 5,
        }
    }

    #[test]
    fn five_percent_scene() {
        let s = spec(950, 5, 10);
        let scene = generate(&s).unwrap();
        let fg = scene.labels.iter().filter(|&&l| l).count();
        assert_eq!(fg, 50);
        assert_eq!(scene.labels.len(), 1000);
        assert_eq!(s.foreground_fraction(), 0.05);
        // one point per voxel
        let t = voxelize(&scene.cloud, &s.grid).unwrap();
        assert_eq!(t.len(), 1000);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&spec(500, 3, 20)).unwrap();
        let b = generate(&spec(500, 3, 20)).unwrap();
        assert_eq!(a, b);
        let mut other = spec(500, 3, 20);
        other.seed = 6;
        assert_ne!(generate(&other).unwrap(), a);
    }

    #[test]
    fn zero_clusters_all_background() {
        let scene = generate(&spec(300, 0, 10)).unwrap();
        assert!(scene.labels.iter().all(|&l| !l));
    }

    #[test]
    fn foreground_is_brighter() {
        let scene = generate(&spec(800, 4, 25)).unwrap();
        let min_fg = scene
            .labels
            .iter()
            .zip(&scene.cloud.features)
            .filter(|(l, _)| **l)
            .map(|(_, f)| *f)
            .fold(f32::INFINITY, f32::min);
        assert!(min_fg >= INTENSITY_LO * 4.0);
    }

    #[test]
    fn too_many_background_points() {
        assert!(matches!(
            generate(&spec(64 * 64 * 2 + 1, 0, 1)),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn label_files() {
        assert_eq!(
            parse_labels("0\n1\n\n0\n").unwrap(),
            vec![false, true, false]
        );
        assert!(matches!(parse_labels(""), Err(CliError::Input(_))));
        assert!(matches!(parse_labels("0\n2\n"), Err(CliError::Input(_))));
        assert_eq!(format_labels(&[true, false]), "1\n0\n");
    }
}
