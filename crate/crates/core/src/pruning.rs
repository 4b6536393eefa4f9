//! Magnitude-guided spatial pruning.
//!
//! Each voxel is scored by the mean absolute value of its features. A
//! top-k split on that score separates *important* positions from
//! *unimportant* ones, and the two pruned operators use the split
//! differently:
//!
//! * [`spss_conv`] (submanifold) convolves only the important positions.
//!   Every feature is first re-weighted by `sigmoid(score)`; unimportant
//!   positions pass their re-weighted feature straight through. The gather
//!   neighbourhood still covers every active input.
//! * [`sprs_conv`] (regular, strided) lets only important positions dilate
//!   into their kernel neighbourhood. Unimportant positions survive only if
//!   they already sit on the stride lattice.

use std::collections::{BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{apply_rulebook, ConvWeights};
use crate::error::{Error, Result};
use crate::rulebook::{
    build_regular_rulebook, build_subm_rulebook, kernel_offsets, output_shape, to_output_frame,
    KernelSpec, Rulebook,
};
use crate::tensor::{Coord, SparseTensor};

/// Per-voxel magnitude `g` and its sigmoid mask `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeScores {
    pub g: Vec<f32>,
    pub m: Vec<f32>,
}

impl MagnitudeScores {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Channel-wise mean of absolute values per row, and its sigmoid.
pub fn magnitude_map(features: &[f32], channels: usize) -> Result<MagnitudeScores> {
    if channels == 0 {
        return Err(Error::Shape(
            "magnitude map needs at least one channel".into(),
        ));
    }
    if features.len() % channels != 0 {
        return Err(Error::Shape(format!(
            "{} values do not split into rows of {channels}",
            features.len()
        )));
    }
    let g: Vec<f32> = features
        .chunks_exact(channels)
        .map(|row| row.iter().map(|v| v.abs()).sum::<f32>() / channels as f32)
        .collect();
    let m = g.iter().map(|&v| sigmoid(v)).collect();
    Ok(MagnitudeScores { g, m })
}

/// How the important set is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "seed")]
pub enum SelectionStrategy {
    /// Keep the highest-magnitude positions.
    Magnitude,
    /// Keep a uniform random subset.
    Random(u64),
    /// Keep the lowest-magnitude positions.
    Inverse,
}

/// Disjoint split of rows into important and unimportant sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub im: Vec<usize>,
    pub nim: Vec<usize>,
    pub ratio: f64,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.im.len() + self.nim.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-row flag, true for important rows.
    pub fn important_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for &i in &self.im {
            mask[i] = true;
        }
        mask
    }
}

pub fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!(
            "pruning ratio must lie in [0, 1], got {ratio}"
        )));
    }
    Ok(())
}

/// Number of rows pruned at `ratio`: `floor(ratio * n)`.
pub fn pruned_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).floor() as usize).min(n)
}

/// Splits rows so that `floor(ratio * N)` land in the unimportant set.
///
/// Ties on the score go to the lower row index, which after
/// canonicalization means the lower coordinate.
pub fn partition(
    scores: &MagnitudeScores,
    ratio: f64,
    strategy: SelectionStrategy,
) -> Result<Partition> {
    check_ratio(ratio)?;
    let n = scores.len();
    let keep = n - pruned_count(ratio, n);

    let mut im: Vec<usize> = match strategy {
        SelectionStrategy::Magnitude => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores.g[b].total_cmp(&scores.g[a]).then(a.cmp(&b)));
            order.truncate(keep);
            order
        }
        SelectionStrategy::Inverse => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| scores.g[a].total_cmp(&scores.g[b]).then(a.cmp(&b)));
            order.truncate(keep);
            order
        }
        SelectionStrategy::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, n, keep).into_vec()
        }
    };
    im.sort_unstable();

    let mut is_im = vec![false; n];
    for &i in &im {
        is_im[i] = true;
    }
    let nim = (0..n).filter(|&i| !is_im[i]).collect();
    Ok(Partition { im, nim, ratio })
}

/// Scores the tensor's own features and partitions them.
pub fn partition_tensor(
    t: &SparseTensor,
    ratio: f64,
    strategy: SelectionStrategy,
) -> Result<(MagnitudeScores, Partition)> {
    let scores = magnitude_map(t.features(), t.channels())?;
    let part = partition(&scores, ratio, strategy)?;
    Ok((scores, part))
}

/// Result of a pruned operator, with the plan that produced it.
#[derive(Debug, Clone)]
pub struct PrunedOutput {
    pub tensor: SparseTensor,
    pub partition: Partition,
    pub rulebook: Rulebook,
}

/// Rows scaled by their own mask value.
fn reweight(t: &SparseTensor, scores: &MagnitudeScores) -> Result<SparseTensor> {
    let c = t.channels();
    let features = t
        .features()
        .chunks_exact(c)
        .zip(&scores.m)
        .flat_map(|(row, &m)| row.iter().map(move |&v| v * m))
        .collect();
    t.with_features(features, c)
}

/// Spatial pruned submanifold convolution.
pub fn spss_conv(
    t: &SparseTensor,
    spec: &KernelSpec,
    w: &ConvWeights,
    ratio: f64,
    strategy: SelectionStrategy,
) -> Result<SparseTensor> {
    spss_conv_detailed(t, spec, w, ratio, strategy).map(|o| o.tensor)
}

pub fn spss_conv_detailed(
    t: &SparseTensor,
    spec: &KernelSpec,
    w: &ConvWeights,
    ratio: f64,
    strategy: SelectionStrategy,
) -> Result<PrunedOutput> {
    check_ratio(ratio)?;
    if w.c_in() != w.c_out() {
        return Err(Error::Config(format!(
            "SPSS passes unimportant rows through unchanged, so c_in must equal c_out \
             (got {} -> {})",
            w.c_in(),
            w.c_out()
        )));
    }
    let (scores, part) = partition_tensor(t, ratio, strategy)?;
    let x = reweight(t, &scores)?;
    let rb = build_subm_rulebook(&x, spec, Some(&part.im))?;
    let y = apply_rulebook(&x, &rb, w)?;

    let c = y.channels();
    let mut features = y.features().to_vec();
    for &p in &part.nim {
        features[p * c..(p + 1) * c].copy_from_slice(x.row(p));
    }
    let tensor = y.with_features(features, c)?;
    Ok(PrunedOutput {
        tensor,
        partition: part,
        rulebook: rb,
    })
}

/// True where every axis is a multiple of its stride.
pub fn stride_mask(coords: &[Coord], stride: [i32; 3]) -> Result<Vec<bool>> {
    if stride.iter().any(|&s| s < 1) {
        return Err(Error::Config(format!(
            "stride must be >= 1, got {stride:?}"
        )));
    }
    coords
        .iter()
        .map(|c| {
            let p = c.xyz();
            if p.iter().any(|&v| v < 0) {
                return Err(Error::Domain(format!(
                    "stride mask needs non-negative coords, got {c:?}"
                )));
            }
            Ok((0..3).map(|i| p[i] % stride[i]).sum::<i32>() == 0)
        })
        .collect()
}

/// Important positions together with their kernel neighbourhoods,
/// clipped to `[0, shape)`.
pub fn dilate_positions(
    p_im: &[Coord],
    spec: &KernelSpec,
    shape: [i32; 3],
) -> Result<BTreeSet<Coord>> {
    let offsets = kernel_offsets(spec)?;
    let mut out: BTreeSet<Coord> = BTreeSet::new();
    for p in p_im {
        out.extend(
            offsets
                .iter()
                .map(|&k| p.offset(k))
                .filter(|q| q.within(shape)),
        );
        if p.within(shape) {
            out.insert(*p);
        }
    }
    Ok(out)
}

/// Output-frame positions of a pruned regular convolution: the stride
/// lattice points of the dilated important set, plus those of the
/// unimportant set, divided by the stride.
pub fn sprs_output_positions(
    part: &Partition,
    coords: &[Coord],
    spec: &KernelSpec,
    shape: [i32; 3],
) -> Result<Vec<Coord>> {
    spec.validate()?;
    if part.len() != coords.len() {
        return Err(Error::Shape(format!(
            "partition covers {} rows, {} coords given",
            part.len(),
            coords.len()
        )));
    }
    let im: Vec<Coord> = part.im.iter().map(|&i| coords[i]).collect();
    let dilated = dilate_positions(&im, spec, shape)?;
    let bound = output_shape(shape, spec.stride);
    let out: BTreeSet<Coord> = dilated
        .into_iter()
        .chain(part.nim.iter().map(|&i| coords[i]))
        .filter_map(|c| to_output_frame(c, spec.stride, bound))
        .collect();
    Ok(out.into_iter().collect())
}

/// Spatial pruned regular convolution. Features are not re-weighted.
pub fn sprs_conv(
    t: &SparseTensor,
    spec: &KernelSpec,
    w: &ConvWeights,
    ratio: f64,
    strategy: SelectionStrategy,
) -> Result<SparseTensor> {
    sprs_conv_detailed(t, spec, w, ratio, strategy).map(|o| o.tensor)
}

pub fn sprs_conv_detailed(
    t: &SparseTensor,
    spec: &KernelSpec,
    w: &ConvWeights,
    ratio: f64,
    strategy: SelectionStrategy,
) -> Result<PrunedOutput> {
    let (_, part) = partition_tensor(t, ratio, strategy)?;
    let allowed: HashSet<Coord> =
        sprs_output_positions(&part, t.coords(), spec, t.spatial_shape())?
            .into_iter()
            .collect();
    let rb = build_regular_rulebook(t, spec, Some(&allowed))?;
    let tensor = apply_rulebook(t, &rb, w)?;
    Ok(PrunedOutput {
        tensor,
        partition: part,
        rulebook: rb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::subm_conv;
    use crate::rulebook::flops_of;

    fn scalar_sigmoid(x: f64) -> f64 {
        // independent of `sigmoid`: tanh form
        0.5 * (1.0 + (x / 2.0).tanh())
    }

    fn scores(g: &[f32]) -> MagnitudeScores {
        MagnitudeScores {
            g: g.to_vec(),
            m: g.iter().map(|&v| sigmoid(v)).collect(),
        }
    }

    #[test]
    fn magnitude_examples() {
        let s = magnitude_map(&[0.0, 0.0, 0.0, 1.0, -3.0, 2.0], 3).unwrap();
        assert_eq!(s.g, vec![0.0, 2.0]);
        assert_eq!(s.m[0], 0.5);
        assert!((s.m[1] as f64 - scalar_sigmoid(2.0)).abs() < 1e-7);
        let doubled = magnitude_map(&[2.0, -6.0, 4.0], 3).unwrap();
        assert_eq!(doubled.g[0], 4.0);
        assert!(matches!(magnitude_map(&[], 0), Err(Error::Shape(_))));
    }

    #[test]
    fn partition_examples() {
        let s = scores(&[0.9, 0.5, 0.7, 0.1]);
        let p = partition(&s, 0.5, SelectionStrategy::Magnitude).unwrap();
        assert_eq!(p.im, vec![0, 2]);
        assert_eq!(p.nim, vec![1, 3]);
        let p = partition(&s, 0.5, SelectionStrategy::Inverse).unwrap();
        assert_eq!(p.im, vec![1, 3]);
        let p = partition(&s, 0.0, SelectionStrategy::Magnitude).unwrap();
        assert_eq!(p.im, vec![0, 1, 2, 3]);
        assert!(p.nim.is_empty());
        let p = partition(&s, 1.0, SelectionStrategy::Magnitude).unwrap();
        assert!(p.im.is_empty());
        assert_eq!(p.nim, vec![0, 1, 2, 3]);
        assert!(matches!(
            partition(&s, 1.5, SelectionStrategy::Magnitude),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            partition(&s, -0.1, SelectionStrategy::Inverse),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn ties_prefer_lower_rows() {
        let s = scores(&[1.0, 1.0, 1.0, 1.0]);
        let p = partition(&s, 0.5, SelectionStrategy::Magnitude).unwrap();
        assert_eq!(p.im, vec![0, 1]);
        let p = partition(&s, 0.5, SelectionStrategy::Inverse).unwrap();
        assert_eq!(p.im, vec![0, 1]);
    }

    #[test]
    fn random_is_seeded() {
        let s = scores(&(0..50).map(|i| i as f32).collect::<Vec<_>>());
        let a = partition(&s, 0.4, SelectionStrategy::Random(3)).unwrap();
        let b = partition(&s, 0.4, SelectionStrategy::Random(3)).unwrap();
        let c = partition(&s, 0.4, SelectionStrategy::Random(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.im, c.im);
        assert_eq!(a.nim.len(), 20);
    }

    fn line(rows: &[([i32; 3], f32)], shape: i32) -> SparseTensor {
        SparseTensor::new(
            rows.iter().map(|(p, _)| Coord::from_xyz(0, *p)).collect(),
            rows.iter().map(|(_, f)| *f).collect(),
            1,
            [shape; 3],
        )
        .unwrap()
    }

    #[test]
    fn spss_two_voxels() {
        let t = line(&[([1, 1, 1], 2.0), ([1, 1, 2], 0.0)], 4);
        let w = ConvWeights::filled(3, 1, 1, 1.0).unwrap();
        let spec = KernelSpec::unit(3).unwrap();
        let out = spss_conv_detailed(&t, &spec, &w, 0.5, SelectionStrategy::Magnitude).unwrap();
        assert_eq!(out.partition.im, vec![0]);
        let expect_im = 2.0 * scalar_sigmoid(2.0) + 0.0 * 0.5;
        assert!((out.tensor.features()[0] as f64 - expect_im).abs() < 1e-6);
        assert_eq!(out.tensor.features()[1], 0.0);
        assert_eq!(flops_of(&out.rulebook, 1, 1), 4);
    }

    #[test]
    fn spss_limits() {
        let t = line(&[([1, 1, 1], 2.0), ([1, 1, 2], -1.0), ([2, 1, 2], 0.5)], 4);
        let w = ConvWeights::filled(3, 1, 1, 0.5).unwrap();
        let spec = KernelSpec::unit(3).unwrap();
        let s = magnitude_map(t.features(), 1).unwrap();
        let x = reweight(&t, &s).unwrap();

        let all_skip =
            spss_conv_detailed(&t, &spec, &w, 1.0, SelectionStrategy::Magnitude).unwrap();
        assert_eq!(all_skip.tensor, x);
        assert_eq!(all_skip.rulebook.pair_count(), 0);

        let all_conv = spss_conv(&t, &spec, &w, 0.0, SelectionStrategy::Magnitude).unwrap();
        assert_eq!(all_conv, subm_conv(&x, &spec, &w).unwrap());
    }

    #[test]
    fn spss_needs_square_weights() {
        let t = line(&[([1, 1, 1], 2.0)], 4);
        let w = ConvWeights::filled(3, 1, 2, 1.0).unwrap();
        let r = spss_conv(
            &t,
            &KernelSpec::unit(3).unwrap(),
            &w,
            0.5,
            SelectionStrategy::Magnitude,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn stride_mask_examples() {
        let cs = [
            Coord::new(0, 0, 0, 0),
            Coord::new(0, 2, 4, 6),
            Coord::new(0, 1, 2, 2),
        ];
        assert_eq!(
            stride_mask(&cs, [2, 2, 2]).unwrap(),
            vec![true, true, false]
        );
        assert!(matches!(
            stride_mask(&[Coord::new(0, -2, 0, 0)], [2, 2, 2]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn dilation_examples() {
        let spec = KernelSpec::new(3, [2, 2, 2]).unwrap();
        let d = dilate_positions(&[Coord::new(0, 1, 1, 1)], &spec, [8; 3]).unwrap();
        assert_eq!(d.len(), 27);
        assert!(d
            .iter()
            .all(|c| c.xyz().iter().all(|&v| (0..=2).contains(&v))));
        assert!(dilate_positions(&[], &spec, [8; 3]).unwrap().is_empty());
        let two = dilate_positions(
            &[Coord::new(0, 1, 1, 1), Coord::new(0, 2, 1, 1)],
            &spec,
            [8; 3],
        )
        .unwrap();
        assert_eq!(two.len(), 36);
    }

    #[test]
    fn sprs_position_examples() {
        let spec = KernelSpec::new(3, [2, 2, 2]).unwrap();
        let one = [Coord::new(0, 1, 1, 1)];
        let im = Partition {
            im: vec![0],
            nim: vec![],
            ratio: 0.0,
        };
        assert_eq!(
            sprs_output_positions(&im, &one, &spec, [8; 3])
                .unwrap()
                .len(),
            8
        );
        let nim = Partition {
            im: vec![],
            nim: vec![0],
            ratio: 1.0,
        };
        assert!(sprs_output_positions(&nim, &one, &spec, [8; 3])
            .unwrap()
            .is_empty());
        let even = [Coord::new(0, 2, 2, 2)];
        assert_eq!(
            sprs_output_positions(&nim, &even, &spec, [8; 3]).unwrap(),
            vec![Coord::new(0, 1, 1, 1)]
        );
    }
}
