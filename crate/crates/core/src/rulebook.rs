//! Gather-scatter plans for sparse convolution.
//!
//! A [`Rulebook`] lists, for every kernel offset `k`, the `(input_row,
//! output_row)` pairs with `out + k` active in the input. Executing it is a
//! per-offset gather, small matrix multiply and scatter-add (see
//! [`crate::conv::apply_rulebook`]).

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{build_index, Coord, SparseTensor};

/// Cubic kernel of odd side `size`, with a per-axis stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub size: usize,
    pub stride: [i32; 3],
}

impl KernelSpec {
    pub fn new(size: usize, stride: [i32; 3]) -> Result<Self> {
        let spec = KernelSpec { size, stride };
        spec.validate()?;
        Ok(spec)
    }

    /// Stride-1 kernel, as used by submanifold convolution.
    pub fn unit(size: usize) -> Result<Self> {
        Self::new(size, [1, 1, 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.size % 2 == 0 {
            return Err(Error::UnsupportedKernel(self.size));
        }
        if self.stride.iter().any(|&s| s < 1) {
            return Err(Error::Config(format!(
                "stride must be >= 1, got {:?}",
                self.stride
            )));
        }
        Ok(())
    }

    pub fn volume(&self) -> usize {
        self.size.pow(3)
    }

    pub fn radius(&self) -> i32 {
        (self.size as i32 - 1) / 2
    }

    pub fn is_unit_stride(&self) -> bool {
        self.stride == [1, 1, 1]
    }
}

/// All offsets in `{-r..=r}^3`, lexicographic over `(x, y, z)`.
pub fn kernel_offsets(spec: &KernelSpec) -> Result<Vec<[i32; 3]>> {
    spec.validate()?;
    let r = spec.radius();
    let mut out = Vec::with_capacity(spec.volume());
    for dx in -r..=r {
        for dy in -r..=r {
            for dz in -r..=r {
                out.push([dx, dy, dz]);
            }
        }
    }
    Ok(out)
}

/// Output extent of a strided layer: `ceil(shape / stride)` per axis.
pub fn output_shape(shape: [i32; 3], stride: [i32; 3]) -> [i32; 3] {
    [0, 1, 2].map(|i| (shape[i] + stride[i] - 1) / stride[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    Submanifold,
    Regular,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rulebook {
    mode: ConvMode,
    offsets: Vec<[i32; 3]>,
    /// `pairs[k]` holds `(input_row, output_row)`, sorted by output row.
    pairs: Vec<Vec<(usize, usize)>>,
    out_coords: Vec<Coord>,
    out_shape: [i32; 3],
    stride: [i32; 3],
    n_in: usize,
}

impl Rulebook {
    pub fn mode(&self) -> ConvMode {
        self.mode
    }

    pub fn offsets(&self) -> &[[i32; 3]] {
        &self.offsets
    }

    pub fn pairs(&self, offset_idx: usize) -> &[(usize, usize)] {
        &self.pairs[offset_idx]
    }

    /// Every `(offset_idx, input_row, output_row)` triple in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.pairs
            .iter()
            .enumerate()
            .flat_map(|(k, ps)| ps.iter().map(move |&(i, o)| (k, i, o)))
    }

    pub fn out_coords(&self) -> &[Coord] {
        &self.out_coords
    }

    pub fn out_shape(&self) -> [i32; 3] {
        self.out_shape
    }

    pub fn stride(&self) -> [i32; 3] {
        self.stride
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.out_coords.len()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    /// Output rows that receive at least one pair.
    pub fn touched_outputs(&self) -> BTreeSet<usize> {
        self.iter().map(|(_, _, o)| o).collect()
    }
}

/// Submanifold plan: outputs sit exactly on the input coordinates.
///
/// `active_out` restricts which rows are convolved; the others still appear
/// in `out_coords` but receive no pairs. Gathering always uses every input row.
pub fn build_subm_rulebook(
    t: &SparseTensor,
    spec: &KernelSpec,
    active_out: Option<&[usize]>,
) -> Result<Rulebook> {
    let offsets = kernel_offsets(spec)?;
    if !spec.is_unit_stride() {
        return Err(Error::Mode(format!(
            "submanifold convolution needs stride 1, got {:?}",
            spec.stride
        )));
    }
    let index = build_index(t)?;
    let rows: Vec<usize> = match active_out {
        Some(rows) => {
            let mut rows = rows.to_vec();
            rows.sort_unstable();
            rows.dedup();
            if let Some(&bad) = rows.iter().find(|&&r| r >= t.len()) {
                return Err(Error::Shape(format!(
                    "active output row {bad} out of range for {} rows",
                    t.len()
                )));
            }
            rows
        }
        None => (0..t.len()).collect(),
    };

    let coords = t.coords();
    let pairs = offsets
        .iter()
        .map(|&k| {
            rows.iter()
                .filter_map(|&o| index.get(&coords[o].offset(k)).map(|i| (i, o)))
                .collect()
        })
        .collect();

    Ok(Rulebook {
        mode: ConvMode::Submanifold,
        offsets,
        pairs,
        out_coords: coords.to_vec(),
        out_shape: t.spatial_shape(),
        stride: [1, 1, 1],
        n_in: t.len(),
    })
}

/// Every output-frame coordinate a regular convolution activates:
/// `{p + k}` over inputs and offsets, keeping stride-aligned, in-range
/// positions and dividing by the stride.
pub fn regular_output_coords(t: &SparseTensor, spec: &KernelSpec) -> Result<BTreeSet<Coord>> {
    let offsets = kernel_offsets(spec)?;
    let bound = output_shape(t.spatial_shape(), spec.stride);
    let mut out = BTreeSet::new();
    for p in t.coords() {
        for &k in &offsets {
            if let Some(q) = to_output_frame(p.offset(k), spec.stride, bound) {
                out.insert(q);
            }
        }
    }
    Ok(out)
}

/// Maps a full-resolution position into the strided output frame, if it
/// survives the stride and bounds checks.
pub(crate) fn to_output_frame(c: Coord, stride: [i32; 3], bound: [i32; 3]) -> Option<Coord> {
    let p = c.xyz();
    let mut q = [0i32; 3];
    for i in 0..3 {
        if p[i] < 0 || p[i] % stride[i] != 0 {
            return None;
        }
        q[i] = p[i] / stride[i];
        if q[i] >= bound[i] {
            return None;
        }
    }
    Some(Coord::from_xyz(c.b, q))
}

/// Regular (dilating, possibly strided) plan.
///
/// `allowed_out`, given in the output frame, intersects the candidate set.
pub fn build_regular_rulebook(
    t: &SparseTensor,
    spec: &KernelSpec,
    allowed_out: Option<&HashSet<Coord>>,
) -> Result<Rulebook> {
    let offsets = kernel_offsets(spec)?;
    let index = build_index(t)?;
    let mut out_coords: Vec<Coord> = regular_output_coords(t, spec)?.into_iter().collect();
    if let Some(allowed) = allowed_out {
        out_coords.retain(|q| allowed.contains(q));
    }

    let s = spec.stride;
    let pairs = offsets
        .iter()
        .map(|&k| {
            out_coords
                .iter()
                .enumerate()
                .filter_map(|(o, q)| {
                    let centre = Coord::new(q.b, q.x * s[0], q.y * s[1], q.z * s[2]);
                    index.get(&centre.offset(k)).map(|i| (i, o))
                })
                .collect()
        })
        .collect();

    Ok(Rulebook {
        mode: ConvMode::Regular,
        offsets,
        pairs,
        out_coords,
        out_shape: output_shape(t.spatial_shape(), s),
        stride: s,
        n_in: t.len(),
    })
}

/// Multiply-add count of executing `rb`: `2 * pairs * c_in * c_out`.
pub fn flops_of(rb: &Rulebook, c_in: usize, c_out: usize) -> u64 {
    2 * rb.pair_count() as u64 * c_in as u64 * c_out as u64
}
