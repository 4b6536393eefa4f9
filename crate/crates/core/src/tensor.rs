//! Sparse tensors over integer voxel grids.
//!
//! A [`SparseTensor`] holds the active voxels of a batch of grids as a list
//! of [`Coord`]s plus one feature row per coordinate. Rows are kept in
//! canonical `(b, z, y, x)` order so that every operator downstream produces
//! bit-reproducible output regardless of how the input was assembled.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An active voxel position.
///
/// Field order matters: the derived `Ord` compares `b`, then `z`, `y`, `x`,
/// which is the canonical storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coord {
    pub b: u32,
    pub z: i32,
    pub y: i32,
    pub x: i32,
}

impl Coord {
    pub const fn new(b: u32, x: i32, y: i32, z: i32) -> Self {
        Coord { b, z, y, x }
    }

    #[inline]
    pub fn xyz(&self) -> [i32; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_xyz(b: u32, p: [i32; 3]) -> Self {
        Coord::new(b, p[0], p[1], p[2])
    }

    #[inline]
    pub fn offset(&self, d: [i32; 3]) -> Self {
        Coord::new(self.b, self.x + d[0], self.y + d[1], self.z + d[2])
    }

    /// True when every spatial axis lies in `[0, shape)`.
    #[inline]
    pub fn within(&self, shape: [i32; 3]) -> bool {
        self.xyz()
            .iter()
            .zip(shape.iter())
            .all(|(&c, &s)| c >= 0 && c < s)
    }
}

/// Axis-aligned voxel grid in metric space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub origin: [f64; 3],
    pub voxel_size: [f64; 3],
    pub shape: [i32; 3],
}

impl VoxelGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.voxel_size.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config(format!(
                "voxel_size must be strictly positive, got {:?}",
                self.voxel_size
            )));
        }
        if self.shape.iter().any(|&s| s < 1) {
            return Err(Error::Config(format!(
                "grid shape must be at least 1 on every axis, got {:?}",
                self.shape
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Config(format!(
                "grid origin must be finite, got {:?}",
                self.origin
            )));
        }
        Ok(())
    }

    /// Cell containing a metric point, or `None` when it falls outside the grid.
    ///
    /// Uses `floor((p - origin) / voxel_size)`; a point exactly on the upper
    /// boundary belongs to no cell.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<[i32; 3]> {
        let mut cell = [0i32; 3];
        for axis in 0..3 {
            let f = ((p[axis] - self.origin[axis]) / self.voxel_size[axis]).floor();
            if !(f >= 0.0 && f < self.shape[axis] as f64) {
                return None;
            }
            cell[axis] = f as i32;
        }
        Some(cell)
    }
}

/// A set of metric points with `channels` features each.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f64; 3]>,
    /// Row-major, `positions.len() * channels` values.
    pub features: Vec<f32>,
    pub channels: usize,
}

impl PointCloud {
    pub fn new(channels: usize) -> Self {
        PointCloud {
            positions: Vec::new(),
            features: Vec::new(),
            channels,
        }
    }

    pub fn push(&mut self, pos: [f64; 3], features: &[f32]) -> Result<()> {
        if features.len() != self.channels {
            return Err(Error::Shape(format!(
                "point carries {} features, cloud expects {}",
                features.len(),
                self.channels
            )));
        }
        self.positions.push(pos);
        self.features.extend_from_slice(features);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> &[f32] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }
}

/// Active voxel coordinates with one feature row each.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    coords: Vec<Coord>,
    features: Vec<f32>,
    channels: usize,
    spatial_shape: [i32; 3],
    stride_level: [i32; 3],
}

impl SparseTensor {
    /// Builds a validated tensor: rejects duplicates and sorts rows canonically.
    pub fn new(
        coords: Vec<Coord>,
        features: Vec<f32>,
        channels: usize,
        spatial_shape: [i32; 3],
    ) -> Result<Self> {
        let t = Self::from_raw(coords, features, channels, spatial_shape)?;
        let t = canonicalize(&t);
        if let Some(w) = t.coords.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Consistency(format!(
                "duplicate coordinate {:?}",
                w[0]
            )));
        }
        Ok(t)
    }

    /// Wraps parts as given, checking only that row counts agree.
    ///
    /// The result may be unsorted or hold duplicates; run [`canonicalize`]
    /// and [`build_index`] to restore or check the invariants.
    pub fn from_raw(
        coords: Vec<Coord>,
        features: Vec<f32>,
        channels: usize,
        spatial_shape: [i32; 3],
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("tensor needs at least one channel".into()));
        }
        if features.len() != coords.len() * channels {
            return Err(Error::Shape(format!(
                "{} feature values for {} coords x {} channels",
                features.len(),
                coords.len(),
                channels
            )));
        }
        if spatial_shape.iter().any(|&s| s < 1) {
            return Err(Error::Shape(format!(
                "invalid spatial shape {spatial_shape:?}"
            )));
        }
        Ok(SparseTensor {
            coords,
            features,
            channels,
            spatial_shape,
            stride_level: [1, 1, 1],
        })
    }

    pub fn empty(channels: usize, spatial_shape: [i32; 3]) -> Result<Self> {
        Self::from_raw(Vec::new(), Vec::new(), channels, spatial_shape)
    }

    pub fn with_stride_level(mut self, stride_level: [i32; 3]) -> Self {
        self.stride_level = stride_level;
        self
    }

    /// Same coordinates, new features. Row count must match.
    pub fn with_features(&self, features: Vec<f32>, channels: usize) -> Result<Self> {
        if channels == 0 || features.len() != self.coords.len() * channels {
            return Err(Error::Shape(format!(
                "{} feature values do not fit {} rows x {} channels",
                features.len(),
                self.coords.len(),
                channels
            )));
        }
        Ok(SparseTensor {
            coords: self.coords.clone(),
            features,
            channels,
            spatial_shape: self.spatial_shape,
            stride_level: self.stride_level,
        })
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial_shape(&self) -> [i32; 3] {
        self.spatial_shape
    }

    pub fn stride_level(&self) -> [i32; 3] {
        self.stride_level
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.channels..(i + 1) * self.channels]
    }

    /// Number of batch entries spanned, i.e. `max(b) + 1`, or 0 when empty.
    pub fn batch_size(&self) -> usize {
        self.coords
            .iter()
            .map(|c| c.b as usize + 1)
            .max()
            .unwrap_or(0)
    }
}

/// Sorts rows into `(b, z, y, x)` order, carrying features along.
///
/// Stable, so duplicate coordinates keep their relative order. Idempotent.
pub fn canonicalize(t: &SparseTensor) -> SparseTensor {
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by_key(|&i| t.coords[i]);
    let c = t.channels;
    let mut features = Vec::with_capacity(t.features.len());
    for &i in &order {
        features.extend_from_slice(&t.features[i * c..(i + 1) * c]);
    }
    SparseTensor {
        coords: order.iter().map(|&i| t.coords[i]).collect(),
        features,
        channels: c,
        spatial_shape: t.spatial_shape,
        stride_level: t.stride_level,
    }
}

/// Hash index from coordinate to row.
#[derive(Debug, Clone, Default)]
pub struct CoordIndex {
    map: HashMap<Coord, usize>,
}

impl CoordIndex {
    pub fn get(&self, c: &Coord) -> Option<usize> {
        self.map.get(c).copied()
    }

    pub fn contains(&self, c: &Coord) -> bool {
        self.map.contains_key(c)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub(crate) fn from_coords(coords: &[Coord]) -> Result<Self> {
        let mut map = HashMap::with_capacity(coords.len());
        for (row, &c) in coords.iter().enumerate() {
            if let Some(prev) = map.insert(c, row) {
                return Err(Error::Consistency(format!(
                    "coordinate {c:?} appears at rows {prev} and {row}"
                )));
            }
        }
        Ok(CoordIndex { map })
    }
}

pub fn build_index(t: &SparseTensor) -> Result<CoordIndex> {
    CoordIndex::from_coords(&t.coords)
}

/// Voxelizes a point cloud into batch 0, mean-pooling points that share a cell.
pub fn voxelize(points: &PointCloud, spec: &VoxelGridSpec) -> Result<SparseTensor> {
    voxelize_with_assignment(points, spec).map(|(t, _)| t)
}

/// Like [`voxelize`], also returning the output row each point landed in.
pub fn voxelize_with_assignment(
    points: &PointCloud,
    spec: &VoxelGridSpec,
) -> Result<(SparseTensor, Vec<Option<usize>>)> {
    spec.validate()?;
    let c = points.channels;
    if c == 0 {
        return Err(Error::Shape(
            "points must carry at least one feature".into(),
        ));
    }
    if points.features.len() != points.positions.len() * c {
        return Err(Error::Shape(
            "point feature buffer does not match point count".into(),
        ));
    }

    // cell -> (point count, per-channel sums)
    let mut cells: BTreeMap<Coord, (u32, Vec<f64>)> = BTreeMap::new();
    let mut cell_of_point = Vec::with_capacity(points.len());
    for (i, &p) in points.positions.iter().enumerate() {
        let Some(cell) = spec.cell_of(p) else {
            cell_of_point.push(None);
            continue;
        };
        let key = Coord::from_xyz(0, cell);
        let entry = cells.entry(key).or_insert_with(|| (0, vec![0.0; c]));
        entry.0 += 1;
        for (acc, &f) in entry.1.iter_mut().zip(points.feature_row(i)) {
            *acc += f as f64;
        }
        cell_of_point.push(Some(key));
    }

    let mut coords = Vec::with_capacity(cells.len());
    let mut features = Vec::with_capacity(cells.len() * c);
    let mut row_of: HashMap<Coord, usize> = HashMap::with_capacity(cells.len());
    for (row, (coord, (count, sums))) in cells.into_iter().enumerate() {
        coords.push(coord);
        row_of.insert(coord, row);
        features.extend(sums.iter().map(|s| (s / count as f64) as f32));
    }
    let assignment = cell_of_point
        .into_iter()
        .map(|c| c.map(|c| row_of[&c]))
        .collect();
    let t = SparseTensor::from_raw(coords, features, c, spec.shape)?;
    Ok((t, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: i32) -> VoxelGridSpec {
        VoxelGridSpec {
            origin: [0.0; 3],
            voxel_size: [1.0; 3],
            shape: [n, n, n],
        }
    }

    fn cloud(points: &[([f64; 3], f32)]) -> PointCloud {
        let mut pc = PointCloud::new(1);
        for (p, f) in points {
            pc.push(*p, &[*f]).unwrap();
        }
        pc
    }

    #[test]
    fn single_point_identity() {
        let t = voxelize(&cloud(&[([0.2, 0.3, 0.4], 1.0)]), &grid(4)).unwrap();
        assert_eq!(t.coords(), &[Coord::new(0, 0, 0, 0)]);
        assert_eq!(t.features(), &[1.0]);
        assert_eq!(t.stride_level(), [1, 1, 1]);
    }

    #[test]
    fn shared_cell_is_mean_pooled() {
        let t = voxelize(
            &cloud(&[([1.1, 1.1, 1.1], 1.0), ([1.9, 1.5, 1.2], 3.0)]),
            &grid(4),
        )
        .unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.coords()[0], Coord::new(0, 1, 1, 1));
        assert_eq!(t.features(), &[2.0]);
    }

    #[test]
    fn out_of_range_points_dropped() {
        let t = voxelize(&cloud(&[([-0.5, 0.0, 0.0], 1.0)]), &grid(4)).unwrap();
        assert!(t.is_empty());
        // upper boundary is exclusive
        let t = voxelize(&cloud(&[([4.0, 0.0, 0.0], 1.0)]), &grid(4)).unwrap();
        assert!(t.is_empty());
        let t = voxelize(&cloud(&[([3.999, 0.0, 0.0], 1.0)]), &grid(4)).unwrap();
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn bad_grid_rejected() {
        let mut g = grid(4);
        g.voxel_size[1] = 0.0;
        assert!(matches!(voxelize(&cloud(&[]), &g), Err(Error::Config(_))));
        let mut g = grid(4);
        g.shape[2] = 0;
        assert!(matches!(voxelize(&cloud(&[]), &g), Err(Error::Config(_))));
    }

    #[test]
    fn voxelizer_orders_canonically() {
        let t = voxelize(
            &cloud(&[
                ([0.5, 0.5, 2.5], 1.0),
                ([2.5, 0.5, 0.5], 2.0),
                ([0.5, 1.5, 0.5], 3.0),
            ]),
            &grid(4),
        )
        .unwrap();
        assert_eq!(
            t.coords(),
            &[
                Coord::new(0, 2, 0, 0),
                Coord::new(0, 0, 1, 0),
                Coord::new(0, 0, 0, 2)
            ]
        );
        assert_eq!(t.features(), &[2.0, 3.0, 1.0]);
    }

    #[test]
    fn index_examples() {
        let t = SparseTensor::new(
            vec![Coord::new(0, 0, 0, 0), Coord::new(0, 1, 0, 0)],
            vec![1.0, 2.0],
            1,
            [4, 4, 4],
        )
        .unwrap();
        let idx = build_index(&t).unwrap();
        assert_eq!(idx.len(), 2);
        for (i, c) in t.coords().iter().enumerate() {
            assert_eq!(idx.get(c), Some(i));
        }
        assert_eq!(idx.get(&Coord::new(0, 3, 3, 3)), None);
        assert!(build_index(&SparseTensor::empty(1, [1, 1, 1]).unwrap())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn duplicates_are_consistency_errors() {
        let coords = vec![Coord::new(0, 1, 0, 0), Coord::new(0, 1, 0, 0)];
        let raw = SparseTensor::from_raw(coords.clone(), vec![1.0, 2.0], 1, [4, 4, 4]).unwrap();
        assert!(matches!(build_index(&raw), Err(Error::Consistency(_))));
        assert!(matches!(
            SparseTensor::new(coords, vec![1.0, 2.0], 1, [4, 4, 4]),
            Err(Error::Consistency(_))
        ));
    }

    #[test]
    fn canonicalize_swaps_and_is_idempotent() {
        let raw = SparseTensor::from_raw(
            vec![Coord::new(0, 0, 0, 1), Coord::new(0, 0, 0, 0)],
            vec![5.0, 6.0, 7.0, 8.0],
            2,
            [2, 2, 2],
        )
        .unwrap();
        let c = canonicalize(&raw);
        assert_eq!(
            c.coords(),
            &[Coord::new(0, 0, 0, 0), Coord::new(0, 0, 0, 1)]
        );
        assert_eq!(c.features(), &[7.0, 8.0, 5.0, 6.0]);
        assert_eq!(canonicalize(&c), c);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(matches!(
            SparseTensor::from_raw(vec![Coord::new(0, 0, 0, 0)], vec![1.0, 2.0], 1, [1, 1, 1]),
            Err(Error::Shape(_))
        ));
    }
}
