//! Dense reference convolution.
//!
//! Naive nested loops over a zero-filled volume. Nothing here touches the
//! rulebook or coordinate-hash code, so agreement with the sparse operators
//! is meaningful.

use crate::conv::ConvWeights;
use crate::error::{Error, Result};
use crate::tensor::{Coord, SparseTensor};

/// `batch x channels x sx x sy x sz` volume, row-major in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVolume {
    pub batch: usize,
    pub channels: usize,
    pub shape: [usize; 3],
    pub data: Vec<f32>,
}

impl DenseVolume {
    pub fn zeros(batch: usize, channels: usize, shape: [usize; 3]) -> Self {
        let n = batch * channels * shape[0] * shape[1] * shape[2];
        DenseVolume {
            batch,
            channels,
            shape,
            data: vec![0.0; n],
        }
    }

    #[inline]
    pub fn idx(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> usize {
        let [sx, sy, sz] = self.shape;
        (((b * self.channels + c) * sx + x) * sy + y) * sz + z
    }

    pub fn get(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.idx(b, c, x, y, z)]
    }

    /// Feature vector at one cell.
    pub fn cell(&self, b: usize, x: usize, y: usize, z: usize) -> Vec<f32> {
        (0..self.channels)
            .map(|c| self.get(b, c, x, y, z))
            .collect()
    }
}

/// Scatters a sparse tensor into a zero volume covering its spatial shape.
pub fn densify(t: &SparseTensor) -> Result<DenseVolume> {
    densify_batch(t, t.batch_size().max(1))
}

pub fn densify_batch(t: &SparseTensor, batch: usize) -> Result<DenseVolume> {
    let s = t.spatial_shape();
    let mut v = DenseVolume::zeros(batch, t.channels(), s.map(|d| d as usize));
    for (row, c) in t.coords().iter().enumerate() {
        if !c.within(s) || c.b as usize >= batch {
            return Err(Error::Domain(format!(
                "coordinate {c:?} outside volume {s:?}"
            )));
        }
        let (x, y, z) = (c.x as usize, c.y as usize, c.z as usize);
        for (ch, &f) in t.row(row).iter().enumerate() {
            let i = v.idx(c.b as usize, ch, x, y, z);
            v.data[i] = f;
        }
    }
    Ok(v)
}

/// Collects every cell with a non-zero channel into a sparse tensor.
pub fn sparsify(v: &DenseVolume) -> Result<SparseTensor> {
    let mut coords = Vec::new();
    let mut features = Vec::new();
    for b in 0..v.batch {
        for x in 0..v.shape[0] {
            for y in 0..v.shape[1] {
                for z in 0..v.shape[2] {
                    let cell = v.cell(b, x, y, z);
                    if cell.iter().any(|&f| f != 0.0) {
                        coords.push(Coord::new(b as u32, x as i32, y as i32, z as i32));
                        features.extend(cell);
                    }
                }
            }
        }
    }
    SparseTensor::new(coords, features, v.channels, v.shape.map(|d| d as i32))
}

/// Zero-padded strided 3D cross-correlation:
/// `out[q] = sum_k w[k] * in[s*q + k]` with `k` in `[-r, r]^3`.
///
/// Output extent is `ceil(S / s)` per axis. Accumulates in `f64`.
pub fn dense_conv3d(v: &DenseVolume, w: &ConvWeights, stride: [usize; 3]) -> Result<DenseVolume> {
    if v.channels != w.c_in() {
        return Err(Error::Shape(format!(
            "volume has {} channels, weights expect {}",
            v.channels,
            w.c_in()
        )));
    }
    if stride.iter().any(|&s| s == 0) {
        return Err(Error::Config("stride must be positive".into()));
    }
    let ks = w.kernel_size() as isize;
    let r = (ks - 1) / 2;
    let (c_in, c_out) = (w.c_in(), w.c_out());
    let out_shape = [0, 1, 2].map(|i| v.shape[i].div_ceil(stride[i]));
    let mut out = DenseVolume::zeros(v.batch, c_out, out_shape);
    let wd = w.data();

    for b in 0..v.batch {
        for qx in 0..out_shape[0] {
            for qy in 0..out_shape[1] {
                for qz in 0..out_shape[2] {
                    let mut acc = vec![0.0f64; c_out];
                    let mut tap = 0usize;
                    for dx in -r..=r {
                        for dy in -r..=r {
                            for dz in -r..=r {
                                let ix = (qx * stride[0]) as isize + dx;
                                let iy = (qy * stride[1]) as isize + dy;
                                let iz = (qz * stride[2]) as isize + dz;
                                let inside = ix >= 0
                                    && iy >= 0
                                    && iz >= 0
                                    && (ix as usize) < v.shape[0]
                                    && (iy as usize) < v.shape[1]
                                    && (iz as usize) < v.shape[2];
                                if inside {
                                    for ci in 0..c_in {
                                        let xv = v.get(b, ci, ix as usize, iy as usize, iz as usize)
                                            as f64;
                                        if xv == 0.0 {
                                            continue;
                                        }
                                        for (co, a) in acc.iter_mut().enumerate() {
                                            let wv = wd[(tap * c_in + ci) * c_out + co] as f64;
                                            *a += xv * wv;
                                        }
                                    }
                                }
                                tap += 1;
                            }
                        }
                    }
                    for (co, a) in acc.into_iter().enumerate() {
                        let i = out.idx(b, co, qx, qy, qz);
                        out.data[i] = a as f32;
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn densify_single_voxel() {
        let t = SparseTensor::new(vec![Coord::new(0, 1, 2, 3)], vec![4.0], 1, [4, 4, 4]).unwrap();
        let v = densify(&t).unwrap();
        assert_eq!(v.data.iter().filter(|&&f| f != 0.0).count(), 1);
        assert_eq!(v.get(0, 0, 1, 2, 3), 4.0);
        assert_eq!(sparsify(&v).unwrap(), t);
    }

    #[test]
    fn densify_empty_and_out_of_range() {
        let e = SparseTensor::empty(2, [3, 3, 3]).unwrap();
        let v = densify(&e).unwrap();
        assert_eq!(v.data.len(), 2 * 27);
        assert!(v.data.iter().all(|&f| f == 0.0));
        let bad = SparseTensor::new(vec![Coord::new(0, 3, 0, 0)], vec![1.0], 1, [3, 3, 3]).unwrap();
        assert!(matches!(densify(&bad), Err(Error::Domain(_))));
    }

    #[test]
    fn identity_kernel_passes_through() {
        let mut v = DenseVolume::zeros(1, 2, [3, 3, 3]);
        for (i, d) in v.data.iter_mut().enumerate() {
            *d = i as f32 * 0.5 - 3.0;
        }
        let out = dense_conv3d(&v, &ConvWeights::identity(2).unwrap(), [1, 1, 1]).unwrap();
        assert_eq!(out, v);
    }

    #[test]
    fn ones_kernel_spreads_to_27() {
        let mut v = DenseVolume::zeros(1, 1, [5, 5, 5]);
        let i = v.idx(0, 0, 2, 2, 2);
        v.data[i] = 1.0;
        let out = dense_conv3d(&v, &ConvWeights::filled(3, 1, 1, 1.0).unwrap(), [1, 1, 1]).unwrap();
        assert_eq!(out.data.iter().filter(|&&f| f == 1.0).count(), 27);
        assert_eq!(out.data.iter().filter(|&&f| f != 0.0).count(), 27);
        let zero =
            dense_conv3d(&v, &ConvWeights::filled(3, 1, 1, 0.0).unwrap(), [1, 1, 1]).unwrap();
        assert!(zero.data.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn strided_extent() {
        let v = DenseVolume::zeros(1, 1, [7, 8, 1]);
        let out = dense_conv3d(&v, &ConvWeights::filled(3, 1, 1, 1.0).unwrap(), [2, 2, 2]).unwrap();
        assert_eq!(out.shape, [4, 4, 1]);
    }
}
