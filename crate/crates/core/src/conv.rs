//! Rulebook execution and the plain sparse convolution operators.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rulebook::{build_regular_rulebook, build_subm_rulebook, KernelSpec, Rulebook};
use crate::tensor::SparseTensor;

/// Per-output-channel `scale * y + shift`, standing in for a frozen batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
}

impl Affine {
    pub fn identity(channels: usize) -> Self {
        Affine {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
        }
    }
}

/// Kernel weights laid out offset-major: `[offset][c_in][c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    kernel_size: usize,
    c_in: usize,
    c_out: usize,
    data: Vec<f32>,
    affine: Option<Affine>,
}

const WEIGHT_MAGIC: &[u8; 4] = b"SPSW";

impl ConvWeights {
    pub fn new(kernel_size: usize, c_in: usize, c_out: usize, data: Vec<f32>) -> Result<Self> {
        KernelSpec::unit(kernel_size)?;
        if c_in == 0 || c_out == 0 {
            return Err(Error::Shape(
                "weights need at least one input and output channel".into(),
            ));
        }
        let expect = kernel_size.pow(3) * c_in * c_out;
        if data.len() != expect {
            return Err(Error::Shape(format!(
                "weight buffer has {} values, K^3*c_in*c_out = {expect}",
                data.len()
            )));
        }
        Ok(ConvWeights {
            kernel_size,
            c_in,
            c_out,
            data,
            affine: None,
        })
    }

    pub fn filled(kernel_size: usize, c_in: usize, c_out: usize, value: f32) -> Result<Self> {
        Self::new(
            kernel_size,
            c_in,
            c_out,
            vec![value; kernel_size.pow(3) * c_in * c_out],
        )
    }

    /// `K = 1` identity mapping on `channels` channels.
    pub fn identity(channels: usize) -> Result<Self> {
        let mut data = vec![0.0; channels * channels];
        for c in 0..channels {
            data[c * channels + c] = 1.0;
        }
        Self::new(1, channels, channels, data)
    }

    /// Uniform in `[-a, a]` with `a = sqrt(1 / (K^3 * c_in))`.
    pub fn random<R: Rng + ?Sized>(
        kernel_size: usize,
        c_in: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = kernel_size.pow(3) * c_in * c_out;
        let a = (1.0 / (kernel_size.pow(3) * c_in) as f64).sqrt() as f32;
        let data = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
        Self::new(kernel_size, c_in, c_out, data)
    }

    pub fn with_affine(mut self, affine: Affine) -> Result<Self> {
        if affine.scale.len() != self.c_out || affine.shift.len() != self.c_out {
            return Err(Error::Shape(format!(
                "affine parameters must have length c_out = {}",
                self.c_out
            )));
        }
        self.affine = Some(affine);
        Ok(self)
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn affine(&self) -> Option<&Affine> {
        self.affine.as_ref()
    }

    /// The `c_in x c_out` slice for one kernel offset.
    #[inline]
    pub fn tap(&self, offset_idx: usize) -> &[f32] {
        let n = self.c_in * self.c_out;
        &self.data[offset_idx * n..(offset_idx + 1) * n]
    }

    /// Serializes to the `SPSW` weight file layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(WEIGHT_MAGIC);
        for v in [self.kernel_size, self.c_in, self.c_out] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let affine = self
            .affine
            .iter()
            .flat_map(|a| a.scale.iter().chain(a.shift.iter()));
        for v in self.data.iter().chain(affine) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[0..4] != WEIGHT_MAGIC {
            return Err(Error::Input("not an SPSW weight file".into()));
        }
        let word = |i: usize| {
            u32::from_le_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]) as usize
        };
        let (k, c_in, c_out) = (word(4), word(8), word(12));
        let body = &bytes[16..];
        if body.len() % 4 != 0 {
            return Err(Error::Input(
                "weight payload is not a whole number of f32".into(),
            ));
        }
        let floats: Vec<f32> = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let n = k.pow(3) * c_in * c_out;
        let w = if floats.len() == n {
            Self::new(k, c_in, c_out, floats)?
        } else if floats.len() == n + 2 * c_out {
            let affine = Affine {
                scale: floats[n..n + c_out].to_vec(),
                shift: floats[n + c_out..].to_vec(),
            };
            Self::new(k, c_in, c_out, floats[..n].to_vec())?.with_affine(affine)?
        } else {
            return Err(Error::Input(format!(
                "weight payload has {} floats, expected {n} or {}",
                floats.len(),
                n + 2 * c_out
            )));
        };
        Ok(w)
    }
}

/// Runs a rulebook: `y_out += x_in * W_k` for every pair, offsets in order.
///
/// Output rows without pairs stay zero. No bias is added.
pub fn apply_rulebook(t: &SparseTensor, rb: &Rulebook, w: &ConvWeights) -> Result<SparseTensor> {
    if t.channels() != w.c_in() {
        return Err(Error::Shape(format!(
            "tensor has {} channels, weights expect {}",
            t.channels(),
            w.c_in()
        )));
    }
    if rb.offsets().len() != w.kernel_size().pow(3) {
        return Err(Error::Shape(format!(
            "rulebook has {} offsets, weights have {}",
            rb.offsets().len(),
            w.kernel_size().pow(3)
        )));
    }
    if rb.n_in() != t.len() {
        return Err(Error::Shape(format!(
            "rulebook built for {} input rows, tensor has {}",
            rb.n_in(),
            t.len()
        )));
    }

    let c_out = w.c_out();
    let mut out = vec![0.0f32; rb.n_out() * c_out];
    for k in 0..rb.offsets().len() {
        let tap = w.tap(k);
        for &(i, o) in rb.pairs(k) {
            let x = t.row(i);
            let y = &mut out[o * c_out..(o + 1) * c_out];
            for (ci, &xv) in x.iter().enumerate() {
                let wrow = &tap[ci * c_out..(ci + 1) * c_out];
                for (yv, &wv) in y.iter_mut().zip(wrow) {
                    *yv += xv * wv;
                }
            }
        }
    }

    let stride = t.stride_level();
    let s = rb.stride();
    Ok(
        SparseTensor::from_raw(rb.out_coords().to_vec(), out, c_out, rb.out_shape())?
            .with_stride_level([stride[0] * s[0], stride[1] * s[1], stride[2] * s[2]]),
    )
}

pub fn subm_conv(t: &SparseTensor, spec: &KernelSpec, w: &ConvWeights) -> Result<SparseTensor> {
    let rb = build_subm_rulebook(t, spec, None)?;
    apply_rulebook(t, &rb, w)
}

pub fn regular_conv(t: &SparseTensor, spec: &KernelSpec, w: &ConvWeights) -> Result<SparseTensor> {
    let rb = build_regular_rulebook(t, spec, None)?;
    apply_rulebook(t, &rb, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Submanifold,
    Regular,
}

/// Per-channel affine followed by ReLU, in place on a conv output.
pub fn affine_relu(t: &SparseTensor, w: &ConvWeights) -> Result<SparseTensor> {
    let affine = w
        .affine()
        .ok_or_else(|| Error::Config("block weights carry no affine parameters".into()))?;
    let c = t.channels();
    if affine.scale.len() != c {
        return Err(Error::Shape(format!(
            "affine has {} channels, tensor has {c}",
            affine.scale.len()
        )));
    }
    let features = t
        .features()
        .chunks_exact(c)
        .flat_map(|row| {
            row.iter()
                .zip(affine.scale.iter().zip(&affine.shift))
                .map(|(&y, (&g, &b))| (g * y + b).max(0.0))
        })
        .collect();
    t.with_features(features, c)
}

/// Conv, affine, ReLU.
pub fn block_forward(
    t: &SparseTensor,
    kind: ConvKind,
    spec: &KernelSpec,
    w: &ConvWeights,
) -> Result<SparseTensor> {
    if w.affine().is_none() {
        return Err(Error::Config(
            "block weights carry no affine parameters".into(),
        ));
    }
    let y = match kind {
        ConvKind::Submanifold => subm_conv(t, spec, w)?,
        ConvKind::Regular => regular_conv(t, spec, w)?,
    };
    affine_relu(&y, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Coord;

    fn tensor(rows: &[([i32; 3], f32)], shape: i32) -> SparseTensor {
        SparseTensor::new(
            rows.iter().map(|(p, _)| Coord::from_xyz(0, *p)).collect(),
            rows.iter().map(|(_, f)| *f).collect(),
            1,
            [shape; 3],
        )
        .unwrap()
    }

    #[test]
    fn centre_tap_only() {
        let t = tensor(&[([2, 2, 2], 1.0)], 5);
        let w = ConvWeights::filled(3, 1, 1, 1.0).unwrap();
        let y = subm_conv(&t, &KernelSpec::unit(3).unwrap(), &w).unwrap();
        assert_eq!(y.features(), &[1.0]);
    }

    #[test]
    fn adjacent_voxels_sum() {
        let t = tensor(&[([1, 1, 1], 1.0), ([1, 1, 2], 2.0)], 4);
        let w = ConvWeights::filled(3, 1, 1, 1.0).unwrap();
        let y = subm_conv(&t, &KernelSpec::unit(3).unwrap(), &w).unwrap();
        assert_eq!(y.features(), &[3.0, 3.0]);
        assert_eq!(y.coords(), t.coords());
    }

    #[test]
    fn identity_kernel() {
        let t = SparseTensor::new(
            vec![Coord::new(0, 0, 0, 0), Coord::new(0, 3, 1, 2)],
            vec![1.0, -2.0, 3.5, 0.25, 8.0, -1.0],
            3,
            [4, 4, 4],
        )
        .unwrap();
        let w = ConvWeights::identity(3).unwrap();
        let y = subm_conv(&t, &KernelSpec::unit(1).unwrap(), &w).unwrap();
        assert_eq!(y, t);
    }

    #[test]
    fn empty_inputs() {
        let e = SparseTensor::empty(2, [4, 4, 4]).unwrap();
        let w = ConvWeights::filled(3, 2, 2, 1.0).unwrap();
        assert!(subm_conv(&e, &KernelSpec::unit(3).unwrap(), &w)
            .unwrap()
            .is_empty());
        let y = regular_conv(&e, &KernelSpec::new(3, [2, 2, 2]).unwrap(), &w).unwrap();
        assert!(y.is_empty());
        assert_eq!(y.spatial_shape(), [2, 2, 2]);
    }

    #[test]
    fn strided_single_voxel() {
        let t = tensor(&[([1, 1, 1], 1.0)], 8);
        let w = ConvWeights::filled(3, 1, 1, 1.0).unwrap();
        let y = regular_conv(&t, &KernelSpec::new(3, [2, 2, 2]).unwrap(), &w).unwrap();
        assert_eq!(y.len(), 8);
        assert!(y.features().iter().all(|&v| v == 1.0));
        assert_eq!(y.stride_level(), [2, 2, 2]);
        assert_eq!(y.spatial_shape(), [4, 4, 4]);
    }

    #[test]
    fn channel_mismatch_is_shape_error() {
        let t = tensor(&[([1, 1, 1], 1.0)], 4);
        let w = ConvWeights::filled(3, 2, 1, 1.0).unwrap();
        assert!(matches!(
            subm_conv(&t, &KernelSpec::unit(3).unwrap(), &w),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn block_affine_and_relu() {
        let t = tensor(&[([2, 2, 2], 1.0)], 5);
        let spec = KernelSpec::unit(3).unwrap();
        let bare = ConvWeights::filled(3, 1, 1, 1.0).unwrap();
        assert!(matches!(
            block_forward(&t, ConvKind::Submanifold, &spec, &bare),
            Err(Error::Config(_))
        ));

        let id = bare.clone().with_affine(Affine::identity(1)).unwrap();
        let y = block_forward(&t, ConvKind::Submanifold, &spec, &id).unwrap();
        assert_eq!(y, subm_conv(&t, &spec, &bare).unwrap());

        let kill = bare
            .clone()
            .with_affine(Affine {
                scale: vec![1.0],
                shift: vec![-1e30],
            })
            .unwrap();
        assert_eq!(
            block_forward(&t, ConvKind::Submanifold, &spec, &kill)
                .unwrap()
                .features(),
            &[0.0]
        );

        let two_one = bare
            .with_affine(Affine {
                scale: vec![2.0],
                shift: vec![1.0],
            })
            .unwrap();
        assert_eq!(
            block_forward(&t, ConvKind::Submanifold, &spec, &two_one)
                .unwrap()
                .features(),
            &[3.0]
        );
    }

    #[test]
    fn weight_file_layout() {
        let w = ConvWeights::new(1, 1, 2, vec![0.5, -1.0]).unwrap();
        let bytes = w.to_bytes();
        assert_eq!(&bytes[0..4], b"SPSW");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 16 + 8);
        assert_eq!(ConvWeights::from_bytes(&bytes).unwrap(), w);

        let wa = w
            .with_affine(Affine {
                scale: vec![1.0, 2.0],
                shift: vec![0.0, -1.0],
            })
            .unwrap();
        let bytes = wa.to_bytes();
        assert_eq!(bytes.len(), 16 + 8 + 16);
        assert_eq!(ConvWeights::from_bytes(&bytes).unwrap(), wa);
        assert!(ConvWeights::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(ConvWeights::from_bytes(b"NOPE0000000000000").is_err());
    }

    #[test]
    fn random_init_bound() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let w = ConvWeights::random(3, 4, 8, &mut rng).unwrap();
        let a = (1.0f32 / 108.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= a));
        let mut rng2 = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        assert_eq!(ConvWeights::random(3, 4, 8, &mut rng2).unwrap(), w);
    }
}
