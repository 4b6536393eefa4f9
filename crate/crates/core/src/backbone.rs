//! A stem plus four stages of sparse blocks, in baseline or pruned form.
//!
//! Each stage opens with a downsampling block (regular convolution, or a
//! plain submanifold block when the stage stride is 1) and continues with
//! two submanifold blocks. In pruned mode every block except
//! the stem is swapped for its pruned counterpart: submanifold blocks become
//! SPSS blocks and strided downsampling blocks become SPRS blocks. Every
//! block is conv, per-channel affine, ReLU.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{affine_relu, apply_rulebook, Affine, ConvWeights};
use crate::error::{Error, Result};
use crate::pruning::{sprs_conv_detailed, spss_conv_detailed, SelectionStrategy};
use crate::rulebook::{
    build_regular_rulebook, build_subm_rulebook, flops_of, KernelSpec, Rulebook,
};
use crate::tensor::SparseTensor;

pub const STAGES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneMode {
    Baseline,
    Pruned,
}

/// Strategy family; the random variant derives a per-layer seed from the
/// backbone seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Magnitude,
    Random,
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: [usize; STAGES],
    pub stage_strides: [i32; STAGES],
    pub subm_ratios: [f64; STAGES],
    pub down_ratios: [f64; STAGES - 1],
    pub kernel_size: usize,
    pub mode: BackboneMode,
    pub strategy: StrategyKind,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            in_channels: 1,
            stem_channels: 16,
            stage_channels: [16, 32, 64, 128],
            stage_strides: [1, 2, 2, 2],
            subm_ratios: [0.0; STAGES],
            down_ratios: [0.0; STAGES - 1],
            kernel_size: 3,
            mode: BackboneMode::Baseline,
            strategy: StrategyKind::Magnitude,
            seed: 0,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        KernelSpec::unit(self.kernel_size).map_err(|_| {
            Error::Config(format!("kernel_size must be odd, got {}", self.kernel_size))
        })?;
        if self.in_channels == 0
            || self.stem_channels == 0
            || self.stage_channels.iter().any(|&c| c == 0)
        {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        if self.stage_strides.iter().any(|&s| s < 1) {
            return Err(Error::Config(format!(
                "stage strides must be >= 1, got {:?}",
                self.stage_strides
            )));
        }
        for (name, r) in self
            .subm_ratios
            .iter()
            .map(|r| ("subm_ratios", r))
            .chain(self.down_ratios.iter().map(|r| ("down_ratios", r)))
        {
            if !(0.0..=1.0).contains(r) {
                return Err(Error::Config(format!(
                    "{name} entries must lie in [0, 1], got {r}"
                )));
            }
        }
        Ok(())
    }

    /// Same network with every pruning ratio set as given.
    pub fn with_ratios(&self, subm: f64, down: f64) -> Self {
        BackboneConfig {
            subm_ratios: [subm; STAGES],
            down_ratios: [down; STAGES - 1],
            ..self.clone()
        }
    }
}

/// What a layer computes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "op")]
pub enum LayerOp {
    Subm,
    Regular,
    Spss { ratio: f64 },
    Sprs { ratio: f64 },
}

impl LayerOp {
    pub fn is_pruned(&self) -> bool {
        matches!(self, LayerOp::Spss { .. } | LayerOp::Sprs { .. })
    }

    /// Submanifold-type layers keep their coordinate set.
    pub fn is_submanifold(&self) -> bool {
        matches!(self, LayerOp::Subm | LayerOp::Spss { .. })
    }
}

#[derive(Debug, Clone)]
pub struct Layer {
    pub op: LayerOp,
    pub spec: KernelSpec,
    pub weights: ConvWeights,
    /// Seed for the random strategy, unique per layer.
    pub layer_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub op: String,
    pub active_in: usize,
    pub active_out: usize,
    pub flops: u64,
    /// Positions in the important set (all inputs for unpruned layers).
    pub important: usize,
    pub unimportant: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub name: String,
    pub active_voxel_count: usize,
    pub conv_flops: u64,
    /// Summed over the stage's submanifold-type layers.
    pub positions_convolved: usize,
    pub positions_skipped: usize,
    pub layers: Vec<LayerStats>,
}

/// Everything a forward pass produced.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub output: SparseTensor,
    pub stats: Vec<StageStats>,
    /// One rulebook per layer, in execution order, grouped like `stats`.
    pub rulebooks: Vec<Vec<Rulebook>>,
}

impl ForwardTrace {
    pub fn total_flops(&self) -> u64 {
        self.stats.iter().map(|s| s.conv_flops).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    cfg: BackboneConfig,
    /// `stages[0]` is the stem; `stages[1..]` are the four stages.
    stages: Vec<Vec<Layer>>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn build_backbone(cfg: &BackboneConfig) -> Result<Backbone> {
    cfg.validate()?;
    let k = cfg.kernel_size;
    let pruned = cfg.mode == BackboneMode::Pruned;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layer_count = 0u64;
    let mut make = |op: LayerOp, stride: i32, c_in: usize, c_out: usize| -> Result<Layer> {
        let weights =
            ConvWeights::random(k, c_in, c_out, &mut rng)?.with_affine(Affine::identity(c_out))?;
        layer_count += 1;
        Ok(Layer {
            op,
            spec: KernelSpec::new(k, [stride; 3])?,
            weights,
            layer_seed: splitmix64(cfg.seed ^ layer_count),
        })
    };

    let mut stages = vec![vec![make(
        LayerOp::Subm,
        1,
        cfg.in_channels,
        cfg.stem_channels,
    )?]];
    let mut c_prev = cfg.stem_channels;
    for s in 0..STAGES {
        let c = cfg.stage_channels[s];
        let stride = cfg.stage_strides[s];
        let down = if stride == 1 {
            LayerOp::Subm
        } else if pruned && s > 0 {
            LayerOp::Sprs {
                ratio: cfg.down_ratios[s - 1],
            }
        } else {
            LayerOp::Regular
        };
        let subm = if pruned {
            LayerOp::Spss {
                ratio: cfg.subm_ratios[s],
            }
        } else {
            LayerOp::Subm
        };
        stages.push(vec![
            make(down, stride, c_prev, c)?,
            make(subm, 1, c, c)?,
            make(subm, 1, c, c)?,
        ]);
        c_prev = c;
    }
    Ok(Backbone {
        cfg: cfg.clone(),
        stages,
    })
}

impl Backbone {
    pub fn config(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn stages(&self) -> &[Vec<Layer>] {
        &self.stages
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.stages.iter().flatten()
    }

    pub fn pruned_layer_count(&self) -> usize {
        self.layers().filter(|l| l.op.is_pruned()).count()
    }

    pub fn out_channels(&self) -> usize {
        self.cfg.stage_channels[STAGES - 1]
    }

    fn strategy_for(&self, layer: &Layer) -> SelectionStrategy {
        match self.cfg.strategy {
            StrategyKind::Magnitude => SelectionStrategy::Magnitude,
            StrategyKind::Inverse => SelectionStrategy::Inverse,
            StrategyKind::Random => SelectionStrategy::Random(layer.layer_seed),
        }
    }

    pub fn forward(&self, t: &SparseTensor) -> Result<(SparseTensor, Vec<StageStats>)> {
        let trace = self.forward_traced(t)?;
        Ok((trace.output, trace.stats))
    }

    pub fn forward_traced(&self, t: &SparseTensor) -> Result<ForwardTrace> {
        if t.channels() != self.cfg.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, backbone stem expects {}",
                t.channels(),
                self.cfg.in_channels
            )));
        }
        let mut x = t.clone();
        let mut stats = Vec::with_capacity(self.stages.len());
        let mut rulebooks = Vec::with_capacity(self.stages.len());
        for (si, stage) in self.stages.iter().enumerate() {
            let mut st = StageStats {
                name: if si == 0 {
                    "stem".into()
                } else {
                    format!("stage{si}")
                },
                ..Default::default()
            };
            let mut rbs = Vec::with_capacity(stage.len());
            for layer in stage {
                let (y, rb, ls) = self.run_layer(layer, &x)?;
                st.conv_flops += ls.flops;
                if layer.op.is_submanifold() {
                    st.positions_convolved += ls.important;
                    st.positions_skipped += ls.unimportant;
                }
                st.layers.push(ls);
                rbs.push(rb);
                x = y;
            }
            st.active_voxel_count = x.len();
            stats.push(st);
            rulebooks.push(rbs);
        }
        Ok(ForwardTrace {
            output: x,
            stats,
            rulebooks,
        })
    }

    fn run_layer(
        &self,
        layer: &Layer,
        x: &SparseTensor,
    ) -> Result<(SparseTensor, Rulebook, LayerStats)> {
        let w = &layer.weights;
        let n = x.len();
        let (y, rb, important, unimportant, name) = match layer.op {
            LayerOp::Subm => {
                let rb = build_subm_rulebook(x, &layer.spec, None)?;
                (apply_rulebook(x, &rb, w)?, rb, n, 0, "subm")
            }
            LayerOp::Regular => {
                let rb = build_regular_rulebook(x, &layer.spec, None)?;
                (apply_rulebook(x, &rb, w)?, rb, n, 0, "regular")
            }
            LayerOp::Spss { ratio } => {
                let out = spss_conv_detailed(x, &layer.spec, w, ratio, self.strategy_for(layer))?;
                let (im, nim) = (out.partition.im.len(), out.partition.nim.len());
                (out.tensor, out.rulebook, im, nim, "spss")
            }
            LayerOp::Sprs { ratio } => {
                let out = sprs_conv_detailed(x, &layer.spec, w, ratio, self.strategy_for(layer))?;
                let (im, nim) = (out.partition.im.len(), out.partition.nim.len());
                (out.tensor, out.rulebook, im, nim, "sprs")
            }
        };
        let y = affine_relu(&y, w)?;
        let ls = LayerStats {
            op: name.into(),
            active_in: n,
            active_out: y.len(),
            flops: flops_of(&rb, w.c_in(), w.c_out()),
            important,
            unimportant,
        };
        Ok((y, rb, ls))
    }
}
