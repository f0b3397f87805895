//! Declarative network construction: a three-branch classifier whose paths
//! meet at a single channel concatenation, and a single-path residual
//! comparator. Layer widths, kernel sizes and strides are configuration;
//! the topology (branch count, residual module count, head) is the model
//! identity that tests assert on.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::CoreError;
use crate::ops::activation::{relu_forward, softmax_forward};
use crate::ops::conv::{conv3d_forward, ConvSpec};
use crate::ops::dense::dense_forward;
use crate::ops::merge::{add_forward, concat_channels_forward};
use crate::ops::norm::{batch_norm_forward, BnMode};
use crate::ops::pool::{avg_pool3d_forward, global_avg_pool_forward, max_pool3d_forward};
use crate::tape::{NodeId, Tape};
use crate::tensor::{Scalar, Tensor};

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

/// One convolution layer of a branch. Bias is carried only when the layer
/// has no batch norm; gamma/beta otherwise subsume it.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ConvLayerCfg {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, rename_all = "snake_case"))]
pub enum BranchLayerCfg {
    Conv(ConvLayerCfg),
    MaxPool { window: usize, stride: usize },
    AvgPool { window: usize, stride: usize },
}

/// A residual module: two stacked k=3 convolutions with an identity skip,
/// plus a 1-cubed projection on the skip when channels or stride change.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ResidualCfg {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct PhiNetSpec {
    pub classes: usize,
    pub input_extent: usize,
    pub batch_norm: bool,
    pub conv_branch: Vec<BranchLayerCfg>,
    pub stem: ConvLayerCfg,
    pub residuals: Vec<ResidualCfg>,
    pub pool_branch: Vec<BranchLayerCfg>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ResNetMinusSpec {
    pub classes: usize,
    pub input_extent: usize,
    pub batch_norm: bool,
    pub stem: ConvLayerCfg,
    pub residuals: Vec<ResidualCfg>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, rename_all = "snake_case"))]
pub enum NetworkSpec {
    Phinet(PhiNetSpec),
    ResnetMinus(ResNetMinusSpec),
}

impl PhiNetSpec {
    /// CPU-sized default: three branches, each downsampling 8x, meeting at
    /// a 4-cubed concatenation for 32-cubed inputs.
    pub fn desk_default(classes: usize) -> Self {
        PhiNetSpec {
            classes,
            input_extent: 32,
            batch_norm: true,
            conv_branch: vec![
                BranchLayerCfg::Conv(ConvLayerCfg {
                    out_channels: 8,
                    kernel: 7,
                    stride: 4,
                    padding: 3,
                }),
                BranchLayerCfg::Conv(ConvLayerCfg {
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                }),
            ],
            stem: ConvLayerCfg {
                out_channels: 8,
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            residuals: vec![
                ResidualCfg { channels: 8, stride: 1 },
                ResidualCfg { channels: 8, stride: 1 },
                ResidualCfg { channels: 16, stride: 2 },
                ResidualCfg { channels: 16, stride: 1 },
                ResidualCfg { channels: 16, stride: 1 },
                ResidualCfg { channels: 32, stride: 2 },
                ResidualCfg { channels: 32, stride: 1 },
            ],
            pool_branch: vec![
                BranchLayerCfg::MaxPool { window: 2, stride: 2 },
                BranchLayerCfg::AvgPool { window: 2, stride: 2 },
                BranchLayerCfg::Conv(ConvLayerCfg {
                    out_channels: 8,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                }),
                BranchLayerCfg::MaxPool { window: 2, stride: 2 },
            ],
        }
    }

    /// Same topology at minimal widths for 16-cubed inputs; small enough for
    /// exhaustive finite-difference audits of the whole loss.
    pub fn tiny(classes: usize) -> Self {
        PhiNetSpec {
            classes,
            input_extent: 16,
            batch_norm: true,
            conv_branch: vec![
                BranchLayerCfg::Conv(ConvLayerCfg {
                    out_channels: 2,
                    kernel: 7,
                    stride: 4,
                    padding: 3,
                }),
                BranchLayerCfg::Conv(ConvLayerCfg {
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                }),
            ],
            stem: ConvLayerCfg {
                out_channels: 2,
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            residuals: vec![
                ResidualCfg { channels: 2, stride: 1 },
                ResidualCfg { channels: 2, stride: 1 },
                ResidualCfg { channels: 3, stride: 2 },
                ResidualCfg { channels: 3, stride: 1 },
                ResidualCfg { channels: 3, stride: 1 },
                ResidualCfg { channels: 4, stride: 2 },
                ResidualCfg { channels: 4, stride: 1 },
            ],
            pool_branch: vec![
                BranchLayerCfg::MaxPool { window: 2, stride: 2 },
                BranchLayerCfg::AvgPool { window: 2, stride: 2 },
                BranchLayerCfg::Conv(ConvLayerCfg {
                    out_channels: 2,
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                }),
                BranchLayerCfg::MaxPool { window: 2, stride: 2 },
            ],
        }
    }
}

impl ResNetMinusSpec {
    pub fn desk_default(classes: usize) -> Self {
        ResNetMinusSpec {
            classes,
            input_extent: 32,
            batch_norm: true,
            stem: ConvLayerCfg {
                out_channels: 8,
                kernel: 3,
                stride: 2,
                padding: 1,
            },
            residuals: vec![
                ResidualCfg { channels: 8, stride: 1 },
                ResidualCfg { channels: 8, stride: 1 },
                ResidualCfg { channels: 8, stride: 1 },
                ResidualCfg { channels: 16, stride: 2 },
                ResidualCfg { channels: 16, stride: 1 },
                ResidualCfg { channels: 16, stride: 1 },
                ResidualCfg { channels: 16, stride: 1 },
                ResidualCfg { channels: 32, stride: 2 },
                ResidualCfg { channels: 32, stride: 1 },
                ResidualCfg { channels: 32, stride: 1 },
                ResidualCfg { channels: 32, stride: 1 },
            ],
        }
    }
}

impl NetworkSpec {
    pub fn build<S: Scalar>(&self, seed: u64) -> Result<Model<S>, CoreError> {
        match self {
            NetworkSpec::Phinet(spec) => build_phinet(spec, seed),
            NetworkSpec::ResnetMinus(spec) => build_resnet_minus(spec, seed),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            NetworkSpec::Phinet(s) => s.classes,
            NetworkSpec::ResnetMinus(s) => s.classes,
        }
    }

    pub fn input_extent(&self) -> usize {
        match self {
            NetworkSpec::Phinet(s) => s.input_extent,
            NetworkSpec::ResnetMinus(s) => s.input_extent,
        }
    }
}

/// Ordered name-to-tensor map holding every learnable parameter plus the
/// non-trainable batch-norm running moments.
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
    index: BTreeMap<String, usize>,
}

pub struct ParamEntry<S> {
    pub name: String,
    pub tensor: Tensor<S>,
    pub trainable: bool,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: String,
        tensor: Tensor<S>,
        trainable: bool,
    ) -> Result<usize, CoreError> {
        if self.index.contains_key(&name) {
            return Err(CoreError::InvalidConfig(format!(
                "duplicate parameter name {name}"
            )));
        }
        let idx = self.entries.len();
        self.index.insert(name.clone(), idx);
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable,
        });
        Ok(idx)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, idx: usize) -> &ParamEntry<S> {
        &self.entries[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<S> {
        &self.entries[idx].tensor
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<S> {
        &mut self.entries[idx].tensor
    }

    pub fn two_mut(&mut self, a: usize, b: usize) -> (&mut Tensor<S>, &mut Tensor<S>) {
        assert!(a != b, "distinct indices required");
        if a < b {
            let (lo, hi) = self.entries.split_at_mut(b);
            (&mut lo[a].tensor, &mut hi[0].tensor)
        } else {
            let (lo, hi) = self.entries.split_at_mut(a);
            (&mut hi[0].tensor, &mut lo[b].tensor)
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.index.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.index
            .get(name)
            .copied()
            .map(move |i| &mut self.entries[i].tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry<S>> {
        self.entries.iter()
    }

    /// Total number of trainable scalars.
    pub fn trainable_scalar_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn trainable_indices(&self) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].trainable)
            .collect()
    }
}

struct BnRefs {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

struct ConvRefs {
    weight: usize,
    bias: Option<usize>,
    bn: Option<BnRefs>,
    spec: ConvSpec,
    relu: bool,
}

// a plan holds tens of steps at most, so the size spread is irrelevant
#[allow(clippy::large_enum_variant)]
enum Step {
    Conv(ConvRefs),
    MaxPool { window: usize, stride: usize },
    AvgPool { window: usize, stride: usize },
    Residual {
        conv1: ConvRefs,
        conv2: ConvRefs,
        proj: Option<ConvRefs>,
    },
}

/// A built network: parameter storage plus the executable layer plan.
pub struct Model<S> {
    spec: NetworkSpec,
    store: ParamStore<S>,
    branches: Vec<Vec<Step>>,
    head_weight: usize,
    head_bias: usize,
    classes: usize,
}

struct Builder<S> {
    store: ParamStore<S>,
    rng: ChaCha8Rng,
    batch_norm: bool,
}

impl<S: Scalar> Builder<S> {
    fn new(seed: u64, batch_norm: bool) -> Self {
        Builder {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            batch_norm,
        }
    }

    fn he_tensor(&mut self, shape: Vec<usize>, fan_in: usize) -> Tensor<S> {
        let std = libm::sqrt(2.0 / fan_in as f64);
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n)
            .map(|_| {
                let z: f64 = self.rng.sample(StandardNormal);
                S::from_f64(z * std)
            })
            .collect();
        Tensor::new(shape, data).expect("generated data matches shape")
    }

    fn conv(
        &mut self,
        prefix: &str,
        in_ch: usize,
        cfg: &ConvLayerCfg,
        relu: bool,
    ) -> Result<ConvRefs, CoreError> {
        let spec = ConvSpec::new(in_ch, cfg.out_channels, cfg.kernel, cfg.stride, cfg.padding)?;
        let k = cfg.kernel;
        let fan_in = in_ch * k * k * k;
        let w = self.he_tensor(vec![cfg.out_channels, in_ch, k, k, k], fan_in);
        let weight = self.store.insert(format!("{prefix}.weight"), w, true)?;
        let (bias, bn) = if self.batch_norm {
            let c = cfg.out_channels;
            let gamma = self.store.insert(
                format!("{prefix}.bn.gamma"),
                Tensor::full(vec![c], S::one()),
                true,
            )?;
            let beta =
                self.store
                    .insert(format!("{prefix}.bn.beta"), Tensor::zeros(vec![c]), true)?;
            let mean = self.store.insert(
                format!("{prefix}.bn.running_mean"),
                Tensor::zeros(vec![c]),
                false,
            )?;
            let var = self.store.insert(
                format!("{prefix}.bn.running_var"),
                Tensor::full(vec![c], S::one()),
                false,
            )?;
            (
                None,
                Some(BnRefs {
                    gamma,
                    beta,
                    mean,
                    var,
                }),
            )
        } else {
            let bias = self.store.insert(
                format!("{prefix}.bias"),
                Tensor::zeros(vec![cfg.out_channels]),
                true,
            )?;
            (Some(bias), None)
        };
        Ok(ConvRefs {
            weight,
            bias,
            bn,
            spec,
            relu,
        })
    }

    fn residual(
        &mut self,
        prefix: &str,
        in_ch: usize,
        cfg: &ResidualCfg,
    ) -> Result<Step, CoreError> {
        if cfg.stride < 1 || cfg.channels == 0 {
            return Err(CoreError::InvalidConfig(format!(
                "residual module {prefix} has invalid channels/stride"
            )));
        }
        let conv1 = self.conv(
            &format!("{prefix}.conv1"),
            in_ch,
            &ConvLayerCfg {
                out_channels: cfg.channels,
                kernel: 3,
                stride: cfg.stride,
                padding: 1,
            },
            true,
        )?;
        let conv2 = self.conv(
            &format!("{prefix}.conv2"),
            cfg.channels,
            &ConvLayerCfg {
                out_channels: cfg.channels,
                kernel: 3,
                stride: 1,
                padding: 1,
            },
            false,
        )?;
        let proj = if in_ch != cfg.channels || cfg.stride > 1 {
            Some(self.conv(
                &format!("{prefix}.proj"),
                in_ch,
                &ConvLayerCfg {
                    out_channels: cfg.channels,
                    kernel: 1,
                    stride: cfg.stride,
                    padding: 0,
                },
                false,
            )?)
        } else {
            None
        };
        Ok(Step::Residual { conv1, conv2, proj })
    }

    fn branch_layer(
        &mut self,
        prefix: &str,
        in_ch: usize,
        cfg: &BranchLayerCfg,
    ) -> Result<(Step, usize), CoreError> {
        Ok(match cfg {
            BranchLayerCfg::Conv(c) => (
                Step::Conv(self.conv(prefix, in_ch, c, true)?),
                c.out_channels,
            ),
            BranchLayerCfg::MaxPool { window, stride } => (
                Step::MaxPool {
                    window: *window,
                    stride: *stride,
                },
                in_ch,
            ),
            BranchLayerCfg::AvgPool { window, stride } => (
                Step::AvgPool {
                    window: *window,
                    stride: *stride,
                },
                in_ch,
            ),
        })
    }
}

/// Spatial extent after one layer, used both to validate a spec statically
/// and to cross-check the executed graph.
fn step_extent(extent: usize, step: &BranchLayerCfg) -> Result<usize, CoreError> {
    match step {
        BranchLayerCfg::Conv(c) => {
            ConvSpec::new(1, c.out_channels, c.kernel, c.stride, c.padding)?.out_extent(extent)
        }
        BranchLayerCfg::MaxPool { window, stride }
        | BranchLayerCfg::AvgPool { window, stride } => {
            if *window > extent {
                Err(CoreError::ShapeMismatch(format!(
                    "pool window {window} exceeds extent {extent}"
                )))
            } else {
                Ok((extent - window) / stride + 1)
            }
        }
    }
}

fn center_extent(
    stem: &ConvLayerCfg,
    residuals: &[ResidualCfg],
    extent: usize,
) -> Result<usize, CoreError> {
    let mut e = step_extent(extent, &BranchLayerCfg::Conv(stem.clone()))?;
    for r in residuals {
        // module extent is set by its strided first convolution
        e = ConvSpec::new(1, r.channels, 3, r.stride, 1)?.out_extent(e)?;
    }
    Ok(e)
}

impl PhiNetSpec {
    /// Declared output extent of each branch for a given input extent:
    /// (conv branch, center, pooling branch).
    pub fn branch_extents(&self, input_extent: usize) -> Result<[usize; 3], CoreError> {
        let mut conv_e = input_extent;
        for l in &self.conv_branch {
            conv_e = step_extent(conv_e, l)?;
        }
        let center_e = center_extent(&self.stem, &self.residuals, input_extent)?;
        let mut pool_e = input_extent;
        for l in &self.pool_branch {
            pool_e = step_extent(pool_e, l)?;
        }
        Ok([conv_e, center_e, pool_e])
    }
}

pub fn build_phinet<S: Scalar>(spec: &PhiNetSpec, seed: u64) -> Result<Model<S>, CoreError> {
    if spec.classes < 2 {
        return Err(CoreError::InvalidConfig(
            "classifier needs at least 2 classes".into(),
        ));
    }
    let [conv_e, center_e, pool_e] = spec.branch_extents(spec.input_extent)?;
    if conv_e != center_e || center_e != pool_e {
        return Err(CoreError::ShapeMismatch(format!(
            "branch outputs disagree at concat: {conv_e} vs {center_e} vs {pool_e}"
        )));
    }

    let mut b = Builder::new(seed, spec.batch_norm);

    let mut conv_branch = Vec::new();
    let mut ch = 1;
    for (i, l) in spec.conv_branch.iter().enumerate() {
        let (step, out_ch) = b.branch_layer(&format!("conv_branch.{i}"), ch, l)?;
        conv_branch.push(step);
        ch = out_ch;
    }
    let conv_ch = ch;

    let mut center = Vec::new();
    center.push(Step::Conv(b.conv("center.stem", 1, &spec.stem, true)?));
    let mut ch = spec.stem.out_channels;
    for (i, r) in spec.residuals.iter().enumerate() {
        center.push(b.residual(&format!("center.res{i}"), ch, r)?);
        ch = r.channels;
    }
    let center_ch = ch;

    let mut pool_branch = Vec::new();
    let mut ch = 1;
    for (i, l) in spec.pool_branch.iter().enumerate() {
        let (step, out_ch) = b.branch_layer(&format!("pool_branch.{i}"), ch, l)?;
        pool_branch.push(step);
        ch = out_ch;
    }
    let pool_ch = ch;

    let feat = conv_ch + center_ch + pool_ch;
    let head_w = b.he_tensor(vec![feat, spec.classes], feat);
    let head_weight = b.store.insert("head.fc.weight".into(), head_w, true)?;
    let head_bias = b.store.insert(
        "head.fc.bias".into(),
        Tensor::zeros(vec![spec.classes]),
        true,
    )?;

    Ok(Model {
        spec: NetworkSpec::Phinet(spec.clone()),
        store: b.store,
        branches: vec![conv_branch, center, pool_branch],
        head_weight,
        head_bias,
        classes: spec.classes,
    })
}

pub fn build_resnet_minus<S: Scalar>(
    spec: &ResNetMinusSpec,
    seed: u64,
) -> Result<Model<S>, CoreError> {
    if spec.classes < 2 {
        return Err(CoreError::InvalidConfig(
            "classifier needs at least 2 classes".into(),
        ));
    }
    // fails when the stride chain exhausts the declared input extent
    center_extent(&spec.stem, &spec.residuals, spec.input_extent)?;

    let mut b = Builder::new(seed, spec.batch_norm);
    let mut center = Vec::new();
    center.push(Step::Conv(b.conv("center.stem", 1, &spec.stem, true)?));
    let mut ch = spec.stem.out_channels;
    for (i, r) in spec.residuals.iter().enumerate() {
        center.push(b.residual(&format!("center.res{i}"), ch, r)?);
        ch = r.channels;
    }

    let head_w = b.he_tensor(vec![ch, spec.classes], ch);
    let head_weight = b.store.insert("head.fc.weight".into(), head_w, true)?;
    let head_bias = b.store.insert(
        "head.fc.bias".into(),
        Tensor::zeros(vec![spec.classes]),
        true,
    )?;

    Ok(Model {
        spec: NetworkSpec::ResnetMinus(spec.clone()),
        store: b.store,
        branches: vec![center],
        head_weight,
        head_bias,
        classes: spec.classes,
    })
}

/// The two ways to execute the layer plan: recording onto a tape for
/// training, or running the pure kernels for inference. Keeping one walk
/// over the plan guarantees both paths share the topology.
trait Exec<S: Scalar> {
    type V: Clone;
    fn conv(&mut self, x: Self::V, refs: &ConvRefs) -> Result<Self::V, CoreError>;
    fn max_pool(&mut self, x: Self::V, window: usize, stride: usize) -> Result<Self::V, CoreError>;
    fn avg_pool(&mut self, x: Self::V, window: usize, stride: usize) -> Result<Self::V, CoreError>;
    fn add_relu(&mut self, a: Self::V, b: Self::V) -> Result<Self::V, CoreError>;
    fn concat(&mut self, xs: Vec<Self::V>) -> Result<Self::V, CoreError>;
    fn head(&mut self, x: Self::V, weight: usize, bias: usize) -> Result<Self::V, CoreError>;
}

fn walk<S: Scalar, E: Exec<S>>(
    exec: &mut E,
    branches: &[Vec<Step>],
    head_weight: usize,
    head_bias: usize,
    input: E::V,
) -> Result<E::V, CoreError> {
    let mut outputs = Vec::with_capacity(branches.len());
    for steps in branches {
        let mut v = input.clone();
        for step in steps {
            v = match step {
                Step::Conv(r) => exec.conv(v, r)?,
                Step::MaxPool { window, stride } => exec.max_pool(v, *window, *stride)?,
                Step::AvgPool { window, stride } => exec.avg_pool(v, *window, *stride)?,
                Step::Residual { conv1, conv2, proj } => {
                    let skip = match proj {
                        Some(p) => exec.conv(v.clone(), p)?,
                        None => v.clone(),
                    };
                    let y = exec.conv(v, conv1)?;
                    let y = exec.conv(y, conv2)?;
                    exec.add_relu(y, skip)?
                }
            };
        }
        outputs.push(v);
    }
    let merged = if outputs.len() == 1 {
        outputs.pop().expect("one branch output")
    } else {
        exec.concat(outputs)?
    };
    exec.head(merged, head_weight, head_bias)
}

struct PureExec<'a, S> {
    store: &'a ParamStore<S>,
}

impl<S: Scalar> Exec<S> for PureExec<'_, S> {
    type V = Tensor<S>;

    fn conv(&mut self, x: Tensor<S>, refs: &ConvRefs) -> Result<Tensor<S>, CoreError> {
        let zero_bias;
        let bias = match refs.bias {
            Some(b) => self.store.tensor(b),
            None => {
                zero_bias = Tensor::zeros(vec![refs.spec.out_channels]);
                &zero_bias
            }
        };
        let mut out = conv3d_forward(&x, self.store.tensor(refs.weight), bias, &refs.spec)?;
        if let Some(bn) = &refs.bn {
            // eval mode never touches the running moments; clone to satisfy
            // the kernel's uniform signature
            let mut rm = self.store.tensor(bn.mean).clone();
            let mut rv = self.store.tensor(bn.var).clone();
            let (y, _) = batch_norm_forward(
                &out,
                self.store.tensor(bn.gamma),
                self.store.tensor(bn.beta),
                &mut rm,
                &mut rv,
                BnMode::Eval,
                BN_MOMENTUM,
                BN_EPS,
            )?;
            out = y;
        }
        Ok(if refs.relu { relu_forward(&out) } else { out })
    }

    fn max_pool(&mut self, x: Tensor<S>, window: usize, stride: usize) -> Result<Tensor<S>, CoreError> {
        Ok(max_pool3d_forward(&x, window, stride)?.0)
    }

    fn avg_pool(&mut self, x: Tensor<S>, window: usize, stride: usize) -> Result<Tensor<S>, CoreError> {
        avg_pool3d_forward(&x, window, stride)
    }

    fn add_relu(&mut self, a: Tensor<S>, b: Tensor<S>) -> Result<Tensor<S>, CoreError> {
        Ok(relu_forward(&add_forward(&a, &b)?))
    }

    fn concat(&mut self, xs: Vec<Tensor<S>>) -> Result<Tensor<S>, CoreError> {
        let refs: Vec<&Tensor<S>> = xs.iter().collect();
        concat_channels_forward(&refs)
    }

    fn head(&mut self, x: Tensor<S>, weight: usize, bias: usize) -> Result<Tensor<S>, CoreError> {
        let feat = global_avg_pool_forward(&x)?;
        dense_forward(&feat, self.store.tensor(weight), self.store.tensor(bias))
    }
}

struct TapeExec<'a, S: Scalar> {
    tape: &'a mut Tape<S>,
    store: &'a mut ParamStore<S>,
    param_nodes: Vec<(usize, NodeId)>,
}

impl<S: Scalar> TapeExec<'_, S> {
    fn param(&mut self, idx: usize) -> NodeId {
        let node = self.tape.leaf(self.store.tensor(idx).clone(), true);
        self.param_nodes.push((idx, node));
        node
    }
}

impl<S: Scalar> Exec<S> for TapeExec<'_, S> {
    type V = NodeId;

    fn conv(&mut self, x: NodeId, refs: &ConvRefs) -> Result<NodeId, CoreError> {
        let w = self.param(refs.weight);
        let bias = match refs.bias {
            Some(b) => self.param(b),
            None => self
                .tape
                .leaf(Tensor::zeros(vec![refs.spec.out_channels]), false),
        };
        let mut out = self.tape.conv3d(x, w, bias, &refs.spec)?;
        if let Some(bn) = &refs.bn {
            let gamma = self.param(bn.gamma);
            let beta = self.param(bn.beta);
            let (rm, rv) = self.store.two_mut(bn.mean, bn.var);
            out = self.tape.batch_norm(
                out,
                gamma,
                beta,
                rm,
                rv,
                BnMode::Train,
                BN_MOMENTUM,
                BN_EPS,
            )?;
        }
        Ok(if refs.relu { self.tape.relu(out) } else { out })
    }

    fn max_pool(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId, CoreError> {
        self.tape.max_pool3d(x, window, stride)
    }

    fn avg_pool(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId, CoreError> {
        self.tape.avg_pool3d(x, window, stride)
    }

    fn add_relu(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, CoreError> {
        let sum = self.tape.add(a, b)?;
        Ok(self.tape.relu(sum))
    }

    fn concat(&mut self, xs: Vec<NodeId>) -> Result<NodeId, CoreError> {
        self.tape.concat_channels(&xs)
    }

    fn head(&mut self, x: NodeId, weight: usize, bias: usize) -> Result<NodeId, CoreError> {
        let feat = self.tape.global_avg_pool(x)?;
        let w = self.param(weight);
        let b = self.param(bias);
        self.tape.dense(feat, w, b)
    }
}

fn check_input<S: Scalar>(batch: &Tensor<S>) -> Result<(), CoreError> {
    let [_, c, _, _, _] = batch.dims5()?;
    if c != 1 {
        return Err(CoreError::ShapeMismatch(format!(
            "expected single-channel input, got {c} channels"
        )));
    }
    Ok(())
}

impl<S: Scalar> Model<S> {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    /// Number of parallel paths from the input to the merge point.
    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    /// Whether the graph contains a channel-concatenation node.
    pub fn has_concat(&self) -> bool {
        self.branches.len() > 1
    }

    pub fn residual_module_count(&self) -> usize {
        self.branches
            .iter()
            .flatten()
            .filter(|s| matches!(s, Step::Residual { .. }))
            .count()
    }

    /// Record a training-mode forward pass onto `tape` (updates batch-norm
    /// running moments). Returns the logits node plus, for every trainable
    /// parameter used, its store index and tape leaf.
    pub fn forward_train(
        &mut self,
        tape: &mut Tape<S>,
        batch: Tensor<S>,
    ) -> Result<(NodeId, Vec<(usize, NodeId)>), CoreError> {
        check_input(&batch)?;
        let input = tape.leaf(batch, false);
        let mut exec = TapeExec {
            tape,
            store: &mut self.store,
            param_nodes: Vec::new(),
        };
        let logits = walk(
            &mut exec,
            &self.branches,
            self.head_weight,
            self.head_bias,
            input,
        )?;
        Ok((logits, exec.param_nodes))
    }

    /// Deterministic inference: eval-mode batch norm, softmax probabilities.
    pub fn forward_eval(&self, batch: &Tensor<S>) -> Result<Tensor<S>, CoreError> {
        check_input(batch)?;
        let mut exec = PureExec { store: &self.store };
        let logits = walk(
            &mut exec,
            &self.branches,
            self.head_weight,
            self.head_bias,
            batch.clone(),
        )?;
        softmax_forward(&logits)
    }

    /// Argmax class per item (ties to the lowest class index) plus the full
    /// probability rows.
    pub fn predict(&self, batch: &Tensor<S>) -> Result<(Vec<usize>, Tensor<S>), CoreError> {
        let probs = self.forward_eval(batch)?;
        Ok((argmax_rows(&probs), probs))
    }
}

/// Row-wise argmax with ties resolved to the lowest index.
pub fn argmax_rows<S: Scalar>(probs: &Tensor<S>) -> Vec<usize> {
    let [n, k] = probs.dims2().expect("argmax expects N x K probabilities");
    (0..n)
        .map(|i| {
            let row = &probs.data()[i * k..][..k];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
