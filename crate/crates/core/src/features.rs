//! Memory and query feature extractors.
//!
//! Memory branch: `h_m(phi_m_rest(relu(phi_m_0(frame) + g(label))))`.
//! Query branch: `h_q(phi_q(frame))`. `g` has the stem's kernel and stride
//! so its output lands on the stem's grid; `h_m`/`h_q` are 1x1 conv + relu
//! reducing to `C` channels.

use rand::Rng;

use crate::data::CropTransform;
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    /// One 3x3 conv + relu per stage; stage 0 is the stem that the label
    /// map embedding is added to.
    pub stages: Vec<StageSpec>,
    /// Channels `C` after reduction.
    pub reduced_channels: usize,
    pub share_backbone: bool,
    pub use_label_map: bool,
    /// Also share `h` between the branches when the backbone is shared.
    pub share_reducer: bool,
    pub kernel: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            stages: [(16, 2), (32, 2), (32, 1), (64, 2)]
                .iter()
                .map(|&(channels, stride)| StageSpec { channels, stride })
                .collect(),
            reduced_channels: 32,
            share_backbone: false,
            use_label_map: true,
            share_reducer: false,
            kernel: 3,
        }
    }
}

impl BackboneConfig {
    pub fn total_stride(&self) -> usize {
        self.stages.iter().map(|s| s.stride).product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::invalid("backbone needs at least one stage"));
        }
        if self.stages.iter().any(|s| s.channels == 0 || s.stride == 0) {
            return Err(Error::invalid("backbone stages need channels >= 1 and stride >= 1"));
        }
        if !self.total_stride().is_power_of_two() {
            return Err(Error::invalid(format!(
                "backbone total stride {} is not a power of two",
                self.total_stride()
            )));
        }
        if self.reduced_channels == 0 {
            return Err(Error::invalid("reduced channel count C must be >= 1"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::invalid("backbone kernel must be odd"));
        }
        Ok(())
    }

    /// Feature-map side for an input side, with `pad = kernel / 2` at every
    /// stage (289 at stride 8 gives 37).
    pub fn output_size(&self, input: usize) -> usize {
        let pad = self.kernel / 2;
        self.stages.iter().fold(input, |n, s| {
            crate::tensor::ops::conv_out_size(n, self.kernel, s.stride, pad)
        })
    }
}

/// A convolution with named parameters in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        with_bias: bool,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = c_in * k * k;
        let weight = store.add_uniform(format!("{name}.weight"), &[c_out, c_in, k, k], fan_in, gain, rng);
        let bias = with_bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[c_out])));
        ConvLayer {
            weight,
            bias,
            stride,
            pad: k / 2,
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        bind: &mut Binding,
        store: &ParamStore<F>,
        x: Var,
    ) -> Result<Var> {
        let w = bind.var(g, store, self.weight);
        let b = self.bias.map(|b| bind.var(g, store, b));
        g.conv2d(x, w, b, self.stride, self.pad)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        std::iter::once(self.weight).chain(self.bias).collect()
    }
}

const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Memory,
    Query,
}

#[derive(Clone, Debug)]
pub struct FeatureNet {
    pub cfg: BackboneConfig,
    phi_m: Vec<ConvLayer>,
    phi_q: Vec<ConvLayer>,
    label_embed: ConvLayer,
    h_m: ConvLayer,
    h_q: ConvLayer,
}

fn build_backbone<F: Scalar>(
    cfg: &BackboneConfig,
    store: &mut ParamStore<F>,
    prefix: &str,
    rng: &mut impl Rng,
) -> Vec<ConvLayer> {
    let mut c_in = 3;
    cfg.stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let layer = ConvLayer::new(
                store,
                &format!("{prefix}.{i}"),
                c_in,
                s.channels,
                cfg.kernel,
                s.stride,
                true,
                RELU_GAIN,
                rng,
            );
            c_in = s.channels;
            layer
        })
        .collect()
}

impl FeatureNet {
    pub fn new<F: Scalar>(cfg: BackboneConfig, store: &mut ParamStore<F>, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let phi_m = build_backbone(&cfg, store, "phi_m", rng);
        let phi_q = if cfg.share_backbone {
            phi_m.clone()
        } else {
            build_backbone(&cfg, store, "phi_q", rng)
        };
        let stem = &cfg.stages[0];
        let label_embed = ConvLayer::new(store, "g", 1, stem.channels, cfg.kernel, stem.stride, false, 1.0, rng);
        let last = cfg.stages.last().expect("validated").channels;
        let c = cfg.reduced_channels;
        let h_m = ConvLayer::new(store, "h_m", last, c, 1, 1, true, RELU_GAIN, rng);
        let h_q = if cfg.share_backbone && cfg.share_reducer {
            h_m.clone()
        } else {
            ConvLayer::new(store, "h_q", last, c, 1, 1, true, RELU_GAIN, rng)
        };
        Ok(FeatureNet {
            cfg,
            phi_m,
            phi_q,
            label_embed,
            h_m,
            h_q,
        })
    }

    pub fn channels(&self) -> usize {
        self.cfg.reduced_channels
    }

    /// Parameter ids of a branch's backbone (identical lists when shared).
    pub fn backbone_ids(&self, branch: Branch) -> Vec<ParamId> {
        let layers = match branch {
            Branch::Memory => &self.phi_m,
            Branch::Query => &self.phi_q,
        };
        layers.iter().flat_map(|l| l.param_ids()).collect()
    }

    pub fn reducer_ids(&self, branch: Branch) -> Vec<ParamId> {
        match branch {
            Branch::Memory => self.h_m.param_ids(),
            Branch::Query => self.h_q.param_ids(),
        }
    }

    pub fn label_embed_ids(&self) -> Vec<ParamId> {
        self.label_embed.param_ids()
    }

    /// Routes the query branch through the memory backbone's weights.
    /// Reducers stay as they are.
    pub fn share_query_backbone(&mut self) {
        self.phi_q = self.phi_m.clone();
        self.cfg.share_backbone = true;
    }

    /// Memory embedding of `frame` (`3 x S x S`) with its label map
    /// (`1 x S x S`).
    pub fn embed_memory<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        bind: &mut Binding,
        store: &ParamStore<F>,
        frame: Var,
        label: Var,
    ) -> Result<Var> {
        let (fs, ls) = (g.shape(frame), g.shape(label));
        if fs.len() != 3 || ls.len() != 3 || ls[0] != 1 || fs[1..] != ls[1..] {
            return Err(Error::invalid(format!(
                "label map shape {ls:?} does not match frame shape {fs:?}"
            )));
        }
        let mut x = self.phi_m[0].forward(g, bind, store, frame)?;
        if self.cfg.use_label_map {
            let c = self.label_embed.forward(g, bind, store, label)?;
            x = g.add(x, c)?;
        }
        x = g.relu(x);
        for layer in &self.phi_m[1..] {
            let y = layer.forward(g, bind, store, x)?;
            x = g.relu(y);
        }
        let y = self.h_m.forward(g, bind, store, x)?;
        Ok(g.relu(y))
    }

    pub fn embed_query<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        bind: &mut Binding,
        store: &ParamStore<F>,
        frame: Var,
    ) -> Result<Var> {
        let fs = g.shape(frame);
        if fs.len() != 3 || fs[0] != 3 {
            return Err(Error::invalid(format!("query frame must be 3 x H x W, got {fs:?}")));
        }
        let mut x = frame;
        for layer in &self.phi_q {
            let y = layer.forward(g, bind, store, x)?;
            x = g.relu(y);
        }
        let y = self.h_q.forward(g, bind, store, x)?;
        Ok(g.relu(y))
    }
}

/// A materialized `C x H x W` embedding of one frame.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub data: Tensor<f32>,
    /// 1-based frame number in its sequence.
    pub frame_index: usize,
    /// Crop that produced the input patch.
    pub crop: CropTransform,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.data.shape()[1], self.data.shape()[2])
    }
}
