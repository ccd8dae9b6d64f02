//! The full network: feature extractors, memory read and head, with their
//! parameters in one store.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::features::{BackboneConfig, FeatureNet, StageSpec};
use crate::head::{GridGeometry, HeadConfig, HeadNet, HeadOutputs, HeadVars};
use crate::params::{Binding, ParamStore};
use crate::reader::read_graph;
use crate::tensor::{read_checkpoint, Graph, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
    /// Side of the square input patch.
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            head: HeadConfig::default(),
            input_size: crate::data::PATCH_SIZE,
        }
    }
}

fn format_stages(stages: &[StageSpec]) -> String {
    let parts: Vec<String> = stages.iter().map(|s| format!("{}x{}", s.channels, s.stride)).collect();
    parts.join(",")
}

fn parse_stages(text: &str) -> Result<Vec<StageSpec>> {
    text.split(',')
        .map(|p| {
            let (c, s) = p
                .trim()
                .split_once('x')
                .ok_or_else(|| Error::invalid(format!("stage `{p}` is not CHANNELSxSTRIDE")))?;
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::invalid(format!("stage `{p}`: {e}")))
            };
            Ok(StageSpec {
                channels: num(c)?,
                stride: num(s)?,
            })
        })
        .collect()
}

/// Keys understood by [`ModelConfig::take_from`].
pub const MODEL_KEYS: &[&str] = &[
    "input_size",
    "stages",
    "kernel",
    "reduced_channels",
    "share_backbone",
    "share_reducer",
    "fb_label",
    "head_depth",
    "head_width",
];

impl ModelConfig {
    /// Gradient-check scale: `C = 4`, a 5 x 5 grid from a 33 x 33 input.
    pub fn tiny() -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                stages: parse_stages("2x2,3x2,3x1,4x2").expect("static"),
                reduced_channels: 4,
                ..BackboneConfig::default()
            },
            head: HeadConfig {
                depth: 1,
                width: Some(4),
            },
            input_size: 33,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.grid_size() < 1 {
            return Err(Error::invalid("input too small for the backbone"));
        }
        Ok(())
    }

    pub fn stride(&self) -> usize {
        self.backbone.total_stride()
    }

    pub fn grid_size(&self) -> usize {
        self.backbone.output_size(self.input_size)
    }

    pub fn grid(&self) -> GridGeometry {
        GridGeometry::centered(self.input_size, self.grid_size(), self.stride())
    }

    /// Removes model keys from `kv`, overriding the current values.
    pub fn take_from(&mut self, kv: &mut KeyValues) -> Result<()> {
        kv.take_into("input_size", &mut self.input_size)?;
        if let Some(s) = kv.take::<String>("stages")? {
            self.backbone.stages = parse_stages(&s)?;
        }
        kv.take_into("kernel", &mut self.backbone.kernel)?;
        kv.take_into("reduced_channels", &mut self.backbone.reduced_channels)?;
        kv.take_into("share_backbone", &mut self.backbone.share_backbone)?;
        kv.take_into("share_reducer", &mut self.backbone.share_reducer)?;
        kv.take_into("fb_label", &mut self.backbone.use_label_map)?;
        kv.take_into("head_depth", &mut self.head.depth)?;
        if let Some(w) = kv.take::<String>("head_width")? {
            self.head.width = match w.as_str() {
                "auto" => None,
                v => Some(
                    v.parse()
                        .map_err(|e| Error::invalid(format!("head_width: {e}")))?,
                ),
            };
        }
        self.validate()
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("input_size", self.input_size);
        kv.set("stages", format_stages(&self.backbone.stages));
        kv.set("kernel", self.backbone.kernel);
        kv.set("reduced_channels", self.backbone.reduced_channels);
        kv.set("share_backbone", self.backbone.share_backbone);
        kv.set("share_reducer", self.backbone.share_reducer);
        kv.set("fb_label", self.backbone.use_label_map);
        kv.set("head_depth", self.head.depth);
        kv.set(
            "head_width",
            self.head.width.map_or("auto".to_string(), |w| w.to_string()),
        );
        kv
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        let mut kv = KeyValues::default();
        for key in MODEL_KEYS {
            let v = meta
                .get(*key)
                .ok_or_else(|| Error::format("checkpoint", format!("metadata lacks `{key}`")))?;
            kv.set(key, v);
        }
        let mut cfg = ModelConfig::default();
        cfg.take_from(&mut kv)?;
        Ok(cfg)
    }

    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let kv = self.to_kv();
        kv.keys()
            .map(|k| (k.to_string(), kv.raw(k).expect("listed key").to_string()))
            .collect()
    }
}

/// One forward sample: memory patches with label maps, and a query patch.
#[derive(Clone, Debug)]
pub struct ModelInput<F: Scalar = f32> {
    /// `(3 x S x S patch, 1 x S x S label map)` per memory frame.
    pub memory: Vec<(Tensor<F>, Tensor<F>)>,
    pub query: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct Model<F: Scalar = f32> {
    pub cfg: ModelConfig,
    pub params: ParamStore<F>,
    pub features: FeatureNet,
    pub head: HeadNet,
}

impl<F: Scalar> Model<F> {
    /// Builds a model with parameters drawn from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let features = FeatureNet::new(cfg.backbone.clone(), &mut params, &mut rng)?;
        let head = HeadNet::new(
            &cfg.head,
            2 * cfg.backbone.reduced_channels,
            cfg.stride(),
            &mut params,
            &mut rng,
        )?;
        Ok(Model {
            cfg,
            params,
            features,
            head,
        })
    }

    pub fn grid(&self) -> GridGeometry {
        self.cfg.grid()
    }

    pub fn cast<G: Scalar>(&self) -> Model<G> {
        Model {
            cfg: self.cfg.clone(),
            params: self.params.cast(),
            features: self.features.clone(),
            head: self.head.clone(),
        }
    }

    /// Builds the whole forward pass on `g`.
    pub fn forward(&self, g: &mut Graph<F>, bind: &mut Binding, input: &ModelInput<F>) -> Result<HeadVars> {
        if input.memory.is_empty() {
            return Err(Error::invalid("forward needs at least one memory frame"));
        }
        let mut mem = Vec::with_capacity(input.memory.len());
        for (frame, label) in &input.memory {
            let f = g.constant(frame.clone());
            let l = g.constant(label.clone());
            mem.push(self.features.embed_memory(g, bind, &self.params, f, l)?);
        }
        let q = g.constant(input.query.clone());
        let q = self.features.embed_query(g, bind, &self.params, q)?;
        let y = read_graph(g, &mem, q)?;
        self.head.forward(g, bind, &self.params, y)
    }

    /// Memory embedding without gradient tracking.
    pub fn embed_memory(&self, frame: &Tensor<F>, label: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::inference();
        let f = g.constant(frame.clone());
        let l = g.constant(label.clone());
        let v = self.features.embed_memory(&mut g, &mut Binding::new(), &self.params, f, l)?;
        Ok(take(g, v))
    }

    pub fn embed_query(&self, frame: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = Graph::inference();
        let f = g.constant(frame.clone());
        let v = self.features.embed_query(&mut g, &mut Binding::new(), &self.params, f)?;
        Ok(take(g, v))
    }

    /// Head outputs for a `2C x H x W` read result.
    pub fn head_outputs(&self, y: &Tensor<F>) -> Result<HeadOutputs<F>> {
        let mut g = Graph::inference();
        let v = g.constant(y.clone());
        let h = self.head.forward(&mut g, &mut Binding::new(), &self.params, v)?;
        Ok(HeadOutputs::from_graph(&g, &h))
    }

    /// Writes parameters with the model configuration and `extra` as
    /// metadata.
    pub fn save(&self, path: impl AsRef<Path>, extra: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra.clone();
        meta.extend(self.cfg.to_meta());
        self.params.save(path, &meta)
    }

    /// Loads a checkpoint written by [`Model::save`]; returns the metadata.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, BTreeMap<String, String>)> {
        let path = path.as_ref();
        let ck = read_checkpoint(path)?;
        let cfg = ModelConfig::from_meta(&ck.meta)?;
        let mut model = Model::new(cfg, 0)?;
        let meta = model.params.load(path)?;
        Ok((model, meta))
    }
}

fn take<F: Scalar>(g: Graph<F>, v: Var) -> Tensor<F> {
    g.value(v).clone()
}
