use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::model::blocks::{ConvFormerLayer, Efn, LkMixer, ResidualBlock};
use crate::model::config::ModelConfig;
use crate::model::edc::Edc;
use crate::model::store::{StoreMode, WeightStore};
use crate::model::ModelError;
use crate::nn::{join, ConvWeights, Parameters};
use crate::tensor::{Real, Tensor};

/// The full network: shallow 3x3 conv, residual blocks, feature skip, and a
/// 3x3 conv + pixel shuffle reconstruction head.
#[derive(Debug, Clone, PartialEq)]
pub struct Cfsr {
    config: ModelConfig,
    pub shallow: ConvWeights,
    pub blocks: Vec<ResidualBlock>,
    pub head: ConvWeights,
}

impl Cfsr {
    /// Initialisation from a ChaCha8 stream seeded with `seed`.
    pub fn init_seeded(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::init(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Random initialisation in branched (training) mode.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config.channels;
        let hidden = config.hidden_channels();
        let shallow = ConvWeights::init(3, c, 3, rng);
        let blocks = (0..config.n_blocks)
            .map(|_| {
                let layers = (0..config.n_layers)
                    .map(|_| ConvFormerLayer {
                        mixer: LkMixer::init(c, config.mixer_kernel, rng),
                        efn: Efn::init(c, hidden, rng),
                    })
                    .collect();
                ResidualBlock {
                    layers,
                    tail: ConvWeights::init(c, c, 3, rng),
                }
            })
            .collect();
        let head = ConvWeights::init(c, 3 * config.scale * config.scale, 3, rng);
        Ok(Self {
            config,
            shallow,
            blocks,
            head,
        })
    }

    /// All-zero weights in the requested mode.
    pub fn zeros(config: ModelConfig, mode: StoreMode) -> Result<Self, ModelError> {
        config.validate()?;
        let c = config.channels;
        let hidden = config.hidden_channels();
        let fused = mode == StoreMode::Fused;
        let blocks = (0..config.n_blocks)
            .map(|_| ResidualBlock {
                layers: (0..config.n_layers)
                    .map(|_| ConvFormerLayer {
                        mixer: LkMixer::zeros(c, config.mixer_kernel),
                        efn: Efn::zeros(c, hidden, fused),
                    })
                    .collect(),
                tail: ConvWeights::zeros(c, c, 3),
            })
            .collect();
        Ok(Self {
            shallow: ConvWeights::zeros(3, c, 3),
            blocks,
            head: ConvWeights::zeros(c, 3 * config.scale * config.scale, 3),
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> impl Iterator<Item = &ConvFormerLayer> {
        self.blocks.iter().flat_map(|b| b.layers.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut ConvFormerLayer> {
        self.blocks.iter_mut().flat_map(|b| b.layers.iter_mut())
    }

    pub fn mode(&self) -> StoreMode {
        if self.layers().any(|l| l.efn.edc.is_fused()) {
            StoreMode::Fused
        } else {
            StoreMode::Branched
        }
    }

    /// Inference copy with every edge-preserving layer merged.
    pub fn fused(&self) -> Self {
        let mut out = self.clone();
        out.fuse_in_place();
        out
    }

    pub fn fuse_in_place(&mut self) {
        for layer in self.layers_mut() {
            layer.efn.edc = layer.efn.edc.fused();
        }
    }

    /// Records the forward pass of a (N,3,H,W) batch; returns (N,3,rH,rW).
    /// Gradient-recording tapes require branched mode.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, input: Var) -> Result<Var, ModelError> {
        let s = tape.shape(input);
        if s.c != 3 {
            return Err(ModelError::InputChannels(s.c));
        }
        if tape.records_grad() && self.mode() == StoreMode::Fused {
            return Err(ModelError::State(
                "cannot record gradients through a fused edge-preserving layer".into(),
            ));
        }
        let sf = self.shallow.forward(tape, "shallow", input)?;
        let mut f = sf;
        for (i, block) in self.blocks.iter().enumerate() {
            f = block.forward(tape, &format!("body.{i}"), f)?;
        }
        let f = tape.add(sf, f)?;
        let rec = self.head.forward(tape, "head", f)?;
        Ok(tape.pixel_shuffle(rec, self.config.scale)?)
    }

    /// Forward pass without gradient tracking.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        let mut tape = Tape::<f32>::no_grad();
        let x = tape.constant(input.clone());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.value(y).clone())
    }

    pub fn to_store(&self) -> WeightStore {
        let mut store = WeightStore::new(self.mode());
        self.visit("", &mut |name, t| {
            store.insert(name, t.clone()).expect("parameter names are unique");
        });
        store
    }

    /// Builds a model of `config` from stored weights. The model takes the
    /// store's mode; every tensor must be present with the expected shape and
    /// no extra names are allowed.
    pub fn from_store(config: ModelConfig, store: &WeightStore) -> Result<Self, ModelError> {
        let mut model = Self::zeros(config, store.mode())?;
        let mut seen = HashSet::new();
        let mut failure = None;
        model.visit_mut("", &mut |name, t| {
            if failure.is_some() {
                return;
            }
            match store.get(&name) {
                None => failure = Some(ModelError::MissingTensor(name)),
                Some(src) if src.shape() != t.shape() => {
                    failure = Some(ModelError::ShapeMismatch {
                        name,
                        expected: t.shape(),
                        found: src.shape(),
                    })
                }
                Some(src) => {
                    t.data_mut().copy_from_slice(src.data());
                    seen.insert(name);
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some(extra) = store.names().find(|n| !seen.contains(*n)) {
            return Err(ModelError::UnknownTensor(extra.to_string()));
        }
        Ok(model)
    }

    /// Loads a store, inferring the architecture from its tensor shapes.
    pub fn from_store_inferred(store: &WeightStore) -> Result<Self, ModelError> {
        let config = ModelConfig::infer_from_store(store)?;
        Self::from_store(config, store)
    }
}

impl Parameters for Cfsr {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.shallow.visit(&join(prefix, "shallow"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("body.{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.shallow.visit_mut(&join(prefix, "shallow"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("body.{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

/// Fuses a branched weight store, keeping the tensor order.
pub fn fuse_store(store: &WeightStore) -> Result<WeightStore, ModelError> {
    if store.mode() == StoreMode::Fused {
        return Err(ModelError::State("already fused".into()));
    }
    Ok(Cfsr::from_store_inferred(store)?.fused().to_store())
}

/// Competition weights of every edge-preserving layer, in layer order.
pub fn edc_alphas(model: &Cfsr) -> Vec<[f64; 3]> {
    model
        .layers()
        .filter_map(|l| match &l.efn.edc {
            Edc::Branched(w) => Some(w.alphas()),
            Edc::Fused(_) => None,
        })
        .collect()
}
