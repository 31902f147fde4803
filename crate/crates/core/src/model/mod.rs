//! The micro 3D-conv encoder, its prediction heads and checkpoint
//! conversion.
//!
//! All parameters of a [`Model`] live in one [`ParamStore`] with dotted
//! names: `encoder.conv{n}.{weight,bias}` for the encoder and
//! `head.<slot>.<layer>.{weight,bias}` for the heads.

pub mod checkpoint;
mod encoder;
mod heads;

use std::fmt;
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encoder::{EncoderConfig, EncoderOutput};
pub use heads::{Head, HeadKind, MLP_HIDDEN};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar, Tape, Tensor, Var};

const MOMENTUM_PREFIX: &str = "optim.momentum.";
const META_EPOCH: &str = "meta.epoch";
const META_DIGEST: &str = "meta.config_digest";
const META_INPUT: &str = "meta.encoder.input";
const META_STRIDES: &str = "meta.encoder.strides";
const META_SCALE: &str = "meta.encoder.stage_scale";

/// Which head a parameter group belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadSlot {
    /// `M` transformation scores.
    Temporal,
    /// Scalar aspect-ratio score `r'`.
    Aspect,
    /// Four rotation logits.
    Rotation,
    /// Downstream motion-category classifier.
    Classifier,
}

impl HeadSlot {
    pub const ALL: [HeadSlot; 4] = [
        HeadSlot::Temporal,
        HeadSlot::Aspect,
        HeadSlot::Rotation,
        HeadSlot::Classifier,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            HeadSlot::Temporal => "head.temporal",
            HeadSlot::Aspect => "head.aspect",
            HeadSlot::Rotation => "head.rotation",
            HeadSlot::Classifier => "head.classifier",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for HeadSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    pub encoder: EncoderConfig,
    pub params: ParamStore<T>,
    heads: [Option<Head>; 4],
}

/// Everything recovered from a checkpoint besides the model itself.
#[derive(Debug, Clone)]
pub struct Restored<T: Scalar = f32> {
    pub model: Model<T>,
    pub momentum: Vec<(String, Tensor<T>)>,
    pub epoch: usize,
    pub config_digest: u64,
}

impl<T: Scalar> Model<T> {
    /// Fresh encoder without heads.
    pub fn new(encoder: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        validate(&encoder)?;
        let mut params = ParamStore::new();
        encoder.init_params(&mut params, rng);
        Ok(Self {
            encoder,
            params,
            heads: Default::default(),
        })
    }

    /// Adds (or replaces) the head in `slot`, reading the pooled feature.
    pub fn attach_head(
        &mut self,
        slot: HeadSlot,
        kind: HeadKind,
        output: usize,
        rng: &mut impl Rng,
    ) -> &Head {
        self.params.remove_prefix(&format!("{}.", slot.prefix()));
        let head = Head::new(slot.prefix(), kind, self.encoder.feature_dim(), output);
        head.init_params(&mut self.params, rng);
        self.heads[slot.index()] = Some(head);
        self.heads[slot.index()].as_ref().unwrap()
    }

    pub fn detach_head(&mut self, slot: HeadSlot) {
        self.params.remove_prefix(&format!("{}.", slot.prefix()));
        self.heads[slot.index()] = None;
    }

    pub fn head(&self, slot: HeadSlot) -> Option<&Head> {
        self.heads[slot.index()].as_ref()
    }

    /// Records the encoder on `tape` for an input already on the tape.
    pub fn encode_var(&self, tape: &mut Tape<T>, clip: Var) -> Result<EncoderOutput> {
        encoder::forward(&self.encoder, &self.params, tape, clip)
    }

    /// Records the head in `slot` on `tape`; `features` is `N x D`.
    pub fn head_var(&self, slot: HeadSlot, tape: &mut Tape<T>, features: Var) -> Result<Var> {
        let head = self
            .head(slot)
            .ok_or_else(|| Error::invalid("head", format!("model has no {slot}")))?;
        head.forward(&self.params, tape, features)
    }

    /// Pooled clip feature (the representation used for evaluation).
    pub fn encode(&self, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(clip.clone())?;
        let out = self.encode_var(&mut tape, x)?;
        Ok(tape.value(out.pooled).clone())
    }

    /// Last-stage activation pooled over space only, flattened `C x T`.
    pub fn probe_feature(&self, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(clip.clone())?;
        let out = self.encode_var(&mut tape, x)?;
        Ok(tape.value(out.probe).clone())
    }

    /// Raw scores of `slot` for a single clip.
    pub fn predict(&self, slot: HeadSlot, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(clip.clone())?;
        let out = self.encode_var(&mut tape, x)?;
        let d = tape.value(out.pooled).len();
        let f = tape.reshape(out.pooled, &[1, d])?;
        let s = self.head_var(slot, &mut tape, f)?;
        let n = tape.value(s).len();
        Ok(tape.value(s).clone().reshape(&[n])?)
    }

    /// SHA-256 over names, shapes and value bits of parameters under `prefix`.
    pub fn checksum(&self, prefix: &str) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            h.update(p.name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_f64_lossy().to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Same architecture and values in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            let id = params.insert(p.name.clone(), p.value.cast());
            params.get_mut(id).trainable = p.trainable;
        }
        Model {
            encoder: self.encoder.clone(),
            params,
            heads: self.heads.clone(),
        }
    }
}

impl Model<f32> {
    pub fn to_checkpoint(
        &self,
        momentum: &[(String, Tensor<f32>)],
        epoch: usize,
        config_digest: u64,
    ) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for p in self.params.iter() {
            ck.push(p.name.clone(), p.value.clone());
        }
        for (name, buf) in momentum {
            ck.push(format!("{MOMENTUM_PREFIX}{name}"), buf.clone());
        }
        ck.push(META_EPOCH, Tensor::scalar(epoch as f32));
        let chunks = (0..4)
            .map(|i| ((config_digest >> (16 * i)) & 0xffff) as f32)
            .collect();
        ck.push(META_DIGEST, Tensor::from_vec(chunks));
        ck.push(
            META_INPUT,
            Tensor::from_vec(self.encoder.input.iter().map(|&v| v as f32).collect()),
        );
        let strides = self
            .encoder
            .strides
            .iter()
            .flatten()
            .map(|&s| s as f32)
            .collect();
        ck.push(
            META_STRIDES,
            Tensor::new(&[self.encoder.strides.len(), 3], strides).expect("stride table shape"),
        );
        if let Some(scale) = &self.encoder.stage_scale {
            ck.push(
                META_SCALE,
                Tensor::from_vec(scale.iter().map(|&s| s as f32).collect()),
            );
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint, origin: &Path) -> Result<Restored<f32>> {
        let bad = |msg: String| Error::format(origin, msg);
        let meta = |name: &str| ck.get(name).ok_or_else(|| bad(format!("missing {name}")));

        let input = meta(META_INPUT)?;
        if input.len() != 4 {
            return Err(bad(format!("{META_INPUT} must hold 4 values")));
        }
        let input = [0, 1, 2, 3].map(|i| input.data()[i] as usize);
        let strides_t = meta(META_STRIDES)?;
        if strides_t.rank() != 2 || strides_t.shape()[1] != 3 {
            return Err(bad(format!("{META_STRIDES} must be n x 3")));
        }
        let strides: Vec<[usize; 3]> = strides_t
            .data()
            .chunks(3)
            .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
            .collect();
        let mut channels = Vec::new();
        let mut kernel = 0;
        for stage in 0..strides.len() {
            let w = ck
                .get(&EncoderConfig::weight_name(stage))
                .ok_or_else(|| bad(format!("missing {}", EncoderConfig::weight_name(stage))))?;
            if w.rank() != 5 {
                return Err(bad(format!("stage {} kernel must be rank 5", stage + 1)));
            }
            channels.push(w.shape()[0]);
            kernel = w.shape()[2];
        }
        let stage_scale = ck
            .get(META_SCALE)
            .map(|t| t.data().iter().map(|&v| v as f64).collect());
        let encoder = EncoderConfig {
            input,
            channels,
            strides,
            kernel,
            stage_scale,
        };
        validate(&encoder).map_err(|e| bad(e.to_string()))?;

        let mut params = ParamStore::new();
        let mut momentum = Vec::new();
        for (name, t) in &ck.tensors {
            if let Some(rest) = name.strip_prefix(MOMENTUM_PREFIX) {
                momentum.push((rest.to_string(), t.clone()));
            } else if !name.starts_with("meta.") {
                params.insert(name.clone(), t.clone());
            }
        }
        let mut heads: [Option<Head>; 4] = Default::default();
        for slot in HeadSlot::ALL {
            heads[slot.index()] = Head::detect(&params, slot.prefix());
        }
        let epoch = meta(META_EPOCH)?.item() as usize;
        let digest_t = meta(META_DIGEST)?;
        if digest_t.len() != 4 {
            return Err(bad(format!("{META_DIGEST} must hold 4 values")));
        }
        let config_digest = digest_t
            .data()
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &v)| acc | ((v as u64) << (16 * i)));
        let model = Model {
            encoder,
            params,
            heads,
        };
        let probe = Tensor::zeros(&model.encoder.input);
        model
            .encode(&probe)
            .map_err(|e| bad(format!("inconsistent encoder: {e}")))?;
        Ok(Restored {
            model,
            momentum,
            epoch,
            config_digest,
        })
    }

    pub fn load(path: &Path) -> Result<Restored<f32>> {
        Self::from_checkpoint(&Checkpoint::load(path)?, path)
    }
}

fn validate(cfg: &EncoderConfig) -> Result<()> {
    let bad = |msg: &str| Err(Error::invalid("encoder", msg));
    if cfg.channels.is_empty() {
        return bad("at least one stage required");
    }
    if cfg.channels.len() != cfg.strides.len() {
        return bad("channels and strides must have one entry per stage");
    }
    if cfg.kernel == 0 || cfg.input.contains(&0) || cfg.channels.contains(&0) {
        return bad("zero-sized dimension");
    }
    if let Some(s) = &cfg.stage_scale {
        if s.len() != cfg.channels.len() || s.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return bad("stage_scale needs one positive finite value per stage");
        }
    }
    Ok(())
}
