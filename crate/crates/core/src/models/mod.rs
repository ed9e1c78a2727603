//! The four pooling architectures and their shared classification head.
//!
//! Every architecture pools the video and audio streams with separate layer
//! stacks, concatenates the pooled vectors, then applies
//! `linear -> context gating -> mixture of experts`.

mod checkpoint;
mod moe;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, Tape, Var, NORM_EPS};
use crate::error::{Error, Result};
use crate::layers::{
    context_gating, netvlad, second_order_embed, t_embed_pooled, transformer_encoder, transformer_encoder_star,
    GatingParams, NetVladParams, SecondOrderConfig, SecondOrderParams, TransformerConfig, TransformerParams,
    WhiteningState,
};
use crate::params::{Mode, ModelState, ParamStore};
use crate::tensor::{random, Tensor};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use moe::{moe_head, MoeParams};

/// Clamp used inside the log of the training loss.
pub const LOSS_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    BaselineNetvlad,
    AttentionEnhanced,
    AttentionNetvlad,
    SecondOrderFa,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::BaselineNetvlad,
        Architecture::AttentionEnhanced,
        Architecture::AttentionNetvlad,
        Architecture::SecondOrderFa,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Architecture::BaselineNetvlad => "baseline_netvlad",
            Architecture::AttentionEnhanced => "attention_enhanced",
            Architecture::AttentionNetvlad => "attention_netvlad",
            Architecture::SecondOrderFa => "second_order_fa",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.tag() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    #[serde(default = "defaults::video_dim")]
    pub video_dim: usize,
    #[serde(default = "defaults::audio_dim")]
    pub audio_dim: usize,
    #[serde(default = "defaults::clusters")]
    pub clusters: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    /// Projected width `F'` of the second-order path.
    #[serde(default = "defaults::projected")]
    pub projected: usize,
    #[serde(default = "defaults::experts")]
    pub experts: usize,
    #[serde(default = "defaults::labels")]
    pub labels: usize,
    /// Sampled frames per video.
    #[serde(default = "defaults::frames")]
    pub frames: usize,
    /// Multiplier on the soft-assignment logits.
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
}

mod defaults {
    pub fn video_dim() -> usize {
        1024
    }
    pub fn audio_dim() -> usize {
        128
    }
    pub fn clusters() -> usize {
        8
    }
    pub fn hidden() -> usize {
        1024
    }
    pub fn heads() -> usize {
        8
    }
    pub fn projected() -> usize {
        16
    }
    pub fn experts() -> usize {
        2
    }
    pub fn labels() -> usize {
        10
    }
    pub fn frames() -> usize {
        32
    }
    pub fn temperature() -> f64 {
        1.0
    }
}

/// One pooled stream of the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Video,
    Audio,
}

impl Modality {
    pub const BOTH: [Modality; 2] = [Modality::Video, Modality::Audio];

    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Video => "video",
            Modality::Audio => "audio",
        }
    }
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> Self {
        ModelConfig {
            architecture,
            video_dim: defaults::video_dim(),
            audio_dim: defaults::audio_dim(),
            clusters: defaults::clusters(),
            hidden: defaults::hidden(),
            heads: defaults::heads(),
            projected: defaults::projected(),
            experts: defaults::experts(),
            labels: defaults::labels(),
            frames: defaults::frames(),
            temperature: defaults::temperature(),
        }
    }

    /// Small extents for gradient checks and unit tests.
    pub fn toy(architecture: Architecture) -> Self {
        ModelConfig {
            architecture,
            video_dim: 8,
            audio_dim: 4,
            clusters: 3,
            hidden: 6,
            heads: 2,
            projected: 3,
            experts: 2,
            labels: 5,
            frames: 6,
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("video_dim", self.video_dim),
            ("audio_dim", self.audio_dim),
            ("clusters", self.clusters),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("projected", self.projected),
            ("experts", self.experts),
            ("labels", self.labels),
            ("frames", self.frames),
        ];
        for (name, value) in extents {
            if value == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("temperature must be positive and finite"));
        }
        for m in Modality::BOTH {
            let dim = self.dim(m);
            match self.architecture {
                Architecture::AttentionEnhanced | Architecture::AttentionNetvlad => {
                    TransformerConfig::encoder(dim, self.heads).validate()?;
                }
                Architecture::SecondOrderFa => self.second_order(m).validate()?,
                Architecture::BaselineNetvlad => {}
            }
        }
        Ok(())
    }

    pub fn dim(&self, modality: Modality) -> usize {
        match modality {
            Modality::Video => self.video_dim,
            Modality::Audio => self.audio_dim,
        }
    }

    /// Per-frame input width, video then audio.
    pub fn input_dim(&self) -> usize {
        self.video_dim + self.audio_dim
    }

    fn second_order(&self, m: Modality) -> SecondOrderConfig {
        SecondOrderConfig {
            dim: self.dim(m),
            projected: self.projected,
            clusters: self.clusters,
        }
    }

    /// Width of one modality's pooled vector.
    pub fn pooled_width(&self, m: Modality) -> usize {
        let first = self.clusters * self.dim(m);
        match self.architecture {
            Architecture::SecondOrderFa => first + self.second_order(m).embed_width(),
            _ => first,
        }
    }

    /// Width of the concatenated representation fed to the projection.
    pub fn representation_width(&self) -> usize {
        Modality::BOTH.iter().map(|&m| self.pooled_width(m)).sum()
    }
}

/// Parameters, running statistics and configuration of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub state: ModelState,
}

impl Model {
    /// Fresh initialization, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = random::rng(seed);
        let mut params = ParamStore::new();
        let mut state = ModelState::default();
        for m in Modality::BOTH {
            let p = m.prefix();
            let dim = config.dim(m);
            NetVladParams::init(&mut params, &format!("{p}/netvlad"), dim, config.clusters, &mut rng);
            match config.architecture {
                Architecture::BaselineNetvlad => {}
                Architecture::AttentionEnhanced => {
                    let enc = TransformerConfig::encoder(dim, config.heads);
                    enc.init(&mut params, &mut state, &format!("{p}/f1"), &mut rng)?;
                    enc.init(&mut params, &mut state, &format!("{p}/f2"), &mut rng)?;
                }
                Architecture::AttentionNetvlad => {
                    TransformerConfig::encoder(dim, config.heads).init(&mut params, &mut state, &format!("{p}/g1"), &mut rng)?;
                    TransformerConfig::star(dim, config.heads, config.clusters).init(
                        &mut params,
                        &mut state,
                        &format!("{p}/g2"),
                        &mut rng,
                    )?;
                }
                Architecture::SecondOrderFa => {
                    config.second_order(m).init(&mut params, &format!("{p}/second_order"), &mut rng)?;
                    state
                        .whitening
                        .insert(format!("{p}/whitening"), WhiteningState::new(config.clusters * dim));
                }
            }
        }
        let rep = config.representation_width();
        params.insert("head/projection/w", random::glorot(rep, config.hidden, &mut rng));
        params.insert("head/projection/b", Tensor::zeros([config.hidden]));
        GatingParams::init(&mut params, "head/gating", config.hidden, &mut rng);
        MoeParams::init(&mut params, "head/moe", config.hidden, config.experts, config.labels, &mut rng);
        Ok(Model { config, params, state })
    }

    /// Label probabilities for `frames: [B, N, Fv + Fa]` (or `[N, Fv + Fa]`).
    /// Training mode uses batch statistics and updates the running ones.
    pub fn predict(&mut self, frames: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        self.params.bind(&mut tape);
        let x = tape.constant(frames.clone());
        let out = forward(&mut tape, &self.config, x, &mut self.state, mode)?;
        Ok(tape.value(out).clone())
    }

    /// Inference without touching the running statistics.
    pub fn infer(&self, frames: &Tensor) -> Result<Tensor> {
        let mut state = self.state.clone();
        let mut tape = Tape::new();
        self.params.bind(&mut tape);
        let x = tape.constant(frames.clone());
        let out = forward(&mut tape, &self.config, x, &mut state, Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// One training-mode forward and backward pass. Returns the loss and the
    /// gradient of every parameter, keyed by path.
    pub fn loss_and_gradients(&mut self, frames: &Tensor, targets: &Tensor) -> Result<(f64, BTreeMap<String, Tensor>)> {
        let mut tape = Tape::new();
        let leaves = self.params.bind(&mut tape);
        let x = tape.constant(frames.clone());
        let probs = forward(&mut tape, &self.config, x, &mut self.state, Mode::Train)?;
        let loss = tape.binary_cross_entropy(probs, targets, LOSS_EPS)?;
        let grads = tape.backward(loss)?;
        let by_path = leaves
            .into_iter()
            .map(|(path, var)| {
                let g = grads.get_or_zeros(&tape, var);
                (path, g)
            })
            .collect();
        Ok((tape.value(loss).item()?, by_path))
    }
}

/// Checks the training loss gradient of a toy-sized network against
/// central differences, over every parameter and the input frames.
/// Weights, frames and targets are all drawn from `seed`.
pub fn gradient_check(architecture: Architecture, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let config = ModelConfig::toy(architecture);
    let model = Model::new(config.clone(), seed)?;
    let mut rng = random::derived_rng(seed, 1);
    let batch = 2;
    let frames = random::normal([batch, config.frames, config.input_dim()], 1.0, &mut rng);
    let hits = random::uniform([batch, config.labels], 0.0, 1.0, &mut rng);
    let targets = hits.map(|u| if u < 0.3 { 1.0 } else { 0.0 });
    let names: Vec<String> = model.params.paths().map(str::to_string).collect();
    let mut inputs = vec![frames];
    inputs.extend(model.params.iter().map(|(_, t)| t.clone()));
    grad_check(
        |tape, vars| {
            for (name, &v) in names.iter().zip(&vars[1..]) {
                tape.bind(name.clone(), v);
            }
            let mut state = model.state.clone();
            let probs = forward(tape, &config, vars[0], &mut state, Mode::Train)?;
            tape.binary_cross_entropy(probs, &targets, LOSS_EPS)
        },
        &inputs,
        opts,
    )
}

/// Full network on a tape whose parameters are already bound by path.
pub fn forward(tape: &mut Tape, config: &ModelConfig, frames: Var, state: &mut ModelState, mode: Mode) -> Result<Var> {
    let dims = tape.shape(frames).to_vec();
    let lifted = dims.len() == 2;
    let x = match dims.len() {
        2 => tape.reshape(frames, [1, dims[0], dims[1]])?,
        3 => frames,
        _ => return Err(Error::contract("model input must be [N, F] or [B, N, F]")),
    };
    let xd = tape.shape(x).to_vec();
    if xd[1] != config.frames || xd[2] != config.input_dim() {
        return Err(Error::shape(
            "model input",
            &xd[1..],
            &[config.frames, config.input_dim()],
        ));
    }
    let representation = representation(tape, config, x, state, mode)?;
    let out = head(tape, config, representation)?;
    if lifted {
        tape.reshape(out, [config.labels])
    } else {
        Ok(out)
    }
}

/// Pooled, concatenated video and audio vectors: `[B, N, Fv + Fa]` to `[B, R]`.
pub fn representation(tape: &mut Tape, config: &ModelConfig, x: Var, state: &mut ModelState, mode: Mode) -> Result<Var> {
    let video = tape.narrow(x, -1, 0, config.video_dim)?;
    let audio = tape.narrow(x, -1, config.video_dim, config.audio_dim)?;
    let pv = pool_modality(tape, config, Modality::Video, video, state, mode)?;
    let pa = pool_modality(tape, config, Modality::Audio, audio, state, mode)?;
    tape.concat(&[pv, pa], -1)
}

/// Projection, context gating and the mixture-of-experts classifier.
pub fn head(tape: &mut Tape, config: &ModelConfig, representation: Var) -> Result<Var> {
    let w = tape.param("head/projection/w")?;
    let b = tape.param("head/projection/b")?;
    let hidden = tape.linear(representation, w, b)?;
    let gating = GatingParams::bind(tape, "head/gating")?;
    let gated = context_gating(tape, hidden, &gating)?;
    let moe = MoeParams::bind(tape, "head/moe", config.experts)?;
    moe_head(tape, gated, &moe)
}

/// Intra-normalizes `[B, C, F]` per cluster, flattens, then L2-normalizes.
fn normalize_vlad(tape: &mut Tape, vlad: Var) -> Result<Var> {
    let intra = tape.l2_normalize(vlad, -1, NORM_EPS)?;
    flatten_normalize(tape, intra)
}

fn flatten_normalize(tape: &mut Tape, x: Var) -> Result<Var> {
    let flat = tape.flatten_rows(x)?;
    tape.l2_normalize(flat, -1, NORM_EPS)
}

/// One modality's pooled vector, `[B, N, F]` to `[B, pooled_width]`.
pub fn pool_modality(
    tape: &mut Tape,
    config: &ModelConfig,
    modality: Modality,
    x: Var,
    state: &mut ModelState,
    mode: Mode,
) -> Result<Var> {
    let p = modality.prefix();
    let dim = config.dim(modality);
    let vlad = NetVladParams::bind(tape, &format!("{p}/netvlad"))?;
    let tau = config.temperature;
    match config.architecture {
        Architecture::BaselineNetvlad => {
            let v = netvlad(tape, x, &vlad, tau, None)?;
            normalize_vlad(tape, v)
        }
        Architecture::AttentionEnhanced => {
            let enc = TransformerConfig::encoder(dim, config.heads);
            let f1 = TransformerParams::bind(tape, &format!("{p}/f1"), &enc)?;
            let f2 = TransformerParams::bind(tape, &format!("{p}/f2"), &enc)?;
            let h = transformer_encoder(tape, x, &f1, state, mode)?;
            let v = netvlad(tape, h, &vlad, tau, None)?;
            let v = tape.l2_normalize(v, -1, NORM_EPS)?;
            let v = transformer_encoder(tape, v, &f2, state, mode)?;
            flatten_normalize(tape, v)
        }
        Architecture::AttentionNetvlad => {
            let g1 = TransformerParams::bind(tape, &format!("{p}/g1"), &TransformerConfig::encoder(dim, config.heads))?;
            let g2 = TransformerParams::bind(
                tape,
                &format!("{p}/g2"),
                &TransformerConfig::star(dim, config.heads, config.clusters),
            )?;
            let h = transformer_encoder(tape, x, &g1, state, mode)?;
            let logits = transformer_encoder_star(tape, h, &g2, state, mode)?;
            let sims = tape.softmax(logits, -1)?;
            let v = netvlad(tape, x, &vlad, tau, Some(sims))?;
            normalize_vlad(tape, v)
        }
        Architecture::SecondOrderFa => {
            let white = state.whitening_mut(&format!("{p}/whitening"))?;
            let first = t_embed_pooled(tape, x, &vlad, white, mode)?;
            let first = tape.l2_normalize(first, -1, NORM_EPS)?;
            let so = SecondOrderParams::bind(tape, vlad, &format!("{p}/second_order"))?;
            let second = second_order_embed(tape, x, &so, tau)?;
            let second = tape.reduce_sum(second, -2)?;
            let second = tape.l2_normalize(second, -1, NORM_EPS)?;
            tape.concat(&[first, second], -1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_tags_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(a.tag().parse::<Architecture>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.tag()));
        }
        assert!("netvlad".parse::<Architecture>().is_err());
    }

    #[test]
    fn config_rejects_zero_extents_and_bad_heads() {
        let mut cfg = ModelConfig::toy(Architecture::BaselineNetvlad);
        cfg.labels = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::toy(Architecture::AttentionEnhanced);
        cfg.heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::toy(Architecture::SecondOrderFa);
        cfg.projected = cfg.audio_dim;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn every_architecture_emits_label_probabilities() {
        for a in Architecture::ALL {
            let cfg = ModelConfig::toy(a);
            let mut model = Model::new(cfg.clone(), 1).unwrap();
            let x = random::normal([3, cfg.frames, cfg.input_dim()], 1.0, &mut random::rng(2));
            let p = model.predict(&x, Mode::Train).unwrap();
            assert_eq!(p.dims(), &[3, cfg.labels]);
            assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
