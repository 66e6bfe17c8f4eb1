use ndarray::{Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, PositionalEncoding};
use super::ModelError;
use crate::keypoints::{normalize, to_model_input, KeypointSequence, ModelInput};
use crate::nncore::{
    self, conv1d_temporal, dropout, glorot_uniform, linear, multi_head_self_attention, sha256,
    sinusoidal_positions, AttentionWeights, Graph, ParamSet, Var,
};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A sign representation: the pooled output taken before the classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(pub Vec<f32>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub representations: Array2<f64>,
    pub logits: Array2<f64>,
}

/// Graph handles produced for one sample.
pub(crate) struct SampleOutput {
    pub representation: Var,
    pub logits: Var,
}

#[derive(Debug, Clone)]
pub struct PoseFormerModel {
    config: ModelConfig,
    params: ParamSet,
    class_labels: Vec<String>,
    fingerprint: [u8; 32],
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    #[serde(flatten)]
    config: ModelConfig,
    #[serde(default)]
    class_labels: Vec<String>,
}

impl PoseFormerModel {
    /// Builds a model with seeded Glorot-uniform weights, zero biases and unit
    /// layer-norm gains. The classifier's Glorot draw is scaled by `1/sqrt(d)`:
    /// it reads unit-variance layer-norm features, and unscaled weights would
    /// start far from uniform predictions. Weights are rounded to 32-bit precision so the
    /// in-memory model equals its persisted form.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        for (name, shape) in Self::layout(&config) {
            let value = if name.ends_with(".kernel") {
                let (k, c_in, c_out) = (shape[0], shape[1], shape[2]);
                glorot_uniform(&mut rng, &shape, k * c_in, k * c_out)
            } else if name == "classifier.w" {
                glorot_uniform(&mut rng, &shape, shape[0], shape[1]) / (shape[0] as f64).sqrt()
            } else if name.ends_with(".w") {
                glorot_uniform(&mut rng, &shape, shape[0], shape[1])
            } else if name.ends_with(".gamma") {
                ArrayD::ones(IxDyn(&shape))
            } else {
                ArrayD::zeros(IxDyn(&shape))
            };
            params.insert(name, value)?;
        }
        params.round_to_f32();
        Self::from_parts(config, params, Vec::new())
    }

    /// Assembles a model from existing weights, checking every expected parameter is present with the right shape.
    pub fn from_parts(config: ModelConfig, params: ParamSet, class_labels: Vec<String>) -> Result<Self, ModelError> {
        config.validate()?;
        if !class_labels.is_empty() && class_labels.len() != config.num_classes {
            return Err(ModelError::InvalidConfig(format!(
                "{} class labels for {} classes",
                class_labels.len(),
                config.num_classes
            )));
        }
        let mut model = PoseFormerModel { config, params, class_labels, fingerprint: [0; 32] };
        model.check_parameters()?;
        model.refresh_fingerprint();
        Ok(model)
    }

    fn check_parameters(&self) -> Result<(), ModelError> {
        let layout = Self::layout(&self.config);
        if layout.len() != self.params.len() {
            return Err(ModelError::InvalidConfig(format!(
                "expected {} parameters, found {}",
                layout.len(),
                self.params.len()
            )));
        }
        for (name, shape) in layout {
            match self.params.get(&name) {
                Some(p) if p.value.shape() == shape.as_slice() => {}
                Some(p) => {
                    return Err(ModelError::InvalidConfig(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        p.value.shape()
                    )))
                }
                None => return Err(ModelError::InvalidConfig(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }

    /// Parameter names and shapes implied by a configuration, in build order.
    pub fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut width = config.input_channels;
        if !config.ablation.no_input_conv {
            let c = &config.input_conv;
            for l in 0..c.layers {
                out.push((format!("input_conv.{l}.kernel"), vec![c.kernel, width, c.channels]));
                out.push((format!("input_conv.{l}.bias"), vec![c.channels]));
                width = c.channels;
            }
        }
        if !config.ablation.no_frame_embedding {
            for (i, &h) in config.frame_embedding.hidden.iter().enumerate() {
                out.push((format!("frame_embedding.{i}.w"), vec![width, h]));
                out.push((format!("frame_embedding.{i}.b"), vec![h]));
                width = h;
            }
        }
        if !config.ablation.no_intermediate_conv {
            let c = &config.intermediate_conv;
            for l in 0..c.layers {
                out.push((format!("intermediate_conv.{l}.kernel"), vec![c.kernel, width, c.channels]));
                out.push((format!("intermediate_conv.{l}.bias"), vec![c.channels]));
                width = c.channels;
            }
        }
        let d = config.representation_size;
        if width != d {
            out.push(("adapter.attention_input.w".into(), vec![width, d]));
            out.push(("adapter.attention_input.b".into(), vec![d]));
        }
        let ff = config.feed_forward_width();
        for l in 0..config.attention.layers {
            let p = format!("attention.{l}");
            out.push((format!("{p}.ln1.gamma"), vec![d]));
            out.push((format!("{p}.ln1.beta"), vec![d]));
            for proj in ["q", "k", "v", "o"] {
                out.push((format!("{p}.{proj}.w"), vec![d, d]));
                // no key bias: softmax cancels it
                if proj != "k" {
                    out.push((format!("{p}.{proj}.b"), vec![d]));
                }
            }
            out.push((format!("{p}.ln2.gamma"), vec![d]));
            out.push((format!("{p}.ln2.beta"), vec![d]));
            out.push((format!("{p}.ff1.w"), vec![d, ff]));
            out.push((format!("{p}.ff1.b"), vec![ff]));
            out.push((format!("{p}.ff2.w"), vec![ff, d]));
            out.push((format!("{p}.ff2.b"), vec![d]));
        }
        out.push(("final_norm.gamma".into(), vec![d]));
        out.push(("final_norm.beta".into(), vec![d]));
        out.push(("classifier.w".into(), vec![d, config.num_classes]));
        out.push(("classifier.b".into(), vec![config.num_classes]));
        out
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutates the weights and recomputes the fingerprint afterwards.
    pub fn update_params<T>(&mut self, f: impl FnOnce(&mut ParamSet) -> T) -> T {
        let out = f(&mut self.params);
        self.refresh_fingerprint();
        out
    }

    /// Direct weight access for the optimizer; the caller must refresh the
    /// fingerprint through [`PoseFormerModel::update_params`] when done.
    pub(crate) fn params_mut_unchecked(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Overwrites parameter values in order without refreshing the fingerprint.
    pub(crate) fn update_params_unchecked(&mut self, values: &[ArrayD<f64>]) {
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value.assign(v);
        }
    }

    pub fn class_labels(&self) -> &[String] {
        &self.class_labels
    }

    pub fn set_class_labels(&mut self, labels: Vec<String>) -> Result<(), ModelError> {
        if labels.len() != self.config.num_classes {
            return Err(ModelError::InvalidConfig(format!(
                "{} class labels for {} classes",
                labels.len(),
                self.config.num_classes
            )));
        }
        self.class_labels = labels;
        self.refresh_fingerprint();
        Ok(())
    }

    /// SHA-256 of the serialized model file.
    pub fn fingerprint(&self) -> [u8; 32] {
        self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint)
    }

    fn refresh_fingerprint(&mut self) {
        self.fingerprint = sha256(&self.to_bytes());
    }

    /// Model file: `u32` little-endian header length, UTF-8 JSON header
    /// (configuration keys plus `class_labels`), then the `PFWT` weight blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = ModelHeader { config: self.config.clone(), class_labels: self.class_labels.clone() };
        let json = serde_json::to_vec(&header).expect("configuration serializes");
        let weights = self.params.to_bytes();
        let mut out = Vec::with_capacity(4 + json.len() + weights.len());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&weights);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = nncore::ByteReader::new(bytes);
        let len = r.u32()? as usize;
        let header: ModelHeader =
            serde_json::from_slice(r.take(len)?).map_err(|e| ModelError::Header(e.to_string()))?;
        let params = ParamSet::from_bytes(r.rest())?;
        Self::from_parts(header.config, params, header.class_labels)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path).map_err(|e| ModelError::Io(e.to_string()))?;
        Self::from_bytes(&bytes)
    }

    /// Adds every parameter to `g` as a leaf, in parameter order.
    pub(crate) fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.as_matrix())).collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self.params.position(name).unwrap_or_else(|| panic!("parameter {name} missing"))]
    }

    fn check_input(&self, input: &ModelInput) -> Result<(), ModelError> {
        let expected = (self.config.sequence_len, self.config.input_channels);
        if input.values.dim() != expected || input.valid_mask.len() != expected.0 {
            return Err(ModelError::InputShape { expected, found: input.values.dim() });
        }
        if !input.valid_mask.iter().any(|&m| m) {
            return Err(ModelError::EmptyInput);
        }
        Ok(())
    }

    /// Records the forward pass of one sample on `g`. Dropout is active only
    /// when `rng` is given.
    pub(crate) fn forward_sample<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        vars: &[Var],
        input: &ModelInput,
        mut rng: Option<&mut R>,
    ) -> Result<SampleOutput, ModelError> {
        self.check_input(input)?;
        let cfg = &self.config;
        let mask = &input.valid_mask;
        let x = g.leaf(input.values.clone());
        let mut x = g.mask_rows(x, mask)?;

        if !cfg.ablation.no_input_conv {
            for l in 0..cfg.input_conv.layers {
                let k = self.var(vars, &format!("input_conv.{l}.kernel"));
                let b = self.var(vars, &format!("input_conv.{l}.bias"));
                x = conv1d_temporal(g, x, k, b, cfg.input_conv.kernel)?;
                x = g.relu(x);
                x = g.mask_rows(x, mask)?;
            }
        }
        if !cfg.ablation.no_frame_embedding {
            for i in 0..cfg.frame_embedding.hidden.len() {
                let w = self.var(vars, &format!("frame_embedding.{i}.w"));
                let b = self.var(vars, &format!("frame_embedding.{i}.b"));
                x = linear(g, x, w, b)?;
                x = g.relu(x);
                x = dropout(g, x, cfg.dropout, rng.as_deref_mut())?;
            }
            x = g.mask_rows(x, mask)?;
        }
        if !cfg.ablation.no_intermediate_conv {
            for l in 0..cfg.intermediate_conv.layers {
                let k = self.var(vars, &format!("intermediate_conv.{l}.kernel"));
                let b = self.var(vars, &format!("intermediate_conv.{l}.bias"));
                x = conv1d_temporal(g, x, k, b, cfg.intermediate_conv.kernel)?;
                x = g.relu(x);
                x = g.mask_rows(x, mask)?;
            }
        }
        let d = cfg.representation_size;
        if g.shape(x).1 != d {
            let w = self.var(vars, "adapter.attention_input.w");
            let b = self.var(vars, "adapter.attention_input.b");
            x = linear(g, x, w, b)?;
            x = g.mask_rows(x, mask)?;
        }
        if cfg.positional_encoding == PositionalEncoding::Sinusoidal {
            let mut pe = sinusoidal_positions(cfg.sequence_len, d);
            for (t, &m) in mask.iter().enumerate() {
                if !m {
                    pe.row_mut(t).fill(0.0);
                }
            }
            x = g.add_const(x, &pe)?;
        }
        for l in 0..cfg.attention.layers {
            let p = format!("attention.{l}");
            let v = |name: &str| self.var(vars, &format!("{p}.{name}"));
            let h = g.layer_norm(x, v("ln1.gamma"), v("ln1.beta"), LAYER_NORM_EPS)?;
            let weights = AttentionWeights {
                wq: v("q.w"),
                bq: v("q.b"),
                wk: v("k.w"),
                bk: None,
                wv: v("v.w"),
                bv: v("v.b"),
                wo: v("o.w"),
                bo: v("o.b"),
            };
            let a = multi_head_self_attention(g, h, &weights, cfg.attention.heads, mask, cfg.dropout, rng.as_deref_mut())?;
            x = g.add(x, a)?;
            let h = g.layer_norm(x, v("ln2.gamma"), v("ln2.beta"), LAYER_NORM_EPS)?;
            let f = linear(g, h, v("ff1.w"), v("ff1.b"))?;
            let f = g.relu(f);
            let f = linear(g, f, v("ff2.w"), v("ff2.b"))?;
            x = g.add(x, f)?;
        }
        let x = g.layer_norm(x, self.var(vars, "final_norm.gamma"), self.var(vars, "final_norm.beta"), LAYER_NORM_EPS)?;
        let representation = g.masked_mean_rows(x, mask)?;
        let logits = linear(g, representation, self.var(vars, "classifier.w"), self.var(vars, "classifier.b"))?;
        Ok(SampleOutput { representation, logits })
    }

    /// Runs a batch. In [`Mode::Train`] dropout is drawn from a generator
    /// seeded by `seed` and the sample position; [`Mode::Eval`] is deterministic.
    pub fn forward(&self, batch: &[ModelInput], mode: Mode, seed: u64) -> Result<ForwardOutput, ModelError> {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map(|(i, input)| {
                let mut g = Graph::new();
                let vars = self.bind(&mut g);
                let out = match mode {
                    Mode::Eval => self.forward_sample::<ChaCha8Rng>(&mut g, &vars, input, None)?,
                    Mode::Train => {
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, i as u64]));
                        self.forward_sample(&mut g, &vars, input, Some(&mut rng))?
                    }
                };
                Ok((g.value(out.representation).iter().copied().collect(), g.value(out.logits).iter().copied().collect()))
            })
            .collect::<Result<_, ModelError>>()?;
        let n = rows.len();
        let d = self.config.representation_size;
        let c = self.config.num_classes;
        let mut representations = Array2::zeros((n, d));
        let mut logits = Array2::zeros((n, c));
        for (i, (r, l)) in rows.into_iter().enumerate() {
            representations.row_mut(i).assign(&ndarray::Array1::from(r));
            logits.row_mut(i).assign(&ndarray::Array1::from(l));
        }
        Ok(ForwardOutput { representations, logits })
    }

    /// Normalizes and lays out a raw sequence for this model.
    pub fn prepare(&self, seq: &KeypointSequence) -> Result<ModelInput, ModelError> {
        Ok(to_model_input(&normalize(seq)?, self.config.sequence_len))
    }

    /// The pooled pre-classifier representation of a sequence (evaluation mode).
    pub fn embed(&self, seq: &KeypointSequence) -> Result<EmbeddingVector, ModelError> {
        let input = self.prepare(seq)?;
        self.embed_input(&input)
    }

    pub fn embed_input(&self, input: &ModelInput) -> Result<EmbeddingVector, ModelError> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let out = self.forward_sample::<ChaCha8Rng>(&mut g, &vars, input, None)?;
        Ok(EmbeddingVector(g.value(out.representation).iter().map(|&v| v as f32).collect()))
    }

    /// Embeds many sequences in parallel; results keep input order.
    pub fn embed_batch(&self, seqs: &[KeypointSequence]) -> Vec<Result<EmbeddingVector, ModelError>> {
        seqs.par_iter().map(|s| self.embed(s)).collect()
    }
}

/// Deterministic seed derivation (SplitMix64 finalizer over the parts).
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
