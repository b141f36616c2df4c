//! Generative model (per-factor transitions, decoder) and inference network
//! (encoder plus combiner), in factored and entangled configurations.
//!
//! The latent state is `k` factors of `factor_dim` units each. Every factor
//! has its own transition network mapping its previous value to a mean and
//! log-variance for its next value, so factor `i`'s prediction depends only
//! on factor `i`. The entangled baseline is the special case `k = 1` with a
//! single factor of the same total dimension.
//!
//! The inference combiner receives the *predicted* mean and log-variance
//! rather than the raw previous state, substituting zero vectors at the
//! first observed frame.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::{DiagonalGaussian, GaussianNodes};
use crate::numerics::{Activation, Graph, Mlp, MountedMlp, NodeId, ParamVector, Unary};
use crate::rng::RngStream;

/// Output width of the frame encoder's feature vector.
pub const ENCODER_FEATURES: usize = 32;

/// Structural configuration shared by the generative and inference sides.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub k_factors: usize,
    pub factor_dim: usize,
    pub frame_channels: usize,
    pub frame_height: usize,
    pub frame_width: usize,
    /// Fixed variance of the Normal observation model.
    pub obs_variance: f64,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub transition_hidden: Vec<usize>,
    pub entangled: bool,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: 32x32 two-channel frames, two 8-dimensional factors.
    fn default() -> Self {
        Self {
            k_factors: 2,
            factor_dim: 8,
            frame_channels: 2,
            frame_height: 32,
            frame_width: 32,
            obs_variance: 0.25,
            encoder_hidden: vec![96],
            decoder_hidden: vec![128],
            transition_hidden: vec![64, 64, 64, 64],
            entangled: false,
        }
    }
}

impl ModelConfig {
    /// Total latent dimension across all factors.
    pub fn d_total(&self) -> usize {
        self.k_factors * self.factor_dim
    }

    /// Flattened frame length.
    pub fn frame_dim(&self) -> usize {
        self.frame_channels * self.frame_height * self.frame_width
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_factors == 0
            || self.factor_dim == 0
            || self.frame_channels == 0
            || self.frame_height == 0
            || self.frame_width == 0
        {
            return Err(Error::Config("all model dimensions must be positive".into()));
        }
        if !(self.obs_variance > 0.0) {
            return Err(Error::Config("obs_variance must be positive".into()));
        }
        if self.entangled && self.k_factors != 1 {
            return Err(Error::Config(
                "an entangled model has exactly one latent factor".into(),
            ));
        }
        Ok(())
    }

    /// The entangled baseline of this configuration: one latent factor of the
    /// same total dimension, everything else unchanged.
    pub fn entangled_twin(&self) -> ModelConfig {
        ModelConfig {
            k_factors: 1,
            factor_dim: self.d_total(),
            entangled: true,
            ..self.clone()
        }
    }

    /// Serializes as `key = value` lines.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",")
        };
        let mut s = String::new();
        writeln!(s, "k_factors = {}", self.k_factors).unwrap();
        writeln!(s, "factor_dim = {}", self.factor_dim).unwrap();
        writeln!(s, "frame_channels = {}", self.frame_channels).unwrap();
        writeln!(s, "frame_height = {}", self.frame_height).unwrap();
        writeln!(s, "frame_width = {}", self.frame_width).unwrap();
        writeln!(s, "obs_variance = {}", self.obs_variance).unwrap();
        writeln!(s, "encoder_hidden = {}", list(&self.encoder_hidden)).unwrap();
        writeln!(s, "decoder_hidden = {}", list(&self.decoder_hidden)).unwrap();
        writeln!(s, "transition_hidden = {}", list(&self.transition_hidden)).unwrap();
        writeln!(s, "entangled = {}", self.entangled).unwrap();
        s
    }

    /// Parses the output of [`to_text`](ModelConfig::to_text).
    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad config line: {line}")))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |key: &str| {
            map.get(key)
                .ok_or_else(|| Error::Format(format!("config is missing {key}")))
        };
        let usize_of = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|_| Error::Format(format!("bad value for {key}")))
        };
        let list_of = |key: &str| -> Result<Vec<usize>> {
            let raw = get(key)?;
            if raw.is_empty() {
                return Ok(Vec::new());
            }
            raw.split(',')
                .map(|d| d.trim().parse().map_err(|_| Error::Format(format!("bad value for {key}"))))
                .collect()
        };
        let cfg = ModelConfig {
            k_factors: usize_of("k_factors")?,
            factor_dim: usize_of("factor_dim")?,
            frame_channels: usize_of("frame_channels")?,
            frame_height: usize_of("frame_height")?,
            frame_width: usize_of("frame_width")?,
            obs_variance: get("obs_variance")?
                .parse()
                .map_err(|_| Error::Format("bad value for obs_variance".into()))?,
            encoder_hidden: list_of("encoder_hidden")?,
            decoder_hidden: list_of("decoder_hidden")?,
            transition_hidden: list_of("transition_hidden")?,
            entangled: get("entangled")?
                .parse()
                .map_err(|_| Error::Format("bad value for entangled".into()))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// The sampled latent state `Z_t`: `k` factor vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredLatentState {
    factors: Vec<Vec<f64>>,
}

impl FactoredLatentState {
    pub fn new(factors: Vec<Vec<f64>>, config: &ModelConfig) -> Result<Self> {
        if factors.len() != config.k_factors
            || factors.iter().any(|f| f.len() != config.factor_dim)
        {
            return Err(Error::Shape(format!(
                "latent state must be {} factors of dimension {}",
                config.k_factors, config.factor_dim
            )));
        }
        Ok(Self { factors })
    }

    /// Splits a flat `d_total` vector into factors.
    pub fn from_flat(flat: &[f64], config: &ModelConfig) -> Result<Self> {
        if flat.len() != config.d_total() {
            return Err(Error::Shape(format!(
                "flat latent has length {}, expected {}",
                flat.len(),
                config.d_total()
            )));
        }
        let factors = flat.chunks(config.factor_dim).map(|c| c.to_vec()).collect();
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[Vec<f64>] {
        &self.factors
    }

    pub fn factor(&self, i: usize) -> &[f64] {
        &self.factors[i]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.factors.concat()
    }
}

/// Inference combiner: the linear blocks that merge the encoded frame with
/// the predicted prior parameters into posterior mean and log-variance heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Combiner {
    pub transformed_x: Mlp,
    pub transformed_mu: Mlp,
    pub transformed_sigma: Mlp,
    pub latent: Mlp,
    pub output_mu: Mlp,
    pub output_sigma: Mlp,
}

const COMBINER_ACT: Activation = Activation::LeakyRelu(0.2);

impl Combiner {
    fn init(d: usize, rng: &mut RngStream) -> Self {
        let block = |sizes: &[usize], fin: Activation, rng: &mut RngStream| {
            Mlp::init(sizes, COMBINER_ACT, fin, rng)
        };
        Self {
            transformed_x: block(&[ENCODER_FEATURES, d], COMBINER_ACT, rng),
            transformed_mu: block(&[d, d], COMBINER_ACT, rng),
            transformed_sigma: block(&[d, d], COMBINER_ACT, rng),
            latent: block(&[3 * d, d], COMBINER_ACT, rng),
            output_mu: block(&[d, d], Activation::Identity, rng),
            output_sigma: block(&[d, d], Activation::Identity, rng),
        }
    }
}

/// All generative and inference parameters plus the structural config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    config: ModelConfig,
    /// One transition network per factor, `factor_dim -> 2*factor_dim`.
    transitions: Vec<Mlp>,
    decoder: Mlp,
    encoder: Mlp,
    combiner: Combiner,
}

/// Standard normal prior over the full latent state at the first timestep.
pub fn prior_initial(config: &ModelConfig) -> DiagonalGaussian {
    DiagonalGaussian::standard(config.d_total())
}

impl ModelBundle {
    /// Allocates and initializes all networks from `rng`.
    pub fn build(config: ModelConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        let d = config.d_total();
        let fd = config.factor_dim;

        let mut tr_sizes = vec![fd];
        tr_sizes.extend_from_slice(&config.transition_hidden);
        tr_sizes.push(2 * fd);
        let transitions = (0..config.k_factors)
            .map(|_| Mlp::init(&tr_sizes, Activation::Selu, Activation::Identity, rng))
            .collect();

        let mut dec_sizes = vec![d];
        dec_sizes.extend_from_slice(&config.decoder_hidden);
        dec_sizes.push(config.frame_dim());
        let decoder = Mlp::init(&dec_sizes, Activation::Relu, Activation::Identity, rng);

        let mut enc_sizes = vec![config.frame_dim()];
        enc_sizes.extend_from_slice(&config.encoder_hidden);
        enc_sizes.push(ENCODER_FEATURES);
        let encoder = Mlp::init(&enc_sizes, COMBINER_ACT, COMBINER_ACT, rng);

        let combiner = Combiner::init(d, rng);
        Ok(Self { config, transitions, decoder, encoder, combiner })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn transitions(&self) -> &[Mlp] {
        &self.transitions
    }

    /// Concatenated per-factor transition prediction for `Z_t | Z_{t-1}`.
    /// Factor `i`'s slice depends only on factor `i` of `prev`.
    pub fn transition_predict(&self, prev: &FactoredLatentState) -> Result<DiagonalGaussian> {
        if prev.factors().len() != self.config.k_factors {
            return Err(Error::Shape(format!(
                "state has {} factors, model has {}",
                prev.factors().len(),
                self.config.k_factors
            )));
        }
        let fd = self.config.factor_dim;
        let mut mean = Vec::with_capacity(self.config.d_total());
        let mut log_var = Vec::with_capacity(self.config.d_total());
        for (net, factor) in self.transitions.iter().zip(prev.factors()) {
            let out = net.forward(factor)?;
            mean.extend_from_slice(&out[..fd]);
            log_var.extend_from_slice(&out[fd..]);
        }
        DiagonalGaussian::new(mean, log_var)
    }

    /// Pixel distribution for a latent state: logistic-squashed decoder mean
    /// and the fixed observation variance on every pixel.
    pub fn decode(&self, state: &FactoredLatentState) -> Result<DiagonalGaussian> {
        let raw = self.decoder.forward(&state.to_flat())?;
        let mean = raw.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();
        let log_var = vec![self.config.obs_variance.ln(); self.config.frame_dim()];
        DiagonalGaussian::new(mean, log_var)
    }

    /// Approximate posterior `q(Z_t | Z_{t-1}, x_t)` from the predicted prior
    /// and the current frame. At the first step the prediction inputs are
    /// replaced by zero vectors.
    pub fn infer_posterior(
        &self,
        prediction: &DiagonalGaussian,
        frame: &[f64],
        first_step: bool,
    ) -> Result<DiagonalGaussian> {
        let d = self.config.d_total();
        if prediction.dim() != d {
            return Err(Error::Shape(format!(
                "prediction has dimension {}, expected {}",
                prediction.dim(),
                d
            )));
        }
        let feat = self.encoder.forward(frame)?;
        let zeros = vec![0.0; d];
        let (pred_mean, pred_lv): (&[f64], &[f64]) = if first_step {
            (&zeros, &zeros)
        } else {
            (prediction.mean(), prediction.log_var())
        };
        let tx = self.combiner.transformed_x.forward(&feat)?;
        let tmu = self.combiner.transformed_mu.forward(pred_mean)?;
        let tsig = self.combiner.transformed_sigma.forward(pred_lv)?;
        let mut joint = Vec::with_capacity(3 * d);
        joint.extend_from_slice(&tx);
        joint.extend_from_slice(&tmu);
        joint.extend_from_slice(&tsig);
        let latent = self.combiner.latent.forward(&joint)?;
        let mu = self.combiner.output_mu.forward(&latent)?;
        let lv = self.combiner.output_sigma.forward(&latent)?;
        DiagonalGaussian::new(mu, lv)
    }

    /// `(name, network)` pairs in the fixed registry order that defines
    /// parameter flattening.
    fn network_entries(&self) -> Vec<(String, &Mlp)> {
        let c = &self.combiner;
        let mut entries: Vec<(String, &Mlp)> = self
            .transitions
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("transition.{i}"), t))
            .collect();
        entries.push(("decoder".into(), &self.decoder));
        entries.push(("encoder".into(), &self.encoder));
        entries.push(("combiner.transformed_x".into(), &c.transformed_x));
        entries.push(("combiner.transformed_mu".into(), &c.transformed_mu));
        entries.push(("combiner.transformed_sigma".into(), &c.transformed_sigma));
        entries.push(("combiner.latent".into(), &c.latent));
        entries.push(("combiner.output_mu".into(), &c.output_mu));
        entries.push(("combiner.output_sigma".into(), &c.output_sigma));
        entries
    }

    fn visit_networks_mut(&mut self, mut f: impl FnMut(&mut Mlp)) {
        for t in &mut self.transitions {
            f(t);
        }
        f(&mut self.decoder);
        f(&mut self.encoder);
        let c = &mut self.combiner;
        f(&mut c.transformed_x);
        f(&mut c.transformed_mu);
        f(&mut c.transformed_sigma);
        f(&mut c.latent);
        f(&mut c.output_mu);
        f(&mut c.output_sigma);
    }

    /// Flattens every parameter tensor into one registry-ordered vector.
    pub fn flatten(&self) -> ParamVector {
        let mut tensors: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        for (prefix, net) in self.network_entries() {
            for (i, layer) in net.layers().iter().enumerate() {
                tensors.push((
                    format!("{prefix}.{i}.weight"),
                    vec![layer.out_dim, layer.in_dim],
                    &layer.weights,
                ));
                tensors.push((format!("{prefix}.{i}.bias"), vec![layer.out_dim], &layer.bias));
            }
        }
        ParamVector::from_tensors(tensors)
    }

    /// Writes `params` back into the networks. The layout must match
    /// [`flatten`](ModelBundle::flatten).
    pub fn assign(&mut self, params: &ParamVector) -> Result<()> {
        let expected = self.flatten();
        if expected.layout() != params.layout() {
            return Err(Error::Shape(
                "parameter vector layout does not match this model structure".into(),
            ));
        }
        let mut idx = 0;
        self.visit_networks_mut(|net| {
            for layer in net.layers_mut() {
                layer.weights.copy_from_slice(params.tensor(idx));
                layer.bias.copy_from_slice(params.tensor(idx + 1));
                idx += 2;
            }
        });
        Ok(())
    }

    /// Registers every parameter on `graph` and returns the graph-side model.
    pub fn mount<'a>(&'a self, graph: &mut Graph) -> MountedBundle<'a> {
        let transitions = self.transitions.iter().map(|t| t.mount(graph)).collect();
        let decoder = self.decoder.mount(graph);
        let encoder = self.encoder.mount(graph);
        let combiner = MountedCombiner {
            transformed_x: self.combiner.transformed_x.mount(graph),
            transformed_mu: self.combiner.transformed_mu.mount(graph),
            transformed_sigma: self.combiner.transformed_sigma.mount(graph),
            latent: self.combiner.latent.mount(graph),
            output_mu: self.combiner.output_mu.mount(graph),
            output_sigma: self.combiner.output_sigma.mount(graph),
        };
        MountedBundle { config: &self.config, transitions, decoder, encoder, combiner }
    }

    /// Writes `config.txt`, `params.txt`, and `params.bin` under `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.txt"), self.config.to_text())?;
        self.flatten().save(&dir.join("params.txt"), &dir.join("params.bin"))
    }

    /// Rebuilds a bundle from [`save_checkpoint`](ModelBundle::save_checkpoint) output.
    pub fn load_checkpoint(dir: &Path) -> Result<Self> {
        let config = ModelConfig::from_text(&std::fs::read_to_string(dir.join("config.txt"))?)?;
        let mut bundle = ModelBundle::build(config, &mut RngStream::new(0))?;
        let params = ParamVector::load(&dir.join("params.txt"), &dir.join("params.bin"))?;
        bundle.assign(&params)?;
        Ok(bundle)
    }
}

struct MountedCombiner {
    transformed_x: MountedMlp,
    transformed_mu: MountedMlp,
    transformed_sigma: MountedMlp,
    latent: MountedMlp,
    output_mu: MountedMlp,
    output_sigma: MountedMlp,
}

/// Graph-side bundle: same networks, expressed as differentiable nodes.
pub struct MountedBundle<'a> {
    config: &'a ModelConfig,
    transitions: Vec<MountedMlp>,
    decoder: MountedMlp,
    encoder: MountedMlp,
    combiner: MountedCombiner,
}

impl<'a> MountedBundle<'a> {
    pub fn config(&self) -> &ModelConfig {
        self.config
    }

    /// Parameter leaf ids in registry order (matches [`ModelBundle::flatten`]).
    pub fn param_nodes(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        for t in &self.transitions {
            ids.extend(t.param_nodes());
        }
        ids.extend(self.decoder.param_nodes());
        ids.extend(self.encoder.param_nodes());
        let c = &self.combiner;
        ids.extend(c.transformed_x.param_nodes());
        ids.extend(c.transformed_mu.param_nodes());
        ids.extend(c.transformed_sigma.param_nodes());
        ids.extend(c.latent.param_nodes());
        ids.extend(c.output_mu.param_nodes());
        ids.extend(c.output_sigma.param_nodes());
        ids
    }

    pub fn transition(&self, g: &mut Graph, prev_sample: NodeId) -> GaussianNodes {
        let fd = self.config.factor_dim;
        let mut means = Vec::with_capacity(self.transitions.len());
        let mut log_vars = Vec::with_capacity(self.transitions.len());
        for (i, net) in self.transitions.iter().enumerate() {
            let factor = g.slice(prev_sample, i * fd, fd);
            let out = net.forward(g, factor);
            means.push(g.slice(out, 0, fd));
            log_vars.push(g.slice(out, fd, fd));
        }
        let mean = g.concat(&means);
        let raw_lv = g.concat(&log_vars);
        GaussianNodes::from_heads(g, mean, raw_lv)
    }

    pub fn decode(&self, g: &mut Graph, sample: NodeId) -> GaussianNodes {
        let raw = self.decoder.forward(g, sample);
        let mean = g.unary(Unary::Sigmoid, raw);
        let log_var = g.leaf(vec![self.config.obs_variance.ln(); self.config.frame_dim()]);
        GaussianNodes { mean, log_var }
    }

    pub fn posterior(
        &self,
        g: &mut Graph,
        prediction: &GaussianNodes,
        frame: NodeId,
        first_step: bool,
    ) -> GaussianNodes {
        let d = self.config.d_total();
        let feat = self.encoder.forward(g, frame);
        let (pm, plv) = if first_step {
            (g.leaf(vec![0.0; d]), g.leaf(vec![0.0; d]))
        } else {
            (prediction.mean, prediction.log_var)
        };
        let tx = self.combiner.transformed_x.forward(g, feat);
        let tmu = self.combiner.transformed_mu.forward(g, pm);
        let tsig = self.combiner.transformed_sigma.forward(g, plv);
        let joint = g.concat(&[tx, tmu, tsig]);
        let latent = self.combiner.latent.forward(g, joint);
        let mu = self.combiner.output_mu.forward(g, latent);
        let raw_lv = self.combiner.output_sigma.forward(g, latent);
        GaussianNodes::from_heads(g, mu, raw_lv)
    }

    pub fn initial_prior(&self, g: &mut Graph) -> GaussianNodes {
        let d = self.config.d_total();
        GaussianNodes { mean: g.leaf(vec![0.0; d]), log_var: g.leaf(vec![0.0; d]) }
    }
}
