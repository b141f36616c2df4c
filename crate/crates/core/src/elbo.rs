//! Filtering rollout of inference and the evidence-lower-bound estimator.
//!
//! The objective for a sequence `x_1..x_n` is
//!
//! ```text
//! L = E_q[ log p(X|Z) ] - KL(q(Z_1|x_1) || p(Z_1))
//!       - sum_{t=2..n} E_{Z_{t-1}~q} KL(q(Z_t|Z_{t-1},x_t) || p(Z_t|Z_{t-1}))
//! ```
//!
//! estimated with a single reparameterized trajectory per sequence: the prior
//! at `t=1` is `N(0, I)`, the prior at `t>1` is the transition applied to the
//! previous sample, KL terms are closed-form, and the reconstruction term is
//! the fixed-variance pixel log-likelihood along the sampled trajectory.
//!
//! [`build_elbo`] records the estimator on a [`Graph`], so the very same code
//! path serves evaluation ([`elbo_evaluate`]), training gradients
//! ([`elbo_gradient`]), and the linear-Gaussian bound certificate in the
//! oracle module, which swaps the generative side through [`SequenceModel`].

use rayon::prelude::*;

use crate::data::VideoSequence;
use crate::error::{Error, Result};
use crate::gaussian::{DiagonalGaussian, GaussianNodes};
use crate::model::{FactoredLatentState, ModelBundle, MountedBundle};
use crate::numerics::{Graph, NodeId, ParamVector};
use crate::rng::RngStream;

/// A generative/inference pair expressed on the graph. Implementations:
/// the mounted model bundle, and the oracle module's linear-Gaussian model.
pub trait SequenceModel {
    fn latent_dim(&self) -> usize;
    fn frame_dim(&self) -> usize;
    /// Prior over the first latent state.
    fn initial_prior(&self, g: &mut Graph) -> GaussianNodes;
    /// Prior over `Z_t` given the sampled `Z_{t-1}`.
    fn transition(&self, g: &mut Graph, prev_sample: NodeId) -> GaussianNodes;
    /// Observation distribution for a latent sample.
    fn decode(&self, g: &mut Graph, sample: NodeId) -> GaussianNodes;
    /// Filtering posterior for timestep `step` (0-based). `prev_sample` is
    /// `None` exactly at the first step.
    fn posterior(
        &self,
        g: &mut Graph,
        prediction: &GaussianNodes,
        prev_sample: Option<NodeId>,
        frame: NodeId,
        step: usize,
    ) -> GaussianNodes;
}

impl SequenceModel for MountedBundle<'_> {
    fn latent_dim(&self) -> usize {
        self.config().d_total()
    }

    fn frame_dim(&self) -> usize {
        self.config().frame_dim()
    }

    fn initial_prior(&self, g: &mut Graph) -> GaussianNodes {
        MountedBundle::initial_prior(self, g)
    }

    fn transition(&self, g: &mut Graph, prev_sample: NodeId) -> GaussianNodes {
        MountedBundle::transition(self, g, prev_sample)
    }

    fn decode(&self, g: &mut Graph, sample: NodeId) -> GaussianNodes {
        MountedBundle::decode(self, g, sample)
    }

    fn posterior(
        &self,
        g: &mut Graph,
        prediction: &GaussianNodes,
        _prev_sample: Option<NodeId>,
        frame: NodeId,
        step: usize,
    ) -> GaussianNodes {
        MountedBundle::posterior(self, g, prediction, frame, step == 0)
    }
}

/// Pre-drawn reparameterization noise, one standard-normal vector per step.
#[derive(Debug, Clone)]
pub struct FrozenNoise {
    eps: Vec<Vec<f64>>,
}

impl FrozenNoise {
    /// Draws `n_steps x dim` noise in step-major order.
    pub fn draw(rng: &mut RngStream, n_steps: usize, dim: usize) -> Self {
        Self { eps: (0..n_steps).map(|_| rng.normal_vec(dim)).collect() }
    }

    pub fn step(&self, t: usize) -> &[f64] {
        &self.eps[t]
    }

    pub fn len(&self) -> usize {
        self.eps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eps.is_empty()
    }
}

/// Graph nodes for one sequence's objective.
pub struct ElboNodes {
    pub recon_total: NodeId,
    pub kl_terms: Vec<NodeId>,
    pub elbo: NodeId,
    /// Per-step posterior samples, for callers that inspect the trajectory.
    pub samples: Vec<NodeId>,
}

/// Records the single-trajectory estimator for `frames` on the graph.
pub fn build_elbo(
    g: &mut Graph,
    model: &impl SequenceModel,
    frames: &[Vec<f64>],
    noise: &FrozenNoise,
) -> Result<ElboNodes> {
    if frames.is_empty() {
        return Err(Error::Shape("sequence must have at least one frame".into()));
    }
    if noise.len() != frames.len() {
        return Err(Error::Shape(format!(
            "noise has {} steps, sequence has {}",
            noise.len(),
            frames.len()
        )));
    }
    for f in frames {
        if f.len() != model.frame_dim() {
            return Err(Error::Shape(format!(
                "frame has length {}, model expects {}",
                f.len(),
                model.frame_dim()
            )));
        }
    }

    let mut prev_sample: Option<NodeId> = None;
    let mut recon_total: Option<NodeId> = None;
    let mut kl_total: Option<NodeId> = None;
    let mut kl_terms = Vec::with_capacity(frames.len());
    let mut samples = Vec::with_capacity(frames.len());

    for (t, frame) in frames.iter().enumerate() {
        let prior = match prev_sample {
            None => model.initial_prior(g),
            Some(prev) => model.transition(g, prev),
        };
        let frame_node = g.leaf(frame.clone());
        let posterior = model.posterior(g, &prior, prev_sample, frame_node, t);
        let kl = posterior.kl_divergence(g, &prior);
        kl_terms.push(kl);
        kl_total = Some(match kl_total {
            None => kl,
            Some(acc) => g.add(acc, kl),
        });

        let sample = posterior.sample_with(g, noise.step(t));
        samples.push(sample);
        let recon = model.decode(g, sample);
        let log_p = recon.log_pdf(g, frame_node);
        recon_total = Some(match recon_total {
            None => log_p,
            Some(acc) => g.add(acc, log_p),
        });
        prev_sample = Some(sample);
    }

    let recon_total = recon_total.unwrap();
    let elbo = g.sub(recon_total, kl_total.unwrap());
    Ok(ElboNodes { recon_total, kl_terms, elbo, samples })
}

/// Reconstruction and KL terms of the objective for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboBreakdown {
    pub recon_total: f64,
    pub kl_terms: Vec<f64>,
    pub elbo: f64,
}

impl ElboBreakdown {
    pub fn kl_total(&self) -> f64 {
        self.kl_terms.iter().sum()
    }

    fn realize(g: &Graph, nodes: &ElboNodes) -> Self {
        Self {
            recon_total: g.scalar(nodes.recon_total),
            kl_terms: nodes.kl_terms.iter().map(|&k| g.scalar(k)).collect(),
            elbo: g.scalar(nodes.elbo),
        }
    }
}

/// Per-timestep record of a filtering pass.
#[derive(Debug, Clone)]
pub struct RolloutTrace {
    pub priors: Vec<DiagonalGaussian>,
    pub posteriors: Vec<DiagonalGaussian>,
    pub samples: Vec<FactoredLatentState>,
    pub recons: Vec<DiagonalGaussian>,
}

impl RolloutTrace {
    pub fn len(&self) -> usize {
        self.priors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.priors.is_empty()
    }
}

fn check_shape(bundle: &ModelBundle, seq: &VideoSequence) -> Result<()> {
    let cfg = bundle.config();
    if seq.channels() != cfg.frame_channels
        || seq.height() != cfg.frame_height
        || seq.width() != cfg.frame_width
    {
        return Err(Error::Shape(format!(
            "sequence frames are {}x{}x{}, model expects {}x{}x{}",
            seq.channels(),
            seq.height(),
            seq.width(),
            cfg.frame_channels,
            cfg.frame_height,
            cfg.frame_width
        )));
    }
    Ok(())
}

/// Runs filtering inference over a sequence, sampling each posterior once.
pub fn filter_rollout(
    bundle: &ModelBundle,
    seq: &VideoSequence,
    rng: &mut RngStream,
) -> Result<RolloutTrace> {
    check_shape(bundle, seq)?;
    let cfg = bundle.config();
    let mut trace = RolloutTrace {
        priors: Vec::with_capacity(seq.n_frames()),
        posteriors: Vec::with_capacity(seq.n_frames()),
        samples: Vec::with_capacity(seq.n_frames()),
        recons: Vec::with_capacity(seq.n_frames()),
    };
    for t in 0..seq.n_frames() {
        let prior = match trace.samples.last() {
            None => crate::model::prior_initial(cfg),
            Some(prev) => bundle.transition_predict(prev)?,
        };
        let frame = seq.frame_f64(t);
        let posterior = bundle.infer_posterior(&prior, &frame, t == 0)?;
        let sample = FactoredLatentState::from_flat(&posterior.sample(rng), cfg)?;
        let recon = bundle.decode(&sample)?;
        trace.priors.push(prior);
        trace.posteriors.push(posterior);
        trace.samples.push(sample);
        trace.recons.push(recon);
    }
    Ok(trace)
}

/// Single-sample estimate of the objective for one sequence.
pub fn elbo_evaluate(
    bundle: &ModelBundle,
    seq: &VideoSequence,
    rng: &mut RngStream,
) -> Result<ElboBreakdown> {
    check_shape(bundle, seq)?;
    let noise = FrozenNoise::draw(rng, seq.n_frames(), bundle.config().d_total());
    let frames: Vec<Vec<f64>> = (0..seq.n_frames()).map(|t| seq.frame_f64(t)).collect();
    let mut g = Graph::new();
    let mounted = bundle.mount(&mut g);
    let nodes = build_elbo(&mut g, &mounted, &frames, &noise)?;
    g.ensure_finite(nodes.elbo, "elbo")?;
    Ok(ElboBreakdown::realize(&g, &nodes))
}

/// Gradient of the batch-mean objective with respect to every parameter,
/// along with the mean breakdown. The reparameterization noise is drawn once
/// and shared by every sequence in the batch.
pub fn elbo_gradient(
    bundle: &ModelBundle,
    batch: &[VideoSequence],
    rng: &mut RngStream,
) -> Result<(ParamVector, ElboBreakdown)> {
    let first = batch
        .first()
        .ok_or_else(|| Error::Shape("gradient needs a non-empty batch".into()))?;
    let n = first.n_frames();
    for seq in batch {
        check_shape(bundle, seq)?;
        if seq.n_frames() != n {
            return Err(Error::Shape("batch sequences must share one length".into()));
        }
    }
    let noise = FrozenNoise::draw(rng, n, bundle.config().d_total());

    // Fan out over contiguous chunks; summing per chunk and then across
    // chunks in index order keeps the reduction deterministic.
    let chunk_size = batch.len().div_ceil(rayon::current_num_threads());
    let template = bundle.flatten().zeros_like();
    let partials: Vec<Result<(Vec<f64>, f64, Vec<f64>, f64)>> = batch
        .par_chunks(chunk_size)
        .map(|chunk| {
            let mut grad = vec![0.0; template.len()];
            let mut recon = 0.0;
            let mut kls = vec![0.0; n];
            let mut elbo = 0.0;
            for seq in chunk {
                let frames: Vec<Vec<f64>> =
                    (0..seq.n_frames()).map(|t| seq.frame_f64(t)).collect();
                let mut g = Graph::new();
                let mounted = bundle.mount(&mut g);
                let nodes = build_elbo(&mut g, &mounted, &frames, &noise)?;
                g.ensure_finite(nodes.elbo, "elbo")?;
                g.backward(nodes.elbo);
                let mut offset = 0;
                for id in mounted.param_nodes() {
                    let adj = g.adjoint(id);
                    for (dst, &src) in grad[offset..offset + adj.len()].iter_mut().zip(adj) {
                        *dst += src;
                    }
                    offset += adj.len();
                }
                let b = ElboBreakdown::realize(&g, &nodes);
                recon += b.recon_total;
                for (acc, k) in kls.iter_mut().zip(&b.kl_terms) {
                    *acc += k;
                }
                elbo += b.elbo;
            }
            Ok((grad, recon, kls, elbo))
        })
        .collect();

    let mut grad = template;
    let mut recon = 0.0;
    let mut kls = vec![0.0; n];
    let mut elbo = 0.0;
    for part in partials {
        let (g, r, k, e) = part?;
        for (dst, src) in grad.values_mut().iter_mut().zip(g) {
            *dst += src;
        }
        recon += r;
        for (acc, kv) in kls.iter_mut().zip(k) {
            *acc += kv;
        }
        elbo += e;
    }
    let scale = 1.0 / batch.len() as f64;
    for v in grad.values_mut() {
        *v *= scale;
    }
    grad.ensure_finite("elbo gradient")?;
    let breakdown = ElboBreakdown {
        recon_total: recon * scale,
        kl_terms: kls.into_iter().map(|k| k * scale).collect(),
        elbo: elbo * scale,
    };
    Ok((grad, breakdown))
}
