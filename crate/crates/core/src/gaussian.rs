//! Diagonal Gaussian distributions: log-density, closed-form KL divergence,
//! and reparameterized sampling.
//!
//! This is the single distribution family in the model. Variances are carried
//! as log σ² and clamped to [-12, 12] on construction, which keeps them
//! strictly positive without ever underflowing during optimization.

use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Unary};
use crate::rng::RngStream;

pub const LOG_VAR_MIN: f64 = -12.0;
pub const LOG_VAR_MAX: f64 = 12.0;

const LN_2PI: f64 = 1.8378770664093453;

/// Gaussian with diagonal covariance, parameterized by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagonalGaussian {
    /// Builds a distribution, clamping `log_var` into `[-12, 12]`.
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::Shape(format!(
                "mean has length {}, log_var has length {}",
                mean.len(),
                log_var.len()
            )));
        }
        let log_var = log_var
            .into_iter()
            .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
            .collect();
        Ok(Self { mean, log_var })
    }

    /// Standard normal of the given dimension.
    pub fn standard(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], log_var: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    /// Log-density at `x`.
    pub fn log_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "point has length {}, distribution has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let mut total = 0.0;
        for ((&m, &lv), &xi) in self.mean.iter().zip(&self.log_var).zip(x) {
            let d = xi - m;
            total += -0.5 * LN_2PI - 0.5 * lv - d * d / (2.0 * lv.exp());
        }
        Ok(total)
    }

    /// Closed-form `KL(self || other)`; nonnegative, zero iff identical.
    pub fn kl_divergence(&self, other: &DiagonalGaussian) -> Result<f64> {
        if self.dim() != other.dim() {
            return Err(Error::Shape(format!(
                "KL between dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        let mut total = 0.0;
        for i in 0..self.dim() {
            let (mq, lq) = (self.mean[i], self.log_var[i]);
            let (mp, lp) = (other.mean[i], other.log_var[i]);
            let dm = mq - mp;
            total += 0.5 * (lp - lq) + (lq.exp() + dm * dm) / (2.0 * lp.exp()) - 0.5;
        }
        Ok(total)
    }

    /// Reparameterized draw `mu + sigma * eps` with fresh `eps ~ N(0, I)`.
    pub fn sample(&self, rng: &mut RngStream) -> Vec<f64> {
        let eps = rng.normal_vec(self.dim());
        self.sample_with(&eps)
    }

    /// Reparameterized draw with caller-supplied noise.
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        debug_assert_eq!(eps.len(), self.dim());
        self.mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((&m, &lv), &e)| m + (0.5 * lv).exp() * e)
            .collect()
    }
}

/// Graph-side diagonal Gaussian: mean and log-variance nodes of equal length.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNodes {
    pub mean: NodeId,
    pub log_var: NodeId,
}

impl GaussianNodes {
    /// Wraps raw head outputs, clamping the log-variance on the graph.
    pub fn from_heads(g: &mut Graph, mean: NodeId, raw_log_var: NodeId) -> Self {
        let log_var = g.unary(Unary::Clamp(LOG_VAR_MIN, LOG_VAR_MAX), raw_log_var);
        Self { mean, log_var }
    }

    /// Reads the node values into a concrete distribution.
    pub fn realize(&self, g: &Graph) -> DiagonalGaussian {
        DiagonalGaussian::new(g.value(self.mean).to_vec(), g.value(self.log_var).to_vec())
            .expect("graph gaussian has matching lengths")
    }

    /// Log-density of the constant point `x` as a scalar node.
    pub fn log_pdf(&self, g: &mut Graph, x: NodeId) -> NodeId {
        let dim = g.value(self.mean).len();
        let diff = g.sub(x, self.mean);
        let sq = g.unary(Unary::Square, diff);
        let neg_lv = g.scale(self.log_var, -1.0);
        let inv_var = g.unary(Unary::Exp, neg_lv);
        let quad = g.mul(sq, inv_var);
        let quad = g.scale(quad, -0.5);
        let lv_term = g.scale(self.log_var, -0.5);
        let per_dim = g.add(lv_term, quad);
        let total = g.sum(per_dim);
        g.offset(total, -0.5 * LN_2PI * dim as f64)
    }

    /// Closed-form `KL(self || other)` as a scalar node.
    pub fn kl_divergence(&self, g: &mut Graph, other: &GaussianNodes) -> NodeId {
        let dim = g.value(self.mean).len();
        let lv_diff = g.sub(other.log_var, self.log_var);
        let lv_term = g.scale(lv_diff, 0.5);
        let var_q = g.unary(Unary::Exp, self.log_var);
        let dm = g.sub(self.mean, other.mean);
        let dm2 = g.unary(Unary::Square, dm);
        let num = g.add(var_q, dm2);
        let neg_lp = g.scale(other.log_var, -1.0);
        let inv_var_p = g.unary(Unary::Exp, neg_lp);
        let ratio = g.mul(num, inv_var_p);
        let ratio = g.scale(ratio, 0.5);
        let per_dim = g.add(lv_term, ratio);
        let total = g.sum(per_dim);
        g.offset(total, -0.5 * dim as f64)
    }

    /// Reparameterized sample `mu + exp(log_var / 2) * eps` with `eps` a leaf,
    /// keeping the pathwise dependence on the parameters differentiable.
    pub fn sample_with(&self, g: &mut Graph, eps: &[f64]) -> NodeId {
        let half_lv = g.scale(self.log_var, 0.5);
        let sigma = g.unary(Unary::Exp, half_lv);
        let eps = g.leaf(eps.to_vec());
        let scaled = g.mul(sigma, eps);
        g.add(self.mean, scaled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn standard1() -> DiagonalGaussian {
        DiagonalGaussian::standard(1)
    }

    #[test]
    fn log_pdf_standard_normal() {
        assert_relative_eq!(standard1().log_pdf(&[0.0]).unwrap(), -0.9189385332046727, epsilon = 1e-12);
        assert_relative_eq!(standard1().log_pdf(&[1.0]).unwrap(), -1.4189385332046727, epsilon = 1e-12);
        let d2 = DiagonalGaussian::standard(2);
        assert_relative_eq!(d2.log_pdf(&[0.0, 0.0]).unwrap(), -1.8378770664093453, epsilon = 1e-12);
    }

    #[test]
    fn kl_reference_values() {
        let std = standard1();
        assert_eq!(std.kl_divergence(&std).unwrap(), 0.0);
        let shifted = DiagonalGaussian::new(vec![1.0], vec![0.0]).unwrap();
        assert_relative_eq!(shifted.kl_divergence(&std).unwrap(), 0.5, epsilon = 1e-12);
        let wide = DiagonalGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert_relative_eq!(
            wide.kl_divergence(&std).unwrap(),
            (std::f64::consts::E - 2.0) / 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn shape_mismatches_are_errors() {
        assert!(DiagonalGaussian::new(vec![0.0], vec![0.0, 0.0]).is_err());
        assert!(standard1().log_pdf(&[0.0, 0.0]).is_err());
        let d2 = DiagonalGaussian::standard(2);
        assert!(standard1().kl_divergence(&d2).is_err());
    }

    #[test]
    fn log_var_is_clamped_on_construction() {
        let d = DiagonalGaussian::new(vec![0.0, 0.0], vec![-40.0, 40.0]).unwrap();
        assert_eq!(d.log_var(), &[LOG_VAR_MIN, LOG_VAR_MAX]);
    }

    #[test]
    fn sample_with_zero_noise_returns_mean() {
        let d = DiagonalGaussian::new(vec![1.0, -2.0], vec![0.7, -0.3]).unwrap();
        assert_eq!(d.sample_with(&[0.0, 0.0]), vec![1.0, -2.0]);
    }

    #[test]
    fn sample_with_unit_noise_unit_variance() {
        let d = DiagonalGaussian::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(d.sample_with(&[1.0, 1.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn sample_moments_match_parameters() {
        // N(2, 4): 1e5 samples, mean within 2 +- 0.05, variance within 4 +- 0.15
        let d = DiagonalGaussian::new(vec![2.0], vec![4.0f64.ln()]).unwrap();
        let mut rng = RngStream::new(123);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - 2.0).abs() < 0.05, "mean {mean}");
        assert!((var - 4.0).abs() < 0.15, "var {var}");
    }

    #[test]
    fn monte_carlo_kl_matches_closed_form() {
        let mut rng = RngStream::new(77);
        for dim in [1usize, 3, 16] {
            let q = DiagonalGaussian::new(
                (0..dim).map(|_| rng.normal()).collect(),
                (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            )
            .unwrap();
            let p = DiagonalGaussian::new(
                (0..dim).map(|_| rng.normal()).collect(),
                (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
            )
            .unwrap();
            let exact = q.kl_divergence(&p).unwrap();
            let n = 100_000;
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..n {
                let z = q.sample(&mut rng);
                let term = q.log_pdf(&z).unwrap() - p.log_pdf(&z).unwrap();
                sum += term;
                sum_sq += term * term;
            }
            let mc = sum / n as f64;
            let se = ((sum_sq / n as f64 - mc * mc) / n as f64).sqrt();
            assert!(
                (mc - exact).abs() <= 3.0 * se,
                "dim {dim}: mc {mc} vs exact {exact} (se {se})"
            );
        }
    }

    #[test]
    fn density_integrates_to_one_on_grid() {
        let d = DiagonalGaussian::new(vec![0.4], vec![(0.6f64).ln()]).unwrap();
        let sigma = 0.6f64.sqrt();
        let (lo, hi) = (0.4 - 8.0 * sigma, 0.4 + 8.0 * sigma);
        let steps = 20_000;
        let h = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += w * d.log_pdf(&[x]).unwrap().exp();
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-4, "integral {integral}");
    }

    #[test]
    fn graph_forms_match_plain_forms() {
        let mut rng = RngStream::new(5);
        let q = DiagonalGaussian::new(rng.normal_vec(4), rng.normal_vec(4)).unwrap();
        let p = DiagonalGaussian::new(rng.normal_vec(4), rng.normal_vec(4)).unwrap();
        let x = rng.normal_vec(4);
        let eps = rng.normal_vec(4);

        let mut g = Graph::new();
        let qn = GaussianNodes {
            mean: g.leaf(q.mean().to_vec()),
            log_var: g.leaf(q.log_var().to_vec()),
        };
        let pn = GaussianNodes {
            mean: g.leaf(p.mean().to_vec()),
            log_var: g.leaf(p.log_var().to_vec()),
        };
        let xn = g.leaf(x.clone());
        let lp = qn.log_pdf(&mut g, xn);
        let kl = qn.kl_divergence(&mut g, &pn);
        let z = qn.sample_with(&mut g, &eps);

        assert_relative_eq!(g.scalar(lp), q.log_pdf(&x).unwrap(), epsilon = 1e-12);
        assert_relative_eq!(g.scalar(kl), q.kl_divergence(&p).unwrap(), epsilon = 1e-12);
        for (a, b) in g.value(z).iter().zip(q.sample_with(&eps)) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn graph_gradients_match_finite_differences() {
        let mut rng = RngStream::new(123);
        let mq = rng.normal_vec(3);
        let lq = rng.normal_vec(3);
        let mp = rng.normal_vec(3);
        let lp = rng.normal_vec(3);
        let x = rng.normal_vec(3);
        let eps = rng.normal_vec(3);

        // objective: log_pdf(q, x) + kl(q || p) + sum(sample(q))
        let build = |mq: &[f64], lq: &[f64], mp: &[f64], lp: &[f64]| -> (Graph, [NodeId; 4], f64) {
            let mut g = Graph::new();
            let qm = g.leaf(mq.to_vec());
            let ql = g.leaf(lq.to_vec());
            let pm = g.leaf(mp.to_vec());
            let pl = g.leaf(lp.to_vec());
            let q = GaussianNodes { mean: qm, log_var: ql };
            let p = GaussianNodes { mean: pm, log_var: pl };
            let xn = g.leaf(x.clone());
            let lpdf = q.log_pdf(&mut g, xn);
            let kl = q.kl_divergence(&mut g, &p);
            let z = q.sample_with(&mut g, &eps);
            let zs = g.sum(z);
            let t = g.add(lpdf, kl);
            let obj = g.add(t, zs);
            let val = g.scalar(obj);
            g.backward(obj);
            (g, [qm, ql, pm, pl], val)
        };

        let (g, ids, _) = build(&mq, &lq, &mp, &lp);
        let h = 1e-6;
        let sources: [&[f64]; 4] = [&mq, &lq, &mp, &lp];
        for (slot, &id) in ids.iter().enumerate() {
            for i in 0..3 {
                let mut probe: Vec<Vec<f64>> = sources.iter().map(|s| s.to_vec()).collect();
                probe[slot][i] += h;
                let (_, _, plus) = build(&probe[0], &probe[1], &probe[2], &probe[3]);
                probe[slot][i] -= 2.0 * h;
                let (_, _, minus) = build(&probe[0], &probe[1], &probe[2], &probe[3]);
                let fd = (plus - minus) / (2.0 * h);
                let an = g.adjoint(id)[i];
                assert!(
                    (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6) < 1e-5,
                    "slot {slot} entry {i}: reverse {an} vs fd {fd}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(
            mq in proptest::collection::vec(-5.0f64..5.0, 1..8),
            lq in proptest::collection::vec(-3.0f64..3.0, 1..8),
            mp in proptest::collection::vec(-5.0f64..5.0, 1..8),
            lp in proptest::collection::vec(-3.0f64..3.0, 1..8),
        ) {
            let dim = mq.len().min(lq.len()).min(mp.len()).min(lp.len());
            let q = DiagonalGaussian::new(mq[..dim].to_vec(), lq[..dim].to_vec()).unwrap();
            let p = DiagonalGaussian::new(mp[..dim].to_vec(), lp[..dim].to_vec()).unwrap();
            let kl = q.kl_divergence(&p).unwrap();
            prop_assert!(kl >= 0.0);
        }

        #[test]
        fn kl_zero_iff_identical(
            m in proptest::collection::vec(-5.0f64..5.0, 1..8),
            lv in proptest::collection::vec(-3.0f64..3.0, 1..8),
        ) {
            let dim = m.len().min(lv.len());
            let d = DiagonalGaussian::new(m[..dim].to_vec(), lv[..dim].to_vec()).unwrap();
            prop_assert!(d.kl_divergence(&d).unwrap().abs() < 1e-12);
        }
    }
}
