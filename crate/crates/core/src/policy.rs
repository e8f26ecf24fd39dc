//! The parsimonious control: one fully connected network shared by every
//! rebalancing time, mapping the feature `(t, W)` to long-only portfolio
//! weights on the simplex.
//!
//! Hidden layers use the logistic sigmoid, the output layer a softmax. All
//! weights and biases live in one flat parameter vector: for each layer, the
//! `fan_out x fan_in` weight matrix in row-major order followed by the
//! `fan_out` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetTopology {
    pub n_features: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub n_assets: usize,
}

impl NetTopology {
    /// Minimal feature vector `(t, W)`.
    pub fn new(hidden_layers: usize, hidden_width: usize, n_assets: usize) -> Result<Self> {
        let t = Self { n_features: 2, hidden_layers, hidden_width, n_assets };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_features == 0 || self.hidden_layers == 0 || self.hidden_width == 0 || self.n_assets < 2 {
            return Err(Error::InvalidParameter(format!(
                "topology needs positive counts and at least 2 assets: {self:?}"
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of each affine map, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.n_features;
        for _ in 0..self.hidden_layers {
            dims.push((fan_in, self.hidden_width));
            fan_in = self.hidden_width;
        }
        dims.push((fan_in, self.n_assets));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Length of a per-evaluation activation record: scaled input, every
    /// hidden activation, then the output weights.
    pub fn record_len(&self) -> usize {
        self.n_features + self.hidden_layers * self.hidden_width + self.n_assets
    }
}

/// Affine per-feature standardization `x = (phi - offset) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub offset: [f64; 2],
    pub scale: [f64; 2],
}

impl FeatureTransform {
    pub fn identity() -> Self {
        Self { offset: [0.0; 2], scale: [1.0; 2] }
    }

    /// Maps `t` to `t / maturity` and wealth to `W / wealth_scale`.
    pub fn scaled(maturity: f64, wealth_scale: f64) -> Self {
        Self { offset: [0.0; 2], scale: [maturity, wealth_scale] }
    }

    fn validate(&self) -> Result<()> {
        if self.scale.iter().chain(&self.offset).all(|v| v.is_finite()) && self.scale.iter().all(|s| *s != 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("degenerate feature transform {self:?}")))
        }
    }
}

impl Default for FeatureTransform {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
    /// Offset of this layer's input inside an activation record.
    input: usize,
}

/// Gradient carrier aligned with the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub d_theta: Vec<f64>,
}

impl Gradient {
    pub fn zeros(len: usize) -> Self {
        Self { d_theta: vec![0.0; len] }
    }

    pub fn norm(&self) -> f64 {
        self.d_theta.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Activations of one forward evaluation, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationCache {
    topology: NetTopology,
    record: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "SerializedNet", into = "SerializedNet")]
pub struct PolicyNetwork {
    topology: NetTopology,
    theta: Vec<f64>,
    features: FeatureTransform,
    layers: Vec<Layer>,
}

impl PartialEq for PolicyNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.topology == other.topology && self.theta == other.theta && self.features == other.features
    }
}

#[derive(Serialize, Deserialize)]
struct SerializedNet {
    topology: NetTopology,
    features: FeatureTransform,
    theta: Vec<f64>,
}

impl TryFrom<SerializedNet> for PolicyNetwork {
    type Error = Error;
    fn try_from(s: SerializedNet) -> Result<Self> {
        PolicyNetwork::from_parts(s.topology, s.theta, s.features)
    }
}

impl From<PolicyNetwork> for SerializedNet {
    fn from(n: PolicyNetwork) -> Self {
        SerializedNet { topology: n.topology, features: n.features, theta: n.theta }
    }
}

#[inline]
fn sigmoid(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

impl PolicyNetwork {
    pub fn from_parts(topology: NetTopology, theta: Vec<f64>, features: FeatureTransform) -> Result<Self> {
        topology.validate()?;
        features.validate()?;
        if topology.n_features != 2 {
            return Err(Error::InvalidParameter(format!(
                "policy features are (t, W); got n_features = {}",
                topology.n_features
            )));
        }
        if theta.len() != topology.param_count() {
            return Err(Error::InvalidParameter(format!(
                "theta has {} entries, topology needs {}",
                theta.len(),
                topology.param_count()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("theta contains non-finite values".into()));
        }
        let mut layers = Vec::new();
        let (mut off, mut input) = (0, 0);
        for (fan_in, fan_out) in topology.layer_dims() {
            layers.push(Layer { w: off, b: off + fan_in * fan_out, fan_in, fan_out, input });
            off += fan_in * fan_out + fan_out;
            input += fan_in;
        }
        Ok(Self { topology, theta, features, layers })
    }

    pub fn zeros(topology: NetTopology) -> Result<Self> {
        Self::from_parts(topology, vec![0.0; topology.param_count()], FeatureTransform::identity())
    }

    /// Uniform fan-based weights on `±sqrt(6 / (fan_in + fan_out))`, zero
    /// biases, identity feature transform.
    pub fn init(topology: NetTopology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut theta = vec![0.0; topology.param_count()];
        let mut rng = rng::stream(seed, 0);
        let mut off = 0;
        for (fan_in, fan_out) in topology.layer_dims() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut theta[off..off + fan_in * fan_out] {
                *w = rng.random_range(-limit..limit);
            }
            off += fan_in * fan_out + fan_out;
        }
        Self::from_parts(topology, theta, FeatureTransform::identity())
    }

    pub fn with_features(mut self, features: FeatureTransform) -> Result<Self> {
        features.validate()?;
        self.features = features;
        Ok(self)
    }

    pub fn topology(&self) -> NetTopology {
        self.topology
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn features(&self) -> &FeatureTransform {
        &self.features
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::InvalidParameter("theta length mismatch".into()));
        }
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    pub fn n_assets(&self) -> usize {
        self.topology.n_assets
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Evaluates the policy at `(t, wealth)`.
    pub fn forward(&self, t: f64, wealth: f64) -> Result<(Vec<f64>, ActivationCache)> {
        let mut record = vec![0.0; self.topology.record_len()];
        self.forward_into(t, wealth, &mut record)?;
        let weights = self.output(&record).to_vec();
        Ok((weights, ActivationCache { topology: self.topology, record }))
    }

    /// Portfolio weights only.
    pub fn weights(&self, t: f64, wealth: f64) -> Result<Vec<f64>> {
        Ok(self.forward(t, wealth)?.0)
    }

    /// The output weights stored at the tail of an activation record.
    #[inline]
    pub fn output<'a>(&self, record: &'a [f64]) -> &'a [f64] {
        &record[record.len() - self.topology.n_assets..]
    }

    /// Forward pass writing every activation into `record`
    /// (length `topology.record_len()`).
    pub fn forward_into(&self, t: f64, wealth: f64, record: &mut [f64]) -> Result<()> {
        if !(t.is_finite() && wealth.is_finite()) {
            return Err(Error::InvalidFeature { t, wealth });
        }
        debug_assert_eq!(record.len(), self.topology.record_len());
        let f = &self.features;
        record[0] = (t - f.offset[0]) / f.scale[0];
        record[1] = (wealth - f.offset[1]) / f.scale[1];
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (inp, out) = record[layer.input..].split_at_mut(layer.fan_in);
            let out = &mut out[..layer.fan_out];
            let w = &self.theta[layer.w..layer.b];
            let b = &self.theta[layer.b..layer.b + layer.fan_out];
            for (k, o) in out.iter_mut().enumerate() {
                let row = &w[k * layer.fan_in..(k + 1) * layer.fan_in];
                let mut z = b[k];
                for (wi, xi) in row.iter().zip(inp.iter()) {
                    z += wi * xi;
                }
                *o = z;
            }
            if l < last {
                for o in out.iter_mut() {
                    *o = sigmoid(*o);
                }
            } else {
                let max = out.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for o in out.iter_mut() {
                    *o = (*o - max).exp();
                    sum += *o;
                }
                for o in out.iter_mut() {
                    *o /= sum;
                }
            }
        }
        Ok(())
    }

    pub fn backward(&self, cache: &ActivationCache, d_weights: &[f64]) -> Result<(Gradient, f64)> {
        if cache.topology != self.topology || cache.record.len() != self.topology.record_len() {
            return Err(Error::StaleCache("activation record was produced by a different topology".into()));
        }
        if d_weights.len() != self.topology.n_assets {
            return Err(Error::StaleCache(format!(
                "cotangent has {} entries for {} assets",
                d_weights.len(),
                self.topology.n_assets
            )));
        }
        let mut grad = Gradient::zeros(self.theta.len());
        let mut scratch = vec![0.0; self.scratch_len()];
        let d_wealth = self.backward_into(&cache.record, d_weights, &mut grad.d_theta, &mut scratch);
        Ok((grad, d_wealth))
    }

    pub fn scratch_len(&self) -> usize {
        2 * self.topology.hidden_width.max(self.topology.n_assets).max(self.topology.n_features)
    }

    /// Reverse pass for the scalar `d_weights . weights`: accumulates
    /// `d/dtheta` into `grad` and returns `d/dwealth`. `scratch` must hold
    /// `scratch_len()` values.
    pub fn backward_into(&self, record: &[f64], d_weights: &[f64], grad: &mut [f64], scratch: &mut [f64]) -> f64 {
        let width = scratch.len() / 2;
        let (dz, da) = scratch.split_at_mut(width);
        let out = self.layers.last().unwrap();
        let p = &record[out.input + out.fan_in..out.input + out.fan_in + out.fan_out];
        // p_k * sum_j p_j (d_k - d_j): exactly zero for a constant cotangent,
        // where the usual d_k - p.d leaves rounding noise that Adam amplifies
        for k in 0..out.fan_out {
            let s: f64 = p.iter().zip(d_weights).map(|(pj, dj)| pj * (d_weights[k] - dj)).sum();
            dz[k] = p[k] * s;
        }
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let inp = &record[layer.input..layer.input + layer.fan_in];
            let w = &self.theta[layer.w..layer.b];
            let (gw, gb) = grad[layer.w..layer.b + layer.fan_out].split_at_mut(layer.fan_in * layer.fan_out);
            da[..layer.fan_in].iter_mut().for_each(|v| *v = 0.0);
            for k in 0..layer.fan_out {
                let d = dz[k];
                if d == 0.0 {
                    continue;
                }
                gb[k] += d;
                let row = k * layer.fan_in;
                for j in 0..layer.fan_in {
                    gw[row + j] += d * inp[j];
                    da[j] += w[row + j] * d;
                }
            }
            if l > 0 {
                for j in 0..layer.fan_in {
                    let a = inp[j];
                    dz[j] = da[j] * a * (1.0 - a);
                }
            }
        }
        // da now holds d/dx at the scaled input; only the wealth channel is kept.
        da[1] / self.features.scale[1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn topo(layers: usize, width: usize, assets: usize) -> NetTopology {
        NetTopology::new(layers, width, assets).unwrap()
    }

    #[test]
    fn zero_theta_is_uniform() {
        let net = PolicyNetwork::zeros(topo(2, 4, 5)).unwrap();
        let (w, _) = net.forward(0.3, 250.0).unwrap();
        for v in w {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_single_hidden_unit() {
        // layout: w1 (1x2), b1 (1), w2 (2x1), b2 (2)
        let t = topo(1, 1, 2);
        let theta = vec![1.0, 1.0, 0.0, 2.0, -1.0, 0.5, 0.0];
        let net = PolicyNetwork::from_parts(t, theta, FeatureTransform::identity()).unwrap();
        let (w, cache) = net.forward(0.0, 1.0).unwrap();
        let h = 0.731_058_578_630_004_9_f64;
        assert!((cache.record[2] - h).abs() < 1e-15);
        let (l0, l1) = (2.0 * h + 0.5, -h);
        let p0 = 1.0 / (1.0 + (l1 - l0).exp());
        assert!((w[0] - p0).abs() < 1e-15);
        assert!((w[0] - 0.936_622_756_748_717).abs() < 1e-12);
        assert!((w[0] + w[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_finite_feature_rejected() {
        let net = PolicyNetwork::zeros(topo(1, 3, 2)).unwrap();
        assert!(matches!(net.forward(f64::NAN, 1.0), Err(Error::InvalidFeature { .. })));
        assert!(matches!(net.forward(0.0, f64::INFINITY), Err(Error::InvalidFeature { .. })));
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let net = PolicyNetwork::init(topo(2, 5, 3), 4).unwrap();
        let (_, cache) = net.forward(0.5, 1.2).unwrap();
        let (g, dw) = net.backward(&cache, &[0.0; 3]).unwrap();
        assert!(g.d_theta.iter().all(|v| *v == 0.0));
        assert_eq!(dw, 0.0);
    }

    #[test]
    fn output_bias_gradient_at_uniform_point() {
        let n = 4;
        let net = PolicyNetwork::zeros(topo(1, 3, n)).unwrap();
        let (_, cache) = net.forward(0.1, 0.9).unwrap();
        let dims = net.topology().layer_dims();
        let bias_off = net.topology().param_count() - n;
        assert_eq!(dims.last().unwrap().1, n);
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let (g, _) = net.backward(&cache, &e).unwrap();
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                let expect = (delta - 1.0 / n as f64) / n as f64;
                assert!((g.d_theta[bias_off + j] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stale_cache_detected() {
        let a = PolicyNetwork::zeros(topo(1, 3, 2)).unwrap();
        let b = PolicyNetwork::zeros(topo(1, 4, 2)).unwrap();
        let (_, cache) = a.forward(0.0, 1.0).unwrap();
        assert!(matches!(b.backward(&cache, &[1.0, 0.0]), Err(Error::StaleCache(_))));
    }

    #[test]
    fn init_is_deterministic_and_centered() {
        let t = topo(2, 8, 5);
        let a = PolicyNetwork::init(t, 42).unwrap();
        assert_eq!(a, PolicyNetwork::init(t, 42).unwrap());
        assert_ne!(a, PolicyNetwork::init(t, 43).unwrap());
        // biases are zero
        let mut off = 0;
        for (i, o) in t.layer_dims() {
            assert!(a.theta()[off + i * o..off + i * o + o].iter().all(|b| *b == 0.0));
            off += i * o + o;
        }
    }

    #[test]
    fn init_weights_sample_mean() {
        // 10^5 weights from a wide single layer; U(-a, a) has sd a / sqrt(3).
        let t = NetTopology { n_features: 2, hidden_layers: 1, hidden_width: 50_000, n_assets: 2 };
        let net = PolicyNetwork::init(t, 7).unwrap();
        let w = &net.theta()[..100_000];
        let a = (6.0f64 / 50_002.0).sqrt();
        let se = a / 3f64.sqrt() / (w.len() as f64).sqrt();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 3.0 * se, "mean {mean}, se {se}");
        assert!(w.iter().all(|v| v.abs() <= a));
    }

    #[test]
    fn json_round_trip() {
        let net = PolicyNetwork::init(topo(2, 3, 2), 1)
            .unwrap()
            .with_features(FeatureTransform::scaled(5.0, 1000.0))
            .unwrap();
        let back = PolicyNetwork::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        assert!(PolicyNetwork::from_json(r#"{"topology":{"n_features":2,"hidden_layers":1,"hidden_width":1,"n_assets":2},"features":{"offset":[0,0],"scale":[1,1]},"theta":[1]}"#).is_err());
    }
}
