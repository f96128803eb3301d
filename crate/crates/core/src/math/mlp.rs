//! Dense multilayer perceptron with exact backpropagation.
//!
//! Layers compute `a = act(W a_prev + b)` with `W` stored as `out x in`.
//! Hidden layers use a configurable activation; the output layer is always
//! the identity. Forward passes operate on batches (one sample per row) and
//! keep every layer's activation so the backward pass is exact.
//!
//! # Text format
//!
//! ```text
//! tidal-mlp 1
//! dims 4 8 3
//! act tanh identity
//! w0 <out*in values, row-major>
//! b0 <out values>
//! w1 ...
//! b1 ...
//! end
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` bit-exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, Result, TidalError};
use crate::math::matrix::{axpy, dot};
use crate::math::{Matrix, SeededRng};

const FORMAT_TAG: &str = "tidal-mlp";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(TidalError::Parse(format!(
                "unknown activation tag '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activations: Vec<Activation>,
}

/// Per-layer activations of a batch forward pass; `layers[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<Matrix>,
}

impl ForwardCache {
    pub fn output(&self) -> &Matrix {
        self.layers.last().expect("cache holds at least the input")
    }

    /// Activation after layer `idx` (0 is the input).
    pub fn activation(&self, idx: usize) -> &Matrix {
        &self.layers[idx]
    }

    pub fn batch_size(&self) -> usize {
        self.layers[0].rows()
    }
}

/// Parameter-shaped container used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.as_slice().len())
            .sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn get(&self, idx: usize) -> f64 {
        let mut i = idx;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let n = w.as_slice().len();
            if i < n {
                return w.as_slice()[i];
            }
            i -= n;
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_scaled(b, 1.0);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            axpy(a, 1.0, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.weights {
            w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        let w: f64 = self
            .weights
            .iter()
            .map(|w| w.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum();
        let b: f64 = self
            .biases
            .iter()
            .map(|b| b.iter().map(|v| v * v).sum::<f64>())
            .sum();
        (w + b).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.weights.len() == net.weights.len()
            && self
                .weights
                .iter()
                .zip(&net.weights)
                .all(|(a, b)| a.shape() == b.shape())
            && self
                .biases
                .iter()
                .zip(&net.biases)
                .all(|(a, b)| a.len() == b.len())
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub grads: Gradients,
    /// Loss gradient with respect to the network input, one row per sample.
    pub input_grad: Matrix,
}

impl Mlp {
    /// Network with LeCun-normal weights and zero biases.
    pub fn new(dims: &[usize], hidden: Activation, rng: &mut SeededRng) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden)?;
        for w in &mut net.weights {
            let std = (1.0 / w.cols() as f64).sqrt();
            w.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = std * rng.gaussian());
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], hidden: Activation) -> Result<Self> {
        if dims.len() < 3 {
            return Err(config_err(format!(
                "an MLP needs at least one hidden layer, got dims {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(config_err(format!("layer dims must be positive: {dims:?}")));
        }
        let layers = dims.len() - 1;
        let weights = (0..layers)
            .map(|l| Matrix::zeros(dims[l + 1], dims[l]))
            .collect();
        let biases = (0..layers).map(|l| vec![0.0; dims[l + 1]]).collect();
        let mut activations = vec![hidden; layers];
        activations[layers - 1] = Activation::Identity;
        Ok(Self {
            dims: dims.to_vec(),
            weights,
            biases,
            activations,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weights(&self, layer: usize) -> &Matrix {
        &self.weights[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut Matrix {
        &mut self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .map(|w| w.as_slice().len())
            .sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    fn param_slot(&mut self, idx: usize) -> &mut f64 {
        let mut i = idx;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.as_slice().len();
            if i < n {
                return &mut w.as_mut_slice()[i];
            }
            i -= n;
            if i < b.len() {
                return &mut b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    /// Flat parameter access in (w0, b0, w1, b1, ...) order.
    pub fn param(&self, idx: usize) -> f64 {
        let mut i = idx;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            let n = w.as_slice().len();
            if i < n {
                return w.as_slice()[i];
            }
            i -= n;
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {idx} out of range");
    }

    pub fn set_param(&mut self, idx: usize, v: f64) {
        *self.param_slot(idx) = v;
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(Matrix::is_finite)
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        let batch = Matrix::from_vec(1, input.len(), input.to_vec())?;
        let cache = self.forward_batch(&batch)?;
        Ok((cache.output().row(0).to_vec(), cache))
    }

    /// Forward pass over a batch (one sample per row).
    pub fn forward_batch(&self, inputs: &Matrix) -> Result<ForwardCache> {
        if inputs.cols() != self.input_dim() {
            return Err(config_err(format!(
                "input width {} does not match network input {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let batch = inputs.rows();
        let mut layers = Vec::with_capacity(self.weights.len() + 1);
        layers.push(inputs.clone());
        for l in 0..self.weights.len() {
            let w = &self.weights[l];
            let b = &self.biases[l];
            let act = self.activations[l];
            let prev = &layers[l];
            let mut out = Matrix::zeros(batch, w.rows());
            for r in 0..batch {
                let x = prev.row(r);
                let o = out.row_mut(r);
                for (j, oj) in o.iter_mut().enumerate() {
                    *oj = act.apply(dot(w.row(j), x) + b[j]);
                }
            }
            layers.push(out);
        }
        Ok(ForwardCache { layers })
    }

    /// Backpropagates `output_grad` (batch x output_dim) through the cached
    /// forward pass. Gradients are summed over the batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Matrix) -> Result<Backprop> {
        self.backward_tapped(cache, output_grad, &[])
    }

    /// Like [`Mlp::backward`], with extra gradients `(idx, dL/da_idx)` added
    /// at hidden activations (`idx` as in [`ForwardCache::activation`]).
    pub fn backward_tapped(
        &self,
        cache: &ForwardCache,
        output_grad: &Matrix,
        taps: &[(usize, &Matrix)],
    ) -> Result<Backprop> {
        if cache.layers.len() != self.weights.len() + 1
            || cache
                .layers
                .iter()
                .zip(&self.dims)
                .any(|(m, &d)| m.cols() != d)
        {
            return Err(config_err("forward cache does not match network shape"));
        }
        let batch = cache.batch_size();
        if output_grad.shape() != (batch, self.output_dim()) {
            return Err(config_err(format!(
                "output gradient shape {:?} does not match ({}, {})",
                output_grad.shape(),
                batch,
                self.output_dim()
            )));
        }
        for &(idx, g) in taps {
            if idx == 0 || idx >= self.dims.len() || g.shape() != (batch, self.dims[idx]) {
                return Err(config_err(format!("bad gradient tap at activation {idx}")));
            }
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = output_grad.clone();
        for l in (0..self.weights.len()).rev() {
            for &(idx, g) in taps {
                if idx == l + 1 {
                    delta.add_scaled(g, 1.0);
                }
            }
            let act = self.activations[l];
            let out = &cache.layers[l + 1];
            // delta <- dL/dz
            for (d, a) in delta.as_mut_slice().iter_mut().zip(out.as_slice()) {
                *d *= act.derivative_from_output(*a);
            }
            let prev = &cache.layers[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for r in 0..batch {
                let dz = delta.row(r);
                let x = prev.row(r);
                for (j, &dzj) in dz.iter().enumerate() {
                    if dzj != 0.0 {
                        axpy(gw.row_mut(j), dzj, x);
                    }
                    gb[j] += dzj;
                }
            }
            let w = &self.weights[l];
            let mut prev_delta = Matrix::zeros(batch, w.cols());
            for r in 0..batch {
                let dz = delta.row(r);
                let pd = prev_delta.row_mut(r);
                for (j, &dzj) in dz.iter().enumerate() {
                    if dzj != 0.0 {
                        axpy(pd, dzj, w.row(j));
                    }
                }
            }
            delta = prev_delta;
        }
        Ok(Backprop {
            grads,
            input_grad: delta,
        })
    }

    /// Applies `params -= step` elementwise, where `step` is parameter shaped.
    pub(crate) fn apply_update(&mut self, step: &Gradients) -> Result<()> {
        if !step.matches(self) {
            return Err(config_err("update shape does not match network"));
        }
        for (w, s) in self.weights.iter_mut().zip(&step.weights) {
            w.add_scaled(s, -1.0);
        }
        for (b, s) in self.biases.iter_mut().zip(&step.biases) {
            axpy(b, -1.0, s);
        }
        Ok(())
    }

    pub(crate) fn check_grads(&self, grads: &Gradients) -> Result<()> {
        if grads.matches(self) {
            Ok(())
        } else {
            Err(config_err("gradient shape does not match network"))
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{FORMAT_TAG} {FORMAT_VERSION}");
        let dims: Vec<String> = self.dims.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "dims {}", dims.join(" "));
        let acts: Vec<&str> = self.activations.iter().map(|a| a.tag()).collect();
        let _ = writeln!(s, "act {}", acts.join(" "));
        for l in 0..self.weights.len() {
            write_values(&mut s, &format!("w{l}"), self.weights[l].as_slice());
            write_values(&mut s, &format!("b{l}"), &self.biases[l]);
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| parse_err("empty network text"))?;
        let mut head = header.split_whitespace();
        if head.next() != Some(FORMAT_TAG) {
            return Err(parse_err("missing tidal-mlp header"));
        }
        let version: u32 = head
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| parse_err("missing format version"))?;
        if version != FORMAT_VERSION {
            return Err(parse_err(format!("unsupported format version {version}")));
        }
        let dims_line = lines.next().ok_or_else(|| parse_err("missing dims line"))?;
        let dims: Vec<usize> = parse_tagged(dims_line, "dims")?
            .iter()
            .map(|t| t.parse().map_err(|_| parse_err(format!("bad dim '{t}'"))))
            .collect::<Result<_>>()?;
        let act_line = lines.next().ok_or_else(|| parse_err("missing act line"))?;
        let acts: Vec<Activation> = parse_tagged(act_line, "act")?
            .iter()
            .map(|t| Activation::from_tag(t))
            .collect::<Result<_>>()?;
        let mut net = Mlp::zeros(&dims, Activation::Tanh)?;
        if acts.len() != net.num_layers() {
            return Err(parse_err("activation count does not match layer count"));
        }
        net.activations = acts;
        for l in 0..net.num_layers() {
            let wl = lines.next().ok_or_else(|| parse_err("truncated weights"))?;
            let vals = parse_values(wl, &format!("w{l}"))?;
            if vals.len() != net.weights[l].as_slice().len() {
                return Err(parse_err(format!("w{l} has wrong length")));
            }
            net.weights[l].as_mut_slice().copy_from_slice(&vals);
            let bl = lines.next().ok_or_else(|| parse_err("truncated biases"))?;
            let vals = parse_values(bl, &format!("b{l}"))?;
            if vals.len() != net.biases[l].len() {
                return Err(parse_err(format!("b{l} has wrong length")));
            }
            net.biases[l].copy_from_slice(&vals);
        }
        if lines.next().map(str::trim) != Some("end") {
            return Err(parse_err("missing end marker"));
        }
        Ok(net)
    }

    /// SHA-256 over the text serialization, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn parse_err(msg: impl Into<String>) -> TidalError {
    TidalError::Parse(msg.into())
}

fn write_values(s: &mut String, tag: &str, vals: &[f64]) {
    s.push_str(tag);
    for v in vals {
        let _ = write!(s, " {v:.16e}");
    }
    s.push('\n');
}

fn parse_tagged<'a>(line: &'a str, tag: &str) -> Result<Vec<&'a str>> {
    let mut it = line.split_whitespace();
    if it.next() != Some(tag) {
        return Err(parse_err(format!("expected '{tag}' line")));
    }
    Ok(it.collect())
}

fn parse_values(line: &str, tag: &str) -> Result<Vec<f64>> {
    parse_tagged(line, tag)?
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| parse_err(format!("bad value '{t}' in {tag}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(dims: &[usize], seed: u64) -> Mlp {
        let mut rng = SeededRng::new(seed);
        let mut net = Mlp::new(dims, Activation::Tanh, &mut rng).unwrap();
        for l in 0..net.num_layers() {
            for b in net.biases_mut(l) {
                *b = 0.3 * rng.gaussian();
            }
        }
        net
    }

    #[test]
    fn zero_weight_net_outputs_last_bias() {
        let mut net = Mlp::zeros(&[3, 5, 2], Activation::Tanh).unwrap();
        net.biases_mut(1).copy_from_slice(&[0.25, -1.5]);
        net.biases_mut(0).iter_mut().for_each(|b| *b = 0.7);
        let (out, _) = net.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.25, -1.5]);
    }

    #[test]
    fn unit_tanh_net_at_zero_is_zero() {
        let mut net = Mlp::zeros(&[1, 1, 1], Activation::Tanh).unwrap();
        net.weights_mut(0).set(0, 0, 1.0);
        net.weights_mut(1).set(0, 0, 1.0);
        let (out, _) = net.forward(&[0.0]).unwrap();
        assert_eq!(out, vec![0.0]);
    }

    #[test]
    fn forward_matches_hand_written_arithmetic() {
        let net = random_net(&[4, 8, 3], 11);
        let x = [0.3, -0.7, 1.1, 0.05];
        // Independent evaluation with explicit nested loops.
        let mut hidden = [0.0; 8];
        for (j, h) in hidden.iter_mut().enumerate() {
            let mut z = net.biases(0)[j];
            for (i, xi) in x.iter().enumerate() {
                z += net.weights(0).get(j, i) * xi;
            }
            *h = z.tanh();
        }
        let mut expected = [0.0; 3];
        for (k, e) in expected.iter_mut().enumerate() {
            let mut z = net.biases(1)[k];
            for (j, h) in hidden.iter().enumerate() {
                z += net.weights(1).get(k, j) * h;
            }
            *e = z;
        }
        let (out, _) = net.forward(&x).unwrap();
        for (o, e) in out.iter().zip(&expected) {
            assert!((o - e).abs() < 1e-14, "{o} vs {e}");
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let net = random_net(&[4, 8, 3], 1);
        assert!(matches!(net.forward(&[1.0; 3]), Err(TidalError::Config(_))));
    }

    #[test]
    fn backward_rejects_mismatched_shapes() {
        let net = random_net(&[4, 8, 3], 1);
        let (_, cache) = net.forward(&[0.1; 4]).unwrap();
        assert!(net.backward(&cache, &Matrix::zeros(1, 2)).is_err());
        let other = random_net(&[5, 8, 3], 1);
        assert!(other.backward(&cache, &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn zero_output_grad_gives_zero_gradients() {
        let net = random_net(&[4, 8, 3], 2);
        let (_, cache) = net.forward(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let bp = net.backward(&cache, &Matrix::zeros(1, 3)).unwrap();
        assert_eq!(bp.grads.norm(), 0.0);
        assert!(bp.input_grad.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_chain_rule() {
        // Identity hidden layer makes the net y = w1 * (w0 * x).
        let mut net = Mlp::zeros(&[1, 1, 1], Activation::Identity).unwrap();
        net.weights_mut(0).set(0, 0, 1.0);
        net.weights_mut(1).set(0, 0, 2.5);
        let x = 0.8;
        let (_, cache) = net.forward(&[x]).unwrap();
        let bp = net
            .backward(&cache, &Matrix::from_vec(1, 1, vec![1.0]).unwrap())
            .unwrap();
        // dy/dw0 = w1 * x, dy/dw1 = w0 * x
        assert!((bp.grads.weights[0].get(0, 0) - 2.5 * x).abs() < 1e-15);
        assert!((bp.grads.weights[1].get(0, 0) - x).abs() < 1e-15);
    }

    fn loss_of(net: &Mlp, x: &[f64], target: &[f64]) -> f64 {
        let (y, _) = net.forward(x).unwrap();
        0.5 * y
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale < 1e-8 {
            (a - b).abs()
        } else {
            (a - b).abs() / scale
        }
    }

    fn check_fd(dims: &[usize], act: Activation, seed: u64) {
        let mut rng = SeededRng::new(seed);
        let mut net = Mlp::new(dims, act, &mut rng).unwrap();
        for l in 0..net.num_layers() {
            for b in net.biases_mut(l) {
                *b = 0.2 * rng.gaussian();
            }
        }
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.gaussian()).collect();
        let target: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.gaussian()).collect();
        let (y, cache) = net.forward(&x).unwrap();
        let g: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        let bp = net
            .backward(&cache, &Matrix::from_vec(1, g.len(), g).unwrap())
            .unwrap();
        let h = 1e-5;
        for _ in 0..100 {
            let idx = rng.index(net.param_count());
            let orig = net.param(idx);
            net.set_param(idx, orig + h);
            let lp = loss_of(&net, &x, &target);
            net.set_param(idx, orig - h);
            let lm = loss_of(&net, &x, &target);
            net.set_param(idx, orig);
            let fd = (lp - lm) / (2.0 * h);
            let an = bp.grads.get(idx);
            assert!(
                rel_err(an, fd) < 1e-4,
                "param {idx}: analytic {an} vs fd {fd}"
            );
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        check_fd(&[5, 16, 5], Activation::Tanh, 21);
        check_fd(&[4, 8, 8, 3], Activation::Tanh, 22);
        check_fd(&[6, 10, 2], Activation::Relu, 23);
    }

    #[test]
    fn batch_gradient_is_sum_of_singles() {
        let net = random_net(&[3, 6, 2], 5);
        let xs = Matrix::from_vec(2, 3, vec![0.1, -0.2, 0.5, 1.0, 0.3, -0.4]).unwrap();
        let gy = Matrix::from_vec(2, 2, vec![1.0, -0.5, 0.2, 0.7]).unwrap();
        let cache = net.forward_batch(&xs).unwrap();
        let full = net.backward(&cache, &gy).unwrap();
        let mut summed = Gradients::zeros_like(&net);
        for r in 0..2 {
            let (_, c) = net.forward(xs.row(r)).unwrap();
            let g = Matrix::from_vec(1, 2, gy.row(r).to_vec()).unwrap();
            summed.add_assign(&net.backward(&c, &g).unwrap().grads);
        }
        for i in 0..net.param_count() {
            assert!((full.grads.get(i) - summed.get(i)).abs() < 1e-14);
        }
    }

    #[test]
    fn text_round_trip_is_bit_exact() {
        let mut net = random_net(&[7, 9, 4], 8);
        net.set_param(0, std::f64::consts::PI * 1e-300);
        net.set_param(1, -0.1 + 0.2);
        let text = net.to_text();
        let back = Mlp::from_text(&text).unwrap();
        assert_eq!(back.dims(), net.dims());
        assert_eq!(back.activations(), net.activations());
        for i in 0..net.param_count() {
            assert_eq!(back.param(i).to_bits(), net.param(i).to_bits());
        }
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn from_text_rejects_corruption() {
        let net = random_net(&[2, 3, 1], 0);
        let text = net.to_text();
        assert!(Mlp::from_text(&text.replace("tidal-mlp 1", "tidal-mlp 9")).is_err());
        assert!(Mlp::from_text(&text.replace("end", "")).is_err());
        assert!(Mlp::from_text(&text.replace("tanh", "gelu")).is_err());
        assert!(Mlp::zeros(&[3, 2], Activation::Tanh).is_err());
    }
}
