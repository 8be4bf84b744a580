//! Dense feed-forward networks with hand-written backprop.
//!
//! Parameters live in one flat [`ParamVector`]. The layout is per layer,
//! weights row-major (`[output_dim][input_dim]`) followed by the biases.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{config, numeric, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and the activated value `y`.
    /// ReLU uses 0 at exactly 0.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Identity),
            t => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            other => config(format!("unknown activation `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self { input_dim, output_dim, activation }
    }

    pub fn param_count(&self) -> usize {
        self.input_dim * self.output_dim + self.output_dim
    }
}

/// Builds the layer list for an MLP with the given hidden widths and a linear output layer.
pub fn mlp_layers(
    input_dim: usize,
    hidden: &[(usize, Activation)],
    output_dim: usize,
) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &(width, act) in hidden {
        layers.push(LayerSpec::new(prev, width, act));
        prev = width;
    }
    layers.push(LayerSpec::new(prev, output_dim, Activation::Identity));
    layers
}

/// Flat parameter (or gradient) vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.0.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }
}

/// Per-layer values recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<LayerSpec>,
    params: ParamVector,
}

impl Mlp {
    /// Creates a network with all-zero parameters.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self> {
        validate_layers(&layers)?;
        let n = layers.iter().map(LayerSpec::param_count).sum();
        Ok(Self { layers, params: ParamVector::zeros(n) })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        let mut offset = 0;
        for layer in &net.layers {
            let limit = (6.0 / (layer.input_dim + layer.output_dim) as f64).sqrt();
            let nw = layer.input_dim * layer.output_dim;
            for w in &mut net.params.0[offset..offset + nw] {
                *w = rng.random_range(-limit..=limit);
            }
            offset += layer.param_count();
        }
        Ok(net)
    }

    pub fn from_params(layers: Vec<LayerSpec>, params: ParamVector) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        net.set_params(params)?;
        Ok(net)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return config(format!(
                "parameter length {} does not match network size {}",
                params.len(),
                self.params.len()
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return config(format!(
                "input length {} does not match network input dim {}",
                input.len(),
                self.input_dim()
            ));
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            post: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.to_vec();
        let mut offset = 0;
        for layer in &self.layers {
            let (w, b) = self.layer_slices(offset, layer);
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * layer.input_dim..(o + 1) * layer.input_dim];
                *zo += row.iter().zip(&x).map(|(wi, xi)| wi * xi).sum::<f64>();
            }
            let y: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            cache.inputs.push(std::mem::replace(&mut x, y.clone()));
            cache.pre.push(z);
            cache.post.push(y);
            offset += layer.param_count();
        }
        Ok((x, cache))
    }

    /// Output only, without keeping a cache.
    pub fn eval(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input).map(|(y, _)| y)
    }

    /// Gradient of the loss with respect to the parameters, given the gradient
    /// with respect to the network output.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64]) -> Result<ParamVector> {
        if cache.pre.len() != self.layers.len() {
            return config("forward cache does not match network depth");
        }
        if output_grad.len() != self.output_dim() {
            return config(format!(
                "output gradient length {} does not match network output dim {}",
                output_grad.len(),
                self.output_dim()
            ));
        }
        let mut grad = ParamVector::zeros(self.params.len());
        let offsets = self.layer_offsets();
        let mut upstream = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre[l];
            let post = &cache.post[l];
            let input = &cache.inputs[l];
            if pre.len() != layer.output_dim || input.len() != layer.input_dim {
                return config(format!("forward cache shape mismatch at layer {l}"));
            }
            let delta: Vec<f64> = upstream
                .iter()
                .zip(pre.iter().zip(post))
                .map(|(g, (&z, &y))| g * layer.activation.derivative(z, y))
                .collect();
            let off = offsets[l];
            let nw = layer.input_dim * layer.output_dim;
            {
                let g = &mut grad.0[off..off + layer.param_count()];
                let (gw, gb) = g.split_at_mut(nw);
                for (o, &d) in delta.iter().enumerate() {
                    let row = &mut gw[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (gwi, xi) in row.iter_mut().zip(input) {
                        *gwi = d * xi;
                    }
                    gb[o] = d;
                }
            }
            if l > 0 {
                let (w, _) = self.layer_slices(off, layer);
                let mut next = vec![0.0; layer.input_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &w[o * layer.input_dim..(o + 1) * layer.input_dim];
                    for (n, wi) in next.iter_mut().zip(row) {
                        *n += wi * d;
                    }
                }
                upstream = next;
            }
        }
        Ok(grad)
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.layers.len());
        let mut o = 0;
        for l in &self.layers {
            offs.push(o);
            o += l.param_count();
        }
        offs
    }

    fn layer_slices(&self, offset: usize, layer: &LayerSpec) -> (&[f64], &[f64]) {
        let nw = layer.input_dim * layer.output_dim;
        let p = &self.params.0[offset..offset + layer.param_count()];
        p.split_at(nw)
    }

    /// Writes the binary snapshot: magic `FHPD`, version, layer table, then
    /// the little-endian f64 payload.
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for l in &self.layers {
            w.write_all(&(l.input_dim as u32).to_le_bytes())?;
            w.write_all(&(l.output_dim as u32).to_le_bytes())?;
            w.write_all(&[l.activation.tag()])?;
        }
        for v in &self.params.0 {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads exactly one network snapshot from `r`, leaving any trailing bytes unread.
    pub fn read_snapshot<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad snapshot magic".into()));
        }
        let version = read_u32(r)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported snapshot version {version}")));
        }
        let count = read_u32(r)? as usize;
        if count == 0 || count > 1024 {
            return Err(Error::Format(format!("implausible layer count {count}")));
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let input_dim = read_u32(r)? as usize;
            let output_dim = read_u32(r)? as usize;
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag)?;
            layers.push(LayerSpec::new(input_dim, output_dim, Activation::from_tag(tag[0])?));
        }
        let mut net = Mlp::zeros(layers).map_err(|e| Error::Format(e.to_string()))?;
        for v in net.params.0.iter_mut() {
            *v = read_f64(r)?;
        }
        if !net.params.is_finite() {
            return Err(Error::Format("snapshot contains non-finite parameters".into()));
        }
        Ok(net)
    }
}

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"FHPD";
pub const SNAPSHOT_VERSION: u32 = 1;

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn validate_layers(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return config("network needs at least one layer");
    }
    for (i, l) in layers.iter().enumerate() {
        if l.input_dim == 0 || l.output_dim == 0 {
            return config(format!("layer {i} has a zero dimension"));
        }
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].output_dim != pair[1].input_dim {
            return config(format!(
                "layer {} output dim {} does not match layer {} input dim {}",
                i,
                pair[0].output_dim,
                i + 1,
                pair[1].input_dim
            ));
        }
    }
    Ok(())
}

/// Adam moments for one parameter vector. Always minimises: callers negate
/// the gradient for ascent.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step_count: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return config(format!(
                "adam shape mismatch: state {}, params {}, grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            ));
        }
        if let Some(i) = grad.0.iter().position(|g| !g.is_finite()) {
            return numeric(format!("non-finite gradient entry at index {i}"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad.0[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params.0[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        if !params.is_finite() {
            return numeric("adam update produced non-finite parameters");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, dims: &[usize], acts: &[Activation]) -> Mlp {
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(w, &a)| LayerSpec::new(w[0], w[1], a))
            .collect();
        let mut net = Mlp::glorot(layers, rng).unwrap();
        for p in net.params_mut().as_mut_slice() {
            *p += rng.random_range(-0.3..0.3);
        }
        net
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layers = vec![LayerSpec::new(2, 2, Activation::Identity)];
        let net = Mlp::from_params(layers, ParamVector(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0])).unwrap();
        assert_eq!(net.eval(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negative() {
        let layers = vec![LayerSpec::new(2, 1, Activation::Relu)];
        let net = Mlp::from_params(layers, ParamVector(vec![1.0, -1.0, 0.0])).unwrap();
        assert_eq!(net.eval(&[3.0, 5.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn two_layer_tanh_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = random_net(&mut rng, &[3, 2, 2], &[Activation::Tanh, Activation::Tanh]);
        let p = net.params().as_slice().to_vec();
        let x = [0.3, -1.2, 0.7];
        // layer 1: W1 (2x3) at p[0..6], b1 at p[6..8]; layer 2: W2 (2x2) at p[8..12], b2 at p[12..14]
        let h0 = (p[0] * x[0] + p[1] * x[1] + p[2] * x[2] + p[6]).tanh();
        let h1 = (p[3] * x[0] + p[4] * x[1] + p[5] * x[2] + p[7]).tanh();
        let y0 = (p[8] * h0 + p[9] * h1 + p[12]).tanh();
        let y1 = (p[10] * h0 + p[11] * h1 + p[13]).tanh();
        let out = net.eval(&x).unwrap();
        assert!((out[0] - y0).abs() < 1e-15);
        assert!((out[1] - y1).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatches_are_config_errors() {
        let bad = vec![LayerSpec::new(2, 3, Activation::Relu), LayerSpec::new(4, 1, Activation::Identity)];
        assert!(matches!(Mlp::zeros(bad), Err(Error::Config(_))));
        let net = Mlp::zeros(vec![LayerSpec::new(2, 1, Activation::Identity)]).unwrap();
        assert!(matches!(net.forward(&[1.0]), Err(Error::Config(_))));
        let (_, cache) = net.forward(&[1.0, 2.0]).unwrap();
        assert!(matches!(net.backward(&cache, &[1.0, 1.0]), Err(Error::Config(_))));
    }

    #[test]
    fn linear_layer_gradient_is_input() {
        let net = Mlp::from_params(
            vec![LayerSpec::new(3, 1, Activation::Identity)],
            ParamVector(vec![0.5, -0.25, 2.0, 0.1]),
        )
        .unwrap();
        let (_, cache) = net.forward(&[1.5, -2.0, 4.0]).unwrap();
        let g = net.backward(&cache, &[1.0]).unwrap();
        assert_eq!(g.0, vec![1.5, -2.0, 4.0, 1.0]);
    }

    #[test]
    fn zero_output_grad_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = random_net(&mut rng, &[4, 8, 3], &[Activation::Relu, Activation::Identity]);
        let (_, cache) = net.forward(&[0.1, 0.2, -0.3, 0.4]).unwrap();
        let g = net.backward(&cache, &[0.0, 0.0, 0.0]).unwrap();
        assert!(g.0.iter().all(|&v| v == 0.0));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
    }

    #[test]
    fn backward_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let archs: Vec<(Vec<usize>, Vec<Activation>)> = vec![
            (vec![4, 8, 2], vec![Activation::Tanh, Activation::Identity]),
            (vec![4, 6, 5, 2], vec![Activation::Relu, Activation::Tanh, Activation::Identity]),
            (vec![4, 4, 4, 4, 2], vec![Activation::Tanh; 3].into_iter().chain([Activation::Identity]).collect()),
            (vec![3, 5, 1], vec![Activation::Relu, Activation::Identity]),
        ];
        let h = 1e-5;
        let mut worst = 0.0f64;
        for case in 0..100 {
            let (dims, acts) = &archs[case % archs.len()];
            let net = random_net(&mut rng, dims, acts);
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
            let og: Vec<f64> = (0..*dims.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |n: &Mlp| -> f64 { n.eval(&x).unwrap().iter().zip(&og).map(|(y, g)| y * g).sum() };
            let (_, cache) = net.forward(&x).unwrap();
            let g = net.backward(&cache, &og).unwrap();
            for i in 0..net.param_count() {
                let mut plus = net.clone();
                plus.params_mut().0[i] += h;
                let mut minus = net.clone();
                minus.params_mut().0[i] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(g.0[i], fd));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn forward_is_bit_identical_on_repeat() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = random_net(&mut rng, &[4, 16, 2], &[Activation::Tanh, Activation::Identity]);
        let x = [0.01, -0.02, 0.03, 0.04];
        let a = net.eval(&x).unwrap();
        let b = net.eval(&x).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = random_net(&mut rng, &[4, 7, 3, 2], &[Activation::Relu, Activation::Tanh, Activation::Identity]);
        let mut buf = Vec::new();
        net.write_snapshot(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FHPD");
        let back = Mlp::read_snapshot(&mut buf.as_slice()).unwrap();
        assert_eq!(back, net);
        let x = [0.5, 0.25, -0.125, 1.0];
        assert_eq!(back.eval(&x).unwrap(), net.eval(&x).unwrap());
    }

    #[test]
    fn snapshot_rejects_bad_magic() {
        let buf = b"XXXX\x01\x00\x00\x00".to_vec();
        assert!(matches!(Mlp::read_snapshot(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    #[test]
    fn glorot_respects_bounds_and_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::glorot(vec![LayerSpec::new(4, 10, Activation::Relu)], &mut rng).unwrap();
        let limit = (6.0f64 / 14.0).sqrt();
        let p = net.params().as_slice();
        assert!(p[..40].iter().all(|w| w.abs() <= limit));
        assert!(p[40..].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = ParamVector(vec![1.0, -2.0]);
        let mut adam = Adam::new(2);
        adam.step(&mut p, &ParamVector::zeros(2), 1e-3).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0]);
        assert_eq!(adam.step_count, 1);
    }

    #[test]
    fn adam_moves_against_constant_gradient() {
        let mut p = ParamVector(vec![0.0, 0.0]);
        let mut adam = Adam::new(2);
        let g = ParamVector(vec![0.5, -3.0]);
        for _ in 0..50 {
            adam.step(&mut p, &g, 1e-2).unwrap();
        }
        assert!(p.0[0] < 0.0 && p.0[1] > 0.0);
    }

    #[test]
    fn adam_scalar_trace_matches_reference() {
        // Hand-rolled scalar Adam, written independently of the vector implementation.
        let grads = [0.3, -1.2, 0.7];
        let lr = 0.01;
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.5f64);
        let mut expected = Vec::new();
        for (k, g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
            expected.push(x);
        }
        // first step of Adam moves by exactly lr (up to eps)
        assert!((expected[0] - (0.5 - 0.01)).abs() < 1e-9);
        let mut p = ParamVector(vec![0.5]);
        let mut adam = Adam::new(1);
        for (k, g) in grads.iter().enumerate() {
            adam.step(&mut p, &ParamVector(vec![*g]), lr).unwrap();
            assert_eq!(p.0[0], expected[k]);
        }
        assert_eq!(adam.step_count, 3);
        assert!(adam.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = ParamVector(vec![0.0]);
        let mut adam = Adam::new(1);
        let err = adam.step(&mut p, &ParamVector(vec![f64::NAN]), 1e-3).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
