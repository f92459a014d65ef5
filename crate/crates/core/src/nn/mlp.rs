use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output, which is what the
    /// forward cache keeps.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Identity),
            c => Err(Error::format("activation", format!("unknown code {c}"))),
        }
    }
}

/// Layer widths and per-layer activations of a dense feed-forward network.
///
/// Parameters are laid out layer by layer; each layer stores its weight
/// matrix row-major as `out × in`, followed by its `out` biases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidSpec("layer sizes must be >= 1".into()));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::InvalidSpec(format!(
                "{} layers need {} activations, got {}",
                layer_sizes.len(),
                layer_sizes.len() - 1,
                activations.len()
            )));
        }
        Ok(Self {
            layer_sizes,
            activations,
        })
    }

    /// `input → hidden... → output` with one activation for every hidden layer
    /// and a separate one for the output layer.
    pub fn with_hidden(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        let mut acts = vec![hidden_activation; hidden.len()];
        acts.push(output_activation);
        Self::new(sizes, acts)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Offset of layer `l`'s weight block in the flat parameter array.
    fn layer_offset(&self, l: usize) -> usize {
        self.layer_sizes[..=l]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Stable identifier of this architecture.
    pub fn spec_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(b"mlp-spec-v1");
        for &s in &self.layer_sizes {
            h.update((s as u64).to_le_bytes());
        }
        for a in &self.activations {
            h.update([a.code()]);
        }
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

/// Flat ordered array of all weights and biases of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub spec_hash: u64,
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            spec_hash: spec.spec_hash(),
        }
    }

    pub fn from_values(spec: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(Error::dim("parameter vector", spec.param_count(), values.len()));
        }
        Ok(Self {
            values,
            spec_hash: spec.spec_hash(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check(&self, spec: &MlpSpec) -> Result<()> {
        let expected = spec.spec_hash();
        if self.spec_hash != expected {
            return Err(Error::SpecMismatch {
                expected,
                actual: self.spec_hash,
            });
        }
        if self.values.len() != spec.param_count() {
            return Err(Error::dim("parameter vector", spec.param_count(), self.values.len()));
        }
        Ok(())
    }
}

/// Fan-in scaled uniform initialisation: weights of a layer with `fan_in`
/// inputs are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, biases are zero.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(spec.param_count());
    for w in spec.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.random_range(-bound..bound));
        }
        values.extend(std::iter::repeat_n(0.0, fan_out));
    }
    ParamVector {
        values,
        spec_hash: spec.spec_hash(),
    }
}

/// `c (m×n, row-major) = a·b + beta·c` where `a` is `m×k` and `b` is `k×n`
/// with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!((m - 1) * rsa + (k - 1) * csa < a.len());
    assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    // SAFETY: the assertions above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Post-activation values of every layer for a batch, kept for backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// `layers[0]` is the input; `layers[l + 1]` is the output of layer `l`.
    layers: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Row-major `batch × output_dim` network output.
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("at least input")
    }

    pub fn into_output(mut self) -> Vec<f64> {
        self.layers.pop().expect("at least input")
    }
}

/// Batched forward pass on a row-major `batch × input_dim` matrix.
pub fn forward_batch(
    spec: &MlpSpec,
    params: &[f64],
    input: &[f64],
    batch: usize,
) -> Result<ForwardCache> {
    if params.len() != spec.param_count() {
        return Err(Error::dim("parameter vector", spec.param_count(), params.len()));
    }
    if input.len() != batch * spec.input_dim() {
        return Err(Error::dim("input", batch * spec.input_dim(), input.len()));
    }
    let mut layers = Vec::with_capacity(spec.num_layers() + 1);
    layers.push(input.to_vec());
    let mut offset = 0;
    for (l, act) in spec.activations.iter().enumerate() {
        let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let w = &params[offset..offset + fan_in * fan_out];
        let b = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;

        let x = layers.last().expect("input pushed");
        let mut z = vec![0.0; batch * fan_out];
        // z = x · wᵀ ; wᵀ(i, j) = w[j * fan_in + i]
        gemm(batch, fan_in, fan_out, x, (fan_in, 1), w, (1, fan_in), 0.0, &mut z);
        for row in z.chunks_exact_mut(fan_out) {
            for (v, bias) in row.iter_mut().zip(b) {
                *v = act.apply(*v + bias);
            }
        }
        layers.push(z);
    }
    Ok(ForwardCache { batch, layers })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardRequest {
    pub params: bool,
    pub input: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Gradients {
    pub params: Option<Vec<f64>>,
    /// Row-major `batch × input_dim`.
    pub input: Option<Vec<f64>>,
}

/// Backpropagates `upstream` (row-major `batch × output_dim`, the gradient of
/// some scalar with respect to the network output) through a cached forward
/// pass. Parameter gradients are summed over the batch.
pub fn backward_batch(
    spec: &MlpSpec,
    params: &[f64],
    cache: &ForwardCache,
    upstream: &[f64],
    request: BackwardRequest,
) -> Result<Gradients> {
    let batch = cache.batch;
    if params.len() != spec.param_count() {
        return Err(Error::dim("parameter vector", spec.param_count(), params.len()));
    }
    if upstream.len() != batch * spec.output_dim() {
        return Err(Error::dim("upstream gradient", batch * spec.output_dim(), upstream.len()));
    }
    let mut grad = request.params.then(|| vec![0.0; spec.param_count()]);
    let mut delta = upstream.to_vec();
    for l in (0..spec.num_layers()).rev() {
        let (fan_in, fan_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let act = spec.activations[l];
        let out = &cache.layers[l + 1];
        for (d, a) in delta.iter_mut().zip(out) {
            *d *= act.derivative_from_output(*a);
        }
        let offset = spec.layer_offset(l);
        let x = &cache.layers[l];
        if let Some(g) = grad.as_mut() {
            let (gw, gb) = g[offset..offset + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            // gw (out×in) = deltaᵀ (out×batch) · x (batch×in)
            gemm(fan_out, batch, fan_in, &delta, (1, fan_out), x, (fan_in, 1), 0.0, gw);
            for row in delta.chunks_exact(fan_out) {
                for (acc, d) in gb.iter_mut().zip(row) {
                    *acc += d;
                }
            }
        }
        if l > 0 || request.input {
            let w = &params[offset..offset + fan_in * fan_out];
            let mut next = vec![0.0; batch * fan_in];
            // next (batch×in) = delta (batch×out) · w (out×in)
            gemm(batch, fan_out, fan_in, &delta, (fan_out, 1), w, (fan_in, 1), 0.0, &mut next);
            delta = next;
        }
    }
    Ok(Gradients {
        params: grad,
        input: request.input.then_some(delta),
    })
}

/// Single-sample forward pass.
pub fn forward(spec: &MlpSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    params.check(spec)?;
    Ok(forward_batch(spec, &params.values, input, 1)?.into_output())
}

/// Exact gradient of `⟨upstream, forward(params, input)⟩` with respect to every
/// parameter, in [`ParamVector`] order.
pub fn backward(
    spec: &MlpSpec,
    params: &ParamVector,
    input: &[f64],
    upstream: &[f64],
) -> Result<ParamVector> {
    params.check(spec)?;
    let cache = forward_batch(spec, &params.values, input, 1)?;
    let g = backward_batch(
        spec,
        &params.values,
        &cache,
        upstream,
        BackwardRequest {
            params: true,
            input: false,
        },
    )?;
    Ok(ParamVector {
        values: g.params.expect("requested"),
        spec_hash: params.spec_hash,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(sizes: &[usize], act: Activation) -> MlpSpec {
        MlpSpec::new(sizes.to_vec(), vec![act; sizes.len() - 1]).unwrap()
    }

    /// Straight-line re-evaluation with explicit index loops.
    fn naive_forward(spec: &MlpSpec, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut off = 0;
        for (l, act) in spec.activations().iter().enumerate() {
            let (ni, no) = (spec.layer_sizes()[l], spec.layer_sizes()[l + 1]);
            let mut next = vec![0.0; no];
            for (o, slot) in next.iter_mut().enumerate() {
                let mut s = p[off + ni * no + o];
                for i in 0..ni {
                    s += p[off + o * ni + i] * cur[i];
                }
                *slot = act.apply(s);
            }
            off += ni * no + no;
            cur = next;
        }
        cur
    }

    #[test]
    fn rejects_degenerate_specs() {
        assert!(MlpSpec::new(vec![3], vec![]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], vec![Activation::Relu; 2]).is_err());
        assert!(MlpSpec::new(vec![3, 2], vec![]).is_err());
    }

    #[test]
    fn param_count_matches_layer_arithmetic() {
        let s = spec(&[2, 3, 1], Activation::Relu);
        assert_eq!(s.param_count(), 2 * 3 + 3 + 3 + 1);
        assert_eq!(mlp_init(&s, 7).len(), 13);
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let s = spec(&[4, 8, 2], Activation::Tanh);
        let a = mlp_init(&s, 11);
        let b = mlp_init(&s, 11);
        assert_eq!(
            a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(a.values[32..40].iter().all(|&v| v == 0.0));
        assert!(a.values[56..].iter().all(|&v| v == 0.0));
        assert_ne!(mlp_init(&s, 12).values, a.values);
    }

    #[test]
    fn init_mean_is_centred() {
        // 100 × 100 weights per draw; U(-0.1, 0.1) has std 0.1/sqrt(3).
        let s = spec(&[100, 100], Activation::Identity);
        let n = 10_000usize;
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..(n / 100) as u64 {
            let p = mlp_init(&s, seed);
            for v in &p.values[..100] {
                sum += v;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let sigma = 0.1 / 3f64.sqrt() / (count as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean} sigma {sigma}");
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let s = spec(&[3, 5, 2], Activation::Relu);
        let out = forward(&s, &ParamVector::zeros(&s), &[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_affine_layer() {
        let s = spec(&[2, 2], Activation::Identity);
        let p = ParamVector::from_values(&s, vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5]).unwrap();
        let out = forward(&s, &p, &[1.0, -1.0]).unwrap();
        assert_eq!(out, vec![1.0 - 2.0 + 0.5, 3.0 - 4.0 - 0.5]);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let s = MlpSpec::new(
            vec![5, 7, 6, 3],
            vec![Activation::Relu, Activation::Tanh, Activation::Identity],
        )
        .unwrap();
        let p = mlp_init(&s, 3);
        let x = [0.3, -1.2, 0.8, 2.0, -0.1];
        let out = forward(&s, &p, &x).unwrap();
        let reference = naive_forward(&s, &p.values, &x);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_forward_matches_rowwise() {
        let s = spec(&[3, 9, 2], Activation::Tanh);
        let p = mlp_init(&s, 5);
        let xs = [0.1, 0.2, 0.3, -1.0, 0.5, 2.0, 0.0, 0.0, 0.0];
        let batched = forward_batch(&s, &p.values, &xs, 3).unwrap();
        for (row, x) in xs.chunks(3).enumerate() {
            let single = forward(&s, &p, x).unwrap();
            assert_eq!(&batched.output()[row * 2..row * 2 + 2], single.as_slice());
        }
    }

    #[test]
    fn dimension_errors() {
        let s = spec(&[3, 2], Activation::Identity);
        let p = mlp_init(&s, 0);
        assert!(matches!(forward(&s, &p, &[1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(
            backward(&s, &p, &[1.0, 2.0, 3.0], &[1.0]),
            Err(Error::Dimension { .. })
        ));
        let other = spec(&[3, 2], Activation::Tanh);
        assert!(matches!(
            forward(&other, &p, &[1.0, 2.0, 3.0]),
            Err(Error::SpecMismatch { .. })
        ));
    }

    #[test]
    fn linear_chain_rule() {
        let s = spec(&[1, 1], Activation::Identity);
        let p = ParamVector::from_values(&s, vec![0.7, 0.0]).unwrap();
        let g = backward(&s, &p, &[2.5], &[3.0]).unwrap();
        assert_eq!(g.values, vec![2.5 * 3.0, 3.0]);
    }

    #[test]
    fn relu_blocks_gradient_at_negative_preactivation() {
        // hidden unit 0 gets pre-activation -1, unit 1 gets +1
        let s = spec(&[1, 2, 1], Activation::Relu);
        let p = ParamVector::from_values(&s, vec![-1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let g = backward(&s, &p, &[1.0], &[1.0]).unwrap();
        assert_eq!(g.values[0], 0.0);
        assert_eq!(g.values[2], 0.0);
        assert_eq!(g.values[1], 1.0);
        // output weight for the dead unit sees its zero activation
        assert_eq!(g.values[4], 0.0);
    }
}
