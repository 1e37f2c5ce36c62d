//! Dense ReLU networks with hand-written reverse mode, Adam, and a
//! tanh-squashed Gaussian policy head.

mod adam;
mod checkpoint;
mod policy;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, LayerRecord, CHECKPOINT_FORMAT};
pub use policy::{GaussianPolicy, PolicySample, LOG_STD_MAX, LOG_STD_MIN};

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// One affine layer, `z = W·x + b` with `W` shaped `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub w: Array2<S>,
    pub b: Array1<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            w: Array2::zeros((output, input)),
            b: Array1::zeros(output),
        }
    }

    pub fn input(&self) -> usize {
        self.w.ncols()
    }

    pub fn output(&self) -> usize {
        self.w.nrows()
    }

    /// Uniform in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let mut draw = || S::lit(rng.random_range(-bound..=bound));
        Self {
            w: Array2::from_shape_simple_fn((output, input), &mut draw),
            b: Array1::from_shape_simple_fn(output, &mut draw),
        }
    }
}

/// Parameters of a ReLU MLP with a linear output layer. The same shape
/// doubles as a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<S> {
    pub layers: Vec<Dense<S>>,
}

impl<S: Scalar> MlpParams<S> {
    pub fn new(layers: Vec<Dense<S>>) -> Result<Self> {
        let p = Self { layers };
        p.validate()?;
        Ok(p)
    }

    /// Seeded initialization for layer widths `sizes = [in, h1, .., out]`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(CoreError::InvalidParams(format!("bad layer sizes {sizes:?}")));
        }
        Self::new(sizes.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::InvalidParams("network has no layers".into()));
        }
        for layer in &self.layers {
            if layer.b.len() != layer.output() {
                return Err(CoreError::DimensionMismatch {
                    expected: layer.output(),
                    got: layer.b.len(),
                });
            }
        }
        for pair in self.layers.windows(2) {
            if pair[1].input() != pair[0].output() {
                return Err(CoreError::DimensionMismatch {
                    expected: pair[0].output(),
                    got: pair[1].input(),
                });
            }
        }
        if self.values().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite("network parameters"));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.input(), l.output())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output()
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(Dense::output))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights row-major then biases.
    pub fn values(&self) -> impl Iterator<Item = &S> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(l.b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<S> {
        self.values().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CoreError::DimensionMismatch {
                expected: self.param_count(),
                got: flat.len(),
            });
        }
        self.values_mut().zip(flat).for_each(|(p, v)| *p = *v);
        Ok(())
    }

    fn check_shape(&self, other: &Self) -> Result<()> {
        if self.sizes() != other.sizes() {
            return Err(CoreError::DimensionMismatch {
                expected: self.param_count(),
                got: other.param_count(),
            });
        }
        Ok(())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: S) -> Result<()> {
        self.check_shape(other)?;
        self.values_mut().zip(other.values()).for_each(|(a, b)| *a += scale * *b);
        Ok(())
    }

    /// `self ← tau·online + (1 − tau)·self`.
    pub fn blend_toward(&mut self, online: &Self, tau: S) -> Result<()> {
        self.check_shape(online)?;
        let keep = S::one() - tau;
        self.values_mut().zip(online.values()).for_each(|(t, o)| *t = tau * *o + keep * *t);
        Ok(())
    }

    /// Copy restricted to the first `rows` outputs of the last layer.
    pub fn head(&self, rows: usize) -> Result<Self> {
        let out = self.output_dim();
        if rows == 0 || rows > out {
            return Err(CoreError::DimensionMismatch { expected: out, got: rows });
        }
        let mut layers = self.layers.clone();
        let last = layers.last_mut().expect("non-empty");
        last.w = last.w.slice(ndarray::s![..rows, ..]).to_owned();
        last.b = last.b.slice(ndarray::s![..rows]).to_owned();
        Ok(Self { layers })
    }

    /// Adds gradients of a head produced by [`MlpParams::head`] into `self`.
    pub fn add_head(&mut self, head: &Self) -> Result<()> {
        let n = self.layers.len();
        if head.layers.len() != n || head.output_dim() > self.output_dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.output_dim(),
                got: head.output_dim(),
            });
        }
        for (k, (dst, src)) in self.layers.iter_mut().zip(&head.layers).enumerate() {
            if k + 1 < n {
                dst.w += &src.w;
                dst.b += &src.b;
            } else {
                let rows = src.output();
                let mut w = dst.w.slice_mut(ndarray::s![..rows, ..]);
                w += &src.w;
                let mut b = dst.b.slice_mut(ndarray::s![..rows]);
                b += &src.b;
            }
        }
        Ok(())
    }

    /// Single-input evaluation; no cache.
    pub fn eval(&self, x: ArrayView1<S>) -> Result<Array1<S>> {
        if x.len() != self.input_dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            h = layer.w.dot(&h) + &layer.b;
            if k < last {
                h.mapv_inplace(S::pos);
            }
        }
        Ok(h)
    }

    /// Batched evaluation with rows as samples; no cache.
    pub fn eval_batch(&self, x: ArrayView2<S>) -> Result<Array2<S>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (k, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w.t()) + &layer.b;
            if k < last {
                h.mapv_inplace(S::pos);
            }
        }
        Ok(h)
    }

    /// Sign of every hidden pre-activation for each row of `x`; outputs are
    /// smooth in the parameters wherever this does not change.
    pub fn activation_pattern(&self, x: ArrayView2<S>) -> Result<Vec<bool>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        let mut pattern = Vec::new();
        for layer in &self.layers[..last] {
            h = h.dot(&layer.w.t()) + &layer.b;
            pattern.extend(h.iter().map(|z| *z > S::zero()));
            h.mapv_inplace(S::pos);
        }
        Ok(pattern)
    }

    fn check_input(&self, x: ArrayView2<S>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(CoreError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }
}

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// A network together with a version stamp so that forward caches can be
/// checked against the parameters they were computed with.
#[derive(Debug, Clone)]
pub struct Mlp<S> {
    params: MlpParams<S>,
    version: u64,
}

impl<S: Scalar> PartialEq for Mlp<S> {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

/// Activations retained by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    version: u64,
    /// Input to each layer.
    inputs: Vec<Array2<S>>,
    /// Pre-activations of each hidden layer.
    hidden_pre: Vec<Array2<S>>,
}

impl<S: Scalar> Mlp<S> {
    pub fn new(params: MlpParams<S>) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            version: fresh_version(),
        })
    }

    pub fn init<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::new(MlpParams::init(sizes, rng)?)
    }

    pub fn params(&self) -> &MlpParams<S> {
        &self.params
    }

    /// Mutable access; invalidates outstanding caches.
    pub fn params_mut(&mut self) -> &mut MlpParams<S> {
        self.version = fresh_version();
        &mut self.params
    }

    pub fn into_params(self) -> MlpParams<S> {
        self.params
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.params.output_dim()
    }

    pub fn eval(&self, x: ArrayView1<S>) -> Result<Array1<S>> {
        self.params.eval(x)
    }

    pub fn eval_batch(&self, x: ArrayView2<S>) -> Result<Array2<S>> {
        self.params.eval_batch(x)
    }

    /// Batched forward pass with rows as samples.
    pub fn forward(&self, x: ArrayView2<S>) -> Result<(Array2<S>, ForwardCache<S>)> {
        self.params.check_input(x)?;
        let last = self.params.layers.len() - 1;
        let mut inputs = Vec::with_capacity(last + 1);
        let mut hidden_pre = Vec::with_capacity(last);
        let mut h = x.to_owned();
        for (k, layer) in self.params.layers.iter().enumerate() {
            let z = h.dot(&layer.w.t()) + &layer.b;
            inputs.push(h);
            if k < last {
                h = z.mapv(S::pos);
                hidden_pre.push(z);
            } else {
                h = z;
            }
        }
        let cache = ForwardCache {
            version: self.version,
            inputs,
            hidden_pre,
        };
        Ok((h, cache))
    }

    /// Gradients of `Σ dy ⊙ y` with respect to the parameters and the input.
    pub fn backward(&self, cache: &ForwardCache<S>, dy: ArrayView2<S>) -> Result<(MlpParams<S>, Array2<S>)> {
        if cache.version != self.version {
            return Err(CoreError::StaleCache);
        }
        let batch = cache.inputs[0].nrows();
        if dy.dim() != (batch, self.output_dim()) {
            return Err(CoreError::DimensionMismatch {
                expected: self.output_dim(),
                got: dy.ncols(),
            });
        }
        let n = self.params.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut dz = dy.to_owned();
        for k in (0..n).rev() {
            let layer = &self.params.layers[k];
            let w = dz.t().dot(&cache.inputs[k]);
            let b = dz.sum_axis(Axis(0));
            let mut dx = dz.dot(&layer.w);
            grads.push(Dense { w, b });
            if k > 0 {
                dx.zip_mut_with(&cache.hidden_pre[k - 1], |g, &z| {
                    if z <= S::zero() {
                        *g = S::zero();
                    }
                });
            }
            dz = dx;
        }
        grads.reverse();
        Ok((MlpParams { layers: grads }, dz))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng(seed);
        Array::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = MlpParams::<f64> {
            layers: vec![Dense::zeros(3, 4), Dense::zeros(4, 2)],
        };
        let y = p.eval(array![1.0, -2.0, 3.0].view()).unwrap();
        assert_eq!(y, array![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let p = MlpParams::new(vec![Dense {
            w: Array2::<f64>::eye(3),
            b: Array1::zeros(3),
        }])
        .unwrap();
        let x = array![0.5, -1.5, 2.0];
        assert_eq!(p.eval(x.view()).unwrap(), x);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let p = MlpParams::<f64>::init(&[5, 7, 3], &mut rng(1)).unwrap();
        let x = random_batch(4, 5, 2);
        let net = Mlp::new(p.clone()).unwrap();
        let (y, _) = net.forward(x.view()).unwrap();
        for r in 0..4 {
            let mut h = [0.0; 7];
            for (i, hi) in h.iter_mut().enumerate() {
                let mut z = p.layers[0].b[i];
                for j in 0..5 {
                    z += p.layers[0].w[[i, j]] * x[[r, j]];
                }
                *hi = z.max(0.0);
            }
            for i in 0..3 {
                let mut z = p.layers[1].b[i];
                for (j, hj) in h.iter().enumerate() {
                    z += p.layers[1].w[[i, j]] * hj;
                }
                assert!((y[[r, i]] - z).abs() < 1e-9);
            }
            let single = p.eval(x.row(r)).unwrap();
            for i in 0..3 {
                assert!((single[i] - y[[r, i]]).abs() < 1e-12);
            }
        }
        assert!(p.eval(array![1.0].view()).is_err());
    }

    #[test]
    fn zero_output_gradient() {
        let net = Mlp::<f64>::init(&[3, 4, 2], &mut rng(3)).unwrap();
        let x = random_batch(5, 3, 4);
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, Array2::zeros((5, 2)).view()).unwrap();
        assert!(g.values().all(|v| *v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        let net = Mlp::<f64>::init(&[3, 2], &mut rng(5)).unwrap();
        let x = array![[1.0, 2.0, -1.0]];
        let dy = array![[0.5, -2.0]];
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, dx) = net.backward(&cache, dy.view()).unwrap();
        assert_eq!(g.layers[0].w, dy.t().dot(&x));
        assert_eq!(g.layers[0].b, array![0.5, -2.0]);
        assert_eq!(dx, dy.dot(&net.params().layers[0].w));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = Mlp::<f64>::init(&[4, 6, 5, 3], &mut rng(7)).unwrap();
        let x = random_batch(6, 4, 8);
        let dy = random_batch(6, 3, 9);
        let loss = |p: &MlpParams<f64>| (p.eval_batch(x.view()).unwrap() * &dy).sum();
        let (_, cache) = net.forward(x.view()).unwrap();
        let (g, _) = net.backward(&cache, dy.view()).unwrap();
        let analytic = g.to_flat();
        let base = net.params().to_flat();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..base.len() {
            let mut shifted = base.clone();
            shifted[i] += h;
            net.params_mut().set_flat(&shifted).unwrap();
            let up = loss(net.params());
            shifted[i] -= 2.0 * h;
            net.params_mut().set_flat(&shifted).unwrap();
            let down = loss(net.params());
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = Mlp::<f64>::init(&[2, 3, 1], &mut rng(1)).unwrap();
        let x = random_batch(2, 2, 1);
        let (_, cache) = net.forward(x.view()).unwrap();
        net.params_mut().layers[0].b[0] += 1.0;
        let err = net.backward(&cache, Array2::zeros((2, 1)).view()).unwrap_err();
        assert_eq!(err, CoreError::StaleCache);
        let other = net.clone();
        let (_, cache) = other.forward(x.view()).unwrap();
        let mut touched = other.clone();
        touched.params_mut();
        assert!(touched.backward(&cache, Array2::zeros((2, 1)).view()).is_err());
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = MlpParams::<f64>::init(&[9, 16, 12], &mut rng(42)).unwrap();
        let b = MlpParams::<f64>::init(&[9, 16, 12], &mut rng(42)).unwrap();
        let c = MlpParams::<f64>::init(&[9, 16, 12], &mut rng(43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.values().all(|v| v.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn head_round_trip() {
        let p = MlpParams::<f64>::init(&[3, 4, 6], &mut rng(2)).unwrap();
        let head = p.head(2).unwrap();
        assert_eq!(head.output_dim(), 2);
        let x = array![0.1, 0.2, -0.3];
        let full = p.eval(x.view()).unwrap();
        let part = head.eval(x.view()).unwrap();
        assert_eq!(full.slice(ndarray::s![..2]), part);
        let mut acc = p.zeros_like();
        acc.add_head(&head).unwrap();
        assert_eq!(acc.layers[1].w.row(5).sum(), 0.0);
        assert_eq!(acc.layers[1].w.row(0), p.layers[1].w.row(0));
        assert!(p.head(7).is_err());
    }

    #[test]
    fn blend_examples() {
        let online = MlpParams::<f64>::init(&[2, 3], &mut rng(1)).unwrap();
        let original = MlpParams::<f64>::init(&[2, 3], &mut rng(2)).unwrap();
        let mut t = original.clone();
        t.blend_toward(&online, 0.0).unwrap();
        assert_eq!(t, original);
        t.blend_toward(&online, 1.0).unwrap();
        assert_eq!(t, online);
        let wrong = MlpParams::<f64>::init(&[2, 4], &mut rng(1)).unwrap();
        assert!(t.blend_toward(&wrong, 0.5).is_err());
    }

    #[test]
    fn layer_chain_validated() {
        let bad = MlpParams::<f64>::new(vec![Dense::zeros(2, 3), Dense::zeros(4, 1)]);
        assert!(matches!(bad, Err(CoreError::DimensionMismatch { .. })));
        let mut nan = Dense::<f64>::zeros(2, 2);
        nan.w[[0, 0]] = f64::NAN;
        assert!(MlpParams::new(vec![nan]).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let net = Mlp::<f32>::init(&[3, 5, 2], &mut rng(1)).unwrap();
        let x = Array2::<f32>::ones((2, 3));
        let (y, cache) = net.forward(x.view()).unwrap();
        let (g, _) = net.backward(&cache, Array2::ones((2, 2)).view()).unwrap();
        assert_eq!(y.dim(), (2, 2));
        assert_eq!(g.param_count(), net.params().param_count());
    }
}
