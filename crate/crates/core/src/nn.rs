//! Small fully connected networks with hand-written backpropagation (ReLU
//! hidden layers, linear output) and an Adam optimizer. No autograd: the
//! learner's gradients are checked against finite differences in tests.

use crate::num::Real;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// One dense layer, row-major weights (`w[i*n_in + j]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<R: Real> {
    pub w: Vec<R>,
    pub b: Vec<R>,
    pub n_in: usize,
    pub n_out: usize,
}

impl<R: Real> Linear<R> {
    fn init(n_in: usize, n_out: usize, rng: &mut ChaCha12Rng) -> Self {
        // uniform fan-in scaling for weights and biases
        let bound = 1.0 / (n_in as f64).sqrt();
        let mut draw = || R::of(rng.gen_range(-bound..bound));
        Linear {
            w: (0..n_in * n_out).map(|_| draw()).collect(),
            b: (0..n_out).map(|_| draw()).collect(),
            n_in,
            n_out,
        }
    }

    fn zeros(n_in: usize, n_out: usize) -> Self {
        Linear {
            w: vec![R::zero(); n_in * n_out],
            b: vec![R::zero(); n_out],
            n_in,
            n_out,
        }
    }
}

/// Per-call scratch space so forward/backward never allocate in the hot loop.
#[derive(Debug, Default)]
pub struct Workspace<R: Real> {
    /// `acts[0]` is the input; `acts[l+1]` the (post-ReLU) output of layer l.
    acts: Vec<Vec<R>>,
    delta_a: Vec<R>,
    delta_b: Vec<R>,
}

impl<R: Real> Workspace<R> {
    pub fn new() -> Self {
        Workspace {
            acts: Vec::new(),
            delta_a: Vec::new(),
            delta_b: Vec::new(),
        }
    }

    fn fit(&mut self, mlp: &Mlp<R>) {
        let needed = mlp.layers.len() + 1;
        self.acts.resize_with(needed, Vec::new);
        self.acts[0].resize(mlp.in_dim(), R::zero());
        let mut widest = mlp.in_dim();
        for (l, layer) in mlp.layers.iter().enumerate() {
            self.acts[l + 1].resize(layer.n_out, R::zero());
            widest = widest.max(layer.n_out);
        }
        self.delta_a.resize(widest, R::zero());
        self.delta_b.resize(widest, R::zero());
    }

    /// Output of the last forward pass.
    pub fn output(&self) -> &[R] {
        self.acts.last().expect("forward ran")
    }
}

/// Multilayer perceptron: ReLU between layers, identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<R: Real> {
    pub layers: Vec<Linear<R>>,
}

impl<R: Real> Mlp<R> {
    /// `dims` lists input, hidden, and output widths, e.g. `[31, 64, 64, 20]`.
    pub fn new(dims: &[usize], rng: &mut ChaCha12Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        Mlp {
            layers: dims.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect(),
        }
    }

    /// All-zero network of the given shape (gradient accumulators, or a
    /// shell to load saved parameters into).
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        assert!(dims.iter().all(|&d| d > 0), "zero-width layer");
        Mlp {
            layers: dims
                .windows(2)
                .map(|w| Linear::zeros(w[0], w[1]))
                .collect(),
        }
    }

    /// Same shape, all parameters zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.n_in, l.n_out))
                .collect(),
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.n_out));
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("nonempty").n_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("nonempty").n_out
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Canonical parameter order: per layer, weights then biases.
    pub fn params(&self) -> impl Iterator<Item = R> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(l.b.iter()).copied())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut R> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn zero(&mut self) {
        for p in self.params_mut() {
            *p = R::zero();
        }
    }

    pub fn load_params(&mut self, data: &[R]) {
        assert_eq!(data.len(), self.num_params());
        for (p, &v) in self.params_mut().zip(data.iter()) {
            *p = v;
        }
    }

    /// Forward pass; the result lives in `ws` (see [`Workspace::output`]).
    pub fn forward<'w>(&self, x: &[R], ws: &'w mut Workspace<R>) -> &'w [R] {
        assert_eq!(x.len(), self.in_dim());
        ws.fit(self);
        ws.acts[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (lo, hi) = ws.acts.split_at_mut(l + 1);
            let input = &lo[l];
            let out = &mut hi[0];
            for i in 0..layer.n_out {
                let row = &layer.w[i * layer.n_in..(i + 1) * layer.n_in];
                let mut acc = layer.b[i];
                for (wij, xj) in row.iter().zip(input.iter()) {
                    acc = acc + *wij * *xj;
                }
                out[i] = if l < last && acc < R::zero() {
                    R::zero()
                } else {
                    acc
                };
            }
        }
        ws.output()
    }

    /// Backpropagate `d_out` (gradient of the loss w.r.t. the network
    /// output) through the activations recorded by the last [`Mlp::forward`]
    /// on `ws`. Parameter gradients accumulate into `grads` when given; the
    /// gradient w.r.t. the input is written to `d_input` when requested.
    pub fn backward(
        &self,
        ws: &mut Workspace<R>,
        d_out: &[R],
        mut grads: Option<&mut Mlp<R>>,
        mut d_input: Option<&mut [R]>,
    ) {
        assert_eq!(d_out.len(), self.out_dim());
        let Workspace {
            acts,
            delta_a,
            delta_b,
        } = ws;
        delta_a[..d_out.len()].copy_from_slice(d_out);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &acts[l];
            if let Some(grads) = grads.as_deref_mut() {
                let glayer = &mut grads.layers[l];
                for i in 0..layer.n_out {
                    let di = delta_a[i];
                    if di != R::zero() {
                        let grow = &mut glayer.w[i * layer.n_in..(i + 1) * layer.n_in];
                        for (g, xj) in grow.iter_mut().zip(input.iter()) {
                            *g = *g + di * *xj;
                        }
                    }
                    glayer.b[i] = glayer.b[i] + di;
                }
            }
            let need_down = l > 0 || d_input.is_some();
            if !need_down {
                break;
            }
            for j in 0..layer.n_in {
                let mut acc = R::zero();
                for i in 0..layer.n_out {
                    acc = acc + layer.w[i * layer.n_in + j] * delta_a[i];
                }
                // acts[l] is post-ReLU for l >= 1; the raw input has no mask
                if l > 0 && input[j] <= R::zero() {
                    acc = R::zero();
                }
                delta_b[j] = acc;
            }
            std::mem::swap(delta_a, delta_b);
        }
        if let Some(d) = d_input.as_deref_mut() {
            d.copy_from_slice(&delta_a[..self.in_dim()]);
        }
    }
}

/// Adam with bias correction over a network's canonical parameter order.
#[derive(Debug, Clone)]
pub struct Adam<R: Real> {
    m: Vec<R>,
    v: Vec<R>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl<R: Real> Adam<R> {
    pub fn new(n_params: usize) -> Self {
        Adam {
            m: vec![R::zero(); n_params],
            v: vec![R::zero(); n_params],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step<'a>(
        &mut self,
        lr: f64,
        params: impl Iterator<Item = &'a mut R>,
        grads: impl Iterator<Item = R>,
    ) where
        R: 'a,
    {
        self.t += 1;
        let b1 = R::of(self.beta1);
        let b2 = R::of(self.beta2);
        let bc1 = R::of(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = R::of(1.0 - self.beta2.powi(self.t as i32));
        let lr = R::of(lr);
        let eps = R::of(self.eps);
        let mut n = 0;
        for ((p, g), (m, v)) in params
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (R::one() - b1) * g;
            *v = b2 * *v + (R::one() - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            n += 1;
        }
        assert_eq!(n, self.m.len(), "optimizer size mismatch");
    }
}

/// target ← tau·online + (1 − tau)·target, elementwise.
pub fn polyak_update<R: Real>(target: &mut Mlp<R>, online: &Mlp<R>, tau: R) {
    let one_minus = R::one() - tau;
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = one_minus * *t + tau * o;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn fd_check(dims: &[usize], seed: u64) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let net: Mlp<f64> = Mlp::new(dims, &mut rng);
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..*dims.last().unwrap())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();

        let loss = |net: &Mlp<f64>, x: &[f64]| {
            let mut ws = Workspace::new();
            let y = net.forward(x, &mut ws);
            y.iter()
                .zip(target.iter())
                .map(|(a, b)| 0.5 * (a - b) * (a - b))
                .sum::<f64>()
        };

        // analytic
        let mut ws = Workspace::new();
        let y = net.forward(&x, &mut ws).to_vec();
        let d_out: Vec<f64> = y.iter().zip(target.iter()).map(|(a, b)| a - b).collect();
        let mut grads = net.zeros_like();
        let mut d_in = vec![0.0; dims[0]];
        net.backward(&mut ws, &d_out, Some(&mut grads), Some(&mut d_in));

        // finite differences on parameters
        let eps = 1e-5;
        let analytic: Vec<f64> = grads.params().collect();
        let mut probe = net.clone();
        for idx in 0..net.num_params() {
            let orig = probe.params().nth(idx).unwrap();
            *probe.params_mut().nth(idx).unwrap() = orig + eps;
            let up = loss(&probe, &x);
            *probe.params_mut().nth(idx).unwrap() = orig - eps;
            let down = loss(&probe, &x);
            *probe.params_mut().nth(idx).unwrap() = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(analytic[idx].abs()).max(1e-6);
            assert!(
                ((fd - analytic[idx]) / denom).abs() < 1e-6,
                "param {idx}: fd {fd:.6e} vs analytic {:.6e}",
                analytic[idx]
            );
        }

        // finite differences on the input
        let mut xp = x.clone();
        for j in 0..x.len() {
            xp[j] = x[j] + eps;
            let up = loss(&net, &xp);
            xp[j] = x[j] - eps;
            let down = loss(&net, &xp);
            xp[j] = x[j];
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(d_in[j].abs()).max(1e-6);
            assert!(
                ((fd - d_in[j]) / denom).abs() < 1e-6,
                "input {j}: fd {fd:.6e} vs analytic {:.6e}",
                d_in[j]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(&[4, 8, 8, 3], 1);
        fd_check(&[6, 16, 2], 2);
        fd_check(&[3, 5, 5, 5, 1], 3);
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let net: Mlp<f64> = Mlp::new(&[7, 12, 5], &mut rng);
        assert_eq!(net.in_dim(), 7);
        assert_eq!(net.out_dim(), 5);
        assert_eq!(net.num_params(), 7 * 12 + 12 + 12 * 5 + 5);
        assert_eq!(net.dims(), vec![7, 12, 5]);
        let x = vec![0.1; 7];
        let mut ws = Workspace::new();
        let y1 = net.forward(&x, &mut ws).to_vec();
        let y2 = net.forward(&x, &mut ws).to_vec();
        assert_eq!(y1, y2);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize 0.5·(w·x − 1)² over a 1-layer net
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut net: Mlp<f64> = Mlp::new(&[2, 1], &mut rng);
        let mut opt = Adam::new(net.num_params());
        let x = vec![1.0, -2.0];
        let mut ws = Workspace::new();
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            let y = net.forward(&x, &mut ws)[0];
            let err = y - 1.0;
            let mut grads = net.zeros_like();
            net.backward(&mut ws, &[err], Some(&mut grads), None);
            opt.step(1e-2, net.params_mut(), grads.params());
            last = 0.5 * err * err;
        }
        assert!(last < 1e-6, "loss {last:.3e}");
    }

    #[test]
    fn polyak_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let online: Mlp<f64> = Mlp::new(&[3, 4, 2], &mut rng);
        let mut target: Mlp<f64> = Mlp::new(&[3, 4, 2], &mut rng);
        let before: Vec<f64> = target.params().collect();
        polyak_update(&mut target, &online, 0.005);
        for ((t, o), b) in target.params().zip(online.params()).zip(before) {
            assert_relative_eq!(t, 0.005 * o + 0.995 * b, max_relative = 1e-12);
        }
    }

    #[test]
    fn load_params_roundtrip() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let net: Mlp<f64> = Mlp::new(&[4, 6, 2], &mut rng);
        let flat: Vec<f64> = net.params().collect();
        let mut other = net.zeros_like();
        other.load_params(&flat);
        assert_eq!(net, other);
    }
}
