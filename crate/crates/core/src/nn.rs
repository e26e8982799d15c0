//! Parameter storage, MLPs and the Adam optimizer on top of [`crate::tensor`].

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter arrays, in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Flattened copy of every parameter, in store order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    /// Inverse of [`ParamStore::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for v in &mut self.values {
            let n = v.len();
            v.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter vector length");
    }

    /// Replaces the parameter values, keeping names; shapes must agree.
    pub fn load_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(TensorError::Invalid {
                op: "load_values",
                msg: format!("expected {} arrays, got {}", self.values.len(), values.len()),
            });
        }
        for (old, new) in self.values.iter().zip(&values) {
            if old.shape() != new.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_values",
                    lhs: old.shape().to_vec(),
                    rhs: new.shape().to_vec(),
                });
            }
        }
        self.values = values;
        Ok(())
    }
}

/// One tape leaf per parameter, created at the start of a forward pass.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, store: &ParamStore) -> Self {
        Self::bind_with(tape, store, true)
    }

    /// Binds parameters as constants; forward values are identical, no gradients flow.
    pub fn bind_frozen(tape: &mut Tape, store: &ParamStore) -> Self {
        Self::bind_with(tape, store, false)
    }

    fn bind_with(tape: &mut Tape, store: &ParamStore, requires_grad: bool) -> Self {
        let vars = store
            .values
            .iter()
            .map(|v| tape.leaf(v.clone(), requires_grad))
            .collect();
        Self { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients aligned with the store; parameters the loss never touched get zeros.
    pub fn grads(&self, tape: &Tape) -> Vec<Tensor> {
        self.vars
            .iter()
            .map(|&v| {
                let shape = tape.shape(v).to_vec();
                match tape.grad(v) {
                    Some(g) => Tensor::new(shape, g.to_vec()).expect("grad shape"),
                    None => Tensor::zeros(&shape),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Silu => tape.silu(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Debug, Clone)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

/// Fully connected network; the activation is applied between layers, not after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Linear>,
    activation: Activation,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. With `zero_last` the output layer starts at zero.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        widths: &[usize],
        activation: Activation,
        zero_last: bool,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        assert!(widths.iter().all(|&w| w > 0), "layer widths must be positive");
        let n_layers = widths.len() - 1;
        let mut layers = Vec::with_capacity(n_layers);
        for (k, w) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let data = if zero_last && k + 1 == n_layers {
                vec![0.0; fan_in * fan_out]
            } else {
                let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let u = Uniform::new_inclusive(-lim, lim).expect("finite bounds");
                (0..fan_in * fan_out).map(|_| u.sample(rng)).collect()
            };
            let weight = store.add(
                format!("{name}.{k}.weight"),
                Tensor::matrix(fan_in, fan_out, data).expect("weight shape"),
            );
            let bias = store.add(format!("{name}.{k}.bias"), Tensor::zeros(&[fan_out]));
            layers.push(Linear { weight, bias });
        }
        Self {
            widths: widths.to_vec(),
            layers,
            activation,
        }
    }

    pub fn in_width(&self) -> usize {
        self.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Parameter ids of the final linear layer.
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        let l = self.layers.last().unwrap();
        (l.weight, l.bias)
    }

    pub fn forward(&self, tape: &mut Tape, params: &BoundParams, x: Var) -> Result<Var> {
        let mut h = x;
        for (k, layer) in self.layers.iter().enumerate() {
            h = tape.matmul(h, params.var(layer.weight))?;
            h = tape.add_row(h, params.var(layer.bias))?;
            if k + 1 < self.layers.len() {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub skipped: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.values().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            step: 0,
            skipped: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Returns `false` (and counts the incident)
/// when any gradient entry is non-finite, leaving parameters and moments untouched.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> bool {
    assert_eq!(grads.len(), store.len(), "one gradient per parameter");
    if grads.iter().any(|g| !g.is_finite()) {
        state.skipped += 1;
        return false;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in store.values_mut().iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, (w, &gi)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            *w -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    true
}

/// Rescales gradients in place so their global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm.is_finite() && norm > max_norm && max_norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![x]));
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(1.5);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[Tensor::vector(vec![0.0])], &mut st, &AdamConfig::default());
        assert_eq!(s.values()[0].data(), &[1.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        adam_step(&mut s, &[Tensor::vector(vec![1.0])], &mut st, &cfg);
        // m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((s.values()[0].data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn repeated_steps_move_monotonically() {
        let mut s = scalar_store(0.0);
        let mut st = AdamState::new(&s);
        let cfg = AdamConfig::default();
        let g = [Tensor::vector(vec![2.0])];
        adam_step(&mut s, &g, &mut st, &cfg);
        let a = s.values()[0].data()[0];
        adam_step(&mut s, &g, &mut st, &cfg);
        let b = s.values()[0].data()[0];
        assert!(a < 0.0 && b < a);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut s = scalar_store(1.0);
        let mut st = AdamState::new(&s);
        let ok = adam_step(&mut s, &[Tensor::vector(vec![f64::NAN])], &mut st, &AdamConfig::default());
        assert!(!ok);
        assert_eq!(st.skipped, 1);
        assert_eq!(st.step, 0);
        assert_eq!(s.values()[0].data(), &[1.0]);
    }

    #[test]
    fn mlp_widths_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mlp = Mlp::new(&mut store, "m", &[5, 7, 2], Activation::Silu, false, &mut rng);
        assert_eq!(store.len(), 4);
        assert_eq!(store.get(store.find("m.0.weight").unwrap()).shape(), &[5, 7]);
        assert_eq!(store.get(store.find("m.1.weight").unwrap()).shape(), &[7, 2]);
        let mut tape = Tape::new();
        let p = BoundParams::bind(&mut tape, &store);
        let x = tape.constant(Tensor::zeros(&[3, 5]));
        let y = mlp.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.shape(y), &[3, 2]);
        let bad = tape.constant(Tensor::zeros(&[3, 4]));
        assert!(mlp.forward(&mut tape, &p, bad).is_err());
    }

    #[test]
    fn identical_seeds_identical_forward() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut store = ParamStore::new();
            let mlp = Mlp::new(&mut store, "m", &[4, 8, 3], Activation::Tanh, false, &mut rng);
            let mut tape = Tape::new();
            let p = BoundParams::bind(&mut tape, &store);
            let x = tape.constant(Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
            let y = mlp.forward(&mut tape, &p, x).unwrap();
            tape.value(y).data().to_vec()
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}
