//! Layers, named parameters, and the gradient-check oracle.
//!
//! Parameters live in a [`ParameterStore`] under dotted names and persist
//! across steps; a [`Binder`] mounts them onto a fresh [`Tape`] for one
//! forward/backward pass, making sure each parameter becomes exactly one leaf
//! so gradients never split across duplicate nodes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::math;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Whether stochastic layers (dropout) are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone)]
struct Entry {
    name: String,
    value: Tensor,
    trainable: bool,
}

/// Named parameters in insertion order.
#[derive(Clone, Default)]
pub struct ParameterStore {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new trainable parameter; names must be unique.
    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(Entry {
            name: name.to_string(),
            value,
            trainable: true,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Some(&mut self.entries[i].value),
            None => None,
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.index
            .get(name)
            .map(|&i| self.entries[i].trainable)
            .unwrap_or(false)
    }

    /// Flip the trainable flag on every parameter matching `pattern` and
    /// return how many matched. A pattern is an exact name, a prefix followed
    /// by `*`, or `*` alone.
    pub fn set_trainable(&mut self, pattern: &str, trainable: bool) -> usize {
        let mut hit = 0;
        for e in &mut self.entries {
            let matched = match pattern.strip_suffix('*') {
                Some(prefix) => e.name.starts_with(prefix),
                None => e.name == pattern,
            };
            if matched {
                e.trainable = trainable;
                hit += 1;
            }
        }
        hit
    }

    /// `(name, value, trainable)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, bool)> {
        self.entries
            .iter()
            .map(|e| (e.name.as_str(), &e.value, e.trainable))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar values held by trainable parameters.
    pub fn trainable_value_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.value.len())
            .sum()
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    entries: BTreeMap<String, Tensor>,
}

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, grad: Tensor) {
        self.entries.insert(name.to_string(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Euclidean norm over all entries concatenated.
    pub fn l2_norm(&self) -> f64 {
        let sq: f64 = self
            .entries
            .values()
            .flat_map(|t| t.data())
            .map(|x| x * x)
            .sum();
        math::sqrt(sq)
    }
}

/// Mounts store parameters onto one tape, once each.
pub struct Binder<'s> {
    store: &'s ParameterStore,
    bound: BTreeMap<String, Var>,
}

impl<'s> Binder<'s> {
    pub fn new(store: &'s ParameterStore) -> Self {
        Self {
            store,
            bound: BTreeMap::new(),
        }
    }

    /// Leaf for a named parameter, created on first use and reused after.
    pub fn var(&mut self, tape: &Tape, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(v.clone());
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter {name}")))?;
        let v = tape.leaf(value.clone());
        self.bound.insert(name.to_string(), v.clone());
        Ok(v)
    }

    /// Bound `(name, var)` pairs.
    pub fn bound(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.bound.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Gradients for every trainable parameter after a backward pass.
    /// Parameters that never joined the graph (or that no gradient reached)
    /// map to zero tensors; frozen parameters are excluded.
    pub fn grads(&self) -> GradientMap {
        let mut map = GradientMap::new();
        for (name, value, trainable) in self.store.iter() {
            if !trainable {
                continue;
            }
            let grad = self
                .bound
                .get(name)
                .and_then(|v| v.tape().grad(v))
                .unwrap_or_else(|| Tensor::zeros(value.shape().to_vec()));
            map.insert(name, grad);
        }
        map
    }

    /// Sum of squared gradients over trainable parameters whose name passes
    /// `filter`, without copying buffers.
    pub fn grad_sq_sum_where(&self, filter: impl Fn(&str) -> bool) -> f64 {
        let mut total = 0.0;
        for (name, var) in &self.bound {
            if self.store.is_trainable(name) && filter(name) {
                total += var.tape().grad_sq_sum(var);
            }
        }
        total
    }
}

/// Central-difference gradients of `f` with respect to every trainable
/// parameter. Each coordinate is perturbed by `±h` and restored to its exact
/// original bits. The oracle is deliberately independent of the reverse-mode
/// engine so the two can check each other.
pub fn finite_diff<F>(mut f: F, params: &mut ParameterStore, h: f64) -> Result<GradientMap>
where
    F: FnMut(&ParameterStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!("finite_diff step {h} must be > 0")));
    }
    let names: Vec<String> = params
        .iter()
        .filter(|(_, _, trainable)| *trainable)
        .map(|(name, _, _)| name.to_string())
        .collect();
    let mut map = GradientMap::new();
    for name in names {
        let (shape, len) = {
            let t = params.get(&name).expect("listed name");
            (t.shape().to_vec(), t.len())
        };
        let mut grad = vec![0.0; len];
        for i in 0..len {
            let orig = params.get(&name).expect("listed name").data()[i];
            params.get_mut(&name).expect("listed name").data_mut()[i] = orig + h;
            let fp = f(params)?;
            params.get_mut(&name).expect("listed name").data_mut()[i] = orig - h;
            let fm = f(params)?;
            params.get_mut(&name).expect("listed name").data_mut()[i] = orig;
            grad[i] = (fp - fm) / (2.0 * h);
        }
        map.insert(&name, Tensor::new(shape, grad)?);
    }
    Ok(map)
}

/// Xavier-uniform `(out, in)` weight matrix.
fn xavier(rng: &mut Rng, out_dim: usize, in_dim: usize) -> Tensor {
    let limit = math::sqrt(6.0 / (in_dim + out_dim) as f64);
    let data = (0..out_dim * in_dim)
        .map(|_| rng.range(-limit, limit))
        .collect();
    Tensor::new(vec![out_dim, in_dim], data).expect("sized init")
}

/// Dense layer `y = x Wᵀ + b` with `W` stored as `(out, in)`.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub w: String,
    pub b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearLayer {
    /// Register `{name}.w` (Xavier-uniform) and `{name}.b` (zeros).
    pub fn init(
        store: &mut ParameterStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Config(format!(
                "linear {name} with zero dimension ({in_dim}x{out_dim})"
            )));
        }
        let w = format!("{name}.w");
        let b = format!("{name}.b");
        store.insert(&w, xavier(rng, out_dim, in_dim))?;
        store.insert(&b, Tensor::zeros(vec![out_dim]))?;
        Ok(Self {
            w,
            b,
            in_dim,
            out_dim,
        })
    }

    /// `x` is `(batch, in)`; returns `(batch, out)`.
    pub fn forward(&self, tape: &Tape, binder: &mut Binder, x: &Var) -> Result<Var> {
        let w = binder.var(tape, &self.w)?;
        let b = binder.var(tape, &self.b)?;
        x.matmul(&w.transpose()?)?.add_row(&b)
    }
}

/// Inverted dropout: in train mode each value is zeroed with probability `p`
/// and survivors are scaled by `1/(1-p)`, so the expected value is unchanged;
/// in eval mode it is the identity.
#[derive(Debug, Clone)]
pub struct DropoutLayer {
    pub p: f64,
}

impl DropoutLayer {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        Ok(Self { p })
    }

    pub fn forward(&self, tape: &Tape, x: &Var, mode: Mode, rng: &mut Rng) -> Result<Var> {
        if mode == Mode::Eval || self.p == 0.0 {
            return Ok(x.clone());
        }
        let shape = x.shape();
        let len: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.uniform() >= self.p { keep } else { 0.0 })
            .collect();
        x.mul(&tape.leaf(Tensor::new(shape, mask)?))
    }
}

/// Low-rank adapter around a frozen dense layer:
/// `y = x Wᵀ + b + scale · drop(x) Vᵀ Uᵀ` with `U` of shape `(out, r)` and
/// `V` of shape `(r, in)`. `V` starts at zero so a fresh adapter is an exact
/// no-op; `scale` is `alpha / r` with `alpha = r`, giving 1.
#[derive(Debug, Clone)]
pub struct LoraLinear {
    pub base: LinearLayer,
    pub u: String,
    pub v: String,
    pub rank: usize,
    pub scale: f64,
    pub dropout: DropoutLayer,
}

impl LoraLinear {
    /// Wrap `base`, registering `{name}.lora_u` (N(0, 0.02²)) and
    /// `{name}.lora_v` (zeros). The base parameters themselves are left
    /// untouched; freezing them is the caller's choice.
    pub fn wrap(
        store: &mut ParameterStore,
        base: LinearLayer,
        name: &str,
        rank: usize,
        adapter_dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let max_rank = base.in_dim.min(base.out_dim);
        if rank == 0 || rank > max_rank {
            return Err(Error::Config(format!(
                "adapter rank {rank} outside 1..={max_rank} for a {}x{} layer",
                base.out_dim, base.in_dim
            )));
        }
        let u = format!("{name}.lora_u");
        let v = format!("{name}.lora_v");
        let u_data = (0..base.out_dim * rank)
            .map(|_| rng.normal(0.0, 0.02))
            .collect();
        store.insert(&u, Tensor::new(vec![base.out_dim, rank], u_data)?)?;
        store.insert(&v, Tensor::zeros(vec![rank, base.in_dim]))?;
        Ok(Self {
            base,
            u,
            v,
            rank,
            scale: 1.0,
            dropout: DropoutLayer::new(adapter_dropout)?,
        })
    }

    pub fn forward(
        &self,
        tape: &Tape,
        binder: &mut Binder,
        x: &Var,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<Var> {
        let base_out = self.base.forward(tape, binder, x)?;
        let branch = self.dropout.forward(tape, x, mode, rng)?;
        let u = binder.var(tape, &self.u)?;
        let v = binder.var(tape, &self.v)?;
        let delta = branch
            .matmul(&v.transpose()?)?
            .matmul(&u.transpose()?)?
            .scale(self.scale);
        base_out.add(&delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn store_with(values: &[(&str, Tensor)]) -> ParameterStore {
        let mut store = ParameterStore::new();
        for (name, t) in values {
            store.insert(name, t.clone()).unwrap();
        }
        store
    }

    #[test]
    fn store_rejects_duplicates_and_keeps_order() {
        let mut store = ParameterStore::new();
        store.insert("b", Tensor::scalar(1.0)).unwrap();
        store.insert("a", Tensor::scalar(2.0)).unwrap();
        assert!(store.insert("b", Tensor::scalar(3.0)).is_err());
        let names: Vec<&str> = store.names().collect();
        assert_eq!(names, vec!["b", "a"]);
    }

    #[test]
    fn set_trainable_patterns() {
        let mut store = store_with(&[
            ("backbone.l1.w", Tensor::scalar(0.0)),
            ("backbone.l2.w", Tensor::scalar(0.0)),
            ("head.w", Tensor::scalar(0.0)),
        ]);
        assert_eq!(store.set_trainable("backbone.*", false), 2);
        assert!(!store.is_trainable("backbone.l1.w"));
        assert!(store.is_trainable("head.w"));
        assert_eq!(store.set_trainable("head.w", false), 1);
        assert_eq!(store.set_trainable("*", true), 3);
        assert_eq!(store.set_trainable("missing", false), 0);
    }

    #[test]
    fn frozen_params_are_excluded_from_grads_and_unbound_are_zero() {
        let mut store = store_with(&[
            ("used.w", Tensor::from_vec(vec![2.0, 3.0]).unwrap()),
            ("frozen.w", Tensor::scalar(1.0)),
            ("idle.w", Tensor::from_vec(vec![5.0, 5.0, 5.0]).unwrap()),
        ]);
        store.set_trainable("frozen.*", false);
        let tape = Tape::new();
        let mut binder = Binder::new(&store);
        let w = binder.var(&tape, "used.w").unwrap();
        let loss = w.mul(&w).unwrap().sum();
        tape.backward(&loss).unwrap();
        let grads = binder.grads();
        assert_eq!(grads.get("used.w").unwrap().data(), &[4.0, 6.0]);
        assert!(grads.get("frozen.w").is_none());
        assert_eq!(grads.get("idle.w").unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn binder_reuses_one_leaf_per_name() {
        let store = store_with(&[("w", Tensor::scalar(2.0))]);
        let tape = Tape::new();
        let mut binder = Binder::new(&store);
        let a = binder.var(&tape, "w").unwrap();
        let b = binder.var(&tape, "w").unwrap();
        assert_eq!(a.id(), b.id());
        // Both uses feed one leaf, so the gradient is the sum of both paths.
        let loss = a.mul(&b).unwrap().sum();
        tape.backward(&loss).unwrap();
        assert_eq!(tape.grad(&a).unwrap().data(), &[4.0]);
    }

    #[test]
    fn finite_diff_matches_analytic_quadratic() {
        let mut store = store_with(&[("w", Tensor::from_vec(vec![1.0, -2.0, 0.5]).unwrap())]);
        let grads = finite_diff(
            |s| {
                Ok(s.get("w")
                    .unwrap()
                    .data()
                    .iter()
                    .map(|x| x * x)
                    .sum())
            },
            &mut store,
            1e-5,
        )
        .unwrap();
        let g = grads.get("w").unwrap();
        for (gi, x) in g.data().iter().zip([1.0, -2.0, 0.5]) {
            assert!((gi - 2.0 * x).abs() < 1e-9, "{gi} vs {}", 2.0 * x);
        }
        // Parameters restored to their exact original bits.
        assert_eq!(store.get("w").unwrap().data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn linear_forward_matches_hand_computation_and_gradcheck() {
        let mut rng = Rng::seeded(42, stream::INIT);
        let mut store = ParameterStore::new();
        let layer = LinearLayer::init(&mut store, "fc", 3, 2, &mut rng).unwrap();
        store.get_mut("fc.w").unwrap().data_mut().copy_from_slice(&[
            1.0, 2.0, 3.0, // row 0
            -1.0, 0.5, 0.0, // row 1
        ]);
        store.get_mut("fc.b").unwrap().data_mut().copy_from_slice(&[10.0, -10.0]);
        let x = Tensor::new(vec![1, 3], vec![1.0, 1.0, 2.0]).unwrap();
        let tape = Tape::new();
        let mut binder = Binder::new(&store);
        let y = layer
            .forward(&tape, &mut binder, &tape.leaf(x.clone()))
            .unwrap();
        assert_eq!(y.value().data(), &[19.0, -10.5]);

        // Gradcheck on gentle values; the hand case above saturates tanh,
        // which starves central differences of resolution.
        store.get_mut("fc.w").unwrap().data_mut().copy_from_slice(&[
            0.3, -0.2, 0.1, //
            -0.1, 0.05, 0.2,
        ]);
        store.get_mut("fc.b").unwrap().data_mut().copy_from_slice(&[0.2, -0.3]);

        // Reverse-mode and central differences agree on all layer params.
        let run = |s: &ParameterStore| -> crate::Result<f64> {
            let tape = Tape::new();
            let mut binder = Binder::new(s);
            let y = layer.forward(&tape, &mut binder, &tape.leaf(x.clone()))?;
            Ok(y.tanh().sum().item())
        };
        let tape = Tape::new();
        let mut binder = Binder::new(&store);
        let y = layer
            .forward(&tape, &mut binder, &tape.leaf(x.clone()))
            .unwrap()
            .tanh()
            .sum();
        tape.backward(&y).unwrap();
        let ad = binder.grads();
        let fd = finite_diff(|s| run(s), &mut store, 1e-5).unwrap();
        for (name, fd_grad) in fd.iter() {
            let ad_grad = ad.get(name).unwrap();
            for (a, n) in ad_grad.data().iter().zip(fd_grad.data()) {
                assert!(((a - n) / (n.abs() + 1e-8)).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_masks() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(vec![1.0; 1000]).unwrap());
        let layer = DropoutLayer::new(0.25).unwrap();
        let mut rng = Rng::seeded(7, stream::DROPOUT);
        let eval = layer.forward(&tape, &x, Mode::Eval, &mut rng).unwrap();
        assert_eq!(eval.id(), x.id());

        let train = layer.forward(&tape, &x, Mode::Train, &mut rng).unwrap();
        let vals = train.value();
        let keep = 1.0 / 0.75;
        let mut kept = 0usize;
        for &v in vals.data() {
            assert!(v == 0.0 || (v - keep).abs() < 1e-12, "unexpected {v}");
            if v != 0.0 {
                kept += 1;
            }
        }
        // Survivor rate near 1-p and scaled so the expectation is preserved.
        assert!((kept as f64 / 1000.0 - 0.75).abs() < 0.06, "kept {kept}");
    }

    #[test]
    fn dropout_mask_sequence_is_seed_deterministic() {
        let layer = DropoutLayer::new(0.5).unwrap();
        let draw = || {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::from_vec(vec![1.0; 64]).unwrap());
            let mut rng = Rng::seeded(13, stream::DROPOUT);
            let mut all = Vec::new();
            for _ in 0..3 {
                let y = layer.forward(&tape, &x, Mode::Train, &mut rng).unwrap();
                all.extend_from_slice(y.value().data());
            }
            all
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn dropout_rejects_bad_rate() {
        assert!(DropoutLayer::new(1.0).is_err());
        assert!(DropoutLayer::new(-0.1).is_err());
        assert!(DropoutLayer::new(0.0).is_ok());
    }

    #[test]
    fn fresh_lora_is_exact_noop_and_counts_params() {
        let mut rng = Rng::seeded(3, stream::INIT);
        let mut store = ParameterStore::new();
        let base = LinearLayer::init(&mut store, "fc", 6, 4, &mut rng).unwrap();
        let before = store.trainable_value_count();
        let lora = LoraLinear::wrap(&mut store, base.clone(), "fc", 2, 0.05, &mut rng).unwrap();
        assert_eq!(
            store.trainable_value_count() - before,
            2 * (6 + 4),
            "adapter adds r*(in+out) values"
        );

        let x = Tensor::new(vec![3, 6], (0..18).map(|i| i as f64 * 0.1).collect()).unwrap();
        let tape = Tape::new();
        let mut binder = Binder::new(&store);
        let xv = tape.leaf(x.clone());
        let plain = base.forward(&tape, &mut binder, &xv).unwrap();
        let mut rng2 = Rng::seeded(9, stream::DROPOUT);
        let adapted = lora
            .forward(&tape, &mut binder, &xv, Mode::Train, &mut rng2)
            .unwrap();
        let pb: Vec<u64> = plain.value().data().iter().map(|f| f.to_bits()).collect();
        let ab: Vec<u64> = adapted.value().data().iter().map(|f| f.to_bits()).collect();
        assert_eq!(pb, ab, "zero-init adapter must not change the output");
    }

    #[test]
    fn lora_rank_bounds() {
        let mut rng = Rng::seeded(3, stream::INIT);
        let mut store = ParameterStore::new();
        let base = LinearLayer::init(&mut store, "fc", 6, 4, &mut rng).unwrap();
        assert!(LoraLinear::wrap(&mut store, base.clone(), "fc2", 0, 0.0, &mut rng).is_err());
        assert!(LoraLinear::wrap(&mut store, base, "fc3", 5, 0.0, &mut rng).is_err());
    }
}
