//! Dynamic adaptive weighting of the two tasks.
//!
//! A small network maps the balanced task losses to a softmax pair of task
//! weights: `x = [in_r, in_c]`, `h = relu(fc1 x)`, `(w_r, w_c) = softmax(fc2
//! h)`. The output layer starts at zero, so a fresh module emits exactly
//! `(0.5, 0.5)` and sends no gradient back into the losses; it drifts away
//! from the even split only as its own training signal accumulates.
//!
//! The module also owns the imbalance knobs `alpha` and `beta` used by
//! [`crate::losses::imbalance_loss`]. They are plain parameters here; their
//! gradients are computed analytically by the trainer and clamped to a safe
//! range after each update.

use alloc::format;
use alloc::vec;

use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::nn::{Binder, LinearLayer, ParameterStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Width of the hidden layer.
pub const HIDDEN_DIM: usize = 16;

pub const ALPHA_NAME: &str = "dao.alpha";
pub const BETA_NAME: &str = "dao.beta";
pub const ALPHA_INIT: f64 = 0.1;
pub const BETA_INIT: f64 = 1.0;
pub const ALPHA_RANGE: (f64, f64) = (0.0, 10.0);
pub const BETA_RANGE: (f64, f64) = (0.0, 5.0);

/// Softmax task weights, each a graph scalar.
pub struct TaskWeights {
    pub w_r: Var,
    pub w_c: Var,
}

/// The weighting network and imbalance knobs, with their own parameter store
/// (they are optimized separately from the model).
#[derive(Clone)]
pub struct DaoModule {
    pub params: ParameterStore,
    fc1: LinearLayer,
    fc2: LinearLayer,
}

impl DaoModule {
    pub fn init(rng: &mut Rng) -> Result<Self> {
        let mut params = ParameterStore::new();
        let fc1 = LinearLayer::init(&mut params, "dao.fc1", 2, HIDDEN_DIM, rng)?;
        let fc2 = LinearLayer::init(&mut params, "dao.fc2", HIDDEN_DIM, 2, rng)?;
        // Zero output layer: even split at step zero, no gradient leakage
        // into the model through the weighting path until fc2 moves.
        for x in params.get_mut(&fc2.w).expect("registered").data_mut() {
            *x = 0.0;
        }
        params.insert(ALPHA_NAME, Tensor::scalar(ALPHA_INIT))?;
        params.insert(BETA_NAME, Tensor::scalar(BETA_INIT))?;
        Ok(Self { params, fc1, fc2 })
    }

    pub fn alpha(&self) -> f64 {
        self.params.get(ALPHA_NAME).expect("registered").data()[0]
    }

    pub fn beta(&self) -> f64 {
        self.params.get(BETA_NAME).expect("registered").data()[0]
    }

    /// Clamp the knobs back into their stable ranges after an update.
    pub fn clamp_knobs(&mut self) {
        for (name, (lo, hi)) in [(ALPHA_NAME, ALPHA_RANGE), (BETA_NAME, BETA_RANGE)] {
            let slot = &mut self.params.get_mut(name).expect("registered").data_mut()[0];
            *slot = slot.clamp(lo, hi);
        }
    }

    /// Map two balanced loss scalars to softmax task weights on `tape`.
    /// Differentiable in the inputs and the network parameters.
    pub fn forward(
        &self,
        tape: &Tape,
        binder: &mut Binder,
        in_r: &Var,
        in_c: &Var,
    ) -> Result<TaskWeights> {
        for v in [in_r, in_c] {
            if v.shape() != vec![1] {
                return Err(Error::Shape {
                    op: "dao_forward",
                    lhs: v.shape(),
                    rhs: vec![1],
                });
            }
        }
        let x = tape.concat(&[in_r.clone(), in_c.clone()])?.reshape(vec![1, 2])?;
        let h = self.fc1.forward(tape, binder, &x)?.relu();
        let s = self.fc2.forward(tape, binder, &h)?.reshape(vec![2])?;
        let w = s.softmax()?;
        Ok(TaskWeights {
            w_r: w.gather(&[0])?,
            w_c: w.gather(&[1])?,
        })
    }

    /// Value-level forward for oracles: same arithmetic on a throwaway tape.
    pub fn weights_value(&self, in_r: f64, in_c: f64) -> Result<(f64, f64)> {
        if !in_r.is_finite() || !in_c.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite weighting inputs {in_r}, {in_c}"
            )));
        }
        let tape = Tape::new();
        let mut binder = Binder::new(&self.params);
        let a = tape.leaf(Tensor::scalar(in_r));
        let b = tape.leaf(Tensor::scalar(in_c));
        let w = self.forward(&tape, &mut binder, &a, &b)?;
        Ok((w.w_r.item(), w.w_c.item()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff;
    use crate::rng::{stream, Rng};

    fn module(seed: u64) -> DaoModule {
        let mut rng = Rng::seeded(seed, stream::INIT);
        DaoModule::init(&mut rng).unwrap()
    }

    #[test]
    fn fresh_module_emits_exact_even_split() {
        let dao = module(11);
        assert_eq!(dao.alpha(), ALPHA_INIT);
        assert_eq!(dao.beta(), BETA_INIT);
        for (a, b) in [(0.7, 2.3), (0.0, 0.0), (5.0, 0.01)] {
            let (w_r, w_c) = dao.weights_value(a, b).unwrap();
            assert_eq!(w_r.to_bits(), 0.5f64.to_bits());
            assert_eq!(w_c.to_bits(), 0.5f64.to_bits());
        }
    }

    #[test]
    fn parameter_census() {
        let dao = module(11);
        // fc1: 2*16 + 16, fc2: 16*2 + 2, alpha, beta.
        assert_eq!(dao.params.trainable_value_count(), 48 + 34 + 2);
    }

    #[test]
    fn weights_stay_on_the_simplex_once_trained() {
        let mut dao = module(4);
        let mut rng = Rng::seeded(91, stream::INIT);
        for x in dao.params.get_mut("dao.fc2.w").unwrap().data_mut() {
            *x = rng.normal(0.0, 0.5);
        }
        for (a, b) in [(0.1, 3.0), (2.0, 2.0), (0.0, 0.4), (9.0, 0.2)] {
            let (w_r, w_c) = dao.weights_value(a, b).unwrap();
            assert!(w_r > 0.0 && w_c > 0.0);
            assert!((w_r + w_c - 1.0).abs() < 1e-12);
        }
        // Same module and inputs, fresh tapes: bitwise repeatable.
        let first = dao.weights_value(0.3, 1.7).unwrap();
        let second = dao.weights_value(0.3, 1.7).unwrap();
        assert_eq!(first.0.to_bits(), second.0.to_bits());
        assert_eq!(first.1.to_bits(), second.1.to_bits());
        assert!(dao.weights_value(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn zero_output_layer_blocks_gradients_upstream_at_step_zero() {
        let dao = module(8);
        let tape = Tape::new();
        let mut binder = Binder::new(&dao.params);
        let in_r = tape.leaf(Tensor::scalar(0.8));
        let in_c = tape.leaf(Tensor::scalar(1.4));
        let w = dao.forward(&tape, &mut binder, &in_r, &in_c).unwrap();
        let loss = w.w_r.scale(0.8).add(&w.w_c.scale(1.4)).unwrap();
        tape.backward(&loss).unwrap();
        let grads = binder.grads();
        // The output layer trains from the very first step...
        let fc2_b = grads.get("dao.fc2.b").unwrap();
        assert!(fc2_b.data().iter().any(|g| *g != 0.0), "{fc2_b:?}");
        // ...but nothing propagates past its zero weights yet.
        assert!(grads.get("dao.fc1.w").unwrap().data().iter().all(|g| *g == 0.0));
        assert!(grads.get("dao.fc1.b").unwrap().data().iter().all(|g| *g == 0.0));
        assert_eq!(tape.grad(&in_r).unwrap().data(), &[0.0]);
        assert_eq!(tape.grad(&in_c).unwrap().data(), &[0.0]);
        // The knobs never join this graph.
        assert_eq!(grads.get(ALPHA_NAME).unwrap().data(), &[0.0]);
    }

    #[test]
    fn backward_matches_finite_differences_once_fc2_is_nonzero() {
        let mut dao = module(21);
        let mut rng = Rng::seeded(5, stream::INIT);
        for x in dao.params.get_mut("dao.fc2.w").unwrap().data_mut() {
            *x = rng.normal(0.0, 0.3);
        }
        let run = |params: &ParameterStore| -> crate::Result<f64> {
            let tape = Tape::new();
            let mut binder = Binder::new(params);
            let in_r = tape.leaf(Tensor::scalar(0.8));
            let in_c = tape.leaf(Tensor::scalar(1.4));
            // Rebuild the module view over the perturbed store.
            let fc1 = LinearLayer {
                w: "dao.fc1.w".into(),
                b: "dao.fc1.b".into(),
                in_dim: 2,
                out_dim: HIDDEN_DIM,
            };
            let fc2 = LinearLayer {
                w: "dao.fc2.w".into(),
                b: "dao.fc2.b".into(),
                in_dim: HIDDEN_DIM,
                out_dim: 2,
            };
            let x = tape.concat(&[in_r, in_c])?.reshape(vec![1, 2])?;
            let h = fc1.forward(&tape, &mut binder, &x)?.relu();
            let s = fc2.forward(&tape, &mut binder, &h)?.reshape(vec![2])?;
            let w = s.softmax()?;
            let loss = w.gather(&[0])?.scale(0.8).add(&w.gather(&[1])?.scale(1.4))?;
            Ok(loss.item())
        };

        let tape = Tape::new();
        let mut binder = Binder::new(&dao.params);
        let in_r = tape.leaf(Tensor::scalar(0.8));
        let in_c = tape.leaf(Tensor::scalar(1.4));
        let w = dao.forward(&tape, &mut binder, &in_r, &in_c).unwrap();
        let loss = w.w_r.scale(0.8).add(&w.w_c.scale(1.4)).unwrap();
        tape.backward(&loss).unwrap();
        let ad = binder.grads();
        let fd = finite_diff(run, &mut dao.params, 1e-5).unwrap();
        for (name, fd_grad) in fd.iter() {
            let ad_grad = ad.get(name).unwrap();
            for (a, n) in ad_grad.data().iter().zip(fd_grad.data()) {
                assert!(
                    ((a - n) / (n.abs() + 1e-8)).abs() < 1e-4,
                    "{name}: {a} vs {n}"
                );
            }
        }
    }

    #[test]
    fn clamp_pins_knobs_to_their_ranges() {
        let mut dao = module(2);
        dao.params.get_mut(ALPHA_NAME).unwrap().data_mut()[0] = 12.0;
        dao.params.get_mut(BETA_NAME).unwrap().data_mut()[0] = -0.3;
        dao.clamp_knobs();
        assert_eq!(dao.alpha(), ALPHA_RANGE.1);
        assert_eq!(dao.beta(), BETA_RANGE.0);
        dao.params.get_mut(ALPHA_NAME).unwrap().data_mut()[0] = 0.25;
        dao.clamp_knobs();
        assert_eq!(dao.alpha(), 0.25);
    }

    #[test]
    fn forward_rejects_non_scalar_inputs() {
        let dao = module(3);
        let tape = Tape::new();
        let mut binder = Binder::new(&dao.params);
        let bad = tape.leaf(Tensor::from_vec(vec![1.0, 2.0]).unwrap());
        let ok = tape.leaf(Tensor::scalar(1.0));
        assert!(matches!(
            dao.forward(&tape, &mut binder, &bad, &ok),
            Err(Error::Shape { .. })
        ));
    }
}
