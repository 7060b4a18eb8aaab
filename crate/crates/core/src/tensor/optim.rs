use indexmap::IndexMap;

use super::{ParamStore, Real};
use crate::error::{Error, Result};

/// RMSProp running mean-square accumulators, keyed by parameter name.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    acc: IndexMap<String, Vec<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !(0.0..1.0).contains(&decay) || !(epsilon >= 0.0) {
            return Err(Error::config(format!(
                "rmsprop: need lr > 0, decay in [0,1), eps >= 0 (got {learning_rate}, {decay}, {epsilon})"
            )));
        }
        Ok(OptimizerState {
            learning_rate,
            decay,
            epsilon,
            acc: IndexMap::new(),
        })
    }

    pub fn accumulator(&self, name: &str) -> Option<&[T]> {
        self.acc.get(name).map(|v| v.as_slice())
    }

    pub fn accumulators(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.acc.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Restores an accumulator, e.g. from a checkpoint.
    pub fn set_accumulator(&mut self, name: impl Into<String>, values: Vec<T>) -> Result<()> {
        if values.iter().any(|v| *v < T::zero() || !v.is_finite()) {
            return Err(Error::invariant("rmsprop accumulator entries must be finite and non-negative"));
        }
        self.acc.insert(name.into(), values);
        Ok(())
    }
}

/// One RMSProp update of every parameter, then zeroes the gradients:
/// `acc = decay*acc + (1-decay)*g^2`, `p -= lr*g/(sqrt(acc)+eps)`.
pub fn rmsprop_step<T: Real>(params: &mut ParamStore<T>, state: &mut OptimizerState<T>) -> Result<()> {
    for (name, p) in params.iter() {
        if p.grad().is_none() {
            return Err(Error::invariant(format!("parameter {name} has no accumulated gradient")));
        }
    }
    let lr = T::lit(state.learning_rate);
    let decay = T::lit(state.decay);
    let eps = T::lit(state.epsilon);
    for (name, p) in params.iter_mut() {
        let acc = state
            .acc
            .entry(name.to_string())
            .or_insert_with(|| vec![T::zero(); p.numel()]);
        if acc.len() != p.numel() {
            return Err(Error::shape("rmsprop_step", &[acc.len()], p.shape()));
        }
        let (data, grad) = p.data_and_grad_mut();
        let grad = grad.expect("checked above");
        for ((w, g), a) in data.iter_mut().zip(grad.iter_mut()).zip(acc.iter_mut()) {
            *a = decay * *a + (T::one() - decay) * *g * *g;
            *w -= lr * *g / (a.sqrt() + eps);
            *g = T::zero();
        }
    }
    Ok(())
}

/// Clamps every parameter entry to `[-c, c]`.
pub fn clip_params<T: Real>(params: &mut ParamStore<T>, c: f64) -> Result<()> {
    if !(c > 0.0) {
        return Err(Error::config(format!("clipping constant must be positive, got {c}")));
    }
    let c = T::lit(c);
    for (_, p) in params.iter_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = v.max(-c).min(c));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new([values.len()], values.to_vec()).unwrap()).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore<f64>, g: &[f64]) {
        s.get_mut("w").unwrap().grad_mut().unwrap().copy_from_slice(g);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = store(&[0.3, -0.2]);
        let mut opt = OptimizerState::new(5e-5, 0.9, 1e-10).unwrap();
        rmsprop_step(&mut s, &mut opt).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.3, -0.2]);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        let mut s = store(&[0.0]);
        set_grad(&mut s, &[1.0]);
        let mut opt = OptimizerState::new(5e-5, 0.9, 1e-10).unwrap();
        rmsprop_step(&mut s, &mut opt).unwrap();
        let expected = -5e-5 / (0.1f64.sqrt() + 1e-10);
        assert!((s.get("w").unwrap().data()[0] - expected).abs() < 1e-18);
        assert_eq!(s.get("w").unwrap().grad().unwrap(), &[0.0]);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let grads = [0.7, -1.3];
        let (lr, decay, eps) = (5e-5, 0.9, 1e-10);
        let (mut p, mut a) = (0.25f64, 0.0f64);
        for g in grads {
            a = decay * a + (1.0 - decay) * g * g;
            p -= lr * g / (a.sqrt() + eps);
        }
        let mut s = store(&[0.25]);
        let mut opt = OptimizerState::new(lr, decay, eps).unwrap();
        for g in grads {
            set_grad(&mut s, &[g]);
            rmsprop_step(&mut s, &mut opt).unwrap();
        }
        assert!((s.get("w").unwrap().data()[0] - p).abs() <= 1e-12);
        assert!((opt.accumulator("w").unwrap()[0] - a).abs() <= 1e-12);
    }

    #[test]
    fn missing_gradient_is_an_invariant_error() {
        let mut s = store(&[1.0]);
        s.get_mut("w").unwrap().set_requires_grad(false);
        let mut opt = OptimizerState::new(1e-3, 0.9, 1e-10).unwrap();
        assert!(matches!(rmsprop_step(&mut s, &mut opt), Err(Error::Invariant(_))));
    }

    #[test]
    fn clip_cases() {
        let mut s = store(&[0.5, -0.5, 0.001]);
        clip_params(&mut s, 0.01).unwrap();
        assert_eq!(s.get("w").unwrap().data(), &[0.01, -0.01, 0.001]);
        let mut inside = store(&[0.1, -0.2]);
        clip_params(&mut inside, 1.0).unwrap();
        assert_eq!(inside.get("w").unwrap().data(), &[0.1, -0.2]);
        assert!(matches!(clip_params(&mut s, 0.0), Err(Error::Config(_))));
        assert!(clip_params(&mut s, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn clip_bounds_and_idempotence(values in proptest::collection::vec(-10.0f64..10.0, 1..64), c in 1e-4f64..2.0) {
            let mut s = store(&values);
            clip_params(&mut s, c).unwrap();
            prop_assert!(s.max_abs() <= c);
            let once = s.clone();
            clip_params(&mut s, c).unwrap();
            prop_assert_eq!(once, s);
        }

        #[test]
        fn accumulators_stay_non_negative(grads in proptest::collection::vec(-5.0f64..5.0, 1..16)) {
            let mut s = store(&vec![0.0; grads.len()]);
            let mut opt = OptimizerState::new(1e-3, 0.9, 1e-10).unwrap();
            for _ in 0..3 {
                set_grad(&mut s, &grads);
                rmsprop_step(&mut s, &mut opt).unwrap();
            }
            prop_assert!(opt.accumulator("w").unwrap().iter().all(|a| *a >= 0.0));
        }
    }
}
