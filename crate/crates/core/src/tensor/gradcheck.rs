//! Central finite-difference verification of tape gradients.
//!
//! The checked function may return any shape; non-scalar outputs are reduced
//! with a seeded random projection so every output element contributes.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct CheckOptions {
    pub tolerance: f64,
    /// Coordinates probed per input; larger inputs are subsampled.
    pub max_coords: usize,
    pub seed: u64,
    /// Relative bias injected into the analytic gradient (test hook).
    pub perturb: f64,
}

impl CheckOptions {
    pub fn new(tolerance: f64) -> Self {
        CheckOptions {
            tolerance,
            max_coords: 64,
            seed: 0,
            perturb: 0.0,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = n;
        self
    }

    pub fn perturb(mut self, p: f64) -> Self {
        self.perturb = p;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub checked: usize,
    pub worst: Option<Probe>,
    /// Set when a gradient was non-finite.
    pub failure: Option<String>,
}

/// `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn project(out: &Tensor<f64>, weights: &Option<Vec<f64>>) -> f64 {
    match weights {
        Some(w) => out.data().iter().zip(w).map(|(a, b)| a * b).sum(),
        None => out.data()[0],
    }
}

/// Compares tape gradients of `f` with central differences, step
/// `h = 1e-5 * max(1, |x|)` per coordinate.
pub fn finite_diff_check<F>(mut f: F, inputs: &[Tensor<f64>], opts: &CheckOptions) -> Result<GradReport>
where
    F: for<'t> FnMut(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let weights = (out.numel() > 1).then(|| (0..out.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>());
    let loss = match &weights {
        Some(w) => out.mul(tape.constant(Tensor::new(out.shape(), w.clone())?))?.sum(),
        None => out,
    };
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|v| grads.get_or_zeros(*v)).collect();
    drop(tape);

    let mut eval = |ins: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vs: Vec<Var<'_, f64>> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vs)?;
        let v = out.value();
        Ok(project(&v, &weights))
    };

    let mut report = GradReport {
        max_rel_err: 0.0,
        pass: true,
        checked: 0,
        worst: None,
        failure: None,
    };
    let mut probe_inputs = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(&mut rng, n, opts.max_coords).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let x = input.data()[idx];
            let h = 1e-5 * x.abs().max(1.0);
            probe_inputs[i].data_mut()[idx] = x + h;
            let plus = eval(&probe_inputs)?;
            probe_inputs[i].data_mut()[idx] = x - h;
            let minus = eval(&probe_inputs)?;
            probe_inputs[i].data_mut()[idx] = x;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i][idx] * (1.0 + opts.perturb) + opts.perturb * 1e-2;
            report.checked += 1;
            if !a.is_finite() || !numeric.is_finite() {
                report.pass = false;
                report.max_rel_err = f64::INFINITY;
                report.failure = Some(format!(
                    "non-finite gradient at input {i} index {idx}: analytic {a}, numeric {numeric}"
                ));
                return Ok(report);
            }
            let err = relative_error(a, numeric);
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some(Probe {
                    input: i,
                    index: idx,
                    analytic: a,
                    numeric,
                    rel_err: err,
                });
            }
        }
    }
    report.pass = report.max_rel_err <= opts.tolerance;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_map_is_exact() {
        let a = rand_tensor(&[3, 4], 1);
        let b = rand_tensor(&[4, 2], 2);
        let r = finite_diff_check(|_, v| v[0].matmul(v[1]), &[a, b], &CheckOptions::new(1e-6)).unwrap();
        assert!(r.pass);
        assert!(r.max_rel_err < 1e-9, "{}", r.max_rel_err);
        assert_eq!(r.checked, 20);
    }

    #[test]
    fn relu_away_from_kink() {
        let x = Tensor::new([4], vec![-0.8, -0.3, 0.4, 1.2]).unwrap();
        let r = finite_diff_check(|_, v| Ok(v[0].relu()), &[x], &CheckOptions::new(1e-6)).unwrap();
        assert!(r.pass);
    }

    #[test]
    fn perturbation_is_detected() {
        let x = rand_tensor(&[5], 4);
        let r = finite_diff_check(|_, v| Ok(v[0].tanh()), &[x], &CheckOptions::new(1e-6).perturb(0.05)).unwrap();
        assert!(!r.pass);
        assert!(r.worst.is_some());
    }

    #[test]
    fn subsampling_limits_probes() {
        let x = rand_tensor(&[1000], 9);
        let r = finite_diff_check(|_, v| Ok(v[0].scale(2.0)), &[x], &CheckOptions::new(1e-6).max_coords(17)).unwrap();
        assert_eq!(r.checked, 17);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1e-3, 2e-3), 1e-3);
        assert!((relative_error(100.0, 101.0) - 1.0 / 101.0).abs() < 1e-15);
    }
}
