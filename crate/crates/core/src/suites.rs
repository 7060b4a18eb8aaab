//! Registered finite-difference suites covering every differentiable tape
//! operation and the composite synthesis graph, all in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nets::{sample_latent, Model, ModelConfig};
use crate::tensor::gradcheck::{finite_diff_check, CheckOptions, GradReport};
use crate::tensor::{BatchNormConfig, ConvGeometry, Mode, RunningStats, Tensor};
use crate::transform::{
    affine_from_raw, affine_grid, apply_kernel, apply_sequence_batched, bilinear_sample, kernel_from_raw, KernelNorm,
    TransformKind,
};

/// Tolerance for ops that are linear or elementwise in their inputs.
pub const TOL_LINEAR: f64 = 1e-6;
pub const TOL_DEFAULT: f64 = 1e-4;
pub const SEEDS_PER_CASE: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Ops,
    Pipeline,
}

pub struct Case {
    pub name: &'static str,
    pub tolerance: f64,
    run: fn(u64, &CheckOptions) -> Result<GradReport>,
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub tolerance: f64,
    /// Worst over all seeds.
    pub max_rel_err: f64,
    pub pass: bool,
    pub detail: Option<String>,
}

fn uniform(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(lo..hi))
}

fn r(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, seed, -1.0, 1.0)
}

macro_rules! case {
    ($name:expr, $tol:expr, |$seed:ident, $opts:ident| $body:expr) => {
        Case {
            name: $name,
            tolerance: $tol,
            run: |$seed, $opts| $body,
        }
    };
}

fn check(
    f: impl for<'t> FnMut(&'t crate::tensor::Tape<f64>, &[crate::tensor::Var<'t, f64>]) -> Result<crate::tensor::Var<'t, f64>>,
    inputs: &[Tensor<f64>],
    opts: &CheckOptions,
) -> Result<GradReport> {
    finite_diff_check(f, inputs, opts)
}

pub fn ops_cases() -> Vec<Case> {
    vec![
        case!("matmul", TOL_LINEAR, |s, o| check(|_, v| v[0].matmul(v[1]), &[r(&[3, 4], s), r(&[4, 5], s + 99)], o)),
        case!("add", TOL_LINEAR, |s, o| check(|_, v| v[0].add(v[1]), &[r(&[2, 3], s), r(&[2, 3], s + 99)], o)),
        case!("sub", TOL_LINEAR, |s, o| check(|_, v| v[0].sub(v[1]), &[r(&[2, 3], s), r(&[2, 3], s + 99)], o)),
        case!("mul", TOL_LINEAR, |s, o| check(|_, v| v[0].mul(v[1]), &[r(&[2, 3], s), r(&[2, 3], s + 99)], o)),
        case!("scale", TOL_LINEAR, |s, o| check(|_, v| Ok(v[0].scale(-1.7)), &[r(&[5], s)], o)),
        case!("add_scalar", TOL_LINEAR, |s, o| check(|_, v| Ok(v[0].add_scalar(0.3)), &[r(&[5], s)], o)),
        case!("relu", TOL_LINEAR, |s, o| check(|_, v| Ok(v[0].relu()), &[r(&[12], s)], o)),
        case!("tanh", TOL_LINEAR, |s, o| check(|_, v| Ok(v[0].tanh()), &[r(&[12], s)], o)),
        case!("sum", TOL_LINEAR, |s, o| check(|_, v| Ok(v[0].sum()), &[r(&[3, 4], s)], o)),
        case!("mean", TOL_LINEAR, |s, o| check(|_, v| Ok(v[0].mean()), &[r(&[3, 4], s)], o)),
        case!("sum_axis", TOL_LINEAR, |s, o| check(|_, v| v[0].sum_axis(1), &[r(&[2, 3, 4], s)], o)),
        case!("mean_axis", TOL_LINEAR, |s, o| check(|_, v| v[0].mean_axis(2), &[r(&[2, 3, 4], s)], o)),
        case!("reshape", TOL_LINEAR, |s, o| check(|_, v| v[0].reshape(&[4, 3]), &[r(&[2, 6], s)], o)),
        case!("permute", TOL_LINEAR, |s, o| check(|_, v| v[0].permute(&[2, 0, 1]), &[r(&[2, 3, 4], s)], o)),
        case!("slice_axis", TOL_LINEAR, |s, o| check(|_, v| v[0].slice_axis(1, 1, 2), &[r(&[2, 4, 3], s)], o)),
        case!("concat", TOL_LINEAR, |s, o| check(
            |_, v| crate::tensor::Var::concat(&[v[0], v[1]], 1),
            &[r(&[2, 2, 3], s), r(&[2, 1, 3], s + 99)],
            o
        )),
        case!("repeat_rows", TOL_LINEAR, |s, o| check(|_, v| v[0].repeat_rows(3), &[r(&[2, 3], s)], o)),
        case!("add_channel_bias", TOL_LINEAR, |s, o| check(
            |_, v| v[0].add_channel_bias(v[1]),
            &[r(&[2, 3, 2, 2], s), r(&[3], s + 99)],
            o
        )),
        case!("mul_channel_broadcast", TOL_LINEAR, |s, o| check(
            |_, v| v[0].mul_channel_broadcast(v[1]),
            &[r(&[2, 3, 2, 2], s), r(&[2, 1, 2, 2], s + 99)],
            o
        )),
        case!("softmax", TOL_DEFAULT, |s, o| check(|_, v| v[0].softmax(1), &[r(&[2, 4, 3], s)], o)),
        case!("conv2d", TOL_LINEAR, |s, o| check(
            |_, v| v[0].conv2d(v[1], 2, 1),
            &[r(&[2, 2, 6, 6], s), r(&[3, 2, 4, 4], s + 99)],
            o
        )),
        case!("conv3d", TOL_LINEAR, |s, o| check(
            |_, v| v[0].conv3d(v[1], ConvGeometry::new([1, 2, 2], [1, 1, 1])),
            &[r(&[1, 2, 4, 6, 6], s), r(&[2, 2, 3, 4, 4], s + 99)],
            o
        )),
        case!("batch_norm/train", TOL_DEFAULT, |s, o| check(
            |_, v| {
                let mut stats = RunningStats::new(3);
                v[0].batch_norm(v[1], v[2], &mut stats, Mode::TRAIN_FROZEN, BatchNormConfig::default())
            },
            &[r(&[4, 3, 2, 2], s), uniform(&[3], s + 98, 0.5, 1.5), r(&[3], s + 99)],
            o
        )),
        case!("batch_norm/eval", TOL_LINEAR, |s, o| check(
            |_, v| {
                let mut stats = RunningStats {
                    mean: vec![0.1, -0.2, 0.3],
                    var: vec![0.5, 1.5, 2.0],
                };
                v[0].batch_norm(v[1], v[2], &mut stats, Mode::Eval, BatchNormConfig::default())
            },
            &[r(&[2, 3, 2, 2], s), uniform(&[3], s + 98, 0.5, 1.5), r(&[3], s + 99)],
            o
        )),
        case!("affine_grid", TOL_LINEAR, |s, o| check(|_, v| affine_grid(v[0], 4, 5), &[r(&[2, 6], s)], o)),
        case!("bilinear_sample", TOL_DEFAULT, |s, o| check(
            |_, v| bilinear_sample(v[0], v[1]),
            &[r(&[1, 2, 5, 5], s), uniform(&[1, 4, 4, 2], s + 99, -1.1, 1.1)],
            o
        )),
        case!("apply_kernel", TOL_LINEAR, |s, o| check(
            |_, v| apply_kernel(v[0], v[1]),
            &[r(&[2, 2, 5, 5], s), r(&[2, 3, 3], s + 99)],
            o
        )),
        case!("affine_from_raw", TOL_LINEAR, |s, o| check(|_, v| affine_from_raw(v[0]), &[r(&[3, 6], s)], o)),
        case!("kernel_from_raw/raw", TOL_LINEAR, |s, o| check(
            |_, v| kernel_from_raw(v[0], KernelNorm::Raw),
            &[r(&[2, 9], s)],
            o
        )),
        case!("kernel_from_raw/softmax", TOL_DEFAULT, |s, o| check(
            |_, v| kernel_from_raw(v[0], KernelNorm::Softmax),
            &[r(&[2, 9], s)],
            o
        )),
        case!("apply_sequence", TOL_DEFAULT, |s, o| check(
            |_, v| apply_sequence_batched(v[0], affine_from_raw(v[1].reshape(&[4, 6])?)?.reshape(&[2, 2, 6])?, TransformKind::Affine),
            &[uniform(&[2, 1, 6, 6], s, 0.0, 1.0), uniform(&[2, 2, 6], s + 99, -0.3, 0.3)],
            o
        )),
    ]
}

/// Critic score of synthesized clips at 16x16 with T = 2, P = 2,
/// differentiated w.r.t. generator weights, input images and latents.
fn pipeline(transform: TransformKind, norm: KernelNorm, seed: u64, opts: &CheckOptions) -> Result<GradReport> {
    let mut cfg = ModelConfig::miniature(16, 1, transform)?;
    cfg.frames = 2;
    cfg.depth = 2;
    cfg.kernel_norm = norm;
    let mut model = Model::<f64>::new(cfg, seed)?;
    let out = model.generator.output_layer();
    let (out_w, hidden) = (format!("{out}.w"), "fc1.w".to_string());
    // Larger output weights so the warps move pixels noticeably.
    let w = model.generator.params.get(&out_w).expect("output layer");
    let w_out = Tensor::from_fn(w.shape().to_vec(), |i| 20.0 * w.data()[i]);
    let w_in = model.generator.params.get(&hidden).expect("first layer").clone();
    let x = uniform(&[2, 1, 16, 16], seed + 1, 0.0, 1.0);
    let z = sample_latent::<f64, _>(&mut ChaCha8Rng::seed_from_u64(seed + 2), 2, model.config.z_dim);
    let snapshot = model.clone();
    finite_diff_check(
        |tape, v| {
            let mut b = snapshot.bind_generator(tape, false);
            b.generator.replace(&out_w, v[0])?;
            b.generator.replace(&hidden, v[1])?;
            let syn = model.synthesize(&b, v[2], v[3], Mode::TRAIN_FROZEN)?;
            let p = tape.bind(&snapshot.critic.params, false);
            Ok(model.critic.forward(&p, syn.clip, Mode::TRAIN_FROZEN)?.mean())
        },
        &[w_out, w_in, x, z],
        &opts.clone().max_coords(24),
    )
}

pub fn pipeline_cases() -> Vec<Case> {
    vec![
        case!("pipeline/affine", TOL_DEFAULT, |s, o| pipeline(TransformKind::Affine, KernelNorm::Raw, s, o)),
        case!("pipeline/kernel3", TOL_DEFAULT, |s, o| pipeline(
            TransformKind::Kernel { size: 3 },
            KernelNorm::Raw,
            s,
            o
        )),
        case!("pipeline/kernel3-softmax", TOL_DEFAULT, |s, o| pipeline(
            TransformKind::Kernel { size: 3 },
            KernelNorm::Softmax,
            s,
            o
        )),
    ]
}

pub fn cases(suite: Suite) -> Vec<Case> {
    match suite {
        Suite::Ops => ops_cases(),
        Suite::Pipeline => pipeline_cases(),
    }
}

/// Runs every case of `suite` over seeds `seed..seed+3`; `perturb` biases
/// the analytic gradients to exercise the failure path.
pub fn run_suite(suite: Suite, seed: u64, perturb: f64) -> Result<Vec<CaseResult>> {
    cases(suite)
        .into_iter()
        .map(|case| {
            let mut worst = 0.0f64;
            let mut detail = None;
            for s in seed..seed + SEEDS_PER_CASE {
                let opts = CheckOptions::new(case.tolerance).seed(s).perturb(perturb);
                let rep = (case.run)(s.wrapping_mul(7919).wrapping_add(1), &opts)?;
                if rep.max_rel_err >= worst {
                    worst = rep.max_rel_err;
                    if !rep.pass {
                        detail = rep.failure.or_else(|| rep.worst.map(|p| format!("{p:?}")));
                    }
                }
            }
            Ok(CaseResult {
                name: case.name,
                tolerance: case.tolerance,
                max_rel_err: worst,
                pass: worst <= case.tolerance,
                detail,
            })
        })
        .collect()
}
