use super::*;
use crate::data::{Shapes, ShapesConfig};
use crate::nets::Network;
use crate::tensor::{Bound, NamedTensors, Var};
use crate::transform::TransformKind;
use rand::Rng;

fn config(iterations: u64, seed: u64) -> TrainConfig {
    let model = ModelConfig::miniature(16, 3, TransformKind::Affine).unwrap();
    let mut cfg = TrainConfig::new(model, DatasetKind::Shapes, iterations, seed);
    cfg.batch_size = 4;
    cfg.dataset_len = 64;
    cfg
}

fn source(cfg: &TrainConfig) -> Shapes {
    Shapes::new(ShapesConfig::for_size(16), cfg.seed, cfg.dataset_len).unwrap()
}

fn real_batch(cfg: &TrainConfig, k: u64) -> Tensor<f32> {
    let src = source(cfg);
    let mut it = BatchIter::new(&src, cfg.batch_size, cfg.seed).unwrap();
    it.seek(k);
    bfhwc_to_bcfhw(&it.next().unwrap().unwrap()).unwrap()
}

/// Linear critic `c(x) = <flatten(x), w>`.
struct LinearCritic {
    params: ParamStore<f64>,
    buffers: NamedTensors<f64>,
}

impl Network<f64> for LinearCritic {
    fn params(&self) -> &ParamStore<f64> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.params
    }
    fn buffers(&self) -> &NamedTensors<f64> {
        &self.buffers
    }
    fn buffers_mut(&mut self) -> &mut NamedTensors<f64> {
        &mut self.buffers
    }
}

impl VideoCritic<f64> for LinearCritic {
    fn score<'t>(&mut self, p: &Bound<'t, f64>, clip: Var<'t, f64>, _mode: Mode) -> Result<Var<'t, f64>> {
        let s = clip.shape();
        let d: usize = s[1..].iter().product();
        clip.reshape(&[s[0], d])?.matmul(p.get("w")?)?.reshape(&[s[0]])
    }
}

#[test]
fn identical_batches_give_zero_critic_loss() {
    let cfg = config(1, 3);
    let mut state = TrainState::new(&cfg).unwrap();
    let real = real_batch(&cfg, 0);
    let loss = critic_update(&mut state.model.critic, &mut state.optim.critic, &real, &real, cfg.clip_c).unwrap();
    assert_eq!(loss, 0.0);
}

#[test]
fn critic_parameters_are_clamped_after_each_update() {
    let mut cfg = config(1, 4);
    cfg.learning_rate = 0.05;
    let mut state = TrainState::new(&cfg).unwrap();
    for k in 0..3 {
        critic_step(&mut state, &cfg, &real_batch(&cfg, k)).unwrap();
        let m = state.model.critic.params.max_abs() as f64;
        assert!(m <= cfg.clip_c as f32 as f64, "max |w| = {m}");
    }
    // A large step saturates the box.
    assert_eq!(state.model.critic.params.max_abs(), cfg.clip_c as f32);
}

#[test]
fn linear_critic_update_matches_hand_computed_rmsprop() {
    let (n, d) = (3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let real = Tensor::<f64>::from_fn([n, 1, 1, 1, d], |_| rng.gen_range(0.0..1.0));
    let fake = Tensor::<f64>::from_fn([n, 1, 1, 1, d], |_| rng.gen_range(0.0..1.0));
    let w0: Vec<f64> = vec![0.004, -0.002, 0.0, 0.009];
    let mut critic = LinearCritic {
        params: ParamStore::new(),
        buffers: NamedTensors::new(),
    };
    critic.params.insert("w", Tensor::new([d, 1], w0.clone()).unwrap()).unwrap();
    let (lr, decay, eps, clip) = (1e-3, 0.9, 1e-10, 0.01);
    let mut opt = OptimizerState::new(lr, decay, eps).unwrap();

    let col_mean = |t: &Tensor<f64>, j: usize| (0..n).map(|i| t.data()[i * d + j]).sum::<f64>() / n as f64;
    let g: Vec<f64> = (0..d).map(|j| col_mean(&fake, j) - col_mean(&real, j)).collect();
    let expected_loss: f64 = (0..d).map(|j| g[j] * w0[j]).sum();
    let expected_w: Vec<f64> = (0..d)
        .map(|j| {
            let acc = (1.0 - decay) * g[j] * g[j];
            (w0[j] - lr * g[j] / (acc.sqrt() + eps)).clamp(-clip, clip)
        })
        .collect();

    let loss = critic_update(&mut critic, &mut opt, &real, &fake, clip).unwrap();
    assert!((loss - expected_loss).abs() < 1e-12);
    for (a, b) in critic.params.get("w").unwrap().data().iter().zip(&expected_w) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    assert_eq!(opt.accumulator("w").unwrap().len(), d);
}

#[test]
fn zero_critic_gives_zero_generator_loss_and_no_update() {
    let cfg = config(1, 5);
    let mut state = TrainState::new(&cfg).unwrap();
    for (_, p) in state.model.critic.params.iter_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let before = state.model.clone();
    let x = first_frames(&real_batch(&cfg, 0)).unwrap();
    let loss = generator_step(&mut state, &cfg, &x).unwrap();
    assert_eq!(loss, 0.0);
    assert_eq!(state.model.encoder.params, before.encoder.params);
    assert_eq!(state.model.generator.params, before.generator.params);
    assert_eq!(state.model.merge.params, before.merge.params);
}

#[test]
fn steps_only_touch_their_own_networks() {
    let cfg = config(1, 6);
    let mut state = TrainState::new(&cfg).unwrap();
    let before = state.model.clone();
    critic_step(&mut state, &cfg, &real_batch(&cfg, 0)).unwrap();
    for ((name, a), (_, b)) in state.model.networks().into_iter().zip(before.networks()).take(3) {
        assert_eq!(a.params().checksum(), b.params().checksum(), "{name} params");
        assert_eq!(a.buffers(), b.buffers(), "{name} buffers");
    }
    assert_ne!(state.model.critic.params.checksum(), before.critic.params.checksum());

    let critic = state.model.critic.clone();
    let gen = state.model.generator.params.checksum();
    generator_step(&mut state, &cfg, &first_frames(&real_batch(&cfg, 1)).unwrap()).unwrap();
    assert_eq!(state.model.critic.params.checksum(), critic.params.checksum());
    assert_eq!(state.model.critic.buffers, critic.buffers);
    assert_ne!(state.model.generator.params.checksum(), gen);
}

#[test]
fn generator_loss_matches_independent_recomputation() {
    let cfg = config(1, 7);
    let mut state = TrainState::new(&cfg).unwrap();
    let x = first_frames(&real_batch(&cfg, 2)).unwrap();
    let mut model = state.model.clone();
    let mut rng = state.rng.clone();

    let z = sample_latent(&mut rng, x.shape()[0], cfg.model.z_dim);
    let tape = Tape::new();
    let b = model.bind_generator(&tape, false);
    let syn = model.synthesize(&b, tape.constant(x.clone()), tape.constant(z), Mode::TRAIN).unwrap();
    let cp = tape.bind(&model.critic.params, false);
    let scores = model.critic.forward(&cp, syn.clip, Mode::TRAIN_FROZEN).unwrap().to_tensor();
    let expected = -scores.data().iter().map(|v| *v as f64).sum::<f64>() / scores.numel() as f64;

    let loss = generator_step(&mut state, &cfg, &x).unwrap();
    assert!((loss - expected).abs() < 1e-6, "{loss} vs {expected}");
}

#[derive(Default)]
struct Counter {
    critic: usize,
    generator: usize,
    iterations: Vec<u64>,
    max_critic_abs: f32,
}

impl TrainHook for Counter {
    fn after_critic_step(&mut self, state: &TrainState, _loss_c: f64) -> Result<()> {
        self.critic += 1;
        self.max_critic_abs = self.max_critic_abs.max(state.model.critic.params.max_abs());
        Ok(())
    }

    fn after_generator_step(&mut self, _state: &TrainState, _loss_g: f64) -> Result<()> {
        self.generator += 1;
        Ok(())
    }

    fn after_iteration(&mut self, state: &TrainState) -> Result<()> {
        self.iterations.push(state.iteration);
        Ok(())
    }
}

#[test]
fn two_iterations_run_ten_critic_and_two_generator_updates() {
    let cfg = config(2, 9);
    let src = source(&cfg);
    let mut state = TrainState::new(&cfg).unwrap();
    let mut hook = Counter::default();
    run(&cfg, &mut state, &src, &mut hook).unwrap();
    assert_eq!((hook.critic, hook.generator), (10, 2));
    assert_eq!(hook.iterations, [1, 2]);
    assert!(hook.max_critic_abs <= 0.01);
    assert_eq!(state.metrics.len(), 2);
    let m = &state.metrics[1];
    assert_eq!((m.iter, m.em_estimate, m.wall_s), (2, -m.loss_c, 0.0));
}

#[test]
fn training_is_deterministic_and_resumable() {
    let cfg = config(3, 10);
    let src = source(&cfg);
    let mut a = TrainState::new(&cfg).unwrap();
    run(&cfg, &mut a, &src, &mut ()).unwrap();
    let mut b = TrainState::new(&cfg).unwrap();
    run(&cfg, &mut b, &src, &mut ()).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.model.generator.params.checksum(), b.model.generator.params.checksum());

    // Stop after one iteration, then continue from a copy of the state.
    let mut c = TrainState::new(&cfg).unwrap();
    run(&TrainConfig { total_iterations: 1, ..cfg.clone() }, &mut c, &src, &mut ()).unwrap();
    let mut resumed = c.clone();
    run(&cfg, &mut resumed, &src, &mut ()).unwrap();
    assert_eq!(resumed.metrics, a.metrics);
    assert_eq!(resumed.model.critic.params, a.model.critic.params);
}

#[test]
fn config_validation() {
    let mut cfg = config(1, 0);
    cfg.n_critic = 0;
    assert!(TrainState::new(&cfg).is_err());
    let mut cfg = config(1, 0);
    cfg.dataset = DatasetKind::MovingMnist;
    assert!(matches!(TrainState::new(&cfg), Err(Error::Config(_))));
    let mut cfg = config(1, 0);
    cfg.generator_learning_rate = Some(-1.0);
    assert!(TrainState::new(&cfg).is_err());
}

#[test]
fn generator_rate_applies_to_generator_side_only() {
    let mut cfg = config(1, 0);
    let st = TrainState::new(&cfg).unwrap();
    assert!(st.optim.iter().iter().all(|(_, o)| o.learning_rate == cfg.learning_rate));
    cfg.generator_learning_rate = Some(3e-4);
    let st = TrainState::new(&cfg).unwrap();
    for (name, o) in st.optim.iter() {
        let want = if name == "critic" { cfg.learning_rate } else { 3e-4 };
        assert_eq!(o.learning_rate, want, "{name}");
    }
}

#[test]
fn non_finite_inputs_abort_with_a_norm_report() {
    let cfg = config(1, 11);
    let mut state = TrainState::new(&cfg).unwrap();
    let head = state.model.critic.params.names().last().unwrap().to_string();
    state.model.critic.params.get_mut(&head).unwrap().data_mut()[0] = f32::INFINITY;
    match critic_step(&mut state, &cfg, &real_batch(&cfg, 0)) {
        Err(Error::NonFinite(msg)) => assert!(msg.contains("conv1.w")),
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn warmup_changes_only_the_leading_iterations() {
    let mut cfg = config(4, 12);
    assert_eq!((cfg.critic_steps_at(0), cfg.batch_offset(3)), (5, 18));
    cfg.critic_warmup = Some((2, 20));
    assert_eq!(cfg.critic_steps_at(1), 20);
    assert_eq!(cfg.critic_steps_at(2), 5);
    assert_eq!(cfg.batch_offset(2), 42);
    assert_eq!(cfg.batch_offset(3), 48);
    let src = source(&cfg);
    let mut state = TrainState::new(&cfg).unwrap();
    let mut hook = Counter::default();
    run(&cfg, &mut state, &src, &mut hook).unwrap();
    assert_eq!((hook.critic, hook.generator), (50, 4));
    cfg.critic_warmup = Some((2, 0));
    assert!(cfg.validate().is_err());
}
