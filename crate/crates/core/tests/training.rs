use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reversym::dataio::*;
use reversym::diffcore::{grad_check, DiffError, Tape, Tensor, Var};
use reversym::model::{ModelConfig, TangoModel};
use reversym::training::*;

fn t(rows: Vec<Vec<f64>>) -> Tensor {
    Tensor::from_rows(&rows).unwrap()
}

fn rand_seq(rng: &mut ChaCha8Rng, frames: usize, r: usize, c: usize) -> Vec<Tensor> {
    (0..frames).map(|_| Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()).collect()
}

fn tiny() -> ModelConfig {
    ModelConfig { hidden_dim: 8, pool_hidden: 8, encoder_out: 4, augment_dim: 4, ode_hidden: 8, ..ModelConfig::smoke(4) }
}

fn randomized(cfg: ModelConfig, seed: u64, scale: f64) -> TangoModel {
    let mut m = TangoModel::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
    m.map_params(|_, t| t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale)));
    m
}

fn small_dataset(n_agents: usize, n_train: usize, n_test: usize, seed: u64) -> Dataset {
    let mut cfg = SystemConfig::new(SystemKind::SimpleSpring);
    cfg.n_agents = n_agents;
    generate_dataset(&cfg, &SamplingConfig::new(SystemKind::SimpleSpring, seed), n_train, n_test).unwrap()
}

/// Keep the last `frames` prediction frames' worth of a training record.
fn micro_sample(ds: &Dataset, frames: usize) -> PreparedSample {
    let mut r = ds.train[0].clone();
    for obs in &mut r.agents {
        obs.retain(|o| o.frame < 30 || (o.frame >= 30 && o.frame < 30 + frames));
    }
    let mut s = PreparedSample::from_record(&r, SplitMode::Train { horizon: 60 }, None).unwrap();
    s.horizon = frames;
    s
}

#[test]
fn loss_examples() {
    let a = t(vec![vec![0.5, -1.0]]);
    assert_eq!(loss_pred(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
    assert_eq!(loss_pred(&[t(vec![vec![1.0, 1.0]])], &[t(vec![vec![0.0, 0.0]])]).unwrap(), 2.0);
    assert!(loss_pred(&[a.clone()], &[t(vec![vec![1.0]])]).is_err());
    assert!(loss_reverse(&[a.clone()], &[a.clone(), a.clone()]).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fwd = rand_seq(&mut rng, 5, 3, 2);
    let flipped: Vec<Tensor> = fwd.iter().rev().cloned().collect();
    assert_eq!(loss_reverse(&fwd, &flipped).unwrap(), 0.0);
    let errs = rand_seq(&mut rng, 5, 3, 2);
    let shifted: Vec<Tensor> = flipped
        .iter()
        .zip(errs.iter().rev())
        .map(|(f, e)| Tensor::new(f.shape().to_vec(), f.data().iter().zip(e.data()).map(|(x, y)| x + y).collect()).unwrap())
        .collect();
    let want: f64 = errs.iter().map(Tensor::sq_norm).sum();
    assert!((loss_reverse(&fwd, &shifted).unwrap() - want).abs() < 1e-12);

    let c = 0.3;
    let moved: Vec<Tensor> = flipped
        .iter()
        .map(|f| Tensor::new(f.shape().to_vec(), f.data().iter().map(|x| x + c).collect()).unwrap())
        .collect();
    assert!((loss_gt_rev(&fwd, &moved).unwrap() - 30.0 * c * c).abs() < 1e-12);
    assert_eq!(loss_rev2(&fwd, &fwd).unwrap(), 0.0);
}

#[test]
fn rev2_is_positive_for_a_growing_linear_field() {
    // fwd(t) = e^{lt} z0, negated-field pass rev2(t) = e^{-lt} z0.
    let z0 = [0.4, -0.9];
    for lam in [-0.5, 0.2, 1.0] {
        let seq = |s: f64| -> Vec<Tensor> {
            (0..6).map(|k| t(vec![z0.iter().map(|z| z * (s * lam * k as f64 * 0.1).exp()).collect()])).collect()
        };
        assert!(loss_rev2(&seq(1.0), &seq(-1.0)).unwrap() > 0.0);
    }
}

#[test]
fn tape_losses_match_value_losses_and_total_identity() {
    let ds = small_dataset(3, 2, 0, 3);
    let model = randomized(tiny(), 3, 0.6);
    let s = micro_sample(&ds, 8);
    for variant in [LossVariant::Tango, LossVariant::GtRev, LossVariant::Rev2] {
        let cfg = LossConfig::new(0.7, variant).unwrap();
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let lv = record_losses(&b, &mut tape, &s, &cfg, true).unwrap();
        let v = |x: Var| tape.value(x).data()[0];
        let total = v(lv.total);
        let (pred, rev) = (v(lv.pred), v(lv.reverse.unwrap()));
        assert!((total - (pred + 0.7 * rev)).abs() <= 1e-12 * total.max(1.0));
        assert!(rev > 0.0 && pred > 0.0);

        // Independent rebuild of the sequences, then the value-level losses.
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let z0 = b.encode(&mut tape, &s.graph).unwrap();
        let fw = b.integrate_forward(&mut tape, z0, &s.edges, s.horizon).unwrap();
        let start = if variant == LossVariant::Rev2 { z0 } else { fw[s.horizon - 1] };
        let rv = b.integrate_reverse(&mut tape, start, &s.edges, s.horizon).unwrap();
        let mut dec = |zs: &[Var]| -> Vec<Tensor> {
            zs.iter().map(|z| { let y = b.decode(&mut tape, *z).unwrap(); tape.value(y).clone() }).collect()
        };
        let yf = dec(&fw);
        let yr = dec(&rv);
        let ref_rev = match variant {
            LossVariant::Tango => loss_reverse(&yf, &yr).unwrap(),
            LossVariant::Rev2 => loss_rev2(&yf, &yr).unwrap(),
            LossVariant::GtRev => s
                .target_rows
                .iter()
                .zip(&s.target_offsets)
                .enumerate()
                .map(|(j, (r, k))| {
                    let y = yr[s.horizon - 1 - k].row(r % s.n_agents);
                    y.iter().zip(s.target_values.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .sum(),
        };
        let ref_pred: f64 = s
            .target_rows
            .iter()
            .enumerate()
            .map(|(j, r)| {
                let y = yf[r / s.n_agents].row(r % s.n_agents);
                y.iter().zip(s.target_values.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum();
        assert!((rev - ref_rev).abs() <= 1e-10 * ref_rev.max(1e-30), "{:?} {} {}", variant, rev, ref_rev);
        assert!((pred - ref_pred).abs() <= 1e-10 * ref_pred);
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let ds = small_dataset(2, 1, 0, 4);
    let model = randomized(tiny(), 4, 0.5);
    let s = micro_sample(&ds, 3);
    let np = model.params.len();
    for variant in [LossVariant::Tango, LossVariant::GtRev, LossVariant::Rev2] {
        let cfg = LossConfig::new(1.0, variant).unwrap();
        let f = |tape: &mut Tape, v: &[Var]| -> Result<Var, DiffError> {
            let b = model.bind_vars(v.to_vec()).map_err(|e| DiffError::Invalid { op: "model", detail: e.to_string() })?;
            let lv = record_losses(&b, tape, &s, &cfg, true).map_err(|e| DiffError::Invalid { op: "loss", detail: e.to_string() })?;
            Ok(lv.total)
        };
        let rep = grad_check(f, &model.params.tensors()[..np], 1e-6, None).unwrap();
        assert!(rep.max_rel_error < 1e-3, "{:?} {:?}", variant, rep);
    }
}

#[test]
fn adamw_matches_scalar_recurrence() {
    let mut p = vec![Tensor::matrix(1, 2, vec![0.5, -2.0]).unwrap()];
    let mut opt = AdamW::new(&p, 0.01, 0.1);
    let gs = [[0.3, -1.0], [-0.2, 4.0], [0.05, 0.0]];
    let (mut x, mut m, mut v) = ([0.5f64, -2.0], [0.0f64; 2], [0.0f64; 2]);
    for (k, g) in gs.iter().enumerate() {
        opt.update(&mut p, &[Tensor::matrix(1, 2, g.to_vec()).unwrap()]).unwrap();
        let step = (k + 1) as i32;
        for i in 0..2 {
            x[i] -= 0.01 * 0.1 * x[i];
            m[i] = 0.9 * m[i] + 0.1 * g[i];
            v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(step));
            let vh = v[i] / (1.0 - 0.999f64.powi(step));
            x[i] -= 0.01 * mh / (vh.sqrt() + 1e-8);
        }
        for i in 0..2 {
            assert!((p[0].data()[i] - x[i]).abs() < 1e-15);
        }
    }
    assert_eq!(opt.step, 3);
    assert!(opt.update(&mut p, &[]).is_err());
}

#[test]
fn clip_rescales_to_max_norm() {
    let mut g = vec![Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap()];
    assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
    assert!((g[0].sq_norm() - 1.0).abs() < 1e-12);
    let mut small = vec![Tensor::matrix(1, 1, vec![0.5]).unwrap()];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data(), &[0.5]);
}

fn quick(alpha: f64) -> TrainConfig {
    let mut c = TrainConfig::new(LossConfig::new(alpha, LossVariant::Tango).unwrap());
    c.epochs = 2;
    c.batch_size = 3;
    c.lr = 1e-3;
    c.seed = 5;
    c
}

fn samples(n: usize) -> Vec<PreparedSample> {
    let ds = small_dataset(3, n, 0, 9);
    prepare_samples(&ds.train, SplitMode::Train { horizon: 60 }, None).unwrap()
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let s = samples(7);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| train(TangoModel::new(tiny(), 1).unwrap(), &s, &quick(1.0)).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a.model, b.model);
    assert_eq!(a.reports, b.reports);
    let c = train(TangoModel::new(tiny(), 2).unwrap(), &s, &quick(1.0)).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn logged_totals_follow_the_loss_identity() {
    let s = samples(7);
    let mut cfg = quick(0.7);
    cfg.loss.variant = LossVariant::GtRev;
    let out = train(randomized(tiny(), 3, 0.3), &s, &cfg).unwrap();
    assert_eq!(out.reports.len(), 2);
    for r in &out.reports {
        assert_eq!(r.batches.len(), 3);
        for b in r.batches.iter().chain(std::iter::once(&BatchLoss { pred: r.pred, reverse: r.reverse, total: r.total })) {
            let rev = b.reverse.unwrap();
            assert!((b.total - (b.pred + 0.7 * rev)).abs() <= 1e-12 * b.total.max(1.0));
        }
    }
}

#[test]
fn alpha_zero_is_prediction_only_and_tracking_is_passive() {
    let s = samples(6);
    let mut tracked = quick(0.0);
    tracked.track_reverse = true;
    let mut silent = tracked.clone();
    silent.track_reverse = false;
    let m = randomized(tiny(), 4, 0.3);
    let a = train(m.clone(), &s, &tracked).unwrap();
    let b = train(m.clone(), &s, &silent).unwrap();
    assert_eq!(a.model, b.model);
    assert!(a.reports.iter().all(|r| r.reverse.is_some() && r.total == r.pred));
    assert!(b.reports.iter().all(|r| r.reverse.is_none()));
    let c = train(m, &s, &quick(1.0)).unwrap();
    assert_ne!(a.model, c.model);
    assert_eq!(a.model.params.len(), c.model.params.len());
}

#[test]
fn non_finite_loss_aborts_with_last_good_model() {
    let s = samples(4);
    let mut m = TangoModel::new(tiny(), 1).unwrap();
    m.map_params(|n, t| {
        if n == "decoder0.b" {
            t.data_mut()[0] = f64::NAN;
        }
    });
    match train(m.clone(), &s, &quick(1.0)) {
        Err(TrainError::NonFinite { epoch, batch, last_good }) => {
            assert_eq!((epoch, batch), (1, 0));
            assert_eq!(last_good.params.names(), m.params.names());
        }
        other => panic!("expected abort, got {:?}", other.map(|o| o.reports)),
    }
}

#[test]
fn evaluation_of_self_consistent_targets_is_zero() {
    let ds = small_dataset(3, 1, 3, 10);
    let model = randomized(tiny(), 5, 0.4);
    let mut test = prepare_samples(&ds.test, SplitMode::Test { horizon: 60, extension: 60 }, None).unwrap();
    let first = evaluate(&model, &test, 60).unwrap();
    assert!(first.mse > 0.0);
    assert_eq!(first.per_length.len(), 60);
    assert_eq!(first.per_length[59].1, first.mse);
    for s in &mut test {
        let mut tape = Tape::new();
        let b = model.bind(&mut tape);
        let lv = record_losses(&b, &mut tape, s, &LossConfig::new(0.0, LossVariant::Tango).unwrap(), false).unwrap();
        let y = tape.value(lv.forward).clone();
        let rows: Vec<Vec<f64>> = s.target_rows.iter().map(|&r| y.row(r).to_vec()).collect();
        s.target_values = Tensor::from_rows(&rows).unwrap();
    }
    let ev = evaluate(&model, &test, 60).unwrap();
    assert_eq!(ev.mse, 0.0);

    let masked = prepare_samples(&ds.test, SplitMode::Test { horizon: 60, extension: 60 }, Some((1.0, 3))).unwrap();
    assert_eq!(evaluate(&model, &masked, 60).unwrap(), first);
    let fewer = prepare_samples(&ds.test, SplitMode::Test { horizon: 60, extension: 60 }, Some((0.4, 3))).unwrap();
    assert!(fewer.iter().zip(&test).all(|(a, b)| a.graph.nodes.len() < b.graph.nodes.len()));
}

#[test]
fn train_file_parsing() {
    let f = parse_train_file("# smoke\ndataset: data/springs\nalpha: 0.5\nvariant: gt-rev\nepochs: 4\nlr: 1e-3\nbatch: 16\nseed: 9\nclip: 2.5\nsolver_step: 0.008333333333333333\n").unwrap();
    assert_eq!(f.dataset.as_deref(), Some(std::path::Path::new("data/springs")));
    assert_eq!(f.train.loss, LossConfig { alpha: 0.5, variant: LossVariant::GtRev });
    assert_eq!((f.train.epochs, f.train.batch_size, f.train.seed, f.train.clip), (4, 16, 9, Some(2.5)));
    assert_eq!(f.model_config(4).unwrap().substeps, 2);
    assert!(parse_train_file("bogus: 1\n").is_err());
    assert!(parse_train_file("variant: nope\n").is_err());
    assert!(parse_train_file("alpha: -1\n").is_err());
    let odd = parse_train_file("solver_step: 0.007\n").unwrap();
    assert!(odd.model_config(4).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn losses_are_symmetric_non_negative_and_vanish_on_equal_inputs(seed in 0u64..1000, frames in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = rand_seq(&mut rng, frames, 2, 3);
        let b = rand_seq(&mut rng, frames, 2, 3);
        let ab = loss_reverse(&a, &b).unwrap();
        let ba = loss_reverse(&b, &a).unwrap();
        prop_assert_eq!(ab.to_bits(), ba.to_bits());
        let flip: Vec<Tensor> = a.iter().rev().cloned().collect();
        prop_assert_eq!(loss_reverse(&a, &flip).unwrap(), 0.0);
        prop_assert_eq!(loss_gt_rev(&a, &flip).unwrap(), 0.0);
        prop_assert_eq!(loss_pred(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(loss_rev2(&a, &a).unwrap(), 0.0);
        for v in [loss_pred(&a, &b), loss_reverse(&a, &b), loss_gt_rev(&a, &b), loss_rev2(&a, &b)] {
            prop_assert!(v.unwrap() >= 0.0);
        }
    }
}
