//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use reversym::analysis::{maxerror_comparison, solver_order_experiment, worst_case_errors, AnalyticSystem, MicroConfig, ScalingSpec};
use reversym::dataio::*;
use reversym::diffcore::{grad_check, DiffError, OpKind, Tape, Tensor, Var};
use reversym::model::{EdgeIndex, ModelConfig, TangoModel, TemporalGraph};
use reversym::physics::*;
use reversym::seed::rng_for;
use reversym::training::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn rng(seed: u64) -> ChaCha8Rng {
    rng_for(seed, 99, 0)
}

fn rand_tensor(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

fn tiny() -> ModelConfig {
    ModelConfig { hidden_dim: 8, pool_hidden: 8, encoder_out: 4, augment_dim: 4, ode_hidden: 8, ..ModelConfig::smoke(4) }
}

fn randomized(cfg: ModelConfig, seed: u64, scale: f64) -> TangoModel {
    let mut m = TangoModel::new(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0x77);
    m.map_params(|_, t| t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-scale..scale)));
    m
}

fn spring_dataset(n_agents: usize, n_train: usize, n_test: usize, seed: u64) -> Dataset {
    let mut cfg = SystemConfig::new(SystemKind::SimpleSpring);
    cfg.n_agents = n_agents;
    generate_dataset(&cfg, &SamplingConfig::new(SystemKind::SimpleSpring, seed), n_train, n_test).unwrap()
}

fn micro_sample(record: &TrajectoryRecord, frames: usize) -> PreparedSample {
    let mut r = record.clone();
    for obs in &mut r.agents {
        obs.retain(|o| o.frame < 30 + frames);
    }
    let mut s = PreparedSample::from_record(&r, SplitMode::Train { horizon: 60 }, None).unwrap();
    s.horizon = frames;
    s
}

fn op_point(kind: &OpKind, r: &mut ChaCha8Rng) -> Vec<Tensor> {
    let (a, b) = (r.gen_range(1..5), r.gen_range(1..5));
    match kind {
        OpKind::Add | OpKind::Sub | OpKind::Mul => vec![rand_tensor(r, &[a, b], -2.0, 2.0), rand_tensor(r, &[a, b], -2.0, 2.0)],
        OpKind::Matmul => {
            let k = r.gen_range(1..5);
            vec![rand_tensor(r, &[a, k], -2.0, 2.0), rand_tensor(r, &[k, b], -2.0, 2.0)]
        }
        OpKind::Concat { axis: 0 } => vec![rand_tensor(r, &[a, b], -2.0, 2.0), rand_tensor(r, &[a + 1, b], -2.0, 2.0)],
        OpKind::Concat { .. } => vec![rand_tensor(r, &[a, b], -2.0, 2.0), rand_tensor(r, &[a, b + 1], -2.0, 2.0)],
        OpKind::ScaleRows => vec![rand_tensor(r, &[a, b], -2.0, 2.0), rand_tensor(r, &[a, 1], -2.0, 2.0)],
        OpKind::RepeatRows { .. } => vec![rand_tensor(r, &[1, b], -2.0, 2.0)],
        OpKind::Relu => {
            let mut t = rand_tensor(r, &[a, b], 0.05, 2.0);
            t.data_mut().iter_mut().for_each(|v| {
                if r.gen_bool(0.5) {
                    *v = -*v
                }
            });
            vec![t]
        }
        OpKind::SegmentSum { .. } => vec![rand_tensor(r, &[5, b], -2.0, 2.0)],
        OpKind::GatherRows { .. } => vec![rand_tensor(r, &[3, b], -2.0, 2.0)],
        _ => vec![rand_tensor(r, &[a, b], -2.0, 2.0)],
    }
}

fn first_criterion() -> Verdict {
    let start = Instant::now();
    let ds = spring_dataset(2, 2, 0, 4);
    let model = randomized(tiny(), 4, 0.5);
    let batch: Vec<PreparedSample> = ds.train.iter().map(|r| micro_sample(r, 3)).collect();
    let np = model.params.len();
    let mut worst_full: f64 = 0.0;
    for variant in [LossVariant::Tango, LossVariant::GtRev, LossVariant::Rev2] {
        let cfg = LossConfig::new(1.0, variant).unwrap();
        let f = |tape: &mut Tape, v: &[Var]| -> Result<Var, DiffError> {
            let err = |e: String| DiffError::Invalid { op: "objective", detail: e };
            let b = model.bind_vars(v.to_vec()).map_err(|e| err(e.to_string()))?;
            let mut acc: Option<Var> = None;
            for s in &batch {
                let t = record_losses(&b, tape, s, &cfg, true).map_err(|e| err(e.to_string()))?.total;
                acc = Some(match acc {
                    Some(a) => tape.add(a, t)?,
                    None => t,
                });
            }
            tape.scale(acc.unwrap(), 1.0 / batch.len() as f64)
        };
        let rep = grad_check(f, &model.params.tensors()[..np], 1e-6, None).unwrap();
        worst_full = worst_full.max(rep.max_rel_error);
    }
    let kinds = vec![
        OpKind::Add,
        OpKind::Sub,
        OpKind::Mul,
        OpKind::ScalarMul(-1.7),
        OpKind::Matmul,
        OpKind::Concat { axis: 0 },
        OpKind::Concat { axis: 1 },
        OpKind::Tanh,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::Exp,
        OpKind::Sum,
        OpKind::Mean,
        OpKind::Softmax,
        OpKind::SegmentSum { segments: vec![0, 2, 0, 1, 2], num_segments: 4 },
        OpKind::GatherRows { index: vec![2, 0, 2, 1] },
        OpKind::SumRows,
        OpKind::ScaleRows,
        OpKind::RepeatRows { times: 3 },
    ];
    let mut worst_op: f64 = 0.0;
    for kind in &kinds {
        for seed in 0..20u64 {
            let mut r = rng(seed);
            let point = op_point(kind, &mut r);
            let w = rand_tensor(&mut r, &[64, 64], -1.0, 1.0);
            let f = |tape: &mut Tape, xs: &[Var]| {
                let out = tape.apply(kind.clone(), xs)?;
                let shape = tape.value(out).shape().to_vec();
                let n: usize = shape.iter().product();
                let c = tape.constant(Tensor::new(shape, w.data()[..n].to_vec()).unwrap());
                let m = tape.mul(out, c)?;
                tape.sum(m)
            };
            worst_op = worst_op.max(grad_check(f, &point, 1e-5, None).unwrap().max_rel_error);
        }
    }
    let t = start.elapsed();
    verdict(
        worst_full < 1e-3 && worst_op < 1e-4 && t < Duration::from_secs(60),
        format!("full objective rel err {:.2e} (< 1e-3), per-op {:.2e} (< 1e-4), {:.1?}", worst_full, worst_op, t),
    )
}

fn spring_state(r: &mut ChaCha8Rng, n: usize) -> PhaseState {
    let d = SpringSpec::DIM;
    PhaseState::new(n, d, (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect(), (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect(), 0.0)
        .unwrap()
}

fn second_criterion() -> Verdict {
    let start = Instant::now();
    let mut r = rng(5);
    let spec = SpringSpec::new(Adjacency::complete(5), SpringVariant::Simple).unwrap();
    let s0 = spring_state(&mut r, 5);
    let tr = rk4_integrate(&spec, &s0, 1e-4, 10_000).unwrap();
    let es = trajectory_energy(&tr.states, &System::Spring(spec)).unwrap();
    let h0 = es[0].total;
    let drift = es.iter().map(|e| ((e.total - h0) / h0).abs()).fold(0.0, f64::max);

    let spec = SpringSpec::new(Adjacency::complete(4), SpringVariant::damped()).unwrap();
    let tr = rk4_integrate(&spec, &spring_state(&mut r, 4), 1e-4, 10_000).unwrap();
    let es = trajectory_energy(&tr.states, &System::Spring(spec)).unwrap();
    let monotone = es.windows(2).all(|w| w[1].mechanical() <= w[0].mechanical() + 1e-12 * w[0].mechanical().abs());

    let spec = SpringSpec::new(Adjacency::complete(3), SpringVariant::forced()).unwrap();
    let n = (2.0 * std::f64::consts::PI / 1e-3).round() as usize;
    let tr = rk4_integrate(&spec, &spring_state(&mut r, 3), 1e-3, n).unwrap();
    let es = trajectory_energy(&tr.states, &System::Spring(spec)).unwrap();
    let m0 = es[0].mechanical();
    let var = es.iter().map(|e| ((e.mechanical() - m0) / m0).abs()).fold(0.0, f64::max);
    let t = start.elapsed();
    verdict(
        drift < 1e-6 && monotone && var > 1e-3 && t < Duration::from_secs(60),
        format!("simple drift {:.2e}, damped monotone {}, forced variation {:.2e}, {:.1?}", drift, monotone, var, t),
    )
}

fn third_criterion() -> Verdict {
    let start = Instant::now();
    let mut r = rng(4);
    let s0 = spring_state(&mut r, 4);
    let adj = Adjacency::complete(4);
    let simple = SpringSpec::new(adj.clone(), SpringVariant::Simple).unwrap();
    let damped = SpringSpec::new(adj, SpringVariant::damped()).unwrap();
    let rs = reversibility_residual(&simple, &s0, 1e-4, 1000, Integrator::Rk4).unwrap();
    let rd = reversibility_residual(&damped, &s0, 1e-4, 1000, Integrator::Rk4).unwrap();
    let t = start.elapsed();
    verdict(
        rs < 1e-6 && rd >= 1e3 * rs && t < Duration::from_secs(60),
        format!("simple residual {:.2e}, damped {:.2e} (ratio {:.2e}), {:.1?}", rs, rd, rd / rs, t),
    )
}

fn fourth_criterion() -> Verdict {
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for sys in [AnalyticSystem::Exponential { lambda: -1.0 }, AnalyticSystem::SpringPair { k: 1.0, mass: 1.0 }] {
        let e = solver_order_experiment(&ScalingSpec::new(sys, Integrator::Euler)).unwrap();
        let k = solver_order_experiment(&ScalingSpec::new(sys, Integrator::Rk4)).unwrap();
        let es = e.forward_slope.map_or(f64::NAN, |s| s.0);
        let ks = k.closure_slope.map_or(f64::NAN, |s| s.0);
        let kt = k.reverse_truth_slope.map_or(f64::NAN, |s| s.0);
        ok &= (es - 2.0).abs() <= 0.4 && (ks - 8.0).abs() <= 1.0 && e.monotone_in_dt && k.monotone_in_dt;
        parts.push(format!(
            "{}: euler {:.3}, rk4 closure {:.3}, rk4 reverse-vs-truth {:.3}, monotone {}",
            sys.name(),
            es,
            ks,
            kt,
            e.monotone_in_dt && k.monotone_in_dt
        ));
    }
    let t = start.elapsed();
    verdict(ok && t < Duration::from_secs(120), format!("{}; {:.1?}", parts.join("; "), t))
}

fn fifth_criterion() -> Verdict {
    let start = Instant::now();
    let exact = worst_case_errors(0.3, 0.4) == (0.4, 0.7) && worst_case_errors(0.0, 0.4) == (0.4, 0.4);
    let r = maxerror_comparison(&MicroConfig::default()).unwrap();
    let t = start.elapsed();
    verdict(
        exact && r.cases.len() == 100 && r.fraction_le >= 0.9 && t < Duration::from_secs(600),
        format!("constructed bounds exact {}, max1 <= max2 in {:.0}% of {} scenarios, {:.1?}", exact, 100.0 * r.fraction_le, r.cases.len(), t),
    )
}

struct SmokeRun {
    seed: u64,
    alpha: f64,
    reports: Vec<LossReport>,
    test_mse: f64,
    elapsed: Duration,
}

fn smoke_runs() -> Vec<SmokeRun> {
    let ds = spring_dataset(3, 200, 50, 7);
    let s = &ds.meta.sampling;
    let train_set = prepare_samples(&ds.train, SplitMode::Train { horizon: s.train_frames() }, None).unwrap();
    let mode = SplitMode::Test { horizon: s.train_frames(), extension: s.test_frames() - s.train_frames() };
    let test_set = prepare_samples(&ds.test, mode, None).unwrap();
    let mut runs = Vec::new();
    for seed in 0..3u64 {
        for alpha in [0.0, 1.0] {
            let start = Instant::now();
            let mut cfg = TrainConfig::new(LossConfig::new(alpha, LossVariant::Tango).unwrap());
            cfg.lr = 1e-3;
            cfg.seed = seed;
            let out = train(TangoModel::new(ModelConfig::smoke(4), seed).unwrap(), &train_set, &cfg).unwrap();
            let test_mse = evaluate(&out.model, &test_set, 60).unwrap().mse;
            runs.push(SmokeRun { seed, alpha, reports: out.reports, test_mse, elapsed: start.elapsed() });
        }
    }
    runs
}

fn sixth_criterion(runs: &[SmokeRun]) -> Verdict {
    let get = |a: f64| runs.iter().find(|r| r.seed == 0 && r.alpha == a).unwrap();
    let (r1, r0) = (get(1.0), get(0.0));
    let first = &r1.reports[0];
    let last = r1.reports.last().unwrap();
    let pred_ok = last.pred <= 0.5 * first.pred;
    let (rev_first, rev_last) = (first.reverse.unwrap(), last.reverse.unwrap());
    let rev_ok = rev_last < rev_first;
    let tracked = r0.reports.last().unwrap().reverse.unwrap();
    let track_ok = tracked >= rev_last;
    let t = r1.elapsed + r0.elapsed;
    verdict(
        pred_ok && rev_ok && track_ok && t < Duration::from_secs(1200),
        format!(
            "L_pred {:.4e} -> {:.4e} ({}), L_rev {:.4e} -> {:.4e} ({}), alpha=0 tracked final {:.4e} vs alpha=1 {:.4e} ({}), {:.1?}",
            first.pred, last.pred, pred_ok, rev_first, rev_last, rev_ok, tracked, rev_last, track_ok, t
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn seventh_criterion(runs: &[SmokeRun]) -> Verdict {
    let mse = |a: f64| runs.iter().filter(|r| r.alpha == a).map(|r| r.test_mse).collect::<Vec<_>>();
    let (m1, m0) = (median(mse(1.0)), median(mse(0.0)));
    verdict(m1 <= m0, format!("median test MSE alpha=1 {:.10e} vs alpha=0 {:.10e}; per seed {:?} vs {:?}", m1, m0, mse(1.0), mse(0.0)))
}

fn cli(args: &[&str], cwd: &Path) -> PathBuf {
    let out = Command::new(env!("CARGO_BIN_EXE_reversym")).args(args).current_dir(cwd).output().unwrap();
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
    cwd.join(String::from_utf8(out.stdout).unwrap().trim())
}

fn pipeline(cwd: &Path, root: &str) -> Vec<(String, Vec<u8>)> {
    let sim = cli(&["simulate", "--system", "simple-spring", "--n-train", "20", "--n-test", "5", "--n-agents", "3", "--seed", "7", "--out", root], cwd);
    let ds = sim.join("dataset");
    let cfg = cwd.join(format!("{}.cfg", root));
    fs::write(&cfg, format!("dataset: {}\nepochs: 3\nlr: 0.001\nbatch: 8\nalpha: 1\nseed: 7\n", ds.display())).unwrap();
    let tr = cli(&["train", "--config", cfg.to_str().unwrap(), "--out", root], cwd);
    let ck = tr.join("model.ckpt");
    let ev = cli(&["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", ds.to_str().unwrap(), "--seed", "7", "--out", root], cwd);
    let mut files = Vec::new();
    for (dir, name) in [(&ds, "meta"), (&ds, "trajectories"), (&ds, "adjacency"), (&tr, "model.ckpt"), (&tr, "losses.csv"), (&ev, "metrics.csv")] {
        files.push((name.to_string(), fs::read(dir.join(name)).unwrap()));
    }
    files
}

fn eighth_criterion() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let a = pipeline(tmp.path(), "first");
    let b = pipeline(tmp.path(), "second");
    let diff: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x.1 != y.1).map(|(x, _)| x.0.as_str()).collect();
    verdict(diff.is_empty(), format!("{} files compared, differing: {:?}", a.len(), diff))
}

fn ninth_criterion(runs: &[SmokeRun]) -> Verdict {
    let mut worst: f64 = 0.0;
    let mut batches = 0;
    for r in runs {
        for rep in &r.reports {
            for b in &rep.batches {
                let want = b.pred + r.alpha * b.reverse.unwrap_or(0.0);
                worst = worst.max((b.total - want).abs() / b.total.abs().max(1.0));
                batches += 1;
            }
        }
    }
    let ds = spring_dataset(3, 6, 0, 9);
    let set = prepare_samples(&ds.train, SplitMode::Train { horizon: 60 }, None).unwrap();
    for variant in [LossVariant::GtRev, LossVariant::Rev2] {
        let mut cfg = TrainConfig::new(LossConfig::new(0.7, variant).unwrap());
        cfg.epochs = 2;
        cfg.batch_size = 3;
        cfg.lr = 1e-3;
        let out = train(TangoModel::new(ModelConfig::smoke(4), 2).unwrap(), &set, &cfg).unwrap();
        for b in out.reports.iter().flat_map(|r| &r.batches) {
            let want = b.pred + 0.7 * b.reverse.unwrap();
            worst = worst.max((b.total - want).abs() / b.total.abs().max(1.0));
            batches += 1;
        }
    }
    let mut r = rng(3);
    let mut zero_ok = true;
    let mut sym: f64 = 0.0;
    for _ in 0..50 {
        let frames = r.gen_range(1..6);
        let a: Vec<Tensor> = (0..frames).map(|_| rand_tensor(&mut r, &[3, 4], -1.0, 1.0)).collect();
        let b: Vec<Tensor> = (0..frames).map(|_| rand_tensor(&mut r, &[3, 4], -1.0, 1.0)).collect();
        let flipped: Vec<Tensor> = a.iter().rev().cloned().collect();
        zero_ok &= loss_pred(&a, &a).unwrap() == 0.0
            && loss_reverse(&a, &flipped).unwrap() == 0.0
            && loss_gt_rev(&a, &flipped).unwrap() == 0.0
            && loss_rev2(&a, &a).unwrap() == 0.0;
        sym = sym.max((loss_reverse(&a, &b).unwrap() - loss_reverse(&b, &a).unwrap()).abs());
    }
    verdict(
        worst <= 1e-12 && zero_ok && sym == 0.0,
        format!("{} logged batches, worst identity gap {:.2e}; zero on coinciding inputs {}; symmetry gap {:.1e}", batches, worst, zero_ok, sym),
    )
}

fn history(r: &mut ChaCha8Rng, n: usize, frames: usize, dim: usize) -> Vec<Vec<Observation>> {
    (0..n)
        .map(|_| {
            let k = r.gen_range(1..=frames.min(6));
            let mut fr: Vec<usize> = (0..frames).collect();
            fr.shuffle(r);
            fr.truncate(k);
            fr.sort_unstable();
            fr.into_iter().map(|f| Observation { frame: f, t: f as f64, features: (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect() }).collect()
        })
        .collect()
}

fn decoded(model: &TangoModel, cond: &[Vec<Observation>], adj: &Adjacency, frames: usize) -> Vec<Tensor> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let z0 = b.encode(&mut tape, &TemporalGraph::build(cond, adj, 10).unwrap()).unwrap();
    let zs = b.integrate_forward(&mut tape, z0, &EdgeIndex::from_adjacency(adj), frames).unwrap();
    zs.into_iter()
        .map(|z| {
            let y = b.decode(&mut tape, z).unwrap();
            tape.value(y).clone()
        })
        .collect()
}

fn tenth_criterion() -> Verdict {
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let mut r = rng(seed);
        let model = randomized(tiny(), seed, 0.6);
        let cond = history(&mut r, 4, 10, 4);
        let mut pairs = Vec::new();
        for i in 0..4 {
            for j in i + 1..4 {
                if r.gen_bool(0.5) {
                    pairs.push((i, j));
                }
            }
        }
        let adj = Adjacency::from_pairs(4, &pairs).unwrap();
        let mut perm: Vec<usize> = (0..4).collect();
        perm.shuffle(&mut r);
        let mut pcond = vec![Vec::new(); 4];
        for (i, c) in cond.iter().enumerate() {
            pcond[perm[i]] = c.clone();
        }
        let a = decoded(&model, &cond, &adj, 6);
        let b = decoded(&model, &pcond, &adj.permuted(&perm), 6);
        let exact = a.iter().zip(&b).all(|(ya, yb)| {
            (0..4).all(|i| ya.row(i).iter().zip(yb.row(perm[i])).all(|(x, y)| x.to_bits() == y.to_bits()))
        });
        if !exact {
            failures.push(seed);
        }
    }
    verdict(failures.is_empty(), format!("100 seeds, 4 agents, bitwise mismatches at {:?}", failures))
}

#[test]
fn acceptance_criteria() {
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    results.push((1, "gradient correctness", first_criterion()));
    results.push((2, "simulator fidelity", second_criterion()));
    results.push((3, "time reversal of exact dynamics", third_criterion()));
    results.push((4, "solver orders", fourth_criterion()));
    results.push((5, "reversal-loss implementation comparison", fifth_criterion()));
    let runs = smoke_runs();
    results.push((6, "training smoke", sixth_criterion(&runs)));
    results.push((7, "trend check", seventh_criterion(&runs)));
    results.push((8, "determinism", eighth_criterion()));
    results.push((9, "loss identities", ninth_criterion(&runs)));
    results.push((10, "equivariance", tenth_criterion()));
    results.sort_by_key(|r| r.0);
    for (n, name, v) in &results {
        println!("criterion {:>2} {}: {} | {}", n, if v.pass { "PASS" } else { "FAIL" }, name, v.detail);
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failing criteria: {:?}", failed);
}
