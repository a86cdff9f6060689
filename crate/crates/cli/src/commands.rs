use std::fs;
use std::path::{Path, PathBuf};

use reversym::analysis::{
    self, energy_csv, maxerror_comparison, reversal_track, solver_order_experiment, sweep_csv, track_csv,
    worst_case_errors, AnalyticSystem, Csv, MicroConfig, ScalingSpec, DEFAULT_ALPHAS, DEFAULT_LENGTHS,
};
use reversym::dataio::{format_f64, generate_dataset, read_dataset, write_dataset, Dataset, SamplingConfig, SplitMode, SystemConfig, SystemKind};
use reversym::model::{read_checkpoint, write_checkpoint, TangoModel};
use reversym::physics::Integrator;
use reversym::training::{evaluate, parse_train_file, prepare_samples, train as fit, LossVariant, TrainError, TrainFile};

use crate::manifest::{finish, prepare_run_dir, sha256_hex, RunManifest};
use crate::{AnalyzeArgs, CliError, EvalArgs, Experiment, IntegratorArg, SimulateArgs, TrainArgs};

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_string(), v.to_string())
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_csv(dir: &Path, name: &str, csv: &Csv) -> Result<String, CliError> {
    write(&dir.join(name), &csv.render())?;
    Ok(name.to_string())
}

pub fn simulate(a: &SimulateArgs) -> Result<PathBuf, CliError> {
    let kind: SystemKind = a.system.parse()?;
    let mut sys = SystemConfig::new(kind);
    if let Some(n) = a.n_agents {
        sys.n_agents = n;
    }
    let mut samp = SamplingConfig::new(kind, a.seed);
    if let Some(dt) = a.dt {
        samp.dt = dt;
    }
    sys.validate()?;
    samp.validate()?;
    let config = vec![
        kv("system", kind),
        kv("n_train", a.n_train),
        kv("n_test", a.n_test),
        kv("n_agents", sys.n_agents),
        kv("dt", format_f64(samp.dt)),
    ];
    let mut m = RunManifest::new("simulate", config, a.seed);
    let dir = prepare_run_dir(&a.common.out, &m, a.common.force)?;
    let ds = generate_dataset(&sys, &samp, a.n_train, a.n_test)?;
    write_dataset(&ds, &dir.join("dataset"))?;
    finish(&dir, &mut m, vec!["dataset".into()])?;
    Ok(dir)
}

/// Config file, then flags. A relative dataset path in the file is taken
/// relative to the file.
fn load_train_file(config: Option<&Path>, dataset: Option<&Path>) -> Result<(TrainFile, PathBuf), CliError> {
    let mut f = match config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let mut f = parse_train_file(&text)?;
            if let Some(d) = &f.dataset {
                if d.is_relative() {
                    f.dataset = Some(p.parent().unwrap_or(Path::new("")).join(d));
                }
            }
            f
        }
        None => TrainFile::default(),
    };
    if let Some(d) = dataset {
        f.dataset = Some(d.to_path_buf());
    }
    let ds = f.dataset.clone().ok_or_else(|| CliError::Usage("no dataset given (flag or config)".into()))?;
    Ok((f, ds))
}

fn train_pairs(f: &TrainFile, dataset: &Path) -> Vec<(String, String)> {
    let t = &f.train;
    vec![
        kv("dataset", dataset.display()),
        kv("alpha", format_f64(t.loss.alpha)),
        kv("variant", t.loss.variant.name()),
        kv("epochs", t.epochs),
        kv("lr", format_f64(t.lr)),
        kv("batch", t.batch_size),
        kv("solver_step", f.solver_step.map_or_else(|| "default".into(), format_f64)),
        kv("clip", t.clip.map_or_else(|| "none".into(), format_f64)),
        kv("weight_decay", format_f64(t.weight_decay)),
        kv("model", &f.model),
        kv("track_reverse", t.track_reverse),
    ]
}

fn train_mode(ds: &Dataset) -> SplitMode {
    SplitMode::Train { horizon: ds.meta.sampling.train_frames() }
}

fn test_mode(ds: &Dataset) -> SplitMode {
    let s = &ds.meta.sampling;
    SplitMode::Test { horizon: s.train_frames(), extension: s.test_frames() - s.train_frames() }
}

pub fn train(a: &TrainArgs) -> Result<PathBuf, CliError> {
    let (mut f, ds_path) = load_train_file(a.config.as_deref(), a.dataset.as_deref())?;
    if let Some(v) = a.alpha {
        f.train.loss.alpha = v;
    }
    if let Some(v) = &a.variant {
        f.train.loss.variant = v.parse::<LossVariant>()?;
    }
    if let Some(v) = a.epochs {
        f.train.epochs = v;
    }
    if let Some(v) = a.lr {
        f.train.lr = v;
    }
    if let Some(v) = a.batch {
        f.train.batch_size = v;
    }
    if let Some(v) = a.seed {
        f.train.seed = v;
    }
    f.train.validate()?;
    let ds = read_dataset(&ds_path)?;
    let model_cfg = f.model_config(ds.meta.feature_dim)?;
    let mut m = RunManifest::new("train", train_pairs(&f, &ds_path), f.train.seed);
    let dir = prepare_run_dir(&a.common.out, &m, a.common.force)?;
    let samples = prepare_samples(&ds.train, train_mode(&ds), None)?;
    let model = TangoModel::new(model_cfg, f.train.seed)?;
    let out = match fit(model, &samples, &f.train) {
        Ok(o) => o,
        Err(TrainError::NonFinite { epoch, batch, last_good }) => {
            write_checkpoint(&last_good, &dir.join("last_good.ckpt"))?;
            return Err(TrainError::NonFinite { epoch, batch, last_good }.into());
        }
        Err(e) => return Err(e.into()),
    };
    let ckpt = dir.join("model.ckpt");
    write_checkpoint(&out.model, &ckpt)?;
    let bytes = fs::read(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    write(&dir.join("model.ckpt.sha256"), &format!("{}\n", sha256_hex(&bytes)))?;
    let losses = write_csv(&dir, "losses.csv", &track_csv(&reversal_track(&out.reports)))?;
    finish(&dir, &mut m, vec!["model.ckpt".into(), "model.ckpt.sha256".into(), losses])?;
    Ok(dir)
}

fn load_pair(checkpoint: &Path, dataset: &Path) -> Result<(TangoModel, Dataset), CliError> {
    let model = read_checkpoint(checkpoint)?;
    let ds = read_dataset(dataset)?;
    if model.config.obs_dim != ds.meta.feature_dim {
        return Err(CliError::Usage(format!(
            "checkpoint expects {} features per agent, dataset has {}",
            model.config.obs_dim, ds.meta.feature_dim
        )));
    }
    Ok((model, ds))
}

fn file_hash(p: &Path) -> Result<String, CliError> {
    Ok(sha256_hex(&fs::read(p).map_err(|e| CliError::io(p, e))?))
}

pub fn eval(a: &EvalArgs) -> Result<PathBuf, CliError> {
    let (model, ds) = load_pair(&a.checkpoint, &a.dataset)?;
    let config = vec![
        kv("checkpoint", a.checkpoint.display()),
        kv("checkpoint_sha256", file_hash(&a.checkpoint)?),
        kv("dataset", a.dataset.display()),
        kv("mask_ratio", a.mask_ratio.map_or_else(|| "none".into(), format_f64)),
        kv("max_length", a.max_length),
        kv("energy", a.energy),
    ];
    let mut m = RunManifest::new("eval", config, a.seed);
    let dir = prepare_run_dir(&a.common.out, &m, a.common.force)?;
    let samples = prepare_samples(&ds.test, test_mode(&ds), a.mask_ratio.map(|r| (r, a.seed)))?;
    let report = evaluate(&model, &samples, a.max_length)?;
    let mut csv = Csv::new(&["length", "mse"]);
    for (l, mse) in &report.per_length {
        csv.push(vec![l.to_string(), format_f64(*mse)]);
    }
    let mut outputs = vec![write_csv(&dir, "metrics.csv", &csv)?];
    let summary = format!(
        "mse: {}\nvalues: {}\nreverse: {}\nmax_length: {}\n",
        format_f64(report.mse),
        report.n_values,
        format_f64(report.reverse),
        a.max_length
    );
    write(&dir.join("summary.txt"), &summary)?;
    outputs.push("summary.txt".into());
    if a.energy {
        let frame_dt = ds.meta.sampling.frame_dt();
        let mut all = Csv::new(&["record", "offset", "t", "kinetic", "potential", "total"]);
        for (s, r) in samples.iter().zip(&ds.test) {
            let system = ds.meta.system.build(&r.adjacency)?;
            let t0 = s.graph.origin_frame as f64 * frame_dt;
            for row in energy_csv(&analysis::energy_curve(&model, s, &system, &ds.meta.stats, t0, frame_dt)?).rows {
                let mut full = vec![s.id.to_string()];
                full.extend(row);
                all.push(full);
            }
        }
        outputs.push(write_csv(&dir, "energy.csv", &all)?);
    }
    finish(&dir, &mut m, outputs)?;
    Ok(dir)
}

fn list<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn need<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Usage(format!("this experiment needs --{}", what)))
}

type Body = Box<dyn FnOnce(&mut String) -> Result<Vec<(String, Csv)>, CliError>>;

fn slope_text(s: Option<(f64, f64)>, scale: f64) -> String {
    s.map_or_else(|| "degenerate".into(), |(v, _)| format_f64(v * scale))
}

/// Resolves inputs and config, writes the manifest, then runs the body.
pub fn analyze(a: &AnalyzeArgs) -> Result<PathBuf, CliError> {
    let seed = a.seed.unwrap_or(0);
    let mut config = vec![kv("experiment", format!("{:?}", a.experiment))];
    let body: Body = match a.experiment {
        Experiment::SolverOrder => {
            let integ = match a.integrator {
                IntegratorArg::Euler => Integrator::Euler,
                IntegratorArg::Rk4 => Integrator::Rk4,
            };
            config.push(kv("integrator", format!("{:?}", integ).to_lowercase()));
            Box::new(move |summary| {
                let mut csv: Option<Csv> = None;
                for sys in [AnalyticSystem::Exponential { lambda: -1.0 }, AnalyticSystem::SpringPair { k: 1.0, mass: 1.0 }] {
                    let r = solver_order_experiment(&ScalingSpec::new(sys, integ))?;
                    summary.push_str(&format!(
                        "{}: order {} forward_sq_slope {} closure_sq_slope {} reverse_truth_sq_slope {} horizon_forward_slope {} horizon_closure_slope {} monotone_dt {} monotone_horizon {}\n",
                        sys.name(),
                        slope_text(r.forward_slope, 0.5),
                        slope_text(r.forward_slope, 1.0),
                        slope_text(r.closure_slope, 1.0),
                        slope_text(r.reverse_truth_slope, 1.0),
                        slope_text(r.horizon_forward_slope, 1.0),
                        slope_text(r.horizon_closure_slope, 1.0),
                        r.monotone_in_dt,
                        r.monotone_in_horizon
                    ));
                    let part = r.to_csv();
                    match &mut csv {
                        Some(c) => c.rows.extend(part.rows),
                        None => csv = Some(part),
                    }
                }
                Ok(vec![("scaling.csv".into(), csv.expect("two systems"))])
            })
        }
        Experiment::Maxerror => {
            let cfg = MicroConfig { scenarios: a.scenarios, seed, ..MicroConfig::default() };
            config.push(kv("scenarios", a.scenarios));
            Box::new(move |summary| {
                let r = maxerror_comparison(&cfg)?;
                for (x, y) in [(0.3, 0.4), (0.0, 0.4)] {
                    let (m1, m2) = worst_case_errors(x, y);
                    summary.push_str(&format!("worst_case a={} b={}: max1 {} max2 {}\n", x, y, format_f64(m1), format_f64(m2)));
                }
                summary.push_str(&format!("fraction_max1_le_max2: {}\n", format_f64(r.fraction_le)));
                Ok(vec![("maxerror.csv".into(), r.to_csv())])
            })
        }
        Experiment::AlphaSweep | Experiment::ReversalTrack => {
            let (mut f, ds_path) = load_train_file(a.config.as_deref(), a.dataset.as_deref())?;
            if let Some(s) = a.seed {
                f.train.seed = s;
            }
            let ds = read_dataset(&ds_path)?;
            let model_cfg = f.model_config(ds.meta.feature_dim)?;
            if a.experiment == Experiment::AlphaSweep {
                let alphas = a.alphas.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec());
                let max_length = a.max_length;
                config.extend(train_pairs(&f, &ds_path));
                config.push(kv("alphas", list(&alphas)));
                config.push(kv("max_length", max_length));
                Box::new(move |summary| {
                    let train_set = prepare_samples(&ds.train, train_mode(&ds), None)?;
                    let test_set = prepare_samples(&ds.test, test_mode(&ds), None)?;
                    let rows = analysis::alpha_sweep(&train_set, &test_set, &model_cfg, &f.train, &alphas, max_length)?;
                    for r in &rows {
                        let v = r.mse.map_or_else(|| r.note.clone(), format_f64);
                        summary.push_str(&format!("alpha {}: {}\n", format_f64(r.param), v));
                    }
                    Ok(vec![("alpha.csv".into(), sweep_csv("alpha", &rows))])
                })
            } else {
                if let Some(v) = a.alpha {
                    f.train.loss.alpha = v;
                }
                f.train.track_reverse = true;
                config.extend(train_pairs(&f, &ds_path));
                Box::new(move |summary| {
                    let train_set = prepare_samples(&ds.train, train_mode(&ds), None)?;
                    let out = fit(TangoModel::new(model_cfg, f.train.seed)?, &train_set, &f.train)?;
                    summary.push_str(&format!(
                        "alpha: {}\nreverse_backpropagated: {}\n",
                        format_f64(f.train.loss.alpha),
                        f.train.loss.alpha > 0.0
                    ));
                    Ok(vec![("track.csv".into(), track_csv(&reversal_track(&out.reports)))])
                })
            }
        }
        Experiment::HorizonSweep | Experiment::RatioSweep => {
            let ckpt = need(&a.checkpoint, "checkpoint")?;
            let dsp = need(&a.dataset, "dataset")?;
            let (model, ds) = load_pair(ckpt, dsp)?;
            config.push(kv("checkpoint_sha256", file_hash(ckpt)?));
            config.push(kv("dataset", dsp.display()));
            if a.experiment == Experiment::HorizonSweep {
                let lengths = a.lengths.clone().unwrap_or_else(|| DEFAULT_LENGTHS.to_vec());
                config.push(kv("lengths", list(&lengths)));
                Box::new(move |_| {
                    let test_set = prepare_samples(&ds.test, test_mode(&ds), None)?;
                    let rows = analysis::horizon_sweep(&model, &test_set, &lengths)?;
                    Ok(vec![("horizon.csv".into(), sweep_csv("length", &rows))])
                })
            } else {
                let ratios = a.ratios.clone().unwrap_or_else(|| vec![1.0, 0.8, 0.6, 0.4]);
                let max_length = a.max_length;
                config.push(kv("ratios", list(&ratios)));
                config.push(kv("max_length", max_length));
                Box::new(move |_| {
                    let rows = analysis::ratio_sweep(&model, &ds.test, test_mode(&ds), &ratios, seed, max_length)?;
                    Ok(vec![("ratio.csv".into(), sweep_csv("ratio", &rows))])
                })
            }
        }
    };
    let mut m = RunManifest::new("analyze", config, seed);
    let dir = prepare_run_dir(&a.common.out, &m, a.common.force)?;
    let mut summary = String::new();
    let outputs = body(&mut summary)?;
    let mut names = Vec::new();
    for (name, csv) in &outputs {
        names.push(write_csv(&dir, name, csv)?);
    }
    write(&dir.join("summary.txt"), &summary)?;
    names.push("summary.txt".into());
    finish(&dir, &mut m, names)?;
    Ok(dir)
}
