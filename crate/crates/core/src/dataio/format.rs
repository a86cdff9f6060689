use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    DataError, Dataset, DatasetMeta, NormalizationStats, Observation, SamplingConfig, SystemConfig, SystemKind,
    TrajectoryRecord,
};
use crate::physics::Adjacency;

pub const FORMAT_VERSION: &str = "1";

/// Keys of the `meta` file, in the order they are written.
pub const META_KEYS: [&str; 26] = [
    "format",
    "system",
    "n_agents",
    "feature_dim",
    "mass",
    "spring_constant",
    "forcing_strength",
    "forcing_frequency",
    "damping",
    "pendulum_mass",
    "pendulum_length",
    "gravity",
    "edge_probability",
    "dt",
    "stride",
    "obs_count_min",
    "obs_count_max",
    "train_steps",
    "test_steps",
    "test_extra_obs",
    "init_scale",
    "seed",
    "n_train",
    "n_test",
    "regenerated",
    "norm_max_abs",
];

/// 17 significant digits; parses back to the same bits.
pub fn format_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

fn meta_text(m: &DatasetMeta) -> String {
    let s = &m.system;
    let p = &m.sampling;
    let f = format_f64;
    let vals: [String; 26] = [
        FORMAT_VERSION.into(),
        s.kind.name().into(),
        s.n_agents.to_string(),
        m.feature_dim.to_string(),
        f(s.mass),
        f(s.spring_constant),
        f(s.forcing_strength),
        f(s.forcing_frequency),
        f(s.damping),
        f(s.pendulum_mass),
        f(s.pendulum_length),
        f(s.gravity),
        f(s.edge_probability),
        f(p.dt),
        p.stride.to_string(),
        p.obs_count_min.to_string(),
        p.obs_count_max.to_string(),
        p.train_steps.to_string(),
        p.test_steps.to_string(),
        p.test_extra_obs.to_string(),
        f(p.init_scale),
        p.seed.to_string(),
        m.n_train.to_string(),
        m.n_test.to_string(),
        m.regenerated.to_string(),
        m.stats.max_abs.iter().map(|v| f(*v)).collect::<Vec<_>>().join(" "),
    ];
    let mut out = String::new();
    for (k, v) in META_KEYS.iter().zip(vals) {
        let _ = writeln!(out, "{}: {}", k, v);
    }
    out
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = dir.join("meta");
    fs::write(&meta, meta_text(&ds.meta)).map_err(io_err(&meta))?;

    let mut traj = String::new();
    let mut adj = String::new();
    for r in ds.train.iter().chain(&ds.test) {
        for (a, obs) in r.agents.iter().enumerate() {
            for o in obs {
                let _ = write!(traj, "{} {} {}", r.id, a, format_f64(o.t));
                for v in &o.features {
                    traj.push(' ');
                    traj.push_str(&format_f64(*v));
                }
                traj.push('\n');
            }
        }
        let cells: Vec<&str> = r.adjacency.cells().iter().map(|c| if *c { "1" } else { "0" }).collect();
        adj.push_str(&cells.join(" "));
        adj.push('\n');
    }
    let tp = dir.join("trajectories");
    fs::write(&tp, traj).map_err(io_err(&tp))?;
    let ap = dir.join("adjacency");
    fs::write(&ap, adj).map_err(io_err(&ap))?;
    Ok(())
}

fn perr(file: &str, line: usize, msg: impl Into<String>) -> DataError {
    DataError::Parse { file: file.into(), line, msg: msg.into() }
}

fn parse_meta(text: &str) -> Result<DatasetMeta, DataError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once(':').ok_or_else(|| perr("meta", i + 1, "expected 'key: value'"))?;
        let k = k.trim();
        if !META_KEYS.contains(&k) {
            return Err(perr("meta", i + 1, format!("unknown key '{}'", k)));
        }
        map.insert(k.to_string(), (i + 1, v.trim().to_string()));
    }
    fn get<T: std::str::FromStr>(map: &BTreeMap<String, (usize, String)>, k: &str) -> Result<T, DataError> {
        let (line, v) = map.get(k).ok_or_else(|| perr("meta", 0, format!("missing key '{}'", k)))?;
        v.parse().map_err(|_| perr("meta", *line, format!("bad value for '{}': {}", k, v)))
    }
    let version: String = get(&map, "format")?;
    if version != FORMAT_VERSION {
        return Err(perr("meta", 1, format!("unsupported format {}", version)));
    }
    let kind: SystemKind = get::<String>(&map, "system")?.parse()?;
    let system = SystemConfig {
        kind,
        n_agents: get(&map, "n_agents")?,
        mass: get(&map, "mass")?,
        spring_constant: get(&map, "spring_constant")?,
        forcing_strength: get(&map, "forcing_strength")?,
        forcing_frequency: get(&map, "forcing_frequency")?,
        damping: get(&map, "damping")?,
        pendulum_mass: get(&map, "pendulum_mass")?,
        pendulum_length: get(&map, "pendulum_length")?,
        gravity: get(&map, "gravity")?,
        edge_probability: get(&map, "edge_probability")?,
    };
    let sampling = SamplingConfig {
        dt: get(&map, "dt")?,
        stride: get(&map, "stride")?,
        obs_count_min: get(&map, "obs_count_min")?,
        obs_count_max: get(&map, "obs_count_max")?,
        train_steps: get(&map, "train_steps")?,
        test_steps: get(&map, "test_steps")?,
        test_extra_obs: get(&map, "test_extra_obs")?,
        init_scale: get(&map, "init_scale")?,
        seed: get(&map, "seed")?,
    };
    let norm: String = get(&map, "norm_max_abs")?;
    let max_abs = norm
        .split_whitespace()
        .map(|v| v.parse::<f64>().map_err(|_| perr("meta", 0, format!("bad norm value {}", v))))
        .collect::<Result<Vec<_>, _>>()?;
    let meta = DatasetMeta {
        system,
        sampling,
        n_train: get(&map, "n_train")?,
        n_test: get(&map, "n_test")?,
        feature_dim: get(&map, "feature_dim")?,
        stats: NormalizationStats { max_abs },
        regenerated: get(&map, "regenerated")?,
    };
    if meta.stats.max_abs.len() != meta.feature_dim {
        return Err(perr("meta", 0, "norm_max_abs length differs from feature_dim"));
    }
    meta.system.validate()?;
    meta.sampling.validate()?;
    Ok(meta)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read_to_string(&p).map_err(|source| DataError::Io { path: p.display().to_string(), source })
    };
    let meta = parse_meta(&read("meta")?)?;
    let total = meta.n_train + meta.n_test;
    let n = meta.system.n_agents;
    let d = meta.feature_dim;
    let frame_dt = meta.sampling.frame_dt();

    let adj_text = read("adjacency")?;
    let mut adjs = Vec::with_capacity(total);
    for (i, line) in adj_text.lines().enumerate() {
        let cells = line
            .split_whitespace()
            .map(|c| match c {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(perr("adjacency", i + 1, format!("bad cell '{}'", c))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        adjs.push(Adjacency::new(n, cells).map_err(|e| perr("adjacency", i + 1, e.to_string()))?);
    }
    if adjs.len() != total {
        return Err(perr("adjacency", adjs.len(), format!("{} lines for {} trajectories", adjs.len(), total)));
    }

    let mut agents: Vec<Vec<Vec<Observation>>> = vec![vec![Vec::new(); n]; total];
    for (i, line) in read("trajectories")?.lines().enumerate() {
        let ln = i + 1;
        let mut it = line.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize, DataError> {
            it.next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| perr("trajectories", ln, format!("bad {}", what)))
        };
        let id = next_usize("trajectory id")?;
        let a = next_usize("agent id")?;
        let vals = line
            .split_whitespace()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|_| perr("trajectories", ln, format!("bad number '{}'", v))))
            .collect::<Result<Vec<_>, _>>()?;
        if id >= total || a >= n {
            return Err(perr("trajectories", ln, format!("id {} agent {} out of range", id, a)));
        }
        if vals.len() != d + 1 {
            return Err(perr("trajectories", ln, format!("{} features, expected {}", vals.len() - 1, d)));
        }
        let t = vals[0];
        let list = &mut agents[id][a];
        if list.last().is_some_and(|o: &Observation| o.t >= t) {
            return Err(perr("trajectories", ln, "timestamps must increase per agent"));
        }
        let frame = (t / frame_dt).round() as usize;
        list.push(Observation { frame, t, features: vals[1..].to_vec() });
    }
    let mut records: Vec<TrajectoryRecord> = agents
        .into_iter()
        .zip(adjs)
        .enumerate()
        .map(|(id, (agents, adjacency))| TrajectoryRecord {
            id,
            n_frames: if id < meta.n_train { meta.sampling.train_frames() } else { meta.sampling.test_frames() },
            agents,
            adjacency,
        })
        .collect();
    let test = records.split_off(meta.n_train);
    Ok(Dataset { meta, train: records, test })
}
