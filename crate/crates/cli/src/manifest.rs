use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest";

/// Record of one command invocation. The id hashes the command and its
/// resolved configuration, so identical invocations share a run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunManifest {
    pub id: String,
    pub command: String,
    pub config: Vec<(String, String)>,
    pub seed: u64,
    pub version: String,
    pub started: u64,
    pub finished: Option<u64>,
    pub outputs: Vec<String>,
    pub completed: bool,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl RunManifest {
    pub fn new(command: &str, config: Vec<(String, String)>, seed: u64) -> Self {
        let mut key = format!("{}\nseed={}\n", command, seed);
        for (k, v) in &config {
            let _ = writeln!(key, "{}={}", k, v);
        }
        Self {
            id: format!("{}-{}", command, &sha256_hex(key.as_bytes())[..12]),
            command: command.into(),
            config,
            seed,
            version: env!("CARGO_PKG_VERSION").into(),
            started: now(),
            finished: None,
            outputs: Vec::new(),
            completed: false,
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "id: {}", self.id);
        let _ = writeln!(s, "command: {}", self.command);
        let _ = writeln!(s, "version: {}", self.version);
        let _ = writeln!(s, "seed: {}", self.seed);
        let _ = writeln!(s, "started: {}", self.started);
        let _ = writeln!(s, "finished: {}", self.finished.map_or_else(|| "-".into(), |t| t.to_string()));
        let _ = writeln!(s, "completed: {}", self.completed);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{}: {}", k, v);
        }
        for o in &self.outputs {
            let _ = writeln!(s, "output: {}", o);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut m = RunManifest::new("", Vec::new(), 0);
        m.config.clear();
        for line in text.lines() {
            let (k, v) = line.split_once(": ").ok_or_else(|| CliError::Usage(format!("bad manifest line '{}'", line)))?;
            let num = |v: &str| v.parse::<u64>().map_err(|_| CliError::Usage(format!("bad manifest value '{}'", v)));
            match k {
                "id" => m.id = v.into(),
                "command" => m.command = v.into(),
                "version" => m.version = v.into(),
                "seed" => m.seed = num(v)?,
                "started" => m.started = num(v)?,
                "finished" => m.finished = if v == "-" { None } else { Some(num(v)?) },
                "completed" => m.completed = v == "true",
                "output" => m.outputs.push(v.into()),
                _ => match k.strip_prefix("config.") {
                    Some(c) => m.config.push((c.into(), v.into())),
                    None => return Err(CliError::Usage(format!("unknown manifest key '{}'", k))),
                },
            }
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let p = dir.join(MANIFEST_FILE);
        fs::write(&p, self.render()).map_err(|e| CliError::io(&p, e))
    }
}

/// Creates `root/<id>`. An existing directory is replaced only with `force`.
pub fn prepare_run_dir(root: &Path, manifest: &RunManifest, force: bool) -> Result<PathBuf, CliError> {
    let dir = root.join(&manifest.id);
    if dir.exists() {
        if !force {
            return Err(CliError::Usage(format!("{} exists; pass --force to overwrite", dir.display())));
        }
        fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    manifest.write(&dir)?;
    Ok(dir)
}

pub fn finish(dir: &Path, manifest: &mut RunManifest, outputs: Vec<String>) -> Result<(), CliError> {
    manifest.outputs = outputs;
    manifest.finished = Some(now());
    manifest.completed = true;
    manifest.write(dir)
}
