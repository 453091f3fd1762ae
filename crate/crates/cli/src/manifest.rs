use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use anyhow::{Context, Result};

use crate::config::Config;

pub const MANIFEST_NAME: &str = "manifest.txt";

/// Record of one run, written next to its outputs. It is valid TOML; the
/// `[solver]`, `[net]` and `[bench]` tables reload as a config.
#[derive(Debug)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: Config,
    pub threads: Option<usize>,
    pub git: String,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<(String, Duration)>,
    started: Instant,
}

impl RunManifest {
    pub fn new(command: Vec<String>, config: Config, threads: Option<usize>) -> Self {
        RunManifest {
            command,
            config,
            threads,
            git: git_describe(),
            outputs: Vec::new(),
            stages: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Runs `f` and records its duration under `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.stages.push((name.to_string(), t.elapsed()));
        out
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn render(&self) -> String {
        let quote = |s: &str| toml::Value::String(s.to_string()).to_string();
        let list = |v: Vec<String>| format!("[{}]", v.iter().map(|s| quote(s)).collect::<Vec<_>>().join(", "));
        let mut s = String::new();
        s.push_str("[run]\n");
        let _ = writeln!(s, "command = {}", list(self.command.clone()));
        let _ = writeln!(s, "git = {}", quote(&self.git));
        let _ = writeln!(s, "seed = {}", self.config.bench.seed);
        let _ = writeln!(s, "data_seed = {}", self.config.bench.data_seed);
        match self.threads {
            Some(n) => {
                let _ = writeln!(s, "threads = {n}");
            }
            None => s.push_str("threads = \"all\"\n"),
        }
        let _ = writeln!(s, "wall_clock_s = {:.3}", self.started.elapsed().as_secs_f64());
        let _ = writeln!(
            s,
            "outputs = {}",
            list(self.outputs.iter().map(|p| p.display().to_string()).collect())
        );
        s.push_str("\n[run.timing_s]\n");
        for (name, d) in &self.stages {
            let _ = writeln!(s, "{} = {:.3}", quote(name), d.as_secs_f64());
        }
        s.push('\n');
        s.push_str(&self.config.to_toml());
        s
    }

    /// Writes `manifest.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn git_describe() -> String {
    Command::new("git")
        .args(["-C", env!("CARGO_MANIFEST_DIR"), "describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("v{} (no git)", env!("CARGO_PKG_VERSION")))
}
