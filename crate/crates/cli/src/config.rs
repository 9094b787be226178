//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Float,
    Int,
    Text,
    /// Integer or `auto`.
    IntOrAuto,
}

/// Every recognized key with its default.
const KEYS: &[(&str, &str, Kind)] = &[
    // RS theory
    ("alpha", "0.5", Kind::Float),
    ("rho", "0.1", Kind::Float),
    ("mu_min", "1e-3", Kind::Float),
    ("mu_max", "5", Kind::Float),
    ("mu_steps", "40", Kind::Int),
    ("quad_nodes", "96", Kind::Int),
    ("damping", "0.5", Kind::Float),
    ("tol", "1e-10", Kind::Float),
    ("max_iter", "10000", Kind::Int),
    // RIC table and phase diagram
    ("rho_min", "0.01", Kind::Float),
    ("rho_max", "0.2", Kind::Float),
    ("rho_steps", "20", Kind::Int),
    ("alpha_min", "0.1", Kind::Float),
    ("alpha_max", "0.9", Kind::Float),
    ("alpha_steps", "9", Kind::Int),
    // EMC
    ("N", "12", Kind::Int),
    ("S", "3", Kind::Int),
    ("seed", "auto", Kind::IntOrAuto),
    ("matrix_seed", "auto", Kind::IntOrAuto),
    ("normalization", "raw", Kind::Text),
    ("matrix", "", Kind::Text),
    ("branch", "min", Kind::Text),
    ("mu_lo", "0", Kind::Float),
    ("mu_hi", "4", Kind::Float),
    ("rungs", "24", Kind::Int),
    ("sweeps", "100000", Kind::Int),
    ("burn_in", "auto", Kind::IntOrAuto),
    ("exchange_interval", "1", Kind::Int),
    ("bins", "200", Kind::Int),
    ("bin_lo", "0", Kind::Float),
    ("bin_hi", "4", Kind::Float),
    ("blocks", "20", Kind::Int),
    // multihistogram
    ("wham_tol", "1e-10", Kind::Float),
    ("bootstrap", "0", Kind::Int),
    ("min_samples", "100", Kind::Int),
    ("output_dir", ".", Kind::Text),
];

fn kind_of(key: &str) -> Option<Kind> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, _, kind)| *kind)
}

/// Fully resolved configuration: every key present, values validated by kind.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn parse_line(line: &str) -> Result<Option<(String, String)>, CliError> {
    let line = line.split('#').next().unwrap_or("").trim();
    if line.is_empty() {
        return Ok(None);
    }
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("expected key=value, got '{line}'")))?;
    Ok(Some((k.trim().to_string(), v.trim().trim_matches('"').to_string())))
}

impl RunConfig {
    /// Defaults, then the config file, then `--set` overrides, then `--seed`.
    pub fn load(file: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
        let mut assign = |k: String, v: String, origin: &str| -> Result<(), CliError> {
            match kind_of(&k) {
                None => Err(CliError::Config(format!("unknown config key '{k}' ({origin})"))),
                Some(kind) => {
                    check_kind(&k, &v, kind)?;
                    values.insert(k, v);
                    Ok(())
                }
            }
        };
        if let Some(path) = file {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
            for (n, line) in text.lines().enumerate() {
                if let Some((k, v)) = parse_line(line)? {
                    assign(k, v, &format!("{}:{}", path.display(), n + 1))?;
                }
            }
        }
        for s in sets {
            match parse_line(s)? {
                Some((k, v)) => assign(k, v, "--set")?,
                None => return Err(CliError::Config(format!("empty --set '{s}'"))),
            }
        }
        if let Some(seed) = seed {
            assign("seed".into(), seed.to_string(), "--seed")?;
        }
        let mut cfg = RunConfig { values };
        if cfg.text("matrix_seed") == "auto" && cfg.text("seed") != "auto" {
            let s = cfg.text("seed").to_string();
            cfg.values.insert("matrix_seed".into(), s);
        }
        if cfg.text("burn_in") == "auto" {
            let b = cfg.usize("sweeps")? / 5;
            cfg.values.insert("burn_in".into(), b.to_string());
        }
        Ok(cfg)
    }

    pub fn text(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("registered key")
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        self.text(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key} must be a number")))
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.text(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key} must be a non-negative integer")))
    }

    /// A seed key; `auto` is an error here.
    pub fn seed(&self, key: &str) -> Result<u64, CliError> {
        self.text(key)
            .parse()
            .map_err(|_| CliError::Config(format!("{key} is required (pass --seed)")))
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.text("output_dir"))
    }

    /// `k=v` pairs for `keys`, space separated.
    pub fn echo(&self, keys: &[&str]) -> String {
        keys.iter()
            .map(|k| format!("{k}={}", self.text(k)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Short SHA-256 over the command name and the listed keys.
    pub fn hash(&self, command: &str, keys: &[&str]) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        for k in keys {
            h.update(format!("\n{k}={}", self.text(k)).as_bytes());
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// All resolved entries except `output_dir`, in key order.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != "output_dir")
            .map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn check_kind(key: &str, v: &str, kind: Kind) -> Result<(), CliError> {
    let ok = match kind {
        Kind::Float => v.parse::<f64>().map(f64::is_finite).unwrap_or(false),
        Kind::Int => v.parse::<u64>().is_ok(),
        Kind::IntOrAuto => v == "auto" || v.parse::<u64>().is_ok(),
        Kind::Text => true,
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("bad value '{v}' for {key}")))
    }
}

/// First `key=value` token in any comment line.
pub fn comment_value<'a>(comments: &'a [String], key: &str) -> Option<&'a str> {
    comments
        .iter()
        .flat_map(|c| c.split_whitespace())
        .find_map(|t| t.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}
