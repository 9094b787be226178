use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Output directory plus the provenance comments every file carries.
pub struct Output {
    dir: PathBuf,
    command: &'static str,
    hash: String,
    echo: String,
}

impl Output {
    pub fn new(cfg: &RunConfig, command: &'static str, keys: &[&str]) -> Result<Self, CliError> {
        let dir = cfg.output_dir();
        fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Output {
            dir,
            command,
            hash: cfg.hash(command, keys),
            echo: cfg.echo(keys),
        })
    }

    pub fn comments(&self) -> Vec<String> {
        vec![
            format!("ric {VERSION} {} config={}", self.command, self.hash),
            self.echo.clone(),
        ]
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// `manifest_<command>.txt`: the resolved config as plain `key=value` lines,
    /// so the file is itself a valid `--config`, with provenance and `results`
    /// as `# key=value` comments.
    pub fn manifest(&self, cfg: &RunConfig, results: &[(String, String)]) -> Result<(), CliError> {
        let mut w = self.create(&format!("manifest_{}.txt", self.command))?;
        writeln!(w, "# command={}", self.command)?;
        writeln!(w, "# version={VERSION}")?;
        writeln!(w, "# config_hash={}", self.hash)?;
        for (k, v) in cfg.entries() {
            writeln!(w, "{k}={v}")?;
        }
        for (k, v) in results {
            writeln!(w, "# {k}={v}")?;
        }
        w.flush()?;
        Ok(())
    }
}

/// File name relative to the output directory when possible, for plot scripts
/// that run from that directory.
pub fn relative_to(dir: &Path, file: &Path) -> String {
    file.strip_prefix(dir).unwrap_or(file).display().to_string()
}
