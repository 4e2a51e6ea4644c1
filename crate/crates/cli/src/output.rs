use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::Loaded;

/// Error classes reported on stderr as `code=<name>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Usage,
    ConfigRead,
    ConfigJson,
    ConfigSchema,
    Numerics,
    Io,
    Audit,
}

impl Code {
    pub fn name(self) -> &'static str {
        match self {
            Code::Usage => "usage",
            Code::ConfigRead => "config-read",
            Code::ConfigJson => "config-json",
            Code::ConfigSchema => "config-schema",
            Code::Numerics => "numerics",
            Code::Io => "io",
            Code::Audit => "audit",
        }
    }

    pub fn exit(self) -> i32 {
        if self == Code::Audit {
            2
        } else {
            1
        }
    }
}

#[derive(Debug)]
pub struct Coded {
    pub code: Code,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

pub fn coded(code: Code, message: impl Into<String>) -> anyhow::Error {
    Coded { code, message: message.into() }.into()
}

/// Maps any library error into the numerics class.
pub fn numerics<E: fmt::Display>(e: E) -> anyhow::Error {
    coded(Code::Numerics, e.to_string())
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Comma-separated table with a header row and LF line endings.
pub struct Csv {
    name: String,
    body: String,
}

impl Csv {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        let mut body = header.join(",");
        body.push('\n');
        Self { name: name.into(), body }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.body.push_str(&fields.join(","));
        self.body.push('\n');
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub config_sha256: Option<String>,
    pub version: &'static str,
    pub tolerances: BTreeMap<String, f64>,
    pub parameters: serde_json::Value,
    pub warnings: Vec<String>,
    pub outputs: Vec<String>,
}

/// Collects outputs of one run and writes them, plus the manifest, into the output directory.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
}

impl Run {
    pub fn new(dir: &Path, subcommand: impl Into<String>, cfg: Option<&Loaded>) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).map_err(|e| coded(Code::Io, format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                subcommand: subcommand.into(),
                config_path: cfg.and_then(|c| c.path.as_ref()).map(|p| p.display().to_string()),
                config_sha256: cfg.and_then(|c| c.sha256.clone()),
                version: env!("CARGO_PKG_VERSION"),
                tolerances: BTreeMap::new(),
                parameters: serde_json::Value::Null,
                warnings: Vec::new(),
                outputs: Vec::new(),
            },
        })
    }

    pub fn tolerance(&mut self, name: &str, value: f64) {
        self.manifest.tolerances.insert(name.to_string(), value);
    }

    pub fn parameters(&mut self, p: serde_json::Value) {
        self.manifest.parameters = p;
    }

    pub fn warn(&mut self, w: impl Into<String>) {
        let w = w.into();
        eprintln!("warning: {w}");
        self.manifest.warnings.push(w);
    }

    fn write(&mut self, name: &str, content: &str) -> anyhow::Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, content).with_context(|| format!("writing {}", path.display())).map_err(|e| coded(Code::Io, format!("{e:#}")))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, csv: Csv) -> anyhow::Result<()> {
        self.write(&csv.name.clone(), &csv.body)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| coded(Code::Io, e.to_string()))?;
        s.push('\n');
        self.write(name, &s)
    }

    /// Writes `<stem>.meta.json` listing every output of the run.
    pub fn finish(self, stem: &str) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(format!("{stem}.meta.json"));
        let mut s = serde_json::to_string_pretty(&self.manifest).map_err(|e| coded(Code::Io, e.to_string()))?;
        s.push('\n');
        fs::write(&path, s).map_err(|e| coded(Code::Io, format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_carry_17_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(29.6875).parse::<f64>().unwrap(), 29.6875);
        let x = std::f64::consts::PI;
        assert_eq!(num(x).parse::<f64>().unwrap(), x);
    }
}
