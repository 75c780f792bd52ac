//! Output plumbing: every emitted file gets a `.meta.json` sidecar
//! carrying the config digest, seed, and code version, so reruns are
//! attributable and byte-identical outputs are checkable.

use std::path::{Path, PathBuf};

use serde::Serialize;

pub struct OutDir {
    root: PathBuf,
    digest: u64,
    seed: u64,
    command: &'static str,
}

impl OutDir {
    pub fn new(root: &Path, command: &'static str, digest: u64, seed: u64) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            digest,
            seed,
            command,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn sidecar(&self, name: &str) -> anyhow::Result<()> {
        let meta = serde_json::json!({
            "command": self.command,
            "config_digest": format!("{:016x}", self.digest),
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
        });
        let path = self.root.join(format!("{name}.meta.json"));
        std::fs::write(path, serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Serialize rows into `<name>` plus its sidecar.
    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
        self.sidecar(name)?;
        Ok(())
    }

    /// CSV with a hand-built header (for dynamic column sets).
    pub fn write_csv_records(
        &self,
        name: &str,
        header: &[String],
        rows: &[Vec<String>],
    ) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(self.path(name))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.sidecar(name)?;
        Ok(())
    }

    /// One JSON value per line.
    pub fn write_jsonl<T: Serialize>(&self, name: &str, rows: &[T]) -> anyhow::Result<()> {
        let mut text = String::new();
        for row in rows {
            text.push_str(&serde_json::to_string(row)?);
            text.push('\n');
        }
        std::fs::write(self.path(name), text)?;
        self.sidecar(name)?;
        Ok(())
    }

}

/// Shortest-round-trip float formatting (matches serde_json/csv output).
pub fn fmt_f64(x: f64) -> String {
    let mut buf = ryu_fmt(x);
    if buf.ends_with(".0") {
        buf.truncate(buf.len() - 2);
    }
    buf
}

fn ryu_fmt(x: f64) -> String {
    // serde_json's float printing via a one-element round trip keeps all
    // hand-built CSV columns consistent with serialized ones.
    serde_json::to_string(&x).expect("finite float")
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
