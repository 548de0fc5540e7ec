use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use diffsync::Field;
use sha2::{Digest, Sha256};

/// Collects written artifacts and a running digest of their bytes.
pub struct OutputDir {
    root: PathBuf,
    hasher: Sha256,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            hasher: Sha256::new(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.hasher.update(name.as_bytes());
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(bytes);
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn digest(&self) -> String {
        hex::encode(self.hasher.clone().finalize())
    }
}

/// Binary greyscale PGM of a 2-D field, `range` mapped onto 0..=255.
pub fn pgm(field: &Field, range: [f64; 2]) -> Result<Vec<u8>> {
    let (h, w) = match field.shape() {
        [h, w] => (*h, *w),
        [n] => (1, *n),
        s => bail!("cannot write a {}-D field as an image", s.len()),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    let span = range[1] - range[0];
    out.extend(field.values().iter().map(|v| {
        let x = ((v - range[0]) / span).clamp(0.0, 1.0);
        (x * 255.0).round() as u8
    }));
    Ok(out)
}

/// Little-endian f64 values.
pub fn raw_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// `name,value,step` rows; `step` is empty for scalars.
#[derive(Default)]
pub struct MetricsCsv {
    rows: Vec<(String, f64, Option<usize>)>,
}

impl MetricsCsv {
    pub fn push(&mut self, name: impl Into<String>, value: f64, step: Option<usize>) {
        self.rows.push((name.into(), value, step));
    }

    pub fn render(&self) -> String {
        let mut s = String::from("name,value,step\n");
        for (name, value, step) in &self.rows {
            let step = step.map(|t| t.to_string()).unwrap_or_default();
            s.push_str(&format!("{name},{value:e},{step}\n"));
        }
        s
    }
}

pub fn divergence_csv(labels: &[String], matrix: &[Vec<f64>]) -> String {
    let mut s = String::from("case");
    for l in labels {
        s.push(',');
        s.push_str(l);
    }
    s.push('\n');
    for (l, row) in labels.iter().zip(matrix) {
        s.push_str(l);
        for v in row {
            s.push_str(&format!(",{v:e}"));
        }
        s.push('\n');
    }
    s
}
