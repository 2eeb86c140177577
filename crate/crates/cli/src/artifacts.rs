use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

/// One CSV row; numeric cells must be finite.
#[derive(Default)]
pub struct Row {
    cells: Vec<String>,
    bad: Option<usize>,
}

impl Row {
    pub fn num(mut self, x: f64) -> Self {
        if !x.is_finite() && self.bad.is_none() {
            self.bad = Some(self.cells.len());
        }
        self.cells.push(format!("{x:?}"));
        self
    }

    pub fn int(mut self, n: impl Into<u64>) -> Self {
        self.cells.push(n.into().to_string());
        self
    }

    pub fn flag(mut self, b: bool) -> Self {
        self.cells.push(if b { "1" } else { "0" }.to_string());
        self
    }
}

pub fn write_csv(path: &Path, header: &[&str], rows: Vec<Row>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(header)?;
    for (i, r) in rows.into_iter().enumerate() {
        if let Some(c) = r.bad {
            bail!("non-finite value in column `{}` of row {i} of {}", header[c], path.display());
        }
        w.write_record(&r.cells)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Flat CSV for plotting: `phi` → `gamma,phi` sorted by gamma, `recovery` →
/// `epsilon,energy,target` in table order.
pub fn export_plotdata(artifact: &Path, kind: &str) -> Result<String> {
    let columns: &[&str] = match kind {
        "phi" => &["gamma", "phi"],
        "recovery" => &["epsilon", "energy", "target"],
        other => bail!("unknown plot kind `{other}` (expected `phi` or `recovery`)"),
    };
    let text = fs::read_to_string(artifact).with_context(|| format!("reading {}", artifact.display()))?;
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(columns)?;
    if !text.trim().is_empty() {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        let idx: Vec<usize> = columns
            .iter()
            .map(|c| header.iter().position(|h| h == *c).with_context(|| format!("{} has no `{c}` column", artifact.display())))
            .collect::<Result<_>>()?;
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = idx
                .iter()
                .map(|&i| rec[i].parse::<f64>().with_context(|| format!("bad number `{}`", &rec[i])))
                .collect::<Result<_>>()?;
            rows.push(vals);
        }
        if kind == "phi" {
            rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        }
        for v in rows {
            out.write_record(v.iter().map(|x| format!("{x:?}")))?;
        }
    }
    Ok(String::from_utf8(out.into_inner()?)?)
}
