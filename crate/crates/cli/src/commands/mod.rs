pub mod design;
pub mod rates;
pub mod reproduce;
pub mod simulate;

use std::io::Write;
use std::path::Path;

use crate::error::{CliError, Result};

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(CliError::io(format!("cannot create {}", path.display())))?;
    Ok(std::io::BufWriter::new(f))
}

pub(crate) fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { context: format!("cannot write {}", path.display()), source: e.into() }
}

pub(crate) fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io {
        context: format!("cannot write {}", path.display()),
        source: e.into(),
    })?;
    writeln!(w).and_then(|_| w.flush()).map_err(CliError::io(format!("cannot write {}", path.display())))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}
