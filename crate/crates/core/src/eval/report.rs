use super::EvalReport;
use crate::error::{Error, Result};
use serde::Serialize;
use std::io::Write;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Chosen by file extension; anything but `.csv` is JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

/// Writes every float with 17 significant digits.
struct LosslessFloats;

impl serde_json::ser::Formatter for LosslessFloats {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{}", lossless(value))
    }
}

/// 17 significant digits, e.g. `1.2345678901234567e-3`.
pub(crate) fn lossless(v: f64) -> String {
    format!("{v:.16e}")
}

/// JSON with lossless floats.
pub(crate) fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, LosslessFloats);
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

fn to_csv(report: &EvalReport) -> String {
    let mut s = String::from("metric,value,domain\n");
    s += &format!("nme,{},\n", lossless(report.nme));
    s += &format!("failure_rate,{},\n", lossless(report.failure_rate));
    s += &format!("failure_threshold,{},\n", lossless(report.failure_threshold));
    s += &format!("samples,{},\n", report.samples);
    s += &format!("oracle_assisted,{},\n", report.oracle_assisted as u8);
    for d in &report.per_domain {
        s += &format!("nme,{},{}\n", lossless(d.nme), d.domain);
        s += &format!("samples,{},{}\n", d.samples, d.domain);
    }
    s
}

pub fn emit_report(report: &EvalReport, path: &Path, format: ReportFormat) -> Result<()> {
    let bytes = match format {
        ReportFormat::Json => to_json(report)?,
        ReportFormat::Csv => to_csv(report).into_bytes(),
    };
    std::fs::write(path, bytes).map_err(Error::Io)
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
