//! CSV and JSON readers and writers for every artifact the pipeline emits.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::emd::{Denoised, EmdResult};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::lagsel::RankedOrder;
use crate::series::{ingest_counters, BpsConversion, CounterRecord, TrafficSeries, DEFAULT_INTERVAL};

/// Parsed input file, before or after rate conversion.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Counters(Vec<CounterRecord>),
    Rates(TrafficSeries),
}

impl Input {
    /// Rate series; counters are converted at their smallest reading spacing.
    pub fn into_series(self, conversion: BpsConversion) -> Result<TrafficSeries> {
        match self {
            Input::Rates(s) => Ok(s),
            Input::Counters(records) => {
                let interval = infer_interval(records.iter().map(|r| r.timestamp))?;
                ingest_counters(&records, interval, conversion)
            }
        }
    }
}

/// Smallest spacing between consecutive timestamps.
fn infer_interval(ts: impl Iterator<Item = i64>) -> Result<u64> {
    let ts: Vec<i64> = ts.collect();
    if ts.len() < 2 {
        return Ok(DEFAULT_INTERVAL);
    }
    ts.windows(2)
        .map(|w| w[1] - w[0])
        .min()
        .filter(|&d| d > 0)
        .map(|d| d as u64)
        .ok_or_else(|| Error::MalformedInput("timestamps not strictly increasing".into()))
}

fn parse_cell(cell: &str, line: usize) -> Result<Option<f64>> {
    let c = cell.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    c.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::MalformedInput(format!("line {line}: cannot parse '{c}'")))
}

/// Reads `timestamp,counter` or `timestamp,bps` CSV. `NaN` or an empty cell is missing.
pub fn read_input<R: Read>(reader: R) -> Result<Input> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let kind = match headers.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["timestamp", "counter"] => "counter",
        ["timestamp", "bps"] => "bps",
        _ => {
            return Err(Error::MalformedInput(format!(
                "expected header timestamp,counter or timestamp,bps, got {}",
                headers.join(",")
            )))
        }
    };
    let mut stamps = Vec::new();
    let mut cells = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let ts = rec
            .get(0)
            .and_then(|t| t.parse::<i64>().ok())
            .ok_or_else(|| Error::MalformedInput(format!("line {line}: bad timestamp")))?;
        stamps.push(ts);
        cells.push(parse_cell(rec.get(1).unwrap_or(""), line)?);
    }
    if stamps.is_empty() {
        return Err(Error::EmptyInput);
    }
    if kind == "counter" {
        let mut records = Vec::with_capacity(stamps.len());
        for (line, (ts, v)) in stamps.iter().zip(&cells).enumerate() {
            // a missing counter reading cannot anchor a delta; drop it
            let Some(v) = v else { continue };
            if *v < 0.0 || v.fract() != 0.0 {
                return Err(Error::MalformedInput(format!("line {}: counter must be a non-negative integer", line + 2)));
            }
            records.push(CounterRecord {
                timestamp: *ts,
                counter: *v as u64,
            });
        }
        return Ok(Input::Counters(records));
    }
    let interval = infer_interval(stamps.iter().copied())?;
    for (i, w) in stamps.windows(2).enumerate() {
        if w[1] - w[0] != interval as i64 {
            return Err(Error::MalformedInput(format!(
                "line {}: irregular spacing {} (expected {interval})",
                i + 3,
                w[1] - w[0]
            )));
        }
    }
    let missing: Vec<bool> = cells.iter().map(Option::is_none).collect();
    let values = cells.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    TrafficSeries::with_mask(stamps[0], interval, values, missing)
        .map(Input::Rates)
}

pub fn read_input_file(path: &Path) -> Result<Input> {
    read_input(File::open(path)?)
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v}")
    }
}

/// `timestamp,bps`
pub fn write_series(path: &Path, s: &TrafficSeries) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["timestamp", "bps"])?;
    for (i, v) in s.values.iter().enumerate() {
        w.write_record([s.timestamp(i).to_string(), fmt(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// `lag,correlation`
pub fn write_acf(path: &Path, acf: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["lag", "correlation"])?;
    for (lag, r) in acf.iter().enumerate() {
        w.write_record([lag.to_string(), fmt(*r)])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,original,imf_1..imf_I,residue,avg_imf,denoised`
pub fn write_decomposition(path: &Path, original: &[f64], emd: Option<&EmdResult>, den: &Denoised) -> Result<()> {
    let mut w = create(path)?;
    let imfs = emd.map(|e| e.imfs.as_slice()).unwrap_or(&[]);
    let mut header = vec!["t".to_string(), "original".to_string()];
    header.extend((1..=imfs.len()).map(|i| format!("imf_{i}")));
    header.extend(["residue", "avg_imf", "denoised"].map(String::from));
    w.write_record(&header)?;
    for t in 0..original.len() {
        let mut row = vec![t.to_string(), fmt(original[t])];
        row.extend(imfs.iter().map(|imf| fmt(imf[t])));
        let residue = emd.map_or(original[t], |e| e.residue[t]);
        row.push(fmt(residue));
        row.push(fmt(den.noise[t]));
        row.push(fmt(den.denoised[t]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `rank,p,d,q,aic,converged`
pub fn write_ranking(path: &Path, ranked: &[RankedOrder]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["rank", "p", "d", "q", "aic", "converged"])?;
    for (i, r) in ranked.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            r.order.p.to_string(),
            r.order.d.to_string(),
            r.order.q.to_string(),
            if r.aic.is_finite() { format!("{:.6}", r.aic) } else { "inf".into() },
            r.converged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `t,actual,predicted`, with `t` the sample index in the source series.
pub fn write_predictions(path: &Path, index: &[usize], actual: &[f64], predicted: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["t", "actual", "predicted"])?;
    for ((t, a), p) in index.iter().zip(actual).zip(predicted) {
        w.write_record([t.to_string(), fmt(*a), fmt(*p)])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub model: String,
    pub variant: String,
    pub metrics: MetricReport,
    /// MAPE reduction against the same model's baseline, in percent.
    pub error_reduction: Option<f64>,
}

/// `model,variant,rmse,mae,mape,accuracy,error_reduction`
pub fn write_comparison<W: Write>(out: W, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["model", "variant", "rmse", "mae", "mape", "accuracy", "error_reduction"])?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.variant.clone(),
            format!("{:.6}", r.metrics.rmse),
            format!("{:.6}", r.metrics.mae),
            format!("{:.6}", r.metrics.mape),
            format!("{:.6}", r.metrics.accuracy),
            r.error_reduction.map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rates_with_gaps() {
        let csv = "timestamp,bps\n0,1.5\n300,\n600,NaN\n900,4\n";
        let Input::Rates(s) = read_input(csv.as_bytes()).unwrap() else { panic!() };
        assert_eq!(s.interval, 300);
        assert_eq!(s.missing, vec![false, true, true, false]);
        assert_eq!(s.values[3], 4.0);
    }

    #[test]
    fn reads_counters() {
        let csv = "timestamp,counter\n0,0\n300,3000\n600,6000\n";
        let s = read_input(csv.as_bytes()).unwrap().into_series(BpsConversion::PerSecond).unwrap();
        assert_eq!(s.values, vec![80.0, 80.0]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(read_input("time,value\n0,1\n".as_bytes()).is_err());
        assert!(read_input("timestamp,bps\n".as_bytes()).is_err());
        assert!(read_input("timestamp,bps\n0,1\n300,x\n".as_bytes()).is_err());
        assert!(read_input("timestamp,bps\n0,1\n300,2\n500,3\n".as_bytes()).is_err());
        assert!(read_input("timestamp,counter\n0,1.5\n300,2\n".as_bytes()).is_err());
    }

    #[test]
    fn series_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let s = TrafficSeries::new(100, 60, vec![1.0, f64::NAN, 3.25]).unwrap();
        write_series(&path, &s).unwrap();
        let Input::Rates(back) = read_input_file(&path).unwrap() else { panic!() };
        assert_eq!(back.start_time, 100);
        assert_eq!(back.missing, s.missing);
        assert_eq!(back.values[2], 3.25);
    }
}
