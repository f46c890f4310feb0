//! CSV series formats. Column orders are fixed; headers are required on input.

use std::io::Write;
use std::path::Path;

use trapsim::micromotion::{ScanCoordinate, ScanPoint, ScanRecord};
use trapsim::ms_gate::PopulationCurve;
use trapsim::raman::RabiSample;

use crate::CliError;

pub const SCAN_HEADER: [&str; 4] = ["timestamp_s", "delta_v_V", "p1", "shots"];
pub const RABI_HEADER: [&str; 2] = ["t_us", "p1"];
pub const HEATING_HEADER: [&str; 2] = ["t_s", "nbar"];
pub const MS_HEADER: [&str; 5] = ["t_us", "p00", "p01", "p10", "p11"];

fn csv_error(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn table(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(&r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

/// Reads a CSV with exactly `header` as its first row.
fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let got: Vec<String> = r.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    if got != header {
        return Err(CliError::Usage(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            header.join(","),
            got.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if rec.len() != header.len() {
            return Err(CliError::Usage(format!("{}: row {} has {} fields", path.display(), i + 2, rec.len())));
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn number(path: &Path, row: usize, field: &str, s: &str) -> Result<f64, CliError> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Usage(format!("{}: row {}: {field} = {s:?} is not a finite number", path.display(), row + 2)))
}

fn shots_field(s: Option<u64>) -> String {
    s.map_or_else(|| "inf".to_string(), |n| n.to_string())
}

pub fn scan_csv(records: &[ScanRecord]) -> Result<Vec<u8>, CliError> {
    let mut rows = Vec::new();
    for rec in records {
        for p in &rec.points {
            let dv = match p.coordinate {
                ScanCoordinate::DeltaV(v) => v,
                ScanCoordinate::DeltaE(e) => e / rec.gain.ok_or_else(|| CliError::Io("ΔE point without gain".into()))?,
            };
            rows.push(vec![rec.timestamp.to_string(), dv.to_string(), p.p1.to_string(), shots_field(p.shots)]);
        }
    }
    table(&SCAN_HEADER, rows)
}

/// Groups consecutive rows with equal timestamps into records.
pub fn read_scan(path: &Path, gain: f64) -> Result<Vec<ScanRecord>, CliError> {
    let mut records: Vec<ScanRecord> = Vec::new();
    for (i, r) in read_table(path, &SCAN_HEADER)?.into_iter().enumerate() {
        let t = number(path, i, "timestamp_s", &r[0])?;
        let dv = number(path, i, "delta_v_V", &r[1])?;
        let p1 = number(path, i, "p1", &r[2])?;
        let shots = match r[3].as_str() {
            "inf" => None,
            s => Some(s.parse::<u64>().ok().filter(|&n| n > 0).ok_or_else(|| {
                CliError::Usage(format!("{}: row {}: shots = {s:?} is not a positive integer or inf", path.display(), i + 2))
            })?),
        };
        let point = ScanPoint { coordinate: ScanCoordinate::DeltaV(dv), p1, shots };
        match records.last_mut() {
            Some(rec) if rec.timestamp == t => rec.points.push(point),
            _ => records.push(ScanRecord { timestamp: t, points: vec![point], gain: Some(gain), pulse: None }),
        }
    }
    Ok(records)
}

pub fn rabi_csv(samples: &[RabiSample]) -> Result<Vec<u8>, CliError> {
    table(&RABI_HEADER, samples.iter().map(|s| vec![(s.t * 1e6).to_string(), s.p1.to_string()]))
}

pub fn read_rabi(path: &Path, shots: Option<u64>) -> Result<Vec<RabiSample>, CliError> {
    read_table(path, &RABI_HEADER)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(RabiSample { t: number(path, i, "t_us", &r[0])? * 1e-6, p1: number(path, i, "p1", &r[1])?, shots })
        })
        .collect()
}

pub fn heating_csv(series: &[(f64, f64)]) -> Result<Vec<u8>, CliError> {
    table(&HEATING_HEADER, series.iter().map(|(t, n)| vec![t.to_string(), n.to_string()]))
}

pub fn read_heating(path: &Path) -> Result<Vec<(f64, f64)>, CliError> {
    read_table(path, &HEATING_HEADER)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| Ok((number(path, i, "t_s", &r[0])?, number(path, i, "nbar", &r[1])?)))
        .collect()
}

pub fn ms_csv(curve: &PopulationCurve) -> Result<Vec<u8>, CliError> {
    table(
        &MS_HEADER,
        (0..curve.len()).map(|i| {
            let r = curve.row(i);
            vec![(curve.times[i] * 1e6).to_string(), r[0].to_string(), r[1].to_string(), r[2].to_string(), r[3].to_string()]
        }),
    )
}

pub fn read_ms(path: &Path) -> Result<PopulationCurve, CliError> {
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (i, r) in read_table(path, &MS_HEADER)?.into_iter().enumerate() {
        times.push(number(path, i, "t_us", &r[0])? * 1e-6);
        let mut row = [0.0; 4];
        for k in 0..4 {
            row[k] = number(path, i, MS_HEADER[k + 1], &r[k + 1])?;
        }
        rows.push(row);
    }
    PopulationCurve::from_rows(times, &rows).map_err(CliError::from)
}

/// Writes to `out`, or stdout when absent.
pub fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

pub fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    v.push(b'\n');
    Ok(v)
}
