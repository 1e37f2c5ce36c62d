//! Day-profile tables on disk: one row per hour, days stacked in order.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ies_core::devices::HOURS_PER_DAY;
use ies_core::profile::{DayProfile, Hourly};

use crate::error::{io_err, HarnessError, Result};

/// Value columns every profile file must carry. `day` and `hour` are
/// written for readability; `hour` is checked when present.
pub const COLUMNS: [&str; 8] = ["t_out", "wt", "basic_e", "basic_g", "basic_h", "tou_e", "tou_g", "tou_h"];

fn columns(day: &DayProfile) -> [&Hourly; 8] {
    [&day.t_out, &day.wt, &day.basic_e, &day.basic_g, &day.basic_h, &day.tou_e, &day.tou_g, &day.tou_h]
}

fn columns_mut(day: &mut DayProfile) -> [&mut Hourly; 8] {
    [
        &mut day.t_out,
        &mut day.wt,
        &mut day.basic_e,
        &mut day.basic_g,
        &mut day.basic_h,
        &mut day.tou_e,
        &mut day.tou_g,
        &mut day.tou_h,
    ]
}

fn empty_day() -> DayProfile {
    let zero = [0.0; HOURS_PER_DAY];
    DayProfile {
        t_out: zero,
        wt: zero,
        basic_e: zero,
        basic_g: zero,
        basic_h: zero,
        tou_e: zero,
        tou_g: zero,
        tou_h: zero,
    }
}

pub fn load_profiles(path: &Path) -> Result<Vec<DayProfile>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_profiles(file)
}

pub fn read_profiles(reader: impl Read) -> Result<Vec<DayProfile>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let positions = COLUMNS
        .iter()
        .map(|&name| find(name).ok_or_else(|| HarnessError::MissingColumn(name.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let hour_column = find("hour");

    let records = csv.records().collect::<std::result::Result<Vec<_>, _>>()?;
    if records.is_empty() || records.len() % HOURS_PER_DAY != 0 {
        return Err(HarnessError::RowCount(records.len()));
    }
    let mut days = vec![empty_day(); records.len() / HOURS_PER_DAY];
    for (row, record) in records.iter().enumerate() {
        let (d, hour) = (row / HOURS_PER_DAY, row % HOURS_PER_DAY);
        if let Some(at) = hour_column {
            let got = record.get(at).unwrap_or("");
            if got.parse::<usize>().ok() != Some(hour) {
                return Err(HarnessError::HourOrder { row: row + 1, expected: hour, got: got.to_string() });
            }
        }
        for ((&name, &at), target) in COLUMNS.iter().zip(&positions).zip(columns_mut(&mut days[d])) {
            let raw = record.get(at).unwrap_or("");
            let value = raw.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| HarnessError::BadValue {
                row: row + 1,
                column: name.to_string(),
                value: raw.to_string(),
            })?;
            target[hour] = value;
        }
    }
    for day in &days {
        day.validate()?;
    }
    Ok(days)
}

pub fn write_profiles(path: &Path, days: &[DayProfile]) -> Result<()> {
    let mut file = File::create(path).map_err(io_err(path))?;
    file.write_all(&profiles_csv(days)?).map_err(io_err(path))
}

pub fn profiles_csv(days: &[DayProfile]) -> Result<Vec<u8>> {
    let mut csv = csv::Writer::from_writer(Vec::new());
    let header = ["day", "hour"].into_iter().chain(COLUMNS);
    csv.write_record(header)?;
    for (d, day) in days.iter().enumerate() {
        let cols = columns(day);
        for hour in 0..HOURS_PER_DAY {
            let mut record = vec![d.to_string(), hour.to_string()];
            record.extend(cols.iter().map(|c| c[hour].to_string()));
            csv.write_record(&record)?;
        }
    }
    csv.into_inner().map_err(|e| HarnessError::Csv(e.into_error().into()))
}
