//! Importer for GeoLife `.plt` trajectory files.
//!
//! Each file has six header lines, then rows of
//! `lat,lon,0,altitude_ft,days_since_1899-12-30,date,time`. Positions are
//! projected onto a local plane around a reference point.

use std::io::{BufRead, BufReader, Read};

use crate::client::{Day, FixRow, SECONDS_PER_DAY};
use crate::error::{Error, Result};
use crate::registry::RealId;

const HEADER_LINES: usize = 6;
const EARTH_RADIUS_CM: f64 = 637_100_000.0;

/// One parsed row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoFix {
    pub lat: f64,
    pub lon: f64,
    /// Fractional days since 1899-12-30, as the files store them.
    pub days: f64,
}

pub fn read_plt<R: Read>(r: R) -> Result<Vec<GeoFix>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if i < HEADER_LINES || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |k: usize| -> Result<f64> {
            cols.get(k)
                .and_then(|c| c.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidInput(format!("line {}: bad column {}", i + 1, k + 1)))
        };
        let fix = GeoFix {
            lat: num(0)?,
            lon: num(1)?,
            days: num(4)?,
        };
        if !(-90.0..=90.0).contains(&fix.lat) || !(-180.0..=180.0).contains(&fix.lon) {
            return Err(Error::InvalidInput(format!("line {}: position out of range", i + 1)));
        }
        out.push(fix);
    }
    Ok(out)
}

/// Equirectangular projection around `(lat0, lon0)`, accurate to well
/// under a meter across a city.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub lat0: f64,
    pub lon0: f64,
    /// Whole days since 1899-12-30 that map to day 0.
    pub first_day: i64,
}

impl Projection {
    /// Centered on the mean position, starting at the earliest day.
    pub fn fit(fixes: &[GeoFix]) -> Option<Self> {
        if fixes.is_empty() {
            return None;
        }
        let n = fixes.len() as f64;
        let lat0 = fixes.iter().map(|f| f.lat).sum::<f64>() / n;
        let lon0 = fixes.iter().map(|f| f.lon).sum::<f64>() / n;
        let first_day = fixes.iter().map(|f| f.days.floor() as i64).min()?;
        Some(Projection { lat0, lon0, first_day })
    }

    pub fn to_cm(&self, lat: f64, lon: f64) -> (i64, i64) {
        let x = EARTH_RADIUS_CM * (lon - self.lon0).to_radians() * self.lat0.to_radians().cos();
        let y = EARTH_RADIUS_CM * (lat - self.lat0).to_radians();
        (x.round() as i64, y.round() as i64)
    }

    /// Day index and second of day; `None` before `first_day`.
    pub fn to_day(&self, days: f64) -> Option<(Day, u32)> {
        let whole = days.floor();
        let day = whole as i64 - self.first_day;
        let secs = (((days - whole) * SECONDS_PER_DAY as f64).round() as u32).min(SECONDS_PER_DAY - 1);
        Day::try_from(day).ok().map(|d| (d, secs))
    }

    /// Fix rows for one user, sorted by time.
    pub fn rows(&self, user_id: RealId, fixes: &[GeoFix]) -> Vec<FixRow> {
        let mut rows: Vec<FixRow> = fixes
            .iter()
            .filter_map(|f| {
                let (day, t_seconds) = self.to_day(f.days)?;
                let (x_cm, y_cm) = self.to_cm(f.lat, f.lon);
                Some(FixRow {
                    user_id,
                    day,
                    t_seconds,
                    x_cm,
                    y_cm,
                })
            })
            .collect();
        rows.sort_by_key(|r| (r.day, r.t_seconds));
        rows
    }
}
