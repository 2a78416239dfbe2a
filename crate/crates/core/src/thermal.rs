//! Growing degree days and the cumulative thermal clock.
//!
//! Daily GDD is `max(0, (t_max + t_min) / 2 - t_base)`; the cumulative series
//! is its running sum in day order. All arithmetic is `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One day of min/max air temperature in degrees Celsius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyTemperature {
    pub day_of_year: u32,
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalConfig {
    pub t_base: f64,
}

impl Default for ThermalConfig {
    fn default() -> Self {
        Self { t_base: 0.0 }
    }
}

/// Daily and cumulative GDD for one site-year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalSeries {
    pub day_of_year: Vec<u32>,
    pub gdd_daily: Vec<f64>,
    pub gdd_cumulative: Vec<f64>,
}

pub fn daily_gdd(t_min: f64, t_max: f64, cfg: &ThermalConfig) -> Result<f64> {
    if !t_min.is_finite() || !t_max.is_finite() || !cfg.t_base.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite temperature (t_min={t_min}, t_max={t_max}, t_base={})",
            cfg.t_base
        )));
    }
    if t_min > t_max {
        return Err(Error::InvalidInput(format!(
            "t_min {t_min} exceeds t_max {t_max}"
        )));
    }
    Ok(((t_max + t_min) / 2.0 - cfg.t_base).max(0.0))
}

pub fn cumulative_gdd(temps: &[DailyTemperature], cfg: &ThermalConfig) -> Result<ThermalSeries> {
    if temps.is_empty() {
        return Err(Error::EmptySeries);
    }
    for pair in temps.windows(2) {
        if pair[1].day_of_year != pair[0].day_of_year + 1 {
            return Err(Error::InvalidInput(format!(
                "day_of_year must be gap-free and increasing: {} followed by {}",
                pair[0].day_of_year, pair[1].day_of_year
            )));
        }
    }
    let mut series = ThermalSeries {
        day_of_year: Vec::with_capacity(temps.len()),
        gdd_daily: Vec::with_capacity(temps.len()),
        gdd_cumulative: Vec::with_capacity(temps.len()),
    };
    let mut acc = 0.0;
    for t in temps {
        if !(1..=366).contains(&t.day_of_year) {
            return Err(Error::InvalidInput(format!(
                "day_of_year {} outside [1, 366]",
                t.day_of_year
            )));
        }
        let g = daily_gdd(t.t_min, t.t_max, cfg)?;
        acc += g;
        series.day_of_year.push(t.day_of_year);
        series.gdd_daily.push(g);
        series.gdd_cumulative.push(acc);
    }
    Ok(series)
}

impl ThermalSeries {
    pub fn len(&self) -> usize {
        self.day_of_year.len()
    }

    pub fn is_empty(&self) -> bool {
        self.day_of_year.is_empty()
    }

    /// Cumulative GDD at a given day, if the day is covered.
    pub fn at_day(&self, day: u32) -> Option<f64> {
        let first = *self.day_of_year.first()?;
        let idx = day.checked_sub(first)? as usize;
        // gap-free series, so the offset is the index
        (self.day_of_year.get(idx) == Some(&day)).then(|| self.gdd_cumulative[idx])
    }
}

/// Looks up cumulative GDD at each observation day, in input order.
pub fn gdd_at_observations(series: &ThermalSeries, obs_days: &[u32]) -> Result<Vec<f64>> {
    obs_days
        .iter()
        .map(|&d| series.at_day(d).ok_or(Error::MissingDay(d)))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct TemperatureRow {
    day_of_year: u32,
    t_min: f64,
    t_max: f64,
}

pub const TEMPERATURE_CSV_HEADER: [&str; 3] = ["day_of_year", "t_min", "t_max"];

/// Parses a `day_of_year,t_min,t_max` CSV and validates ordering and t_min ≤ t_max.
pub fn read_temperature_csv<R: Read>(reader: R) -> Result<Vec<DailyTemperature>> {
    let parse_err = |detail: String| Error::Parse {
        what: "temperature CSV".into(),
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != TEMPERATURE_CSV_HEADER {
        return Err(parse_err(format!(
            "expected header `day_of_year,t_min,t_max`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.deserialize::<TemperatureRow>().enumerate() {
        let row = row.map_err(|e| parse_err(format!("row {}: {e}", line + 2)))?;
        if let Some(prev) = out.last().map(|t: &DailyTemperature| t.day_of_year) {
            if row.day_of_year <= prev {
                return Err(parse_err(format!(
                    "row {}: day_of_year {} not strictly increasing",
                    line + 2,
                    row.day_of_year
                )));
            }
        }
        if row.t_min > row.t_max {
            return Err(Error::InvalidInput(format!(
                "day {}: t_min {} exceeds t_max {}",
                row.day_of_year, row.t_min, row.t_max
            )));
        }
        out.push(DailyTemperature {
            day_of_year: row.day_of_year,
            t_min: row.t_min,
            t_max: row.t_max,
        });
    }
    Ok(out)
}

pub fn load_temperature_csv(path: &Path) -> Result<Vec<DailyTemperature>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_temperature_csv(std::io::BufReader::new(file))
}

pub fn write_temperature_csv<W: Write>(writer: W, temps: &[DailyTemperature]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| Error::Parse {
        what: "temperature CSV".into(),
        detail: e.to_string(),
    };
    for t in temps {
        wtr.serialize(TemperatureRow {
            day_of_year: t.day_of_year,
            t_min: t.t_min,
            t_max: t.t_max,
        })
        .map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::io("<temperature csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ThermalConfig {
        ThermalConfig::default()
    }

    fn days_from_gdd(gdd: &[f64]) -> Vec<DailyTemperature> {
        gdd.iter()
            .enumerate()
            .map(|(i, &g)| DailyTemperature {
                day_of_year: i as u32 + 1,
                t_min: g,
                t_max: g,
            })
            .collect()
    }

    #[test]
    fn daily_hand_cases() {
        assert_eq!(daily_gdd(5.0, 15.0, &cfg()).unwrap(), 10.0);
        assert_eq!(daily_gdd(-8.0, -2.0, &cfg()).unwrap(), 0.0);
        assert_eq!(daily_gdd(0.0, 0.0, &cfg()).unwrap(), 0.0);
        assert_eq!(
            daily_gdd(5.0, 15.0, &ThermalConfig { t_base: 4.0 }).unwrap(),
            6.0
        );
    }

    #[test]
    fn daily_rejects_bad_input() {
        assert!(matches!(
            daily_gdd(3.0, 1.0, &cfg()),
            Err(Error::InvalidInput(_))
        ));
        assert!(daily_gdd(f64::NAN, 1.0, &cfg()).is_err());
        assert!(daily_gdd(0.0, f64::INFINITY, &cfg()).is_err());
    }

    #[test]
    fn cumulative_prefix_sums() {
        let s = cumulative_gdd(&days_from_gdd(&[10.0, 0.0, 5.0]), &cfg()).unwrap();
        assert_eq!(s.gdd_cumulative, vec![10.0, 10.0, 15.0]);
        assert_eq!(s.day_of_year, vec![1, 2, 3]);

        let cold = cumulative_gdd(&days_from_gdd(&[-3.0, -1.0, -7.0]), &cfg()).unwrap();
        assert!(cold.gdd_cumulative.iter().all(|&g| g == 0.0));

        let one = cumulative_gdd(&days_from_gdd(&[7.5]), &cfg()).unwrap();
        assert_eq!(one.gdd_cumulative, vec![7.5]);
    }

    #[test]
    fn cumulative_errors() {
        assert!(matches!(
            cumulative_gdd(&[], &cfg()),
            Err(Error::EmptySeries)
        ));
        let mut temps = days_from_gdd(&[1.0, 2.0, 3.0]);
        temps[2].day_of_year = 5;
        assert!(matches!(
            cumulative_gdd(&temps, &cfg()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn observation_lookup() {
        let s = cumulative_gdd(&days_from_gdd(&[1.0; 10]), &cfg()).unwrap();
        assert_eq!(gdd_at_observations(&s, &[3, 7]).unwrap(), vec![3.0, 7.0]);
        let all: Vec<u32> = (1..=10).collect();
        assert_eq!(gdd_at_observations(&s, &all).unwrap(), s.gdd_cumulative);
        match gdd_at_observations(&s, &[2, 400]) {
            Err(Error::MissingDay(400)) => {}
            other => panic!("expected missing day 400, got {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let temps = vec![
            DailyTemperature {
                day_of_year: 1,
                t_min: -2.5,
                t_max: 4.0,
            },
            DailyTemperature {
                day_of_year: 2,
                t_min: 0.25,
                t_max: 9.5,
            },
        ];
        let mut buf = Vec::new();
        write_temperature_csv(&mut buf, &temps).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("day_of_year,t_min,t_max\n"));
        assert_eq!(read_temperature_csv(buf.as_slice()).unwrap(), temps);

        let bad = "day,t_min,t_max\n1,0,1\n";
        assert!(read_temperature_csv(bad.as_bytes()).is_err());
        let unordered = "day_of_year,t_min,t_max\n2,0,1\n1,0,1\n";
        assert!(read_temperature_csv(unordered.as_bytes()).is_err());
    }
}
