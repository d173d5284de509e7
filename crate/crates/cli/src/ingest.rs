//! Long-format dataset CSV: `block_id,rep_id,station_id,lat,lon,time,value`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use stfm::model::{Dataset, Location};
use stfm::{Error, Result};

pub const HEADER: [&str; 7] = [
    "block_id",
    "rep_id",
    "station_id",
    "lat",
    "lon",
    "time",
    "value",
];
const MAX_LISTED: usize = 10;

/// A dataset plus the original block and repetition labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub data: Dataset,
    pub block_ids: Vec<String>,
    /// Repetition labels per block.
    pub rep_ids: Vec<Vec<String>>,
}

/// Month name to observation-window index, October = 1 through March = 6.
pub fn month_index(s: &str) -> Option<f64> {
    const MONTHS: [&str; 6] = ["oct", "nov", "dec", "jan", "feb", "mar"];
    let lower = s.trim().to_ascii_lowercase();
    let full = [
        "october", "november", "december", "january", "february", "march",
    ];
    MONTHS
        .iter()
        .zip(full)
        .position(|(m, f)| lower == *m || lower == f)
        .map(|k| (k + 1) as f64)
}

/// Numeric ids sort numerically, anything else lexicographically.
fn sort_ids(ids: &mut [String]) {
    let numeric: Option<Vec<i64>> = ids.iter().map(|s| s.parse().ok()).collect();
    if numeric.is_some() {
        ids.sort_by_key(|s| s.parse::<i64>().expect("checked numeric"));
    } else {
        ids.sort();
    }
}

struct Row {
    block: String,
    rep: String,
    station: String,
    lat: f64,
    lon: f64,
    time: f64,
    value: f64,
}

fn parse_f64(field: &str, name: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::Ingest(format!("line {line}: {name} '{field}' is not a number")))
}

pub fn ingest<R: Read>(reader: R, month_names: bool) -> Result<LabeledDataset> {
    let mut rd = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != HEADER {
        return Err(Error::Ingest(format!(
            "expected header {}, found {}",
            HEADER.join(","),
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let time = if month_names {
            month_index(&rec[5]).ok_or_else(|| {
                Error::Ingest(format!(
                    "line {line}: '{}' is not a month in Oct..Mar",
                    &rec[5]
                ))
            })?
        } else {
            parse_f64(&rec[5], "time", line)?
        };
        rows.push(Row {
            block: rec[0].to_owned(),
            rep: rec[1].to_owned(),
            station: rec[2].to_owned(),
            lat: parse_f64(&rec[3], "lat", line)?,
            lon: parse_f64(&rec[4], "lon", line)?,
            time,
            value: parse_f64(&rec[6], "value", line)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Ingest("no data rows".into()));
    }
    build(rows)
}

fn build(rows: Vec<Row>) -> Result<LabeledDataset> {
    let mut reps_of: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    let mut coords: HashMap<&str, (f64, f64)> = HashMap::new();
    let mut times: Vec<f64> = Vec::new();
    for r in &rows {
        let e = reps_of.entry(&r.block).or_default();
        if !e.contains(&r.rep) {
            e.push(r.rep.clone());
        }
        match coords.get(r.station.as_str()) {
            Some(&(la, lo)) if la != r.lat || lo != r.lon => {
                return Err(Error::Ingest(format!(
                    "station {} has coordinates ({la}, {lo}) and ({}, {})",
                    r.station, r.lat, r.lon
                )));
            }
            Some(_) => {}
            None => {
                coords.insert(&r.station, (r.lat, r.lon));
            }
        }
        if !r.time.is_finite() {
            return Err(Error::Ingest(format!("non-finite time {}", r.time)));
        }
        if !times.contains(&r.time) {
            times.push(r.time);
        }
    }
    let mut block_ids: Vec<String> = reps_of.keys().map(|s| s.to_string()).collect();
    sort_ids(&mut block_ids);
    let rep_ids: Vec<Vec<String>> = block_ids
        .iter()
        .map(|b| {
            let mut v = reps_of[b.as_str()].clone();
            sort_ids(&mut v);
            v
        })
        .collect();
    let mut stations: Vec<String> = coords.keys().map(|s| s.to_string()).collect();
    sort_ids(&mut stations);
    times.sort_by(|a, b| a.total_cmp(b));

    let n = stations.len();
    let tau = times.len();
    let station_ix: HashMap<&str, usize> = stations
        .iter()
        .enumerate()
        .map(|(k, s)| (s.as_str(), k))
        .collect();
    let time_ix = |t: f64| times.iter().position(|&x| x == t).expect("collected above");
    // Offset of each (block, rep) slice in storage order.
    let mut slice_ix: HashMap<(&str, &str), usize> = HashMap::new();
    let mut keys = Vec::new();
    for (b, reps) in block_ids.iter().zip(&rep_ids) {
        for r in reps {
            slice_ix.insert((b.as_str(), r.as_str()), keys.len());
            keys.push((b.clone(), r.clone()));
        }
    }
    let total = keys.len() * n * tau;
    let mut y = vec![f64::NAN; total];
    let mut seen = vec![false; total];
    let mut duplicates = Vec::new();
    for r in &rows {
        let s = slice_ix[&(r.block.as_str(), r.rep.as_str())];
        let k = (s * n + station_ix[r.station.as_str()]) * tau + time_ix(r.time);
        if seen[k] {
            duplicates.push(format!(
                "(block {}, rep {}, station {}, time {})",
                r.block, r.rep, r.station, r.time
            ));
        }
        seen[k] = true;
        y[k] = r.value;
    }
    if !duplicates.is_empty() {
        return Err(Error::Ingest(format!(
            "{} duplicate cells, first: {}",
            duplicates.len(),
            duplicates
                .iter()
                .take(MAX_LISTED)
                .cloned()
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let missing: Vec<String> = seen
        .iter()
        .enumerate()
        .filter(|(_, &s)| !s)
        .map(|(k, _)| {
            let (b, r) = &keys[k / (n * tau)];
            format!(
                "(block {b}, rep {r}, station {}, time {})",
                stations[(k / tau) % n],
                times[k % tau]
            )
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingest(format!(
            "{} missing cells, first: {}",
            missing.len(),
            missing
                .iter()
                .take(MAX_LISTED)
                .cloned()
                .collect::<Vec<_>>()
                .join(", ")
        )));
    }
    let locations = stations
        .iter()
        .map(|s| {
            let (lat, lon) = coords[s.as_str()];
            Location {
                station_id: s.clone(),
                lat,
                lon,
            }
        })
        .collect();
    let data = Dataset::new(rep_ids.iter().map(Vec::len).collect(), locations, times, y)?;
    Ok(LabeledDataset {
        data,
        block_ids,
        rep_ids,
    })
}

pub fn ingest_path(path: &Path, month_names: bool) -> Result<LabeledDataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Ingest(format!("cannot open {}: {e}", path.display())))?;
    ingest(f, month_names)
}

impl LabeledDataset {
    /// 1-based integer labels.
    pub fn unlabeled(data: Dataset) -> Self {
        let block_ids = (1..=data.n_blocks()).map(|i| i.to_string()).collect();
        let rep_ids = data
            .reps
            .iter()
            .map(|&j| (1..=j).map(|r| r.to_string()).collect())
            .collect();
        Self {
            data,
            block_ids,
            rep_ids,
        }
    }

    /// Rows in storage order: block, repetition, station, time.
    pub fn export<W: Write>(&self, w: W) -> Result<()> {
        let ds = &self.data;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(HEADER)?;
        let mut k = 0;
        for (b, reps) in self.block_ids.iter().zip(&self.rep_ids) {
            for r in reps {
                for loc in &ds.locations {
                    for &t in &ds.times {
                        wr.write_record([
                            b.clone(),
                            r.clone(),
                            loc.station_id.clone(),
                            loc.lat.to_string(),
                            loc.lon.to_string(),
                            t.to_string(),
                            ds.y[k].to_string(),
                        ])?;
                        k += 1;
                    }
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn export_path(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.export(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }
}
