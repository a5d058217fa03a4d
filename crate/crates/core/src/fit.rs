//! Estimating a reservoir size from an observed decision consistency.
//!
//! A lookup curve of simulated consistency against `N` is built at a fixed
//! lifetime and offset, smoothed to be non-increasing in `N`, and then read
//! backwards: each observed value maps to the grid size whose smoothed
//! consistency is nearest.

use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::{ReservoirConfig, StallPolicy};
use crate::stats::consistency_curve;

/// Tolerance below 0.5 before a value is flagged as below chance.
pub const BELOW_CHANCE_EPS: f64 = 0.02;

/// Smallest spread of the smoothed curve that still allows inversion.
pub const MIN_SPREAD: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub participant_id: String,
    pub consistency: f64,
}

/// Simulation parameters behind a lookup curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupParams {
    pub lifetime: u64,
    pub offset: u64,
    pub t0: u64,
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub stall_policy: StallPolicy,
}

impl Default for LookupParams {
    fn default() -> Self {
        let base = ReservoirConfig::default();
        Self {
            lifetime: 10,
            offset: 8,
            t0: base.t0,
            trials: base.trials,
            seed: base.seed,
            stall_policy: base.stall_policy,
        }
    }
}

impl LookupParams {
    pub fn config_for(&self, n: usize) -> ReservoirConfig {
        ReservoirConfig {
            n_levels: n,
            lifetime: self.lifetime,
            total_cycles: self.t0 + self.offset,
            t0: self.t0,
            trials: self.trials,
            seed: self.seed,
            stall_policy: self.stall_policy,
        }
    }
}

pub fn default_grid() -> Vec<usize> {
    (2..=50).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LookupCurve {
    pub n_grid: Vec<usize>,
    pub raw: Vec<f64>,
    /// Samples behind each raw value; used as smoothing weights.
    pub samples: Vec<u64>,
    /// Non-increasing in `N`.
    pub smoothed: Vec<f64>,
    pub params: LookupParams,
    /// Grid sizes that produced no sample at the offset.
    #[serde(default)]
    pub dropped: Vec<usize>,
}

/// Weighted least-squares projection onto non-increasing sequences
/// (pool adjacent violators).
pub fn isotonic_non_increasing(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (mean, weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 >= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let w = w1 + w2;
            blocks.push(((m1 * w1 + m2 * w2) / w, w, l1 + l2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

impl LookupCurve {
    /// Builds a curve from raw per-`N` values; the grid must be strictly increasing.
    pub fn from_raw(n_grid: Vec<usize>, raw: Vec<f64>, samples: Vec<u64>, params: LookupParams) -> Result<Self> {
        if n_grid.is_empty() {
            return Err(Error::InvalidConfig("lookup grid is empty".into()));
        }
        if n_grid.len() != raw.len() || raw.len() != samples.len() {
            return Err(Error::InvalidConfig("lookup columns have different lengths".into()));
        }
        if n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig("lookup grid must be strictly increasing".into()));
        }
        let weights: Vec<f64> = samples.iter().map(|&s| s.max(1) as f64).collect();
        let smoothed = isotonic_non_increasing(&raw, &weights);
        Ok(Self { n_grid, raw, samples, smoothed, params, dropped: Vec::new() })
    }

    pub fn spread(&self) -> f64 {
        self.smoothed[0] - self.smoothed[self.smoothed.len() - 1]
    }

    pub fn check_invertible(&self) -> Result<()> {
        let spread = self.spread();
        if spread < MIN_SPREAD {
            return Err(Error::DegenerateCurve { spread });
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
        let mut w = csv::Writer::from_writer(File::create(path).map_err(io)?);
        let row_err = |e: csv::Error| Error::Row { path: path.to_path_buf(), row: 0, message: e.to_string() };
        w.write_record(["n", "raw_consistency", "smoothed_consistency"]).map_err(row_err)?;
        for ((n, r), s) in self.n_grid.iter().zip(&self.raw).zip(&self.smoothed) {
            w.write_record([n.to_string(), r.to_string(), s.to_string()]).map_err(row_err)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a curve written by [`LookupCurve::write_csv`]; smoothing is recomputed
    /// with unit weights.
    pub fn read_csv(path: &Path, params: LookupParams) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            n: usize,
            raw_consistency: f64,
        }
        let mut reader = open_csv(path)?;
        let mut grid = Vec::new();
        let mut raw = Vec::new();
        for (i, row) in reader.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| Error::Row { path: path.to_path_buf(), row: i + 2, message: e.to_string() })?;
            grid.push(row.n);
            raw.push(row.raw_consistency);
        }
        let samples = vec![1; raw.len()];
        Self::from_raw(grid, raw, samples, params)
    }
}

/// Simulates consistency at `params.offset` for every `N` in the grid.
pub fn build_lookup(params: LookupParams, n_grid: &[usize]) -> Result<LookupCurve> {
    if params.offset < 1 {
        return Err(Error::InvalidConfig("offset must be >= 1".into()));
    }
    if n_grid.is_empty() {
        return Err(Error::InvalidConfig("lookup grid is empty".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let points = grid
        .par_iter()
        .map(|&n| {
            let curve = match consistency_curve(&params.config_for(n), params.offset as usize) {
                Ok(c) => c,
                Err(Error::EmptyCurve) => return Ok((n, None)),
                Err(e) => return Err(e),
            };
            let k = params.offset as usize - 1;
            Ok((n, curve.mean(params.offset).map(|m| (m, curve.samples[k]))))
        })
        .collect::<Result<Vec<_>>>()?;

    let (mut kept, mut raw, mut samples, mut dropped) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (n, point) in points {
        match point {
            Some((m, s)) => {
                kept.push(n);
                raw.push(m);
                samples.push(s);
            }
            None => dropped.push(n),
        }
    }
    if !dropped.is_empty() {
        log::warn!("no consistency samples at offset {} for N = {dropped:?}", params.offset);
    }
    if kept.is_empty() {
        return Err(Error::EmptyCurve);
    }
    let mut curve = LookupCurve::from_raw(kept, raw, samples, params)?;
    curve.dropped = dropped;
    Ok(curve)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    Ok,
    AboveRange,
    BelowChance,
}

impl FitFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            FitFlag::Ok => "ok",
            FitFlag::AboveRange => "above_range",
            FitFlag::BelowChance => "below_chance",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub participant_id: String,
    pub consistency: f64,
    pub estimated_n: Option<usize>,
    pub flag: FitFlag,
}

/// Maps one consistency value onto the curve; `None` for the flagged cases.
pub fn estimate_reservoir_size(c: f64, curve: &LookupCurve) -> Result<(Option<usize>, FitFlag)> {
    curve.check_invertible()?;
    if c > curve.smoothed[0] {
        return Ok((None, FitFlag::AboveRange));
    }
    if c < 0.5 - BELOW_CHANCE_EPS {
        return Ok((None, FitFlag::BelowChance));
    }
    let mut best = 0;
    for (i, s) in curve.smoothed.iter().enumerate() {
        if (s - c).abs() < (curve.smoothed[best] - c).abs() {
            best = i;
        }
    }
    Ok((Some(curve.n_grid[best]), FitFlag::Ok))
}

pub fn fit_all(records: &[ParticipantRecord], curve: &LookupCurve) -> Result<Vec<FitResult>> {
    records
        .iter()
        .map(|r| {
            let (estimated_n, flag) = estimate_reservoir_size(r.consistency, curve)?;
            Ok(FitResult { participant_id: r.participant_id.clone(), consistency: r.consistency, estimated_n, flag })
        })
        .collect()
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

/// Reads `participant_id,consistency` rows. Row numbers in errors are file
/// line numbers (the header is line 1).
pub fn ingest_csv(path: &Path) -> Result<Vec<ParticipantRecord>> {
    let mut reader = open_csv(path)?;
    let row_err = |row, message: String| Error::Row { path: path.to_path_buf(), row, message };
    let headers = reader.headers().map_err(|e| row_err(1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["participant_id", "consistency"] {
        return Err(row_err(1, format!("expected header `participant_id,consistency`, got `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut records = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| row_err(line, e.to_string()))?;
        let id = rec.get(0).unwrap_or_default();
        if id.is_empty() {
            return Err(row_err(line, "empty participant_id".into()));
        }
        let raw = rec.get(1).unwrap_or_default();
        let consistency: f64 = raw
            .parse()
            .map_err(|_| row_err(line, format!("consistency `{raw}` is not a number")))?;
        if !(0.0..=1.0).contains(&consistency) {
            return Err(row_err(line, format!("consistency {consistency} outside [0, 1]")));
        }
        records.push(ParticipantRecord { participant_id: id.to_string(), consistency });
    }
    if records.is_empty() {
        log::warn!("{}: no participant rows", path.display());
    }
    Ok(records)
}

pub fn write_fit_csv(path: &Path, results: &[FitResult]) -> Result<()> {
    let io = |e: std::io::Error| Error::Io { path: path.to_path_buf(), source: e };
    let row_err = |e: csv::Error| Error::Row { path: path.to_path_buf(), row: 0, message: e.to_string() };
    let mut w = csv::Writer::from_writer(File::create(path).map_err(io)?);
    w.write_record(["participant_id", "consistency", "estimated_n", "flag"]).map_err(row_err)?;
    for r in results {
        w.write_record([
            r.participant_id.clone(),
            r.consistency.to_string(),
            r.estimated_n.map(|n| n.to_string()).unwrap_or_default(),
            r.flag.as_str().to_string(),
        ])
        .map_err(row_err)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn curve(raw: &[f64]) -> LookupCurve {
        let grid: Vec<usize> = (2..2 + raw.len()).collect();
        LookupCurve::from_raw(grid, raw.to_vec(), vec![1; raw.len()], LookupParams::default()).unwrap()
    }

    #[test]
    fn pava_identity_on_monotone() {
        let v = [0.7, 0.65, 0.65, 0.6, 0.5];
        assert_eq!(isotonic_non_increasing(&v, &[1.0; 5]), v.to_vec());
    }

    #[test]
    fn pava_pools_violators() {
        let out = isotonic_non_increasing(&[0.6, 0.8, 0.5, 0.55], &[1.0, 1.0, 1.0, 3.0]);
        assert_eq!(out.len(), 4);
        assert!((out[0] - 0.7).abs() < 1e-12 && (out[1] - 0.7).abs() < 1e-12);
        assert!((out[2] - 0.5375).abs() < 1e-12 && (out[3] - 0.5375).abs() < 1e-12);
    }

    #[test]
    fn estimate_rules() {
        let c = curve(&[0.75, 0.625, 0.5625, 0.53125, 0.5]);
        assert_eq!(estimate_reservoir_size(0.9, &c).unwrap(), (None, FitFlag::AboveRange));
        assert_eq!(estimate_reservoir_size(0.47, &c).unwrap(), (None, FitFlag::BelowChance));
        assert_eq!(estimate_reservoir_size(0.49, &c).unwrap(), (Some(6), FitFlag::Ok));
        assert_eq!(estimate_reservoir_size(0.5, &c).unwrap(), (Some(6), FitFlag::Ok));
        assert_eq!(estimate_reservoir_size(0.7, &c).unwrap(), (Some(2), FitFlag::Ok));
        // exactly halfway between the N=3 and N=4 values
        assert_eq!(estimate_reservoir_size(0.59375, &c).unwrap().0, Some(3));
    }

    #[test]
    fn flat_curve_is_rejected() {
        let c = curve(&[0.505, 0.5, 0.498, 0.501]);
        assert!(matches!(estimate_reservoir_size(0.5, &c), Err(Error::DegenerateCurve { .. })));
    }

    #[test]
    fn bad_grid() {
        let p = LookupParams::default();
        assert!(LookupCurve::from_raw(vec![], vec![], vec![], p).is_err());
        assert!(LookupCurve::from_raw(vec![3, 2], vec![0.6, 0.5], vec![1, 1], p).is_err());
    }

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_valid_and_errors() {
        let f = write("participant_id,consistency\np01,0.75\np02, 0.5\n");
        let recs = ingest_csv(f.path()).unwrap();
        assert_eq!(recs[0], ParticipantRecord { participant_id: "p01".into(), consistency: 0.75 });
        assert_eq!(recs[1].consistency, 0.5);

        let f = write("participant_id,consistency\np01,0.75\np02,1.25\n");
        match ingest_csv(f.path()).unwrap_err() {
            Error::Row { row, .. } => assert_eq!(row, 3),
            e => panic!("{e}"),
        }
        let f = write("participant_id,consistency\np01,abc\n");
        assert!(matches!(ingest_csv(f.path()), Err(Error::Row { row: 2, .. })));
        let f = write("id,value\np01,0.5\n");
        assert!(matches!(ingest_csv(f.path()), Err(Error::Row { row: 1, .. })));
        assert!(matches!(ingest_csv(Path::new("/nonexistent/x.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn ingest_header_only() {
        let f = write("participant_id,consistency\n");
        assert!(ingest_csv(f.path()).unwrap().is_empty());
    }

    #[test]
    fn lookup_csv_round_trip() {
        let c = curve(&[0.7, 0.6, 0.62, 0.5]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lookup.csv");
        c.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("n,raw_consistency,smoothed_consistency\n2,0.7,0.7\n"));
        let back = LookupCurve::read_csv(&path, c.params).unwrap();
        assert_eq!(back.raw, c.raw);
        assert_eq!(back.smoothed, c.smoothed);
    }

    #[test]
    fn fit_preserves_order() {
        let c = curve(&[0.7, 0.62, 0.56, 0.52, 0.5]);
        let recs = [("b", 0.6), ("a", 0.6), ("c", 0.95)]
            .map(|(id, v)| ParticipantRecord { participant_id: id.into(), consistency: v });
        let out = fit_all(&recs, &c).unwrap();
        assert_eq!(out.iter().map(|r| r.participant_id.as_str()).collect::<Vec<_>>(), ["b", "a", "c"]);
        assert_eq!(out[0].estimated_n, out[1].estimated_n);
        assert_eq!(out[2].flag, FitFlag::AboveRange);
        assert!(out.iter().all(|r| r.estimated_n.is_some() == (r.flag == FitFlag::Ok)));
    }
}
