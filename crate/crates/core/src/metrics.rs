//! Metric records, evaluation of a model on held-out data, communication
//! accounting, and the metrics CSV.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::admm::{Hop, Mat};
use crate::beamforming::{decode_beamformer, orthonormalize_columns, spectral_efficiency};
use crate::baselines::fd_reference;
use crate::channel::TestSet;
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 8] = [
    "algorithm",
    "seed",
    "simulated_time",
    "services_total",
    "comm_units",
    "nmse_test",
    "spectral_eff_mean",
    "spectral_eff_raw",
];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub algorithm: String,
    pub seed: u64,
    pub simulated_time: f64,
    pub services_total: u64,
    pub comm_units: f64,
    pub nmse_test: f64,
    pub spectral_eff_mean: f64,
    pub spectral_eff_raw: f64,
}

/// `Σ‖Ŷ_d − T_d‖² / Σ‖T_d‖²`. Non-finite predictions count as infinite error.
pub fn nmse(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    if predictions.shape() != targets.shape() {
        return Err(Error::arg(format!(
            "prediction shape {:?} differs from target shape {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    let energy = targets.norm_squared();
    if !(energy > 0.0) {
        return Err(Error::arg("targets have zero energy"));
    }
    let err = (predictions - targets).norm_squared() / energy;
    Ok(if err.is_nan() { f64::INFINITY } else { err })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub nmse: f64,
    /// Mean rate with column-orthonormalized predicted beamformers.
    pub rate: f64,
    /// Mean rate with the raw decoded predictions.
    pub rate_raw: f64,
}

/// Mean spectral efficiency on the clean test channels of the beamformers
/// decoded from `predictions` (one row per test realization).
pub fn eval_spectral_efficiency(predictions: &DMatrix<f64>, test: &TestSet, rho_r: f64) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::arg("test set is empty"));
    }
    if predictions.nrows() != test.len() {
        return Err(Error::arg("one prediction row per test realization required"));
    }
    let n_t = test.clean[0].n_t();
    let (mut sum, mut sum_raw) = (0.0, 0.0);
    for (d, h) in test.clean.iter().enumerate() {
        let row: Vec<f64> = predictions.row(d).iter().copied().collect();
        if row.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let f = decode_beamformer(&row, n_t, test.n_s)?;
        sum_raw += spectral_efficiency(&h.matrix, &f, rho_r)?;
        sum += spectral_efficiency(&h.matrix, &orthonormalize_columns(&f), rho_r)?;
    }
    let n = test.len() as f64;
    Ok((sum / n, sum_raw / n))
}

/// Scores `model` on the test set whose hidden features are `features`.
pub fn evaluate(model: &Mat, features: &DMatrix<f64>, test: &TestSet, rho_r: f64) -> Result<Evaluation> {
    let pred = features * model;
    let nmse = nmse(&pred, &test.targets)?;
    let (rate, rate_raw) = eval_spectral_efficiency(&pred, test, rho_r)?;
    Ok(Evaluation { nmse, rate, rate_raw })
}

/// Non-learning references on the test set: `(perfect CSI, imperfect CSI)`.
pub fn fd_reference_rates(test: &TestSet, rho_r: f64) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::arg("test set is empty"));
    }
    let (mut p, mut i) = (0.0, 0.0);
    for (h, o) in test.clean.iter().zip(&test.noisy) {
        let (a, b) = fd_reference(&h.matrix, &o.matrix, test.n_s, rho_r)?;
        p += a;
        i += b;
    }
    let n = test.len() as f64;
    Ok((p / n, i / n))
}

/// Cost of one token hop: the token is `O` vectors of length `Q`, and a
/// self-hop transmits nothing.
pub fn hop_cost(hop: &Hop, output_dim: usize) -> f64 {
    if hop.is_self() {
        0.0
    } else {
        output_dim as f64
    }
}

/// Cost of one synchronous exchange round: every edge carries a model each way.
pub fn round_cost(edges: usize, output_dim: usize) -> f64 {
    2.0 * edges as f64 * output_dim as f64
}

pub fn write_metrics_to<W: Write>(w: W, records: &[MetricRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in records {
        out.write_record([
            r.algorithm.clone(),
            r.seed.to_string(),
            r.simulated_time.to_string(),
            r.services_total.to_string(),
            r.comm_units.to_string(),
            r.nmse_test.to_string(),
            r.spectral_eff_mean.to_string(),
            r.spectral_eff_raw.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_metrics(records: &[MetricRecord], path: &Path) -> Result<()> {
    write_metrics_to(File::create(path)?, records)
}

pub fn metrics_to_string(records: &[MetricRecord]) -> String {
    let mut buf = Vec::new();
    write_metrics_to(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    let bad = |what: &str| Error::Format(format!("bad {what} in metrics row"));
    rd.records()
        .map(|row| {
            let row = row?;
            Ok(MetricRecord {
                algorithm: row[0].to_string(),
                seed: row[1].parse().map_err(|_| bad("seed"))?,
                simulated_time: row[2].parse().map_err(|_| bad("simulated_time"))?,
                services_total: row[3].parse().map_err(|_| bad("services_total"))?,
                comm_units: row[4].parse().map_err(|_| bad("comm_units"))?,
                nmse_test: row[5].parse().map_err(|_| bad("nmse_test"))?,
                spectral_eff_mean: row[6].parse().map_err(|_| bad("spectral_eff_mean"))?,
                spectral_eff_raw: row[7].parse().map_err(|_| bad("spectral_eff_raw"))?,
            })
        })
        .collect()
}

/// Orders records by `(algorithm, seed, simulated_time)`; ties keep their
/// original order.
pub fn sort_records(records: &mut [MetricRecord]) {
    records.sort_by(|a, b| {
        a.algorithm
            .cmp(&b.algorithm)
            .then(a.seed.cmp(&b.seed))
            .then(a.simulated_time.total_cmp(&b.simulated_time))
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(vals: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, vals.len() / 2, vals)
    }

    #[test]
    fn nmse_examples() {
        let t = m(&[1.0, -2.0, 0.5, 3.0]);
        assert_eq!(nmse(&t, &t).unwrap(), 0.0);
        assert_eq!(nmse(&DMatrix::zeros(2, 2), &t).unwrap(), 1.0);
        assert!((nmse(&(&t * 2.0), &t).unwrap() - 1.0).abs() < 1e-15);
        assert!(nmse(&t, &DMatrix::zeros(2, 2)).is_err());
        assert!(nmse(&DMatrix::zeros(1, 2), &t).is_err());
        let mut bad = t.clone();
        bad[(0, 0)] = f64::NAN;
        assert_eq!(nmse(&bad, &t).unwrap(), f64::INFINITY);
    }

    #[test]
    fn communication_units() {
        assert_eq!(hop_cost(&Hop { from: 1, to: 2 }, 32), 32.0);
        assert_eq!(hop_cost(&Hop { from: 2, to: 2 }, 32), 0.0);
        assert_eq!(round_cost(45, 32), 2.0 * 45.0 * 32.0);
    }

    #[test]
    fn csv_header_and_values() {
        let r = MetricRecord {
            algorithm: "ispw".into(),
            seed: 3,
            simulated_time: 1.5,
            services_total: 10,
            comm_units: 64.0,
            nmse_test: 0.25,
            spectral_eff_mean: 4.0,
            spectral_eff_raw: 3.5,
        };
        let s = metrics_to_string(&[r.clone()]);
        let mut lines = s.lines();
        assert_eq!(
            lines.next().unwrap(),
            "algorithm,seed,simulated_time,services_total,comm_units,nmse_test,spectral_eff_mean,spectral_eff_raw"
        );
        assert_eq!(lines.next().unwrap(), "ispw,3,1.5,10,64,0.25,4,3.5");

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics(&[r.clone()], &p).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), vec![r]);
    }

    #[test]
    fn sorting_contract() {
        let mk = |a: &str, s: u64, t: f64| MetricRecord {
            algorithm: a.into(),
            seed: s,
            simulated_time: t,
            services_total: 0,
            comm_units: 0.0,
            nmse_test: 1.0,
            spectral_eff_mean: 0.0,
            spectral_eff_raw: 0.0,
        };
        let mut v = vec![mk("ispw", 2, 1.0), mk("dgd", 1, 5.0), mk("ispw", 1, 3.0), mk("ispw", 1, 2.0)];
        sort_records(&mut v);
        let keys: Vec<_> = v.iter().map(|r| (r.algorithm.as_str(), r.seed, r.simulated_time)).collect();
        assert_eq!(keys, vec![("dgd", 1, 5.0), ("ispw", 1, 2.0), ("ispw", 1, 3.0), ("ispw", 2, 1.0)]);
    }
}
