//! Fully-digital precoding: SVD-optimal beamformer, achievable rate, and the
//! real-valued row encoding used for ELM targets.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;

/// Entries below this magnitude are treated as zero when fixing column phase.
const PHASE_EPS: f64 = 1e-12;

/// Top-`n_s` right singular vectors of `h`, with each column rotated so its
/// first nonzero entry is real and nonnegative.
///
/// The rotation makes the result a function of `h` alone, which matters
/// because these columns become regression targets.
pub fn optimal_fd_beamformer(h: &CMat, n_s: usize) -> Result<CMat> {
    let (n_r, n_t) = h.shape();
    if n_s == 0 || n_s > n_r.min(n_t) {
        return Err(Error::arg(format!(
            "stream count {n_s} must lie in 1..={} for a {n_r}x{n_t} channel",
            n_r.min(n_t)
        )));
    }
    if h.iter().all(|v| *v == C64::new(0.0, 0.0)) {
        log::warn!("zero channel; returning the zero beamformer");
        return Ok(CMat::zeros(n_t, n_s));
    }
    let svd = h.clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut f = CMat::zeros(n_t, n_s);
    for k in 0..n_s {
        for j in 0..n_t {
            f[(j, k)] = v_t[(k, j)].conj();
        }
    }
    normalize_phase(&mut f);
    Ok(f)
}

fn normalize_phase(f: &mut CMat) {
    for mut col in f.column_iter_mut() {
        if let Some(lead) = col.iter().copied().find(|v| v.norm() > PHASE_EPS) {
            let rot = lead.conj() / lead.norm();
            for v in col.iter_mut() {
                *v *= rot;
            }
            // remove rounding residue on the pivot
            if let Some(p) = col.iter_mut().find(|v| v.norm() > PHASE_EPS) {
                *p = C64::new(p.norm(), 0.0);
            }
        }
    }
}

/// `log2 det(I + rho_r · H F Fᴴ Hᴴ)` in bits/s/Hz.
pub fn spectral_efficiency(h: &CMat, f: &CMat, rho_r: f64) -> Result<f64> {
    if h.ncols() != f.nrows() {
        return Err(Error::arg(format!(
            "channel has {} transmit antennas but beamformer has {} rows",
            h.ncols(),
            f.nrows()
        )));
    }
    if !(rho_r >= 0.0) || !rho_r.is_finite() {
        return Err(Error::arg(format!("receive SNR must be finite and >= 0, got {rho_r}")));
    }
    let hf = h * f;
    let n_r = h.nrows();
    let a = CMat::identity(n_r, n_r) + (&hf * hf.adjoint()) * C64::new(rho_r, 0.0);
    let ln_det = match a.clone().cholesky() {
        Some(ch) => ch.l().diagonal().iter().map(|d| 2.0 * d.re.ln()).sum::<f64>(),
        None => a.lu().determinant().norm().ln(),
    };
    Ok((ln_det / std::f64::consts::LN_2).max(0.0))
}

/// `[Re(vec(M)), Im(vec(M))]` with column-major `vec`.
pub fn encode_complex(m: &CMat) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * m.len());
    out.extend(m.iter().map(|v| v.re));
    out.extend(m.iter().map(|v| v.im));
    out
}

/// Inverse of [`encode_complex`].
pub fn decode_complex(row: &[f64], rows: usize, cols: usize) -> Result<CMat> {
    let n = rows * cols;
    if row.len() != 2 * n {
        return Err(Error::arg(format!(
            "row width {} does not match 2*{rows}*{cols} = {}",
            row.len(),
            2 * n
        )));
    }
    Ok(CMat::from_iterator(
        rows,
        cols,
        (0..n).map(|k| C64::new(row[k], row[n + k])),
    ))
}

pub fn encode_beamformer(f: &CMat) -> Vec<f64> {
    encode_complex(f)
}

pub fn decode_beamformer(row: &[f64], n_t: usize, n_s: usize) -> Result<CMat> {
    decode_complex(row, n_t, n_s)
}

/// Gram–Schmidt projection onto orthonormal columns. Columns that are
/// (numerically) dependent on earlier ones, or zero, come out as zero.
pub fn orthonormalize_columns(f: &CMat) -> CMat {
    let mut q = f.clone();
    let scale = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    for k in 0..q.ncols() {
        for j in 0..k {
            let qj = q.column(j).clone_owned();
            let proj = qj.dotc(&q.column(k));
            let mut ck = q.column_mut(k);
            ck -= qj * proj;
        }
        let norm = q.column(k).norm();
        let mut ck = q.column_mut(k);
        if norm > tol {
            ck /= C64::new(norm, 0.0);
        } else {
            ck.fill(C64::new(0.0, 0.0));
        }
    }
    q
}
