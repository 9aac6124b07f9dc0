//! Q-Wiener increments diagonal in the eigenbasis.
//!
//! A [`NoiseTable`] holds one realization of the driving noise at the finest
//! resolution `(M_ref, N_ref)`. Coarser discretizations are driven by exact
//! partial sums of the same fine increments, which is what couples every
//! level of a convergence study to one realization.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::{eigenvalue, SpectralField};

/// Upper bounds on table resolution (keeps a table below 10⁷ doubles).
pub const MAX_MODES: usize = 256;
pub const MAX_STEPS: usize = 4096;

/// Covariance family of the noise, `Q e_j = q_j e_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum NoiseFamily {
    /// `q_j = λ_j^{-r}`; admissible for `r > 3/2`.
    PowerLaw { r: f64 },
    /// `q_j = j^{-s}`; admissible for `s > 3`.
    TraceClass { s: f64 },
}

impl Default for NoiseFamily {
    fn default() -> Self {
        NoiseFamily::PowerLaw { r: 2.0 }
    }
}

impl NoiseFamily {
    pub fn variance(&self, j: usize) -> f64 {
        match *self {
            NoiseFamily::PowerLaw { r } => eigenvalue(j).powf(-r),
            NoiseFamily::TraceClass { s } => (j as f64).powf(-s),
        }
    }

    /// Checks `‖A^{1/2} Q^{1/2}‖_HS < ∞`, i.e. `Σ λ_j q_j < ∞`.
    ///
    /// On success returns a one-line description of the satisfied condition.
    pub fn check_admissible(&self) -> Result<String> {
        match *self {
            NoiseFamily::PowerLaw { r } => {
                if r.is_finite() && r > 1.5 {
                    Ok(format!("noise regularity |A^(1/2) Q^(1/2)|_HS < inf: OK (r={r} > 3/2)"))
                } else {
                    Err(Error::Assumption(format!(
                        "noise regularity |A^(1/2) Q^(1/2)|_HS < inf violated: power-law exponent {r} <= 3/2"
                    )))
                }
            }
            NoiseFamily::TraceClass { s } => {
                if s.is_finite() && s > 3.0 {
                    Ok(format!("noise regularity |A^(1/2) Q^(1/2)|_HS < inf: OK (s={s} > 3)"))
                } else {
                    Err(Error::Assumption(format!(
                        "noise regularity |A^(1/2) Q^(1/2)|_HS < inf violated: trace-class exponent {s} <= 3"
                    )))
                }
            }
        }
    }

    fn code(&self) -> (u32, f64) {
        match *self {
            NoiseFamily::PowerLaw { r } => (0, r),
            NoiseFamily::TraceClass { s } => (1, s),
        }
    }

    fn from_code(code: u32, param: f64) -> Result<Self> {
        match code {
            0 => Ok(NoiseFamily::PowerLaw { r: param }),
            1 => Ok(NoiseFamily::TraceClass { s: param }),
            c => Err(Error::Format(format!("unknown noise family code {c}"))),
        }
    }
}

/// Per-mode variances `q_1..q_N` of an admissible family.
#[derive(Debug, Clone, PartialEq)]
pub struct QSpectrum {
    family: NoiseFamily,
    q: Vec<f64>,
}

impl QSpectrum {
    pub fn new(family: NoiseFamily, n: usize) -> Result<Self> {
        family.check_admissible()?;
        let q: Vec<f64> = (1..=n).map(|j| family.variance(j)).collect();
        if q.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Assumption("noise variances must be finite and non-negative".into()));
        }
        Ok(Self { family, q })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn variances(&self) -> &[f64] {
        &self.q
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    /// `Σ_j λ_j q_j`, the squared Hilbert-Schmidt norm of `A^{1/2}Q^{1/2}`
    /// restricted to the stored modes.
    pub fn hs_norm_sq(&self) -> f64 {
        self.q.iter().enumerate().map(|(i, q)| eigenvalue(i + 1) * q).sum()
    }
}

/// Finest-level noise realization: `M_ref × N_ref` standard normals, stored
/// step-major. Mode `j` is drawn from its own stream, so the first `N` modes
/// do not depend on `N_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTable {
    seed: u64,
    t_end: f64,
    m_ref: usize,
    n_ref: usize,
    family: NoiseFamily,
    normals: Vec<f64>,
}

const MAGIC: &[u8; 8] = b"CHNOISE\0";
const FORMAT_VERSION: u32 = 1;

impl NoiseTable {
    pub fn build(seed: u64, t_end: f64, m_ref: usize, n_ref: usize, family: NoiseFamily) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon T must be positive, got {t_end}")));
        }
        if m_ref == 0 || n_ref == 0 {
            return Err(Error::InvalidArgument("M_ref and N_ref must be at least 1".into()));
        }
        if m_ref > MAX_STEPS || n_ref > MAX_MODES {
            return Err(Error::InvalidArgument(format!(
                "table {m_ref}x{n_ref} exceeds the {MAX_STEPS}x{MAX_MODES} ceiling"
            )));
        }
        family.check_admissible()?;
        let mut normals = vec![0.0; m_ref * n_ref];
        for j in 0..n_ref {
            let mut s = rng::stream(seed, "noise-mode", &[(j + 1) as u64]);
            for i in 0..m_ref {
                normals[i * n_ref + j] = s.sample(StandardNormal);
            }
        }
        Ok(Self {
            seed,
            t_end,
            m_ref,
            n_ref,
            family,
            normals,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn m_ref(&self) -> usize {
        self.m_ref
    }

    pub fn n_ref(&self) -> usize {
        self.n_ref
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn tau_ref(&self) -> f64 {
        self.t_end / self.m_ref as f64
    }

    /// Raw standard normal for fine step `i` (0-based) and mode `j` (1-based).
    pub fn normal(&self, i: usize, j: usize) -> f64 {
        self.normals[i * self.n_ref + j - 1]
    }

    /// Scaled fine increment `ΔW_{i,j} ~ N(0, q_j τ_ref)`.
    pub fn increment(&self, i: usize, j: usize) -> f64 {
        (self.family.variance(j) * self.tau_ref()).sqrt() * self.normal(i, j)
    }

    /// A second standard normal per `(step, mode)`, independent of the table,
    /// for samplers that need the exact joint law of an increment and its
    /// exponentially weighted integral. Returned for fine steps `0..M_ref`.
    pub fn auxiliary_normals(&self, j: usize) -> Vec<f64> {
        let mut s = rng::stream(self.seed, "noise-aux", &[j as u64]);
        (0..self.m_ref).map(|_| s.sample(StandardNormal)).collect()
    }

    /// Fine increments as a [`CoarseIncrements`] of full resolution.
    pub fn fine(&self) -> CoarseIncrements {
        let scale: Vec<f64> = (1..=self.n_ref)
            .map(|j| (self.family.variance(j) * self.tau_ref()).sqrt())
            .collect();
        let data = self
            .normals
            .chunks_exact(self.n_ref)
            .flat_map(|row| row.iter().zip(&scale).map(|(z, s)| z * s))
            .collect();
        CoarseIncrements {
            t_end: self.t_end,
            m: self.m_ref,
            n: self.n_ref,
            data,
        }
    }

    /// Coarse increments on `m` steps and modes `1..=n`, each the exact sum of
    /// the `M_ref / m` fine increments it spans.
    pub fn coarsen(&self, m: usize, n: usize) -> Result<CoarseIncrements> {
        if n == 0 || n > self.n_ref {
            return Err(Error::InvalidArgument(format!(
                "coarse mode count {n} must be in 1..={}",
                self.n_ref
            )));
        }
        self.fine().truncate(n).coarsen(m)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let (code, param) = self.family.code();
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&code.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.t_end.to_le_bytes())?;
        w.write_all(&(self.m_ref as u64).to_le_bytes())?;
        w.write_all(&(self.n_ref as u64).to_le_bytes())?;
        w.write_all(&param.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.normals.len() * 8);
        for v in &self.normals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a noise table (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported noise table version {version}")));
        }
        let code = read_u32(&mut r)?;
        let seed = read_u64(&mut r)?;
        let t_end = f64::from_bits(read_u64(&mut r)?);
        let m_ref = read_u64(&mut r)? as usize;
        let n_ref = read_u64(&mut r)? as usize;
        let param = f64::from_bits(read_u64(&mut r)?);
        let family = NoiseFamily::from_code(code, param)?;
        if m_ref == 0 || n_ref == 0 || m_ref > MAX_STEPS || n_ref > MAX_MODES {
            return Err(Error::Format(format!("implausible table shape {m_ref}x{n_ref}")));
        }
        let mut bytes = vec![0u8; m_ref * n_ref * 8];
        r.read_exact(&mut bytes)?;
        let normals = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self {
            seed,
            t_end,
            m_ref,
            n_ref,
            family,
            normals,
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Scaled increments `ΔW_m` on `m` uniform steps, `n` modes, step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseIncrements {
    t_end: f64,
    m: usize,
    n: usize,
    data: Vec<f64>,
}

impl CoarseIncrements {
    pub fn from_rows(t_end: f64, n: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 || n == 0 {
            return Err(Error::InvalidArgument("empty increment sequence".into()));
        }
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: r.len() });
            }
            data.extend(r);
        }
        Ok(Self { t_end, m, n, data })
    }

    pub fn steps(&self) -> usize {
        self.m
    }

    pub fn modes(&self) -> usize {
        self.n
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn tau(&self) -> f64 {
        self.t_end / self.m as f64
    }

    /// Increment of step `m` (0-based) over all modes.
    pub fn step(&self, m: usize) -> &[f64] {
        &self.data[m * self.n..(m + 1) * self.n]
    }

    pub fn step_field(&self, m: usize) -> SpectralField {
        SpectralField::from_coeffs(self.step(m).to_vec())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn truncate(&self, n: usize) -> Self {
        let n = n.min(self.n);
        let data = self
            .data
            .chunks_exact(self.n)
            .flat_map(|row| row[..n].iter().copied())
            .collect();
        Self {
            t_end: self.t_end,
            m: self.m,
            n,
            data,
        }
    }

    /// Sums consecutive blocks of `self.steps() / m` increments.
    ///
    /// Blocks are summed with a balanced binary tree, so for power-of-two
    /// ratios coarsening in stages gives bit-identical results to coarsening
    /// in one go.
    pub fn coarsen(&self, m: usize) -> Result<Self> {
        if m == 0 || self.m % m != 0 {
            return Err(Error::InvalidArgument(format!(
                "coarse step count {m} does not divide {}",
                self.m
            )));
        }
        let ratio = self.m / m;
        if ratio == 1 {
            return Ok(self.clone());
        }
        let mut data = vec![0.0; m * self.n];
        let mut column = vec![0.0; ratio];
        for c in 0..m {
            for j in 0..self.n {
                for (r, slot) in column.iter_mut().enumerate() {
                    *slot = self.data[(c * ratio + r) * self.n + j];
                }
                data[c * self.n + j] = tree_sum(&column);
            }
        }
        Ok(Self {
            t_end: self.t_end,
            m,
            n: self.n,
            data,
        })
    }

    /// Per-mode total `Σ_m ΔW_{m,j}`.
    pub fn totals(&self) -> Vec<f64> {
        let mut column = vec![0.0; self.m];
        (0..self.n)
            .map(|j| {
                for (i, slot) in column.iter_mut().enumerate() {
                    *slot = self.data[i * self.n + j];
                }
                tree_sum(&column)
            })
            .collect()
    }
}

fn tree_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        len => {
            let mid = len / 2;
            tree_sum(&xs[..mid]) + tree_sum(&xs[mid..])
        }
    }
}

/// Samples the stochastic convolution `O_t = ∫_0^t E(t-s) dW(s)` on `times`
/// exactly in law. Mode `j` is an Ornstein-Uhlenbeck process with rate
/// `λ_j²`, advanced by its exact Gaussian transition.
pub fn sample_convolution_path(
    seed: u64,
    times: &[f64],
    q: &QSpectrum,
    n: usize,
) -> Result<Vec<SpectralField>> {
    if times.is_empty() || times[0] != 0.0 {
        return Err(Error::InvalidArgument("time grid must start at 0".into()));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
    }
    if n == 0 || n > q.n() {
        return Err(Error::InvalidArgument(format!("mode count {n} must be in 1..={}", q.n())));
    }
    let mut out: Vec<Vec<f64>> = vec![vec![0.0; n]; times.len()];
    for j in 1..=n {
        let mut s = rng::stream(seed, "ou-mode", &[j as u64]);
        let rate = eigenvalue(j) * eigenvalue(j);
        let qj = q.variances()[j - 1];
        let mut x = 0.0;
        for k in 1..times.len() {
            let h = times[k] - times[k - 1];
            let decay = (-rate * h).exp();
            let var = qj * -(-2.0 * rate * h).exp_m1() / (2.0 * rate);
            let z: f64 = s.sample(StandardNormal);
            x = decay * x + var.sqrt() * z;
            out[k][j - 1] = x;
        }
    }
    Ok(out.into_iter().map(SpectralField::from_coeffs).collect())
}

/// `E|O_t|_α²` in closed form: `Σ_j λ_j^α q_j (1 − e^{−2λ_j² t}) / (2λ_j²)`.
pub fn convolution_moment(q: &QSpectrum, n: usize, alpha: f64, t: f64) -> f64 {
    (1..=n)
        .map(|j| {
            let l = eigenvalue(j);
            l.powf(alpha) * q.variances()[j - 1] * -(-2.0 * l * l * t).exp_m1() / (2.0 * l * l)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn admissibility() {
        assert!(NoiseFamily::PowerLaw { r: 2.0 }.check_admissible().unwrap().contains("r=2 > 3/2"));
        let e = NoiseFamily::PowerLaw { r: 1.2 }.check_admissible().unwrap_err();
        assert!(e.to_string().contains("1.2 <= 3/2"), "{e}");
        assert!(NoiseFamily::PowerLaw { r: 1.5 }.check_admissible().is_err());
        assert!(NoiseFamily::TraceClass { s: 3.5 }.check_admissible().is_ok());
        assert!(NoiseFamily::TraceClass { s: 3.0 }.check_admissible().is_err());
        assert!(QSpectrum::new(NoiseFamily::PowerLaw { r: 1.0 }, 4).is_err());
        assert!(NoiseTable::build(1, 1.0, 4, 4, NoiseFamily::PowerLaw { r: 1.0 }).is_err());
    }

    #[test]
    fn admissibility_is_monotone() {
        let rs: Vec<f64> = (0..60).map(|i| 1.0 + 0.05 * i as f64).collect();
        for (a, b) in rs.iter().zip(rs.iter().skip(1)) {
            let ok_a = NoiseFamily::PowerLaw { r: *a }.check_admissible().is_ok();
            let ok_b = NoiseFamily::PowerLaw { r: *b }.check_admissible().is_ok();
            assert!(!ok_a || ok_b);
        }
    }

    #[test]
    fn deterministic_tables() {
        let f = NoiseFamily::default();
        let a = NoiseTable::build(42, 1.0, 16, 8, f).unwrap();
        let b = NoiseTable::build(42, 1.0, 16, 8, f).unwrap();
        let c = NoiseTable::build(43, 1.0, 16, 8, f).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(NoiseTable::build(1, 1.0, MAX_STEPS + 1, 2, f).is_err());
        assert!(NoiseTable::build(1, 1.0, 0, 2, f).is_err());
    }

    #[test]
    fn coarsening() {
        let t = NoiseTable::build(5, 1.0, 64, 6, NoiseFamily::default()).unwrap();
        assert_eq!(t.coarsen(64, 6).unwrap(), t.fine());
        let c8 = t.coarsen(8, 6).unwrap();
        let c16 = t.coarsen(16, 6).unwrap();
        assert_eq!(c16.coarsen(8).unwrap(), c8);
        assert_eq!(c8.totals(), t.fine().totals());
        assert!(t.coarsen(24, 6).is_err());
        assert!(t.coarsen(8, 7).is_err());
        let c = t.coarsen(4, 3).unwrap();
        assert_eq!(c.as_slice().len(), 12);
        assert!(c.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn nesting_in_mode_count() {
        let f = NoiseFamily::default();
        let small = NoiseTable::build(9, 1.0, 32, 4, f).unwrap();
        let big = NoiseTable::build(9, 1.0, 32, 8, f).unwrap();
        assert_eq!(small.coarsen(8, 4).unwrap(), big.coarsen(8, 4).unwrap());
    }

    #[test]
    fn binary_round_trip() {
        let t = NoiseTable::build(3, 0.5, 8, 5, NoiseFamily::TraceClass { s: 4.0 }).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 8 + 4 + 4 + 8 * 5 + 8 * 40);
        assert_eq!(&buf[..8], b"CHNOISE\0");
        let back = NoiseTable::read_from(&buf[..]).unwrap();
        assert_eq!(back, t);
        buf[0] = b'X';
        assert!(NoiseTable::read_from(&buf[..]).is_err());
    }

    #[test]
    fn convolution_starts_at_zero() {
        let q = QSpectrum::new(NoiseFamily::default(), 4).unwrap();
        let p = sample_convolution_path(1, &[0.0, 0.1, 0.2], &q, 4).unwrap();
        assert_eq!(p[0], SpectralField::zeros(4));
        assert!(p[2].is_finite());
        assert!(sample_convolution_path(1, &[0.0, 0.2, 0.1], &q, 4).is_err());
        assert!(sample_convolution_path(1, &[0.1, 0.2], &q, 4).is_err());
    }
}
