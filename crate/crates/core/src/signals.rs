//! Excitation design, DFT conventions, period averaging, noise and FRF
//! estimation.
//!
//! DFT convention used everywhere in the crate:
//! `X(k) = (1/N) Σ x(n) e^(-j2πkn/N)` and `z_k = e^(+j2πk/N)`, so a one-sample
//! advance of a periodic signal multiplies its spectrum by `z_k`.

use std::f64::consts::TAU;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-period sampled input/output data. Columns are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeRecord {
    pub fs: f64,
    /// Samples per period.
    pub n: usize,
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub input_names: Vec<String>,
    pub output_names: Vec<String>,
}

/// Sidecar metadata written next to a record CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordMeta {
    pub fs: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "P")]
    pub periods: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl TimeRecord {
    pub fn new(fs: f64, n: usize, u: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let input_names = (1..=u.nrows()).map(|i| format!("u{i}")).collect();
        let output_names = (1..=y.nrows()).map(|i| format!("y{i}")).collect();
        let rec = Self {
            fs,
            n,
            u,
            y,
            input_names,
            output_names,
        };
        rec.validate()?;
        Ok(rec)
    }

    fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::InvalidArgument(format!("fs must be positive, got {}", self.fs)));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("period length must be positive".into()));
        }
        if self.u.ncols() != self.y.ncols() {
            return Err(Error::Dimension(format!(
                "input has {} samples, output has {}",
                self.u.ncols(),
                self.y.ncols()
            )));
        }
        if self.u.ncols() == 0 || self.u.ncols() % self.n != 0 {
            return Err(Error::Dimension(format!(
                "{} samples is not a positive multiple of the period length {}",
                self.u.ncols(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn periods(&self) -> usize {
        self.u.ncols() / self.n
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn l(&self) -> usize {
        self.y.nrows()
    }

    fn check_periods(&self, periods: &Range<usize>) -> Result<()> {
        if periods.is_empty() || periods.end > self.periods() {
            return Err(Error::InvalidArgument(format!(
                "period selection {periods:?} out of range for {} periods",
                self.periods()
            )));
        }
        Ok(())
    }

    /// Sub-record made of the selected periods.
    pub fn select_periods(&self, periods: Range<usize>) -> Result<Self> {
        self.check_periods(&periods)?;
        let start = periods.start * self.n;
        let len = periods.len() * self.n;
        Ok(Self {
            u: self.u.columns(start, len).into_owned(),
            y: self.y.columns(start, len).into_owned(),
            ..self.clone()
        })
    }

    /// Drops the first `transient` periods.
    pub fn steady(&self, transient: usize) -> Result<Self> {
        self.select_periods(transient..self.periods())
    }

    /// Period-averaged input and output, each `channels × N`.
    pub fn mean_period(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        (mean_period(&self.u, self.n), mean_period(&self.y, self.n))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["time".to_string()];
        header.extend(self.input_names.iter().cloned());
        header.extend(self.output_names.iter().cloned());
        w.write_record(&header)?;
        for t in 0..self.u.ncols() {
            let mut row = vec![format!("{}", t as f64 / self.fs)];
            row.extend(self.u.column(t).iter().map(|v| format!("{v:e}")));
            row.extend(self.y.column(t).iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        let meta = RecordMeta {
            fs: self.fs,
            n: self.n,
            periods: self.periods(),
            inputs: self.input_names.clone(),
            outputs: self.output_names.clone(),
        };
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
        Ok(())
    }

    /// Reads a record CSV and its `.json` sidecar.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let meta: RecordMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(path))?)?;
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        let m = meta.inputs.len();
        let l = meta.outputs.len();
        if headers.len() != 1 + m + l {
            return Err(Error::Config(format!(
                "{}: header has {} columns, sidecar declares {} inputs and {} outputs",
                path.display(),
                headers.len(),
                m,
                l
            )));
        }
        let mut cols: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            for field in rec.iter().skip(1) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Config(format!(
                        "{}: line {}: cannot parse '{field}' as a number",
                        path.display(),
                        line + 2
                    ))
                })?;
                cols.push(v);
            }
            count += 1;
        }
        let all = DMatrix::from_column_slice(m + l, count, &cols);
        let mut rec = Self::new(
            meta.fs,
            meta.n,
            all.rows(0, m).into_owned(),
            all.rows(m, l).into_owned(),
        )?;
        if rec.periods() != meta.periods {
            return Err(Error::Config(format!(
                "{}: sidecar declares {} periods, file holds {}",
                path.display(),
                meta.periods,
                rec.periods()
            )));
        }
        rec.input_names = meta.inputs;
        rec.output_names = meta.outputs;
        Ok(rec)
    }
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    path.with_extension("json")
}

pub fn mean_period(data: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let p = data.ncols() / n;
    let mut out = DMatrix::zeros(data.nrows(), n);
    for k in 0..p {
        out += data.columns(k * n, n);
    }
    out / p as f64
}

/// Excited DFT lines `k_min..=k_max` minus explicit exclusions. DC is never
/// part of a band.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExcitedBand {
    pub k_min: usize,
    pub k_max: usize,
    #[serde(default)]
    pub excluded: Vec<usize>,
}

impl ExcitedBand {
    pub fn new(k_min: usize, k_max: usize, n: usize) -> Result<Self> {
        if k_min < 1 || k_min > k_max || 2 * k_max >= n {
            return Err(Error::InvalidArgument(format!(
                "band lines {k_min}..={k_max} invalid for N = {n} (need 1 <= k_min <= k_max < N/2)"
            )));
        }
        Ok(Self {
            k_min,
            k_max,
            excluded: Vec::new(),
        })
    }

    /// Lines whose frequency lies in `[f_lo, f_hi]`, DC excluded.
    pub fn from_hz(f_lo: f64, f_hi: f64, fs: f64, n: usize) -> Result<Self> {
        let df = fs / n as f64;
        let k_min = ((f_lo / df).ceil() as usize).max(1);
        let k_max = (f_hi / df + 1e-9).floor() as usize;
        Self::new(k_min, k_max, n)
    }

    pub fn lines(&self) -> Vec<usize> {
        (self.k_min..=self.k_max)
            .filter(|k| !self.excluded.contains(k))
            .collect()
    }
}

/// DFT values on a set of lines. `values` is `channels × F`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    pub lines: Vec<usize>,
    pub values: DMatrix<Complex64>,
    pub z: Vec<Complex64>,
    pub n: usize,
    pub fs: f64,
}

impl SpectrumSet {
    pub fn from_values(lines: Vec<usize>, values: DMatrix<Complex64>, n: usize, fs: f64) -> Self {
        let z = lines.iter().map(|&k| z_of(k, n)).collect();
        Self {
            lines,
            values,
            z,
            n,
            fs,
        }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.values.nrows()
    }

    pub fn freq_hz(&self) -> Vec<f64> {
        self.lines
            .iter()
            .map(|&k| k as f64 * self.fs / self.n as f64)
            .collect()
    }

    /// Writes `line,freq_hz,channel,re,im` rows.
    pub fn write_csv(&self, path: impl AsRef<Path>, channel_names: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["line", "freq_hz", "channel", "re", "im"])?;
        let freqs = self.freq_hz();
        for (c, name) in channel_names.iter().enumerate().take(self.channels()) {
            for (j, &k) in self.lines.iter().enumerate() {
                let v = self.values[(c, j)];
                w.write_record([
                    k.to_string(),
                    format!("{}", freqs[j]),
                    name.clone(),
                    format!("{:e}", v.re),
                    format!("{:e}", v.im),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[inline]
pub fn z_of(k: usize, n: usize) -> Complex64 {
    Complex64::from_polar(1.0, TAU * k as f64 / n as f64)
}

/// Planned forward/inverse transform of a fixed length with the crate's
/// `1/N` scaling.
#[derive(Clone)]
pub struct Dft {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Dft {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Full spectrum of one period.
    pub fn forward<I: IntoIterator<Item = f64>>(&self, x: I) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        assert_eq!(buf.len(), self.n, "signal length differs from planned DFT length");
        self.forward.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
        buf
    }

    /// Real part of the inverse transform of a full spectrum.
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        let mut buf = spectrum.to_vec();
        assert_eq!(buf.len(), self.n, "spectrum length differs from planned DFT length");
        self.inverse.process(&mut buf);
        buf.iter().map(|v| v.re).collect()
    }
}

pub fn dft(x: &[f64]) -> Vec<Complex64> {
    Dft::new(x.len()).forward(x.iter().copied())
}

pub fn idft(spectrum: &[Complex64]) -> Vec<f64> {
    Dft::new(spectrum.len()).inverse(spectrum)
}

/// Per-period spectra on `lines`: `result[p]` is `channels × F`.
fn period_spectra(
    data: &DMatrix<f64>,
    n: usize,
    periods: Range<usize>,
    lines: &[usize],
) -> Vec<DMatrix<Complex64>> {
    let plan = Dft::new(n);
    periods
        .map(|p| {
            let mut out = DMatrix::zeros(data.nrows(), lines.len());
            for c in 0..data.nrows() {
                let spec = plan.forward((0..n).map(|t| data[(c, p * n + t)]));
                for (j, &k) in lines.iter().enumerate() {
                    out[(c, j)] = spec[k];
                }
            }
            out
        })
        .collect()
}

/// Period-averaged DFT of `data` (`channels × N·P`) on the given lines.
pub fn dft_periods(
    data: &DMatrix<f64>,
    n: usize,
    fs: f64,
    periods: Range<usize>,
    lines: &[usize],
) -> Result<SpectrumSet> {
    let available = data.ncols() / n;
    if periods.is_empty() || periods.end > available {
        return Err(Error::InvalidArgument(format!(
            "period selection {periods:?} out of range for {available} periods"
        )));
    }
    if let Some(&k) = lines.iter().find(|&&k| k >= n) {
        return Err(Error::InvalidArgument(format!("line {k} out of range for N = {n}")));
    }
    let count = periods.len();
    let specs = period_spectra(data, n, periods, lines);
    let mut mean = DMatrix::zeros(data.nrows(), lines.len());
    for s in &specs {
        mean += s;
    }
    mean /= Complex64::new(count as f64, 0.0);
    Ok(SpectrumSet::from_values(lines.to_vec(), mean, n, fs))
}

impl TimeRecord {
    /// Period-averaged input and output spectra on the given lines.
    pub fn spectra(
        &self,
        periods: Range<usize>,
        lines: &[usize],
    ) -> Result<(SpectrumSet, SpectrumSet)> {
        self.check_periods(&periods)?;
        Ok((
            dft_periods(&self.u, self.n, self.fs, periods.clone(), lines)?,
            dft_periods(&self.y, self.n, self.fs, periods, lines)?,
        ))
    }
}

/// Variance of the period-averaged spectrum, per channel and line.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub lines: Vec<usize>,
    /// `channels × F`, nonnegative.
    pub variance: DMatrix<f64>,
}

/// Sample variance of the per-period DFT values divided by the number of
/// periods, i.e. the variance of their mean.
pub fn noise_variance(
    data: &DMatrix<f64>,
    n: usize,
    periods: Range<usize>,
    lines: &[usize],
) -> Result<NoiseModel> {
    let count = periods.len();
    if count < 2 {
        return Err(Error::InsufficientData(format!(
            "noise variance needs at least 2 periods, got {count}"
        )));
    }
    if periods.end > data.ncols() / n {
        return Err(Error::InvalidArgument(format!(
            "period selection {periods:?} out of range"
        )));
    }
    let specs = period_spectra(data, n, periods, lines);
    let mut mean = DMatrix::<Complex64>::zeros(data.nrows(), lines.len());
    for s in &specs {
        mean += s;
    }
    mean /= Complex64::new(count as f64, 0.0);
    let mut var = DMatrix::<f64>::zeros(data.nrows(), lines.len());
    for s in &specs {
        var += (s - &mean).map(|v| v.norm_sqr());
    }
    var /= (count - 1) as f64 * count as f64;
    Ok(NoiseModel {
        lines: lines.to_vec(),
        variance: var,
    })
}

/// Frequency response per output channel on the excited lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Frf {
    pub lines: Vec<usize>,
    /// `l × F`
    pub values: DMatrix<Complex64>,
    /// Line indices (into `lines`) where `|U(k)|` fell below the threshold;
    /// their values are NaN.
    pub flagged: Vec<usize>,
}

/// `Y(k) / U(k)` for a single-input record.
pub fn estimate_frf(u: &SpectrumSet, y: &SpectrumSet, threshold: f64) -> Result<Frf> {
    if u.channels() != 1 {
        return Err(Error::Dimension(format!(
            "FRF estimation divides by a scalar input spectrum, got {} inputs",
            u.channels()
        )));
    }
    if u.lines != y.lines {
        return Err(Error::Dimension("input and output spectra use different lines".into()));
    }
    let umax = u.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut values = DMatrix::zeros(y.channels(), y.len());
    let mut flagged = Vec::new();
    for j in 0..y.len() {
        let den = u.values[(0, j)];
        if den.norm() <= threshold * umax {
            flagged.push(j);
            for c in 0..y.channels() {
                values[(c, j)] = Complex64::new(f64::NAN, f64::NAN);
            }
            continue;
        }
        for c in 0..y.channels() {
            values[(c, j)] = y.values[(c, j)] / den;
        }
    }
    Ok(Frf {
        lines: y.lines.clone(),
        values,
        flagged,
    })
}

/// One period of a flat-amplitude random-phase multisine.
///
/// Phases are i.i.d. uniform on `[0, 2π)` drawn from a ChaCha stream seeded
/// with `seed`; the result is scaled to the requested RMS.
pub fn generate_multisine(band: &ExcitedBand, n: usize, rms: f64, seed: u64) -> Result<Vec<f64>> {
    let lines = band.lines();
    if lines.is_empty() {
        return Err(Error::InvalidArgument("multisine band has no lines".into()));
    }
    if 2 * band.k_max >= n {
        return Err(Error::InvalidArgument(format!(
            "band reaches line {} but N = {n}",
            band.k_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for &k in &lines {
        let phase: f64 = rng.random_range(0.0..TAU);
        let c = Complex64::from_polar(0.5, phase);
        spec[k] = c;
        spec[n - k] = c.conj();
    }
    let x = idft(&spec);
    let current = crate::linalg::rms(x.iter().copied());
    Ok(x.into_iter().map(|v| v * rms / current).collect())
}
