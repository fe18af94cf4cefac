//! Experiment manifests and the end-to-end pipeline built on them:
//! data synthesis (or ingestion), subspace initialization, LM refinement,
//! physical extraction, linear baselines and degree scans.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fnsi::{fnsi_identify, FnsiOptions, FnsiResult};
use crate::linalg;
use crate::model::{BasisSet, BasisTerm, Derivative, Dimensions, GreyBoxModel, ParameterMask, TermKind};
use crate::optimize::{lm_optimize, validate, CostSetup, LmOptions, LmResult, Validation};
use crate::physical::{physical_report, PhysicalReport, RatioMap, TermCoefficient};
use crate::signals::{generate_multisine, ExcitedBand, TimeRecord};
use crate::simulate::{steady_state_newton, Interpolation, NewtonOptions, NonlinearForce, PhysicalSystem};

/// Periodicity error above which synthesized data is reported as not steady.
const STEADY_THRESHOLD: f64 = 1e-4;

/// Seed offset separating the validation realization from the estimation one.
const VALIDATION_SEED_OFFSET: u64 = 0x5eed_0000;

/// Seed offset of the measurement-noise stream.
const NOISE_SEED_OFFSET: u64 = 0x0015_e000;

/// Polynomial basis on one output channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub channel: usize,
    pub degrees: Vec<u32>,
    #[serde(default)]
    pub derivative: Derivative,
    #[serde(default)]
    pub kind: TermKind,
}

impl BasisSpec {
    pub fn polynomial(channel: usize, degrees: &[u32]) -> Self {
        Self {
            channel,
            degrees: degrees.to_vec(),
            derivative: Derivative::Displacement,
            kind: TermKind::Power,
        }
    }

    pub fn to_basis(&self) -> BasisSet {
        BasisSet::new(
            self.degrees
                .iter()
                .map(|&p| BasisTerm {
                    channel: self.channel,
                    derivative: self.derivative,
                    exponent: p,
                    kind: self.kind,
                })
                .collect(),
        )
    }

    pub fn with_degrees(&self, degrees: &[u32]) -> Self {
        Self {
            degrees: degrees.to_vec(),
            ..self.clone()
        }
    }
}

fn default_oversampling() -> usize {
    20
}

/// Truth system integrated by RK4 and excited by random-phase multisines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSource {
    pub system: PhysicalSystem,
    /// Input RMS per channel.
    pub rms: f64,
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
    #[serde(default)]
    pub interpolation: Interpolation,
    /// Output signal-to-noise ratio; white Gaussian noise is added to every
    /// output channel when set.
    #[serde(default)]
    pub output_snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSource),
    /// TimeRecord CSV with its JSON sidecar.
    File { path: PathBuf },
}

/// Where the validation data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationSplit {
    /// Hold out the last steady period of the record.
    LastPeriod,
    /// A fresh synthetic realization of the same protocol with `periods`
    /// steady periods.
    Realization { periods: usize },
    /// A separate TimeRecord file.
    File { path: PathBuf },
    /// Validate on the estimation data itself.
    Estimation,
}

impl Default for ValidationSplit {
    fn default() -> Self {
        ValidationSplit::Realization { periods: 2 }
    }
}

/// Frequency band in Hz; DC is never excited.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandHz {
    pub lo: f64,
    pub hi: f64,
}

/// Reproducible description of one identification experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub source: DataSource,
    pub fs: f64,
    #[serde(rename = "N")]
    pub n: usize,
    /// Total periods in the record, transient included.
    pub periods: usize,
    /// Leading periods discarded before estimation.
    pub transient: usize,
    pub band: BandHz,
    pub basis: BasisSpec,
    pub n_s: usize,
    #[serde(default)]
    pub block_rows: Option<usize>,
    /// Estimate `F` as well instead of holding it at zero.
    #[serde(default)]
    pub free_f: bool,
    #[serde(default)]
    pub lm: LmOptions,
    #[serde(default)]
    pub skip_lm: bool,
    #[serde(default)]
    pub validation: ValidationSplit,
    #[serde(default)]
    pub ratio_map: Option<RatioMap>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    /// Parses and validates a JSON manifest. Syntax errors carry line and
    /// column.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn excited_band(&self) -> Result<ExcitedBand> {
        ExcitedBand::from_hz(self.band.lo, self.band.hi, self.fs, self.n)
            .map_err(|e| Error::Config(format!("band: {e}")))
    }

    /// Outputs of the synthetic truth, if the source is synthetic.
    fn synthetic_outputs(&self) -> Option<usize> {
        match &self.source {
            DataSource::Synthetic(s) => Some(s.system.output_count()),
            DataSource::File { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return bad(format!("fs must be positive, got {}", self.fs));
        }
        if self.n < 4 {
            return bad(format!("N must be at least 4, got {}", self.n));
        }
        if !(self.band.lo >= 0.0 && self.band.lo < self.band.hi) {
            return bad(format!("band [{}, {}] Hz must satisfy 0 <= lo < hi", self.band.lo, self.band.hi));
        }
        if self.band.hi >= self.fs / 2.0 {
            return bad(format!(
                "band upper edge {} Hz must lie below fs/2 = {} Hz",
                self.band.hi,
                self.fs / 2.0
            ));
        }
        self.excited_band()?;
        if self.periods == 0 || self.transient >= self.periods {
            return bad(format!(
                "transient ({}) must be smaller than periods ({})",
                self.transient, self.periods
            ));
        }
        let steady = self.periods - self.transient;
        if matches!(self.validation, ValidationSplit::LastPeriod) && steady < 2 {
            return bad("last-period validation needs at least 2 steady periods".into());
        }
        if let ValidationSplit::Realization { periods } = self.validation {
            if periods == 0 {
                return bad("validation realization needs at least one period".into());
            }
            if self.synthetic_outputs().is_none() {
                return bad("realization validation requires a synthetic source".into());
            }
        }
        if self.n_s == 0 {
            return bad("n_s must be at least 1".into());
        }
        if let Some(i) = self.block_rows {
            if i == 0 {
                return bad("block_rows must be positive".into());
            }
        }
        if self.basis.degrees.contains(&0) {
            return bad("basis degrees must be positive".into());
        }
        if let DataSource::Synthetic(s) = &self.source {
            s.system.validate().map_err(|e| Error::Config(format!("source.system: {e}")))?;
            if !(s.rms > 0.0 && s.rms.is_finite()) {
                return bad(format!("source.rms must be positive, got {}", s.rms));
            }
            if s.oversampling == 0 {
                return bad("source.oversampling must be positive".into());
            }
            if let Some(snr) = s.output_snr_db {
                if !snr.is_finite() {
                    return bad("source.output_snr_db must be finite".into());
                }
            }
            let l = s.system.output_count();
            if self.basis.channel >= l {
                return bad(format!(
                    "basis channel {} out of range for {l} outputs",
                    self.basis.channel
                ));
            }
            if self.basis.derivative == Derivative::Velocity && !s.system.include_velocities {
                // Velocity terms are computed from the measured displacement,
                // so they never need measured velocities.
                log::debug!("velocity basis on displacement-only outputs");
            }
        }
        Ok(())
    }

    /// Copy with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_degrees(&self, degrees: &[u32]) -> Self {
        Self {
            basis: self.basis.with_degrees(degrees),
            ..self.clone()
        }
    }
}

/// Silverbox-like analogue: Duffing oscillator at 68.58 Hz, 4.68 % damping,
/// quadratic and cubic stiffness, fs 2441 Hz, N 8192, band 0-300 Hz,
/// 30 periods with 5 discarded.
pub fn silverbox_like() -> ExperimentConfig {
    ExperimentConfig {
        name: "silverbox-like".into(),
        source: DataSource::Synthetic(SyntheticSource {
            system: duffing_truth(),
            rms: DUFFING_RMS,
            oversampling: 20,
            interpolation: Interpolation::BandLimited,
            output_snr_db: None,
        }),
        fs: 2441.0,
        n: 8192,
        periods: 30,
        transient: 5,
        band: BandHz { lo: 0.0, hi: 300.0 },
        basis: BasisSpec::polynomial(0, &[2, 3]),
        n_s: 2,
        block_rows: None,
        free_f: false,
        lm: LmOptions::default(),
        skip_lm: false,
        validation: ValidationSplit::default(),
        ratio_map: None,
        output_dir: None,
        seed: 1,
    }
}

/// Input RMS of the Duffing analogue; gives a resonance shift of several Hz.
pub const DUFFING_RMS: f64 = 0.1;

/// Duffing truth `M ÿ + Cv ẏ + y - 0.256 y² + 3.98 y³ = u` at 68.58 Hz and
/// 4.68 % damping.
pub fn duffing_truth() -> PhysicalSystem {
    PhysicalSystem::sdof(68.58, 0.0468, 1.0, &[(2, -0.256), (3, 3.98)])
}

/// Beam-like analogue: seven measured DOFs of a fixed-free chain whose first
/// mode sits at 34.08 Hz with 1.11 % damping, the second well above 100 Hz,
/// and a polynomial spring of degrees 2-5 at the free end. fs 1600 Hz,
/// N 8192, band 20-100 Hz, 10 periods with 2 discarded, last period held out.
pub fn beam_like() -> ExperimentConfig {
    ExperimentConfig {
        name: "beam-like".into(),
        source: DataSource::Synthetic(SyntheticSource {
            system: beam_truth(),
            rms: 0.2,
            oversampling: 20,
            interpolation: Interpolation::ZeroOrderHold,
            output_snr_db: None,
        }),
        fs: 1600.0,
        n: 8192,
        periods: 10,
        transient: 2,
        band: BandHz { lo: 20.0, hi: 100.0 },
        basis: BasisSpec::polynomial(6, &[2, 3, 4, 5]),
        n_s: 2,
        block_rows: None,
        free_f: false,
        lm: LmOptions::default(),
        skip_lm: false,
        validation: ValidationSplit::LastPeriod,
        // Drive at DOF 3, nonlinearity at DOF 7: reciprocity pairing.
        ratio_map: Some(RatioMap {
            row: 2,
            col: 0,
            reference_row: Some(6),
        }),
        output_dir: None,
        seed: 1,
    }
}

/// Seven-DOF fixed-free chain with cantilever frequency ratios above a
/// 34.08 Hz first mode, uniform 1.11 % modal damping and lumped mass 0.02 kg,
/// carrying polynomial stiffness at the free end.
pub fn beam_truth() -> PhysicalSystem {
    let n_p = 7;
    let mass = 0.02;
    // Fixed-free chain eigenvectors, orthonormalized.
    let mut phi = DMatrix::<f64>::zeros(n_p, n_p);
    for k in 0..n_p {
        for j in 0..n_p {
            let arg = (2 * k + 1) as f64 * std::f64::consts::PI * (j + 1) as f64 / (2 * n_p + 1) as f64;
            phi[(j, k)] = arg.sin();
        }
        let norm = phi.column(k).norm();
        phi.column_mut(k).scale_mut(1.0 / norm);
    }
    // Cantilever eigenvalues β_k L; frequencies scale with β².
    let beta = |k: usize| match k {
        0 => 1.875_104,
        1 => 4.694_091,
        2 => 7.854_757,
        _ => (2 * k + 1) as f64 * std::f64::consts::FRAC_PI_2,
    };
    let omega: Vec<f64> = (0..n_p)
        .map(|k| std::f64::consts::TAU * 34.08 * (beta(k) / beta(0)).powi(2))
        .collect();
    let zeta = 0.0111;
    let kd = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n_p, omega.iter().map(|w| w * w)));
    let cd = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n_p, omega.iter().map(|w| 2.0 * zeta * w)));
    let k = &phi * kd * phi.transpose() * mass;
    let c = &phi * cd * phi.transpose() * mass;
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    };
    let mut input_map = vec![vec![0.0]; n_p];
    input_map[2][0] = 1.0;
    PhysicalSystem {
        mass: rows(&(DMatrix::<f64>::identity(n_p, n_p) * mass)),
        damping: rows(&c),
        stiffness: rows(&k),
        nonlinear: [(2, 4.05e4), (3, 1.80e8), (4, -4.46e10), (5, -2.67e13)]
            .iter()
            .map(|&(p, coef)| NonlinearForce {
                coefficient: coef,
                term: BasisTerm::power(n_p - 1, p),
                force_dof: None,
            })
            .collect(),
        input_map,
        outputs: (0..n_p).collect(),
        include_velocities: false,
    }
}

/// Desk-scale configuration: N 512, one mode, runs in well under a second.
pub fn smoke() -> ExperimentConfig {
    ExperimentConfig {
        name: "smoke".into(),
        source: DataSource::Synthetic(SyntheticSource {
            system: PhysicalSystem::sdof(20.0, 0.05, 1.0, &[(3, 2.0)]),
            rms: 0.1,
            oversampling: 20,
            interpolation: Interpolation::BandLimited,
            output_snr_db: None,
        }),
        fs: 512.0,
        n: 512,
        periods: 6,
        transient: 3,
        band: BandHz { lo: 0.0, hi: 60.0 },
        basis: BasisSpec::polynomial(0, &[3]),
        n_s: 2,
        block_rows: None,
        free_f: false,
        lm: LmOptions {
            max_iter: 20,
            ..LmOptions::default()
        },
        skip_lm: false,
        validation: ValidationSplit::Realization { periods: 1 },
        ratio_map: None,
        output_dir: None,
        seed: 7,
    }
}

/// Estimation and validation records of one experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Steady-state estimation periods.
    pub estimation: TimeRecord,
    pub validation: TimeRecord,
    /// Full record including transient periods, as written by `generate`.
    pub full: TimeRecord,
    /// Periodicity error of the synthesized truth (0 for file data).
    pub steadiness: f64,
}

fn multisine_period(band: &ExcitedBand, n: usize, m: usize, rms: f64, seed: u64) -> Result<DMatrix<f64>> {
    let mut u = DMatrix::zeros(m, n);
    for i in 0..m {
        let row = generate_multisine(band, n, rms, seed.wrapping_add(i as u64 * 0x9e37_79b9))?;
        for (t, v) in row.into_iter().enumerate() {
            u[(i, t)] = v;
        }
    }
    Ok(u)
}

/// Adds white Gaussian noise with `rms(y_c) · 10^(-snr/20)` standard
/// deviation to every output channel `c`.
pub fn add_output_noise(record: &mut TimeRecord, snr_db: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in 0..record.l() {
        let level = linalg::rms(record.y.row(c).iter().copied());
        let sigma = level * 10f64.powf(-snr_db / 20.0);
        if sigma == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, sigma).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        for t in 0..record.y.ncols() {
            record.y[(c, t)] += dist.sample(&mut rng);
        }
    }
    Ok(())
}

fn synthesize(
    cfg: &ExperimentConfig,
    src: &SyntheticSource,
    band: &ExcitedBand,
    seed: u64,
    periods: usize,
) -> Result<(TimeRecord, f64)> {
    let m = src.system.inputs();
    let period = multisine_period(band, cfg.n, m, src.rms, seed)?;
    let opts = NewtonOptions {
        oversampling: src.oversampling,
        interpolation: src.interpolation,
        ..NewtonOptions::default()
    };
    // Starts from rest; the caller discards transient periods.
    let ss = steady_state_newton(&src.system, &period, cfg.fs, 0, periods, &opts, STEADY_THRESHOLD)?;
    let mut record = ss.record;
    if let Some(snr) = src.output_snr_db {
        add_output_noise(&mut record, snr, seed.wrapping_add(NOISE_SEED_OFFSET))?;
    }
    Ok((record, ss.steadiness))
}

fn check_record(cfg: &ExperimentConfig, rec: &TimeRecord, what: &str) -> Result<()> {
    if (rec.fs - cfg.fs).abs() > 1e-9 * cfg.fs || rec.n != cfg.n {
        return Err(Error::Config(format!(
            "{what}: record has fs={} N={}, config says fs={} N={}",
            rec.fs, rec.n, cfg.fs, cfg.n
        )));
    }
    Ok(())
}

/// Produces the estimation and validation records of an experiment.
pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    cfg.validate()?;
    let band = cfg.excited_band()?;
    let (full, steadiness) = match &cfg.source {
        DataSource::Synthetic(src) => synthesize(cfg, src, &band, cfg.seed, cfg.periods)?,
        DataSource::File { path } => {
            let rec = TimeRecord::read_csv(path)?;
            check_record(cfg, &rec, &path.display().to_string())?;
            if rec.periods() != cfg.periods {
                return Err(Error::Config(format!(
                    "{} holds {} periods, config says {}",
                    path.display(),
                    rec.periods(),
                    cfg.periods
                )));
            }
            (rec, 0.0)
        }
    };
    let steady = full.steady(cfg.transient)?;
    let (estimation, validation) = match &cfg.validation {
        ValidationSplit::LastPeriod => {
            let p = steady.periods();
            (steady.select_periods(0..p - 1)?, steady.select_periods(p - 1..p)?)
        }
        ValidationSplit::Estimation => (steady.clone(), steady),
        ValidationSplit::Realization { periods } => {
            let DataSource::Synthetic(src) = &cfg.source else {
                return Err(Error::Config("realization validation requires a synthetic source".into()));
            };
            let (val, _) = synthesize(cfg, src, &band, cfg.seed.wrapping_add(VALIDATION_SEED_OFFSET), cfg.transient.max(1) + periods)?;
            (steady, val.steady(cfg.transient.max(1))?)
        }
        ValidationSplit::File { path } => {
            let rec = TimeRecord::read_csv(path)?;
            check_record(cfg, &rec, &path.display().to_string())?;
            (steady, rec)
        }
    };
    Ok(Dataset {
        estimation,
        validation,
        full,
        steadiness,
    })
}

/// Everything produced by one identification run.
#[derive(Debug, Clone)]
pub struct Identification {
    pub mask: ParameterMask,
    pub fnsi: FnsiResult,
    pub fnsi_validation: Validation,
    pub lm: Option<LmResult>,
    /// Refined model, or the subspace model when LM is skipped.
    pub model: GreyBoxModel,
    pub theta: Vec<f64>,
    pub validation: Validation,
    pub report: PhysicalReport,
    pub terms: Vec<TermCoefficient>,
}

/// Subspace initialization, optional LM refinement and physical extraction.
pub fn identify(cfg: &ExperimentConfig, data: &Dataset) -> Result<Identification> {
    identify_with(cfg, data, &cfg.basis.to_basis())
}

/// [`identify`] with an explicit basis, used by degree scans and the linear
/// baseline.
pub fn identify_with(cfg: &ExperimentConfig, data: &Dataset, basis: &BasisSet) -> Result<Identification> {
    let band = cfg.excited_band()?;
    let lines = band.lines();
    let est = &data.estimation;
    basis.validate(est.l())?;
    let dims = Dimensions::new(cfg.n_s, est.m(), est.l(), basis.len())?;
    let mask = if cfg.free_f {
        ParameterMask::all_free(dims)
    } else {
        ParameterMask::default_for(dims)
    };
    let opts = FnsiOptions {
        n_s: cfg.n_s,
        block_rows: cfg.block_rows,
    };
    let fnsi = fnsi_identify(est, basis, &band, &opts, Some(&mask)).map_err(Error::at("fnsi"))?;
    let fnsi_validation = validate(&fnsi.model, &data.validation, &lines).map_err(Error::at("fnsi validation"))?;
    let setup = CostSetup::new(est, &lines, fnsi.model.clone(), mask.clone())?;
    let theta0 = setup.theta(&fnsi.model)?;
    let (lm, model, theta, validation) = if cfg.skip_lm {
        (None, fnsi.model.clone(), theta0, fnsi_validation.clone())
    } else {
        let lm = lm_optimize(&theta0, &setup, Some(&data.validation), &cfg.lm).map_err(Error::at("lm"))?;
        let val = validate(&lm.model, &data.validation, &lines).map_err(Error::at("validation"))?;
        let model = lm.model.clone();
        let theta = lm.theta.clone();
        (Some(lm), model, theta, val)
    };
    let (report, terms) = physical_report(&model, &lines, cfg.n, cfg.ratio_map).map_err(Error::at("extraction"))?;
    Ok(Identification {
        mask,
        fnsi,
        fnsi_validation,
        lm,
        model,
        theta,
        validation,
        report,
        terms,
    })
}

/// Best linear model: subspace fit without nonlinear terms refined by LM on
/// the same output-error cost.
pub fn best_linear(cfg: &ExperimentConfig, data: &Dataset) -> Result<Identification> {
    identify_with(cfg, data, &BasisSet::empty()).map_err(Error::at("best linear model"))
}

/// One row of a degree scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeScanRow {
    pub degrees: Vec<u32>,
    pub parameters: usize,
    pub fnsi_rms: f64,
    pub validation_rms: f64,
}

/// Nested degree sets `{lo}, {lo, lo+1}, ..., {lo..=hi}`.
pub fn nested_degree_sets(lo: u32, hi: u32) -> Vec<Vec<u32>> {
    (lo..=hi).map(|top| (lo..=top).collect()).collect()
}

/// Identifies one model per degree set on the same data.
pub fn degree_scan(cfg: &ExperimentConfig, data: &Dataset, sets: &[Vec<u32>]) -> Result<Vec<DegreeScanRow>> {
    sets.iter()
        .map(|degrees| {
            let basis = cfg.basis.with_degrees(degrees).to_basis();
            let id = identify_with(cfg, data, &basis)?;
            Ok(DegreeScanRow {
                degrees: degrees.clone(),
                parameters: id.theta.len(),
                fnsi_rms: id.fnsi_validation.rms,
                validation_rms: id.validation.rms,
            })
        })
        .collect()
}

/// CSV `degrees,parameters,fnsi_rms,validation_rms` with degrees joined by `+`.
pub fn write_degree_scan(rows: &[DegreeScanRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["degrees", "parameters", "fnsi_rms", "validation_rms"])?;
    for r in rows {
        let d: Vec<String> = r.degrees.iter().map(|p| p.to_string()).collect();
        w.write_record([
            d.join("+"),
            r.parameters.to_string(),
            format!("{:e}", r.fnsi_rms),
            format!("{:e}", r.validation_rms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_consistent() {
        for cfg in [silverbox_like(), beam_like(), smoke()] {
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
        let b = beam_like();
        assert_eq!(b.excited_band().unwrap().k_min, 103);
        let s = silverbox_like();
        assert_eq!(s.excited_band().unwrap().lines().len(), 1006);
    }

    #[test]
    fn beam_truth_modes() {
        let f = beam_truth().undamped_frequencies().unwrap();
        assert!((f[0] - 34.08).abs() < 1e-9 * 34.08, "{f:?}");
        assert!(f[1] > 100.0);
    }

    #[test]
    fn config_errors_are_reported() {
        let mut cfg = smoke();
        cfg.band.hi = cfg.fs / 2.0 + 1.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = smoke();
        cfg.transient = cfg.periods;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = smoke();
        cfg.basis.channel = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let text = smoke().to_json().unwrap().replacen("\"fs\"", "\"fz\"", 1);
        match ExperimentConfig::from_json(&text) {
            Err(Error::Config(msg)) => assert!(msg.starts_with("line "), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn noise_level_matches_snr() {
        let n = 4096;
        let y = DMatrix::from_fn(1, n, |_, t| (t as f64 * 0.1).sin());
        let mut rec = TimeRecord::new(1.0, n, DMatrix::zeros(1, n), y.clone()).unwrap();
        add_output_noise(&mut rec, 20.0, 3).unwrap();
        let noise = linalg::rms((rec.y - y.clone()).iter().copied());
        let level = linalg::rms(y.iter().copied());
        assert!((noise / level - 0.1).abs() < 0.005, "{}", noise / level);
    }

    #[test]
    fn smoke_pipeline_runs() {
        let cfg = smoke();
        let data = generate(&cfg).unwrap();
        assert_eq!(data.full.periods(), cfg.periods);
        assert_eq!(data.estimation.periods(), cfg.periods - cfg.transient);
        let id = identify(&cfg, &data).unwrap();
        assert!(id.validation.rms <= id.fnsi_validation.rms);
        assert_eq!(id.report.modes.len(), 1);
        assert!((id.report.modes[0].freq_hz - 20.0).abs() < 0.5);
        let lin = best_linear(&cfg, &data).unwrap();
        assert!(lin.validation.rms > id.validation.rms);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = smoke();
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.full, b.full);
        assert_eq!(a.validation, b.validation);
        let c = generate(&cfg.with_seed(8)).unwrap();
        assert_ne!(a.full.u, c.full.u);
    }

    #[test]
    fn nested_sets() {
        assert_eq!(nested_degree_sets(2, 4), vec![vec![2], vec![2, 3], vec![2, 3, 4]]);
    }
}
