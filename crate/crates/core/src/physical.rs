//! Physical interpretation of identified models: continuous-time
//! conversion, modal parameters, nonlinear coefficients and restoring-force
//! curves.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BasisSet, Derivative, GreyBoxModel};

/// Continuous-time counterpart of a discrete model under zero-order hold.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    /// `[B_c E_c]`.
    pub b_ext: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d_ext: DMatrix<f64>,
    pub ts: f64,
    /// `‖exp(A_c Ts) - A‖ / ‖A‖`.
    pub roundtrip_error: f64,
}

impl ContinuousModel {
    /// `G(jω) = C (jωI - A_c)^{-1} B̄_c + D̄`.
    pub fn transfer(&self, omega: f64) -> Result<DMatrix<Complex64>> {
        let x = linalg::shifted_solve(&self.a, Complex64::new(0.0, omega), &linalg::to_complex(&self.b_ext))
            .ok_or_else(|| Error::Singular(format!("(jωI - A_c) at ω = {omega}")))?;
        Ok(linalg::to_complex(&self.c) * x + linalg::to_complex(&self.d_ext))
    }
}

/// `A_c = log(A)/Ts`, `B̄_c = A_c (A - I)^{-1} B̄`; when `A - I` is singular
/// the equivalent `B̄_c = (∫₀^Ts e^{A_c τ} dτ)^{-1} B̄` is used.
pub fn to_continuous(model: &GreyBoxModel) -> Result<ContinuousModel> {
    let ts = model.ts;
    if !(ts > 0.0) {
        return Err(Error::InvalidArgument("sampling period must be positive".into()));
    }
    let n = model.dims.n_s;
    let a_c = linalg::logm(&model.a)? / ts;
    let id = DMatrix::<f64>::identity(n, n);
    let shifted = &model.a - &id;
    let b_c = match shifted.clone().lu().solve(&model.b_ext) {
        Some(x) if x.iter().all(|v| v.is_finite()) && shifted.clone().singular_values().min() > 1e-12 => &a_c * x,
        _ => {
            let phi = linalg::exp_integral(&a_c, ts);
            phi.lu()
                .solve(&model.b_ext)
                .ok_or_else(|| Error::Singular("zero-order-hold input integral".into()))?
        }
    };
    let back = linalg::expm(&(&a_c * ts));
    let roundtrip_error = (back - &model.a).norm() / model.a.norm().max(f64::MIN_POSITIVE);
    Ok(ContinuousModel {
        a: a_c,
        b_ext: b_c,
        c: model.c.clone(),
        d_ext: model.d_ext.clone(),
        ts,
        roundtrip_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub freq_hz: f64,
    /// Fraction of critical damping.
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalParameters {
    /// Oscillatory modes sorted by frequency, one per conjugate pair.
    pub modes: Vec<Mode>,
    /// Real eigenvalues (rad/s), reported separately as overdamped.
    pub real_poles: Vec<f64>,
}

/// `f_n = |λ|/2π`, `ζ = -Re λ / |λ|` per conjugate pair of `A_c`.
pub fn modal_parameters(a_c: &DMatrix<f64>) -> ModalParameters {
    let eig = linalg::eigenvalues(a_c);
    let scale = eig.iter().map(|l| l.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut modes = Vec::new();
    let mut real_poles = Vec::new();
    for l in eig {
        if l.im.abs() <= 1e-10 * scale {
            real_poles.push(l.re);
        } else if l.im > 0.0 {
            let w = l.norm();
            modes.push(Mode {
                freq_hz: w / std::f64::consts::TAU,
                damping: -l.re / w,
            });
        }
    }
    modes.sort_by(|a, b| a.freq_hz.total_cmp(&b.freq_hz));
    real_poles.sort_by(|a, b| a.total_cmp(b));
    ModalParameters { modes, real_poles }
}

/// Transfer-matrix entries used for the coefficient ratios
/// `c_a = -G[row, m+a] / G[reference_row, col]`.
///
/// With the drive and the nonlinearity at different DOFs, a single row
/// carries the factor `H[r, nl] / H[r, in]`. Taking `row` at the driven DOF
/// and `reference_row` at the nonlinearity cancels it by reciprocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioMap {
    pub row: usize,
    pub col: usize,
    /// Row of the denominator; `row` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_row: Option<usize>,
}

impl RatioMap {
    /// Row of the first nonlinear channel, first input column.
    pub fn default_for(basis: &BasisSet) -> Self {
        Self {
            row: basis.nl_channels().first().copied().unwrap_or(0),
            col: 0,
            reference_row: None,
        }
    }

    pub fn denominator_row(&self) -> usize {
        self.reference_row.unwrap_or(self.row)
    }
}

/// Frequency-dependent estimate of one nonlinear coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct TermCoefficient {
    pub label: String,
    pub freq_hz: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Lines kept in the summary statistics.
    pub included: Vec<bool>,
    pub summary: CoefficientSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub label: String,
    /// Arithmetic mean of the real part over the included lines.
    pub average: f64,
    pub min: f64,
    pub max: f64,
    /// Largest `|Im c(k)| / |Re c(k)|` over the included lines.
    pub im_re_ratio: f64,
    pub excluded_lines: usize,
}

impl CoefficientSummary {
    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

fn term_label(a: usize) -> String {
    format!("c{}", a + 1)
}

/// `c_a(k) = -G[row, m+a](jω_k) / G[reference_row, col](jω_k)` on the given
/// lines.
pub fn nonlinear_coefficients(
    model: &GreyBoxModel,
    cont: &ContinuousModel,
    lines: &[usize],
    n: usize,
    map: RatioMap,
) -> Result<Vec<TermCoefficient>> {
    let d = model.dims;
    if map.row >= d.l || map.denominator_row() >= d.l || map.col >= d.m {
        return Err(Error::InvalidArgument(format!(
            "ratio map rows ({}, {}), column {} outside a {}x{} transfer matrix",
            map.row,
            map.denominator_row(),
            map.col,
            d.l,
            d.m
        )));
    }
    if d.s == 0 {
        return Ok(Vec::new());
    }
    let fs = 1.0 / model.ts;
    let freqs: Vec<f64> = lines.iter().map(|&k| k as f64 * fs / n as f64).collect();
    let mut den = Vec::with_capacity(lines.len());
    let mut num = Vec::with_capacity(lines.len());
    for &f in &freqs {
        let g = cont.transfer(std::f64::consts::TAU * f)?;
        den.push(g[(map.denominator_row(), map.col)]);
        num.push((0..d.s).map(|a| g[(map.row, d.m + a)]).collect::<Vec<_>>());
    }
    let dmax = den.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let included: Vec<bool> = den.iter().map(|v| v.norm() >= 1e-8 * dmax && v.norm() > 0.0).collect();
    let excluded = included.iter().filter(|&&k| !k).count();
    if excluded > 0 {
        log::warn!("{excluded} lines excluded from coefficient averaging (vanishing reference FRF)");
    }
    Ok((0..d.s)
        .map(|a| {
            let values: Vec<Complex64> = num
                .iter()
                .zip(&den)
                .map(|(nk, dk)| -nk[a] / dk)
                .collect();
            let kept: Vec<Complex64> = values
                .iter()
                .zip(&included)
                .filter(|(_, &inc)| inc)
                .map(|(v, _)| *v)
                .collect();
            let count = kept.len().max(1) as f64;
            let average = kept.iter().map(|v| v.re).sum::<f64>() / count;
            let min = kept.iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
            let max = kept.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
            let im_re_ratio = kept
                .iter()
                .map(|v| v.im.abs() / v.re.abs())
                .fold(0.0, f64::max);
            let label = term_label(a);
            TermCoefficient {
                label: label.clone(),
                freq_hz: freqs.clone(),
                values,
                included: included.clone(),
                summary: CoefficientSummary {
                    label,
                    average,
                    min,
                    max,
                    im_re_ratio,
                    excluded_lines: excluded,
                },
            }
        })
        .collect())
}

/// `f(y) = Σ c_a g_a(y)` on a displacement grid. Every term must read the
/// displacement of one common channel.
pub fn restoring_force_curve(coefficients: &[f64], basis: &BasisSet, grid: &[f64]) -> Result<Vec<f64>> {
    if coefficients.len() != basis.len() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} basis terms",
            coefficients.len(),
            basis.len()
        )));
    }
    if basis.terms.iter().any(|t| t.derivative != Derivative::Displacement) {
        return Err(Error::InvalidArgument("restoring-force curves need displacement terms only".into()));
    }
    if basis.nl_channels().len() > 1 {
        return Err(Error::InvalidArgument("restoring-force curves need a single channel".into()));
    }
    Ok(grid
        .iter()
        .map(|&y| {
            basis
                .terms
                .iter()
                .zip(coefficients)
                .map(|(t, c)| c * t.value(y))
                .sum()
        })
        .collect())
}

/// Serializable summary of the physical interpretation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalReport {
    pub modes: Vec<Mode>,
    pub real_poles: Vec<f64>,
    pub coefficients: Vec<CoefficientSummary>,
    pub ratio_map: RatioMap,
    pub roundtrip_error: f64,
}

impl PhysicalReport {
    pub fn coefficient(&self, label: &str) -> Option<&CoefficientSummary> {
        self.coefficients.iter().find(|c| c.label == label)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Full extraction: continuous conversion, modes and coefficients.
pub fn physical_report(
    model: &GreyBoxModel,
    lines: &[usize],
    n: usize,
    map: Option<RatioMap>,
) -> Result<(PhysicalReport, Vec<TermCoefficient>)> {
    let cont = to_continuous(model)?;
    let modal = modal_parameters(&cont.a);
    let map = map.unwrap_or_else(|| RatioMap::default_for(&model.basis));
    let terms = nonlinear_coefficients(model, &cont, lines, n, map)?;
    Ok((
        PhysicalReport {
            modes: modal.modes,
            real_poles: modal.real_poles,
            coefficients: terms.iter().map(|t| t.summary.clone()).collect(),
            ratio_map: map,
            roundtrip_error: cont.roundtrip_error,
        },
        terms,
    ))
}

/// CSV `freq_hz,term,re,im`.
pub fn write_coefficient_spectra(terms: &[TermCoefficient], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["freq_hz", "term", "re", "im"])?;
    for t in terms {
        for (f, v) in t.freq_hz.iter().zip(&t.values) {
            w.write_record([f.to_string(), t.label.clone(), v.re.to_string(), v.im.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// CSV `y,f`.
pub fn write_force_curve(grid: &[f64], force: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["y", "f"])?;
    for (y, f) in grid.iter().zip(force) {
        w.write_record([y.to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BasisTerm;
    use approx::assert_relative_eq;
    use std::f64::consts::TAU;

    fn discrete_from(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, ts: f64, basis: BasisSet) -> GreyBoxModel {
        let a = linalg::expm(&(a_c * ts));
        let b = linalg::exp_integral(a_c, ts) * b_c;
        let n = a.nrows();
        let w = b.ncols();
        let mut c = DMatrix::zeros(1, n);
        c[(0, 0)] = 1.0;
        GreyBoxModel::new(a, b, c, DMatrix::zeros(1, w), ts, basis, 1).unwrap()
    }

    #[test]
    fn recovers_continuous_oscillator() {
        let w = TAU * 10.0;
        let a_c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, -2.0 * 0.01 * w]);
        let b_c = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let model = discrete_from(&a_c, &b_c, 1e-3, BasisSet::empty());
        let cont = to_continuous(&model).unwrap();
        assert!((&cont.a - &a_c).amax() < 1e-9 * a_c.amax());
        assert!((&cont.b_ext - &b_c).amax() < 1e-9);
        assert!(cont.roundtrip_error < 1e-10);
    }

    #[test]
    fn identity_and_scalar_logarithms() {
        let id = GreyBoxModel::new(
            DMatrix::identity(2, 2),
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::from_element(1, 2, 1.0),
            DMatrix::zeros(1, 1),
            0.1,
            BasisSet::empty(),
            1,
        )
        .unwrap();
        let cont = to_continuous(&id).unwrap();
        assert!(cont.a.amax() < 1e-14);
        // A - I singular: the integral form gives B_c = B / Ts.
        assert!((cont.b_ext.amax() - 10.0).abs() < 1e-10);

        let ts: f64 = 0.01;
        let scalar = GreyBoxModel::new(
            DMatrix::from_element(1, 1, (-ts as f64).exp()),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            ts,
            BasisSet::empty(),
            1,
        )
        .unwrap();
        assert_relative_eq!(to_continuous(&scalar).unwrap().a[(0, 0)], -1.0, max_relative = 1e-12);
    }

    #[test]
    fn negative_real_eigenvalue_is_reported() {
        let m = GreyBoxModel::new(
            DMatrix::from_element(1, 1, -0.5),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            0.01,
            BasisSet::empty(),
            1,
        )
        .unwrap();
        assert!(matches!(to_continuous(&m), Err(Error::LogUndefined { .. })));
    }

    #[test]
    fn modal_values_from_constructed_poles() {
        let wn = TAU * 68.58;
        let zeta = 0.0468;
        let a_c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -wn * wn, -2.0 * zeta * wn]);
        let modal = modal_parameters(&a_c);
        assert_eq!(modal.modes.len(), 1);
        assert_relative_eq!(modal.modes[0].freq_hz, 68.58, max_relative = 1e-12);
        assert_relative_eq!(modal.modes[0].damping, 0.0468, max_relative = 1e-10);

        let undamped = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, 0.0]);
        assert!(modal_parameters(&undamped).modes[0].damping.abs() < 1e-15);

        let over = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -3.0]);
        let m = modal_parameters(&over);
        assert!(m.modes.is_empty());
        assert_eq!(m.real_poles, vec![-3.0, -1.0]);
    }

    #[test]
    fn two_dof_modes_match_generalized_eigenvalues() {
        let mass = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let k = DMatrix::from_row_slice(2, 2, &[3e4, -1e4, -1e4, 1e4]);
        let cv = &k * 1e-5;
        let mi = mass.clone().try_inverse().unwrap();
        let mut a_c = DMatrix::zeros(4, 4);
        a_c.view_mut((0, 2), (2, 2)).copy_from(&DMatrix::identity(2, 2));
        a_c.view_mut((2, 0), (2, 2)).copy_from(&(-&mi * &k));
        a_c.view_mut((2, 2), (2, 2)).copy_from(&(-&mi * &cv));
        let b_c = DMatrix::from_row_slice(4, 1, &[0.0, 0.0, 0.5, 0.0]);
        let model = discrete_from(&a_c, &b_c, 1.0 / 1000.0, BasisSet::empty());
        let modal = modal_parameters(&to_continuous(&model).unwrap().a);
        let mut oracle: Vec<f64> = linalg::eigenvalues(&(mi * k))
            .iter()
            .map(|l| l.re.sqrt() / TAU)
            .collect();
        oracle.sort_by(|a, b| a.total_cmp(b));
        assert_eq!(modal.modes.len(), 2);
        for (m, o) in modal.modes.iter().zip(&oracle) {
            assert_relative_eq!(m.freq_hz, *o, max_relative = 1e-3);
        }
    }

    #[test]
    fn coefficients_recovered_from_exact_feedback_model() {
        // Continuous Duffing with force -c2 y^3 entering like the input.
        let wn = TAU * 20.0;
        let mass = 1.0 / (wn * wn);
        let a_c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -wn * wn, -2.0 * 0.05 * wn]);
        let c2 = 3.0;
        let b_c = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0 / mass, -c2 / mass]);
        let model = discrete_from(&a_c, &b_c, 1e-3, BasisSet::polynomial(0, &[3]));
        let cont = to_continuous(&model).unwrap();
        let lines: Vec<usize> = (1..50).collect();
        let terms = nonlinear_coefficients(&model, &cont, &lines, 1000, RatioMap::default_for(&BasisSet::empty())).unwrap();
        assert_eq!(terms.len(), 1);
        assert_relative_eq!(terms[0].summary.average, c2, max_relative = 1e-8);
        assert!(terms[0].summary.im_re_ratio < 1e-8);
        assert_eq!(terms[0].label, "c1");

        let linear = discrete_from(&a_c, &b_c.columns(0, 1).into_owned(), 1e-3, BasisSet::empty());
        let lc = to_continuous(&linear).unwrap();
        assert!(nonlinear_coefficients(&linear, &lc, &lines, 1000, RatioMap::default_for(&BasisSet::empty())).unwrap().is_empty());
    }

    #[test]
    fn reciprocity_map_removes_location_factor() {
        // Two-mass chain driven at DOF 0 with a cubic spring at DOF 1; both
        // displacements measured.
        let (m1, m2, k1, k2, k3) = (1.0, 0.5, 4.0e4, 2.0e4, 3.0e4);
        let mass = DMatrix::from_row_slice(2, 2, &[m1, 0.0, 0.0, m2]);
        let stiff = DMatrix::from_row_slice(2, 2, &[k1 + k2, -k2, -k2, k2 + k3]);
        let damp = &stiff * 1e-4;
        let minv = mass.try_inverse().unwrap();
        let mut a_c = DMatrix::zeros(4, 4);
        a_c.view_mut((0, 2), (2, 2)).fill_with_identity();
        a_c.view_mut((2, 0), (2, 2)).copy_from(&(-&minv * &stiff));
        a_c.view_mut((2, 2), (2, 2)).copy_from(&(-&minv * &damp));
        let c3 = 5.0e6;
        let mut b_c = DMatrix::zeros(4, 2);
        b_c[(2, 0)] = minv[(0, 0)];
        b_c[(3, 1)] = -c3 * minv[(1, 1)];
        let ts = 1e-3;
        let a = linalg::expm(&(&a_c * ts));
        let b = linalg::exp_integral(&a_c, ts) * &b_c;
        let c = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let model = GreyBoxModel::new(a, b, c, DMatrix::zeros(2, 2), ts, BasisSet::polynomial(1, &[3]), 1).unwrap();
        let cont = to_continuous(&model).unwrap();
        let lines: Vec<usize> = (1..60).collect();

        let recip = RatioMap {
            row: 0,
            col: 0,
            reference_row: Some(1),
        };
        let t = nonlinear_coefficients(&model, &cont, &lines, 1000, recip).unwrap();
        assert_relative_eq!(t[0].summary.average, c3, max_relative = 1e-7);
        assert!(t[0].summary.im_re_ratio < 1e-7);

        // Same-row ratio scales by H[1,1]/H[1,0], which is not 1 here.
        let same = nonlinear_coefficients(&model, &cont, &lines, 1000, RatioMap::default_for(&model.basis)).unwrap();
        assert!((same[0].summary.average - c3).abs() > 0.1 * c3);
    }

    #[test]
    fn cubic_curve_is_odd() {
        let basis = BasisSet::polynomial(0, &[3]);
        let f = restoring_force_curve(&[1.0], &basis, &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(f, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn quadratic_term_breaks_symmetry() {
        let basis = BasisSet::polynomial(0, &[2, 3]);
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        let neg: Vec<f64> = grid.iter().map(|y| -y).collect();
        let fp = restoring_force_curve(&[-0.256, 3.98], &basis, &grid).unwrap();
        let fm = restoring_force_curve(&[-0.256, 3.98], &basis, &neg).unwrap();
        for ((y, a), b) in grid.iter().zip(&fp).zip(&fm) {
            assert_relative_eq!(a + b, 2.0 * -0.256 * y * y, epsilon = 1e-14);
        }
    }

    #[test]
    fn beam_coefficients_soften_positive_branch() {
        let basis = BasisSet::polynomial(0, &[2, 3, 4, 5]);
        let c = [4.05e4, 1.80e8, -4.46e10, -2.67e13];
        let grid = [1e-3, 1.5e-3, 2e-3];
        let f = restoring_force_curve(&c, &basis, &grid).unwrap();
        for (y, fy) in grid.iter().zip(&f) {
            assert!(*fy < c[1] * y.powi(3));
        }
    }

    #[test]
    fn mixed_bases_rejected() {
        let basis = BasisSet::new(vec![BasisTerm::power(0, 3), BasisTerm::velocity_power(0, 2)]);
        assert!(restoring_force_curve(&[1.0, 1.0], &basis, &[0.0]).is_err());
        let two = BasisSet::new(vec![BasisTerm::power(0, 3), BasisTerm::power(1, 3)]);
        assert!(restoring_force_curve(&[1.0, 1.0], &two, &[0.0]).is_err());
    }

    #[test]
    fn modes_invariant_under_similarity() {
        let w = TAU * 10.0;
        let a_c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, -2.0 * 0.02 * w]);
        let b_c = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, -0.5]);
        let model = discrete_from(&a_c, &b_c, 1e-3, BasisSet::polynomial(0, &[3]));
        let t = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, -0.1, 0.7]);
        let other = model.similarity(&t).unwrap();
        let lines: Vec<usize> = (1..30).collect();
        let (r1, _) = physical_report(&model, &lines, 1000, None).unwrap();
        let (r2, _) = physical_report(&other, &lines, 1000, None).unwrap();
        assert_relative_eq!(r1.modes[0].freq_hz, r2.modes[0].freq_hz, max_relative = 1e-8);
        assert_relative_eq!(r1.modes[0].damping, r2.modes[0].damping, max_relative = 1e-8);
        assert_relative_eq!(r1.coefficients[0].average, r2.coefficients[0].average, max_relative = 1e-8);
    }
}
