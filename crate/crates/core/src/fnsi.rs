//! Frequency-domain nonlinear subspace identification.
//!
//! The nonlinear basis functions evaluated on the measured outputs are
//! treated as extra inputs, so the extended system `Y = G_s(z) Ū` is linear
//! and a classical frequency-domain subspace algorithm recovers
//! `(A, B̄, C, D̄)` up to a state similarity.

use std::ops::Range;

use nalgebra::{DMatrix, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PINV_RTOL};
use crate::model::{BasisSet, Dimensions, GreyBoxModel, ParameterMask};
use crate::signals::{mean_period, Dft, ExcitedBand, SpectrumSet, TimeRecord};

/// Default number of block rows, `⌈2(n_s+1)/l⌉ + 2`.
pub fn default_block_rows(n_s: usize, l: usize) -> usize {
    (2 * (n_s + 1)).div_ceil(l) + 2
}

/// Real block matrices: row block `r` holds `X ζ^r`, with real and imaginary
/// parts side by side (`2F` columns).
pub fn build_block_matrices(
    y: &SpectrumSet,
    ubar: &SpectrumSet,
    i: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if y.lines != ubar.lines {
        return Err(Error::Dimension("output and input spectra use different lines".into()));
    }
    if i == 0 {
        return Err(Error::InvalidArgument("block rows must be at least 1".into()));
    }
    let f = y.len();
    let w = ubar.channels();
    if f < w * i {
        return Err(Error::InsufficientData(format!(
            "{f} lines cannot support {i} block rows of {w} extended inputs"
        )));
    }
    Ok((block_real(&y.values, &y.z, i), block_real(&ubar.values, &ubar.z, i)))
}

fn block_real(x: &DMatrix<Complex64>, z: &[Complex64], i: usize) -> DMatrix<f64> {
    let (rows, f) = x.shape();
    let mut out = DMatrix::zeros(rows * i, 2 * f);
    for (k, &zk) in z.iter().enumerate() {
        let mut zr = Complex64::new(1.0, 0.0);
        for r in 0..i {
            for c in 0..rows {
                let v = x[(c, k)] * zr;
                out[(r * rows + c, k)] = v.re;
                out[(r * rows + c, f + k)] = v.im;
            }
            zr *= zk;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Projection {
    pub o: DMatrix<f64>,
    /// Numerical rank of the extended-input block matrix.
    pub input_rank: usize,
}

/// `O = Y_i - Y_i Ū_iᵀ (Ū_i Ū_iᵀ)^† Ū_i`, computed through the right singular
/// vectors of the row-normalized `Ū_i`.
pub fn orthogonal_project(y_i: &DMatrix<f64>, u_i: &DMatrix<f64>) -> Result<Projection> {
    if y_i.ncols() != u_i.ncols() {
        return Err(Error::Dimension(format!(
            "projection of {} columns onto {} columns",
            y_i.ncols(),
            u_i.ncols()
        )));
    }
    let mut scaled = u_i.clone();
    for r in 0..scaled.nrows() {
        let norm = scaled.row(r).norm();
        if norm > 0.0 {
            scaled.row_mut(r).scale_mut(1.0 / norm);
        }
    }
    // Right singular vectors of Ū span its row space.
    let svd = SVD::new(scaled.transpose(), true, false);
    let basis = svd.u.expect("u requested");
    let sv = &svd.singular_values;
    let smax = if sv.is_empty() { 0.0 } else { sv.max() };
    let keep: Vec<usize> = (0..sv.len())
        .filter(|&k| sv[k] > PINV_RTOL * smax && sv[k] > 0.0)
        .collect();
    if keep.len() < u_i.nrows() {
        log::warn!(
            "extended-input block matrix is rank deficient: rank {} of {}",
            keep.len(),
            u_i.nrows()
        );
    }
    let v = basis.select_columns(&keep);
    let o = y_i - (y_i * &v) * v.transpose();
    Ok(Projection {
        o,
        input_rank: keep.len(),
    })
}

/// `Γ_i = L₁ S₁^{1/2}` from the SVD of `O_i`; also returns all singular
/// values. Each column of `L₁` is signed so its largest entry is positive.
pub fn estimate_observability(o: &DMatrix<f64>, n_s: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if o.nrows() == 0 || o.ncols() == 0 {
        return Err(Error::InsufficientData("empty projection".into()));
    }
    let svd = if o.nrows() <= o.ncols() {
        SVD::new(o.clone(), true, false)
    } else {
        SVD::new(o.clone(), true, false)
    };
    let u = svd.u.as_ref().expect("u requested");
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.first().copied().unwrap_or(0.0);
    let rank = sv.iter().filter(|&&s| s > PINV_RTOL * smax && s > 0.0).count();
    if n_s == 0 || n_s > rank {
        return Err(Error::InvalidArgument(format!(
            "model order {n_s} exceeds the numerical rank {rank} of the projection"
        )));
    }
    let mut gamma = DMatrix::zeros(o.nrows(), n_s);
    for k in 0..n_s {
        let col = u.column(k);
        let pivot = col.iamax();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        gamma.set_column(k, &(col * (sign * sv[k].sqrt())));
    }
    Ok((gamma, sv))
}

/// Shift-invariance solve. Returns `(A, C, condition)` where the condition
/// number is that of `Γ` without its last block row.
pub fn estimate_ac(
    gamma: &DMatrix<f64>,
    l: usize,
    n_s: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let rows = gamma.nrows();
    if gamma.ncols() != n_s || rows % l != 0 {
        return Err(Error::Dimension(format!(
            "observability matrix {}x{} does not match l = {l}, n_s = {n_s}",
            rows,
            gamma.ncols()
        )));
    }
    if rows < n_s + l {
        return Err(Error::InsufficientData(format!(
            "{} block rows cannot determine order {n_s}",
            rows / l
        )));
    }
    let upper = gamma.rows(0, rows - l).into_owned();
    let lower = gamma.rows(l, rows - l).into_owned();
    let sv = upper.singular_values();
    let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
    let (pinv, rank) = linalg::pinv(&upper, PINV_RTOL);
    if rank < n_s {
        return Err(Error::Singular(format!(
            "shift equation rank {rank} below order {n_s} (condition {condition:.3e})"
        )));
    }
    let a = pinv * lower;
    let c = gamma.rows(0, l).into_owned();
    Ok((a, c, condition))
}

#[derive(Debug, Clone)]
pub struct BdEstimate {
    pub b_ext: DMatrix<f64>,
    pub d_ext: DMatrix<f64>,
    pub rank: usize,
    pub unknowns: usize,
    pub residual_norm: f64,
    pub condition: f64,
}

/// Linear least squares for `B̄, D̄` in `Y(k) = (C (z_k I - A)^{-1} B̄ + D̄) Ū(k)`.
/// Entries that `mask` marks fixed are held at zero.
pub fn estimate_bd(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    y: &SpectrumSet,
    ubar: &SpectrumSet,
    mask: Option<&ParameterMask>,
) -> Result<BdEstimate> {
    let n_s = a.nrows();
    let l = c.nrows();
    let w = ubar.channels();
    let f = y.len();
    if y.channels() != l || y.lines != ubar.lines {
        return Err(Error::Dimension("spectra do not match the (A, C) estimate".into()));
    }
    let free_b = mask.map_or_else(|| DMatrix::from_element(n_s, w, true), |m| m.b_ext.clone());
    let free_d = mask.map_or_else(|| DMatrix::from_element(l, w, true), |m| m.d_ext.clone());
    if free_b.shape() != (n_s, w) || free_d.shape() != (l, w) {
        return Err(Error::Dimension("parameter mask does not match model size".into()));
    }
    // Column-major unknown ordering: B̄ entries then D̄ entries.
    let mut cols_b = Vec::new();
    for j in 0..w {
        for r in 0..n_s {
            if free_b[(r, j)] {
                cols_b.push((r, j));
            }
        }
    }
    let mut cols_d = Vec::new();
    for j in 0..w {
        for r in 0..l {
            if free_d[(r, j)] {
                cols_d.push((r, j));
            }
        }
    }
    let unknowns = cols_b.len() + cols_d.len();
    let mut reg = DMatrix::zeros(2 * l * f, unknowns);
    let mut rhs = DMatrix::zeros(2 * l * f, 1);
    let ac = linalg::to_complex(a);
    let cc = linalg::to_complex(c);
    for k in 0..f {
        // Columns of C (zI - A)^{-1}.
        let zi = DMatrix::<Complex64>::identity(n_s, n_s) * y.z[k] - &ac;
        let inv = zi.try_inverse().ok_or_else(|| {
            Error::Singular(format!("(zI - A) singular at line {}", y.lines[k]))
        })?;
        let h = &cc * inv;
        for i in 0..l {
            let re = 2 * (k * l + i);
            rhs[(re, 0)] = y.values[(i, k)].re;
            rhs[(re + 1, 0)] = y.values[(i, k)].im;
            for (col, &(r, j)) in cols_b.iter().enumerate() {
                let v = h[(i, r)] * ubar.values[(j, k)];
                reg[(re, col)] = v.re;
                reg[(re + 1, col)] = v.im;
            }
            for (col, &(r, j)) in cols_d.iter().enumerate() {
                if r == i {
                    let v = ubar.values[(j, k)];
                    reg[(re, cols_b.len() + col)] = v.re;
                    reg[(re + 1, cols_b.len() + col)] = v.im;
                }
            }
        }
    }
    let sol = linalg::lstsq(&reg, &rhs, PINV_RTOL)?;
    if sol.rank < unknowns {
        log::warn!("B/D regression rank {} of {unknowns}", sol.rank);
    }
    let residual_norm = (&reg * &sol.x - &rhs).norm();
    let mut b_ext = DMatrix::zeros(n_s, w);
    let mut d_ext = DMatrix::zeros(l, w);
    for (col, &(r, j)) in cols_b.iter().enumerate() {
        b_ext[(r, j)] = sol.x[(col, 0)];
    }
    for (col, &(r, j)) in cols_d.iter().enumerate() {
        d_ext[(r, j)] = sol.x[(cols_b.len() + col, 0)];
    }
    Ok(BdEstimate {
        b_ext,
        d_ext,
        rank: sol.rank,
        unknowns,
        residual_norm,
        condition: sol.condition,
    })
}

/// Derivative of one period by multiplication with `jω` in the DFT domain.
/// The Nyquist line, if any, is dropped.
pub fn spectral_derivative(period: &[f64], fs: f64) -> Vec<f64> {
    let n = period.len();
    let plan = Dft::new(n);
    let mut spec = plan.forward(period.iter().copied());
    let w0 = std::f64::consts::TAU * fs / n as f64;
    for (k, v) in spec.iter_mut().enumerate() {
        let signed = if 2 * k < n {
            k as f64
        } else if 2 * k == n {
            0.0
        } else {
            k as f64 - n as f64
        };
        *v *= Complex64::new(0.0, signed * w0);
    }
    plan.inverse(&spec)
}

/// Period-averaged output spectrum and extended-input spectrum `[U; G]`,
/// where `G` is the DFT of the basis functions evaluated on the averaged
/// output period.
pub fn extended_spectra(
    record: &TimeRecord,
    basis: &BasisSet,
    periods: Range<usize>,
    lines: &[usize],
) -> Result<(SpectrumSet, SpectrumSet)> {
    basis.validate(record.l())?;
    let part = record.select_periods(periods)?;
    let n = part.n;
    let u = mean_period(&part.u, n);
    let y = mean_period(&part.y, n);
    let m = u.nrows();
    let l = y.nrows();
    let s = basis.len();
    let ydot = if basis.uses_velocity() {
        let mut d = DMatrix::zeros(l, n);
        for ch in basis.nl_channels() {
            let row: Vec<f64> = y.row(ch).iter().copied().collect();
            for (t, v) in spectral_derivative(&row, part.fs).into_iter().enumerate() {
                d[(ch, t)] = v;
            }
        }
        d
    } else {
        DMatrix::zeros(l, n)
    };
    let mut ubar = DMatrix::zeros(m + s, n);
    ubar.rows_mut(0, m).copy_from(&u);
    let mut ybuf = vec![0.0; l];
    let mut dbuf = vec![0.0; l];
    let mut g = vec![0.0; s];
    for t in 0..n {
        for i in 0..l {
            ybuf[i] = y[(i, t)];
            dbuf[i] = ydot[(i, t)];
        }
        basis.eval_into(&ybuf, &dbuf, &mut g);
        for a in 0..s {
            ubar[(m + a, t)] = g[a];
        }
    }
    let plan = Dft::new(n);
    let pick = |data: &DMatrix<f64>| -> SpectrumSet {
        let mut vals = DMatrix::zeros(data.nrows(), lines.len());
        for c in 0..data.nrows() {
            let spec = plan.forward(data.row(c).iter().copied());
            for (j, &k) in lines.iter().enumerate() {
                vals[(c, j)] = spec[k];
            }
        }
        SpectrumSet::from_values(lines.to_vec(), vals, n, part.fs)
    };
    Ok((pick(&y), pick(&ubar)))
}

/// `Σ_j G_s(z_k)[:, j] Ū_j(k)` on every line: the model's output spectrum
/// for a given extended-input spectrum.
pub fn model_output_spectrum(model: &GreyBoxModel, ubar: &SpectrumSet) -> Result<DMatrix<Complex64>> {
    let l = model.dims.l;
    let mut out = DMatrix::zeros(l, ubar.len());
    for (k, &z) in ubar.z.iter().enumerate() {
        let g = model.transfer(z)?;
        let col = g * ubar.values.column(k);
        out.set_column(k, &col);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnsiOptions {
    pub n_s: usize,
    /// Block rows; `None` selects the default.
    pub block_rows: Option<usize>,
}

/// Diagnostics for order selection and conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnsiDiagnostics {
    pub block_rows: usize,
    pub n_s: usize,
    pub lines: usize,
    pub singular_values: Vec<f64>,
    /// `σ_{n_s} / σ_{n_s+1}`, infinite when there is no next value.
    pub order_gap: f64,
    pub input_rank: usize,
    pub shift_condition: f64,
    pub bd_rank: usize,
    pub bd_unknowns: usize,
    pub bd_condition: f64,
    pub bd_residual_norm: f64,
    pub spectral_radius: f64,
}

#[derive(Debug, Clone)]
pub struct FnsiResult {
    pub model: GreyBoxModel,
    pub diagnostics: FnsiDiagnostics,
}

/// Full subspace pipeline on a steady-state record.
pub fn fnsi_identify(
    record: &TimeRecord,
    basis: &BasisSet,
    band: &ExcitedBand,
    opts: &FnsiOptions,
    mask: Option<&ParameterMask>,
) -> Result<FnsiResult> {
    let dims = Dimensions::new(opts.n_s, record.m(), record.l(), basis.len())?;
    let i = opts.block_rows.unwrap_or_else(|| default_block_rows(opts.n_s, dims.l));
    if i * dims.l < opts.n_s + dims.l {
        return Err(Error::InvalidArgument(format!(
            "{i} block rows too few for order {} with {} outputs",
            opts.n_s, dims.l
        )));
    }
    let lines = band.lines();
    let (y, ubar) = extended_spectra(record, basis, 0..record.periods(), &lines)?;
    let (y_i, u_i) = build_block_matrices(&y, &ubar, i)?;
    let proj = orthogonal_project(&y_i, &u_i)?;
    let (gamma, sv) = estimate_observability(&proj.o, opts.n_s)?;
    let (a, c, shift_condition) = estimate_ac(&gamma, dims.l, opts.n_s)?;
    let bd = estimate_bd(&a, &c, &y, &ubar, mask)?;
    let model = GreyBoxModel::new(a, bd.b_ext.clone(), c, bd.d_ext.clone(), 1.0 / record.fs, basis.clone(), dims.m)?;
    let radius = linalg::spectral_radius(&model.a);
    if radius >= 1.0 {
        log::warn!("subspace estimate is unstable: spectral radius {radius:.6}");
    }
    let order_gap = match sv.get(opts.n_s) {
        Some(&next) if next > 0.0 => sv[opts.n_s - 1] / next,
        _ => f64::INFINITY,
    };
    Ok(FnsiResult {
        model,
        diagnostics: FnsiDiagnostics {
            block_rows: i,
            n_s: opts.n_s,
            lines: lines.len(),
            singular_values: sv,
            order_gap,
            input_rank: proj.input_rank,
            shift_condition,
            bd_rank: bd.rank,
            bd_unknowns: bd.unknowns,
            bd_condition: bd.condition,
            bd_residual_norm: bd.residual_norm,
            spectral_radius: radius,
        },
    })
}
