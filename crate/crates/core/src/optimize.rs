//! Frequency-domain weighted least-squares refinement by Levenberg-Marquardt
//! with exact discrete-time sensitivities.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen, SVD};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{pack_parameters, unpack_parameters, Block, Derivative, Entry, GreyBoxModel, ParameterMask};
use crate::signals::{mean_period, Dft, SpectrumSet, TimeRecord};
use crate::simulate::{simulate_discrete, tile_period, SimOptions, SimulationOutput};

/// Leading periods simulated and discarded before the compared period.
pub const WARMUP_PERIODS: usize = 3;

/// Everything the cost function needs: the periodic estimation input, the
/// measured output spectrum on the processed lines, per-line weights and
/// the free-parameter pattern.
#[derive(Clone)]
pub struct CostSetup {
    pub template: GreyBoxModel,
    pub mask: ParameterMask,
    /// One period of the (period-averaged) input, `m × N`.
    pub u_period: DMatrix<f64>,
    /// Measured output spectrum on the processed lines.
    pub y: SpectrumSet,
    /// Hermitian square roots of `W(k)`; `None` means identity.
    weight_roots: Option<Vec<DMatrix<Complex64>>>,
    pub warmup: usize,
    dft: Dft,
}

impl std::fmt::Debug for CostSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CostSetup")
            .field("lines", &self.y.lines.len())
            .field("n", &self.y.n)
            .field("free", &self.mask.free_count())
            .field("weighted", &self.weight_roots.is_some())
            .finish()
    }
}

fn hermitian_root(w: &DMatrix<Complex64>) -> Result<DMatrix<Complex64>> {
    let herm = (w - w.adjoint()).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let scale = w.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if herm > 1e-12 * scale.max(1.0) {
        return Err(Error::InvalidArgument("weighting matrix is not Hermitian".into()));
    }
    let eig = SymmetricEigen::new(w.clone());
    if eig.eigenvalues.iter().any(|&v| v < -1e-12 * scale.max(1.0)) {
        return Err(Error::InvalidArgument("weighting matrix is not positive semidefinite".into()));
    }
    let roots = eig.eigenvalues.map(|v| Complex64::new(v.max(0.0).sqrt(), 0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint())
}

impl CostSetup {
    /// Builds the setup from a steady-state estimation record; input and
    /// output are averaged over its periods.
    pub fn new(record: &TimeRecord, lines: &[usize], template: GreyBoxModel, mask: ParameterMask) -> Result<Self> {
        if record.m() != template.dims.m || record.l() != template.dims.l {
            return Err(Error::Dimension(format!(
                "record has {} inputs / {} outputs, model {} / {}",
                record.m(),
                record.l(),
                template.dims.m,
                template.dims.l
            )));
        }
        if lines.is_empty() || lines.iter().any(|&k| k == 0 || 2 * k >= record.n) {
            return Err(Error::InvalidArgument("processed lines must lie in 1..N/2".into()));
        }
        // Validates mask shape against the template.
        pack_parameters(&template, &mask)?;
        let n = record.n;
        let dft = Dft::new(n);
        let y_mean = mean_period(&record.y, n);
        let mut vals = DMatrix::zeros(record.l(), lines.len());
        for c in 0..record.l() {
            let spec = dft.forward(y_mean.row(c).iter().copied());
            for (j, &k) in lines.iter().enumerate() {
                vals[(c, j)] = spec[k];
            }
        }
        Ok(Self {
            template,
            mask,
            u_period: mean_period(&record.u, n),
            y: SpectrumSet::from_values(lines.to_vec(), vals, n, record.fs),
            weight_roots: None,
            warmup: WARMUP_PERIODS,
            dft,
        })
    }

    /// Per-line weighting `W(k)`, each `l × l` Hermitian PSD.
    pub fn with_weights(mut self, weights: &[DMatrix<Complex64>]) -> Result<Self> {
        let l = self.template.dims.l;
        if weights.len() != self.y.len() || weights.iter().any(|w| w.shape() != (l, l)) {
            return Err(Error::Dimension(format!("expected {} weights of size {l}x{l}", self.y.len())));
        }
        self.weight_roots = Some(weights.iter().map(hermitian_root).collect::<Result<_>>()?);
        Ok(self)
    }

    pub fn n_params(&self) -> usize {
        self.mask.free_count()
    }

    pub fn model(&self, theta: &[f64]) -> Result<GreyBoxModel> {
        unpack_parameters(theta, &self.mask, &self.template)
    }

    pub fn theta(&self, model: &GreyBoxModel) -> Result<Vec<f64>> {
        pack_parameters(model, &self.mask)
    }

    /// Simulates `warmup + 1` periods from the zero state.
    pub fn simulate(&self, model: &GreyBoxModel) -> Result<SimulationOutput> {
        let u = tile_period(&self.u_period, self.warmup + 1);
        let out = simulate_discrete(model, &u, &vec![0.0; model.dims.n_s], &SimOptions::default())?;
        if let Some(index) = out.diverged {
            return Err(Error::Diverged { index });
        }
        Ok(out)
    }

    fn last_period_spectrum(&self, data: &DMatrix<f64>) -> DMatrix<Complex64> {
        let n = self.y.n;
        let start = data.ncols() - n;
        let mut out = DMatrix::zeros(data.nrows(), self.y.len());
        for c in 0..data.nrows() {
            let spec = self.dft.forward((0..n).map(|t| data[(c, start + t)]));
            for (j, &k) in self.y.lines.iter().enumerate() {
                out[(c, j)] = spec[k];
            }
        }
        out
    }

    fn weigh(&self, k: usize, v: DMatrix<Complex64>) -> DMatrix<Complex64> {
        match &self.weight_roots {
            None => v,
            Some(roots) => &roots[k] * v,
        }
    }
}

/// `ε(k) = Y_m(k, θ) - Y(k)` on the processed lines, `l × F`.
pub fn residual_spectrum(theta: &[f64], setup: &CostSetup) -> Result<DMatrix<Complex64>> {
    let model = setup.model(theta)?;
    let out = setup.simulate(&model)?;
    Ok(setup.last_period_spectrum(&out.y) - &setup.y.values)
}

/// `V = Σ_k ε(k)ᴴ W(k) ε(k)`.
pub fn cost(theta: &[f64], setup: &CostSetup) -> Result<f64> {
    let eps = residual_spectrum(theta, setup)?;
    Ok(weighted_cost(&eps, setup))
}

fn weighted_cost(eps: &DMatrix<Complex64>, setup: &CostSetup) -> f64 {
    (0..eps.ncols())
        .map(|k| {
            let col = setup.weigh(k, eps.columns(k, 1).into_owned());
            col.iter().map(|v| v.norm_sqr()).sum::<f64>()
        })
        .sum()
}

/// `V` for an arbitrary residual with identity weighting.
pub fn cost_of(eps: &DMatrix<Complex64>) -> f64 {
    eps.iter().map(|v| v.norm_sqr()).sum()
}

/// Per-sample quantities shared by every sensitivity recursion.
struct SensitivityBase {
    /// `∂g_a / ∂(signal read by term a)`, `s × T`.
    slopes: DMatrix<f64>,
    /// `(I - F M_t)^{-1}` per sample when `F` is nonzero.
    gains: Option<Vec<DMatrix<f64>>>,
}

fn sensitivity_base(model: &GreyBoxModel, out: &SimulationOutput) -> Result<SensitivityBase> {
    let d = model.dims;
    let t_len = out.y.ncols();
    let basis = &model.basis;
    let mut slopes = DMatrix::zeros(d.s, t_len);
    let mut buf = vec![0.0; d.s];
    let mut yb = vec![0.0; d.l];
    let mut vb = vec![0.0; d.l];
    for t in 0..t_len {
        for i in 0..d.l {
            yb[i] = out.y[(i, t)];
            if out.ydot.nrows() > 0 {
                vb[i] = out.ydot[(i, t)];
            }
        }
        basis.slopes_into(&yb, &vb, &mut buf);
        for a in 0..d.s {
            slopes[(a, t)] = buf[a];
        }
    }
    let f = model.f();
    let gains = if f.iter().all(|&v| v == 0.0) {
        None
    } else {
        let mut gains = Vec::with_capacity(t_len);
        for t in 0..t_len {
            // M_t = ∂g/∂y + ∂g/∂ẏ / Ts, both through the current sample.
            let mut mt = DMatrix::zeros(d.s, d.l);
            for (a, term) in basis.terms.iter().enumerate() {
                mt[(a, term.channel)] = match term.derivative {
                    Derivative::Displacement => slopes[(a, t)],
                    Derivative::Velocity => slopes[(a, t)] / model.ts,
                };
            }
            let k = DMatrix::identity(d.l, d.l) - &f * mt;
            gains.push(k.try_inverse().ok_or(Error::ImplicitSolve { index: t })?);
        }
        Some(gains)
    };
    Ok(SensitivityBase { slopes, gains })
}

/// Sensitivity `∂y/∂p` over the whole simulation for one free entry.
fn sensitivity(
    model: &GreyBoxModel,
    u: &DMatrix<f64>,
    out: &SimulationOutput,
    base: &SensitivityBase,
    entry: Entry,
) -> DMatrix<f64> {
    let d = model.dims;
    let (n_s, m, l, s) = (d.n_s, d.m, d.l, d.s);
    let t_len = out.y.ncols();
    let ts = model.ts;
    let terms = &model.basis.terms;
    let velocity = model.basis.uses_velocity();
    let mut ys = DMatrix::zeros(l, t_len);
    let mut xs = vec![0.0; n_s];
    let mut xn = vec![0.0; n_s];
    let mut yst = vec![0.0; l];
    let mut rhs = vec![0.0; l];
    let mut yprev = vec![0.0; l];
    let mut gs = vec![0.0; s];
    let ubar = |j: usize, t: usize| if j < m { u[(j, t)] } else { out.g[(j - m, t)] };
    for t in 0..t_len {
        for i in 0..l {
            let mut acc = 0.0;
            for j in 0..n_s {
                acc += model.c[(i, j)] * xs[j];
            }
            rhs[i] = acc;
        }
        match entry.block {
            Block::C => rhs[entry.row] += out.x[(entry.col, t)],
            Block::DExt => rhs[entry.row] += ubar(entry.col, t),
            _ => {}
        }
        if velocity {
            // Previous-sample part of ẏ* enters through F.
            for (a, term) in terms.iter().enumerate() {
                if term.derivative == Derivative::Velocity {
                    let back = -base.slopes[(a, t)] * yprev[term.channel] / ts;
                    for i in 0..l {
                        rhs[i] += model.d_ext[(i, m + a)] * back;
                    }
                }
            }
        }
        match &base.gains {
            None => yst.copy_from_slice(&rhs),
            Some(k) => {
                let kt = &k[t];
                for i in 0..l {
                    let mut acc = 0.0;
                    for j in 0..l {
                        acc += kt[(i, j)] * rhs[j];
                    }
                    yst[i] = acc;
                }
            }
        }
        for (a, term) in terms.iter().enumerate() {
            gs[a] = match term.derivative {
                Derivative::Displacement => base.slopes[(a, t)] * yst[term.channel],
                Derivative::Velocity => base.slopes[(a, t)] * (yst[term.channel] - yprev[term.channel]) / ts,
            };
        }
        for i in 0..l {
            ys[(i, t)] = yst[i];
        }
        for i in 0..n_s {
            let mut acc = 0.0;
            for j in 0..n_s {
                acc += model.a[(i, j)] * xs[j];
            }
            for a in 0..s {
                acc += model.b_ext[(i, m + a)] * gs[a];
            }
            xn[i] = acc;
        }
        match entry.block {
            Block::A => xn[entry.row] += out.x[(entry.col, t)],
            Block::BExt => xn[entry.row] += ubar(entry.col, t),
            _ => {}
        }
        std::mem::swap(&mut xs, &mut xn);
        yprev.copy_from_slice(&yst);
    }
    ys
}

/// Model-output Jacobian `∂Y_m/∂θ` on the processed lines. Row `k·l + i`
/// holds output channel `i` at line `k`; columns follow the packing order.
pub fn jacobian(theta: &[f64], setup: &CostSetup) -> Result<DMatrix<Complex64>> {
    let model = setup.model(theta)?;
    let out = setup.simulate(&model)?;
    jacobian_at(&model, &out, setup)
}

fn jacobian_at(model: &GreyBoxModel, out: &SimulationOutput, setup: &CostSetup) -> Result<DMatrix<Complex64>> {
    let u = tile_period(&setup.u_period, setup.warmup + 1);
    let base = sensitivity_base(model, out)?;
    let entries = setup.mask.free_entries();
    let l = model.dims.l;
    let f = setup.y.len();
    let columns: Vec<DMatrix<Complex64>> = entries
        .par_iter()
        .map(|&e| setup.last_period_spectrum(&sensitivity(model, &u, out, &base, e)))
        .collect();
    let mut jac = DMatrix::zeros(l * f, entries.len());
    for (p, col) in columns.iter().enumerate() {
        if col.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite(format!("sensitivity of parameter {p}")));
        }
        for k in 0..f {
            for i in 0..l {
                jac[(k * l + i, p)] = col[(i, k)];
            }
        }
    }
    Ok(jac)
}

/// Weighted real stacking: rows `2(k·l+i)` and `2(k·l+i)+1` hold the real
/// and imaginary parts of `W(k)^{1/2}` times the complex row.
fn stack_real(setup: &CostSetup, jac: &DMatrix<Complex64>, eps: &DMatrix<Complex64>) -> (DMatrix<f64>, Vec<f64>) {
    let l = setup.template.dims.l;
    let f = eps.ncols();
    let np = jac.ncols();
    let mut jr = DMatrix::zeros(2 * l * f, np);
    let mut r = vec![0.0; 2 * l * f];
    for k in 0..f {
        let jk = setup.weigh(k, jac.rows(k * l, l).into_owned());
        let ek = setup.weigh(k, eps.columns(k, 1).into_owned());
        for i in 0..l {
            let row = 2 * (k * l + i);
            r[row] = ek[i].re;
            r[row + 1] = ek[i].im;
            for p in 0..np {
                jr[(row, p)] = jk[(i, p)].re;
                jr[(row + 1, p)] = jk[(i, p)].im;
            }
        }
    }
    (jr, r)
}

/// Time-domain validation result on one steady-state period.
#[derive(Debug, Clone)]
pub struct Validation {
    /// RMS of the simulation error over all outputs and samples.
    pub rms: f64,
    /// RMS of the measured (period-averaged) output.
    pub output_rms: f64,
    /// Error time series `y_model - y_measured`, `l × N`.
    pub error: DMatrix<f64>,
    /// DFT of the error on the requested lines.
    pub error_spectrum: SpectrumSet,
}

/// Simulates the model on the record's periodic input with warm-up periods
/// and compares its last period with the period-averaged measured output.
pub fn validate(model: &GreyBoxModel, record: &TimeRecord, lines: &[usize]) -> Result<Validation> {
    let n = record.n;
    let u = mean_period(&record.u, n);
    let y = mean_period(&record.y, n);
    let tiled = tile_period(&u, WARMUP_PERIODS + 1);
    let out = simulate_discrete(model, &tiled, &vec![0.0; model.dims.n_s], &SimOptions::default())?;
    if let Some(index) = out.diverged {
        return Err(Error::Diverged { index });
    }
    let sim = out.y.columns(WARMUP_PERIODS * n, n);
    let error = sim - &y;
    let dft = Dft::new(n);
    let mut vals = DMatrix::zeros(error.nrows(), lines.len());
    for c in 0..error.nrows() {
        let spec = dft.forward(error.row(c).iter().copied());
        for (j, &k) in lines.iter().enumerate() {
            vals[(c, j)] = spec[k];
        }
    }
    Ok(Validation {
        rms: linalg::rms(error.iter().copied()),
        output_rms: linalg::rms(y.iter().copied()),
        error,
        error_spectrum: SpectrumSet::from_values(lines.to_vec(), vals, n, record.fs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Initial damping relative to the mean diagonal of the column-scaled
    /// normal matrix.
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    /// Stop when an accepted step lowers the cost by less than this
    /// fraction.
    pub tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            lambda0: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_max: 1e12,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmStatus {
    /// Relative cost decrease fell below the tolerance.
    Converged,
    /// Cost is zero to working precision.
    ZeroResidual,
    /// No damping level up to the maximum produced a decrease.
    LambdaExceeded,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub lambda: f64,
    pub cost: f64,
    /// Only evaluated for accepted steps and the initial point.
    pub validation_rms: Option<f64>,
    pub accepted: bool,
}

/// Optimizer state and histories.
#[derive(Debug, Clone)]
pub struct LmState {
    pub theta: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    /// Validation RMS for each entry of `cost_history`, if validated.
    pub validation_history: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub status: LmStatus,
    /// Index into `cost_history` of the returned iterate.
    pub best_index: usize,
}

#[derive(Debug, Clone)]
pub struct LmResult {
    /// Iterate with the lowest validation RMS (lowest cost without validation).
    pub theta: Vec<f64>,
    pub model: GreyBoxModel,
    pub state: LmState,
}

impl LmResult {
    pub fn write_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        write_trace(&self.state.trace, path)
    }
}

pub fn write_trace(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "lambda", "cost", "validation_rms", "accepted"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            format!("{:e}", r.lambda),
            format!("{:e}", r.cost),
            r.validation_rms.map_or(String::new(), |v| format!("{v:e}")),
            r.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn trial_cost(theta: &[f64], setup: &CostSetup) -> Result<f64> {
    match cost(theta, setup) {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) | Err(Error::Diverged { .. }) | Err(Error::ImplicitSolve { .. }) | Err(Error::NonFinite(_)) => {
            Ok(f64::INFINITY)
        }
        Err(e) => Err(e),
    }
}

/// Levenberg-Marquardt on the stacked real problem.
///
/// The damped step solves `(J̃ᵀJ̃ + λI) Δ̃ = -J̃ᵀ r` in column-normalized
/// coordinates `J̃ = J S⁻¹`, `Δ = S⁻¹ Δ̃`, through the SVD of `J̃`. A step is
/// accepted iff the cost decreases.
pub fn lm_optimize(
    theta0: &[f64],
    setup: &CostSetup,
    validation: Option<&TimeRecord>,
    opts: &LmOptions,
) -> Result<LmResult> {
    if theta0.len() != setup.n_params() {
        return Err(Error::Dimension(format!(
            "theta has {} entries, mask frees {}",
            theta0.len(),
            setup.n_params()
        )));
    }
    let val_rms = |theta: &[f64]| -> Result<Option<f64>> {
        match validation {
            None => Ok(None),
            Some(rec) => {
                let model = setup.model(theta)?;
                match validate(&model, rec, &setup.y.lines) {
                    Ok(v) => Ok(Some(v.rms)),
                    Err(Error::Diverged { .. }) | Err(Error::ImplicitSolve { .. }) => Ok(Some(f64::INFINITY)),
                    Err(e) => Err(e),
                }
            }
        }
    };

    let mut theta = theta0.to_vec();
    let mut model = setup.model(&theta)?;
    let mut out = setup.simulate(&model).map_err(Error::at("initial simulation"))?;
    let mut eps = setup.last_period_spectrum(&out.y) - &setup.y.values;
    let mut v = weighted_cost(&eps, setup);
    if !v.is_finite() {
        return Err(Error::NonFinite("initial cost".into()));
    }
    let y_energy = weighted_cost(&setup.y.values, setup);
    let zero_tol = 1e-28 * y_energy;

    let v0 = val_rms(&theta)?;
    let mut trace = vec![TraceRow {
        iteration: 0,
        lambda: f64::NAN,
        cost: v,
        validation_rms: v0,
        accepted: true,
    }];
    let mut cost_history = vec![v];
    let mut validation_history: Vec<f64> = v0.into_iter().collect();
    let mut best = (0usize, v0.unwrap_or(v), theta.clone());
    let mut lambda = f64::NAN;
    let mut status = LmStatus::MaxIterations;
    let mut iterations = 0;

    'outer: for iter in 1..=opts.max_iter {
        if v <= zero_tol {
            status = LmStatus::ZeroResidual;
            break;
        }
        iterations = iter;
        let jac = jacobian_at(&model, &out, setup)?;
        let (jr, r) = stack_real(setup, &jac, &eps);
        let np = jr.ncols();
        let scales: Vec<f64> = (0..np)
            .map(|p| {
                let s = jr.column(p).norm();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut js = jr;
        for (p, s) in scales.iter().enumerate() {
            js.column_mut(p).scale_mut(1.0 / s);
        }
        if lambda.is_nan() {
            let mean_diag = (0..np).map(|p| js.column(p).norm_squared()).sum::<f64>() / np.max(1) as f64;
            lambda = opts.lambda0 * mean_diag;
        }
        let svd = SVD::new(js, true, true);
        let u = svd.u.as_ref().expect("u requested");
        let vt = svd.v_t.as_ref().expect("v_t requested");
        let sv = &svd.singular_values;
        let rv = linalg::dvec(&r);
        let ur = u.transpose() * rv;
        loop {
            let mut step = vec![0.0; np];
            for k in 0..sv.len() {
                let coef = -sv[k] / (sv[k] * sv[k] + lambda) * ur[k];
                if coef == 0.0 {
                    continue;
                }
                for p in 0..np {
                    step[p] += vt[(k, p)] * coef;
                }
            }
            let trial: Vec<f64> = theta
                .iter()
                .zip(&step)
                .zip(&scales)
                .map(|((t, d), s)| t + d / s)
                .collect();
            let vt_cost = trial_cost(&trial, setup)?;
            if vt_cost < v {
                let rel = (v - vt_cost) / v;
                theta = trial;
                v = vt_cost;
                model = setup.model(&theta)?;
                out = setup.simulate(&model)?;
                eps = setup.last_period_spectrum(&out.y) - &setup.y.values;
                let vr = val_rms(&theta)?;
                trace.push(TraceRow {
                    iteration: iter,
                    lambda,
                    cost: v,
                    validation_rms: vr,
                    accepted: true,
                });
                cost_history.push(v);
                let score = match vr {
                    Some(x) => {
                        validation_history.push(x);
                        x
                    }
                    None => v,
                };
                if score < best.1 {
                    best = (cost_history.len() - 1, score, theta.clone());
                }
                lambda /= opts.lambda_down;
                log::debug!("LM iteration {iter}: cost {v:.6e}, lambda {lambda:.3e}");
                if rel < opts.tol {
                    status = LmStatus::Converged;
                    break 'outer;
                }
                break;
            }
            trace.push(TraceRow {
                iteration: iter,
                lambda,
                cost: vt_cost,
                validation_rms: None,
                accepted: false,
            });
            lambda *= opts.lambda_up;
            if lambda > opts.lambda_max {
                status = LmStatus::LambdaExceeded;
                break 'outer;
            }
        }
    }

    let (best_index, _, best_theta) = best;
    Ok(LmResult {
        model: setup.model(&best_theta)?,
        theta: best_theta,
        state: LmState {
            theta,
            lambda,
            iterations,
            cost_history,
            validation_history,
            trace,
            status,
            best_index,
        },
    })
}

/// Writes the trace as CSV to any writer; used by the CLI for stdout.
pub fn write_trace_to<W: Write>(trace: &[TraceRow], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["iteration", "lambda", "cost", "validation_rms", "accepted"])?;
    for r in trace {
        w.write_record([
            r.iteration.to_string(),
            format!("{:e}", r.lambda),
            format!("{:e}", r.cost),
            r.validation_rms.map_or(String::new(), |v| format!("{v:e}")),
            r.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BasisSet, BasisTerm, Dimensions};
    use crate::signals::{generate_multisine, ExcitedBand};
    use crate::simulate::steady_state_discrete;

    fn duffing(e2: f64, e3: f64) -> GreyBoxModel {
        let basis = BasisSet::polynomial(0, &[2, 3]);
        GreyBoxModel::new(
            DMatrix::from_row_slice(2, 2, &[1.4, -0.64, 1.0, 0.0]),
            DMatrix::from_row_slice(2, 3, &[1.0, e2, e3, 0.0, 0.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[0.1, 0.05]),
            DMatrix::from_row_slice(1, 3, &[0.02, 0.0, 0.0]),
            1.0 / 256.0,
            basis,
            1,
        )
        .unwrap()
    }

    fn record_for(model: &GreyBoxModel, n: usize, rms: f64) -> (TimeRecord, Vec<usize>) {
        let band = ExcitedBand::new(1, n / 2 - 10, n).unwrap();
        let u = generate_multisine(&band, n, rms, 3).unwrap();
        let period = DMatrix::from_row_slice(1, n, &u);
        let st = steady_state_discrete(model, &period, 256.0, 20, 2, 1e-9).unwrap();
        (st.record, band.lines())
    }

    /// Central differences with step `1e-6 (1 + |θ_p|)`; with `richardson`
    /// the `h²` truncation term is cancelled using a half step.
    fn fd_check(model: GreyBoxModel, mask: ParameterMask, rms: f64, richardson: bool) {
        let (rec, lines) = record_for(&model, 128, rms);
        let setup = CostSetup::new(&rec, &lines, model.clone(), mask).unwrap();
        let theta = setup.theta(&model).unwrap();
        let jac = jacobian(&theta, &setup).unwrap();
        let y_scale = setup.y.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for p in 0..theta.len() {
            let central = |h: f64| {
                let mut tp = theta.clone();
                tp[p] += h;
                let plus = residual_spectrum(&tp, &setup).unwrap();
                tp[p] = theta[p] - h;
                let minus = residual_spectrum(&tp, &setup).unwrap();
                (plus - minus) / Complex64::new(2.0 * h, 0.0)
            };
            let h = 1e-6 * (1.0 + theta[p].abs());
            let fd = if richardson {
                (central(h / 2.0) * Complex64::new(4.0, 0.0) - central(h)) / Complex64::new(3.0, 0.0)
            } else {
                central(h)
            };
            let l = model.dims.l;
            let mut err: f64 = 0.0;
            let mut norm: f64 = 0.0;
            for k in 0..lines.len() {
                for i in 0..l {
                    err = err.max((jac[(k * l + i, p)] - fd[(i, k)]).norm());
                    norm = norm.max(fd[(i, k)].norm());
                }
            }
            // Differences of outputs of size |Y| carry rounding of order ε|Y|/h.
            let floor = 100.0 * f64::EPSILON * y_scale / h;
            assert!(err <= 1e-6 * norm + floor, "parameter {p}: error {err:e} vs column size {norm:e}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_explicit() {
        let model = duffing(-0.3, 2.0);
        fd_check(model.clone(), ParameterMask::default_for(model.dims), 0.25, false);
    }

    #[test]
    fn jacobian_matches_finite_differences_with_feedthrough_and_velocity() {
        let basis = BasisSet::new(vec![BasisTerm::power(0, 3), BasisTerm::velocity_power(0, 2)]);
        let mut model = duffing(0.0, 0.0);
        model = GreyBoxModel::new(
            model.a.clone(),
            DMatrix::from_row_slice(2, 3, &[1.0, 0.8, 1e-5, 0.0, 0.1, 0.0]),
            model.c.clone(),
            DMatrix::from_row_slice(1, 3, &[0.02, -0.05, 1e-6]),
            model.ts,
            basis,
            1,
        )
        .unwrap();
        assert!(model.output_equation_is_implicit());
        fd_check(model.clone(), ParameterMask::all_free(model.dims), 0.05, true);
    }

    #[test]
    fn linear_d_column_is_input_spectrum() {
        let model = duffing(0.0, 0.0).linear_part();
        let (rec, lines) = record_for(&model, 64, 0.2);
        let mask = ParameterMask::all_free(model.dims);
        let setup = CostSetup::new(&rec, &lines, model.clone(), mask.clone()).unwrap();
        let theta = setup.theta(&model).unwrap();
        let jac = jacobian(&theta, &setup).unwrap();
        let p = mask
            .free_entries()
            .iter()
            .position(|e| e.block == Block::DExt)
            .unwrap();
        let u_spec = Dft::new(64).forward(setup.u_period.row(0).iter().copied());
        for (k, &line) in lines.iter().enumerate() {
            assert!((jac[(k, p)] - u_spec[line]).norm() < 1e-14);
        }
    }

    #[test]
    fn cost_examples() {
        let model = duffing(0.1, 0.5);
        let (rec, lines) = record_for(&model, 64, 0.2);
        let setup = CostSetup::new(&rec, &lines, model.clone(), ParameterMask::default_for(model.dims)).unwrap();
        let theta = setup.theta(&model).unwrap();
        let eps = residual_spectrum(&theta, &setup).unwrap();
        assert!(eps.norm() < 1e-8 * setup.y.values.norm());
        let single = DMatrix::from_element(1, 1, Complex64::new(3.0, 4.0));
        assert_eq!(cost_of(&single), 25.0);
        let e2 = &eps * Complex64::new(2.0, 0.0);
        assert!((cost_of(&e2) - 4.0 * cost_of(&eps)).abs() <= 1e-12 * cost_of(&e2).max(1e-300));
    }

    #[test]
    fn true_parameters_are_stationary() {
        let model = duffing(-0.2, 1.5);
        let (rec, lines) = record_for(&model, 64, 0.3);
        let setup = CostSetup::new(&rec, &lines, model.clone(), ParameterMask::default_for(model.dims)).unwrap();
        let theta = setup.theta(&model).unwrap();
        let res = lm_optimize(&theta, &setup, None, &LmOptions::default()).unwrap();
        assert_eq!(res.state.cost_history.len(), 1);
        assert_eq!(res.theta, theta);
    }

    #[test]
    fn lm_recovers_perturbed_model_and_costs_decrease() {
        let model = duffing(-0.2, 1.5);
        let (rec, lines) = record_for(&model, 128, 0.3);
        let setup = CostSetup::new(&rec, &lines, model.clone(), ParameterMask::default_for(model.dims)).unwrap();
        let truth = setup.theta(&model).unwrap();
        let start: Vec<f64> = truth.iter().enumerate().map(|(p, t)| t * (1.0 + 0.01 * ((p % 3) as f64 - 1.0))).collect();
        let res = lm_optimize(&start, &setup, Some(&rec), &LmOptions::default()).unwrap();
        for w in res.state.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        let val = validate(&res.model, &rec, &lines).unwrap();
        assert!(val.rms < 1e-8 * val.output_rms, "rms {} of {}", val.rms, val.output_rms);
    }

    #[test]
    fn scaled_weighting_gives_identical_steps() {
        let model = duffing(-0.2, 1.5);
        let (rec, lines) = record_for(&model, 64, 0.3);
        let base = CostSetup::new(&rec, &lines, model.clone(), ParameterMask::default_for(model.dims)).unwrap();
        let four = base
            .clone()
            .with_weights(&vec![DMatrix::from_element(1, 1, Complex64::new(4.0, 0.0)); lines.len()])
            .unwrap();
        let truth = base.theta(&model).unwrap();
        let start: Vec<f64> = truth.iter().map(|t| t * 1.02 + 1e-3).collect();
        let opts = LmOptions { max_iter: 4, ..Default::default() };
        let a = lm_optimize(&start, &base, None, &opts).unwrap();
        let b = lm_optimize(&start, &four, None, &opts).unwrap();
        assert_eq!(a.state.theta, b.state.theta);
        for (x, y) in a.state.cost_history.iter().zip(&b.state.cost_history) {
            assert!((4.0 * x - y).abs() <= 1e-12 * y);
        }
    }

    #[test]
    fn weights_must_be_hermitian_psd() {
        let model = duffing(0.0, 0.0);
        let (rec, lines) = record_for(&model, 64, 0.1);
        let setup = CostSetup::new(&rec, &lines, model.clone(), ParameterMask::default_for(model.dims)).unwrap();
        let bad = vec![DMatrix::from_element(1, 1, Complex64::new(-1.0, 0.0)); lines.len()];
        assert!(setup.with_weights(&bad).is_err());
        let _ = Dimensions::new(2, 1, 1, 2).unwrap();
    }

    #[test]
    fn trace_csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let rows = vec![TraceRow { iteration: 1, lambda: 1e-3, cost: 2.0, validation_rms: None, accepted: false }];
        write_trace(&rows, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("iteration,lambda,cost,validation_rms,accepted"));
        assert!(text.contains("1,1e-3,2e0,,false"));
    }
}
