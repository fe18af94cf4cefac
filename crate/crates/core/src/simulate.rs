//! Time-domain simulation: discrete-time grey-box models and fixed-step RK4
//! integration of Newton's-law truth systems.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BasisTerm, Derivative, GreyBoxModel};
use crate::signals::{Dft, TimeRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// State-norm bound beyond which the run is flagged as diverged.
    pub divergence_bound: f64,
    pub implicit_tol: f64,
    pub implicit_max_iter: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            divergence_bound: 1e8,
            implicit_tol: 1e-12,
            implicit_max_iter: 50,
        }
    }
}

/// Trajectories of a discrete simulation. Column `t` of `x` is the state
/// before the update at sample `t`.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Nonlinear basis signals `g(t)`, `s × T`.
    pub g: DMatrix<f64>,
    /// Backward-difference output derivative, only filled when the basis
    /// has velocity terms (`l × T`, otherwise `0 × T`).
    pub ydot: DMatrix<f64>,
    /// Newton iterations spent on the implicit output equation per sample.
    pub implicit_iterations: Vec<u32>,
    /// First sample whose state exceeded the divergence bound.
    pub diverged: Option<usize>,
}

impl SimulationOutput {
    pub fn is_finite(&self) -> bool {
        self.diverged.is_none()
    }
}

/// Simulates `x(t+1) = A x + B̄ ū`, `y = C x + D̄ ū`, `ū = [u; g(y, ẏ)]`.
///
/// Velocity terms read `ẏ(t) = (y(t) - y(t-1)) / Ts` with `y(-1) = 0`. When no
/// `F` entry couples a nonlinear channel to itself the nonlinear channels are
/// computed first and the output equation is explicit; otherwise it is
/// solved per sample by Newton's method.
pub fn simulate_discrete(
    model: &GreyBoxModel,
    u: &DMatrix<f64>,
    x0: &[f64],
    opts: &SimOptions,
) -> Result<SimulationOutput> {
    let d = model.dims;
    let (n_s, m, l, s) = (d.n_s, d.m, d.l, d.s);
    if u.nrows() != m {
        return Err(Error::Dimension(format!("input has {} rows, model expects {m}", u.nrows())));
    }
    if x0.len() != n_s {
        return Err(Error::Dimension(format!("initial state has {} entries, expected {n_s}", x0.len())));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("simulation input".into()));
    }
    let t_len = u.ncols();
    let basis = &model.basis;
    let velocity = basis.uses_velocity();
    let implicit = model.output_equation_is_implicit();
    let nl = basis.nl_channels();
    let ts = model.ts;

    let mut xs = DMatrix::zeros(n_s, t_len);
    let mut ys = DMatrix::zeros(l, t_len);
    let mut gs = DMatrix::zeros(s, t_len);
    let mut yds = DMatrix::zeros(if velocity { l } else { 0 }, t_len);
    let mut iterations = vec![0u32; t_len];

    let mut x = x0.to_vec();
    let mut x_next = vec![0.0; n_s];
    let mut y_lin = vec![0.0; l];
    let mut y = vec![0.0; l];
    let mut y_prev = vec![0.0; l];
    let mut ydot = vec![0.0; l];
    let mut g = vec![0.0; s];
    let mut slopes = vec![0.0; s];

    for t in 0..t_len {
        for i in 0..l {
            let mut acc = 0.0;
            for j in 0..n_s {
                acc += model.c[(i, j)] * x[j];
            }
            for j in 0..m {
                acc += model.d_ext[(i, j)] * u[(j, t)];
            }
            y_lin[i] = acc;
        }
        if !implicit {
            // F has no entries on the nonlinear rows: read them off the linear part.
            for &ch in &nl {
                y[ch] = y_lin[ch];
                if velocity {
                    ydot[ch] = (y[ch] - y_prev[ch]) / ts;
                }
            }
            basis.eval_into(&y, &ydot, &mut g);
            for i in 0..l {
                let mut acc = y_lin[i];
                for a in 0..s {
                    acc += model.d_ext[(i, m + a)] * g[a];
                }
                y[i] = acc;
            }
        } else {
            y.copy_from_slice(&y_lin);
            let mut converged = false;
            for it in 0..opts.implicit_max_iter {
                if velocity {
                    for i in 0..l {
                        ydot[i] = (y[i] - y_prev[i]) / ts;
                    }
                }
                basis.eval_into(&y, &ydot, &mut g);
                basis.slopes_into(&y, &ydot, &mut slopes);
                let mut jac = DMatrix::<f64>::identity(l, l);
                let mut res = DVector::<f64>::zeros(l);
                for i in 0..l {
                    let mut acc = y[i] - y_lin[i];
                    for (a, term) in basis.terms.iter().enumerate() {
                        let f = model.d_ext[(i, m + a)];
                        acc -= f * g[a];
                        let dy = match term.derivative {
                            Derivative::Displacement => slopes[a],
                            Derivative::Velocity => slopes[a] / ts,
                        };
                        jac[(i, term.channel)] -= f * dy;
                    }
                    res[i] = acc;
                }
                let step = jac
                    .lu()
                    .solve(&res)
                    .ok_or(Error::ImplicitSolve { index: t })?;
                let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max);
                for i in 0..l {
                    y[i] -= step[i];
                }
                iterations[t] = it as u32 + 1;
                let size = step.amax();
                if !size.is_finite() {
                    break;
                }
                if size <= opts.implicit_tol * scale {
                    // One more cheap pass lands on the converged point.
                    if velocity {
                        for i in 0..l {
                            ydot[i] = (y[i] - y_prev[i]) / ts;
                        }
                    }
                    basis.eval_into(&y, &ydot, &mut g);
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::ImplicitSolve { index: t });
            }
        }

        for i in 0..n_s {
            xs[(i, t)] = x[i];
        }
        for i in 0..l {
            ys[(i, t)] = y[i];
        }
        for a in 0..s {
            gs[(a, t)] = g[a];
        }
        if velocity {
            for i in 0..l {
                yds[(i, t)] = ydot[i];
            }
        }

        let mut norm2 = 0.0;
        for i in 0..n_s {
            let mut acc = 0.0;
            for j in 0..n_s {
                acc += model.a[(i, j)] * x[j];
            }
            for j in 0..m {
                acc += model.b_ext[(i, j)] * u[(j, t)];
            }
            for a in 0..s {
                acc += model.b_ext[(i, m + a)] * g[a];
            }
            x_next[i] = acc;
            norm2 += acc * acc;
        }
        if !(norm2.sqrt() <= opts.divergence_bound) || y.iter().any(|v| !v.is_finite()) {
            return Ok(SimulationOutput {
                x: xs.columns(0, t + 1).into_owned(),
                y: ys.columns(0, t + 1).into_owned(),
                g: gs.columns(0, t + 1).into_owned(),
                ydot: yds.columns(0, t + 1).into_owned(),
                implicit_iterations: iterations[..=t].to_vec(),
                diverged: Some(t + 1),
            });
        }
        std::mem::swap(&mut x, &mut x_next);
        y_prev.copy_from_slice(&y);
    }

    Ok(SimulationOutput {
        x: xs,
        y: ys,
        g: gs,
        ydot: yds,
        implicit_iterations: iterations,
        diverged: None,
    })
}

/// Repeats one period `reps` times along the sample axis.
pub fn tile_period(period: &DMatrix<f64>, reps: usize) -> DMatrix<f64> {
    let n = period.ncols();
    DMatrix::from_fn(period.nrows(), n * reps, |i, t| period[(i, t % n)])
}

/// Steady-state record together with the periodicity check.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub record: TimeRecord,
    /// `max |y_last - y_prev| / max |y_last|` over the last two simulated periods.
    pub steadiness: f64,
    /// Whether `steadiness` is below the requested threshold.
    pub steady: bool,
}

fn steadiness_metric(y: &DMatrix<f64>, n: usize) -> f64 {
    let p = y.ncols() / n;
    if p < 2 {
        return f64::INFINITY;
    }
    let last = y.columns((p - 1) * n, n);
    let prev = y.columns((p - 2) * n, n);
    let scale = last.amax().max(f64::MIN_POSITIVE);
    (last - prev).amax() / scale
}

/// Simulates a grey-box model over `n_transient + n_keep` periods from the
/// zero state and keeps the last `n_keep`.
pub fn steady_state_discrete(
    model: &GreyBoxModel,
    period: &DMatrix<f64>,
    fs: f64,
    n_transient: usize,
    n_keep: usize,
    threshold: f64,
) -> Result<SteadyState> {
    let n = period.ncols();
    let total = n_transient + n_keep;
    if n_keep == 0 {
        return Err(Error::InvalidArgument("n_keep must be positive".into()));
    }
    let u = tile_period(period, total);
    let out = simulate_discrete(model, &u, &vec![0.0; model.dims.n_s], &SimOptions::default())?;
    if let Some(index) = out.diverged {
        return Err(Error::Diverged { index });
    }
    let steadiness = steadiness_metric(&out.y, n);
    let start = n_transient * n;
    let record = TimeRecord::new(
        fs,
        n,
        u.columns(start, n_keep * n).into_owned(),
        out.y.columns(start, n_keep * n).into_owned(),
    )?;
    if steadiness > threshold {
        log::warn!("steady-state check failed: periodicity error {steadiness:.3e}");
    }
    Ok(SteadyState {
        record,
        steadiness,
        steady: steadiness <= threshold,
    })
}

/// Localized nonlinear restoring force `c · g(q_dof or q̇_dof)` applied at
/// `force_dof` (defaults to the DOF it reads).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearForce {
    pub coefficient: f64,
    #[serde(flatten)]
    pub term: BasisTerm,
    #[serde(default)]
    pub force_dof: Option<usize>,
}

/// `M q̈ + Cv q̇ + K q + Σ c_a g_a = L u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSystem {
    pub mass: Vec<Vec<f64>>,
    pub damping: Vec<Vec<f64>>,
    pub stiffness: Vec<Vec<f64>>,
    #[serde(default)]
    pub nonlinear: Vec<NonlinearForce>,
    /// `n_p × m` force-input map.
    pub input_map: Vec<Vec<f64>>,
    /// Measured displacement DOFs, in output order.
    pub outputs: Vec<usize>,
    /// Append the velocities of `outputs` after the displacements.
    #[serde(default)]
    pub include_velocities: bool,
}

fn mat(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Config(format!("{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl PhysicalSystem {
    /// Single-DOF oscillator `M ÿ + Cv ẏ + K y + Σ c_p y^p = u` parametrized by
    /// natural frequency, damping ratio and stiffness.
    pub fn sdof(fn_hz: f64, zeta: f64, stiffness: f64, terms: &[(u32, f64)]) -> Self {
        let wn = std::f64::consts::TAU * fn_hz;
        let mass = stiffness / (wn * wn);
        let damping = 2.0 * zeta * wn * mass;
        Self {
            mass: vec![vec![mass]],
            damping: vec![vec![damping]],
            stiffness: vec![vec![stiffness]],
            nonlinear: terms
                .iter()
                .map(|&(p, c)| NonlinearForce {
                    coefficient: c,
                    term: BasisTerm::power(0, p),
                    force_dof: None,
                })
                .collect(),
            input_map: vec![vec![1.0]],
            outputs: vec![0],
            include_velocities: false,
        }
    }

    /// Two-mass chain grounded on both sides, force on mass 1 and a cubic
    /// spring between mass 2 and the base.
    #[allow(clippy::too_many_arguments)]
    pub fn two_dof(
        masses: [f64; 2],
        springs: [f64; 3],
        dampers: [f64; 3],
        cubic: f64,
    ) -> Self {
        let [m1, m2] = masses;
        let [k1, k2, k3] = springs;
        let [c1, c2, c3] = dampers;
        Self {
            mass: vec![vec![m1, 0.0], vec![0.0, m2]],
            damping: vec![vec![c1 + c2, -c2], vec![-c2, c2 + c3]],
            stiffness: vec![vec![k1 + k2, -k2], vec![-k2, k2 + k3]],
            nonlinear: if cubic != 0.0 {
                vec![NonlinearForce {
                    coefficient: cubic,
                    term: BasisTerm::power(1, 3),
                    force_dof: None,
                }]
            } else {
                Vec::new()
            },
            input_map: vec![vec![1.0], vec![0.0]],
            outputs: vec![0, 1],
            include_velocities: false,
        }
    }

    /// Uniform `n_p`-mass chain clamped at both ends, driven at `input_dof`,
    /// with polynomial stiffness terms at `nl_dof`; every DOF is measured.
    pub fn clamped_chain(
        n_p: usize,
        mass: f64,
        spring: f64,
        zeta_first: f64,
        input_dof: usize,
        nl_dof: usize,
        terms: &[(u32, f64)],
    ) -> Self {
        let mut k = DMatrix::<f64>::zeros(n_p, n_p);
        for i in 0..n_p {
            k[(i, i)] = 2.0 * spring;
            if i + 1 < n_p {
                k[(i, i + 1)] = -spring;
                k[(i + 1, i)] = -spring;
            }
        }
        // Stiffness-proportional damping tuned on the first mode.
        let w1 = 2.0 * (spring / mass).sqrt() * (std::f64::consts::PI / (2.0 * (n_p + 1) as f64)).sin();
        let beta = 2.0 * zeta_first / w1;
        let c = &k * beta;
        let mut input = vec![vec![0.0]; n_p];
        input[input_dof][0] = 1.0;
        Self {
            mass: to_rows(&(DMatrix::<f64>::identity(n_p, n_p) * mass)),
            damping: to_rows(&c),
            stiffness: to_rows(&k),
            nonlinear: terms
                .iter()
                .map(|&(p, coef)| NonlinearForce {
                    coefficient: coef,
                    term: BasisTerm::power(nl_dof, p),
                    force_dof: None,
                })
                .collect(),
            input_map: input,
            outputs: (0..n_p).collect(),
            include_velocities: false,
        }
    }

    pub fn dofs(&self) -> usize {
        self.mass.len()
    }

    pub fn inputs(&self) -> usize {
        self.input_map.first().map_or(0, |r| r.len())
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len() * if self.include_velocities { 2 } else { 1 }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dofs();
        for (name, rows) in [("mass", &self.mass), ("damping", &self.damping), ("stiffness", &self.stiffness)] {
            let m = mat(rows, name)?;
            if m.shape() != (n, n) {
                return Err(Error::Config(format!("{name} must be {n}x{n}")));
            }
        }
        let l = mat(&self.input_map, "input_map")?;
        if l.nrows() != n {
            return Err(Error::Config(format!("input_map must have {n} rows")));
        }
        for (a, f) in self.nonlinear.iter().enumerate() {
            if f.term.channel >= n || f.force_dof.unwrap_or(0) >= n {
                return Err(Error::Config(format!("nonlinear term {a} references a DOF >= {n}")));
            }
        }
        if self.outputs.is_empty() || self.outputs.iter().any(|&o| o >= n) {
            return Err(Error::Config("outputs must list valid DOF indices".into()));
        }
        Ok(())
    }

    /// Undamped natural frequencies in Hz from the `(M, K)` generalized
    /// eigenproblem, ascending.
    pub fn undamped_frequencies(&self) -> Result<Vec<f64>> {
        let m = mat(&self.mass, "mass")?;
        let k = mat(&self.stiffness, "stiffness")?;
        let mi = m.try_inverse().ok_or_else(|| Error::Singular("mass matrix".into()))?;
        let mut f: Vec<f64> = crate::linalg::eigenvalues(&(mi * k))
            .iter()
            .map(|l| l.re.max(0.0).sqrt() / std::f64::consts::TAU)
            .collect();
        f.sort_by(|a, b| a.total_cmp(b));
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let sys: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        sys.validate()?;
        Ok(sys)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Input held constant over each output sample interval.
    #[default]
    ZeroOrderHold,
    /// Periodic band-limited (trigonometric) interpolation of the input.
    BandLimited,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// RK4 steps per output sample.
    pub oversampling: usize,
    pub interpolation: Interpolation,
    pub divergence_bound: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            oversampling: 20,
            interpolation: Interpolation::ZeroOrderHold,
            divergence_bound: 1e8,
        }
    }
}

/// Trigonometric interpolation of one period onto `factor` points per sample.
fn upsample_period(period: &[f64], factor: usize) -> Vec<f64> {
    let n = period.len();
    let spec = Dft::new(n).forward(period.iter().copied());
    let big = n * factor;
    let mut padded = vec![Complex64::new(0.0, 0.0); big];
    padded[0] = spec[0];
    for k in 1..n.div_ceil(2) {
        padded[k] = spec[k];
        padded[big - k] = spec[n - k];
    }
    if n % 2 == 0 {
        padded[n / 2] = spec[n / 2] * 0.5;
        padded[big - n / 2] = spec[n / 2] * 0.5;
    }
    Dft::new(big).inverse(&padded)
}

/// Integrates the truth system with classical RK4 at `fs * oversampling`
/// and samples the outputs at `fs`. `u` is `m × T` at rate `fs`.
pub fn simulate_newton(
    sys: &PhysicalSystem,
    u: &DMatrix<f64>,
    fs: f64,
    n: usize,
    opts: &NewtonOptions,
) -> Result<TimeRecord> {
    sys.validate()?;
    let np = sys.dofs();
    let m_in = sys.inputs();
    if u.nrows() != m_in {
        return Err(Error::Dimension(format!("input has {} rows, system expects {m_in}", u.nrows())));
    }
    if opts.oversampling == 0 {
        return Err(Error::InvalidArgument("oversampling must be at least 1".into()));
    }
    let mass = mat(&sys.mass, "mass")?;
    let minv = mass
        .try_inverse()
        .ok_or_else(|| Error::Singular("mass matrix".into()))?;
    let cv = mat(&sys.damping, "damping")?;
    let k = mat(&sys.stiffness, "stiffness")?;
    let lmap = mat(&sys.input_map, "input_map")?;
    // Pre-multiply by M^-1 so the right-hand side is a handful of mat-vecs.
    let mk = &minv * &k;
    let mc = &minv * &cv;
    let ml = &minv * &lmap;
    let nl: Vec<(f64, BasisTerm, DVector<f64>)> = sys
        .nonlinear
        .iter()
        .map(|f| {
            let dof = f.force_dof.unwrap_or(f.term.channel);
            (f.coefficient, f.term, minv.column(dof).into_owned())
        })
        .collect();

    let t_len = u.ncols();
    let sub = opts.oversampling;
    let h = 1.0 / (fs * sub as f64);

    // Input lookup: value on the half-step grid (2*sub points per sample).
    let band: Option<Vec<Vec<f64>>> = match opts.interpolation {
        Interpolation::ZeroOrderHold => None,
        Interpolation::BandLimited => {
            if t_len % n != 0 {
                return Err(Error::Dimension("band-limited interpolation needs whole periods".into()));
            }
            let periodic = (n..t_len).all(|t| (0..m_in).all(|i| u[(i, t)] == u[(i, t % n)]));
            if !periodic {
                return Err(Error::InvalidArgument(
                    "band-limited interpolation requires a periodic input".into(),
                ));
            }
            Some(
                (0..m_in)
                    .map(|i| {
                        let p: Vec<f64> = (0..n).map(|t| u[(i, t)]).collect();
                        upsample_period(&p, 2 * sub)
                    })
                    .collect(),
            )
        }
    };
    let force_at = |sample: usize, half: usize, out: &mut DVector<f64>| {
        for i in 0..m_in {
            out[i] = match &band {
                None => u[(i, sample)],
                Some(up) => {
                    let len = up[i].len();
                    up[i][(sample % n * 2 * sub + half) % len]
                }
            };
        }
    };

    let rhs = |q: &DVector<f64>, v: &DVector<f64>, f: &DVector<f64>| -> DVector<f64> {
        let mut acc = &ml * f - &mk * q - &mc * v;
        for (c, term, col) in &nl {
            let val = match term.derivative {
                Derivative::Displacement => q[term.channel],
                Derivative::Velocity => v[term.channel],
            };
            acc -= col * (c * term.value(val));
        }
        acc
    };

    let lo = sys.output_count();
    let mut y = DMatrix::zeros(lo, t_len);
    let mut q = DVector::<f64>::zeros(np);
    let mut v = DVector::<f64>::zeros(np);
    let mut f0 = DVector::<f64>::zeros(m_in);
    let mut f1 = DVector::<f64>::zeros(m_in);
    let mut f2 = DVector::<f64>::zeros(m_in);
    for t in 0..t_len {
        for (r, &dof) in sys.outputs.iter().enumerate() {
            y[(r, t)] = q[dof];
            if sys.include_velocities {
                y[(r + sys.outputs.len(), t)] = v[dof];
            }
        }
        for j in 0..sub {
            force_at(t, 2 * j, &mut f0);
            force_at(t, 2 * j + 1, &mut f1);
            if j + 1 < sub || band.is_some() {
                let (ns, nh) = if j + 1 < sub { (t, 2 * j + 2) } else { (t + 1, 0) };
                force_at(ns % t_len, nh, &mut f2);
            } else {
                f2.copy_from(&f0);
            }
            let k1v = rhs(&q, &v, &f0);
            let k1q = v.clone();
            let q2 = &q + &k1q * (h / 2.0);
            let v2 = &v + &k1v * (h / 2.0);
            let k2v = rhs(&q2, &v2, &f1);
            let k2q = v2;
            let q3 = &q + &k2q * (h / 2.0);
            let v3 = &v + &k2v * (h / 2.0);
            let k3v = rhs(&q3, &v3, &f1);
            let k3q = v3;
            let q4 = &q + &k3q * h;
            let v4 = &v + &k3v * h;
            let k4v = rhs(&q4, &v4, &f2);
            let k4q = v4;
            q += (k1q + k2q * 2.0 + k3q * 2.0 + k4q) * (h / 6.0);
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
        }
        let norm = (q.norm_squared() + v.norm_squared()).sqrt();
        if !(norm <= opts.divergence_bound) {
            return Err(Error::Diverged { index: t + 1 });
        }
    }
    let mut rec = TimeRecord::new(fs, n, u.clone(), y)?;
    let mut names: Vec<String> = sys.outputs.iter().map(|d| format!("y{}", d + 1)).collect();
    if sys.include_velocities {
        names.extend(sys.outputs.iter().map(|d| format!("v{}", d + 1)));
    }
    rec.output_names = names;
    Ok(rec)
}

/// Integrates the truth system over `n_transient + n_keep` periods of the
/// given excitation period and keeps the last `n_keep`.
pub fn steady_state_newton(
    sys: &PhysicalSystem,
    period: &DMatrix<f64>,
    fs: f64,
    n_transient: usize,
    n_keep: usize,
    opts: &NewtonOptions,
    threshold: f64,
) -> Result<SteadyState> {
    let n = period.ncols();
    if n_keep == 0 {
        return Err(Error::InvalidArgument("n_keep must be positive".into()));
    }
    let total = n_transient + n_keep;
    let u = tile_period(period, total);
    let full = simulate_newton(sys, &u, fs, n, opts)?;
    let steadiness = steadiness_metric(&full.y, n);
    let record = full.select_periods(n_transient..total)?;
    if steadiness > threshold {
        log::warn!("truth system not periodic yet: periodicity error {steadiness:.3e}");
    }
    Ok(SteadyState {
        record,
        steadiness,
        steady: steadiness <= threshold,
    })
}
