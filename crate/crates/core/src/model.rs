//! Grey-box model, nonlinear basis evaluation and the parameter-vector layer.
//!
//! A model holds `A`, `B̄ = [B E]`, `C`, `D̄ = [D F]` and the basis set that
//! produces the nonlinear part `g(t)` of the extended input `ū = [u; g]`.
//! Parameters are packed column-major per matrix, in the order `A, B̄, C, D̄`,
//! skipping entries the [`ParameterMask`] holds fixed.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// State order.
    pub n_s: usize,
    /// External inputs.
    pub m: usize,
    /// Outputs.
    pub l: usize,
    /// Nonlinear basis terms.
    pub s: usize,
}

impl Dimensions {
    pub fn new(n_s: usize, m: usize, l: usize, s: usize) -> Result<Self> {
        if n_s == 0 || m == 0 || l == 0 {
            return Err(Error::Dimension(format!(
                "n_s, m and l must be at least 1 (got n_s={n_s}, m={m}, l={l})"
            )));
        }
        Ok(Self { n_s, m, l, s })
    }

    /// Width of the extended input `ū = [u; g]`.
    pub fn extended_inputs(&self) -> usize {
        self.m + self.s
    }

    /// Free parameters with the default mask (`F` fixed).
    pub fn default_parameter_count(&self) -> usize {
        let n = self.n_s;
        n * n + n * (self.m + self.s) + self.l * n + self.l * self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Derivative {
    #[default]
    Displacement,
    Velocity,
}

/// Scalar function applied to the selected signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    /// `v^p`
    #[default]
    Power,
    /// `v |v|^(p-1)`, the odd-symmetric counterpart of `Power`.
    SignedPower,
}

/// One univariate nonlinear basis function of a measured output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisTerm {
    pub channel: usize,
    #[serde(default)]
    pub derivative: Derivative,
    pub exponent: u32,
    #[serde(default)]
    pub kind: TermKind,
}

impl BasisTerm {
    pub fn power(channel: usize, exponent: u32) -> Self {
        Self {
            channel,
            derivative: Derivative::Displacement,
            exponent,
            kind: TermKind::Power,
        }
    }

    pub fn velocity_power(channel: usize, exponent: u32) -> Self {
        Self {
            derivative: Derivative::Velocity,
            ..Self::power(channel, exponent)
        }
    }

    #[inline]
    pub fn value(&self, v: f64) -> f64 {
        match self.kind {
            TermKind::Power => v.powi(self.exponent as i32),
            TermKind::SignedPower => v * v.abs().powi(self.exponent as i32 - 1),
        }
    }

    #[inline]
    pub fn slope(&self, v: f64) -> f64 {
        let p = self.exponent as i32;
        match self.kind {
            TermKind::Power => p as f64 * v.powi(p - 1),
            TermKind::SignedPower => p as f64 * v.abs().powi(p - 1),
        }
    }
}

/// Ordered basis terms; the order fixes the columns of `E` and `F`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasisSet {
    pub terms: Vec<BasisTerm>,
}

impl BasisSet {
    pub fn new(terms: Vec<BasisTerm>) -> Self {
        Self { terms }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// Displacement monomials of the given degrees on one channel.
    pub fn polynomial(channel: usize, degrees: &[u32]) -> Self {
        Self::new(degrees.iter().map(|&p| BasisTerm::power(channel, p)).collect())
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Distinct output channels read by the basis, ascending.
    pub fn nl_channels(&self) -> Vec<usize> {
        let mut ch: Vec<usize> = self.terms.iter().map(|t| t.channel).collect();
        ch.sort_unstable();
        ch.dedup();
        ch
    }

    pub fn uses_velocity(&self) -> bool {
        self.terms
            .iter()
            .any(|t| t.derivative == Derivative::Velocity)
    }

    pub fn validate(&self, l: usize) -> Result<()> {
        for (a, t) in self.terms.iter().enumerate() {
            if t.channel >= l {
                return Err(Error::Dimension(format!(
                    "basis term {a} reads channel {} but there are only {l} outputs",
                    t.channel
                )));
            }
            if t.exponent < 2 {
                return Err(Error::InvalidArgument(format!(
                    "basis term {a} has exponent {}; linear content belongs to the linear part",
                    t.exponent
                )));
            }
        }
        Ok(())
    }

    fn check_inputs(&self, y: &[f64], ydot: Option<&[f64]>) -> Result<()> {
        for t in &self.terms {
            if t.channel >= y.len() {
                return Err(Error::Dimension(format!(
                    "basis channel {} out of range for {} outputs",
                    t.channel,
                    y.len()
                )));
            }
            if t.derivative == Derivative::Velocity {
                match ydot {
                    None => return Err(Error::MissingDerivative { channel: t.channel }),
                    Some(d) if d.len() != y.len() => {
                        return Err(Error::Dimension(
                            "derivative vector length differs from output vector".into(),
                        ))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Evaluates `g(y, ẏ)` in basis order.
    pub fn eval(&self, y: &[f64], ydot: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_inputs(y, ydot)?;
        let mut g = vec![0.0; self.len()];
        self.eval_into(y, ydot.unwrap_or(&[]), &mut g);
        Ok(g)
    }

    /// Unchecked evaluation for inner loops; `ydot` may be empty when no
    /// velocity term exists.
    #[inline]
    pub fn eval_into(&self, y: &[f64], ydot: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            let v = match t.derivative {
                Derivative::Displacement => y[t.channel],
                Derivative::Velocity => ydot[t.channel],
            };
            *o = t.value(v);
        }
    }

    /// Jacobians `∂g/∂y` and `∂g/∂ẏ`, both `s × l`.
    pub fn gradient(
        &self,
        y: &[f64],
        ydot: Option<&[f64]>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_inputs(y, ydot)?;
        let l = y.len();
        let mut dy = DMatrix::zeros(self.len(), l);
        let mut dv = DMatrix::zeros(self.len(), l);
        for (a, t) in self.terms.iter().enumerate() {
            match t.derivative {
                Derivative::Displacement => dy[(a, t.channel)] = t.slope(y[t.channel]),
                Derivative::Velocity => {
                    dv[(a, t.channel)] = t.slope(ydot.expect("checked")[t.channel])
                }
            }
        }
        Ok((dy, dv))
    }

    /// Per-term slope `∂g_a/∂(signal read by term a)`, the only nonzero
    /// entry of row `a` of the gradient.
    #[inline]
    pub fn slopes_into(&self, y: &[f64], ydot: &[f64], out: &mut [f64]) {
        for (o, t) in out.iter_mut().zip(&self.terms) {
            let v = match t.derivative {
                Derivative::Displacement => y[t.channel],
                Derivative::Velocity => ydot[t.channel],
            };
            *o = t.slope(v);
        }
    }
}

/// Discrete-time grey-box state-space model.
#[derive(Debug, Clone, PartialEq)]
pub struct GreyBoxModel {
    pub a: DMatrix<f64>,
    /// `[B E]`, `n_s × (m + s)`.
    pub b_ext: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// `[D F]`, `l × (m + s)`.
    pub d_ext: DMatrix<f64>,
    /// Sample period in seconds.
    pub ts: f64,
    pub basis: BasisSet,
    pub dims: Dimensions,
}

impl GreyBoxModel {
    pub fn new(
        a: DMatrix<f64>,
        b_ext: DMatrix<f64>,
        c: DMatrix<f64>,
        d_ext: DMatrix<f64>,
        ts: f64,
        basis: BasisSet,
        m: usize,
    ) -> Result<Self> {
        let n_s = a.nrows();
        let l = c.nrows();
        let dims = Dimensions::new(n_s, m, l, basis.len())?;
        let model = Self {
            a,
            b_ext,
            c,
            d_ext,
            ts,
            basis,
            dims,
        };
        model.validate()?;
        Ok(model)
    }

    /// All-zero model with the given structure.
    pub fn zeros(dims: Dimensions, ts: f64, basis: BasisSet) -> Result<Self> {
        let w = dims.extended_inputs();
        Self::new(
            DMatrix::zeros(dims.n_s, dims.n_s),
            DMatrix::zeros(dims.n_s, w),
            DMatrix::zeros(dims.l, dims.n_s),
            DMatrix::zeros(dims.l, w),
            ts,
            basis,
            dims.m,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dims;
        let w = d.extended_inputs();
        let check = |name: &str, mat: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
            if mat.shape() != (r, c) {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {r}x{c}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.to_string()));
            }
            Ok(())
        };
        check("A", &self.a, d.n_s, d.n_s)?;
        check("B̄", &self.b_ext, d.n_s, w)?;
        check("C", &self.c, d.l, d.n_s)?;
        check("D̄", &self.d_ext, d.l, w)?;
        if self.basis.len() != d.s {
            return Err(Error::Dimension("basis length differs from s".into()));
        }
        self.basis.validate(d.l)?;
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sample period must be positive, got {}",
                self.ts
            )));
        }
        Ok(())
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.b_ext.columns(0, self.dims.m).into_owned()
    }

    pub fn e(&self) -> DMatrix<f64> {
        self.b_ext.columns(self.dims.m, self.dims.s).into_owned()
    }

    pub fn d(&self) -> DMatrix<f64> {
        self.d_ext.columns(0, self.dims.m).into_owned()
    }

    pub fn f(&self) -> DMatrix<f64> {
        self.d_ext.columns(self.dims.m, self.dims.s).into_owned()
    }

    /// True when some `F` entry feeds a nonlinear channel back into itself,
    /// which makes the output equation implicit.
    pub fn output_equation_is_implicit(&self) -> bool {
        let m = self.dims.m;
        self.basis.nl_channels().iter().any(|&row| {
            (0..self.dims.s).any(|a| self.d_ext[(row, m + a)] != 0.0)
        })
    }

    /// Same model with the nonlinear columns removed.
    pub fn linear_part(&self) -> Self {
        let m = self.dims.m;
        Self {
            a: self.a.clone(),
            b_ext: self.b_ext.columns(0, m).into_owned(),
            c: self.c.clone(),
            d_ext: self.d_ext.columns(0, m).into_owned(),
            ts: self.ts,
            basis: BasisSet::empty(),
            dims: Dimensions { s: 0, ..self.dims },
        }
    }

    /// Transfer matrix `C (z I - A)^-1 B̄ + D̄` from the extended input.
    pub fn transfer(&self, z: Complex64) -> Result<DMatrix<Complex64>> {
        let x = linalg::shifted_solve(&self.a, z, &linalg::to_complex(&self.b_ext))
            .ok_or_else(|| Error::Singular(format!("(zI - A) at z = {z}")))?;
        Ok(linalg::to_complex(&self.c) * x + linalg::to_complex(&self.d_ext))
    }

    /// Applies the state change `x = T x'`.
    pub fn similarity(&self, t: &DMatrix<f64>) -> Result<Self> {
        let ti = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("similarity transform".into()))?;
        Ok(Self {
            a: &ti * &self.a * t,
            b_ext: &ti * &self.b_ext,
            c: &self.c * t,
            ..self.clone()
        })
    }

    pub fn poles(&self) -> Vec<Complex64> {
        linalg::eigenvalues(&self.a)
    }

    pub fn to_json(&self, mask: Option<&ParameterMask>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDocument::from_model(self, mask))?)
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<ParameterMask>)> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        doc.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>, mask: Option<&ParameterMask>) -> Result<()> {
        fs::write(path, self.to_json(mask)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<ParameterMask>)> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// Which matrix of the model a parameter lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    A,
    BExt,
    C,
    DExt,
}

/// Location of one free parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Entry {
    pub block: Block,
    pub row: usize,
    pub col: usize,
}

/// Free/fixed pattern over the entries of `(A, B̄, C, D̄)`; `true` means free.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterMask {
    pub a: DMatrix<bool>,
    pub b_ext: DMatrix<bool>,
    pub c: DMatrix<bool>,
    pub d_ext: DMatrix<bool>,
}

impl ParameterMask {
    pub fn all_free(dims: Dimensions) -> Self {
        let w = dims.extended_inputs();
        Self {
            a: DMatrix::from_element(dims.n_s, dims.n_s, true),
            b_ext: DMatrix::from_element(dims.n_s, w, true),
            c: DMatrix::from_element(dims.l, dims.n_s, true),
            d_ext: DMatrix::from_element(dims.l, w, true),
        }
    }

    /// Everything free except `F`, which stays at its template value.
    pub fn default_for(dims: Dimensions) -> Self {
        let mut mask = Self::all_free(dims);
        for j in dims.m..dims.extended_inputs() {
            for i in 0..dims.l {
                mask.d_ext[(i, j)] = false;
            }
        }
        mask
    }

    pub fn free_count(&self) -> usize {
        [&self.a, &self.b_ext, &self.c, &self.d_ext]
            .iter()
            .map(|m| m.iter().filter(|&&f| f).count())
            .sum()
    }

    fn check(&self, model: &GreyBoxModel) -> Result<()> {
        if self.a.shape() != model.a.shape()
            || self.b_ext.shape() != model.b_ext.shape()
            || self.c.shape() != model.c.shape()
            || self.d_ext.shape() != model.d_ext.shape()
        {
            return Err(Error::Dimension(
                "parameter mask shape does not match model".into(),
            ));
        }
        Ok(())
    }

    /// Free entries in packing order (column-major within `A, B̄, C, D̄`).
    pub fn free_entries(&self) -> Vec<Entry> {
        let mut out = Vec::with_capacity(self.free_count());
        for (block, mat) in [
            (Block::A, &self.a),
            (Block::BExt, &self.b_ext),
            (Block::C, &self.c),
            (Block::DExt, &self.d_ext),
        ] {
            for col in 0..mat.ncols() {
                for row in 0..mat.nrows() {
                    if mat[(row, col)] {
                        out.push(Entry { block, row, col });
                    }
                }
            }
        }
        out
    }

    /// Human-readable names using 1-based indices, e.g. `A(2,1)`, `E(1,2)`.
    pub fn labels(&self, m: usize) -> Vec<String> {
        self.free_entries()
            .iter()
            .map(|e| {
                let (name, col) = match e.block {
                    Block::A => ("A", e.col),
                    Block::C => ("C", e.col),
                    Block::BExt if e.col < m => ("B", e.col),
                    Block::BExt => ("E", e.col - m),
                    Block::DExt if e.col < m => ("D", e.col),
                    Block::DExt => ("F", e.col - m),
                };
                format!("{name}({},{})", e.row + 1, col + 1)
            })
            .collect()
    }
}

fn block<'a>(model: &'a GreyBoxModel, b: Block) -> &'a DMatrix<f64> {
    match b {
        Block::A => &model.a,
        Block::BExt => &model.b_ext,
        Block::C => &model.c,
        Block::DExt => &model.d_ext,
    }
}

fn block_mut(model: &mut GreyBoxModel, b: Block) -> &mut DMatrix<f64> {
    match b {
        Block::A => &mut model.a,
        Block::BExt => &mut model.b_ext,
        Block::C => &mut model.c,
        Block::DExt => &mut model.d_ext,
    }
}

pub fn pack_parameters(model: &GreyBoxModel, mask: &ParameterMask) -> Result<Vec<f64>> {
    mask.check(model)?;
    Ok(mask
        .free_entries()
        .iter()
        .map(|e| block(model, e.block)[(e.row, e.col)])
        .collect())
}

pub fn unpack_parameters(
    theta: &[f64],
    mask: &ParameterMask,
    template: &GreyBoxModel,
) -> Result<GreyBoxModel> {
    mask.check(template)?;
    let entries = mask.free_entries();
    if theta.len() != entries.len() {
        return Err(Error::Dimension(format!(
            "parameter vector has {} entries, mask frees {}",
            theta.len(),
            entries.len()
        )));
    }
    let mut model = template.clone();
    for (e, &v) in entries.iter().zip(theta) {
        block_mut(&mut model, e.block)[(e.row, e.col)] = v;
    }
    Ok(model)
}

fn rows_of<T: nalgebra::Scalar + Copy>(m: &DMatrix<T>) -> Vec<Vec<T>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows<T: nalgebra::Scalar + Copy>(
    name: &str,
    rows: &[Vec<T>],
    r: usize,
    c: usize,
) -> Result<DMatrix<T>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("{name} must be {r}x{c}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Debug, Serialize, Deserialize)]
struct MaskDocument {
    a: Vec<Vec<bool>>,
    b_ext: Vec<Vec<bool>>,
    c: Vec<Vec<bool>>,
    d_ext: Vec<Vec<bool>>,
}

/// On-disk model representation; matrices are row-major nested arrays.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    dims: Dimensions,
    ts: f64,
    basis: BasisSet,
    a: Vec<Vec<f64>>,
    b_ext: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    d_ext: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<MaskDocument>,
}

impl ModelDocument {
    fn from_model(model: &GreyBoxModel, mask: Option<&ParameterMask>) -> Self {
        Self {
            dims: model.dims,
            ts: model.ts,
            basis: model.basis.clone(),
            a: rows_of(&model.a),
            b_ext: rows_of(&model.b_ext),
            c: rows_of(&model.c),
            d_ext: rows_of(&model.d_ext),
            mask: mask.map(|m| MaskDocument {
                a: rows_of(&m.a),
                b_ext: rows_of(&m.b_ext),
                c: rows_of(&m.c),
                d_ext: rows_of(&m.d_ext),
            }),
        }
    }

    fn into_model(self) -> Result<(GreyBoxModel, Option<ParameterMask>)> {
        let d = self.dims;
        let w = d.extended_inputs();
        let model = GreyBoxModel::new(
            from_rows("A", &self.a, d.n_s, d.n_s)?,
            from_rows("b_ext", &self.b_ext, d.n_s, w)?,
            from_rows("C", &self.c, d.l, d.n_s)?,
            from_rows("d_ext", &self.d_ext, d.l, w)?,
            self.ts,
            self.basis,
            d.m,
        )?;
        if model.dims != d {
            return Err(Error::Dimension("dims field disagrees with matrices".into()));
        }
        let mask = match self.mask {
            None => None,
            Some(m) => Some(ParameterMask {
                a: from_rows("mask.a", &m.a, d.n_s, d.n_s)?,
                b_ext: from_rows("mask.b_ext", &m.b_ext, d.n_s, w)?,
                c: from_rows("mask.c", &m.c, d.l, d.n_s)?,
                d_ext: from_rows("mask.d_ext", &m.d_ext, d.l, w)?,
            }),
        };
        Ok((model, mask))
    }
}
