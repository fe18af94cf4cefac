//! Dense linear-algebra helpers shared by the identification stages.

use nalgebra::{DMatrix, DVector, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for every pseudo-inverse and
/// least-squares solve in the crate.
pub const PINV_RTOL: f64 = 1e-12;

/// Result of an SVD-based least-squares solve.
#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub x: DMatrix<f64>,
    pub rank: usize,
    /// Ratio of largest to smallest retained singular value of the
    /// column-scaled regressor.
    pub condition: f64,
}

/// Moore-Penrose pseudo-inverse, dropping singular values below
/// `rtol * sigma_max`. Returns the inverse and the retained rank.
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    if m.is_empty() {
        return (DMatrix::zeros(m.ncols(), m.nrows()), 0);
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let cutoff = rtol * smax;
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    (out, rank)
}

/// Solves `min ||a x - b||` column by column. Columns of `a` are scaled to
/// unit norm before the SVD so the rank decision does not depend on the
/// units of individual regressors.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, rtol: f64) -> Result<LstsqSolution> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "least squares with {} regressor rows and {} target rows",
            a.nrows(),
            b.nrows()
        )));
    }
    let n = a.ncols();
    let scales: Vec<f64> = (0..n)
        .map(|j| {
            let s = a.column(j).norm();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = SVD::new(scaled, true, true);
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let sv = &svd.singular_values;
    let smax = if sv.is_empty() { 0.0 } else { sv.max() };
    let cutoff = rtol * smax;
    let mut x = DMatrix::zeros(n, b.ncols());
    let mut rank = 0;
    let mut smin = f64::INFINITY;
    for (k, &s) in sv.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            smin = smin.min(s);
            let coef = u.column(k).transpose() * b / s;
            x += vt.row(k).transpose() * coef;
        }
    }
    for (j, s) in scales.iter().enumerate() {
        x.row_mut(j).scale_mut(1.0 / s);
    }
    Ok(LstsqSolution {
        x,
        rank,
        condition: if rank > 0 { smax / smin } else { f64::INFINITY },
    })
}

pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.clone().complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a).iter().map(|l| l.norm()).fold(0.0, f64::max)
}

pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.exp()
}

/// Principal square root by the Denman-Beavers iteration.
fn sqrtm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("matrix square root".into()))?;
        let zi = z
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("matrix square root".into()))?;
        let y_next = (&y + zi) * 0.5;
        let z_next = (&z + yi) * 0.5;
        let change = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if change <= 1e-15 * y.norm() {
            return Ok(y);
        }
    }
    Ok(y)
}

/// Principal matrix logarithm by inverse scaling and squaring.
///
/// Fails when an eigenvalue lies on the closed negative real axis, where no
/// real principal logarithm exists.
pub fn logm(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Dimension("logarithm of a non-square matrix".into()));
    }
    let eig = eigenvalues(a);
    let scale = eig.iter().map(|l| l.norm()).fold(0.0, f64::max).max(1e-300);
    let bad: Vec<Complex64> = eig
        .iter()
        .copied()
        .filter(|l| l.re <= 0.0 && l.im.abs() <= 1e-12 * scale || l.norm() == 0.0)
        .collect();
    if !bad.is_empty() {
        return Err(Error::LogUndefined { eigenvalues: eig });
    }
    let id = DMatrix::<f64>::identity(n, n);
    let mut x = a.clone();
    let mut squarings = 0u32;
    while (&x - &id).norm() > 0.2 {
        if squarings > 60 {
            return Err(Error::Singular("matrix logarithm scaling".into()));
        }
        x = sqrtm(&x)?;
        squarings += 1;
    }
    // log(X) = 2 atanh(Z), Z = (X - I)(X + I)^-1, series converges fast for small ||Z||.
    let xp = &x + &id;
    let xm = &x - &id;
    let z = xp
        .transpose()
        .lu()
        .solve(&xm.transpose())
        .ok_or_else(|| Error::Singular("matrix logarithm".into()))?
        .transpose();
    let z2 = &z * &z;
    let mut term = z.clone();
    let mut sum = z.clone();
    for k in 1..60 {
        term = &term * &z2;
        let add = &term / (2 * k + 1) as f64;
        let small = add.norm() <= 1e-18 * sum.norm().max(1e-300);
        sum += add;
        if small {
            break;
        }
    }
    Ok(sum * (2.0 * f64::powi(2.0, squarings as i32)))
}

/// Integral of the matrix exponential `int_0^t exp(a s) ds`, read from the
/// top-right block of an augmented exponential.
pub fn exp_integral(a: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut aug = DMatrix::<f64>::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * t));
    aug.view_mut((0, n), (n, n))
        .copy_from(&(DMatrix::<f64>::identity(n, n) * t));
    let e = aug.exp();
    e.view((0, n), (n, n)).into_owned()
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Solves `(z I - a) x = b` for complex `z`.
pub fn shifted_solve(
    a: &DMatrix<f64>,
    z: Complex64,
    b: &DMatrix<Complex64>,
) -> Option<DMatrix<Complex64>> {
    let n = a.nrows();
    let mut m = to_complex(a).map(|v| -v);
    for i in 0..n {
        m[(i, i)] += z;
    }
    m.lu().solve(b)
}

/// Sample mean and unbiased standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn rms(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut acc = 0.0;
    for v in values {
        acc += v * v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        (acc / n as f64).sqrt()
    }
}

pub fn dvec(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn pinv_of_rank_deficient_matrix() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let (p, rank) = pinv(&m, PINV_RTOL);
        assert_eq!(rank, 1);
        let back = &m * &p * &m;
        assert_relative_eq!(back, m, epsilon = 1e-12);
    }

    #[test]
    fn lstsq_recovers_exact_solution_with_mixed_scales() {
        let a = DMatrix::from_row_slice(4, 2, &[1e-6, 1.0, 2e-6, -1.0, 3e-6, 2.0, -1e-6, 0.5]);
        let x0 = DMatrix::from_row_slice(2, 1, &[3e5, -2.0]);
        let b = &a * &x0;
        let sol = lstsq(&a, &b, PINV_RTOL).unwrap();
        assert_eq!(sol.rank, 2);
        assert_relative_eq!(sol.x, x0, max_relative = 1e-10);
    }

    #[test]
    fn logm_of_identity_is_zero() {
        let l = logm(&DMatrix::identity(3, 3)).unwrap();
        assert!(l.norm() < 1e-15);
    }

    #[test]
    fn logm_inverts_expm_for_rotation_like_matrix() {
        let ac = DMatrix::from_row_slice(2, 2, &[-0.3, 2.5, -2.5, -0.3]);
        let a = expm(&ac);
        let l = logm(&a).unwrap();
        assert_relative_eq!(l, ac, epsilon = 1e-12);
    }

    #[test]
    fn logm_rejects_negative_real_eigenvalue() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 0.0, 0.0, 0.9]);
        assert!(matches!(logm(&a), Err(Error::LogUndefined { .. })));
    }

    #[test]
    fn exp_integral_scalar() {
        let a = DMatrix::from_element(1, 1, -2.0);
        let phi = exp_integral(&a, 0.5);
        let expected = (1.0 - (-1.0f64).exp()) / 2.0;
        assert_relative_eq!(phi[(0, 0)], expected, max_relative = 1e-14);
    }

    #[test]
    fn mean_std_hand_values() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_relative_eq!(s, 2f64.sqrt(), max_relative = 1e-15);
    }
}
