//! Registry of the studied dynamical systems (flows and maps) with analytic
//! Jacobians, symmetries, and equilibrium eigenvalue analysis.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::linalg::{normalize, Mat};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Flow,
    Map,
}

type EvalFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
type JacFn<T> = Arc<dyn Fn(&[T], &mut Mat<T>) + Send + Sync>;

/// A flow `ẋ = F(x)` or a map `x ↦ F(x)`: dimension, parameters, vector
/// field / map evaluation, and analytic Jacobian.
#[derive(Clone)]
pub enum SystemModel<T: Real> {
    Lorenz3d { sigma: T, r: T, b: T },
    Lorenz4d { sigma: T, r: T, b: T, mu: T },
    Henon2d { m: T, b: T },
    Lozi { m: T, b: T },
    AnosovLinear,
    AnosovPerturbed { eps: T },
    Henon3d { m1: T, m2: T, b: T },
    CustomFlow {
        name: &'static str,
        dim: usize,
        f: EvalFn<T>,
        jac: JacFn<T>,
    },
    CustomMap {
        name: &'static str,
        dim: usize,
        f: EvalFn<T>,
        jac: JacFn<T>,
    },
}

impl<T: Real> fmt::Debug for SystemModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SystemModel({}", self.name())?;
        for (k, v) in self.params() {
            write!(f, ", {k}={v}")?;
        }
        write!(f, ")")
    }
}

pub const BUILTIN_NAMES: [&str; 7] = [
    "lorenz3d",
    "lorenz4d",
    "henon2d",
    "lozi",
    "anosov_linear",
    "anosov_perturbed",
    "henon3d",
];

impl<T: Real> SystemModel<T> {
    /// Builds a named builtin with paper-default parameters overridden by `params`.
    pub fn builtin(name: &str, params: &[(String, f64)]) -> Result<Self> {
        let mut model = match name {
            "lorenz3d" => SystemModel::Lorenz3d {
                sigma: T::lit(10.0),
                r: T::lit(28.0),
                b: T::lit(8.0 / 3.0),
            },
            "lorenz4d" => SystemModel::Lorenz4d {
                sigma: T::lit(10.0),
                r: T::lit(25.0),
                b: T::lit(8.0 / 3.0),
                mu: T::lit(7.0),
            },
            "henon2d" => SystemModel::Henon2d {
                m: T::lit(1.7),
                b: T::lit(0.1),
            },
            "lozi" => SystemModel::Lozi {
                m: T::lit(1.7),
                b: T::lit(0.5),
            },
            "anosov_linear" => SystemModel::AnosovLinear,
            "anosov_perturbed" => SystemModel::AnosovPerturbed { eps: T::lit(0.6) },
            "henon3d" => SystemModel::Henon3d {
                m1: T::lit(0.044),
                m2: T::lit(0.77),
                b: T::lit(0.7),
            },
            _ => return Err(Error::UnknownSystem(name.to_string())),
        };
        for (k, v) in params {
            if !v.is_finite() {
                return Err(Error::NonFiniteParameter { name: k.clone() });
            }
            model.set_param(k, T::lit(*v))?;
        }
        Ok(model)
    }

    fn set_param(&mut self, name: &str, value: T) -> Result<()> {
        let slot: Option<&mut T> = match self {
            SystemModel::Lorenz3d { sigma, r, b } => match name {
                "sigma" => Some(sigma),
                "r" => Some(r),
                "b" => Some(b),
                _ => None,
            },
            SystemModel::Lorenz4d { sigma, r, b, mu } => match name {
                "sigma" => Some(sigma),
                "r" => Some(r),
                "b" => Some(b),
                "mu" => Some(mu),
                _ => None,
            },
            SystemModel::Henon2d { m, b } => match name {
                "M" | "m" => Some(m),
                "b" => Some(b),
                _ => None,
            },
            SystemModel::Lozi { m, b } => match name {
                "M" | "m" => Some(m),
                "b" => Some(b),
                _ => None,
            },
            SystemModel::AnosovLinear => None,
            SystemModel::AnosovPerturbed { eps } => match name {
                "eps" | "epsilon" => Some(eps),
                _ => None,
            },
            SystemModel::Henon3d { m1, m2, b } => match name {
                "M1" | "m1" => Some(m1),
                "M2" | "m2" => Some(m2),
                "B" | "b" => Some(b),
                _ => None,
            },
            SystemModel::CustomFlow { .. } | SystemModel::CustomMap { .. } => None,
        };
        match slot {
            Some(s) => {
                *s = value;
                Ok(())
            }
            None => Err(Error::UnknownParameter {
                system: self.name().to_string(),
                name: name.to_string(),
            }),
        }
    }

    pub fn custom_flow(name: &'static str, dim: usize, f: EvalFn<T>, jac: JacFn<T>) -> Self {
        SystemModel::CustomFlow { name, dim, f, jac }
    }

    pub fn custom_map(name: &'static str, dim: usize, f: EvalFn<T>, jac: JacFn<T>) -> Self {
        SystemModel::CustomMap { name, dim, f, jac }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemModel::Lorenz3d { .. } => "lorenz3d",
            SystemModel::Lorenz4d { .. } => "lorenz4d",
            SystemModel::Henon2d { .. } => "henon2d",
            SystemModel::Lozi { .. } => "lozi",
            SystemModel::AnosovLinear => "anosov_linear",
            SystemModel::AnosovPerturbed { .. } => "anosov_perturbed",
            SystemModel::Henon3d { .. } => "henon3d",
            SystemModel::CustomFlow { name, .. } | SystemModel::CustomMap { name, .. } => name,
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            SystemModel::Lorenz3d { .. }
            | SystemModel::Lorenz4d { .. }
            | SystemModel::CustomFlow { .. } => SystemKind::Flow,
            _ => SystemKind::Map,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SystemModel::Lorenz3d { .. } | SystemModel::Henon3d { .. } => 3,
            SystemModel::Lorenz4d { .. } => 4,
            SystemModel::Henon2d { .. }
            | SystemModel::Lozi { .. }
            | SystemModel::AnosovLinear
            | SystemModel::AnosovPerturbed { .. } => 2,
            SystemModel::CustomFlow { dim, .. } | SystemModel::CustomMap { dim, .. } => *dim,
        }
    }

    pub fn params(&self) -> Vec<(&'static str, T)> {
        match self {
            SystemModel::Lorenz3d { sigma, r, b } => {
                vec![("sigma", *sigma), ("r", *r), ("b", *b)]
            }
            SystemModel::Lorenz4d { sigma, r, b, mu } => {
                vec![("sigma", *sigma), ("r", *r), ("b", *b), ("mu", *mu)]
            }
            SystemModel::Henon2d { m, b } => vec![("M", *m), ("b", *b)],
            SystemModel::Lozi { m, b } => vec![("M", *m), ("b", *b)],
            SystemModel::AnosovLinear => vec![],
            SystemModel::AnosovPerturbed { eps } => vec![("eps", *eps)],
            SystemModel::Henon3d { m1, m2, b } => vec![("M1", *m1), ("M2", *m2), ("B", *b)],
            SystemModel::CustomFlow { .. } | SystemModel::CustomMap { .. } => vec![],
        }
    }

    /// Torus maps keep their state in [0,1)² and use the wrapped metric.
    pub fn is_torus(&self) -> bool {
        matches!(
            self,
            SystemModel::AnosovLinear | SystemModel::AnosovPerturbed { .. }
        )
    }

    /// Whether the map flips the orientation of E^ss each iteration, so that
    /// continuity diagrams must decimate to every second sample.
    pub fn orientation_flipping(&self) -> bool {
        matches!(
            self,
            SystemModel::Henon2d { .. } | SystemModel::Henon3d { .. }
        )
    }

    /// Vector field (flows) or next state (maps; torus outputs wrapped into [0,1)).
    pub fn eval(&self, x: &[T], out: &mut [T]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        match self {
            SystemModel::Lorenz3d { sigma, r, b } => {
                out[0] = *sigma * (x[1] - x[0]);
                out[1] = x[0] * (*r - x[2]) - x[1];
                out[2] = x[0] * x[1] - *b * x[2];
            }
            SystemModel::Lorenz4d { sigma, r, b, mu } => {
                out[0] = *sigma * (x[1] - x[0]);
                out[1] = x[0] * (*r - x[2]) - x[1];
                out[2] = x[0] * x[1] - *b * x[2] + *mu * x[3];
                out[3] = -*b * x[3] - *mu * x[2];
            }
            SystemModel::Henon2d { m, b } => {
                out[0] = x[1];
                out[1] = *m - *b * x[0] - x[1] * x[1];
            }
            SystemModel::Lozi { m, b } => {
                out[0] = T::one() + x[1] - *m * x[0].abs();
                out[1] = *b * x[0];
            }
            SystemModel::AnosovLinear => {
                out[0] = wrap_unit(T::lit(2.0) * x[0] + x[1]);
                out[1] = wrap_unit(x[0] + x[1]);
            }
            SystemModel::AnosovPerturbed { eps } => {
                let h = blaschke_turns(*eps, x[0]);
                out[0] = wrap_unit(T::lit(2.0) * h + x[1]);
                out[1] = wrap_unit(h + x[1]);
            }
            SystemModel::Henon3d { m1, m2, b } => {
                out[0] = x[1];
                out[1] = x[2];
                out[2] = *m1 + *b * x[0] + *m2 * x[1] - x[2] * x[2];
            }
            SystemModel::CustomFlow { f, .. } | SystemModel::CustomMap { f, .. } => f(x, out),
        }
    }

    /// Analytic Jacobian at `x` (derivative of `eval`).
    pub fn jacobian(&self, x: &[T], out: &mut Mat<T>) {
        debug_assert_eq!(out.rows(), self.dim());
        debug_assert_eq!(out.cols(), self.dim());
        match self {
            SystemModel::Lorenz3d { sigma, r, b } => {
                let o = T::zero();
                out[(0, 0)] = -*sigma;
                out[(0, 1)] = *sigma;
                out[(0, 2)] = o;
                out[(1, 0)] = *r - x[2];
                out[(1, 1)] = -T::one();
                out[(1, 2)] = -x[0];
                out[(2, 0)] = x[1];
                out[(2, 1)] = x[0];
                out[(2, 2)] = -*b;
            }
            SystemModel::Lorenz4d { sigma, r, b, mu } => {
                let o = T::zero();
                out[(0, 0)] = -*sigma;
                out[(0, 1)] = *sigma;
                out[(0, 2)] = o;
                out[(0, 3)] = o;
                out[(1, 0)] = *r - x[2];
                out[(1, 1)] = -T::one();
                out[(1, 2)] = -x[0];
                out[(1, 3)] = o;
                out[(2, 0)] = x[1];
                out[(2, 1)] = x[0];
                out[(2, 2)] = -*b;
                out[(2, 3)] = *mu;
                out[(3, 0)] = o;
                out[(3, 1)] = o;
                out[(3, 2)] = -*mu;
                out[(3, 3)] = -*b;
            }
            SystemModel::Henon2d { m: _, b } => {
                out[(0, 0)] = T::zero();
                out[(0, 1)] = T::one();
                out[(1, 0)] = -*b;
                out[(1, 1)] = -T::lit(2.0) * x[1];
            }
            SystemModel::Lozi { m, b } => {
                // sign(0) taken as +1: a deterministic choice on the discontinuity line.
                let s = if x[0] < T::zero() { -T::one() } else { T::one() };
                out[(0, 0)] = -*m * s;
                out[(0, 1)] = T::one();
                out[(1, 0)] = *b;
                out[(1, 1)] = T::zero();
            }
            SystemModel::AnosovLinear => {
                out[(0, 0)] = T::lit(2.0);
                out[(0, 1)] = T::one();
                out[(1, 0)] = T::one();
                out[(1, 1)] = T::one();
            }
            SystemModel::AnosovPerturbed { eps } => {
                let dh = blaschke_turns_deriv(*eps, x[0]);
                out[(0, 0)] = T::lit(2.0) * dh;
                out[(0, 1)] = T::one();
                out[(1, 0)] = dh;
                out[(1, 1)] = T::one();
            }
            SystemModel::Henon3d { m1: _, m2, b } => {
                let o = T::zero();
                out[(0, 0)] = o;
                out[(0, 1)] = T::one();
                out[(0, 2)] = o;
                out[(1, 0)] = o;
                out[(1, 1)] = o;
                out[(1, 2)] = T::one();
                out[(2, 0)] = *b;
                out[(2, 1)] = *m2;
                out[(2, 2)] = -T::lit(2.0) * x[2];
            }
            SystemModel::CustomFlow { jac, .. } | SystemModel::CustomMap { jac, .. } => jac(x, out),
        }
    }

    /// Distance under the system metric: Euclidean, or per-coordinate wrapped on the torus.
    pub fn dist(&self, a: &[T], b: &[T]) -> T {
        let mut acc = T::zero();
        if self.is_torus() {
            for i in 0..a.len() {
                let d = (a[i] - b[i]).abs();
                let d = d.min(T::one() - d);
                acc += d * d;
            }
        } else {
            for i in 0..a.len() {
                let d = a[i] - b[i];
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    pub fn has_symmetry(&self) -> bool {
        matches!(
            self,
            SystemModel::Lorenz3d { .. } | SystemModel::Lorenz4d { .. }
        )
    }

    /// The declared linear involution; for the Lorenz family (x,y) ↦ (−x,−y).
    pub fn apply_symmetry(&self, x: &[T]) -> Result<Vec<T>> {
        if !self.has_symmetry() {
            return Err(Error::NoSymmetry);
        }
        let mut s = x.to_vec();
        s[0] = -s[0];
        s[1] = -s[1];
        Ok(s)
    }
}

#[inline]
fn wrap_unit<T: Real>(x: T) -> T {
    let w = x - x.floor();
    // floor(x) can round so that w == 1.0 for tiny negative x; fold that back.
    if w >= T::one() {
        w - T::one()
    } else {
        w
    }
}

/// The circle homeomorphism of the perturbed Anosov map, in turns: the angle of
/// the Möbius transform (z+ε)/(1+εz) on the unit circle, so that ε = 0 gives
/// the identity and the map reduces to the linear Anosov map.
#[inline]
fn blaschke_turns<T: Real>(eps: T, x: T) -> T {
    let theta = T::lit(2.0) * T::PI() * x;
    let num = (T::one() - eps * eps) * theta.sin();
    let den = T::lit(2.0) * eps + (T::one() + eps * eps) * theta.cos();
    num.atan2(den) / (T::lit(2.0) * T::PI())
}

#[inline]
fn blaschke_turns_deriv<T: Real>(eps: T, x: T) -> T {
    let theta = T::lit(2.0) * T::PI() * x;
    (T::one() - eps * eps) / (T::one() + T::lit(2.0) * eps * theta.cos() + eps * eps)
}

/// Equilibrium location, eigenvalues sorted by descending real part, and the
/// unit unstable eigenvector when the leading eigenvalue is real and simple.
#[derive(Debug, Clone)]
pub struct EquilibriumInfo<T> {
    pub location: Vec<T>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub unstable_eigenvector: Option<Vec<T>>,
}

impl<T: Real> EquilibriumInfo<T> {
    /// |det(J − λI)| for each reported eigenvalue (characteristic residuals).
    pub fn char_residuals(&self, model: &SystemModel<T>) -> Vec<f64> {
        let n = model.dim();
        let mut jac = Mat::zeros(n, n);
        model.jacobian(&self.location, &mut jac);
        let j64 = DMatrix::from_fn(n, n, |i, k| Complex::new(jac[(i, k)].as_f64(), 0.0));
        self.eigenvalues
            .iter()
            .map(|lam| {
                let mut m = j64.clone();
                for d in 0..n {
                    m[(d, d)] -= lam;
                }
                m.determinant().norm()
            })
            .collect()
    }
}

fn sort_eigs(eigs: &mut [Complex<f64>]) {
    eigs.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap()
            .then(b.im.partial_cmp(&a.im).unwrap())
    });
}

impl<T: Real> SystemModel<T> {
    /// Closed-form origin eigenvalues for the Lorenz family:
    /// λ = (±√((σ−1)² + 4σr) − σ − 1)/2 from the (x,y) block, plus −b (3D) or
    /// −b ± iμ (4D), with the unstable eigenvector (1, (λ₁+σ)/σ, 0, …)/‖·‖.
    pub fn origin_info_closed(&self) -> Result<EquilibriumInfo<T>> {
        let (sigma, r, extra): (T, T, Vec<Complex<f64>>) = match self {
            SystemModel::Lorenz3d { sigma, r, b } => {
                (*sigma, *r, vec![Complex::new(-b.as_f64(), 0.0)])
            }
            SystemModel::Lorenz4d { sigma, r, b, mu } => (
                *sigma,
                *r,
                vec![
                    Complex::new(-b.as_f64(), mu.as_f64()),
                    Complex::new(-b.as_f64(), -mu.as_f64()),
                ],
            ),
            _ => return Err(Error::InvalidArgument(format!(
                "no closed-form origin eigenvalues for `{}`",
                self.name()
            ))),
        };
        let one = T::one();
        let disc = ((sigma - one) * (sigma - one) + T::lit(4.0) * sigma * r).sqrt();
        let lam1 = (disc - sigma - one) / T::lit(2.0);
        let lam_last = -(disc + sigma + one) / T::lit(2.0);
        let mut eigenvalues = vec![Complex::new(lam1.as_f64(), 0.0)];
        eigenvalues.extend(extra);
        eigenvalues.push(Complex::new(lam_last.as_f64(), 0.0));
        sort_eigs(&mut eigenvalues);

        let n = self.dim();
        let mut v = vec![T::zero(); n];
        v[0] = one;
        v[1] = (lam1 + sigma) / sigma;
        normalize(&mut v);
        Ok(EquilibriumInfo {
            location: vec![T::zero(); n],
            eigenvalues,
            unstable_eigenvector: Some(v),
        })
    }

    /// Numeric eigenvalue fallback for any flow at a supplied equilibrium.
    pub fn equilibrium_info_numeric(&self, location: &[T]) -> Result<EquilibriumInfo<T>> {
        let n = self.dim();
        if location.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: location.len(),
            });
        }
        if self.kind() == SystemKind::Flow {
            let mut fx = vec![T::zero(); n];
            self.eval(location, &mut fx);
            let residual = crate::linalg::norm(&fx).as_f64();
            if residual > 1e-8 {
                return Err(Error::NotAnEquilibrium { residual });
            }
        }
        let mut jac = Mat::zeros(n, n);
        self.jacobian(location, &mut jac);
        let j64 = DMatrix::from_fn(n, n, |i, k| jac[(i, k)].as_f64());
        let mut eigenvalues: Vec<Complex<f64>> = j64.complex_eigenvalues().iter().copied().collect();
        if eigenvalues.iter().any(|e| !e.re.is_finite() || !e.im.is_finite()) {
            return Err(Error::EigensolveFailed);
        }
        sort_eigs(&mut eigenvalues);

        let unstable_eigenvector = leading_real_simple(&eigenvalues)
            .and_then(|lam1| inverse_iteration(&j64, lam1))
            .map(|v| {
                let mut vt: Vec<T> = v.iter().map(|&c| T::lit(c)).collect();
                normalize(&mut vt);
                vt
            });
        Ok(EquilibriumInfo {
            location: location.to_vec(),
            eigenvalues,
            unstable_eigenvector,
        })
    }
}

fn leading_real_simple(eigs: &[Complex<f64>]) -> Option<f64> {
    let lam1 = eigs.first()?;
    if lam1.im.abs() > 1e-10 {
        return None;
    }
    if eigs.len() > 1 && (eigs[1].re - lam1.re).abs() < 1e-10 && eigs[1].im.abs() < 1e-10 {
        return None;
    }
    Some(lam1.re)
}

/// Eigenvector for an isolated real eigenvalue by shifted inverse iteration.
fn inverse_iteration(j: &DMatrix<f64>, lam: f64) -> Option<Vec<f64>> {
    let n = j.nrows();
    let shift = lam + 1e-9 * (1.0 + lam.abs());
    let mut m = j.clone();
    for d in 0..n {
        m[(d, d)] -= shift;
    }
    let lu = m.lu();
    let mut v = DMatrix::from_fn(n, 1, |i, _| 1.0 / (1.0 + i as f64));
    for _ in 0..100 {
        let mut next = lu.solve(&v)?;
        let norm = next.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        next /= norm;
        let delta = (&next - &v).norm().min((&next + &v).norm());
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    // Validate: J v ≈ λ v.
    let jv = j * &v;
    let res = (&jv - &v * lam).norm();
    if res < 1e-8 * (1.0 + lam.abs()) {
        Some(v.column(0).iter().copied().collect())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Lu;
    use approx::assert_relative_eq;

    fn fd_jacobian(model: &SystemModel<f64>, x: &[f64], h: f64) -> Mat<f64> {
        let n = model.dim();
        let mut out = Mat::zeros(n, n);
        let mut fp = vec![0.0; n];
        let mut fm = vec![0.0; n];
        for j in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            model.eval(&xp, &mut fp);
            model.eval(&xm, &mut fm);
            for i in 0..n {
                let mut d = fp[i] - fm[i];
                if model.is_torus() {
                    // Minimum-image difference across the wrap.
                    if d > 0.5 {
                        d -= 1.0;
                    } else if d < -0.5 {
                        d += 1.0;
                    }
                }
                out[(i, j)] = d / (2.0 * h);
            }
        }
        out
    }

    fn check_jacobian(model: &SystemModel<f64>, x: &[f64]) {
        let n = model.dim();
        let fd = fd_jacobian(model, x, 1e-6);
        let mut an = Mat::zeros(n, n);
        model.jacobian(x, &mut an);
        for i in 0..n {
            for j in 0..n {
                let scale = 1.0_f64.max(an[(i, j)].abs());
                assert!(
                    (an[(i, j)] - fd[(i, j)]).abs() / scale < 1e-5,
                    "{} J[{i},{j}]: analytic {} vs fd {}",
                    model.name(),
                    an[(i, j)],
                    fd[(i, j)]
                );
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let pts3 = [[1.3, -0.7, 21.0], [0.1, 0.2, 0.3], [-5.0, 4.0, 30.0]];
        let m: SystemModel<f64> = SystemModel::builtin("lorenz3d", &[]).unwrap();
        for p in &pts3 {
            check_jacobian(&m, p);
        }
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        for p in &[[1.3, -0.7, 21.0, -3.0], [0.1, 0.2, 0.3, 0.4]] {
            check_jacobian(&m, p);
        }
        let m: SystemModel<f64> = SystemModel::builtin("henon2d", &[]).unwrap();
        check_jacobian(&m, &[0.3, -0.8]);
        let m: SystemModel<f64> = SystemModel::builtin("lozi", &[]).unwrap();
        check_jacobian(&m, &[0.4, -0.2]); // away from the x=0 discontinuity
        check_jacobian(&m, &[-0.4, 0.2]);
        let m: SystemModel<f64> = SystemModel::builtin("anosov_linear", &[]).unwrap();
        check_jacobian(&m, &[0.37, 0.89]);
        let m: SystemModel<f64> = SystemModel::builtin("anosov_perturbed", &[]).unwrap();
        for p in &[[0.1, 0.2], [0.37, 0.89], [0.51, 0.03], [0.93, 0.6]] {
            check_jacobian(&m, p);
        }
        let m: SystemModel<f64> = SystemModel::builtin("henon3d", &[]).unwrap();
        check_jacobian(&m, &[0.3, -0.1, 0.25]);
    }

    #[test]
    fn origin_is_equilibrium_of_lorenz4d() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let mut out = [1.0; 4];
        m.eval(&[0.0; 4], &mut out);
        assert_eq!(out, [0.0; 4]);
    }

    #[test]
    fn anosov_linear_example_point() {
        let m: SystemModel<f64> = SystemModel::builtin("anosov_linear", &[]).unwrap();
        let mut out = [0.0; 2];
        m.eval(&[0.5, 0.5], &mut out);
        assert_relative_eq!(out[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(out[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn anosov_perturbed_reduces_to_linear_at_zero_eps() {
        let pert: SystemModel<f64> =
            SystemModel::builtin("anosov_perturbed", &[("eps".into(), 0.0)]).unwrap();
        let lin: SystemModel<f64> = SystemModel::builtin("anosov_linear", &[]).unwrap();
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        for &x in &[0.05, 0.31, 0.49, 0.77, 0.99] {
            for &y in &[0.0, 0.33, 0.91] {
                pert.eval(&[x, y], &mut a);
                lin.eval(&[x, y], &mut b);
                for i in 0..2 {
                    let mut d = (a[i] - b[i]).abs();
                    d = d.min(1.0 - d);
                    assert!(d < 1e-12, "eps=0 mismatch at ({x},{y}): {a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn anosov_perturbed_is_continuous_across_the_seam() {
        let m: SystemModel<f64> = SystemModel::builtin("anosov_perturbed", &[]).unwrap();
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for (a, b) in [([1.0 - 1e-9, 0.4], [0.0, 0.4]), ([0.5 - 1e-9, 0.7], [0.5 + 1e-9, 0.7])] {
            m.eval(&a, &mut lo);
            m.eval(&b, &mut hi);
            for i in 0..2 {
                let mut d = (lo[i] - hi[i]).abs();
                d = d.min(1.0 - d);
                assert!(d < 1e-7, "torus discontinuity near {a:?}: {lo:?} vs {hi:?}");
            }
        }
    }

    #[test]
    fn constant_jacobian_determinants() {
        let cases: [(&str, Vec<(String, f64)>, f64); 5] = [
            ("henon2d", vec![("b".into(), 0.1)], 0.1),
            ("henon2d", vec![("b".into(), -0.3), ("M".into(), 1.4)], -0.3),
            ("lozi", vec![], -0.5),
            ("henon3d", vec![], 0.7),
            ("anosov_linear", vec![], 1.0),
        ];
        for (name, params, want) in cases {
            let m: SystemModel<f64> = SystemModel::builtin(name, &params).unwrap();
            let n = m.dim();
            let mut jac = Mat::zeros(n, n);
            for seed in 0..4 {
                let x: Vec<f64> = (0..n).map(|i| 0.1 + 0.17 * (seed * n + i) as f64).collect();
                m.jacobian(&x, &mut jac);
                let det = Lu::new(&jac).unwrap().det();
                assert_relative_eq!(det, want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn symmetry_is_involution_and_equivariant() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let x = [1.0, 2.0, 3.0, 4.0];
        let s = m.apply_symmetry(&x).unwrap();
        assert_eq!(s, vec![-1.0, -2.0, 3.0, 4.0]);
        assert_eq!(m.apply_symmetry(&s).unwrap(), x.to_vec());

        let p = [1.0, 1.0, 1.0, 1.0];
        let sp = m.apply_symmetry(&p).unwrap();
        let mut f_sp = [0.0; 4];
        let mut f_p = [0.0; 4];
        m.eval(&sp, &mut f_sp);
        m.eval(&p, &mut f_p);
        let s_fp = m.apply_symmetry(&f_p).unwrap();
        for i in 0..4 {
            assert_relative_eq!(f_sp[i], s_fp[i], epsilon = 1e-14);
        }

        let henon: SystemModel<f64> = SystemModel::builtin("henon2d", &[]).unwrap();
        assert!(matches!(
            henon.apply_symmetry(&[1.0, 2.0]),
            Err(Error::NoSymmetry)
        ));
    }

    #[test]
    fn lorenz4d_trace_is_constant() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let mut jac = Mat::zeros(4, 4);
        for s in 0..5 {
            let x = [s as f64, -1.5 * s as f64, 2.0 + s as f64, 0.3];
            m.jacobian(&x, &mut jac);
            assert_relative_eq!(jac.trace(), -(10.0 + 1.0 + 2.0 * 8.0 / 3.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn closed_form_origin_eigenvalues() {
        // r=28: λ₁ = (√1201 − 11)/2, λ₄ = −(√1201 + 11)/2, λ₂,₃ = −8/3 ± 7i.
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[("r".into(), 28.0)]).unwrap();
        let info = m.origin_info_closed().unwrap();
        let e = &info.eigenvalues;
        assert_relative_eq!(e[0].re, 11.827723451163456, epsilon = 1e-12);
        assert_relative_eq!(e[3].re, -22.827723451163457, epsilon = 1e-12);
        assert_relative_eq!(e[1].re, -8.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(e[1].im, 7.0, epsilon = 1e-12);
        assert_relative_eq!(e[2].im, -7.0, epsilon = 1e-12);

        // r=1 degenerates: √((σ−1)²+4σ) = σ+1 ⇒ λ₁ = 0.
        let m1: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[("r".into(), 1.0)]).unwrap();
        let info1 = m1.origin_info_closed().unwrap();
        assert_relative_eq!(info1.eigenvalues[0].re, 0.0, epsilon = 1e-12);

        // Residuals |det(J−λI)| vanish for the closed form.
        for r in info.char_residuals(&m) {
            assert!(r < 1e-8, "characteristic residual {r}");
        }
        // Eigenvector: J v = λ₁ v.
        let v = info.unstable_eigenvector.as_ref().unwrap();
        let mut jac = Mat::zeros(4, 4);
        m.jacobian(&info.location, &mut jac);
        let mut jv = vec![0.0; 4];
        jac.mul_vec(v, &mut jv);
        for i in 0..4 {
            assert_relative_eq!(jv[i], e[0].re * v[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn numeric_eigensolve_matches_closed_form() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        let closed = m.origin_info_closed().unwrap();
        let numeric = m.equilibrium_info_numeric(&[0.0; 4]).unwrap();
        for (a, b) in closed.eigenvalues.iter().zip(&numeric.eigenvalues) {
            assert!((a - b).norm() < 1e-10, "closed {a} vs numeric {b}");
        }
        let vc = closed.unstable_eigenvector.unwrap();
        let vn = numeric.unstable_eigenvector.unwrap();
        let align = crate::linalg::dot(&vc, &vn).abs();
        assert!(align > 1.0 - 1e-10);
    }

    #[test]
    fn non_equilibrium_is_rejected() {
        let m: SystemModel<f64> = SystemModel::builtin("lorenz4d", &[]).unwrap();
        assert!(matches!(
            m.equilibrium_info_numeric(&[1.0, 1.0, 1.0, 1.0]),
            Err(Error::NotAnEquilibrium { .. })
        ));
    }

    #[test]
    fn unknown_names_and_params_error() {
        assert!(matches!(
            SystemModel::<f64>::builtin("nosuch", &[]),
            Err(Error::UnknownSystem(_))
        ));
        assert!(matches!(
            SystemModel::<f64>::builtin("lorenz3d", &[("mu".into(), 7.0)]),
            Err(Error::UnknownParameter { .. })
        ));
        assert!(matches!(
            SystemModel::<f64>::builtin("lorenz3d", &[("r".into(), f64::NAN)]),
            Err(Error::NonFiniteParameter { .. })
        ));
    }

    #[test]
    fn builds_at_f32_too() {
        let m: SystemModel<f32> = SystemModel::builtin("lorenz3d", &[]).unwrap();
        let mut out = [0.0f32; 3];
        m.eval(&[1.0, 1.0, 1.0], &mut out);
        assert_eq!(out[0], 0.0);
    }
}
