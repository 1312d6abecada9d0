//! Dense convex QP solver: ADMM operator splitting with over-relaxation,
//! adaptive step size, warm starting and active-set polishing.
//!
//! Problems are stated as
//!
//! ```text
//! minimize   xᵀ P x + qᵀ x
//! subject to A x ≤ b,   lower ≤ x ≤ upper
//! ```
//!
//! (note: no ½ on the quadratic term).  Internally the constraints are
//! stacked into `l ≤ C x ≤ u` and the classic OSQP iteration is applied.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Quadratic cost (symmetric PSD), applied as `xᵀPx`.
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    /// Inequality rows `A x ≤ b` (may have zero rows).
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Variable bounds, `±∞` where absent.
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            p,
            q,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::Qp("cost matrix shape mismatch".into()));
        }
        if self.a.ncols() != n || self.a.nrows() != self.b.len() {
            return Err(Error::Qp("constraint shape mismatch".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Qp("bound length mismatch".into()));
        }
        if (0..n).any(|i| self.lower[i] > self.upper[i]) {
            return Err(Error::Qp("empty variable bound".into()));
        }
        let asym = (&self.p - self.p.transpose()).abs().max();
        if asym > 1e-9 * (1.0 + self.p.abs().max()) {
            return Err(Error::Qp("cost matrix not symmetric".into()));
        }
        let jitter = 1e-10 * (1.0 + self.p.diagonal().abs().max());
        let shifted = &self.p + DMatrix::identity(n, n) * jitter;
        if shifted.cholesky().is_none() {
            return Err(Error::Qp("cost matrix not positive semidefinite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub polish: bool,
    pub check_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_infeasible: 1e-7,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            polish: true,
            check_every: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    InfeasibleDetected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the stacked constraints `[A; I]`; positive when an
    /// upper side binds, negative for a lower side.
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
}

/// Reusable solver: the KKT factorization is cached and only rebuilt when
/// the step size changes, so a sequence of problems sharing `P` and `A` is
/// cheap (MPC use).
#[derive(Debug, Clone)]
pub struct QpSolver {
    settings: QpSettings,
    /// ½-form cost matrix (2P).
    ph: DMatrix<f64>,
    q: DVector<f64>,
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    n_ineq: usize,
    rho: DVector<f64>,
    rho_scalar: f64,
    chol: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;

impl QpSolver {
    pub fn new(problem: &QpProblem, settings: QpSettings) -> Result<Self> {
        problem.validate()?;
        let n = problem.n();
        let m_ineq = problem.a.nrows();
        let m = m_ineq + n;
        let mut c = DMatrix::zeros(m, n);
        c.view_mut((0, 0), (m_ineq, n)).copy_from(&problem.a);
        c.view_mut((m_ineq, 0), (n, n)).fill_with_identity();
        let mut s = Self {
            settings,
            ph: &problem.p * 2.0,
            q: problem.q.clone(),
            c,
            l: DVector::zeros(m),
            u: DVector::zeros(m),
            n_ineq: m_ineq,
            rho: DVector::zeros(m),
            rho_scalar: settings.rho,
            chol: None,
            x: DVector::zeros(n),
            z: DVector::zeros(m),
            y: DVector::zeros(m),
        };
        s.set_bounds(&problem.b, &problem.lower, &problem.upper);
        s.refactor()?;
        Ok(s)
    }

    fn set_bounds(&mut self, b: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) {
        let mi = self.n_ineq;
        for i in 0..mi {
            self.l[i] = f64::NEG_INFINITY;
            self.u[i] = b[i];
        }
        for j in 0..lower.len() {
            self.l[mi + j] = lower[j];
            self.u[mi + j] = upper[j];
        }
    }

    /// Replaces the vectors of the problem, keeping `P`, `A` and the warm
    /// start.
    pub fn update(&mut self, q: &DVector<f64>, b: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Result<()> {
        if q.len() != self.q.len() || b.len() != self.n_ineq || lower.len() != self.q.len() {
            return Err(Error::Qp("update dimension mismatch".into()));
        }
        self.q.copy_from(q);
        let old_free: Vec<bool> = (0..self.l.len()).map(|i| self.row_kind(i)).collect();
        self.set_bounds(b, lower, upper);
        let changed = (0..self.l.len()).any(|i| self.row_kind(i) != old_free[i]);
        if changed {
            self.refactor()?;
        }
        Ok(())
    }

    /// Warm start from a primal guess (duals are kept).
    pub fn warm_start(&mut self, x: &DVector<f64>) {
        self.x.copy_from(x);
        self.z = &self.c * &self.x;
    }

    fn row_kind(&self, i: usize) -> bool {
        self.l[i].is_infinite() && self.u[i].is_infinite()
    }

    fn refactor(&mut self) -> Result<()> {
        let n = self.q.len();
        for i in 0..self.l.len() {
            self.rho[i] = if self.row_kind(i) {
                RHO_MIN
            } else if (self.u[i] - self.l[i]).abs() < 1e-12 {
                1e3 * self.rho_scalar
            } else {
                self.rho_scalar
            };
        }
        let mut k = self.ph.clone() + DMatrix::identity(n, n) * self.settings.sigma;
        let ct_rho = self.c.transpose() * DMatrix::from_diagonal(&self.rho);
        k += &ct_rho * &self.c;
        self.chol = Some(k.cholesky().ok_or_else(|| Error::Qp("KKT factorization failed".into()))?);
        Ok(())
    }

    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64, f64) {
        let cx = &self.c * x;
        let px = &self.ph * x;
        let cty = self.c.transpose() * y;
        let prim = (&cx - z).amax();
        let dual = (&px + &self.q + &cty).amax();
        let prim_scale = cx.amax().max(z.amax());
        let dual_scale = px.amax().max(cty.amax()).max(self.q.amax());
        (prim, dual, prim_scale, dual_scale)
    }

    fn project(&self, v: &mut DVector<f64>) {
        for i in 0..v.len() {
            v[i] = v[i].clamp(self.l[i], self.u[i]);
        }
    }

    pub fn solve(&mut self) -> Result<QpSolution> {
        let s = self.settings;
        let mut iter = 0;
        let mut y_prev = self.y.clone();
        // Keep z consistent with the bounds.
        let mut z = self.z.clone();
        self.project(&mut z);
        self.z = z;
        while iter < s.max_iter {
            iter += 1;
            let rhs = &self.x * s.sigma - &self.q + self.c.transpose() * (self.rho.component_mul(&self.z) - &self.y);
            let xt = self.chol.as_ref().expect("factorized").solve(&rhs);
            let zt = &self.c * &xt;
            let x_new = &xt * s.alpha + &self.x * (1.0 - s.alpha);
            let zr = &zt * s.alpha + &self.z * (1.0 - s.alpha);
            let mut z_new = &zr + self.y.component_div(&self.rho);
            self.project(&mut z_new);
            self.y += self.rho.component_mul(&(&zr - &z_new));
            self.x = x_new;
            self.z = z_new;

            if iter % s.check_every == 0 || iter == s.max_iter {
                let (prim, dual, ps, ds) = self.residuals(&self.x, &self.z, &self.y);
                let eps_p = s.eps_abs + s.eps_rel * ps;
                let eps_d = s.eps_abs + s.eps_rel * ds;
                if prim <= eps_p && dual <= eps_d {
                    return Ok(self.finish(QpStatus::Solved, iter, prim, dual));
                }
                if s.polish {
                    if let Some(sol) = self.try_polish(iter) {
                        return Ok(sol);
                    }
                }
                if self.infeasibility_certificate(&(&self.y - &y_prev)) {
                    return Ok(self.finish(QpStatus::InfeasibleDetected, iter, prim, dual));
                }
                y_prev.copy_from(&self.y);
                if s.adaptive_rho && ps > 0.0 && ds > 0.0 && dual > 0.0 {
                    let ratio = ((prim / ps) / (dual / ds)).sqrt();
                    let new_rho = (self.rho_scalar * ratio).clamp(RHO_MIN, RHO_MAX);
                    if !(0.2..=5.0).contains(&(new_rho / self.rho_scalar)) {
                        self.rho_scalar = new_rho;
                        self.refactor()?;
                    }
                }
            }
        }
        let (prim, dual, _, _) = self.residuals(&self.x, &self.z, &self.y);
        Ok(self.finish(QpStatus::MaxIter, iter, prim, dual))
    }

    fn finish(&self, status: QpStatus, iterations: usize, prim: f64, dual: f64) -> QpSolution {
        QpSolution {
            objective: 0.5 * self.x.dot(&(&self.ph * &self.x)) + self.q.dot(&self.x),
            x: self.x.clone(),
            y: self.y.clone(),
            status,
            iterations,
            primal_residual: prim,
            dual_residual: dual,
            polished: false,
        }
    }

    /// Primal infeasibility certificate on the dual increment.
    fn infeasibility_certificate(&self, dy: &DVector<f64>) -> bool {
        let norm = dy.amax();
        if norm < 1e-12 {
            return false;
        }
        let eps = self.settings.eps_infeasible;
        if (self.c.transpose() * dy).amax() > eps * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..dy.len() {
            if dy[i] > 0.0 {
                if self.u[i].is_infinite() {
                    return false;
                }
                support += self.u[i] * dy[i];
            } else if dy[i] < 0.0 {
                if self.l[i].is_infinite() {
                    return false;
                }
                support += self.l[i] * dy[i];
            }
        }
        support < -eps * norm
    }

    /// Guesses the active set from the current iterate, solves the
    /// equality-constrained KKT system and accepts the result if it is
    /// primal and dual feasible to tolerance.
    fn try_polish(&mut self, iter: usize) -> Option<QpSolution> {
        let n = self.q.len();
        let m = self.l.len();
        let mut active: Vec<(usize, f64)> = Vec::new();
        for i in 0..m {
            let zi = self.z[i];
            // OSQP's rule: a side is active when the multiplier outweighs
            // the distance to it.
            if self.u[i].is_finite() && self.u[i] - zi < self.y[i] {
                active.push((i, self.u[i]));
            } else if self.l[i].is_finite() && zi - self.l[i] < -self.y[i] {
                active.push((i, self.l[i]));
            }
        }
        let k = active.len();
        if k > n {
            return None;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&self.ph);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&self.q));
        for (r, (i, bound)) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = self.c[(*i, j)];
                kkt[(j, n + r)] = self.c[(*i, j)];
            }
            rhs[n + r] = *bound;
        }
        let sol = kkt.lu().solve(&rhs)?;
        let x = sol.rows(0, n).into_owned();
        let mut y = DVector::zeros(m);
        for (r, (i, bound)) in active.iter().enumerate() {
            let lam = sol[n + r];
            // Sign must match the side that binds.
            let upper = *bound == self.u[*i] && !(self.l[*i] == self.u[*i]);
            let lower = *bound == self.l[*i] && !(self.l[*i] == self.u[*i]);
            if (upper && lam < -1e-9) || (lower && lam > 1e-9) {
                return None;
            }
            y[*i] = lam;
        }
        let cx = &self.c * &x;
        let z: DVector<f64> = DVector::from_iterator(m, (0..m).map(|i| cx[i].clamp(self.l[i], self.u[i])));
        let (prim, dual, ps, ds) = self.residuals(&x, &z, &y);
        let s = self.settings;
        if prim <= s.eps_abs + s.eps_rel * ps && dual <= s.eps_abs + s.eps_rel * ds {
            self.x = x;
            self.z = z;
            self.y = y;
            let mut out = self.finish(QpStatus::Solved, iter, prim, dual);
            out.polished = true;
            return Some(out);
        }
        None
    }
}

/// One-shot solve with an optional primal warm start.
pub fn solve(problem: &QpProblem, settings: QpSettings, warm: Option<&DVector<f64>>) -> Result<QpSolution> {
    let mut s = QpSolver::new(problem, settings)?;
    if let Some(x) = warm {
        s.warm_start(x);
    }
    s.solve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_identity() {
        let p = QpProblem::unconstrained(DMatrix::identity(4, 4), DVector::from_element(4, -2.0));
        let s = solve(&p, QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        for v in s.x.iter() {
            assert_relative_eq!(*v, 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn box_clamps() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::from_vec(vec![-10.0, 4.0]));
        p.lower = DVector::from_vec(vec![-1.0, -1.0]);
        p.upper = DVector::from_vec(vec![1.0, 1.0]);
        let s = solve(&p, QpSettings::default(), None).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-6);
        assert_relative_eq!(s.x[1], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn detects_infeasible() {
        // x ≤ -1 and x ≥ 1.
        let mut p = QpProblem::unconstrained(DMatrix::identity(1, 1), DVector::zeros(1));
        p.a = DMatrix::from_row_slice(1, 1, &[1.0]);
        p.b = DVector::from_vec(vec![-1.0]);
        p.lower = DVector::from_vec(vec![1.0]);
        let s = solve(&p, QpSettings { polish: false, ..QpSettings::default() }, None).unwrap();
        assert_eq!(s.status, QpStatus::InfeasibleDetected);
    }

    #[test]
    fn rejects_indefinite() {
        let p = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), DVector::zeros(2));
        assert!(QpSolver::new(&p, QpSettings::default()).is_err());
    }

    #[test]
    fn max_iter_reported() {
        let mut p = QpProblem::unconstrained(DMatrix::identity(3, 3) * 1e-3, DVector::from_vec(vec![1.0, -2.0, 0.5]));
        p.a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        p.b = DVector::from_vec(vec![0.3]);
        let settings = QpSettings { max_iter: 2, check_every: 1, polish: false, ..QpSettings::default() };
        let s = solve(&p, settings, None).unwrap();
        assert_eq!(s.status, QpStatus::MaxIter);
        assert_eq!(s.iterations, 2);
    }
}
