//! Lattice Schrödinger operators `H⁰ = κΔ_U + w` with Dirichlet boundary,
//! their Green functions, and the rank-one perturbation `H = H⁰ + hδ_{x0}`.
//!
//! The principal Dirichlet eigenvalue of the perturbed operator is the
//! unique `λ₀ > λ₊` solving the Aronszajn-Krein fixed point
//! `h g_λ(x0, x0) = 1`; a dense eigensolver serves as the independent
//! oracle throughout.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::environment::{sample_potential, Potential, WeibullParams};
use crate::lattice::{LatticeBox, Site};

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid operator: {0}")]
    BadOperator(String),
    #[error("matrix is not symmetric")]
    NonSymmetric,
    #[error("eigenpair residual {residual:.3e} exceeds {limit:.3e}")]
    ResidualTooLarge { residual: f64, limit: f64 },
    #[error("coupling h = {h} below threshold w_max + 2dκ = {threshold}")]
    CouplingBelowThreshold { h: f64, threshold: f64 },
    #[error("λ = {lambda} too close to the spectrum: need λ - λ₊ > 2dκ (λ₊ = {lambda_plus})")]
    OutsideConvergenceRegime { lambda: f64, lambda_plus: f64 },
    #[error("resolvent system is singular at λ = {0}")]
    SingularResolvent(f64),
    #[error("root bracketing failed: {0}")]
    RootBracket(String),
}

/// `H⁰_{U,w} = κΔ_U + w` on a finite site set with Dirichlet boundary
/// conditions: `(H⁰f)(x) = κ Σ_j (f(x+e_j) - f(x)) + w(x) f(x)` with
/// `f = 0` outside `U`.
#[derive(Debug, Clone)]
pub struct SchrodingerOperator {
    sites: Vec<Site>,
    index: HashMap<Site, usize>,
    /// Neighbor indices within `U` per site.
    adjacency: Vec<Vec<usize>>,
    w: Vec<f64>,
    kappa: f64,
    d: usize,
}

impl SchrodingerOperator {
    /// Builds the operator from a site list and matching potential values.
    /// Sites are sorted lexicographically; `w` is permuted along.
    pub fn new(sites: Vec<Site>, w: Vec<f64>, kappa: f64) -> Result<Self, SpectralError> {
        if sites.is_empty() {
            return Err(SpectralError::BadOperator("empty site set".into()));
        }
        if sites.len() != w.len() {
            return Err(SpectralError::BadOperator(
                "site and potential lengths differ".into(),
            ));
        }
        if !(kappa > 0.0) {
            return Err(SpectralError::BadOperator("kappa must be positive".into()));
        }
        if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(SpectralError::BadOperator(
                "potential must be nonnegative and finite".into(),
            ));
        }
        let d = sites[0].dim();
        if sites.iter().any(|s| s.dim() != d) {
            return Err(SpectralError::BadOperator("mixed dimensions".into()));
        }
        let mut pairs: Vec<(Site, f64)> = sites.into_iter().zip(w).collect();
        pairs.sort_by(|a, b| a.0.cmp(&b.0));
        pairs.dedup_by(|a, b| a.0 == b.0);
        let sites: Vec<Site> = pairs.iter().map(|(s, _)| s.clone()).collect();
        let w: Vec<f64> = pairs.iter().map(|(_, v)| *v).collect();
        let index: HashMap<Site, usize> = sites
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let adjacency = sites
            .iter()
            .map(|s| {
                s.neighbors()
                    .iter()
                    .filter_map(|nb| index.get(nb).copied())
                    .collect()
            })
            .collect();
        Ok(SchrodingerOperator {
            sites,
            index,
            adjacency,
            w,
            kappa,
            d,
        })
    }

    /// Operator on the sites of a sampled potential.
    pub fn from_potential(p: &Potential, kappa: f64) -> Result<Self, SpectralError> {
        SchrodingerOperator::new(p.domain.sites().collect(), p.values.clone(), kappa)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn potential(&self) -> &[f64] {
        &self.w
    }

    pub fn index_of(&self, s: &Site) -> Option<usize> {
        self.index.get(s).copied()
    }

    /// `w̄_U = max w`.
    pub fn w_max(&self) -> f64 {
        self.w.iter().cloned().fold(0.0, f64::max)
    }

    /// Dense symmetric matrix of `H⁰` in the site basis.
    pub fn assemble(&self) -> DMatrix<f64> {
        let n = self.len();
        let two_d_kappa = 2.0 * self.d as f64 * self.kappa;
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.w[i] - two_d_kappa;
            for &j in &self.adjacency[i] {
                m[(i, j)] = self.kappa;
            }
        }
        m
    }
}

/// `H = H⁰ + h δ_{x0}` with `w(x0) = 0` and coupling `h >= 0`.
#[derive(Debug, Clone)]
pub struct RankOnePerturbation {
    pub base: SchrodingerOperator,
    x0: usize,
    pub h: f64,
}

impl RankOnePerturbation {
    pub fn new(base: SchrodingerOperator, x0: &Site, h: f64) -> Result<Self, SpectralError> {
        let idx = base
            .index_of(x0)
            .ok_or_else(|| SpectralError::BadOperator("x0 not in U".into()))?;
        if base.w[idx] != 0.0 {
            return Err(SpectralError::BadOperator(
                "the perturbed site must carry zero potential".into(),
            ));
        }
        if !(h >= 0.0) {
            return Err(SpectralError::BadOperator("h must be nonnegative".into()));
        }
        Ok(RankOnePerturbation { base, x0: idx, h })
    }

    pub fn x0_index(&self) -> usize {
        self.x0
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let mut m = self.base.assemble();
        m[(self.x0, self.x0)] += self.h;
        m
    }
}

/// Full dense spectrum, eigenvalues ascending with matching orthonormal
/// eigenvector columns. This is the cross-validation oracle.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomposition {
    pub fn max_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// Second largest eigenvalue; `None` for a 1x1 operator.
    pub fn second_eigenvalue(&self) -> Option<f64> {
        let n = self.eigenvalues.len();
        (n >= 2).then(|| self.eigenvalues[n - 2])
    }

    pub fn top_eigenvector(&self) -> DVector<f64> {
        let n = self.eigenvalues.len();
        self.eigenvectors.column(n - 1).into_owned()
    }
}

/// Dense symmetric eigendecomposition with a residual certificate.
pub fn eigen_dense(matrix: &DMatrix<f64>) -> Result<EigenDecomposition, SpectralError> {
    let n = matrix.nrows();
    let scale = matrix.norm();
    for i in 0..n {
        for j in (i + 1)..n {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * (1.0 + scale) {
                return Err(SpectralError::NonSymmetric);
            }
        }
    }
    let eig = matrix.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        eigenvectors.set_column(k, &eig.eigenvectors.column(i));
    }
    // residual certificate per pair
    let limit = 1e-10 * (1.0 + scale);
    for k in 0..n {
        let v = eigenvectors.column(k);
        let residual = (matrix * v - eigenvalues[k] * v).norm();
        if residual > limit {
            return Err(SpectralError::ResidualTooLarge { residual, limit });
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Green function `g_λ(x, y) = (δ_x, (λI - H⁰)^{-1} δ_y)` by linear solve.
pub fn green_solve(
    op: &SchrodingerOperator,
    lambda: f64,
    x: &Site,
    y: &Site,
) -> Result<f64, SpectralError> {
    let q = resolvent_column(op, lambda, y)?;
    let xi = op
        .index_of(x)
        .ok_or_else(|| SpectralError::BadOperator("x not in U".into()))?;
    Ok(q[xi])
}

/// `(λI - H⁰)^{-1} δ_y` by LU solve.
pub fn resolvent_column(
    op: &SchrodingerOperator,
    lambda: f64,
    y: &Site,
) -> Result<DVector<f64>, SpectralError> {
    let yi = op
        .index_of(y)
        .ok_or_else(|| SpectralError::BadOperator("y not in U".into()))?;
    let n = op.len();
    let a = DMatrix::identity(n, n) * lambda - op.assemble();
    let mut rhs = DVector::zeros(n);
    rhs[yi] = 1.0;
    a.lu()
        .solve(&rhs)
        .ok_or(SpectralError::SingularResolvent(lambda))
}

/// Green function by the truncated nearest-neighbor path expansion
/// `g_λ(x,y) = (1/κ) Σ_γ Π_{z∈γ} κ/(λ + 2dκ - w(z))`, organized by path
/// length via dynamic programming. Valid for `λ - λ₊ > 2dκ`; the series
/// is truncated once the geometric tail bound drops below `tol`.
pub fn green_path(
    op: &SchrodingerOperator,
    lambda: f64,
    x: &Site,
    y: &Site,
    tol: f64,
) -> Result<f64, SpectralError> {
    let lambda_plus = eigen_dense(&op.assemble())?.max_eigenvalue();
    let two_d_kappa = 2.0 * op.d as f64 * op.kappa;
    if lambda - lambda_plus <= two_d_kappa {
        return Err(SpectralError::OutsideConvergenceRegime {
            lambda,
            lambda_plus,
        });
    }
    let xi = op
        .index_of(x)
        .ok_or_else(|| SpectralError::BadOperator("x not in U".into()))?;
    let yi = op
        .index_of(y)
        .ok_or_else(|| SpectralError::BadOperator("y not in U".into()))?;

    // per-site path weight κ/(λ + 2dκ - w(z)); all denominators are
    // >= λ - λ₊ > 2dκ > 0 in this regime
    let a: Vec<f64> = op
        .w
        .iter()
        .map(|&wz| op.kappa / (lambda + two_d_kappa - wz))
        .collect();

    // number of length-k paths is at most (2d)^{k-1} and each weight
    // factor is at most κ/(λ - λ₊), so the tail after n* sites is at most
    // (1/(2dκ)) (2dκ/(λ-λ₊))^{n*+1} / (1 - 2dκ/(λ-λ₊))
    let ratio = two_d_kappa / (lambda - lambda_plus);
    let mut n_star = x.l1_dist(y) as usize + 1;
    while (1.0 / (two_d_kappa)) * ratio.powi(n_star as i32 + 1) / (1.0 - ratio) > tol {
        n_star += 1;
        if n_star > 200_000 {
            return Err(SpectralError::OutsideConvergenceRegime {
                lambda,
                lambda_plus,
            });
        }
    }

    let n = op.len();
    // cur[v] = Σ over length-k paths from x to v of the weight product
    let mut cur = vec![0.0f64; n];
    cur[xi] = a[xi];
    let mut total = if xi == yi { cur[yi] } else { 0.0 };
    for _ in 2..=n_star {
        let mut next = vec![0.0f64; n];
        for (u, &c) in cur.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for &v in &op.adjacency[u] {
                next[v] += c * a[v];
            }
        }
        cur = next;
        total += cur[yi];
    }
    Ok(total / op.kappa)
}

/// Principal eigenpair of the perturbed operator with a residual
/// certificate. `psi0` has unit l² norm and `psi0[x0] > 0`.
#[derive(Debug, Clone)]
pub struct SpectralPair {
    pub lambda0: f64,
    pub psi0: DVector<f64>,
    pub residual: f64,
}

/// Principal Dirichlet eigenvalue of `H⁰ + hδ_{x0}` as the unique root of
/// `h g_λ(x0, x0) = 1` above `λ₊`, by bracketed bisection plus Newton
/// (using `dg/dλ = -||q_λ||²`); the eigenfunction is `q_{λ₀}` normalized.
pub fn principal_eigenvalue_ak(
    p: &RankOnePerturbation,
    tol: f64,
) -> Result<SpectralPair, SpectralError> {
    let op = &p.base;
    let two_d_kappa = 2.0 * op.d as f64 * op.kappa;
    let threshold = op.w_max() + two_d_kappa;
    if p.h <= threshold {
        return Err(SpectralError::CouplingBelowThreshold {
            h: p.h,
            threshold,
        });
    }
    let lambda_plus = eigen_dense(&op.assemble())?.max_eigenvalue();
    let x0_site = op.sites[p.x0].clone();

    let f = |lambda: f64| -> Result<(f64, DVector<f64>), SpectralError> {
        let q = resolvent_column(op, lambda, &x0_site)?;
        Ok((p.h * q[p.x0] - 1.0, q))
    };

    // bracket: g is decreasing in λ on (λ₊, ∞), so walk the lower end
    // toward λ₊ until f > 0 and double the upper end until f < 0
    let mut lo = lambda_plus + two_d_kappa * (1.0 + 1e-6);
    let mut tries = 0;
    while f(lo)?.0 <= 0.0 {
        lo = lambda_plus + 0.5 * (lo - lambda_plus);
        tries += 1;
        if tries > 200 {
            return Err(SpectralError::RootBracket(
                "no sign change above λ₊ (is h above the critical coupling?)".into(),
            ));
        }
    }
    let mut hi = p.h + two_d_kappa * op.len() as f64;
    tries = 0;
    while f(hi)?.0 >= 0.0 {
        hi = lambda_plus + 2.0 * (hi - lambda_plus);
        tries += 1;
        if tries > 200 {
            return Err(SpectralError::RootBracket("upper bracket not found".into()));
        }
    }

    // bisection to localize, then Newton to machine precision
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if f(mid)?.0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 * (1.0 + hi.abs()) {
            break;
        }
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..60 {
        let (fval, q) = f(lambda)?;
        let deriv = -p.h * q.norm_squared();
        let step = fval / deriv;
        let mut next = lambda - step;
        if next <= lo || next >= hi {
            next = 0.5 * (lo + hi);
        }
        if fval > 0.0 {
            lo = lo.max(lambda);
        } else {
            hi = hi.min(lambda);
        }
        if (next - lambda).abs() <= 1e-15 * (1.0 + lambda.abs()) {
            lambda = next;
            break;
        }
        lambda = next;
    }

    let q = resolvent_column(op, lambda, &x0_site)?;
    let mut psi0 = q.clone() / q.norm();
    if psi0[p.x0] < 0.0 {
        psi0 = -psi0;
    }
    let h_matrix = p.assemble();
    let residual = (&h_matrix * &psi0 - lambda * &psi0).norm();
    let limit = tol * (1.0 + h_matrix.norm());
    if residual > limit {
        return Err(SpectralError::ResidualTooLarge { residual, limit });
    }
    Ok(SpectralPair {
        lambda0: lambda,
        psi0,
        residual,
    })
}

/// Partial sum of the eigenvalue expansion
/// `λ₀ = h - 2dκ + h Σ_{j<=n_max} Σ_{loops of length 2j+1 at x0 in U}
/// Π_{z≠z₁} κ/(λ₀ + 2dκ - w(z))`, computed by dynamic programming over
/// loop lengths.
pub fn eigenvalue_expansion_partial(p: &RankOnePerturbation, lambda0: f64, n_max: usize) -> f64 {
    let op = &p.base;
    let n = op.len();
    let two_d_kappa = 2.0 * op.d as f64 * op.kappa;
    let a: Vec<f64> = op
        .w
        .iter()
        .map(|&wz| op.kappa / (lambda0 + two_d_kappa - wz))
        .collect();
    // weight over positions 2..=2j+1 of loops at x0: propagate from x0
    // without the first factor
    let mut cur = vec![0.0f64; n];
    cur[p.x0] = 1.0;
    let mut sum = 0.0;
    for step in 1..=(2 * n_max) {
        let mut next = vec![0.0f64; n];
        for (u, &c) in cur.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for &v in &op.adjacency[u] {
                next[v] += c * a[v];
            }
        }
        cur = next;
        if step % 2 == 0 {
            sum += cur[p.x0];
        }
    }
    p.h - two_d_kappa + p.h * sum
}

/// `|λ₀ - (partial expansion to N_max)|`.
pub fn eigenvalue_expansion_check(p: &RankOnePerturbation, lambda0: f64, n_max: usize) -> f64 {
    (lambda0 - eigenvalue_expansion_partial(p, lambda0, n_max)).abs()
}

/// Critical coupling `h₀ = 1 / lim_{λ↘λ₊⁰} g_λ(x0, x0)`, approximated on a
/// decreasing ε-ladder with 2-point Richardson extrapolation. Returns 0
/// when the limit diverges (any `h > 0` then creates an eigenvalue above
/// `λ₊⁰`).
pub fn critical_coupling(op: &SchrodingerOperator, x0: &Site) -> Result<f64, SpectralError> {
    let lambda_plus = eigen_dense(&op.assemble())?.max_eigenvalue();
    let scale = 1.0 + lambda_plus.abs();
    let ladder = [1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let g: Vec<f64> = ladder
        .iter()
        .map(|&eps| green_solve(op, lambda_plus + eps * scale, x0, x0))
        .collect::<Result<_, _>>()?;
    // divergent limit: g grows like 1/ε along the ladder
    let growth = g.last().unwrap() / g[g.len() - 2];
    if growth > 5.0 {
        return Ok(0.0);
    }
    // finite limit: Richardson on the last two rungs, g(ε) ≈ g* + cε
    let (e1, e2) = (ladder[g.len() - 2], ladder[g.len() - 1]);
    let g_star = (e1 * g[g.len() - 1] - e2 * g[g.len() - 2]) / (e1 - e2);
    Ok(1.0 / g_star)
}

/// Right-hand side of the Aronszajn-Krein resolvent identity
/// `R_λ = R⁰_λ + h/(1 - h g_λ(x0,x0)) (q_λ, ·) q_λ`.
pub fn ak_resolvent(p: &RankOnePerturbation, lambda: f64) -> Result<DMatrix<f64>, SpectralError> {
    let op = &p.base;
    let n = op.len();
    let a = DMatrix::identity(n, n) * lambda - op.assemble();
    let lu = a.lu();
    let r0 = lu
        .solve(&DMatrix::identity(n, n))
        .ok_or(SpectralError::SingularResolvent(lambda))?;
    let q = r0.column(p.x0).into_owned();
    let g = q[p.x0];
    let denom = 1.0 - g * p.h;
    if denom.abs() < 1e-14 {
        return Err(SpectralError::SingularResolvent(lambda));
    }
    Ok(r0 + (p.h / denom) * &q * q.transpose())
}

/// Directly inverted resolvent `(λI - H)^{-1}` of the perturbed operator.
pub fn perturbed_resolvent(
    p: &RankOnePerturbation,
    lambda: f64,
) -> Result<DMatrix<f64>, SpectralError> {
    let n = p.base.len();
    let a = DMatrix::identity(n, n) * lambda - p.assemble();
    a.lu()
        .solve(&DMatrix::identity(n, n))
        .ok_or(SpectralError::SingularResolvent(lambda))
}

/// Random Weibull-potential operator on a centered box, with the
/// potential forced to zero at `x0` (the box center).
pub fn random_weibull_operator(
    d: usize,
    radius: i64,
    rho: f64,
    kappa: f64,
    seed: u64,
) -> (SchrodingerOperator, Site) {
    let domain = LatticeBox::centered(radius, d);
    let params = WeibullParams::new(rho).expect("rho > 1");
    let mut p = sample_potential(&domain, &params, seed);
    let x0 = Site::origin(d);
    let x0_idx = domain.index_of(&x0).unwrap();
    p.values[x0_idx] = 0.0;
    (
        SchrodingerOperator::from_potential(&p, kappa).unwrap(),
        x0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_seed;
    use approx::assert_relative_eq;

    fn single_site_op(kappa: f64, d: usize) -> SchrodingerOperator {
        SchrodingerOperator::new(vec![Site::origin(d)], vec![0.0], kappa).unwrap()
    }

    #[test]
    fn assemble_single_site() {
        let m = single_site_op(1.0, 1).assemble();
        assert_eq!(m.nrows(), 1);
        assert_relative_eq!(m[(0, 0)], -2.0);
    }

    #[test]
    fn assemble_three_site_tridiagonal() {
        let sites = vec![Site(vec![-1]), Site(vec![0]), Site(vec![1])];
        let op = SchrodingerOperator::new(sites, vec![0.0; 3], 1.0).unwrap();
        let m = op.assemble();
        for i in 0..3 {
            assert_relative_eq!(m[(i, i)], -2.0);
        }
        assert_relative_eq!(m[(0, 1)], 1.0);
        assert_relative_eq!(m[(1, 2)], 1.0);
        assert_relative_eq!(m[(0, 2)], 0.0);
        assert_eq!(m, m.transpose());
    }

    #[test]
    fn eigen_dense_tridiagonal_closed_form() {
        let sites = vec![Site(vec![-1]), Site(vec![0]), Site(vec![1])];
        let op = SchrodingerOperator::new(sites, vec![0.0; 3], 1.0).unwrap();
        let eig = eigen_dense(&op.assemble()).unwrap();
        let sqrt2 = std::f64::consts::SQRT_2;
        let expected = [-2.0 - sqrt2, -2.0, -2.0 + sqrt2];
        for (ev, ex) in eig.eigenvalues.iter().zip(expected) {
            assert_relative_eq!(*ev, ex, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigen_dense_trace_identity() {
        let (op, _) = random_weibull_operator(2, 2, 2.0, 1.0, 7);
        let m = op.assemble();
        let eig = eigen_dense(&m).unwrap();
        let trace: f64 = (0..m.nrows()).map(|i| m[(i, i)]).sum();
        let sum: f64 = eig.eigenvalues.iter().sum();
        assert!((trace - sum).abs() <= 1e-12 * (1.0 + trace.abs()) * m.nrows() as f64);
    }

    #[test]
    fn eigen_dense_rejects_asymmetric() {
        let mut m = DMatrix::zeros(2, 2);
        m[(0, 1)] = 1.0;
        assert!(matches!(eigen_dense(&m), Err(SpectralError::NonSymmetric)));
    }

    #[test]
    fn lambda_plus_bounds() {
        for seed in 0..20 {
            let (op, _) = random_weibull_operator(1, 5, 2.0, 1.0, seed);
            let lambda_plus = eigen_dense(&op.assemble()).unwrap().max_eigenvalue();
            let w_max = op.w_max();
            let two_d_kappa = 2.0 * op.dim() as f64 * op.kappa();
            assert!(w_max - two_d_kappa <= lambda_plus + 1e-12);
            assert!(lambda_plus <= w_max + 1e-12);
        }
    }

    #[test]
    fn green_single_site_closed_form() {
        let op = single_site_op(1.0, 1);
        let x = Site::origin(1);
        let lambda = 3.0;
        let exact = 1.0 / (lambda + 2.0);
        assert_relative_eq!(green_solve(&op, lambda, &x, &x).unwrap(), exact, epsilon = 1e-14);
        assert_relative_eq!(
            green_path(&op, lambda, &x, &x, 1e-12).unwrap(),
            exact,
            epsilon = 1e-12
        );
    }

    #[test]
    fn green_symmetry_and_positivity() {
        for seed in 0..10 {
            let (op, _) = random_weibull_operator(2, 2, 2.0, 1.0, seed);
            let lambda_plus = eigen_dense(&op.assemble()).unwrap().max_eigenvalue();
            let lambda = lambda_plus + 1.5;
            let x = Site(vec![0, 1]);
            let y = Site(vec![-1, -2]);
            let gxy = green_solve(&op, lambda, &x, &y).unwrap();
            let gyx = green_solve(&op, lambda, &y, &x).unwrap();
            assert!((gxy - gyx).abs() <= 1e-12 * (1.0 + gxy.abs()));
            assert!(gxy > 0.0);
        }
    }

    #[test]
    fn green_path_matches_solve_and_bounds() {
        for seed in 0..8 {
            let d = 1 + (seed as usize) % 2;
            let radius = if d == 1 { 10 } else { 2 };
            let (op, _) = random_weibull_operator(d, radius, 2.0, 1.0, derive_seed(3, seed));
            let eig = eigen_dense(&op.assemble()).unwrap();
            let lambda_plus = eig.max_eigenvalue();
            let two_d_kappa = 2.0 * d as f64 * op.kappa();
            let lambda = lambda_plus + two_d_kappa + 1.0;
            let x = Site::origin(d);
            let y = op.sites()[1].clone();
            let g_path = green_path(&op, lambda, &x, &y, 1e-12).unwrap();
            let g_solve = green_solve(&op, lambda, &x, &y).unwrap();
            assert!(
                (g_path - g_solve).abs() <= 1e-8 * g_solve.abs(),
                "path={g_path} solve={g_solve}"
            );
            // sandwich bounds in the convergent regime
            let dist = x.l1_dist(&y);
            let lower = (1.0 / op.kappa())
                * (op.kappa() / (lambda + two_d_kappa)).powi(dist as i32 + 1);
            let upper = (two_d_kappa / (lambda - lambda_plus)).powi(dist as i32)
                / (lambda - lambda_plus - two_d_kappa);
            assert!(g_path >= lower - 1e-14);
            assert!(g_path <= upper + 1e-14);
        }
    }

    #[test]
    fn green_path_rejects_near_spectrum() {
        let (op, _) = random_weibull_operator(1, 3, 2.0, 1.0, 5);
        let lambda_plus = eigen_dense(&op.assemble()).unwrap().max_eigenvalue();
        let x = Site::origin(1);
        let err = green_path(&op, lambda_plus + 1.0, &x, &x, 1e-10);
        assert!(matches!(
            err,
            Err(SpectralError::OutsideConvergenceRegime { .. })
        ));
    }

    #[test]
    fn ak_single_site() {
        let op = single_site_op(1.0, 1);
        let x0 = Site::origin(1);
        for h in [3.0, 5.0, 17.0] {
            let p = RankOnePerturbation::new(op.clone(), &x0, h).unwrap();
            let pair = principal_eigenvalue_ak(&p, 1e-10).unwrap();
            assert_relative_eq!(pair.lambda0, h - 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn ak_matches_dense_and_gap() {
        for seed in 0..12 {
            let d = 1 + (seed as usize) % 2;
            let radius = if d == 1 { 8 } else { 2 };
            let (op, x0) = random_weibull_operator(d, radius, 2.0, 1.0, derive_seed(11, seed));
            let two_d_kappa = 2.0 * d as f64 * op.kappa();
            let h = op.w_max() + two_d_kappa + 5.0 * op.kappa();
            let p = RankOnePerturbation::new(op, &x0, h).unwrap();
            let pair = principal_eigenvalue_ak(&p, 1e-10).unwrap();
            let eig = eigen_dense(&p.assemble()).unwrap();
            let lam_dense = eig.max_eigenvalue();
            assert!(
                (pair.lambda0 - lam_dense).abs() <= 1e-10 * (1.0 + lam_dense.abs()),
                "ak={} dense={}",
                pair.lambda0,
                lam_dense
            );
            // everything below λ₀ sits below w̄
            assert!(eig.second_eigenvalue().unwrap() <= p.base.w_max() + 1e-9);
            // eigenfunction alignment
            let cos = pair.psi0.dot(&eig.top_eigenvector()).abs();
            assert!(cos >= 1.0 - 1e-10, "cos={cos}");
        }
    }

    #[test]
    fn ak_rejects_small_coupling() {
        let (op, x0) = random_weibull_operator(1, 3, 2.0, 1.0, 2);
        let h = op.w_max(); // below w̄ + 2dκ
        let p = RankOnePerturbation::new(op, &x0, h).unwrap();
        assert!(matches!(
            principal_eigenvalue_ak(&p, 1e-10),
            Err(SpectralError::CouplingBelowThreshold { .. })
        ));
    }

    #[test]
    fn expansion_residual_single_site_zero() {
        let op = single_site_op(1.0, 1);
        let x0 = Site::origin(1);
        let p = RankOnePerturbation::new(op, &x0, 6.0).unwrap();
        let pair = principal_eigenvalue_ak(&p, 1e-10).unwrap();
        assert!(eigenvalue_expansion_check(&p, pair.lambda0, 0) < 1e-12);
    }

    #[test]
    fn expansion_residual_decreases() {
        for seed in 0..6 {
            let (op, x0) = random_weibull_operator(1, 6, 2.0, 1.0, derive_seed(23, seed));
            let h = op.w_max() + 4.0 * op.kappa() + 2.0;
            let p = RankOnePerturbation::new(op, &x0, h).unwrap();
            let pair = principal_eigenvalue_ak(&p, 1e-10).unwrap();
            let mut prev = f64::INFINITY;
            for n_max in 1..=5 {
                let r = eigenvalue_expansion_check(&p, pair.lambda0, n_max);
                assert!(r < prev + 1e-15, "n_max={n_max} r={r} prev={prev}");
                prev = r;
            }
        }
    }

    #[test]
    fn eigenfunction_localization_bound() {
        // |ψ₀(x) - 1_{x0}(x)| <= C (h - w̄)^{-(|x-x0|_1 + 1)} with a C that
        // stays put as h grows
        let (op, x0) = random_weibull_operator(1, 5, 2.0, 1.0, 77);
        let mut fitted = Vec::new();
        for mult in [1.0, 2.0, 4.0] {
            let h = (op.w_max() + 4.0 * op.kappa() + 3.0) * mult;
            let p = RankOnePerturbation::new(op.clone(), &x0, h).unwrap();
            let pair = principal_eigenvalue_ak(&p, 1e-10).unwrap();
            let mut c_max: f64 = 0.0;
            for (i, s) in p.base.sites().iter().enumerate() {
                let indicator = if *s == x0 { 1.0 } else { 0.0 };
                let err = (pair.psi0[i] - indicator).abs();
                let decay = (h - p.base.w_max()).powi(-(s.l1_dist(&x0) as i32 + 1));
                c_max = c_max.max(err / decay);
            }
            fitted.push(c_max);
        }
        for w in fitted.windows(2) {
            assert!(w[1] <= 4.0 * w[0] + 1.0, "C blew up: {fitted:?}");
        }
    }

    #[test]
    fn critical_coupling_single_site_diverges() {
        let op = single_site_op(1.0, 1);
        let h0 = critical_coupling(&op, &Site::origin(1)).unwrap();
        assert_eq!(h0, 0.0);
    }

    #[test]
    fn critical_coupling_disconnected_dense_scan() {
        // component A carries the top of the spectrum, x0 sits in a far
        // component B, so g stays finite at λ₊⁰ and h₀ > 0
        let mut sites = vec![Site(vec![10]), Site(vec![11]), Site(vec![12])];
        let mut w = vec![6.0, 7.0, 6.5];
        sites.extend([Site(vec![0]), Site(vec![1])]);
        w.extend([0.0, 0.2]);
        let op = SchrodingerOperator::new(sites, w, 1.0).unwrap();
        let x0 = Site(vec![0]);
        let h0 = critical_coupling(&op, &x0).unwrap();
        assert!(h0 > 0.0);
        assert!(h0 <= op.w_max() + 2.0 + 1e-9);
        let lambda_plus = eigen_dense(&op.assemble()).unwrap().max_eigenvalue();
        for factor in [0.5, 0.9] {
            let p = RankOnePerturbation::new(op.clone(), &x0, factor * h0).unwrap();
            let top = eigen_dense(&p.assemble()).unwrap().max_eigenvalue();
            assert!(top <= lambda_plus + 1e-9, "h={} top={top}", factor * h0);
        }
        for factor in [1.1, 2.0] {
            let p = RankOnePerturbation::new(op.clone(), &x0, factor * h0).unwrap();
            let top = eigen_dense(&p.assemble()).unwrap().max_eigenvalue();
            assert!(top > lambda_plus, "h={} top={top}", factor * h0);
        }
    }

    #[test]
    fn critical_coupling_below_lemma_threshold() {
        for seed in 0..10 {
            let (op, x0) = random_weibull_operator(1, 4, 2.0, 1.0, derive_seed(41, seed));
            let h0 = critical_coupling(&op, &x0).unwrap();
            assert!(h0 <= op.w_max() + 2.0 * op.kappa() * op.dim() as f64 + 1e-9);
        }
    }

    #[test]
    fn ak_resolvent_identity() {
        for seed in 0..5 {
            let (op, x0) = random_weibull_operator(1, 4, 2.0, 1.0, derive_seed(59, seed));
            let h = op.w_max() + 2.0 + 3.0;
            let p = RankOnePerturbation::new(op, &x0, h).unwrap();
            let spec0 = eigen_dense(&p.base.assemble()).unwrap().eigenvalues;
            let spec1 = eigen_dense(&p.assemble()).unwrap().eigenvalues;
            let top = spec1.last().unwrap().max(*spec0.last().unwrap());
            for k in 0..5 {
                let lambda = top + 0.7 + 0.9 * k as f64;
                let direct = perturbed_resolvent(&p, lambda).unwrap();
                let via_ak = ak_resolvent(&p, lambda).unwrap();
                let diff = (&direct - &via_ak).abs().max();
                assert!(diff <= 1e-9, "entrywise diff {diff}");
            }
        }
    }
}
