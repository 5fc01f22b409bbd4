//! Dirichlet solutions of the parabolic Anderson equation
//! `∂m̃/∂t = κΔm̃ + v m̃` on finite boxes, `m̃(·, 0) = 1`.
//!
//! The production path is the spectral expansion
//! `m̃(x,t) = Σ_n e^{tλ_n} ψ_n(x) (ψ_n, 1)`; an adaptive explicit
//! Runge-Kutta integrator is the structurally independent oracle.

use nalgebra::DVector;
use thiserror::Error;

use crate::lattice::Site;
use crate::quad::log_sum_exp;
use crate::spectral::{eigen_dense, SchrodingerOperator, SpectralError};

#[derive(Debug, Error)]
pub enum PdeError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("truncation bound requires R >= 2κt, got R = {r}, 2κt = {two_kt}")]
    BadTruncationRadius { r: f64, two_kt: f64 },
}

/// Solution values `m̃_U(x, t)` stored as `exp(log_scale) * scaled`, so
/// long times where `e^{tλ₀}` overflows stay representable in log space.
#[derive(Debug, Clone)]
pub struct SolutionField {
    pub sites: Vec<Site>,
    pub t: f64,
    pub log_scale: f64,
    pub scaled_values: Vec<f64>,
}

impl SolutionField {
    pub fn value(&self, i: usize) -> f64 {
        self.log_scale.exp() * self.scaled_values[i]
    }

    pub fn values(&self) -> Vec<f64> {
        self.scaled_values
            .iter()
            .map(|&v| self.log_scale.exp() * v)
            .collect()
    }

    pub fn log_value(&self, i: usize) -> f64 {
        self.log_scale + self.scaled_values[i].ln()
    }

    /// Total mass `Σ_x m̃(x, t)`.
    pub fn total_mass(&self) -> f64 {
        self.log_scale.exp() * self.scaled_sum()
    }

    pub fn log_total_mass(&self) -> f64 {
        self.log_scale + self.scaled_sum().ln()
    }

    fn scaled_sum(&self) -> f64 {
        self.scaled_values.iter().sum()
    }
}

/// Sum of the field values (free-function form of
/// [`SolutionField::total_mass`]).
pub fn total_mass(field: &SolutionField) -> f64 {
    field.total_mass()
}

/// Solves the Dirichlet problem by full dense eigendecomposition.
pub fn solve_spectral(op: &SchrodingerOperator, t: f64) -> Result<SolutionField, PdeError> {
    assert!(t >= 0.0);
    let eig = eigen_dense(&op.assemble())?;
    let n = op.len();
    let ones = DVector::from_element(n, 1.0);
    let coeffs: Vec<f64> = (0..n)
        .map(|k| eig.eigenvectors.column(k).dot(&ones))
        .collect();
    let lambda_max = eig.max_eigenvalue();
    let log_scale = t * lambda_max;
    let mut scaled = vec![0.0f64; n];
    for k in 0..n {
        let weight = (t * (eig.eigenvalues[k] - lambda_max)).exp() * coeffs[k];
        if weight == 0.0 {
            continue;
        }
        for (x, s) in scaled.iter_mut().enumerate() {
            *s += weight * eig.eigenvectors[(x, k)];
        }
    }
    // the field is nonnegative; wipe roundoff-level negatives
    for s in scaled.iter_mut() {
        if *s < 0.0 {
            debug_assert!(*s > -1e-9, "solution significantly negative: {s}");
            *s = 0.0;
        }
    }
    Ok(SolutionField {
        sites: op.sites().to_vec(),
        t,
        log_scale,
        scaled_values: scaled,
    })
}

/// Log of the total mass straight from the eigendecomposition,
/// `log Σ_n e^{tλ_n} (ψ_n, 1)²`; stable for arbitrarily large `t`.
pub fn log_total_mass_spectral(op: &SchrodingerOperator, t: f64) -> Result<f64, PdeError> {
    let eig = eigen_dense(&op.assemble())?;
    let n = op.len();
    let ones = DVector::from_element(n, 1.0);
    let terms: Vec<f64> = (0..n)
        .filter_map(|k| {
            let c = eig.eigenvectors.column(k).dot(&ones);
            (c != 0.0).then(|| t * eig.eigenvalues[k] + 2.0 * c.abs().ln())
        })
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Local error control for the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct DtControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl Default for DtControl {
    fn default() -> Self {
        DtControl {
            abs_tol: 1e-12,
            rel_tol: 1e-9,
            max_steps: 2_000_000,
        }
    }
}

/// Adaptive Dormand-Prince RK45 oracle with the all-ones initial
/// condition.
pub fn solve_ode(
    op: &SchrodingerOperator,
    t: f64,
    ctrl: DtControl,
) -> Result<SolutionField, PdeError> {
    let init = DVector::from_element(op.len(), 1.0);
    solve_ode_with_init(op, t, &init, ctrl)
}

/// Adaptive RK45 for `m' = Hm` from an arbitrary initial condition.
/// Positivity of the all-ones flow is preserved by step rejection.
pub fn solve_ode_with_init(
    op: &SchrodingerOperator,
    t: f64,
    init: &DVector<f64>,
    ctrl: DtControl,
) -> Result<SolutionField, PdeError> {
    assert!(t >= 0.0);
    let h_matrix = op.assemble();
    let rhs = |y: &DVector<f64>| &h_matrix * y;
    let nonnegative_flow = init.iter().all(|&v| v >= 0.0);

    let mut y = init.clone();
    let mut time = 0.0f64;
    let mut dt = (t / 100.0).min(0.1).max(1e-8);
    let mut steps = 0usize;
    while time < t {
        if steps > ctrl.max_steps {
            return Err(PdeError::StepUnderflow(time));
        }
        steps += 1;
        dt = dt.min(t - time);
        let (y5, err) = dp45_step(&rhs, &y, dt);
        let mut tol_norm = 0.0f64;
        for i in 0..y.len() {
            let sc = ctrl.abs_tol + ctrl.rel_tol * y[i].abs().max(y5[i].abs());
            tol_norm += (err[i] / sc).powi(2);
        }
        let err_norm = (tol_norm / y.len() as f64).sqrt();
        let positivity_ok = !nonnegative_flow || y5.iter().all(|&v| v >= 0.0);
        if err_norm <= 1.0 && positivity_ok {
            y = y5;
            time += dt;
        }
        let factor = if err_norm > 0.0 {
            (0.9 * err_norm.powf(-0.2)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        dt *= factor;
        if !positivity_ok {
            dt *= 0.5;
        }
        if dt < 1e-14 * (1.0 + t) {
            return Err(PdeError::StepUnderflow(time));
        }
    }
    Ok(SolutionField {
        sites: op.sites().to_vec(),
        t,
        log_scale: 0.0,
        scaled_values: y.iter().cloned().collect(),
    })
}

fn dp45_step(
    rhs: &impl Fn(&DVector<f64>) -> DVector<f64>,
    y: &DVector<f64>,
    dt: f64,
) -> (DVector<f64>, DVector<f64>) {
    let k1 = rhs(y);
    let k2 = rhs(&(y + dt * (1.0 / 5.0) * &k1));
    let k3 = rhs(&(y + dt * ((3.0 / 40.0) * &k1 + (9.0 / 40.0) * &k2)));
    let k4 = rhs(&(y + dt * ((44.0 / 45.0) * &k1 - (56.0 / 15.0) * &k2 + (32.0 / 9.0) * &k3)));
    let k5 = rhs(
        &(y + dt
            * ((19372.0 / 6561.0) * &k1 - (25360.0 / 2187.0) * &k2 + (64448.0 / 6561.0) * &k3
                - (212.0 / 729.0) * &k4)),
    );
    let k6 = rhs(
        &(y + dt
            * ((9017.0 / 3168.0) * &k1 - (355.0 / 33.0) * &k2
                + (46732.0 / 5247.0) * &k3
                + (49.0 / 176.0) * &k4
                - (5103.0 / 18656.0) * &k5)),
    );
    let y5 = y + dt
        * ((35.0 / 384.0) * &k1 + (500.0 / 1113.0) * &k3 + (125.0 / 192.0) * &k4
            - (2187.0 / 6784.0) * &k5
            + (11.0 / 84.0) * &k6);
    let k7 = rhs(&y5);
    let y4 = y + dt
        * ((5179.0 / 57600.0) * &k1 + (7571.0 / 16695.0) * &k3 + (393.0 / 640.0) * &k4
            - (92097.0 / 339200.0) * &k5
            + (187.0 / 2100.0) * &k6
            + (1.0 / 40.0) * &k7);
    let err = &y5 - y4;
    (y5, err)
}

/// Rate function `I(y) = y sinh⁻¹(y) - √(1+y²) + 1` of the truncation
/// lemma.
pub fn large_deviation_rate(y: f64) -> f64 {
    assert!(y >= 0.0);
    y * y.asinh() - (1.0 + y * y).sqrt() + 1.0
}

/// Log of the factor `(R+1)^d e^{-2βκt I(R/2κt)} e^{H(βt)}` multiplying
/// the symbolic constant in the truncation bound; requires `R >= 2κt`.
pub fn truncation_bound_log_factor(
    r: f64,
    t: f64,
    beta: f64,
    kappa: f64,
    d: usize,
    h_beta_t: f64,
) -> Result<f64, PdeError> {
    let two_kt = 2.0 * kappa * t;
    if r < two_kt {
        return Err(PdeError::BadTruncationRadius { r, two_kt });
    }
    Ok(d as f64 * (r + 1.0).ln() - 2.0 * beta * kappa * t * large_deviation_rate(r / two_kt)
        + h_beta_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeBox;
    use crate::rng::derive_seed;
    use crate::spectral::random_weibull_operator;
    use approx::assert_relative_eq;

    fn clipped_operator(d: usize, radius: i64, seed: u64, clip: f64) -> SchrodingerOperator {
        let (op, _) = random_weibull_operator(d, radius, 2.0, 1.0, seed);
        let w: Vec<f64> = op.potential().iter().map(|&v| v.min(clip)).collect();
        SchrodingerOperator::new(op.sites().to_vec(), w, op.kappa()).unwrap()
    }

    #[test]
    fn single_site_closed_form() {
        let op =
            SchrodingerOperator::new(vec![Site::origin(1)], vec![0.0], 1.0).unwrap();
        let f = solve_spectral(&op, 1.0).unwrap();
        assert_relative_eq!(f.value(0), (-2.0f64).exp(), epsilon = 1e-14);
        let g = solve_ode(&op, 1.0, DtControl::default()).unwrap();
        assert!((g.value(0) - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn time_zero_is_all_ones() {
        let op = clipped_operator(2, 2, 3, 5.0);
        let f = solve_spectral(&op, 0.0).unwrap();
        for i in 0..op.len() {
            assert_relative_eq!(f.value(i), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn spectral_matches_ode() {
        for seed in 0..6 {
            let d = 1 + (seed as usize) % 2;
            let radius = if d == 1 { 10 } else { 2 };
            let op = clipped_operator(d, radius, derive_seed(17, seed), 5.0);
            let t = 1.0 + (seed as f64) * 0.7;
            let spectral = solve_spectral(&op, t).unwrap();
            let ode = solve_ode(&op, t, DtControl::default()).unwrap();
            for i in 0..op.len() {
                let a = spectral.value(i);
                let b = ode.value(i);
                assert!(
                    (a - b).abs() <= 1e-6 * (1.0 + a.abs()),
                    "site {i}: spectral={a} ode={b}"
                );
            }
        }
    }

    #[test]
    fn zero_potential_is_substochastic() {
        let b = LatticeBox::centered(3, 1);
        let op =
            SchrodingerOperator::new(b.sites().collect(), vec![0.0; b.cardinality()], 1.0)
                .unwrap();
        let f = solve_spectral(&op, 2.0).unwrap();
        for i in 0..op.len() {
            assert!(f.value(i) <= 1.0 + 1e-12);
            assert!(f.value(i) >= 0.0);
        }
    }

    #[test]
    fn ode_is_linear_in_initial_condition() {
        let op = clipped_operator(1, 4, 9, 4.0);
        let ones = DVector::from_element(op.len(), 1.0);
        let twos = DVector::from_element(op.len(), 2.0);
        let a = solve_ode_with_init(&op, 1.5, &ones, DtControl::default()).unwrap();
        let b = solve_ode_with_init(&op, 1.5, &twos, DtControl::default()).unwrap();
        for i in 0..op.len() {
            assert_relative_eq!(2.0 * a.value(i), b.value(i), max_relative = 1e-7);
        }
    }

    #[test]
    fn total_mass_examples() {
        let b = LatticeBox::centered(2, 2);
        let op =
            SchrodingerOperator::new(b.sites().collect(), vec![0.0; b.cardinality()], 1.0)
                .unwrap();
        let f = solve_spectral(&op, 0.0).unwrap();
        assert_relative_eq!(total_mass(&f), b.cardinality() as f64, epsilon = 1e-8);

        let single = SchrodingerOperator::new(vec![Site::origin(1)], vec![3.0], 1.0).unwrap();
        let f = solve_spectral(&single, 2.0).unwrap();
        assert_relative_eq!(total_mass(&f), ((3.0 - 2.0) * 2.0f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn total_mass_rayleigh_bound() {
        for seed in 0..5 {
            let op = clipped_operator(1, 6, derive_seed(29, seed), 5.0);
            let t = 2.0;
            let f = solve_spectral(&op, t).unwrap();
            let lambda0 = eigen_dense(&op.assemble()).unwrap().max_eigenvalue();
            assert!(f.total_mass() <= (t * lambda0).exp() * op.len() as f64 * (1.0 + 1e-10));
            assert_relative_eq!(
                f.log_total_mass(),
                log_total_mass_spectral(&op, t).unwrap(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn monotone_in_potential() {
        for seed in 0..5 {
            let op1 = clipped_operator(1, 5, derive_seed(31, seed), 4.0);
            let bumped: Vec<f64> = op1.potential().iter().map(|&v| v + 0.5).collect();
            let op2 =
                SchrodingerOperator::new(op1.sites().to_vec(), bumped, op1.kappa()).unwrap();
            let f1 = solve_spectral(&op1, 1.7).unwrap();
            let f2 = solve_spectral(&op2, 1.7).unwrap();
            for i in 0..op1.len() {
                assert!(f1.value(i) <= f2.value(i) * (1.0 + 1e-9) + 1e-12);
            }
        }
    }

    #[test]
    fn monotone_in_domain() {
        for seed in 0..5 {
            let op2 = clipped_operator(1, 6, derive_seed(37, seed), 4.0);
            // restrict to the inner box
            let inner = LatticeBox::centered(3, 1);
            let mut sites = Vec::new();
            let mut w = Vec::new();
            for (i, s) in op2.sites().iter().enumerate() {
                if inner.index_of(s).is_some() {
                    sites.push(s.clone());
                    w.push(op2.potential()[i]);
                }
            }
            let op1 = SchrodingerOperator::new(sites, w, op2.kappa()).unwrap();
            let f1 = solve_spectral(&op1, 2.0).unwrap();
            let f2 = solve_spectral(&op2, 2.0).unwrap();
            for (i, s) in op1.sites().iter().enumerate() {
                let j = op2.index_of(s).unwrap();
                assert!(f1.value(i) <= f2.value(j) * (1.0 + 1e-9) + 1e-12);
            }
        }
    }

    #[test]
    fn rate_function_shape() {
        assert_relative_eq!(large_deviation_rate(0.0), 0.0, epsilon = 1e-15);
        // increasing and convex on a grid
        let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let vals: Vec<f64> = grid.iter().map(|&y| large_deviation_rate(y)).collect();
        for w in vals.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in vals.windows(3) {
            assert!(w[2] - 2.0 * w[1] + w[0] >= -1e-12);
        }
    }

    #[test]
    fn truncation_factor_decreasing_in_radius() {
        let (t, beta, kappa, d) = (3.0, 1.0, 1.0, 1);
        let h = 4.2; // any fixed H(βt) value
        assert!(matches!(
            truncation_bound_log_factor(2.0 * kappa * t - 0.5, t, beta, kappa, d, h),
            Err(PdeError::BadTruncationRadius { .. })
        ));
        let mut prev = f64::INFINITY;
        let mut r = 2.0 * kappa * t;
        while r <= 10.0 * kappa * t {
            let f = truncation_bound_log_factor(r, t, beta, kappa, d, h).unwrap();
            if r > 2.0 * kappa * t {
                assert!(f < prev);
            }
            prev = f;
            r += 0.5;
        }
    }
}
