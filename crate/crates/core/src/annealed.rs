//! Annealed first-moment asymptotics: the cumulant generating function
//! `H(t) = log⟨e^{t v(0)}⟩` of the Weibull potential, Feynman-Kac Monte
//! Carlo of `⟨m(0,t)⟩ = E₀[exp(Σ_x H(L(t,x)))]` over random-walk local
//! times, the path-decomposition series with its `S₁`/`S₂` closed forms,
//! and the simplex `J`-integral identity.

use std::collections::HashMap;

use rayon::prelude::*;
use statrs::function::erf::erf;
use thiserror::Error;

use crate::lattice::{enumerate_paths, visit_profile, FullLattice, Site};
use crate::quad::{self, log_mean_exp, QuadError};
use crate::rng::{sample_exp, stream_rng};

#[derive(Debug, Error)]
pub enum AnnealedError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("multiplicity tuple too large: k <= 4 and Σn_i <= 8 required")]
    TupleTooLarge,
    #[error("path cap exceeded: {0}")]
    PathCap(String),
}

/// `⟨e^{tv}⟩ = ∫₀^∞ u^{ρ-1} e^{-u^ρ/ρ} e^{ut} du`, log scale.
///
/// For `t < 1` the integral is computed directly (with `u = z²` to smooth
/// the `u^{ρ-1}` endpoint); for `t >= 1` the substitution `u = w t^{1/(ρ-1)}`
/// centers the integrand at `w = 1` and the Laplace factor
/// `e^{t^{ρ'}/ρ'}` is pulled out analytically.
pub fn cumulant_h(t: f64, rho: f64) -> Result<f64, AnnealedError> {
    assert!(t >= 0.0 && rho > 1.0);
    if t == 0.0 {
        return Ok(0.0);
    }
    let tol = 1e-12;
    if t < 1.0 {
        // upper cutoff where u^ρ/ρ - ut < -200
        let mut upper: f64 = 4.0;
        while upper.powf(rho) / rho - upper * t < 200.0 {
            upper *= 2.0;
        }
        let val = quad::integrate(
            |z| {
                let u = z * z;
                2.0 * z * u.powf(rho - 1.0) * (-u.powf(rho) / rho + u * t).exp()
            },
            0.0,
            upper.sqrt(),
            tol,
        )?;
        Ok(val.ln())
    } else {
        let rho_prime = rho / (rho - 1.0);
        let t_pow = t.powf(rho_prime);
        // f(w) = w^ρ/ρ - w has its minimum -1/ρ' at w = 1
        let shifted = |w: f64| w.powf(rho) / rho - w + 1.0 / rho_prime;
        let mut upper: f64 = 3.0;
        while t_pow * shifted(upper) < 200.0 {
            upper *= 2.0;
        }
        let integrand = |w: f64| {
            if w <= 0.0 {
                0.0
            } else {
                w.powf(rho - 1.0) * (-t_pow * shifted(w)).exp()
            }
        };
        let val = quad::integrate(&integrand, 0.0, 1.0, 0.5 * tol)?
            + quad::integrate(&integrand, 1.0, upper, 0.5 * tol)?;
        Ok(rho_prime * t.ln() + t_pow / rho_prime + val.ln())
    }
}

/// Closed form of `H` at `ρ = 2`:
/// `⟨e^{tv}⟩ = 1 + t √(2π) e^{t²/2} Φ(t)`, written overflow-free.
pub fn cumulant_h_rho2_closed_form(t: f64) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let phi = 0.5 * (1.0 + erf(t / std::f64::consts::SQRT_2));
    t * t / 2.0 + (t * (2.0 * std::f64::consts::PI).sqrt() * phi + (-t * t / 2.0).exp()).ln()
}

/// Leading asymptotics `t^{ρ'}/ρ' + (ρ'/2) log t + ½ log(2π/(ρ-1))`; the
/// remainder `H - this` vanishes as `t → ∞`.
///
/// The constant is the Laplace-method value from
/// `f(w) = w^ρ/ρ - w = -1/ρ' + ½(ρ-1)(w-1)² + …`, i.e.
/// `∫ e^{-t^{ρ'}(f+1/ρ')} ≈ √(2π/((ρ-1)t^{ρ'}))`; cross-checked against
/// the ρ = 2 closed form.
pub fn cumulant_asymptotics(t: f64, rho: f64) -> f64 {
    let rho_prime = rho / (rho - 1.0);
    t.powf(rho_prime) / rho_prime
        + rho_prime / 2.0 * t.ln()
        + 0.5 * (2.0 * std::f64::consts::PI / (rho - 1.0)).ln()
}

/// `k`-th moment `⟨v^k⟩` of the Weibull potential by quadrature.
pub fn weibull_moment(k: u32, rho: f64) -> Result<f64, AnnealedError> {
    let mut upper: f64 = 4.0;
    while upper.powf(rho) / rho < 200.0 {
        upper *= 2.0;
    }
    Ok(quad::integrate(
        |z| {
            let u = z * z;
            2.0 * z * u.powf(rho - 1.0 + k as f64) * (-u.powf(rho) / rho).exp()
        },
        0.0,
        upper.sqrt(),
        1e-12,
    )?)
}

/// Tabulated `H` on `[0, t_max]` with Catmull-Rom interpolation; the
/// Feynman-Kac sampler evaluates `H` once per visited site per path, so
/// quadrature nodes are cached up front.
#[derive(Debug, Clone)]
pub struct CumulantTable {
    pub rho: f64,
    t_max: f64,
    step: f64,
    values: Vec<f64>,
}

impl CumulantTable {
    pub fn build(rho: f64, t_max: f64, n_nodes: usize) -> Result<Self, AnnealedError> {
        assert!(n_nodes >= 8);
        let step = t_max / (n_nodes - 1) as f64;
        let values = (0..n_nodes)
            .map(|i| cumulant_h(i as f64 * step, rho))
            .collect::<Result<Vec<f64>, _>>()?;
        Ok(CumulantTable {
            rho,
            t_max,
            step,
            values,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        debug_assert!((0.0..=self.t_max * (1.0 + 1e-12)).contains(&x));
        let pos = (x / self.step).min((self.values.len() - 1) as f64);
        let i = (pos.floor() as usize).min(self.values.len() - 2);
        let s = pos - i as f64;
        let n = self.values.len();
        let p1 = self.values[i];
        let p2 = self.values[i + 1];
        let p0 = if i == 0 { 2.0 * p1 - p2 } else { self.values[i - 1] };
        let p3 = if i + 2 >= n {
            2.0 * p2 - p1
        } else {
            self.values[i + 2]
        };
        // Catmull-Rom cubic
        0.5 * (2.0 * p1
            + (p2 - p0) * s
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * s * s
            + (3.0 * p1 - p0 - 3.0 * p2 + p3) * s * s * s)
    }
}

/// Feynman-Kac Monte Carlo estimate of `log⟨m(0,t)⟩` with jackknife
/// standard error (on the log scale).
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub log_mean: f64,
    pub log_std_error: f64,
    pub n_paths: usize,
}

/// `⟨m(0,t)⟩ = E₀[exp(Σ_x H(L(t,x)))]` over continuous-time simple random
/// walks of total jump rate `2dκ`, local times accumulated exactly from
/// exponential holding times. Generic in the per-site weight function so
/// degenerate checks can replace `H`.
pub fn annealed_mean_mc_with(
    t: f64,
    d: usize,
    kappa: f64,
    h_fn: &(impl Fn(f64) -> f64 + Sync),
    n_paths: usize,
    seed: u64,
) -> McEstimate {
    let rate = 2.0 * d as f64 * kappa;
    let log_weights: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, rep as u64);
            let mut local: HashMap<Site, f64> = HashMap::new();
            let mut current = Site::origin(d);
            let mut remaining = t;
            loop {
                let hold = sample_exp(&mut rng) / rate;
                if hold >= remaining {
                    *local.entry(current).or_insert(0.0) += remaining;
                    break;
                }
                *local.entry(current.clone()).or_insert(0.0) += hold;
                remaining -= hold;
                let axis = rand::Rng::random_range(&mut rng, 0..d);
                let sign = if rand::Rng::random::<bool>(&mut rng) { 1 } else { -1 };
                current.0[axis] += sign;
            }
            local.values().map(|&lt| h_fn(lt)).sum()
        })
        .collect();

    let log_mean = log_mean_exp(&log_weights);
    // jackknife over blocks
    let n_blocks = 50.min(n_paths / 20).max(2);
    let block_size = n_paths / n_blocks;
    let mut leave_outs = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let mut rest: Vec<f64> = Vec::with_capacity(n_paths - block_size);
        rest.extend_from_slice(&log_weights[..b * block_size]);
        rest.extend_from_slice(&log_weights[((b + 1) * block_size).min(n_paths)..]);
        leave_outs.push(log_mean_exp(&rest));
    }
    let mean_lo = leave_outs.iter().sum::<f64>() / n_blocks as f64;
    let var = leave_outs
        .iter()
        .map(|&v| (v - mean_lo).powi(2))
        .sum::<f64>()
        * (n_blocks as f64 - 1.0)
        / n_blocks as f64;
    McEstimate {
        log_mean,
        log_std_error: var.sqrt(),
        n_paths,
    }
}

/// The production sampler with the real cumulant table.
pub fn annealed_mean_mc(
    t: f64,
    d: usize,
    kappa: f64,
    rho: f64,
    n_paths: usize,
    seed: u64,
) -> Result<McEstimate, AnnealedError> {
    let table = CumulantTable::build(rho, t * (1.0 + 1e-9), 2048)?;
    Ok(annealed_mean_mc_with(
        t,
        d,
        kappa,
        &|lt| table.eval(lt),
        n_paths,
        seed,
    ))
}

/// Partial sums over path length `n <= n_max` of the series
/// `Σ_n κ^{n-1} t^{-(ρ'-1)n} Σ_{γ∈P^n(0)} Σ_i t^{ρ'(n_i - 1/2)}/(n_i-1)!`.
pub fn annealed_series(
    t: f64,
    rho_prime: f64,
    d: usize,
    kappa: f64,
    n_max: usize,
) -> Result<Vec<f64>, AnnealedError> {
    let origin = Site::origin(d);
    let mut partial = Vec::with_capacity(n_max);
    let mut acc = 0.0;
    for n in 1..=n_max {
        let mut term = 0.0;
        // all length-n paths from the origin, any endpoint
        for endpoint in reachable_endpoints(d, n) {
            let paths = enumerate_paths(&FullLattice, &origin, &endpoint, n, 1e7)
                .map_err(|e| AnnealedError::PathCap(e.to_string()))?;
            for p in &paths {
                let profile = visit_profile(&p);
                for &ni in &profile.multiplicities {
                    term += t.powf(rho_prime * (ni as f64 - 0.5)) / factorial(ni - 1);
                }
            }
        }
        acc += kappa.powi(n as i32 - 1) * t.powf(-(rho_prime - 1.0) * n as f64) * term;
        partial.push(acc);
    }
    Ok(partial)
}

fn reachable_endpoints(d: usize, n: usize) -> Vec<Site> {
    // endpoints of length-n paths have |x|₁ <= n-1 with matching parity
    let radius = (n - 1) as i64;
    let grid = crate::lattice::LatticeBox::centered(radius.max(1), d);
    grid.sites()
        .filter(|s| {
            let dist = s.l1_dist(&Site::origin(d));
            dist <= radius && (radius - dist) % 2 == 0
        })
        .collect()
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// `S₁` series terms from explicitly enumerated dominant loop paths
/// (origin visited more than half the time): the `i = 1` contribution
/// per half-length `m`, at `κ = 1`.
pub fn s1_terms_from_paths(
    t: f64,
    rho_prime: f64,
    d: usize,
    m_max: usize,
) -> Result<Vec<f64>, AnnealedError> {
    let origin = Site::origin(d);
    let mut terms = Vec::with_capacity(m_max + 1);
    // m = 0: the trivial path
    terms.push(t.powf(1.0 - rho_prime / 2.0));
    for m in 1..=m_max {
        let n = 2 * m + 1;
        let paths = enumerate_paths(&FullLattice, &origin, &origin, n, 1e7)
            .map_err(|e| AnnealedError::PathCap(e.to_string()))?;
        let mut term = 0.0;
        for p in &paths {
            let profile = visit_profile(&p);
            let n1 = profile.multiplicities[0];
            if 2 * n1 <= n {
                continue; // not a dominant loop path
            }
            debug_assert_eq!(n1, m + 1);
            term += t.powf(rho_prime * (n1 as f64 - 0.5)) / factorial(n1 - 1);
        }
        terms.push(term * t.powf(-(rho_prime - 1.0) * n as f64));
    }
    Ok(terms)
}

/// Closed-form `S₁ = t^{1-ρ'/2} e^{2d t^{2-ρ'}}` (κ = 1).
pub fn s1_closed_form(t: f64, rho_prime: f64, d: usize) -> f64 {
    t.powf(1.0 - rho_prime / 2.0) * (2.0 * d as f64 * t.powf(2.0 - rho_prime)).exp()
}

/// Series term `t^{1-ρ'/2} (2d t^{2-ρ'})^m / m!` of `S₁`.
pub fn s1_series_term(t: f64, rho_prime: f64, d: usize, m: usize) -> f64 {
    t.powf(1.0 - rho_prime / 2.0) * (2.0 * d as f64 * t.powf(2.0 - rho_prime)).powi(m as i32)
        / factorial(m)
}

/// Closed-form `S₂ = t^{1-ρ'/2} · 2d/(t^{2(ρ'-1)} - 2d)` (κ = 1);
/// requires `t^{2(ρ'-1)} > 2d`.
pub fn s2_closed_form(t: f64, rho_prime: f64, d: usize) -> f64 {
    let x = 2.0 * d as f64 / t.powf(2.0 * (rho_prime - 1.0));
    assert!(x < 1.0, "geometric series requires t^(2(rho'-1)) > 2d");
    t.powf(1.0 - rho_prime / 2.0) * x / (1.0 - x)
}

/// Partial geometric sum `t^{1-ρ'/2} Σ_{m=1..m_max} (2d/t^{2(ρ'-1)})^m`.
pub fn s2_series_sum(t: f64, rho_prime: f64, d: usize, m_max: usize) -> f64 {
    let x = 2.0 * d as f64 / t.powf(2.0 * (rho_prime - 1.0));
    let mut acc = 0.0;
    for m in 1..=m_max {
        acc += x.powi(m as i32);
    }
    t.powf(1.0 - rho_prime / 2.0) * acc
}

/// Simplex integral `J_{n₁..n_k}(u) = ∫_{Σx_i < u} Π x_i^{n_i - 1} dx` by
/// recursive adaptive quadrature.
pub fn j_integral(multiplicities: &[usize], u: f64, tol: f64) -> Result<f64, AnnealedError> {
    match multiplicities.split_last() {
        None => Ok(1.0),
        Some((&nk, rest)) => {
            if rest.is_empty() {
                return Ok(u.powi(nk as i32) / nk as f64);
            }
            Ok(quad::integrate(
                |x| {
                    x.powi(nk as i32 - 1)
                        * j_integral(rest, u - x, tol * 0.25).unwrap_or(f64::NAN)
                },
                0.0,
                u,
                tol,
            )?)
        }
    }
}

/// Numeric `∫₀^∞ J_{n₁..n_k}(u) e^{-u} du` against the exact
/// `Π (n_i - 1)!`; `k <= 4` and `Σ n_i <= 8`.
pub fn j_integral_check(multiplicities: &[usize]) -> Result<(f64, f64), AnnealedError> {
    let total: usize = multiplicities.iter().sum();
    if multiplicities.len() > 4 || total > 8 || multiplicities.iter().any(|&n| n == 0) {
        return Err(AnnealedError::TupleTooLarge);
    }
    let exact: f64 = multiplicities
        .iter()
        .map(|&n| factorial(n - 1))
        .product();
    let upper = 60.0;
    let numeric = quad::integrate(
        |u| j_integral(multiplicities, u, 1e-11).unwrap_or(f64::NAN) * (-u).exp(),
        0.0,
        upper,
        1e-10 * exact.max(1.0),
    )?;
    Ok((numeric, exact))
}

/// Log of the annealed first-moment formula
/// `(π/(ρ-1))^{1/2} t^{1-ρ'/2} e^{t^{ρ'}/ρ' - 2d(κt - t^{2-ρ'})}`.
pub fn theorem_formula_log(t: f64, rho: f64, kappa: f64, d: usize) -> f64 {
    assert!(t > 0.0);
    let rho_prime = rho / (rho - 1.0);
    0.5 * (std::f64::consts::PI / (rho - 1.0)).ln()
        + (1.0 - rho_prime / 2.0) * t.ln()
        + t.powf(rho_prime) / rho_prime
        - 2.0 * d as f64 * (kappa * t - t.powf(2.0 - rho_prime))
}
