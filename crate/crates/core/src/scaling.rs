//! The scaling function `h(t)` and its machinery: derived constants,
//! the truncated eigenvalue functional `B_N(s, v)`, the expectation
//! `ζ_N(s) = E[exp(-B_N(s,v)^ρ/ρ)]`, the implicit equation
//! `ζ_M(h) = L^{-d}`, the recursive expansion `h_0 + h_1 + ... + h_M`,
//! closed-form expansions by `ρ`-range, and the saddle-point analysis of
//! the inner expectation for `3 < ρ <= 4`.
//!
//! All expectations use common random environments within one solve, so
//! per-sample monotonicity in `s` is exact and bisection is sound despite
//! Monte Carlo noise.

use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{LatticeBox, LoopTable, Site};
use crate::quad::{self, log_mean_exp, QuadError};
use crate::rng::{derive_seed, sample_weibull, stream_rng};

#[derive(Debug, Error)]
pub enum ScalingError {
    #[error("invalid parameters: {0}")]
    BadParameters(String),
    #[error("target L^-d = {target:.3e} outside the range (0, {upper:.3e}] of ζ_M (t below t₀)")]
    TargetOutOfRange { target: f64, upper: f64 },
    #[error("h₀ = {0} is negative: τ too small for the expansion")]
    ExpansionDomain(f64),
    #[error("quadrature estimator only supports d = 1, N = 1")]
    UnsupportedQuadrature,
    #[error("ρ = {0} outside the supported expansion ranges [the closed forms stop at (3+√17)/2]")]
    RhoOutOfRange(f64),
    #[error(transparent)]
    Quad(#[from] QuadError),
}

/// Derived constants for a parameter set `(ρ, γ, κ, d)`.
#[derive(Debug, Clone)]
pub struct ScalingConstants {
    pub rho: f64,
    pub rho_prime: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub d: usize,
    /// `𝒜₀ = (γρ/ρ')^{1/ρ}`.
    pub a0: f64,
    /// Stable exponent `α = (γρ/ρ')^{1/ρ'}`.
    pub alpha: f64,
    /// `γ₁ = ρ'/ρ`.
    pub gamma1: f64,
    /// `γ₂ = (ρ'/ρ) 2^{1/ρ'}`.
    pub gamma2: f64,
    /// Truncation depth `M = min{j >= 1 : 2jρ' > 2(j+1)}`.
    pub m: usize,
    /// `𝓑_N` for `N = 1..=m`.
    pub bscript: Vec<f64>,
}

/// `M = min{j >= 1 : 2jρ' > 2(j+1)}`.
pub fn compute_m(rho: f64) -> usize {
    assert!(rho > 1.0);
    let rho_prime = rho / (rho - 1.0);
    let mut j = 1usize;
    while 2.0 * j as f64 * rho_prime <= 2.0 * (j as f64 + 1.0) {
        j += 1;
    }
    j
}

/// `𝓑_N = 2dκ / (1 + Σ_{j<=N} |P^{2j+1}(0,0)| (2d)^{-2j})`.
pub fn bscript_n(table: &LoopTable, kappa: f64, n: usize) -> f64 {
    let d = table.d;
    let two_d = 2.0 * d as f64;
    let mut denom = 1.0;
    for j in 1..=n {
        denom += table.counts[j - 1] as f64 * two_d.powi(-2 * j as i32);
    }
    two_d * kappa / denom
}

impl ScalingConstants {
    pub fn new(rho: f64, gamma: f64, kappa: f64, d: usize) -> Result<Self, ScalingError> {
        if !(rho > 1.0) || !(gamma > 0.0) || !(kappa > 0.0) || d == 0 {
            return Err(ScalingError::BadParameters(format!(
                "need rho > 1, gamma > 0, kappa > 0, d >= 1; got ({rho}, {gamma}, {kappa}, {d})"
            )));
        }
        let rho_prime = rho / (rho - 1.0);
        let base = gamma * rho / rho_prime;
        let m = compute_m(rho);
        let table = LoopTable::build(d, m);
        let bscript = (1..=m).map(|n| bscript_n(&table, kappa, n)).collect();
        Ok(ScalingConstants {
            rho,
            rho_prime,
            gamma,
            kappa,
            d,
            a0: base.powf(1.0 / rho),
            alpha: base.powf(1.0 / rho_prime),
            gamma1: rho_prime / rho,
            gamma2: rho_prime / rho * 2.0f64.powf(1.0 / rho_prime),
            m,
            bscript,
        })
    }

    /// `𝓑_M` for the truncation depth `M`.
    pub fn bscript_m(&self) -> f64 {
        self.bscript[self.m - 1]
    }

    pub fn two_d_kappa(&self) -> f64 {
        2.0 * self.d as f64 * self.kappa
    }

    /// Whether the stable exponent lands in `(0, 2)`; callers should treat
    /// parameter sets outside this range as outside the stable regime.
    pub fn alpha_in_stable_range(&self) -> bool {
        self.alpha > 0.0 && self.alpha < 2.0
    }

    /// `τ` from the box scale `L`, normalized so that
    /// `γ τ^{ρ'}/ρ' = d log L`, i.e. `ζ_M(h) = L^{-d} = e^{-γτ^{ρ'}/ρ'}`.
    /// This is the normalization under which the recursive expansion is
    /// exact; with `L = e^{γ t^{ρ'}/ρ'}` it gives `τ = d^{1/ρ'} t ≍ t`.
    pub fn tau_from_scale(&self, l_scale: f64) -> f64 {
        assert!(l_scale > 1.0);
        self.tau_from_log_scale(l_scale.ln())
    }

    /// [`Self::tau_from_scale`] with `log L` supplied directly, for
    /// scales beyond floating-point range.
    pub fn tau_from_log_scale(&self, log_l: f64) -> f64 {
        assert!(log_l > 0.0);
        (self.d as f64 * self.rho_prime / self.gamma * log_l).powf(1.0 / self.rho_prime)
    }

    /// The literal `τ(L) = (dρ'/γ) log L` (no `1/ρ'` power); reported for
    /// comparison with [`Self::tau_from_scale`], which feeds the
    /// expansion.
    pub fn tau_literal(&self, l_scale: f64) -> f64 {
        self.d as f64 * self.rho_prime / self.gamma * l_scale.ln()
    }

    /// Inverse of [`Self::tau_from_scale`] on the log scale:
    /// `log L = γ τ^{ρ'}/(ρ' d)`.
    pub fn log_scale_from_tau(&self, tau: f64) -> f64 {
        self.gamma * tau.powf(self.rho_prime) / (self.rho_prime * self.d as f64)
    }

    /// Inverse of [`Self::tau_from_scale`]; overflows for large `τ`, use
    /// [`Self::log_scale_from_tau`] then.
    pub fn scale_from_tau(&self, tau: f64) -> f64 {
        self.log_scale_from_tau(tau).exp()
    }
}

/// One realization of the potential near the origin: values on the
/// radius-`N` box with the origin forced to zero (`v₀`).
#[derive(Debug, Clone)]
pub struct LocalEnvironment {
    pub env_box: LatticeBox,
    pub values: Vec<f64>,
}

impl LocalEnvironment {
    pub fn sample(table: &LoopTable, rho: f64, seed: u64) -> Self {
        let env_box = table.env_box.clone();
        let origin = env_box.index_of(&Site::origin(table.d)).unwrap();
        let values = (0..env_box.cardinality())
            .map(|i| {
                if i == origin {
                    0.0
                } else {
                    let mut rng = stream_rng(seed, i as u64);
                    sample_weibull(&mut rng, rho)
                }
            })
            .collect();
        LocalEnvironment { env_box, values }
    }
}

/// `B_N(s, v) = (s + 2dκ) / (1 + Σ_{j<=N} Σ_{loops} Π_{z≠z₁}
/// κ/(2dκ + (s - v₀(z))₊))`, evaluated over the precomputed loop table.
pub fn b_n(s: f64, env: &[f64], table: &LoopTable, n: usize, kappa: f64) -> f64 {
    debug_assert!(n <= table.n_max);
    let two_d_kappa = 2.0 * table.d as f64 * kappa;
    let mut denom = 1.0;
    for lp in &table.loops {
        if lp.half_len > n {
            continue;
        }
        let mut prod = 1.0;
        for &(idx, mult) in &lp.factors {
            let factor = kappa / (two_d_kappa + (s - env[idx]).max(0.0));
            prod *= factor.powi(mult as i32);
        }
        denom += prod;
    }
    (s + two_d_kappa) / denom
}

/// Monte Carlo sampler for `ζ_N` with common random environments: one
/// fixed set of local environments shared across every `s` (and every
/// truncation depth) in a solve.
#[derive(Debug)]
pub struct ZetaSampler {
    pub rho: f64,
    pub kappa: f64,
    pub table: LoopTable,
    envs: Vec<Vec<f64>>,
}

impl ZetaSampler {
    pub fn new(d: usize, n_max: usize, rho: f64, kappa: f64, n_samples: usize, seed: u64) -> Self {
        let table = LoopTable::build(d, n_max);
        let env_box = table.env_box.clone();
        let origin = env_box.index_of(&Site::origin(d)).unwrap();
        let n_sites = env_box.cardinality();
        let envs: Vec<Vec<f64>> = (0..n_samples)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = derive_seed(seed, rep as u64);
                (0..n_sites)
                    .map(|i| {
                        if i == origin {
                            0.0
                        } else {
                            let mut rng = stream_rng(rep_seed, i as u64);
                            sample_weibull(&mut rng, rho)
                        }
                    })
                    .collect()
            })
            .collect();
        ZetaSampler {
            rho,
            kappa,
            table,
            envs,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.envs.len()
    }

    /// Per-sample exponents `-B_N(s, v_i)^ρ/ρ`.
    fn exponents(&self, s: f64, n: usize) -> Vec<f64> {
        self.envs
            .par_iter()
            .map(|env| -b_n(s, env, &self.table, n, self.kappa).powf(self.rho) / self.rho)
            .collect()
    }

    /// `log ζ̂_N(s)`, stable for arbitrarily small values.
    pub fn zeta_log(&self, s: f64, n: usize) -> f64 {
        log_mean_exp(&self.exponents(s, n))
    }

    /// `(ζ̂_N(s), standard error)` on the linear scale.
    pub fn zeta_with_error(&self, s: f64, n: usize) -> (f64, f64) {
        let exps = self.exponents(s, n);
        let vals: Vec<f64> = exps.iter().map(|&e| e.exp()).collect();
        let n_f = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n_f;
        let var = vals.iter().map(|&v| (v - mean).powi(2)).sum::<f64>() / (n_f - 1.0);
        (mean, (var / n_f).sqrt())
    }
}

/// Estimator choice for [`zeta_n`].
pub enum ZetaEstimator<'a> {
    MonteCarlo(&'a ZetaSampler),
    /// 2-dimensional adaptive product quadrature over the two neighbor
    /// values; `d = 1`, `N = 1` only.
    Quadrature { tol: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct ZetaEstimate {
    pub value: f64,
    pub log_value: f64,
    /// Standard error (Monte Carlo) or requested tolerance (quadrature).
    pub error: f64,
}

/// `ζ_N(s) = E_μ[exp(-B_N(s,v)^ρ/ρ)]`.
pub fn zeta_n(
    s: f64,
    n: usize,
    consts: &ScalingConstants,
    estimator: &ZetaEstimator,
) -> Result<ZetaEstimate, ScalingError> {
    assert!(s >= 0.0, "ζ_N is defined on s >= 0");
    match estimator {
        ZetaEstimator::MonteCarlo(sampler) => {
            let (value, error) = sampler.zeta_with_error(s, n);
            Ok(ZetaEstimate {
                value,
                log_value: sampler.zeta_log(s, n),
                error,
            })
        }
        ZetaEstimator::Quadrature { tol } => {
            if consts.d != 1 || n != 1 {
                return Err(ScalingError::UnsupportedQuadrature);
            }
            let value = zeta_quadrature_d1n1(s, consts.rho, consts.kappa, *tol)?;
            Ok(ZetaEstimate {
                value,
                log_value: value.ln(),
                error: *tol,
            })
        }
    }
}

/// `ζ_1(s)` for `d = 1` by product quadrature in probability space:
/// substituting `p = exp(-v^ρ/ρ)` per neighbor turns the expectation into
/// `∫₀¹∫₀¹ exp(-B(s, v(p₁), v(p₂))^ρ/ρ) dp₁ dp₂`.
fn zeta_quadrature_d1n1(s: f64, rho: f64, kappa: f64, tol: f64) -> Result<f64, ScalingError> {
    let v_of_p = move |p: f64| -> f64 {
        if p >= 1.0 {
            0.0
        } else {
            (-rho * p.ln()).powf(1.0 / rho)
        }
    };
    let b = move |v1: f64, v2: f64| -> f64 {
        let two_k = 2.0 * kappa;
        let denom = 1.0
            + kappa / (two_k + s)
                * (kappa / (two_k + (s - v1).max(0.0)) + kappa / (two_k + (s - v2).max(0.0)));
        (s + two_k) / denom
    };
    // the positive part introduces a kink where v = s
    let p_kink = (-s.powf(rho) / rho).exp();
    let split = |f: &dyn Fn(f64) -> f64, tol: f64| -> Result<f64, QuadError> {
        if p_kink > 1e-14 && p_kink < 1.0 - 1e-14 {
            Ok(quad::integrate(f, 0.0, p_kink, 0.5 * tol)?
                + quad::integrate(f, p_kink, 1.0, 0.5 * tol)?)
        } else {
            quad::integrate(f, 0.0, 1.0, tol)
        }
    };
    let outer = |p1: f64| -> f64 {
        let v1 = v_of_p(p1);
        let inner = |p2: f64| (-b(v1, v_of_p(p2)).powf(rho) / rho).exp();
        split(&inner, 0.1 * tol).expect("inner quadrature")
    };
    Ok(split(&outer, tol)?)
}

/// Solution of `ζ_M(h) = L^{-d}` with its expansion terms and residual.
#[derive(Debug, Clone)]
pub struct ScalingSolution {
    /// `log L` (the linear scale overflows fast).
    pub log_l_scale: f64,
    pub tau: f64,
    pub h: f64,
    /// `[h_0, ..., h_M]` when `h_0 >= 0` at this `τ`, empty otherwise.
    pub expansion_terms: Vec<f64>,
    /// `|ζ̂_M(h) - L^{-d}|` on the linear scale (0 when `L^{-d}` underflows).
    pub residual: f64,
    /// `|log ζ̂_M(h) - log L^{-d}|`.
    pub log_residual: f64,
}

impl ScalingSolution {
    pub fn l_scale(&self) -> f64 {
        self.log_l_scale.exp()
    }

    pub fn expansion_sum(&self) -> Option<f64> {
        (!self.expansion_terms.is_empty()).then(|| self.expansion_terms.iter().sum())
    }
}

/// Solves `ζ_M(h(t)) = 1/L^d` by bisection on the common-random-number
/// estimate of `log ζ_M`; monotone per sample, so the bisection is exact
/// for the empirical measure.
pub fn solve_h(
    l_scale: f64,
    consts: &ScalingConstants,
    tol: f64,
    sampler: &ZetaSampler,
) -> Result<ScalingSolution, ScalingError> {
    if !(l_scale > 1.0) {
        return Err(ScalingError::BadParameters("need L > 1".into()));
    }
    solve_h_log(l_scale.ln(), consts, tol, sampler)
}

/// [`solve_h`] with `log L` supplied directly.
pub fn solve_h_log(
    log_l: f64,
    consts: &ScalingConstants,
    tol: f64,
    sampler: &ZetaSampler,
) -> Result<ScalingSolution, ScalingError> {
    if !(log_l > 0.0) {
        return Err(ScalingError::BadParameters("need log L > 0".into()));
    }
    let m = consts.m;
    let target_log = -(consts.d as f64) * log_l;
    let upper_log = -consts.bscript_m().powf(consts.rho) / consts.rho;
    if target_log > upper_log {
        return Err(ScalingError::TargetOutOfRange {
            target: target_log.exp(),
            upper: upper_log.exp(),
        });
    }

    // deterministic upper bracket from B_N(s, v) >= (s + 2dκ) 𝓑_M / (2dκ)
    let two_d_kappa = consts.two_d_kappa();
    let mut hi = (-target_log * consts.rho).powf(1.0 / consts.rho) * two_d_kappa
        / consts.bscript_m()
        - two_d_kappa
        + 1.0;
    hi = hi.max(1.0);
    while sampler.zeta_log(hi, m) > target_log {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(ScalingError::BadParameters(
                "upper bracket for h not found".into(),
            ));
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sampler.zeta_log(mid, m) > target_log {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * (1.0 + hi) {
            break;
        }
    }
    let h = 0.5 * (lo + hi);
    let log_residual = (sampler.zeta_log(h, m) - target_log).abs();
    let residual = target_log.exp() * ((log_residual).exp_m1()).abs();
    if log_residual > tol.max(1e-10) {
        return Err(ScalingError::BadParameters(format!(
            "solver residual {log_residual:.3e} above tolerance"
        )));
    }
    let tau = consts.tau_from_log_scale(log_l);
    let expansion_terms = h_expansion(tau, consts, sampler).unwrap_or_default();
    Ok(ScalingSolution {
        log_l_scale: log_l,
        tau,
        h,
        expansion_terms,
        residual,
        log_residual,
    })
}

/// Recursive expansion terms `[h_0, ..., h_M]`:
/// `h_0 = 𝒜₀ τ^{ρ'-1} - 2dκ` and
/// `h_j = 𝒜₀^{1-ρ} (γ τ^{ρ'-1}/ρ' + τ^{-1} log E[exp(-B_j(h_0+...+h_{j-1}, v)^ρ/ρ)])`.
pub fn h_expansion(
    tau: f64,
    consts: &ScalingConstants,
    sampler: &ZetaSampler,
) -> Result<Vec<f64>, ScalingError> {
    let h0 = consts.a0 * tau.powf(consts.rho_prime - 1.0) - consts.two_d_kappa();
    if h0 < 0.0 {
        return Err(ScalingError::ExpansionDomain(h0));
    }
    let mut terms = vec![h0];
    let prefactor = consts.a0.powf(1.0 - consts.rho);
    let drift = consts.gamma * tau.powf(consts.rho_prime - 1.0) / consts.rho_prime;
    for j in 1..=consts.m {
        let s: f64 = terms.iter().sum();
        if s < 0.0 {
            return Err(ScalingError::ExpansionDomain(s));
        }
        let log_e = sampler.zeta_log(s, j);
        terms.push(prefactor * (drift + log_e / tau));
    }
    Ok(terms)
}

/// The paper-range constants `K₁..K₅` entering the `3 <= ρ` expansion:
/// `K₁ = (γρ/ρ')κ²𝒜₀^{-3}` and `K₅ = ρ/(2(ρ-1))`.
#[derive(Debug, Clone, Copy)]
pub struct KConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
}

pub fn k_constants(consts: &ScalingConstants) -> KConstants {
    let a0 = consts.a0;
    let rho = consts.rho;
    let k1 = consts.gamma * rho / consts.rho_prime * consts.kappa * consts.kappa * a0.powi(-3);
    let k2 = a0.powf(2.0 - rho) * k1;
    let k3 = k1 * (a0 * k1).powf(1.0 / (rho - 1.0)) / a0.powf(rho - 1.0) * (1.0 - a0 / rho);
    let k4 = (3.0 - 2.0 * consts.rho_prime) * a0.ln()
        + 0.5 * (std::f64::consts::PI * (rho - 1.0)).ln()
        - a0.powf(3.0 - rho) * k1 * k1;
    let k5 = rho / (2.0 * (rho - 1.0));
    KConstants { k1, k2, k3, k4, k5 }
}

/// Closed-form partial expansion of `h` by `ρ`-range:
/// (i) `1 < ρ < 2`: `𝒜₀τ^{ρ'-1} - 2dκ`;
/// (ii) `2 <= ρ < 3`: adds `2dκ²𝒜₀^{-1} τ^{1-ρ'}`;
/// (iii) `3 <= ρ < (3+√17)/2`: adds the saddle-point terms through
/// `log τ / τ`. Unsupported beyond `(3+√17)/2`.
pub fn corollary_expansion(tau: f64, consts: &ScalingConstants) -> Result<f64, ScalingError> {
    let rho = consts.rho;
    let rp = consts.rho_prime;
    let a0 = consts.a0;
    let h0 = a0 * tau.powf(rp - 1.0) - consts.two_d_kappa();
    let two_d = 2.0 * consts.d as f64;
    let kappa2 = consts.kappa * consts.kappa;
    if rho < 2.0 {
        Ok(h0)
    } else if rho < 3.0 {
        // first correction 2dκ²𝒜₀^{-1} τ^{1-ρ'}, from
        // log E = -γτ^{ρ'}/ρ' + 2dκ²𝒜₀^{ρ-2}τ^{2-ρ'} + o(1)
        Ok(h0 + two_d * kappa2 / a0 * tau.powf(1.0 - rp))
    } else if rho < (3.0 + 17.0f64.sqrt()) / 2.0 {
        let k = k_constants(consts);
        let beta_pow = (3.0 - 2.0 * rp) * rho / (rho - 1.0);
        // Laplace expansion of the per-neighbor integral around its
        // maximizer x_t = K₁^{1/(ρ-1)} τ^{(3-2ρ')/(ρ-1)} (1 + o(1))
        let bracket = a0 * k.k1 * tau.powf(1.0 - rp)
            + (1.0 - 1.0 / rho) * k.k1.powf(rho / (rho - 1.0)) * tau.powf(beta_pow - 1.0)
            + ((3.0 - 2.0 * rp) * k.k5 * tau.ln()
                + k.k5 * k.k1.ln()
                + 0.5 * (2.0 * std::f64::consts::PI / (rho - 1.0)).ln())
                / tau;
        Ok(h0 + two_d * a0.powf(1.0 - rho) * bracket)
    } else {
        Err(ScalingError::RhoOutOfRange(rho))
    }
}

/// Saddle-point diagnostics for the inner expectation at `3 < ρ <= 4`.
#[derive(Debug, Clone)]
pub struct SaddleReport {
    pub tau: f64,
    /// Numeric maximizer of `r` on `(0, (1-ε)𝒜₀τ^{ρ'-1})`.
    pub x_t: f64,
    pub r_at_xt: f64,
    pub r_prime_at_xt: f64,
    pub r_double_prime_at_xt: f64,
    /// Leading term `K₁^{1/(ρ-1)} τ^{(3-2ρ')/(ρ-1)}` consistent with the
    /// definition of `r`.
    pub leading_term: f64,
    /// Ratio `x_t / leading_term`.
    pub ratio: f64,
    /// Leading term with the extra `𝒜₀` factor as printed in the source
    /// expansion, kept for comparison.
    pub alt_leading_term: f64,
    pub alt_ratio: f64,
    /// `log` of the Laplace approximation of `E[exp(-B₁(h₀,v)^ρ/ρ)]`,
    /// i.e. `-γτ^{ρ'}/ρ' + 2d[r(x_t) + log √(2π/|r''(x_t)|)]`.
    pub laplace_log_expectation: f64,
    /// Monte Carlo `log E[exp(-B₁(h₀,v)^ρ/ρ)]`, when a sampler was given.
    pub mc_log_expectation: Option<f64>,
    /// Maximizer hit the search boundary.
    pub boundary_flag: bool,
}

/// `r(x) = 𝒜₀²K₁ τ/(𝒜₀τ^{ρ'-1} - x) - x^ρ/ρ + (ρ-1) log x` and its
/// derivatives.
pub fn saddle_r(x: f64, tau: f64, consts: &ScalingConstants) -> (f64, f64, f64) {
    let k1 = k_constants(consts).k1;
    let a0 = consts.a0;
    let rho = consts.rho;
    let s = a0 * tau.powf(consts.rho_prime - 1.0);
    let gap = s - x;
    let r = a0 * a0 * k1 * tau / gap - x.powf(rho) / rho + (rho - 1.0) * x.ln();
    let r1 = a0 * a0 * k1 * tau / (gap * gap) - x.powf(rho - 1.0) + (rho - 1.0) / x;
    let r2 = 2.0 * a0 * a0 * k1 * tau / (gap * gap * gap)
        - (rho - 1.0) * x.powf(rho - 2.0)
        - (rho - 1.0) / (x * x);
    (r, r1, r2)
}

/// Locates the maximizer of `r` by golden section plus Newton polish and
/// assembles the saddle-point report. Requires `3 < ρ <= 4`.
pub fn saddle_point_check(
    tau: f64,
    consts: &ScalingConstants,
    sampler: Option<&ZetaSampler>,
) -> Result<SaddleReport, ScalingError> {
    if !(consts.rho > 3.0 && consts.rho <= 4.0) {
        return Err(ScalingError::BadParameters(format!(
            "saddle-point lemma needs 3 < ρ <= 4, got {}",
            consts.rho
        )));
    }
    let eps = 1e-3;
    let s_cap = consts.a0 * tau.powf(consts.rho_prime - 1.0);
    let lo0 = 1e-8 * s_cap.max(1.0);
    let hi0 = (1.0 - eps) * s_cap;

    // golden section for the maximum of r
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (lo0, hi0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = saddle_r(x1, tau, consts).0;
    let mut f2 = saddle_r(x2, tau, consts).0;
    for _ in 0..200 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = saddle_r(x2, tau, consts).0;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = saddle_r(x1, tau, consts).0;
        }
        if hi - lo < 1e-12 * (1.0 + hi) {
            break;
        }
    }
    let mut x_t = 0.5 * (lo + hi);
    for _ in 0..50 {
        let (_, r1, r2) = saddle_r(x_t, tau, consts);
        if r2 >= 0.0 {
            break;
        }
        let step = r1 / r2;
        let next = (x_t - step).clamp(lo0, hi0);
        if (next - x_t).abs() <= 1e-15 * (1.0 + x_t) {
            x_t = next;
            break;
        }
        x_t = next;
    }
    let (r, r1, r2) = saddle_r(x_t, tau, consts);
    let boundary_flag = x_t <= lo0 * (1.0 + 1e-6) || x_t >= hi0 * (1.0 - 1e-6);

    let k1 = k_constants(consts).k1;
    let beta = (3.0 - 2.0 * consts.rho_prime) / (consts.rho - 1.0);
    let leading = k1.powf(1.0 / (consts.rho - 1.0)) * tau.powf(beta);
    let alt_leading = (consts.a0 * k1).powf(1.0 / (consts.rho - 1.0)) * tau.powf(beta);

    let gamma_term = consts.gamma * tau.powf(consts.rho_prime) / consts.rho_prime;
    let laplace_log = -gamma_term
        + 2.0 * consts.d as f64
            * (r + 0.5 * (2.0 * std::f64::consts::PI / r2.abs()).ln());
    let mc_log = sampler.map(|smp| {
        let h0 = consts.a0 * tau.powf(consts.rho_prime - 1.0) - consts.two_d_kappa();
        smp.zeta_log(h0.max(0.0), 1)
    });

    Ok(SaddleReport {
        tau,
        x_t,
        r_at_xt: r,
        r_prime_at_xt: r1,
        r_double_prime_at_xt: r2,
        leading_term: leading,
        ratio: x_t / leading,
        alt_leading_term: alt_leading,
        alt_ratio: x_t / alt_leading,
        laplace_log_expectation: laplace_log,
        mc_log_expectation: mc_log,
        boundary_flag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn m_examples() {
        assert_eq!(compute_m(1.5), 1);
        assert_eq!(compute_m(2.0), 2);
        assert_eq!(compute_m(2.5), 2);
        assert_eq!(compute_m(3.0), 3);
    }

    #[test]
    fn derived_constants() {
        let c = ScalingConstants::new(2.0, 0.5, 1.0, 1).unwrap();
        assert_relative_eq!(c.rho_prime, 2.0);
        assert_relative_eq!(c.gamma1, 1.0);
        assert_relative_eq!(c.gamma2, 2.0f64.sqrt());
        assert_relative_eq!(c.alpha, 0.5f64.sqrt(), epsilon = 1e-15);
        assert!(c.alpha_in_stable_range());
        // α(γ₁, ρ) = 1 exactly
        let c1 = ScalingConstants::new(2.0, c.gamma1, 1.0, 1).unwrap();
        assert_eq!(c1.alpha, 1.0);
        assert_eq!(c1.a0, 1.0);
    }

    #[test]
    fn bscript_first_value_d1() {
        let table = LoopTable::build(1, 2);
        assert_relative_eq!(bscript_n(&table, 1.0, 1), 4.0 / 3.0, epsilon = 1e-15);
        // N = 2 adds 6 loops of length 5 with weight (1/2)^4
        assert_relative_eq!(
            bscript_n(&table, 1.0, 2),
            2.0 / (1.0 + 0.5 + 6.0 / 16.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn b_n_example_and_identity_at_zero() {
        let table = LoopTable::build(1, 2);
        let env = LocalEnvironment::sample(&table, 2.0, 77);
        // B_N(0, v) = 𝓑_N for every environment
        for n in 1..=2 {
            assert_relative_eq!(
                b_n(0.0, &env.values, &table, n, 1.0),
                bscript_n(&table, 1.0, n),
                epsilon = 1e-15
            );
        }
        // spec value 4/3 at s = 0, N = 1
        assert_relative_eq!(b_n(0.0, &env.values, &table, 1, 1.0), 4.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn b_n_saturates_when_env_dominates() {
        // all neighbor values >= s: positive parts vanish at those sites
        let table = LoopTable::build(1, 1);
        let origin = table.env_box.index_of(&Site::origin(1)).unwrap();
        let s = 1.5;
        let mut env = vec![10.0; table.env_box.cardinality()];
        env[origin] = 0.0;
        let b = b_n(s, &env, &table, 1, 1.0);
        // direct evaluation: loop factors are κ/(2κ) at neighbors and
        // κ/(2κ+s) at the origin
        let expected = (s + 2.0) / (1.0 + 2.0 * 0.5 * (1.0 / (2.0 + s)));
        assert_relative_eq!(b, expected, epsilon = 1e-14);
    }

    #[test]
    fn b_n_strictly_increasing_in_s() {
        let table = LoopTable::build(1, 2);
        let env = LocalEnvironment::sample(&table, 2.0, 3);
        let mut prev = b_n(0.0, &env.values, &table, 2, 1.0);
        let mut s = 0.25;
        while s <= 8.0 {
            let b = b_n(s, &env.values, &table, 2, 1.0);
            assert!(b > prev, "not increasing at s = {s}");
            prev = b;
            s += 0.25;
        }
    }

    #[test]
    fn zeta_at_zero_is_exact_constant() {
        let c = ScalingConstants::new(2.0, 0.5, 1.0, 1).unwrap();
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 500, 4);
        let est = zeta_n(0.0, c.m, &c, &ZetaEstimator::MonteCarlo(&sampler)).unwrap();
        let exact = (-c.bscript_m().powf(c.rho) / c.rho).exp();
        assert_relative_eq!(est.value, exact, epsilon = 1e-12);
        assert!(est.error < 1e-14, "zero variance at s = 0");
    }

    #[test]
    fn zeta_monte_carlo_matches_quadrature() {
        let c = ScalingConstants::new(2.0, 0.5, 1.0, 1).unwrap();
        let sampler = ZetaSampler::new(1, 1, c.rho, c.kappa, 1_000_000, 9);
        for s in [0.5, 3.0] {
            let mc = zeta_n(s, 1, &c, &ZetaEstimator::MonteCarlo(&sampler)).unwrap();
            let q = zeta_n(s, 1, &c, &ZetaEstimator::Quadrature { tol: 1e-10 }).unwrap();
            assert!(
                (mc.value - q.value).abs() <= 3.0 * mc.error + 1e-9,
                "s={s}: mc={} q={} se={}",
                mc.value,
                q.value,
                mc.error
            );
        }
    }

    #[test]
    fn zeta_quadrature_unsupported_outside_d1n1() {
        let c = ScalingConstants::new(2.0, 0.5, 1.0, 2).unwrap();
        assert!(matches!(
            zeta_n(1.0, 1, &c, &ZetaEstimator::Quadrature { tol: 1e-8 }),
            Err(ScalingError::UnsupportedQuadrature)
        ));
    }

    #[test]
    fn zeta_per_sample_monotone() {
        let c = ScalingConstants::new(2.5, 0.5, 1.0, 1).unwrap();
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 2000, 12);
        let mut prev = sampler.zeta_log(0.0, c.m);
        for i in 1..10 {
            let cur = sampler.zeta_log(i as f64 * 0.7, c.m);
            assert!(cur < prev);
            prev = cur;
        }
    }

    #[test]
    fn solve_h_boundary_gives_zero() {
        let c = ScalingConstants::new(2.0, 0.5, 1.0, 1).unwrap();
        // L with L^{-d} = e^{-𝓑_M^ρ/ρ} maps to h = 0
        let l_scale = (c.bscript_m().powf(c.rho) / (c.rho * c.d as f64)).exp();
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 20_000, 5);
        let sol = solve_h(l_scale, &c, 1e-8, &sampler).unwrap();
        assert!(sol.h.abs() < 1e-9, "h = {}", sol.h);
        assert!(sol.log_residual <= 1e-8);
        // anything larger than the boundary value is out of range
        assert!(matches!(
            solve_h(l_scale * 0.9, &c, 1e-8, &sampler),
            Err(ScalingError::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn solve_h_increasing_in_l() {
        let c = ScalingConstants::new(2.0, 0.5, 1.0, 1).unwrap();
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 20_000, 5);
        let h1 = solve_h(50.0, &c, 1e-8, &sampler).unwrap().h;
        let h2 = solve_h(500.0, &c, 1e-8, &sampler).unwrap().h;
        assert!(h2 > h1);
    }

    #[test]
    fn h0_arithmetic_example() {
        // 𝒜₀ = 1 (γ = γ₁), ρ' = 1.5 (ρ = 3), d = 1, κ = 1, τ = 16:
        // h₀ = 16^{1/2} - 2 = 2
        let c = ScalingConstants::new(3.0, 0.5, 1.0, 1).unwrap();
        assert_relative_eq!(c.a0, 1.0, epsilon = 1e-15);
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 1000, 8);
        let terms = h_expansion(16.0, &c, &sampler).unwrap();
        assert_relative_eq!(terms[0], 2.0, epsilon = 1e-12);
        assert_eq!(terms.len(), c.m + 1);
    }

    #[test]
    fn h_expansion_rejects_small_tau() {
        let c = ScalingConstants::new(2.0, 0.25, 1.0, 1).unwrap();
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 100, 8);
        assert!(matches!(
            h_expansion(0.5, &c, &sampler),
            Err(ScalingError::ExpansionDomain(_))
        ));
    }

    #[test]
    fn h_terms_obey_order_bounds() {
        // |h_j| τ^{(2j-1)(ρ'-1)} stays bounded on a doubling ladder
        let c = ScalingConstants::new(1.5, 1.0, 1.0, 1).unwrap();
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 100_000, 21);
        let mut scaled = Vec::new();
        for tau in [8.0, 16.0, 32.0, 64.0] {
            let terms = h_expansion(tau, &c, &sampler).unwrap();
            let j = 1;
            scaled.push(
                terms[j].abs() * tau.powf((2.0 * j as f64 - 1.0) * (c.rho_prime - 1.0)),
            );
        }
        let max = scaled.iter().cloned().fold(0.0, f64::max);
        let min = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(
            max < 50.0 * (min + 1e-6) + 5.0,
            "h_1 order bound violated: {scaled:?}"
        );
    }

    #[test]
    fn expansion_tracks_solver() {
        let c = ScalingConstants::new(1.5, 1.0, 1.0, 1).unwrap();
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 50_000, 33);
        let mut prev_diff = f64::INFINITY;
        for tau in [4.0, 8.0, 16.0] {
            let sol = solve_h_log(c.log_scale_from_tau(tau), &c, 1e-8, &sampler).unwrap();
            let sum = sol.expansion_sum().unwrap();
            let diff = (sol.h - sum).abs();
            assert!(diff < prev_diff, "tau={tau} diff={diff} prev={prev_diff}");
            prev_diff = diff;
        }
    }

    #[test]
    fn corollary_case_i_equals_h0() {
        let c = ScalingConstants::new(1.5, 1.0, 1.0, 1).unwrap();
        for tau in [4.0f64, 9.0, 25.0] {
            let expected = c.a0 * tau.powf(c.rho_prime - 1.0) - 2.0;
            assert_relative_eq!(
                corollary_expansion(tau, &c).unwrap(),
                expected,
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn corollary_case_ii_tracks_solver() {
        let c = ScalingConstants::new(2.5, 0.5, 1.0, 1).unwrap();
        let sampler = ZetaSampler::new(1, c.m, c.rho, c.kappa, 100_000, 13);
        let mut diffs = Vec::new();
        for tau in [8.0, 16.0, 32.0] {
            let sol = solve_h_log(c.log_scale_from_tau(tau), &c, 1e-8, &sampler).unwrap();
            diffs.push((sol.h - corollary_expansion(tau, &c).unwrap()).abs());
        }
        assert!(diffs[1] < diffs[0] && diffs[2] < diffs[1], "{diffs:?}");
        // the residual must also shrink faster than the correction term
        // itself, confirming the τ^{1-ρ'} coefficient
        let term = 2.0 * c.kappa * c.kappa / c.a0 * 32.0f64.powf(1.0 - c.rho_prime);
        assert!(diffs[2] < 0.5 * term, "diff {} vs term {}", diffs[2], term);
    }

    #[test]
    fn k5_value_at_rho_three() {
        let c = ScalingConstants::new(3.0, 0.5, 1.0, 1).unwrap();
        assert_relative_eq!(k_constants(&c).k5, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn corollary_rejects_large_rho() {
        let c = ScalingConstants::new(3.8, 0.5, 1.0, 1).unwrap();
        assert!(matches!(
            corollary_expansion(10.0, &c),
            Err(ScalingError::RhoOutOfRange(_))
        ));
    }

    #[test]
    fn saddle_point_first_order_conditions() {
        let c = ScalingConstants::new(3.5, 0.3, 1.0, 1).unwrap();
        let report = saddle_point_check(1e6, &c, None).unwrap();
        assert!(report.r_prime_at_xt.abs() < 1e-8 * (1.0 + report.x_t), "r' = {}", report.r_prime_at_xt);
        assert!(report.r_double_prime_at_xt < 0.0);
        assert!(!report.boundary_flag);
    }

    #[test]
    fn saddle_maximizer_ratio_converges() {
        let c = ScalingConstants::new(3.5, 0.3, 1.0, 1).unwrap();
        let mut prev_gap = f64::INFINITY;
        for tau in [1e4, 1e6, 1e8, 1e10, 1e12] {
            let report = saddle_point_check(tau, &c, None).unwrap();
            let gap = (report.ratio - 1.0).abs();
            assert!(gap < prev_gap, "tau={tau} ratio={}", report.ratio);
            prev_gap = gap;
        }
        let last = saddle_point_check(1e12, &c, None).unwrap();
        assert!((last.ratio - 1.0).abs() < 0.01, "ratio = {}", last.ratio);
    }

    #[test]
    fn tau_normalizations() {
        let c = ScalingConstants::new(2.0, 0.5, 1.0, 1).unwrap();
        let l_scale = 123.0;
        let tau = c.tau_from_scale(l_scale);
        // definition: γτ^{ρ'}/ρ' = d log L
        assert_relative_eq!(
            c.gamma * tau.powf(c.rho_prime) / c.rho_prime,
            (c.d as f64) * l_scale.ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(c.scale_from_tau(tau), l_scale, max_relative = 1e-12);
        // the literal (taudef) normalization differs by the 1/ρ' power
        assert_relative_eq!(c.tau_literal(l_scale), tau.powf(c.rho_prime), epsilon = 1e-9);
    }
}
