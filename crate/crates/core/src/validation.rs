//! Acceptance-criteria runners. Each criterion returns a structured
//! result with one row per numeric check; rows are deterministic
//! functions of the seeds, so emitting them is reproducible byte-for-byte
//! across runs and worker counts. Wall-clock budgets are tracked
//! separately from the deterministic rows.

use std::time::Instant;

use crate::annealed;
use crate::environment::{self, WeibullParams};
use crate::lattice::LatticeBox;
use crate::pde;
use crate::rng::derive_seed;
use crate::scaling::{self, ScalingConstants, ZetaEstimator, ZetaSampler};
use crate::spectral::{self, RankOnePerturbation, SchrodingerOperator};
use crate::stable::{self, StableLaw};

/// Replica scale of a run: `Quick` shrinks Monte Carlo sizes to fit an
/// interactive budget, `Full` uses the stated sample counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl Level {
    pub fn parse(s: &str) -> Option<Level> {
        match s {
            "quick" => Some(Level::Quick),
            "full" => Some(Level::Full),
            _ => None,
        }
    }
}

/// One numeric check: `metric` compared against `threshold` (meaning
/// depends on `kind`, recorded in the label).
#[derive(Debug, Clone)]
pub struct CheckRow {
    pub label: String,
    pub metric: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Informational rows never fail the criterion.
    pub informational: bool,
}

impl CheckRow {
    fn upper(label: impl Into<String>, metric: f64, threshold: f64) -> Self {
        CheckRow {
            label: label.into(),
            metric,
            threshold,
            passed: metric <= threshold,
            informational: false,
        }
    }

    fn is_true(label: impl Into<String>, ok: bool) -> Self {
        CheckRow {
            label: label.into(),
            metric: if ok { 1.0 } else { 0.0 },
            threshold: 1.0,
            passed: ok,
            informational: false,
        }
    }

    fn info(label: impl Into<String>, metric: f64) -> Self {
        CheckRow {
            label: label.into(),
            metric,
            threshold: f64::NAN,
            passed: true,
            informational: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: &'static str,
    pub name: &'static str,
    pub rows: Vec<CheckRow>,
    pub passed: bool,
    pub runtime_s: f64,
    /// Wall-clock budget in seconds, when the criterion states one.
    pub budget_s: Option<f64>,
}

impl CriterionResult {
    fn assemble(
        id: &'static str,
        name: &'static str,
        rows: Vec<CheckRow>,
        started: Instant,
        budget_s: Option<f64>,
    ) -> Self {
        let passed = rows.iter().all(|r| r.passed);
        CriterionResult {
            id,
            name,
            rows,
            passed,
            runtime_s: started.elapsed().as_secs_f64(),
            budget_s,
        }
    }

    pub fn summary_line(&self) -> String {
        format!(
            "[{}] {} ... {} ({:.1}s)",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.runtime_s
        )
    }
}

pub const CRITERION_IDS: [&str; 11] = [
    "C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "C9", "C10", "C11",
];

/// Runs one criterion. `tol_scale` multiplies every pass/fail threshold
/// (a zero forces failure, for harness-injection tests).
pub fn run_criterion(id: &str, level: Level, tol_scale: f64) -> Option<CriterionResult> {
    match id {
        "C1" => Some(c1_spectral_oracle(level, tol_scale)),
        "C2" => Some(c2_green_function(level, tol_scale)),
        "C3" => Some(c3_ak_resolvent(level, tol_scale)),
        "C4" => Some(c4_pde_cross_check(level, tol_scale)),
        "C5" => Some(c5_scaling_function(level, tol_scale)),
        "C6" => Some(c6_zeta_sanity(level, tol_scale)),
        "C7" => Some(c7_saddle_point(level, tol_scale)),
        "C8" => Some(c8_extreme_values(level, tol_scale)),
        "C9" => Some(c9_stable_synthetic(level, tol_scale)),
        "C10" => Some(c10_stable_pam(level, tol_scale)),
        "C11" => Some(c11_annealed(level, tol_scale)),
        _ => None,
    }
}

pub fn run_all(level: Level, tol_scale: f64) -> Vec<CriterionResult> {
    CRITERION_IDS
        .iter()
        .map(|id| run_criterion(id, level, tol_scale).unwrap())
        .collect()
}

/// Deterministic test-instance family shared by C1-C3: Weibull potentials
/// on boxes of at most 49 sites in d = 1, 2, zero potential at the
/// center.
fn instance(k: usize, seed: u64) -> (SchrodingerOperator, crate::lattice::Site) {
    let d = 1 + k % 2;
    let radius = if d == 1 {
        3 + (derive_seed(seed, k as u64) % 22) as i64 // |U| in 7..=49
    } else {
        1 + (derive_seed(seed, k as u64) % 3) as i64 // |U| in 9..=49
    };
    spectral::random_weibull_operator(d, radius, 2.0, 1.0, derive_seed(seed, 1000 + k as u64))
}

fn c1_spectral_oracle(level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let n_instances = match level {
        Level::Quick => 50,
        Level::Full => 200,
    };
    let mut max_gap = 0.0f64;
    let mut max_second_excess = f64::NEG_INFINITY;
    for k in 0..n_instances {
        let (op, x0) = instance(k, 101);
        let two_d_kappa = 2.0 * op.dim() as f64 * op.kappa();
        let h = op.w_max() + two_d_kappa + 5.0 * op.kappa();
        let p = RankOnePerturbation::new(op, &x0, h).expect("valid perturbation");
        let pair = spectral::principal_eigenvalue_ak(&p, 1e-10).expect("AK solve");
        let eig = spectral::eigen_dense(&p.assemble()).expect("dense eigensolve");
        let lam = eig.max_eigenvalue();
        max_gap = max_gap.max((pair.lambda0 - lam).abs() / (1.0 + lam.abs()));
        if let Some(second) = eig.second_eigenvalue() {
            max_second_excess = max_second_excess.max(second - p.base.w_max());
        }
    }
    let rows = vec![
        CheckRow::upper(
            format!("max |λ₀(AK) - λ_max(dense)|/(1+|λ|) over {n_instances} instances"),
            max_gap,
            1e-10 * ts,
        ),
        CheckRow::upper(
            "max (second eigenvalue - w̄) over instances",
            max_second_excess,
            1e-9 * ts,
        ),
    ];
    CriterionResult::assemble("C1", "spectral oracle equivalence", rows, started, Some(30.0))
}

fn c2_green_function(level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let n_instances = match level {
        Level::Quick => 50,
        Level::Full => 200,
    };
    let mut max_rel = 0.0f64;
    let mut bounds_ok = true;
    for k in 0..n_instances {
        let (op, x0) = instance(k, 202);
        let eig = spectral::eigen_dense(&op.assemble()).expect("dense");
        let lambda_plus = eig.max_eigenvalue();
        let two_d_kappa = 2.0 * op.dim() as f64 * op.kappa();
        let lambda = lambda_plus + two_d_kappa + 1.0;
        let y = op.sites()[derive_seed(77, k as u64) as usize % op.len()].clone();
        let dist = x0.l1_dist(&y);
        let lower =
            (1.0 / op.kappa()) * (op.kappa() / (lambda + two_d_kappa)).powi(dist as i32 + 1);
        let g_path =
            spectral::green_path(&op, lambda, &x0, &y, 1e-10 * lower).expect("path sum");
        let g_solve = spectral::green_solve(&op, lambda, &x0, &y).expect("solve");
        max_rel = max_rel.max((g_path - g_solve).abs() / g_solve.abs());
        let upper = (two_d_kappa / (lambda - lambda_plus)).powi(dist as i32)
            / (lambda - lambda_plus - two_d_kappa);
        if g_solve < lower * (1.0 - 1e-12) || g_solve > upper * (1.0 + 1e-12) {
            bounds_ok = false;
        }
    }
    let rows = vec![
        CheckRow::upper(
            format!("max relative path-vs-solve error over {n_instances} instances"),
            max_rel,
            1e-8 * ts,
        ),
        CheckRow::is_true("Green sandwich bounds hold on every instance", bounds_ok && ts > 0.0),
    ];
    CriterionResult::assemble("C2", "Green function path expansion", rows, started, Some(60.0))
}

fn c3_ak_resolvent(_level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let mut max_diff = 0.0f64;
    for k in 0..20 {
        let (op, x0) = instance(k, 303);
        let h = op.w_max() + 2.0 * op.dim() as f64 * op.kappa() + 3.0;
        let p = RankOnePerturbation::new(op, &x0, h).expect("valid perturbation");
        let top0 = spectral::eigen_dense(&p.base.assemble())
            .expect("dense")
            .max_eigenvalue();
        let top1 = spectral::eigen_dense(&p.assemble())
            .expect("dense")
            .max_eigenvalue();
        let top = top0.max(top1);
        for j in 0..5 {
            let lambda = top + 0.6 + 0.7 * j as f64;
            let direct = spectral::perturbed_resolvent(&p, lambda).expect("resolvent");
            let via_ak = spectral::ak_resolvent(&p, lambda).expect("AK formula");
            max_diff = max_diff.max((&direct - &via_ak).abs().max());
        }
    }
    let rows = vec![CheckRow::upper(
        "max entrywise |R_λ - (R⁰_λ + h/(1-gh) q q*)| over 20 instances x 5 λ",
        max_diff,
        1e-9 * ts,
    )];
    CriterionResult::assemble("C3", "Aronszajn-Krein resolvent identity", rows, started, None)
}

fn c4_pde_cross_check(level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let n_instances = match level {
        Level::Quick => 12,
        Level::Full => 50,
    };
    let mut max_rel = 0.0f64;
    for k in 0..n_instances {
        let d = 1 + k % 2;
        let radius = if d == 1 { 10 } else { 2 };
        let (raw, _) = spectral::random_weibull_operator(d, radius, 2.0, 1.0, derive_seed(404, k as u64));
        let clipped: Vec<f64> = raw.potential().iter().map(|&v| v.min(5.0)).collect();
        let op = SchrodingerOperator::new(raw.sites().to_vec(), clipped, raw.kappa()).unwrap();
        let t = 0.5 + 4.5 * ((k as f64 * 0.37) % 1.0);
        let a = pde::solve_spectral(&op, t).expect("spectral");
        let b = pde::solve_ode(&op, t, pde::DtControl::default()).expect("ode");
        for i in 0..op.len() {
            let (x, y) = (a.value(i), b.value(i));
            max_rel = max_rel.max((x - y).abs() / (1.0 + x.abs()));
        }
    }
    let single = SchrodingerOperator::new(vec![crate::lattice::Site::origin(1)], vec![0.0], 1.0)
        .unwrap();
    let field = pde::solve_spectral(&single, 1.3).expect("single site");
    let closed_gap = (field.value(0) - (-2.0 * 1.3f64).exp()).abs();
    let rows = vec![
        CheckRow::upper(
            format!("max relative spectral-vs-ODE discrepancy over {n_instances} instances"),
            max_rel,
            1e-6 * ts,
        ),
        CheckRow::upper("single-site closed form |m̃ - e^{-2dκt}|", closed_gap, 1e-12 * ts),
    ];
    CriterionResult::assemble("C4", "PDE solver cross-check", rows, started, None)
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

fn c5_scaling_function(level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let n_mc = match level {
        Level::Quick => 20_000,
        Level::Full => 100_000,
    };
    let mut rows = Vec::new();
    for (rho, gamma, ladder) in [
        (1.5, 1.0, [6.0, 12.0, 24.0, 48.0]),
        (2.5, 0.5, [8.0, 16.0, 32.0, 64.0]),
    ] {
        let consts = ScalingConstants::new(rho, gamma, 1.0, 1).expect("constants");
        let sampler = ZetaSampler::new(1, consts.m, rho, 1.0, n_mc, 515);
        let mut log_tau = Vec::new();
        let mut log_diff = Vec::new();
        let mut max_residual = 0.0f64;
        for &tau in &ladder {
            let sol =
                scaling::solve_h_log(consts.log_scale_from_tau(tau), &consts, 1e-8, &sampler)
                    .expect("solve_h");
            max_residual = max_residual.max(sol.log_residual);
            let diff = (sol.h - sol.expansion_sum().expect("expansion")).abs();
            log_tau.push(tau.ln());
            log_diff.push(diff.max(1e-300).ln());
        }
        let slope = least_squares_slope(&log_tau, &log_diff);
        let target = -(2.0 * consts.m as f64 + 1.0) * (consts.rho_prime - 1.0);
        rows.push(CheckRow::upper(
            format!("ρ={rho}: max solver log-residual over the τ ladder"),
            max_residual,
            1e-8 * ts,
        ));
        rows.push(CheckRow::upper(
            format!("ρ={rho}: |ladder slope {slope:.2} - target {target:.2}|"),
            (slope - target).abs(),
            0.3 * ts,
        ));
    }
    // Corollary case (i) coincides with h₀ for 1 < ρ < 2
    let consts = ScalingConstants::new(1.5, 1.0, 1.0, 1).unwrap();
    let mut max_gap = 0.0f64;
    for tau in [6.0f64, 12.0, 24.0, 48.0] {
        let h0 = consts.a0 * tau.powf(consts.rho_prime - 1.0) - consts.two_d_kappa();
        max_gap = max_gap.max((scaling::corollary_expansion(tau, &consts).unwrap() - h0).abs());
    }
    rows.push(CheckRow::upper(
        "ρ=1.5: |corollary case (i) - h₀| over ladder",
        max_gap,
        1e-13 * ts,
    ));
    CriterionResult::assemble("C5", "scaling function expansion", rows, started, Some(300.0))
}

fn c6_zeta_sanity(level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let n_mc = match level {
        Level::Quick => 200_000,
        Level::Full => 1_000_000,
    };
    let consts = ScalingConstants::new(2.0, 0.5, 1.0, 1).expect("constants");
    let sampler = ZetaSampler::new(1, 1, consts.rho, consts.kappa, n_mc, 606);
    let exact0 = (-scaling::bscript_n(&sampler.table, 1.0, 1).powf(consts.rho) / consts.rho).exp();
    let at_zero = scaling::zeta_n(0.0, 1, &consts, &ZetaEstimator::MonteCarlo(&sampler))
        .expect("zeta(0)");
    let mut rows = vec![CheckRow::upper(
        "|ζ₁(0) - e^{-𝓑₁^ρ/ρ}|",
        (at_zero.value - exact0).abs(),
        1e-12 * ts,
    )];
    for s in [0.5, 1.0, 2.0, 3.0, 5.0] {
        let mc = scaling::zeta_n(s, 1, &consts, &ZetaEstimator::MonteCarlo(&sampler)).unwrap();
        let q = scaling::zeta_n(s, 1, &consts, &ZetaEstimator::Quadrature { tol: 1e-10 }).unwrap();
        rows.push(CheckRow::upper(
            format!("s={s}: |ζ_MC - ζ_quad| vs 3 standard errors"),
            (mc.value - q.value).abs(),
            (3.0 * mc.error + 2e-9) * ts,
        ));
    }
    CriterionResult::assemble("C6", "ζ_N sanity", rows, started, None)
}

fn c7_saddle_point(_level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let consts = ScalingConstants::new(3.5, 0.3, 1.0, 1).expect("constants");
    let ladder = [1e4, 1e6, 1e8, 1e10, 1e12];
    let mut gaps = Vec::new();
    let mut monotone = true;
    let mut first_order = 0.0f64;
    let mut concave = true;
    for &tau in &ladder {
        let rep = scaling::saddle_point_check(tau, &consts, None).expect("saddle");
        let gap = (rep.ratio - 1.0).abs();
        if let Some(&prev) = gaps.last() {
            if gap >= prev {
                monotone = false;
            }
        }
        gaps.push(gap);
        first_order = first_order.max(rep.r_prime_at_xt.abs() / (1.0 + rep.x_t));
        concave &= rep.r_double_prime_at_xt < 0.0;
    }
    let rows = vec![
        CheckRow::is_true("maximizer/leading-term ratio gap decreases along τ ladder", monotone && ts > 0.0),
        CheckRow::upper("final |x_t/leading - 1|", *gaps.last().unwrap(), 0.10 * ts),
        CheckRow::upper("max |r'(x_t)|/(1+x_t)", first_order, 1e-8 * ts),
        CheckRow::is_true("r''(x_t) < 0 on the ladder", concave && ts > 0.0),
    ];
    CriterionResult::assemble("C7", "saddle-point lemma (ρ=3.5)", rows, started, None)
}

fn c8_extreme_values(level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let n_replicas = 10_000;
    let n_seeds = match level {
        Level::Quick => 1,
        Level::Full => 3,
    };
    let params = WeibullParams::new(2.0).expect("rho");
    let mut avg_ks = Vec::new();
    let mut v1_violation = f64::NEG_INFINITY;
    let mut v2_violation = f64::NEG_INFINITY;
    for radius in [16i64, 64, 256] {
        let domain = LatticeBox::centered(radius, 1);
        let mut ks_sum = 0.0;
        for s in 0..n_seeds {
            let report = environment::extreme_value_diagnostics(
                &params,
                &domain,
                n_replicas,
                derive_seed(808, s as u64),
            );
            ks_sum += report.ks_distance;
            for ex in &report.exceedances {
                // informative threshold is c = 1.2 a_l; the (i) bound
                // carries an unquantified o(·), checked with 10% slack
                v1_violation = v1_violation.max(ex.v1_freq - 1.1 * ex.v1_bound);
                v2_violation = v2_violation.max(ex.v2_freq - ex.v2_bound);
            }
        }
        avg_ks.push(ks_sum / n_seeds as f64);
    }
    let rows = vec![
        CheckRow::is_true(
            format!(
                "Gumbel KS decreases over sides 33/129/513: {:.4} > {:.4} > {:.4}",
                avg_ks[0], avg_ks[1], avg_ks[2]
            ),
            avg_ks[0] > avg_ks[1] && avg_ks[1] > avg_ks[2] && ts > 0.0,
        ),
        CheckRow::upper("max v₁ exceedance minus 1.1x bound", v1_violation, 0.0),
        CheckRow::upper("max v₂ exceedance minus bound", v2_violation, 0.0),
    ];
    CriterionResult::assemble("C8", "extreme-value statistics", rows, started, Some(120.0))
}

fn c9_stable_synthetic(_level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let mut rows = Vec::new();
    for alpha in [0.5, 1.5] {
        let sample = stable::pareto_surrogate(alpha, 1000, 100_000, 909).expect("surrogate");
        let est = stable::tail_exponent_check(&sample, None);
        rows.push(CheckRow::upper(
            format!("α={alpha}: |α̂ - α|"),
            (est.alpha_hat - alpha).abs(),
            0.05 * ts,
        ));
        // larger array and sample count for the moments: the second
        // moment carries a finite-size bias α/(2-α)(1 - n_t^{1-2/α})
        let n_t = if alpha < 1.0 { 1000 } else { 4000 };
        let sample = stable::pareto_surrogate(alpha, n_t, 1_000_000, 910).expect("surrogate");
        let report = stable::truncated_moment_check(&sample, alpha, 1.0);
        rows.push(CheckRow::upper(
            format!("α={alpha}: first truncated-moment relative error at y=1"),
            (report.first_moment - report.first_limit).abs() / report.first_limit.abs(),
            0.10 * ts,
        ));
        rows.push(CheckRow::upper(
            format!("α={alpha}: second truncated-moment relative error at y=1"),
            (report.second_moment - report.second_limit).abs() / report.second_limit.abs(),
            0.10 * ts,
        ));
        // CF equivalence of the Lévy triple and the stable closed form
        let law = StableLaw::new(alpha).unwrap();
        let triple = stable::LevyTriple {
            nu: stable::stable_drift(alpha),
            sigma2: 0.0,
            spectral: stable::SpectralFunction::PowerLaw { alpha },
        };
        let mut max_diff = 0.0f64;
        for u in [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0] {
            let diff = (stable::infdiv_cf(&triple, u).unwrap() - stable::stable_cf(&law, u)).norm();
            max_diff = max_diff.max(diff);
        }
        rows.push(CheckRow::upper(
            format!("α={alpha}: sup |infdiv_cf - stable_cf| on u grid"),
            max_diff,
            1e-6 * ts,
        ));
    }
    CriterionResult::assemble("C9", "stable pipeline on Pareto surrogate", rows, started, None)
}

fn c10_stable_pam(level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let consts = ScalingConstants::new(2.0, 0.9, 1.0, 1).expect("constants");
    let law = StableLaw::new(consts.alpha).expect("alpha in (0,2)");
    let u_grid: Vec<f64> = (-20..=20).map(|i| i as f64 * 0.1).collect();
    let plan: [(f64, usize); 3] = match level {
        Level::Quick => [(3.0, 5_000), (4.0, 10_000), (5.0, 25_000)],
        Level::Full => [(3.0, 20_000), (4.0, 40_000), (5.0, 120_000)],
    };
    let mut distances = Vec::new();
    let mut alpha_errors = Vec::new();
    let mut exceedances = Vec::new();
    for &(t, n_env) in &plan {
        let sample = stable::simulate_ml(&consts, t, 1010, n_env).expect("PAM sample");
        distances.push(stable::cf_distance(&sample, &law, &u_grid));
        let est = stable::tail_exponent_check(&sample, None);
        alpha_errors.push((est.alpha_hat - consts.alpha).abs());
        exceedances.push(sample.exceedance(0.05));
    }
    let rows = vec![
        CheckRow::is_true(
            format!(
                "CF distance decreases over t=3,4,5: {:.4} > {:.4} > {:.4}",
                distances[0], distances[1], distances[2]
            ),
            distances[0] > distances[1] && distances[1] > distances[2] && ts > 0.0,
        ),
        CheckRow::upper(
            format!("final |α̂ - α| at t=5 (α = {:.4})", consts.alpha),
            alpha_errors[2],
            0.3 * ts,
        ),
        CheckRow::is_true(
            format!(
                "tail exponent moves toward α: {:.3} -> {:.3}",
                alpha_errors[0], alpha_errors[2]
            ),
            alpha_errors[2] < alpha_errors[0] && ts > 0.0,
        ),
        CheckRow::info("P(Y > 0.05) at t=3", exceedances[0]),
        CheckRow::info("P(Y > 0.05) at t=5", exceedances[2]),
    ];
    CriterionResult::assemble(
        "C10",
        "stable pipeline on the parabolic Anderson model",
        rows,
        started,
        Some(900.0),
    )
}

fn compositions_up_to(total: usize, max_parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 0usize)];
    while let Some((tuple, sum)) = stack.pop() {
        if !tuple.is_empty() {
            out.push(tuple.clone());
        }
        if tuple.len() == max_parts {
            continue;
        }
        for next in 1..=(total - sum) {
            let mut t = tuple.clone();
            t.push(next);
            stack.push((t, sum + next));
        }
    }
    out.sort();
    out
}

fn c11_annealed(level: Level, ts: f64) -> CriterionResult {
    let started = Instant::now();
    let mut rows = Vec::new();

    // H against the ρ = 2 closed form
    let mut max_h_gap = 0.0f64;
    for t in [0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 40.0] {
        let h = annealed::cumulant_h(t, 2.0).expect("H");
        let exact = annealed::cumulant_h_rho2_closed_form(t);
        max_h_gap = max_h_gap.max((h - exact).abs() / (1.0 + exact.abs()));
    }
    rows.push(CheckRow::upper("max |H - closed form|/(1+|H|) at ρ=2", max_h_gap, 1e-9 * ts));

    // asymptotic remainder decreases monotonically (ρ = 2.5: at ρ = 2 the
    // remainder is e^{-t²/2}, below float resolution on this grid)
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    for t in [10.0, 20.0, 40.0, 80.0] {
        let rem = (annealed::cumulant_h(t, 2.5).unwrap() - annealed::cumulant_asymptotics(t, 2.5))
            .abs();
        if rem >= prev {
            monotone = false;
        }
        prev = rem;
    }
    rows.push(CheckRow::is_true(
        "cumulant remainder decreases over t = 10, 20, 40, 80 (ρ = 2.5)",
        monotone && ts > 0.0,
    ));

    // J-integral identity for every multiplicity tuple with Σn_i <= 6
    let mut max_j_gap = 0.0f64;
    for tuple in compositions_up_to(6, 4) {
        let (numeric, exact) = annealed::j_integral_check(&tuple).expect("J integral");
        max_j_gap = max_j_gap.max((numeric - exact).abs() / exact);
    }
    rows.push(CheckRow::upper(
        "max relative J-integral deviation over tuples with Σn <= 6",
        max_j_gap,
        1e-8 * ts,
    ));

    // S₁/S₂ closed forms against direct series summation at κ = 1
    let (t, rho_prime, d) = (10.0, 2.0, 1usize);
    let mut s1 = 0.0;
    for m in 0..200 {
        s1 += annealed::s1_series_term(t, rho_prime, d, m);
    }
    let s1_gap = (s1 - annealed::s1_closed_form(t, rho_prime, d)).abs()
        / annealed::s1_closed_form(t, rho_prime, d);
    let s2_gap = (annealed::s2_series_sum(t, rho_prime, d, 600)
        - annealed::s2_closed_form(t, rho_prime, d))
    .abs()
        / annealed::s2_closed_form(t, rho_prime, d);
    rows.push(CheckRow::upper("S₁ closed form vs series (κ=1)", s1_gap, 1e-10 * ts));
    rows.push(CheckRow::upper("S₂ closed form vs series (κ=1)", s2_gap, 1e-10 * ts));

    // Feynman-Kac MC against the annealed formula: informational ratio
    // trend, with the κ-dependence probe at κ = 2
    let n_paths = match level {
        Level::Quick => 50_000,
        Level::Full => 200_000,
    };
    for t in [1.0, 2.0, 3.0] {
        let est = annealed::annealed_mean_mc(t, 1, 1.0, 2.0, n_paths, 1111).expect("FK MC");
        let formula = annealed::theorem_formula_log(t, 2.0, 1.0, 1);
        rows.push(CheckRow::info(
            format!("κ=1, t={t}: log⟨m⟩_MC - log formula"),
            est.log_mean - formula,
        ));
        // same offset against the √2-corrected prefactor (see the
        // cumulant lemma constant)
        rows.push(CheckRow::info(
            format!("κ=1, t={t}: log⟨m⟩_MC - log formula - ln√2"),
            est.log_mean - formula - 0.5 * 2.0f64.ln(),
        ));
    }
    let t = 2.0;
    let est2 = annealed::annealed_mean_mc(t, 1, 2.0, 2.0, n_paths, 1212).expect("FK MC κ=2");
    let rho_p = 2.0;
    let plain = annealed::theorem_formula_log(t, 2.0, 2.0, 1);
    let kappa_sq = plain + 2.0 * (2.0f64 * 2.0 - 1.0) * t.powf(2.0 - rho_p);
    rows.push(CheckRow::info(
        "κ=2, t=2: log⟨m⟩_MC - log formula (stated κ-form)",
        est2.log_mean - plain,
    ));
    rows.push(CheckRow::info(
        "κ=2, t=2: log⟨m⟩_MC - log formula (κ² exponent variant)",
        est2.log_mean - kappa_sq,
    ));

    CriterionResult::assemble("C11", "annealed asymptotics", rows, started, None)
}
