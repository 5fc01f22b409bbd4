//! Weibull random potentials on lattice boxes, their order statistics and
//! Gumbel extreme-value diagnostics.
//!
//! The potential has survival function `μ(v(0) > y) = exp(-y^ρ/ρ)` with
//! shape `ρ > 1`. Sampling is by inverse CDF, `v = (ρ E)^{1/ρ}` with `E`
//! standard exponential, one ChaCha stream per site so that generation is
//! order-independent.

use rayon::prelude::*;
use thiserror::Error;

use crate::lattice::{LatticeBox, Site};
use crate::rng::{derive_seed, sample_weibull, stream_rng};

#[derive(Debug, Error, PartialEq)]
pub enum EnvironmentError {
    #[error("Weibull shape must satisfy rho > 1, got {0}")]
    BadShape(f64),
    #[error("box size must be at least 2 for Gumbel normalizers, got {0}")]
    BoxTooSmall(f64),
    #[error("potential must be nonempty")]
    EmptyPotential,
}

/// Weibull shape parameter `ρ > 1` with its conjugate exponent
/// `ρ'` satisfying `1/ρ + 1/ρ' = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullParams {
    rho: f64,
    rho_prime: f64,
}

impl WeibullParams {
    pub fn new(rho: f64) -> Result<Self, EnvironmentError> {
        if !(rho > 1.0) || !rho.is_finite() {
            return Err(EnvironmentError::BadShape(rho));
        }
        Ok(WeibullParams {
            rho,
            rho_prime: rho / (rho - 1.0),
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn rho_prime(&self) -> f64 {
        self.rho_prime
    }

    /// Survival function `exp(-y^ρ/ρ)`.
    pub fn survival(&self, y: f64) -> f64 {
        if y <= 0.0 {
            1.0
        } else {
            (-y.powf(self.rho) / self.rho).exp()
        }
    }
}

/// An i.i.d. Weibull potential on a box, reproducible from
/// `(box, seed, rho)`. Values are indexed by the box's site order.
#[derive(Debug, Clone)]
pub struct Potential {
    pub domain: LatticeBox,
    pub values: Vec<f64>,
    pub seed: u64,
}

impl Potential {
    pub fn value_at(&self, s: &Site) -> Option<f64> {
        self.domain.index_of(s).map(|i| self.values[i])
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }
}

/// Samples a Weibull potential; each site value comes from its own
/// ChaCha stream keyed by the site index.
pub fn sample_potential(domain: &LatticeBox, params: &WeibullParams, seed: u64) -> Potential {
    let n = domain.cardinality();
    let values: Vec<f64> = (0..n)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            sample_weibull(&mut rng, params.rho)
        })
        .collect();
    Potential {
        domain: domain.clone(),
        values,
        seed,
    }
}

/// Descending order statistics `v_(1) >= v_(2) >= ...` with site
/// attribution; ties are broken by lexicographic site order.
#[derive(Debug, Clone)]
pub struct OrderStatistics {
    pub sorted_values: Vec<f64>,
    pub sites: Vec<Site>,
}

pub fn order_statistics(p: &Potential) -> Result<OrderStatistics, EnvironmentError> {
    if p.values.is_empty() {
        return Err(EnvironmentError::EmptyPotential);
    }
    // box sites are already lexicographic, so a stable sort by descending
    // value keeps the lexicographic tie-break
    let mut idx: Vec<usize> = (0..p.values.len()).collect();
    idx.sort_by(|&a, &b| p.values[b].partial_cmp(&p.values[a]).unwrap());
    Ok(OrderStatistics {
        sorted_values: idx.iter().map(|&i| p.values[i]).collect(),
        sites: idx.iter().map(|&i| p.domain.site_at(i)).collect(),
    })
}

/// Gumbel normalizing constants `a_l = (ρ log N)^{1/ρ}` and
/// `b_l = (ρ log N)^{1/ρ - 1}` for a box of `N` sites.
pub fn gumbel_normalizers(
    box_size: f64,
    params: &WeibullParams,
) -> Result<(f64, f64), EnvironmentError> {
    if box_size < 2.0 {
        return Err(EnvironmentError::BoxTooSmall(box_size));
    }
    let g = params.rho * box_size.ln();
    let a = g.powf(1.0 / params.rho);
    let b = 1.0 / g.powf(1.0 - 1.0 / params.rho);
    Ok((a, b))
}

/// Gumbel CDF `exp(-e^{-x})`.
pub fn gumbel_cdf(x: f64) -> f64 {
    (-(-x).exp()).exp()
}

/// Two-sided Kolmogorov-Smirnov distance between the empirical law of
/// `samples` and the analytic CDF `cdf`.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = samples.len();
    assert!(n > 0);
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((((i + 1) as f64) / n as f64 - f).abs());
        d = d.max((f - (i as f64) / n as f64).abs());
    }
    d
}

/// Asymptotic Kolmogorov p-value for a KS distance `d` from `n` samples.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for k in 1..101 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        p += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
    }
    p.clamp(0.0, 1.0)
}

/// Exceedance frequencies of the two largest order statistics at a
/// threshold `c`, against the analytic tail bounds
/// `μ(v_(1) >= c) <= N e^{-c^ρ/ρ}` and `μ(v_(2) >= c) <= N^4 e^{-2c^ρ/ρ}`.
#[derive(Debug, Clone)]
pub struct ExceedanceCheck {
    pub c: f64,
    pub v1_freq: f64,
    pub v1_bound: f64,
    pub v2_freq: f64,
    pub v2_bound: f64,
}

/// Extreme-value diagnostics for one box size.
#[derive(Debug, Clone)]
pub struct ExtremeValueReport {
    pub box_cardinality: usize,
    pub n_replicas: usize,
    pub a_l: f64,
    pub b_l: f64,
    /// KS distance between the empirical law of `(v_(1) - a_l)/b_l` and
    /// the Gumbel CDF.
    pub ks_distance: f64,
    /// Checks at `c = a_l` and `c = 1.2 a_l`.
    pub exceedances: Vec<ExceedanceCheck>,
}

/// Samples `n_replicas` independent potentials and reports the Gumbel KS
/// distance of the rescaled maximum plus tail-bound exceedance checks.
pub fn extreme_value_diagnostics(
    params: &WeibullParams,
    domain: &LatticeBox,
    n_replicas: usize,
    seed: u64,
) -> ExtremeValueReport {
    assert!(n_replicas >= 1000, "need at least 10^3 replicas");
    let n_sites = domain.cardinality();
    let (a_l, b_l) = gumbel_normalizers(n_sites as f64, params).expect("box size >= 2");

    // per replica: the two largest values
    let top2: Vec<(f64, f64)> = (0..n_replicas)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(seed, rep as u64);
            let mut v1 = f64::NEG_INFINITY;
            let mut v2 = f64::NEG_INFINITY;
            for i in 0..n_sites {
                let mut rng = stream_rng(rep_seed, i as u64);
                let v = sample_weibull(&mut rng, params.rho);
                if v > v1 {
                    v2 = v1;
                    v1 = v;
                } else if v > v2 {
                    v2 = v;
                }
            }
            (v1, v2)
        })
        .collect();

    let mut normalized: Vec<f64> = top2.iter().map(|&(v1, _)| (v1 - a_l) / b_l).collect();
    let ks = ks_distance(&mut normalized, gumbel_cdf);

    let n_f = n_sites as f64;
    let exceedances = [a_l, 1.2 * a_l]
        .iter()
        .map(|&c| {
            let v1_freq =
                top2.iter().filter(|&&(v1, _)| v1 >= c).count() as f64 / n_replicas as f64;
            let v2_freq =
                top2.iter().filter(|&&(_, v2)| v2 >= c).count() as f64 / n_replicas as f64;
            let tail = (-c.powf(params.rho) / params.rho).exp();
            ExceedanceCheck {
                c,
                v1_freq,
                v1_bound: (n_f * tail).min(1.0),
                v2_freq,
                v2_bound: (n_f.powi(4) * tail * tail).min(1.0),
            }
        })
        .collect();

    ExtremeValueReport {
        box_cardinality: n_sites,
        n_replicas,
        a_l,
        b_l,
        ks_distance: ks,
        exceedances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn rho_must_exceed_one() {
        assert!(WeibullParams::new(1.0).is_err());
        assert!(WeibullParams::new(0.5).is_err());
        let p = WeibullParams::new(2.0).unwrap();
        assert_relative_eq!(1.0 / p.rho() + 1.0 / p.rho_prime(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn conjugate_exponent_identity() {
        for rho in [1.2, 1.5, 2.0, 2.5, 3.0, 3.5] {
            let p = WeibullParams::new(rho).unwrap();
            assert_relative_eq!(1.0 / p.rho() + 1.0 / p.rho_prime(), 1.0, epsilon = 1e-15);
            // rho'/rho = rho' - 1, used throughout exponent bookkeeping
            assert_relative_eq!(
                p.rho_prime() / p.rho(),
                p.rho_prime() - 1.0,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let b = LatticeBox::centered(3, 2);
        let params = WeibullParams::new(2.0).unwrap();
        let p1 = sample_potential(&b, &params, 99);
        let p2 = sample_potential(&b, &params, 99);
        assert_eq!(p1.values, p2.values);
        let p3 = sample_potential(&b, &params, 100);
        assert_ne!(p1.values, p3.values);
        assert!(p1.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn empirical_survival_matches_weibull() {
        // fraction above sqrt(2) at rho = 2 is e^{-1}, within 3 standard errors
        let b = LatticeBox::centered(499, 1); // 999 sites
        let params = WeibullParams::new(2.0).unwrap();
        let n_total = 1_200_000usize;
        let reps = n_total / b.cardinality() + 1;
        let mut hits = 0usize;
        let mut count = 0usize;
        for rep in 0..reps {
            let p = sample_potential(&b, &params, derive_seed(5, rep as u64));
            hits += p.values.iter().filter(|&&v| v > std::f64::consts::SQRT_2).count();
            count += p.values.len();
        }
        let target = (-1.0f64).exp();
        let se = (target * (1.0 - target) / count as f64).sqrt();
        let freq = hits as f64 / count as f64;
        assert!((freq - target).abs() <= 3.0 * se, "freq={freq}");
    }

    #[test]
    fn order_statistics_example() {
        // values {a:3, b:1, c:2} -> sorted [3,2,1], sites [a,c,b]
        let b = LatticeBox::centered(1, 1);
        let mut p = sample_potential(&b, &WeibullParams::new(2.0).unwrap(), 0);
        p.values = vec![3.0, 1.0, 2.0];
        let os = order_statistics(&p).unwrap();
        assert_eq!(os.sorted_values, vec![3.0, 2.0, 1.0]);
        assert_eq!(
            os.sites,
            vec![Site(vec![-1]), Site(vec![1]), Site(vec![0])]
        );
    }

    #[test]
    fn order_statistics_tie_break_lexicographic() {
        let b = LatticeBox::centered(1, 1);
        let mut p = sample_potential(&b, &WeibullParams::new(2.0).unwrap(), 0);
        p.values = vec![1.0, 1.0, 1.0];
        let os = order_statistics(&p).unwrap();
        assert_eq!(
            os.sites,
            vec![Site(vec![-1]), Site(vec![0]), Site(vec![1])]
        );
    }

    #[test]
    fn singleton_order_statistics() {
        let b = LatticeBox::centered(0, 1);
        let p = sample_potential(&b, &WeibullParams::new(1.5).unwrap(), 11);
        let os = order_statistics(&p).unwrap();
        assert_eq!(os.sorted_values, p.values);
    }

    #[test]
    fn gumbel_normalizer_examples() {
        let params = WeibullParams::new(2.0).unwrap();
        let (a, b) = gumbel_normalizers(std::f64::consts::E.powi(2), &params).unwrap();
        assert_relative_eq!(a, 2.0, epsilon = 1e-12);
        assert_relative_eq!(b, 0.5, epsilon = 1e-12);
        let (a, b) = gumbel_normalizers(std::f64::consts::E.powi(8), &params).unwrap();
        assert_relative_eq!(a, 4.0, epsilon = 1e-12);
        assert_relative_eq!(b, 0.25, epsilon = 1e-12);
        // a_l / b_l = ρ log N, independently of the two power forms
        for n in [10.0, 100.0, 5000.0] {
            let (a, b) = gumbel_normalizers(n, &params).unwrap();
            assert_relative_eq!(a / b, params.rho() * n.ln(), epsilon = 1e-10);
        }
        assert!(gumbel_normalizers(1.0, &params).is_err());
    }

    #[test]
    fn probability_integral_transform_is_uniform() {
        let b = LatticeBox::centered(4999, 1);
        let params = WeibullParams::new(2.5).unwrap();
        let p = sample_potential(&b, &params, 2024);
        let mut u: Vec<f64> = p.values.iter().map(|&v| params.survival(v)).collect();
        let d = ks_distance(&mut u, |x| x.clamp(0.0, 1.0));
        assert!(ks_pvalue(d, p.values.len()) > 1e-3, "d={d}");
    }

    #[test]
    fn diagnostics_tail_bounds_hold() {
        let params = WeibullParams::new(2.0).unwrap();
        let b = LatticeBox::centered(16, 1);
        let report = extreme_value_diagnostics(&params, &b, 2000, 31);
        for ex in &report.exceedances {
            assert!(ex.v1_freq <= 1.1 * ex.v1_bound + 0.05);
            assert!(ex.v2_freq <= ex.v2_bound + 0.05);
        }
        assert!(report.ks_distance < 0.2);
    }

    proptest! {
        #[test]
        fn order_statistics_is_sorted_permutation(seed in 0u64..1000) {
            let b = LatticeBox::centered(2, 2);
            let p = sample_potential(&b, &WeibullParams::new(2.0).unwrap(), seed);
            let os = order_statistics(&p).unwrap();
            let mut expected = p.values.clone();
            expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assert_eq!(os.sorted_values.clone(), expected);
            // site attribution is consistent
            for (v, s) in os.sorted_values.iter().zip(&os.sites) {
                prop_assert_eq!(p.value_at(s).unwrap(), *v);
            }
        }
    }
}
