//! Lattice geometry: sup-norm boxes, nearest-neighbor paths, loop tables
//! and the strip-box mesoscopic partition.

use std::collections::HashSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LatticeError {
    #[error("path enumeration bound (2d)^(n-1) = {bound:.3e} exceeds cap {cap:.3e}")]
    PathCapExceeded { bound: f64, cap: f64 },
    #[error("endpoints must lie in the domain")]
    EndpointOutsideDomain,
    #[error("scale ordering violated: need 1 <= 2r < l <= 2L+1, got L={l_big}, l={l_meso}, r={r_fine}")]
    BadScales { l_big: i64, l_meso: i64, r_fine: i64 },
    #[error("t = {t} too small: floored scales violate 2r < l")]
    ScaleTooSmall { t: f64 },
    #[error("t = {t} too large: macroscopic scale L exceeds the integer range")]
    ScaleTooLarge { t: f64 },
}

/// A lattice site in `Z^d`, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Site(pub Vec<i64>);

impl Site {
    pub fn origin(d: usize) -> Self {
        Site(vec![0; d])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// l¹ distance to another site.
    pub fn l1_dist(&self, other: &Site) -> i64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }

    /// Sup-norm distance to another site.
    pub fn linf_dist(&self, other: &Site) -> i64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .max()
            .unwrap_or(0)
    }

    /// The 2d nearest neighbors, in lexicographic order.
    pub fn neighbors(&self) -> Vec<Site> {
        let d = self.dim();
        let mut out = Vec::with_capacity(2 * d);
        for axis in 0..d {
            for delta in [-1i64, 1] {
                let mut c = self.0.clone();
                c[axis] += delta;
                out.push(Site(c));
            }
        }
        out.sort();
        out
    }
}

/// Anything that can answer "is this site inside".
pub trait Domain {
    fn contains_site(&self, s: &Site) -> bool;
}

/// The whole lattice `Z^d`.
pub struct FullLattice;

impl Domain for FullLattice {
    fn contains_site(&self, _: &Site) -> bool {
        true
    }
}

impl Domain for HashSet<Site> {
    fn contains_site(&self, s: &Site) -> bool {
        self.contains(s)
    }
}

/// Sup-norm box `Λ(center, radius) = {y : ||y - center||_∞ <= radius}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeBox {
    pub center: Site,
    pub radius: i64,
    pub d: usize,
}

impl LatticeBox {
    pub fn new(center: Site, radius: i64) -> Self {
        assert!(radius >= 0, "radius must be nonnegative");
        let d = center.dim();
        assert!(d > 0, "dimension must be positive");
        LatticeBox { center, radius, d }
    }

    /// Box centered at the origin.
    pub fn centered(radius: i64, d: usize) -> Self {
        LatticeBox::new(Site::origin(d), radius)
    }

    pub fn side(&self) -> i64 {
        2 * self.radius + 1
    }

    pub fn cardinality(&self) -> usize {
        (self.side() as usize).pow(self.d as u32)
    }

    /// Sites in lexicographic order; `site_at` and `index_of` are inverse
    /// to each other under this ordering.
    pub fn sites(&self) -> impl Iterator<Item = Site> + '_ {
        (0..self.cardinality()).map(|i| self.site_at(i))
    }

    pub fn site_at(&self, mut index: usize) -> Site {
        let side = self.side() as usize;
        let mut coords = vec![0i64; self.d];
        for axis in (0..self.d).rev() {
            coords[axis] = self.center.0[axis] - self.radius + (index % side) as i64;
            index /= side;
        }
        Site(coords)
    }

    pub fn index_of(&self, s: &Site) -> Option<usize> {
        let side = self.side() as usize;
        let mut index = 0usize;
        for axis in 0..self.d {
            let offset = s.0[axis] - (self.center.0[axis] - self.radius);
            if offset < 0 || offset >= side as i64 {
                return None;
            }
            index = index * side + offset as usize;
        }
        Some(index)
    }
}

impl Domain for LatticeBox {
    fn contains_site(&self, s: &Site) -> bool {
        s.linf_dist(&self.center) <= self.radius
    }
}

/// Nearest-neighbor path `z_1, ..., z_p`; its length is `p`, the number of
/// sites (so a single site is a path of length 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Path {
    pub sites: Vec<Site>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }
}

/// Distinct visited sites in first-visit order with their multiplicities.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitProfile {
    pub distinct_sites: Vec<Site>,
    pub multiplicities: Vec<usize>,
}

/// Multiplicities over distinct sites of a path, first-visit order.
pub fn visit_profile(path: &Path) -> VisitProfile {
    let mut distinct: Vec<Site> = Vec::new();
    let mut mult: Vec<usize> = Vec::new();
    for s in &path.sites {
        match distinct.iter().position(|x| x == s) {
            Some(i) => mult[i] += 1,
            None => {
                distinct.push(s.clone());
                mult.push(1);
            }
        }
    }
    VisitProfile {
        distinct_sites: distinct,
        multiplicities: mult,
    }
}

pub const DEFAULT_PATH_CAP: f64 = 1e7;

/// All length-`n` nearest-neighbor paths from `x` to `y` inside `domain`,
/// in lexicographic order of the site sequence. `n` counts sites, so the
/// result is empty when `n < |x-y|_1 + 1` or when the parity mismatches.
pub fn enumerate_paths(
    domain: &impl Domain,
    x: &Site,
    y: &Site,
    n: usize,
    cap: f64,
) -> Result<Vec<Path>, LatticeError> {
    assert!(n >= 1, "path length must be at least 1");
    if !domain.contains_site(x) || !domain.contains_site(y) {
        return Err(LatticeError::EndpointOutsideDomain);
    }
    let d = x.dim();
    let bound = (2.0 * d as f64).powi(n as i32 - 1);
    if bound > cap {
        return Err(LatticeError::PathCapExceeded { bound, cap });
    }
    let mut out = Vec::new();
    // quick parity/distance pruning
    let dist = x.l1_dist(y);
    if (n as i64 - 1) < dist || ((n as i64 - 1) - dist) % 2 != 0 {
        return Ok(out);
    }
    let mut current = vec![x.clone()];
    dfs_paths(domain, y, n, &mut current, &mut out);
    Ok(out)
}

fn dfs_paths(
    domain: &impl Domain,
    target: &Site,
    n: usize,
    current: &mut Vec<Site>,
    out: &mut Vec<Path>,
) {
    let last = current.last().unwrap().clone();
    if current.len() == n {
        if &last == target {
            out.push(Path {
                sites: current.clone(),
            });
        }
        return;
    }
    let remaining = (n - current.len()) as i64;
    for nb in last.neighbors() {
        if !domain.contains_site(&nb) {
            continue;
        }
        // cannot reach the target in the remaining steps
        if nb.l1_dist(target) > remaining - 1 {
            continue;
        }
        current.push(nb);
        dfs_paths(domain, target, n, current, out);
        current.pop();
    }
}

/// Number of `steps`-step walks on `Z^d` from the origin back to itself,
/// by dynamic programming (convolution of the step distribution).
pub fn returning_walk_count(d: usize, steps: usize) -> u64 {
    let r = steps as i64;
    let grid = LatticeBox::centered(r.max(1), d);
    let n = grid.cardinality();
    let mut cur = vec![0u64; n];
    cur[grid.index_of(&Site::origin(d)).unwrap()] = 1;
    for _ in 0..steps {
        let mut next = vec![0u64; n];
        for (i, &c) in cur.iter().enumerate() {
            if c == 0 {
                continue;
            }
            for nb in grid.site_at(i).neighbors() {
                if let Some(j) = grid.index_of(&nb) {
                    next[j] += c;
                }
            }
        }
        cur = next;
    }
    cur[grid.index_of(&Site::origin(d)).unwrap()]
}

/// One loop at the origin of `Z^d`: the sites it visits (indexed into the
/// radius-`N` box around the origin), with multiplicities, excluding the
/// first position of the path.
#[derive(Debug, Clone)]
pub struct LoopProfile {
    /// `(box_index, multiplicity)` over positions `2..=2j+1` of the loop.
    pub factors: Vec<(usize, usize)>,
    /// Half-length `j` (the loop has `2j+1` sites).
    pub half_len: usize,
}

/// All loops `P^{2j+1}(0,0)` on the full lattice for `1 <= j <= n_max`,
/// pre-indexed into the radius-`n_max` box around the origin. Loops of
/// length `2j+1` stay within l¹ (hence sup-norm) distance `j <= n_max`.
#[derive(Debug, Clone)]
pub struct LoopTable {
    pub d: usize,
    pub n_max: usize,
    pub env_box: LatticeBox,
    pub loops: Vec<LoopProfile>,
    /// Loop count per half-length `j` (index 0 is `j = 1`).
    pub counts: Vec<u64>,
}

impl LoopTable {
    pub fn build(d: usize, n_max: usize) -> Self {
        let env_box = LatticeBox::centered(n_max as i64, d);
        let origin = Site::origin(d);
        let mut loops = Vec::new();
        let mut counts = vec![0u64; n_max];
        for j in 1..=n_max {
            let paths = enumerate_paths(&FullLattice, &origin, &origin, 2 * j + 1, 1e9)
                .expect("loop enumeration within cap");
            counts[j - 1] = paths.len() as u64;
            for p in &paths {
                let mut factors: Vec<(usize, usize)> = Vec::new();
                for s in &p.sites[1..] {
                    let idx = env_box.index_of(s).expect("loop stays in env box");
                    match factors.iter_mut().find(|(i, _)| *i == idx) {
                        Some((_, m)) => *m += 1,
                        None => factors.push((idx, 1)),
                    }
                }
                loops.push(LoopProfile {
                    factors,
                    half_len: j,
                });
            }
        }
        LoopTable {
            d,
            n_max,
            env_box,
            loops,
            counts,
        }
    }
}

/// The strip-box partition of `Λ_L` at mesoscopic scale `l` and fine
/// scale `r`: per axis, `q` intervals `I_i` of sizes `l_i = l + θ(i)`
/// covering `[-L, L]`, each shrunk by margins `r_i = r + θ(i)` to an inner
/// interval `J_i`; main boxes are products of inner intervals and the
/// strip is the complement in `Λ_L`.
#[derive(Debug, Clone)]
pub struct StripBoxPartition {
    pub l_big: i64,
    pub l_meso: i64,
    pub r_fine: i64,
    pub d: usize,
    pub q: i64,
    pub q_bar: i64,
    /// Per-axis interval sizes `l_i`.
    pub l_sizes: Vec<i64>,
    /// Per-axis margins `r_i`.
    pub r_sizes: Vec<i64>,
    /// Inner intervals `J_i` as `(lo, hi)`; empty when `lo > hi`.
    pub inner_intervals: Vec<(i64, i64)>,
}

impl StripBoxPartition {
    /// Main boxes as per-axis inclusive ranges, indexed over `{1..q}^d`.
    pub fn main_boxes(&self) -> Vec<Vec<(i64, i64)>> {
        let q = self.q as usize;
        let total = q.pow(self.d as u32);
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut axes = Vec::with_capacity(self.d);
            for _ in 0..self.d {
                axes.push(self.inner_intervals[rem % q]);
                rem /= q;
            }
            axes.reverse();
            out.push(axes);
        }
        out
    }

    /// All sites of the strip `S_L = Λ_L \ ∪ main boxes`.
    pub fn strip(&self) -> HashSet<Site> {
        let lambda = LatticeBox::centered(self.l_big, self.d);
        let mut strip: HashSet<Site> = lambda.sites().collect();
        for mb in self.main_boxes() {
            remove_box(&mut strip, &mb, &mut vec![0; self.d], 0);
        }
        strip
    }
}

fn remove_box(set: &mut HashSet<Site>, axes: &[(i64, i64)], coords: &mut Vec<i64>, axis: usize) {
    if axis == axes.len() {
        set.remove(&Site(coords.clone()));
        return;
    }
    let (lo, hi) = axes[axis];
    for c in lo..=hi {
        coords[axis] = c;
        remove_box(set, axes, coords, axis + 1);
    }
}

/// Builds the strip-box partition. Requires `1 <= 2r < l <= 2L+1`.
pub fn strip_box_partition(
    l_big: i64,
    l_meso: i64,
    r_fine: i64,
    d: usize,
) -> Result<StripBoxPartition, LatticeError> {
    if r_fine < 1 || 2 * r_fine >= l_meso || l_meso > 2 * l_big + 1 {
        return Err(LatticeError::BadScales {
            l_big,
            l_meso,
            r_fine,
        });
    }
    let side = 2 * l_big + 1;
    let q = side / l_meso;
    let q_bar = side - q * l_meso;
    // distribute the remainder over the first intervals, one unit each when
    // q_bar <= q, evenly otherwise
    let base_extra = q_bar / q;
    let leftover = q_bar % q;
    let mut l_sizes = Vec::with_capacity(q as usize);
    let mut r_sizes = Vec::with_capacity(q as usize);
    for i in 0..q {
        let extra = base_extra + if i < leftover { 1 } else { 0 };
        l_sizes.push(l_meso + extra);
        r_sizes.push(r_fine + extra);
    }
    let mut inner_intervals = Vec::with_capacity(q as usize);
    let mut start = -l_big;
    for i in 0..q as usize {
        let lo = start + r_sizes[i];
        let hi = start + l_sizes[i] - 1 - r_sizes[i];
        inner_intervals.push((lo, hi));
        start += l_sizes[i];
    }
    Ok(StripBoxPartition {
        l_big,
        l_meso,
        r_fine,
        d,
        q,
        q_bar,
        l_sizes,
        r_sizes,
        inner_intervals,
    })
}

/// Default scale triple `(L, l, r)` at time `t`: `L = ⌊e^{γ t^{ρ'}/ρ'}⌋`,
/// `l = ⌊e^t⌋`, `r = ⌊t²⌋`, floored to integers. `L` grows doubly fast
/// and is returned as `i128` (it is a scale, not necessarily a box that
/// gets materialized).
pub fn default_scales(
    t: f64,
    gamma: f64,
    rho_prime: f64,
) -> Result<(i128, i64, i64), LatticeError> {
    assert!(t > 0.0 && gamma > 0.0 && rho_prime > 1.0);
    let l_real = (gamma * t.powf(rho_prime) / rho_prime).exp().floor();
    if l_real > 1e37 {
        return Err(LatticeError::ScaleTooLarge { t });
    }
    let l_big = l_real as i128;
    let l_meso = t.exp().floor() as i64;
    let r_fine = (t * t).floor() as i64;
    if r_fine < 1 || 2 * r_fine >= l_meso || (l_meso as i128) > 2 * l_big + 1 {
        return Err(LatticeError::ScaleTooSmall { t });
    }
    Ok((l_big, l_meso, r_fine))
}
