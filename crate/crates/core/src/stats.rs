//! Distances between an empirical law and a target, all in closed form.

use thiserror::Error;

use crate::measure::{Measure, PotentialProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("measure is not purely atomic")]
    NotAtomic,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("invalid target: {0}")]
    InvalidTarget(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Sorted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw {
    samples: Vec<f64>,
}

impl EmpiricalLaw {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(StatsError::EmptySample);
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.samples.partition_point(|&s| s <= x) as f64 / self.count() as f64
    }

    pub fn cdf_left(&self, x: f64) -> f64 {
        self.samples.partition_point(|&s| s < x) as f64 / self.count() as f64
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.count() as f64
    }

    /// Unbiased sample variance (0 for a single sample).
    pub fn variance(&self) -> f64 {
        let n = self.count();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
    }

    /// Frequency of the exact value `x`.
    pub fn frequency(&self, x: f64) -> f64 {
        self.cdf(x) - self.cdf_left(x)
    }
}

/// A distribution function with finitely many jumps.
pub trait Cdf {
    /// `F(x)`, right-continuous.
    fn cdf(&self, x: f64) -> f64;
    /// `F(x-)`.
    fn cdf_left(&self, x: f64) -> f64;
    /// Locations of the jumps.
    fn jumps(&self) -> Vec<f64>;
}

impl Cdf for Measure {
    fn cdf(&self, x: f64) -> f64 {
        Measure::cdf(self, x)
    }
    fn cdf_left(&self, x: f64) -> f64 {
        Measure::cdf_left(self, x)
    }
    fn jumps(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.x).collect()
    }
}

impl Cdf for PotentialProfile {
    fn cdf(&self, x: f64) -> f64 {
        PotentialProfile::cdf(self, x)
    }
    fn cdf_left(&self, x: f64) -> f64 {
        PotentialProfile::cdf_left(self, x)
    }
    fn jumps(&self) -> Vec<f64> {
        self.base.atoms.iter().map(|a| a.x).collect()
    }
}

/// A continuous distribution function given by a closure.
pub struct ContinuousCdf<F>(pub F);

impl<F: Fn(f64) -> f64> Cdf for ContinuousCdf<F> {
    fn cdf(&self, x: f64) -> f64 {
        (self.0)(x)
    }
    fn cdf_left(&self, x: f64) -> f64 {
        (self.0)(x)
    }
    fn jumps(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// `sup_x |F_n(x) - F(x)|`, evaluated on both one-sided limits at every
/// sample point and every jump of `F`. Between those points `F_n` is
/// constant and `F` continuous and monotone, so this is the exact supremum.
pub fn ks_distance(emp: &EmpiricalLaw, target: &impl Cdf) -> f64 {
    let mut d: f64 = 0.0;
    let n = emp.count() as f64;
    let s = emp.samples();
    let mut i = 0;
    while i < s.len() {
        let x = s[i];
        let mut j = i;
        while j < s.len() && s[j] == x {
            j += 1;
        }
        let below = i as f64 / n;
        let at = j as f64 / n;
        d = d
            .max((at - target.cdf(x)).abs())
            .max((below - target.cdf_left(x)).abs());
        i = j;
    }
    for a in target.jumps() {
        d = d
            .max((emp.cdf(a) - target.cdf(a)).abs())
            .max((emp.cdf_left(a) - target.cdf_left(a)).abs());
    }
    d
}

/// KS distance at the resolution of the lattice `x0 + hℤ` carrying the
/// sample: a site stands for its cell `[x - h/2, x + h/2]`, so `F_n(x)` is
/// compared with `F(x + h/2)` and `F_n(x-)` with `F(x - h/2)`. Atoms of the
/// target sit on sites and fall inside their own cell.
pub fn ks_distance_binned(emp: &EmpiricalLaw, target: &impl Cdf, h: f64) -> f64 {
    let half = 0.5 * h;
    let mut d: f64 = 0.0;
    let mut probe = |x: f64| {
        d = d
            .max((emp.cdf(x) - target.cdf(x + half)).abs())
            .max((emp.cdf_left(x) - target.cdf_left(x - half)).abs());
    };
    let s = emp.samples();
    let mut i = 0;
    while i < s.len() {
        probe(s[i]);
        let x = s[i];
        while i < s.len() && s[i] == x {
            i += 1;
        }
    }
    for a in target.jumps() {
        probe(a);
    }
    d
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &EmpiricalLaw, b: &EmpiricalLaw) -> f64 {
    let mut d: f64 = 0.0;
    for &x in a.samples().iter().chain(b.samples()) {
        d = d
            .max((a.cdf(x) - b.cdf(x)).abs())
            .max((a.cdf_left(x) - b.cdf_left(x)).abs());
    }
    d
}

/// Asymptotic critical value `c(α) = √(-ln(α/2)/2)` of `√n D_n`.
pub fn ks_critical(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// Critical value of the two-sample statistic with sizes `n`, `m`.
pub fn ks_two_sample_critical(alpha: f64, n: usize, m: usize) -> f64 {
    ks_critical(alpha) * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// `|f - p| / √(p(1-p)/n)`: deviation of a frequency from its
/// probability in binomial standard errors (0 or ∞ when `p ∈ {0, 1}`).
pub fn binomial_z(freq: f64, p: f64, n: u64) -> f64 {
    let se = (p * (1.0 - p) / n as f64).sqrt();
    let dev = (freq - p).abs();
    if se > 0.0 {
        dev / se
    } else if dev == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Largest [`binomial_z`] over the atoms of `target`.
pub fn max_atom_z(emp: &EmpiricalLaw, target: &Measure) -> f64 {
    let n = emp.count() as u64;
    target
        .atoms
        .iter()
        .map(|a| binomial_z(emp.frequency(a.x), a.p, n))
        .fold(0.0, f64::max)
}

/// `½ Σ |p(a) - q(a)|` over the union of atoms.
pub fn tv_atomic(p: &Measure, q: &Measure) -> Result<f64> {
    if !p.is_atomic() || !q.is_atomic() {
        return Err(StatsError::NotAtomic);
    }
    let (mut i, mut j, mut sum) = (0, 0, 0.0);
    let (pa, qa) = (&p.atoms, &q.atoms);
    while i < pa.len() || j < qa.len() {
        let take_p = j == qa.len() || (i < pa.len() && pa[i].x < qa[j].x);
        let take_q = i == pa.len() || (j < qa.len() && qa[j].x < pa[i].x);
        if take_p {
            sum += pa[i].p;
            i += 1;
        } else if take_q {
            sum += qa[j].p;
            j += 1;
        } else {
            sum += (pa[i].p - qa[j].p).abs();
            i += 1;
            j += 1;
        }
    }
    Ok(0.5 * sum)
}

/// `∫ |F_n - F| dx` by exact integration: on each interval between
/// consecutive sample points and breakpoints of `F`, `F_n` is constant and
/// `F` linear.
pub fn wasserstein1(emp: &EmpiricalLaw, target: &Measure) -> Result<f64> {
    let profile = PotentialProfile::new(target.clone())
        .map_err(|e| StatsError::InvalidTarget(e.to_string()))?;
    let mut pts: Vec<f64> = emp
        .samples()
        .iter()
        .copied()
        .chain(profile.breakpoints.iter().copied())
        .collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut total = 0.0;
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let c = emp.cdf(a);
        let fa = profile.cdf(a) - c;
        let fb = profile.cdf_left(b) - c;
        total += abs_linear_integral(fa, fb, b - a);
    }
    Ok(total)
}

/// `∫₀ᴸ |g|` for `g` linear from `ga` to `gb`.
fn abs_linear_integral(ga: f64, gb: f64, len: f64) -> f64 {
    if ga * gb >= 0.0 {
        0.5 * (ga.abs() + gb.abs()) * len
    } else {
        0.5 * (ga * ga + gb * gb) / (ga.abs() + gb.abs()) * len
    }
}
