//! The speed measure `m(dx) = μ(dx) / U(x)` on `(ℓ₋, ℓ₊)`, infinite outside.
//!
//! Atoms of `μ` at the support bounds become traps (infinite weight). Density
//! segments keep the `μ`-density and evaluate `λ(x) = f(x) / U(x)` on demand
//! against the stored potential profile.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::measure::{Bound, PotentialProfile};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpeedError {
    #[error("μ is a point mass at its mean; the embedding is trivial")]
    DegenerateMeasure,
    #[error("support is unbounded on the {0:?} side")]
    UnboundedSide(Side),
    #[error("invalid rate {0}")]
    InvalidRate(f64),
    #[error("invalid speed measure: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, SpeedError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Finite(f64),
    Infinite,
}

impl Weight {
    pub fn finite(self) -> Option<f64> {
        match self {
            Weight::Finite(w) => Some(w),
            Weight::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Weight::Infinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedAtom {
    pub x: f64,
    pub weight: Weight,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentDensity {
    /// `λ ≡ c`.
    Constant(f64),
    /// `λ(x) = f / U(x)` with `f` the density of `μ` on the segment.
    Ratio { mu_density: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedSegment {
    pub left: f64,
    pub right: f64,
    pub density: SegmentDensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryClass {
    /// Not reachable in finite time.
    Natural,
    /// Reachable trap at the end of a regular interval.
    AbsorbingRegular,
    /// Reachable trap isolated in the support.
    AbsorbingIsolated,
}

#[derive(Debug, Clone)]
pub struct SpeedMeasure {
    /// Sorted by position; includes traps at the bounds.
    pub atoms: Vec<SpeedAtom>,
    pub segments: Vec<SpeedSegment>,
    pub interval: (Bound, Bound),
    pub absorbing_left: bool,
    pub absorbing_right: bool,
    /// Starting point of the diffusion (the mean of μ).
    pub start: f64,
    scale: f64,
    profile: Option<Arc<PotentialProfile>>,
}

/// Builds `m` from the potential profile of μ.
pub fn build_speed_measure(profile: &PotentialProfile) -> Result<SpeedMeasure> {
    let (lo, hi) = match (profile.lower, profile.upper) {
        (Bound::Finite(l), Bound::Finite(h)) => (l, h),
        (Bound::Infinite, _) => return Err(SpeedError::UnboundedSide(Side::Left)),
        (_, Bound::Infinite) => return Err(SpeedError::UnboundedSide(Side::Right)),
    };
    if lo == hi {
        return Err(SpeedError::DegenerateMeasure);
    }
    let mut atoms = Vec::with_capacity(profile.base.atoms.len());
    for a in &profile.base.atoms {
        let weight = if a.x == lo || a.x == hi {
            Weight::Infinite
        } else {
            let u = profile.excess_potential(a.x);
            if !(u > 0.0) {
                return Err(SpeedError::Invalid(format!(
                    "excess potential vanishes at interior atom {}",
                    a.x
                )));
            }
            Weight::Finite(a.p / u)
        };
        atoms.push(SpeedAtom { x: a.x, weight });
    }
    let segments = profile
        .base
        .segments
        .iter()
        .map(|s| SpeedSegment {
            left: s.left,
            right: s.right,
            density: SegmentDensity::Ratio {
                mu_density: s.density,
            },
        })
        .collect();
    Ok(SpeedMeasure {
        atoms,
        segments,
        interval: (Bound::Finite(lo), Bound::Finite(hi)),
        absorbing_left: profile.atom_mass(lo) > 0.0,
        absorbing_right: profile.atom_mass(hi) > 0.0,
        start: profile.mean,
        scale: 1.0,
        profile: Some(Arc::new(profile.clone())),
    })
}

impl SpeedMeasure {
    /// A speed measure given directly, with traps at the interval ends.
    /// Segment densities must be [`SegmentDensity::Constant`].
    pub fn from_parts(
        atoms: Vec<SpeedAtom>,
        segments: Vec<SpeedSegment>,
        interval: (f64, f64),
        start: f64,
    ) -> Result<SpeedMeasure> {
        let (lo, hi) = interval;
        if !(lo < start && start < hi) {
            return Err(SpeedError::Invalid(format!(
                "start {start} outside ({lo}, {hi})"
            )));
        }
        if segments
            .iter()
            .any(|s| matches!(s.density, SegmentDensity::Ratio { .. }))
        {
            return Err(SpeedError::Invalid(
                "ratio densities need a potential profile".into(),
            ));
        }
        let mut atoms: Vec<SpeedAtom> = atoms
            .into_iter()
            .filter(|a| lo < a.x && a.x < hi)
            .collect();
        atoms.push(SpeedAtom {
            x: lo,
            weight: Weight::Infinite,
        });
        atoms.push(SpeedAtom {
            x: hi,
            weight: Weight::Infinite,
        });
        atoms.sort_by(|a, b| a.x.total_cmp(&b.x));
        if atoms
            .iter()
            .any(|a| matches!(a.weight, Weight::Finite(w) if !(w > 0.0 && w.is_finite())))
        {
            return Err(SpeedError::Invalid("atom weights must be positive".into()));
        }
        Ok(SpeedMeasure {
            atoms,
            segments,
            interval: (Bound::Finite(lo), Bound::Finite(hi)),
            absorbing_left: true,
            absorbing_right: true,
            start,
            scale: 1.0,
            profile: None,
        })
    }

    pub fn profile(&self) -> Option<&PotentialProfile> {
        self.profile.as_deref()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self.interval {
            (Bound::Finite(l), Bound::Finite(h)) => (l, h),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn is_atomic(&self) -> bool {
        self.segments.is_empty()
    }

    /// Scaled weight of the atom at exactly `x`, if any.
    pub fn atom_weight(&self, x: f64) -> Option<Weight> {
        self.atoms
            .binary_search_by(|a| a.x.total_cmp(&x))
            .ok()
            .map(|i| self.weight(&self.atoms[i]))
    }

    /// Scaled weight of an atom.
    pub fn weight(&self, a: &SpeedAtom) -> Weight {
        match a.weight {
            Weight::Finite(w) => Weight::Finite(w * self.scale),
            Weight::Infinite => Weight::Infinite,
        }
    }

    /// Density `λ(x)` of the absolutely continuous part (0 at segment ends
    /// and outside segments).
    pub fn lambda_at(&self, x: f64) -> f64 {
        let i = self.segments.partition_point(|s| s.right <= x);
        match self.segments.get(i) {
            Some(s) if s.left < x && x < s.right => self.segment_lambda(s, x),
            _ => 0.0,
        }
    }

    fn segment_lambda(&self, s: &SpeedSegment, x: f64) -> f64 {
        match s.density {
            SegmentDensity::Constant(c) => self.scale * c,
            SegmentDensity::Ratio { mu_density } => {
                let u = self
                    .profile
                    .as_ref()
                    .map(|p| p.excess_potential(x))
                    .unwrap_or(0.0);
                if u > 0.0 {
                    self.scale * mu_density / u
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `λ` on the open segment evaluated as a one-sided limit at `x`:
    /// `side = Right` gives the density of the segment starting at `x`.
    pub fn lambda_one_sided(&self, x: f64, side: Side) -> f64 {
        for s in &self.segments {
            let hit = match side {
                Side::Right => s.left <= x && x < s.right,
                Side::Left => s.left < x && x <= s.right,
            };
            if hit {
                return self.segment_lambda(s, x);
            }
        }
        0.0
    }

    /// `m((a, b))`, infinite when a trap lies inside or the density
    /// integral diverges.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if !(a < b) {
            return 0.0;
        }
        let mut total = 0.0;
        for at in &self.atoms {
            if a < at.x && at.x < b {
                match self.weight(at) {
                    Weight::Finite(w) => total += w,
                    Weight::Infinite => return f64::INFINITY,
                }
            }
        }
        total + self.integrate_density(a, b, |_| 1.0)
    }

    /// `∫_a^b w(x) λ(x) dx` over the segments, split at profile knots.
    fn integrate_density(&self, a: f64, b: f64, weight: impl Fn(f64) -> f64) -> f64 {
        let mut cuts: Vec<f64> = vec![a, b];
        for s in &self.segments {
            cuts.push(s.left);
            cuts.push(s.right);
        }
        if let Some(p) = &self.profile {
            cuts.extend(p.breakpoints.iter().copied());
            cuts.push(p.mean);
        }
        cuts.retain(|&c| a <= c && c <= b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut total = 0.0;
        for w in cuts.windows(2) {
            let (l, r) = (w[0], w[1]);
            let mid = 0.5 * (l + r);
            if self.lambda_at(mid) == 0.0 {
                continue;
            }
            let f = |x: f64| weight(x) * self.lambda_at(x);
            total += adaptive_simpson(&f, l, r, 1e-12 * (1.0 + f(mid).abs()), 60);
        }
        total
    }

    /// `σ_m`: `∫ (ℓ₊ - y) m(dy)` over `(x0, ℓ₊)` (mirrored on the left).
    /// Finite at reachable boundaries, infinite at natural ones.
    pub fn sigma_integral(&self, side: Side) -> f64 {
        let (lo, hi) = self.bounds();
        let x0 = self.start;
        let mut total = 0.0;
        match side {
            Side::Right => {
                for at in &self.atoms {
                    if x0 < at.x && at.x < hi {
                        if let Weight::Finite(w) = self.weight(at) {
                            total += (hi - at.x) * w;
                        }
                    }
                }
                total + self.integrate_density(x0, hi, |y| hi - y)
            }
            Side::Left => {
                for at in &self.atoms {
                    if lo < at.x && at.x < x0 {
                        if let Weight::Finite(w) = self.weight(at) {
                            total += (at.x - lo) * w;
                        }
                    }
                }
                total + self.integrate_density(lo, x0, |y| y - lo)
            }
        }
    }

    /// `m ↦ c m`. The diffusion of `c m` runs `c` times slower:
    /// `X^{cm}_t = X^m_{t/c}`.
    pub fn scaled(&self, c: f64) -> Result<SpeedMeasure> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(SpeedError::InvalidRate(c));
        }
        let mut out = self.clone();
        out.scale *= c;
        Ok(out)
    }

    /// Speed measure whose diffusion at an independent `Exp(q)` time has the
    /// law this one has at `Exp(1)`: `m ↦ m / q`.
    pub fn scale_for_rate(&self, q: f64) -> Result<SpeedMeasure> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(SpeedError::InvalidRate(q));
        }
        self.scaled(1.0 / q)
    }

    /// CSV rows `kind,x_or_left,right,weight_or_density,absorbing`. Density
    /// segments are split at the profile knots and `λ` is reported at the
    /// midpoint of each piece.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,x_or_left,right,weight_or_density,absorbing\n");
        let (lo, hi) = self.bounds();
        for a in &self.atoms {
            let absorbing = (a.x == lo && self.absorbing_left) || (a.x == hi && self.absorbing_right);
            let w = match self.weight(a) {
                Weight::Finite(w) => format!("{w:.17e}"),
                Weight::Infinite => "inf".to_string(),
            };
            let _ = writeln!(out, "atom,{:.17e},,{w},{absorbing}", a.x);
        }
        for s in &self.segments {
            let mut cuts = vec![s.left, s.right];
            if let Some(p) = &self.profile {
                cuts.extend(
                    p.breakpoints
                        .iter()
                        .copied()
                        .chain(std::iter::once(p.mean))
                        .filter(|&c| s.left < c && c < s.right),
                );
            }
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            for w in cuts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let _ = writeln!(
                    out,
                    "segment,{:.17e},{:.17e},{:.17e},false",
                    w[0],
                    w[1],
                    self.segment_lambda(s, mid)
                );
            }
        }
        out
    }
}

/// Boundary behaviour of the diffusion at `ℓ₋` or `ℓ₊`.
pub fn classify_boundary(
    sm: &SpeedMeasure,
    profile: &PotentialProfile,
    side: Side,
) -> Result<BoundaryClass> {
    let bound = match side {
        Side::Left => profile.lower,
        Side::Right => profile.upper,
    };
    let Bound::Finite(edge) = bound else {
        return Err(SpeedError::UnboundedSide(side));
    };
    if profile.atom_mass(edge) == 0.0 {
        return Ok(BoundaryClass::Natural);
    }
    let charged = sm.segments.iter().any(|s| match side {
        Side::Right => s.right == edge,
        Side::Left => s.left == edge,
    });
    Ok(if charged {
        BoundaryClass::AbsorbingRegular
    } else {
        BoundaryClass::AbsorbingIsolated
    })
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || !delta.is_finite() {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
