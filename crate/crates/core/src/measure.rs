//! Finite-mean probability measures made of atoms and constant-density
//! segments, together with their potential function
//! `u(x) = ∫|x - y| μ(dy)` and the excess `U(x) = u(x) - |x - x0|`.
//!
//! Everything here is closed form. A segment `[l, r]` with density `d`
//! contributes
//!
//! ```text
//! ∫_l^r |x - y| d dy = d (r - l) ((l + r)/2 - x)       x <= l
//!                    = d ((x - l)^2 + (r - x)^2) / 2    l <= x <= r
//!                    = d (r - l) (x - (l + r)/2)       x >= r
//! ```
//!
//! [`PotentialProfile`] tabulates `U` at every knot (atoms, segment ends and
//! the mean) so that evaluation is a binary search plus one quadratic. The
//! knot values are accumulated inwards from the support bounds, where `U`
//! vanishes, using only non-negative increments; this keeps `U` accurate to
//! relative precision close to the boundary where `U → 0`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("total mass {mass} is not 1")]
    NonUnitMass { mass: f64 },
    #[error("measure does not have a finite mean")]
    NonFiniteMean,
    #[error("measure carries no mass")]
    EmptyMeasure,
    #[error("invalid measure: {0}")]
    Invalid(String),
    #[error("support already lies within [-{level}, {level}]")]
    TruncationUnnecessary { level: f64 },
    #[error("no tangent from level {level} to the potential")]
    NoTangent { level: f64 },
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("measure is not centred: mean {mean}")]
    NotCentred { mean: f64 },
}

pub type Result<T> = std::result::Result<T, MeasureError>;

/// Validation thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Inputs whose total mass is further than this from 1 are rejected.
    pub mass_reject: f64,
    /// After renormalisation the mass must be within this of 1.
    pub mass_normalized: f64,
    /// Tolerance on the mean (centring and truncation checks).
    pub mean: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            mass_reject: 1e-9,
            mass_normalized: 1e-12,
            mean: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(rename = "l")]
    pub left: f64,
    #[serde(rename = "r")]
    pub right: f64,
    pub density: f64,
}

impl Segment {
    pub fn mass(&self) -> f64 {
        self.density * (self.right - self.left)
    }

    fn contains_open(&self, x: f64) -> bool {
        self.left < x && x < self.right
    }
}

/// A support bound. Unbounded sides are flagged, never encoded as a float.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Finite(f64),
    Infinite,
}

impl Bound {
    pub fn finite(self) -> Option<f64> {
        match self {
            Bound::Finite(x) => Some(x),
            Bound::Infinite => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Bound::Finite(_))
    }
}

/// Probability measure as atoms plus piecewise-constant density segments.
///
/// The JSON form is
/// `{"atoms":[{"x":-1,"p":0.25}],"segments":[{"l":-1,"r":1,"density":0.5}]}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Measure {
    #[serde(default)]
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub segments: Vec<Segment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

/// Sorts, merges duplicate atoms, drops empty pieces and renormalises.
pub fn validate_measure(raw: Measure) -> Result<Measure> {
    validate_measure_with(raw, &Tolerances::default())
}

pub fn validate_measure_with(raw: Measure, tol: &Tolerances) -> Result<Measure> {
    let Measure {
        atoms,
        segments,
        name,
    } = raw;

    let mut clean_atoms: Vec<Atom> = Vec::with_capacity(atoms.len());
    for a in atoms {
        if a.p.is_nan() || a.x.is_nan() {
            return Err(MeasureError::Invalid("NaN in atom".into()));
        }
        if a.p < 0.0 {
            return Err(MeasureError::Invalid(format!(
                "negative atom mass {} at {}",
                a.p, a.x
            )));
        }
        if a.p == 0.0 {
            continue;
        }
        if a.x.is_infinite() {
            return Err(MeasureError::NonFiniteMean);
        }
        clean_atoms.push(a);
    }
    clean_atoms.sort_by(|a, b| cmp_f64(&a.x, &b.x));
    let mut merged: Vec<Atom> = Vec::with_capacity(clean_atoms.len());
    for a in clean_atoms {
        match merged.last_mut() {
            Some(last) if last.x == a.x => last.p += a.p,
            _ => merged.push(a),
        }
    }

    let mut clean_segments = Vec::with_capacity(segments.len());
    for s in segments {
        if !(s.left.is_finite() && s.right.is_finite()) {
            if s.left.is_nan() || s.right.is_nan() {
                return Err(MeasureError::Invalid("NaN in segment".into()));
            }
            return Err(MeasureError::NonFiniteMean);
        }
        if !s.density.is_finite() || s.density < 0.0 {
            return Err(MeasureError::Invalid(format!(
                "bad density {} on [{}, {}]",
                s.density, s.left, s.right
            )));
        }
        if s.left >= s.right {
            return Err(MeasureError::Invalid(format!(
                "segment with left {} >= right {}",
                s.left, s.right
            )));
        }
        if s.density > 0.0 {
            clean_segments.push(s);
        }
    }
    clean_segments.sort_by(|a, b| cmp_f64(&a.left, &b.left));
    for w in clean_segments.windows(2) {
        if w[1].left < w[0].right {
            return Err(MeasureError::Invalid(format!(
                "segments [{}, {}] and [{}, {}] overlap",
                w[0].left, w[0].right, w[1].left, w[1].right
            )));
        }
    }

    if merged.is_empty() && clean_segments.is_empty() {
        return Err(MeasureError::EmptyMeasure);
    }

    let mut m = Measure {
        atoms: merged,
        segments: clean_segments,
        name,
    };
    let mass = m.total_mass();
    if !mass.is_finite() || (mass - 1.0).abs() > tol.mass_reject {
        return Err(MeasureError::NonUnitMass { mass });
    }
    for a in &mut m.atoms {
        a.p /= mass;
    }
    for s in &mut m.segments {
        s.density /= mass;
    }
    let renorm = m.total_mass();
    if (renorm - 1.0).abs() > tol.mass_normalized {
        return Err(MeasureError::NonUnitMass { mass: renorm });
    }
    if !m.mean().is_finite() {
        return Err(MeasureError::NonFiniteMean);
    }
    Ok(m)
}

impl Measure {
    pub fn from_atoms(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        validate_measure(Measure {
            atoms: atoms.into_iter().map(|(x, p)| Atom { x, p }).collect(),
            ..Default::default()
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.p).sum::<f64>()
            + self.segments.iter().map(Segment::mass).sum::<f64>()
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.x * a.p).sum::<f64>()
            + self
                .segments
                .iter()
                .map(|s| s.density * (s.right * s.right - s.left * s.left) / 2.0)
                .sum::<f64>()
    }

    pub fn is_atomic(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn lower(&self) -> Bound {
        let a = self.atoms.first().map(|a| a.x);
        let s = self.segments.first().map(|s| s.left);
        match (a, s) {
            (Some(a), Some(s)) => Bound::Finite(a.min(s)),
            (Some(v), None) | (None, Some(v)) => Bound::Finite(v),
            (None, None) => Bound::Infinite,
        }
    }

    pub fn upper(&self) -> Bound {
        let a = self.atoms.last().map(|a| a.x);
        let s = self.segments.last().map(|s| s.right);
        match (a, s) {
            (Some(a), Some(s)) => Bound::Finite(a.max(s)),
            (Some(v), None) | (None, Some(v)) => Bound::Finite(v),
            (None, None) => Bound::Infinite,
        }
    }

    /// Mass of the atom at exactly `x`.
    pub fn atom_mass(&self, x: f64) -> f64 {
        self.atoms
            .binary_search_by(|a| cmp_f64(&a.x, &x))
            .map(|i| self.atoms[i].p)
            .unwrap_or(0.0)
    }

    /// Density of the absolutely continuous part at `x` (0 at segment ends).
    pub fn density_at(&self, x: f64) -> f64 {
        let i = self.segments.partition_point(|s| s.right <= x);
        match self.segments.get(i) {
            Some(s) if s.contains_open(x) => s.density,
            _ => 0.0,
        }
    }

    /// Right-continuous CDF `μ((-∞, x])`.
    pub fn cdf(&self, x: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().filter(|a| a.x <= x).map(|a| a.p).sum();
        atoms + self.segment_cdf(x)
    }

    /// Left limit `μ((-∞, x))`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().filter(|a| a.x < x).map(|a| a.p).sum();
        atoms + self.segment_cdf(x)
    }

    fn segment_cdf(&self, x: f64) -> f64 {
        self.segments
            .iter()
            .map(|s| s.density * (x.min(s.right) - s.left).max(0.0))
            .sum()
    }

    /// `E[(X - k)^+]`.
    pub fn call_price(&self, k: f64) -> f64 {
        let atoms: f64 = self
            .atoms
            .iter()
            .filter(|a| a.x > k)
            .map(|a| a.p * (a.x - k))
            .sum();
        let segs: f64 = self
            .segments
            .iter()
            .filter(|s| s.right > k)
            .map(|s| {
                let lo = s.left.max(k);
                s.density * ((s.right - k).powi(2) - (lo - k).powi(2)) / 2.0
            })
            .sum();
        atoms + segs
    }

    /// `E[(k - X)^+]`.
    pub fn put_price(&self, k: f64) -> f64 {
        self.reflected().call_price(-k)
    }

    /// `u(x) = ∫|x - y| μ(dy)` by direct summation over atoms and segments.
    pub fn potential(&self, x: f64) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.p * (x - a.x).abs()).sum();
        let segs: f64 = self
            .segments
            .iter()
            .map(|s| {
                let (l, r, d) = (s.left, s.right, s.density);
                if x <= l {
                    d * (r - l) * ((l + r) / 2.0 - x)
                } else if x >= r {
                    d * (r - l) * (x - (l + r) / 2.0)
                } else {
                    d * ((x - l).powi(2) + (r - x).powi(2)) / 2.0
                }
            })
            .sum();
        atoms + segs
    }

    /// Image under `x ↦ x + c`.
    pub fn shifted(&self, c: f64) -> Measure {
        Measure {
            atoms: self
                .atoms
                .iter()
                .map(|a| Atom { x: a.x + c, p: a.p })
                .collect(),
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    left: s.left + c,
                    right: s.right + c,
                    density: s.density,
                })
                .collect(),
            name: self.name.clone(),
        }
    }

    /// Shifted so that the mean is exactly representable as 0 up to rounding.
    pub fn recentred(&self) -> Measure {
        self.shifted(-self.mean())
    }

    /// Image under `x ↦ -x`.
    pub fn reflected(&self) -> Measure {
        Measure {
            atoms: self
                .atoms
                .iter()
                .rev()
                .map(|a| Atom { x: -a.x, p: a.p })
                .collect(),
            segments: self
                .segments
                .iter()
                .rev()
                .map(|s| Segment {
                    left: -s.right,
                    right: -s.left,
                    density: s.density,
                })
                .collect(),
            name: self.name.clone(),
        }
    }

    /// Atomic measure with one atom per group of `per_group` consecutive
    /// segments, at the barycentre of the group. Atoms are kept. Masses and
    /// the mean are exact.
    pub fn coarsened(&self, per_group: usize) -> Result<Measure> {
        let per_group = per_group.max(1);
        let mut atoms = self.atoms.clone();
        for group in self.segments.chunks(per_group) {
            let p: f64 = group.iter().map(Segment::mass).sum();
            if p > 0.0 {
                let moment: f64 = group
                    .iter()
                    .map(|s| s.mass() * 0.5 * (s.left + s.right))
                    .sum();
                let x = (moment / p).clamp(group[0].left, group[group.len() - 1].right);
                atoms.push(Atom { x, p });
            }
        }
        validate_measure(Measure {
            atoms,
            segments: Vec::new(),
            name: self.name.clone(),
        })
    }

    /// Replaces each segment by `cells` atoms at the centres of equal cells,
    /// each carrying the cell mass. Mean-preserving.
    pub fn atomized(&self, cells: usize) -> Result<Measure> {
        let cells = cells.max(1);
        let mut atoms = self.atoms.clone();
        for s in &self.segments {
            let w = (s.right - s.left) / cells as f64;
            for j in 0..cells {
                atoms.push(Atom {
                    x: s.left + (j as f64 + 0.5) * w,
                    p: s.density * w,
                });
            }
        }
        validate_measure(Measure {
            atoms,
            segments: Vec::new(),
            name: self.name.clone(),
        })
    }

    /// Restriction to the open interval `(lo, hi)`; `None` means unbounded.
    /// Not renormalised.
    pub fn restricted_open(&self, lo: Option<f64>, hi: Option<f64>) -> Measure {
        let lo_v = lo.unwrap_or(f64::NEG_INFINITY);
        let hi_v = hi.unwrap_or(f64::INFINITY);
        Measure {
            atoms: self
                .atoms
                .iter()
                .filter(|a| lo_v < a.x && a.x < hi_v)
                .copied()
                .collect(),
            segments: self
                .segments
                .iter()
                .filter_map(|s| {
                    let l = s.left.max(lo_v);
                    let r = s.right.min(hi_v);
                    (l < r).then_some(Segment {
                        left: l,
                        right: r,
                        density: s.density,
                    })
                })
                .collect(),
            name: self.name.clone(),
        }
    }

    /// Discretises a continuous law with CDF `cdf` on `[left, right]` into
    /// `cells` equal segments carrying the exact cell masses. The mass
    /// outside `[left, right]` is dropped and the result renormalised.
    pub fn from_cdf(
        cdf: impl Fn(f64) -> f64,
        left: f64,
        right: f64,
        cells: usize,
    ) -> Result<Measure> {
        if !(left < right) || cells == 0 {
            return Err(MeasureError::Invalid("empty discretisation range".into()));
        }
        let w = (right - left) / cells as f64;
        let edge = |j: usize| if j == cells { right } else { left + j as f64 * w };
        let mut segments = Vec::with_capacity(cells);
        let mut prev = cdf(left);
        for j in 0..cells {
            let (l, r) = (edge(j), edge(j + 1));
            let next = cdf(r);
            segments.push(Segment {
                left: l,
                right: r,
                density: (next - prev) / (r - l),
            });
            prev = next;
        }
        let mass: f64 = segments.iter().map(Segment::mass).sum();
        if !(mass > 0.0) {
            return Err(MeasureError::EmptyMeasure);
        }
        for s in &mut segments {
            s.density /= mass;
        }
        validate_measure(Measure {
            atoms: Vec::new(),
            segments,
            name: None,
        })
    }
}

/// Measures used across examples, tests and the CLI.
pub mod presets {
    use super::*;

    /// `¼δ₋₁ + ½δ₀ + ¼δ₁`.
    pub fn three_point() -> Measure {
        Measure::from_atoms([(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)])
            .expect("valid preset")
            .with_name("three-point")
    }

    /// `½δ₋₁ + ½δ₁`.
    pub fn two_point() -> Measure {
        Measure::from_atoms([(-1.0, 0.5), (1.0, 0.5)])
            .expect("valid preset")
            .with_name("two-point")
    }

    pub fn uniform(a: f64, b: f64) -> Measure {
        validate_measure(Measure {
            atoms: Vec::new(),
            segments: vec![Segment {
                left: a,
                right: b,
                density: 1.0 / (b - a),
            }],
            name: Some("uniform".into()),
        })
        .expect("valid preset")
    }

    pub fn laplace_cdf(x: f64) -> f64 {
        if x < 0.0 {
            0.5 * x.exp()
        } else {
            1.0 - 0.5 * (-x).exp()
        }
    }

    /// Density `½e^{-|x|}` on `[-half_width, half_width]` in `cells` cells.
    /// Cell masses come from the side of the origin the cell lies on, so
    /// tail cells keep full relative precision.
    pub fn laplace(half_width: f64, cells: usize) -> Measure {
        let w = 2.0 * half_width / cells as f64;
        let edge = |j: usize| if j == cells { half_width } else { -half_width + j as f64 * w };
        let mass = |l: f64, r: f64| {
            if r <= 0.0 {
                -0.5 * r.exp() * (l - r).exp_m1()
            } else if l >= 0.0 {
                -0.5 * (-l).exp() * (l - r).exp_m1()
            } else {
                -0.5 * (l.exp_m1() + (-r).exp_m1())
            }
        };
        let segments: Vec<Segment> = (0..cells)
            .map(|j| {
                let (l, r) = (edge(j), edge(j + 1));
                Segment {
                    left: l,
                    right: r,
                    density: mass(l, r) / (r - l),
                }
            })
            .collect();
        let total: f64 = segments.iter().map(Segment::mass).sum();
        validate_measure(Measure {
            atoms: Vec::new(),
            segments: segments
                .into_iter()
                .map(|s| Segment {
                    density: s.density / total,
                    ..s
                })
                .collect(),
            name: Some("laplace".into()),
        })
        .expect("valid preset")
    }

    /// Density ½ on (0, 1) with atoms ¼ at -2 and ¼ at 1: the right end is
    /// an atom approached by density, the left end an isolated atom.
    pub fn density_with_endpoint_atom() -> Measure {
        validate_measure(Measure {
            atoms: vec![Atom { x: -2.0, p: 0.25 }, Atom { x: 1.0, p: 0.25 }],
            segments: vec![Segment {
                left: 0.0,
                right: 1.0,
                density: 0.5,
            }],
            name: Some("density-with-endpoint-atom".into()),
        })
        .expect("valid preset")
    }
}

/// One knot of the tabulated excess potential.
#[derive(Debug, Clone, Copy)]
struct Knot {
    x: f64,
    /// `μ((-∞, x))`
    below: f64,
    /// `μ((x, ∞))`
    above: f64,
    atom: f64,
    excess: f64,
}

/// `u` and `U` of a validated measure, with mean and support bounds.
#[derive(Debug, Clone)]
pub struct PotentialProfile {
    pub base: Measure,
    pub mean: f64,
    pub lower: Bound,
    pub upper: Bound,
    /// Positions where `u` is not twice differentiable (atoms and segment ends).
    pub breakpoints: Vec<f64>,
    knots: Vec<Knot>,
    /// Density on `(knots[i], knots[i+1])`.
    piece_density: Vec<f64>,
}

impl PotentialProfile {
    /// Builds the profile of a measure that has already been validated.
    pub fn new(base: Measure) -> Result<Self> {
        if base.atoms.is_empty() && base.segments.is_empty() {
            return Err(MeasureError::EmptyMeasure);
        }
        let mean = base.mean();
        let lower = base.lower();
        let upper = base.upper();

        let mut breakpoints: Vec<f64> = base
            .atoms
            .iter()
            .map(|a| a.x)
            .chain(base.segments.iter().flat_map(|s| [s.left, s.right]))
            .collect();
        breakpoints.sort_by(cmp_f64);
        breakpoints.dedup();

        let mut xs = breakpoints.clone();
        xs.push(mean);
        xs.sort_by(cmp_f64);
        xs.dedup();

        let n = xs.len();
        let piece_density: Vec<f64> = xs
            .windows(2)
            .map(|w| base.density_at(0.5 * (w[0] + w[1])))
            .collect();
        let atom: Vec<f64> = xs.iter().map(|&x| base.atom_mass(x)).collect();

        let mut below = vec![0.0; n];
        for i in 1..n {
            below[i] = below[i - 1] + atom[i - 1] + piece_density[i - 1] * (xs[i] - xs[i - 1]);
        }
        let mut above = vec![0.0; n];
        for i in (0..n - 1).rev() {
            above[i] = above[i + 1] + atom[i + 1] + piece_density[i] * (xs[i + 1] - xs[i]);
        }

        // U(ℓ₊) = 0; walking left, U(x_i) = U(x_{i+1}) + 2 μ([x_{i+1},∞)) s - ... with
        // every term non-negative: U'(x-) = -2 μ([x,∞)) on the right of the mean.
        let mut excess = vec![0.0; n];
        let mean_idx = xs
            .iter()
            .position(|&x| x == mean)
            .expect("mean is a knot");
        for i in (mean_idx..n - 1).rev() {
            let s = xs[i + 1] - xs[i];
            let d = piece_density[i];
            let tail = above[i + 1] + atom[i + 1];
            // U on the piece: U(x_{i+1} - t) = U(x_{i+1}) + 2 tail t + d t^2
            excess[i] = excess[i + 1] + 2.0 * tail * s + d * s * s;
        }
        for i in 1..=mean_idx {
            let s = xs[i] - xs[i - 1];
            let d = piece_density[i - 1];
            let head = below[i - 1] + atom[i - 1];
            let from_left = excess[i - 1] + 2.0 * head * s + d * s * s;
            if i < mean_idx {
                excess[i] = from_left;
            } else {
                excess[i] = 0.5 * (excess[i] + from_left);
            }
        }

        let knots = (0..n)
            .map(|i| Knot {
                x: xs[i],
                below: below[i],
                above: above[i],
                atom: atom[i],
                excess: excess[i],
            })
            .collect();

        Ok(Self {
            base,
            mean,
            lower,
            upper,
            breakpoints,
            knots,
            piece_density,
        })
    }

    pub fn from_measure(raw: Measure) -> Result<Self> {
        Self::new(validate_measure(raw)?)
    }

    fn lo(&self) -> f64 {
        self.knots[0].x
    }

    fn hi(&self) -> f64 {
        self.knots[self.knots.len() - 1].x
    }

    /// Index `i` such that `knots[i].x <= x < knots[i+1].x`.
    fn piece(&self, x: f64) -> usize {
        self.knots.partition_point(|k| k.x <= x).saturating_sub(1)
    }

    /// `U(x) = u(x) - |x - x0|`, non-negative and zero outside the support.
    pub fn excess_potential(&self, x: f64) -> f64 {
        if x <= self.lo() || x >= self.hi() {
            return 0.0;
        }
        let i = self.piece(x);
        let a = &self.knots[i];
        if a.x == x {
            return a.excess;
        }
        let b = &self.knots[i + 1];
        let d = self.piece_density[i];
        let t = x - a.x;
        let s = b.x - x;
        let value = if b.x <= self.mean {
            // left of the mean U'(y+) = 2 μ((-∞, y])
            if t <= s {
                a.excess + 2.0 * (a.below + a.atom) * t + d * t * t
            } else {
                b.excess - 2.0 * b.below * s + d * s * s
            }
        } else if t <= s {
            a.excess - 2.0 * a.above * t + d * t * t
        } else {
            b.excess + 2.0 * (b.above + b.atom) * s + d * s * s
        };
        value.max(0.0)
    }

    /// `u(x) = ∫|x - y| μ(dy)`.
    pub fn potential(&self, x: f64) -> f64 {
        self.excess_potential(x) + (x - self.mean).abs()
    }

    /// One-sided derivatives `(u'(x-), u'(x+))`.
    pub fn potential_slopes(&self, x: f64) -> (f64, f64) {
        let left = 2.0 * self.base.cdf_left(x) - 1.0;
        let right = 2.0 * self.base.cdf(x) - 1.0;
        (left, right)
    }

    /// One-sided derivatives `(U'(x-), U'(x+))`.
    pub fn excess_slopes(&self, x: f64) -> (f64, f64) {
        let (ul, ur) = self.potential_slopes(x);
        let sl = if x > self.mean { 1.0 } else { -1.0 };
        let sr = if x >= self.mean { 1.0 } else { -1.0 };
        (ul - sl, ur - sr)
    }

    /// Right-continuous CDF using the knot table.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < self.lo() {
            return 0.0;
        }
        if x >= self.hi() {
            return 1.0;
        }
        let i = self.piece(x);
        let k = &self.knots[i];
        (k.below + k.atom + self.piece_density[i] * (x - k.x)).min(1.0)
    }

    /// Left limit of the CDF.
    pub fn cdf_left(&self, x: f64) -> f64 {
        if x <= self.lo() {
            return 0.0;
        }
        if x > self.hi() {
            return 1.0;
        }
        let i = self.knots.partition_point(|k| k.x < x) - 1;
        let k = &self.knots[i];
        if i + 1 < self.knots.len() && self.knots[i + 1].x == x {
            return self.knots[i + 1].below;
        }
        (k.below + k.atom + self.piece_density[i] * (x - k.x)).min(1.0)
    }

    pub fn density_at(&self, x: f64) -> f64 {
        self.base.density_at(x)
    }

    pub fn atom_mass(&self, x: f64) -> f64 {
        self.base.atom_mass(x)
    }

    /// Profile of the measure shifted to mean zero.
    pub fn recentred(&self) -> Result<PotentialProfile> {
        PotentialProfile::new(self.base.recentred())
    }

    /// Mean-preserving truncation onto `[q⁻, q⁺] ∪ {-M, M}`.
    ///
    /// On each side where the support exceeds `level`, `q` is the point
    /// where the line through `(±M, M ∓ x0)` touches `u`; the truncated
    /// measure agrees with `μ` on `(q⁻, q⁺)`, puts the slope defect at `q`
    /// and the rest at `±M`, so that its potential equals `u` on `[q⁻, q⁺]`
    /// and lies below `u` elsewhere.
    pub fn truncate_measure(&self, level: f64) -> Result<Measure> {
        let needs_right = self.hi() > level;
        let needs_left = self.lo() < -level;
        if !needs_right && !needs_left {
            return Err(MeasureError::TruncationUnnecessary { level });
        }
        if !(level > self.mean.abs()) || !(level > self.potential(self.mean).abs()) {
            return Err(MeasureError::NoTangent { level });
        }
        let right = if needs_right {
            Some(self.right_tangency(level)?)
        } else {
            None
        };
        let left = if needs_left {
            let mirror = PotentialProfile::new(self.base.reflected())?;
            let t = mirror.right_tangency(level)?;
            Some(Tangency {
                q: -t.q,
                q_mass: t.q_mass,
                end_mass: t.end_mass,
            })
        } else {
            None
        };
        let (mut left, mut right) = (left, right);
        if let (Some(l), Some(r)) = (left, right) {
            if l.q == r.q {
                // both lines touch at the same knot: the two slope defects
                // overlap by the mass already there
                let shared = (l.q_mass + r.q_mass - self.atom_mass(l.q)).max(0.0);
                left = Some(Tangency { q_mass: shared, ..l });
                right = Some(Tangency { q_mass: 0.0, ..r });
            } else if !(l.q < r.q) {
                return Err(MeasureError::NoTangent { level });
            }
        }

        let mut out = self
            .base
            .restricted_open(left.map(|t| t.q), right.map(|t| t.q));
        for (t, end) in [(left, -level), (right, level)] {
            if let Some(t) = t {
                if t.q_mass > 0.0 {
                    out.atoms.push(Atom {
                        x: t.q,
                        p: t.q_mass,
                    });
                }
                if t.end_mass > 0.0 {
                    out.atoms.push(Atom {
                        x: end,
                        p: t.end_mass,
                    });
                }
            }
        }
        let out = validate_measure(out)?;
        if (out.mean() - self.mean).abs() > 1e-9 * (1.0 + level) {
            return Err(MeasureError::NoTangent { level });
        }
        Ok(out)
    }

    /// `g(q) = u(q) + u'(q)(M - q) - (M - x0)` is non-decreasing on
    /// `(-∞, M)`; its zero crossing is the tangency point.
    fn right_tangency(&self, level: f64) -> Result<Tangency> {
        let target = level - self.mean;
        let g = |x: f64, slope: f64| self.potential(x) + slope * (level - x) - target;
        let finish = |q: f64, slope_left: f64| -> Tangency {
            let line = (target - self.potential(q)) / (level - q);
            Tangency {
                q,
                q_mass: ((line - slope_left) / 2.0).max(0.0),
                end_mass: ((1.0 - line) / 2.0).max(0.0),
            }
        };
        for (i, k) in self.knots.iter().enumerate() {
            if k.x >= level {
                break;
            }
            let slope_left = 2.0 * k.below - 1.0;
            let slope_right = 1.0 - 2.0 * k.above;
            let g_left = g(k.x, slope_left);
            let g_right = g(k.x, slope_right);
            if g_left <= 0.0 && g_right >= 0.0 {
                return Ok(finish(k.x, slope_left));
            }
            if g_right < 0.0 {
                let next = self.knots.get(i + 1).map(|n| n.x).unwrap_or(f64::INFINITY);
                let end = next.min(level);
                let d = self.piece_density.get(i).copied().unwrap_or(0.0);
                // on the piece g(k + t) = g_right + 2 d t (M - k) - d t^2
                let span = level - k.x;
                let g_end = g_right + 2.0 * d * (end - k.x) * span - d * (end - k.x).powi(2);
                if d > 0.0 && g_end >= 0.0 {
                    let disc = (span * span + g_right / d).max(0.0);
                    let t = -g_right / (d * (span + disc.sqrt()));
                    let q = k.x + t.min(end - k.x);
                    let slope = slope_right + 2.0 * d * (q - k.x);
                    return Ok(finish(q, slope));
                }
            }
        }
        Err(MeasureError::NoTangent { level })
    }

    /// `(N - u(a)) / (N - |a|)` for a centred measure supported in `(-N, N)`.
    pub fn vhat_ratio(&self, n: f64, a: f64) -> Result<f64> {
        if !(a.abs() < n) {
            return Err(MeasureError::OutOfRange {
                what: "evaluation point",
                value: a,
            });
        }
        if !(self.lo() > -n && self.hi() < n) {
            return Err(MeasureError::OutOfRange {
                what: "support bound",
                value: n,
            });
        }
        if self.mean.abs() > Tolerances::default().mean {
            return Err(MeasureError::NotCentred { mean: self.mean });
        }
        Ok((n - self.potential(a)) / (n - a.abs()))
    }
}

#[derive(Debug, Clone, Copy)]
struct Tangency {
    q: f64,
    q_mass: f64,
    end_mass: f64,
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn validate_symmetric_examples() {
        let m = two_point();
        assert_abs_diff_eq!(m.mean(), 0.0);
        assert_eq!(m.lower(), Bound::Finite(-1.0));
        assert_eq!(m.upper(), Bound::Finite(1.0));
        let m3 = three_point();
        assert_abs_diff_eq!(m3.mean(), 0.0);
        assert_eq!(m3.atoms.len(), 3);
    }

    #[test]
    fn half_mass_is_rejected() {
        let err = Measure::from_atoms([(0.0, 0.5)]).unwrap_err();
        assert!(matches!(err, MeasureError::NonUnitMass { .. }));
    }

    #[test]
    fn empty_and_infinite_inputs() {
        assert_eq!(
            validate_measure(Measure::default()).unwrap_err(),
            MeasureError::EmptyMeasure
        );
        let err = Measure::from_atoms([(f64::INFINITY, 0.5), (0.0, 0.5)]).unwrap_err();
        assert_eq!(err, MeasureError::NonFiniteMean);
    }

    #[test]
    fn duplicates_merge_and_sort() {
        let m = Measure::from_atoms([(1.0, 0.25), (-1.0, 0.5), (1.0, 0.25)]).unwrap();
        assert_eq!(m.atoms.len(), 2);
        assert_eq!(m.atoms[0].x, -1.0);
        assert_abs_diff_eq!(m.atoms[1].p, 0.5);
    }

    #[test]
    fn overlapping_segments_rejected() {
        let raw = Measure {
            segments: vec![
                Segment {
                    left: 0.0,
                    right: 1.0,
                    density: 0.5,
                },
                Segment {
                    left: 0.5,
                    right: 1.5,
                    density: 0.5,
                },
            ],
            ..Default::default()
        };
        assert!(matches!(
            validate_measure(raw),
            Err(MeasureError::Invalid(_))
        ));
    }

    #[test]
    fn potential_examples() {
        let p = PotentialProfile::new(three_point()).unwrap();
        assert_abs_diff_eq!(p.potential(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.excess_potential(0.5), 0.25, epsilon = 1e-15);

        let u = PotentialProfile::new(uniform(-1.0, 1.0)).unwrap();
        for &x in &[-0.9, -0.3, 0.0, 0.25, 0.8] {
            assert_abs_diff_eq!(u.potential(x), (1.0 + x * x) / 2.0, epsilon = 1e-14);
            assert_abs_diff_eq!(
                u.excess_potential(x),
                (1.0 - f64::abs(x)).powi(2) / 2.0,
                epsilon = 1e-14
            );
        }
        assert_abs_diff_eq!(u.potential(0.0), 0.5);
    }

    #[test]
    fn excess_potential_relative_accuracy_near_bound() {
        let u = PotentialProfile::new(uniform(-1.0, 1.0)).unwrap();
        for k in 1..12 {
            let eps = 10f64.powi(-k);
            let exact = eps * eps / 2.0;
            let got = u.excess_potential(1.0 - eps);
            assert!(((got - exact) / exact).abs() < 1e-6, "eps={eps}: {got} vs {exact}");
        }
    }

    #[test]
    fn laplace_potential_at_origin() {
        let p = PotentialProfile::new(laplace(40.0, 8000)).unwrap();
        // exact |x| + e^{-|x|} = 1 at 0; cell discretisation error O(h^2)
        assert_abs_diff_eq!(p.potential(0.0), 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(p.potential(1.5), 1.5 + (-1.5f64).exp(), epsilon = 1e-4);
    }

    #[test]
    fn point_mass_has_zero_excess() {
        let p = PotentialProfile::new(Measure::from_atoms([(0.3, 1.0)]).unwrap()).unwrap();
        assert_eq!(p.excess_potential(0.3), 0.0);
        assert_eq!(p.excess_potential(1.0), 0.0);
    }

    #[test]
    fn excess_vanishes_at_bounds() {
        let p = PotentialProfile::new(density_with_endpoint_atom()).unwrap();
        assert_eq!(p.excess_potential(-2.0), 0.0);
        assert_eq!(p.excess_potential(1.0), 0.0);
        assert!(p.excess_potential(0.999) > 0.0);
    }

    #[test]
    fn fast_potential_matches_direct_summation() {
        let m = density_with_endpoint_atom();
        let p = PotentialProfile::new(m.clone()).unwrap();
        for i in 0..=60 {
            let x = -3.0 + i as f64 * 0.1;
            assert_abs_diff_eq!(p.potential(x), m.potential(x), epsilon = 1e-13);
            assert_abs_diff_eq!(p.cdf(x), m.cdf(x), epsilon = 1e-14);
            assert_abs_diff_eq!(p.cdf_left(x), m.cdf_left(x), epsilon = 1e-14);
        }
    }

    #[test]
    fn truncation_is_noop_for_bounded_support() {
        let p = PotentialProfile::new(three_point()).unwrap();
        assert_eq!(
            p.truncate_measure(5.0).unwrap_err(),
            MeasureError::TruncationUnnecessary { level: 5.0 }
        );
    }

    #[test]
    fn laplace_truncation_matches_potential_inside() {
        let p = PotentialProfile::new(laplace(40.0, 4000)).unwrap();
        let t = p.truncate_measure(10.0).unwrap();
        assert_abs_diff_eq!(t.total_mass(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.mean(), p.mean, epsilon = 1e-9);
        let q = t.atoms.iter().map(|a| a.x).filter(|x| x.abs() < 10.0).fold(0.0, f64::max);
        let tp = PotentialProfile::new(t.clone()).unwrap();
        // symmetric input: symmetric tangency points and end atoms
        let ends: Vec<_> = t.atoms.iter().filter(|a| a.x.abs() == 10.0).collect();
        assert_eq!(ends.len(), 2);
        assert_abs_diff_eq!(ends[0].p, ends[1].p, epsilon = 1e-12);
        let qs = if q > 0.0 {
            q
        } else {
            t.segments.last().unwrap().right
        };
        for j in 0..5 {
            let x = -qs + (2.0 * qs) * (j as f64 + 0.5) / 5.0;
            assert_abs_diff_eq!(tp.potential(x), p.potential(x), epsilon = 1e-8);
        }
        for j in 0..40 {
            let x = -12.0 + j as f64 * 0.6;
            assert!(tp.potential(x) <= p.potential(x) + 1e-12);
        }
    }

    #[test]
    fn vhat_examples() {
        let p = PotentialProfile::new(three_point()).unwrap();
        assert_abs_diff_eq!(p.vhat_ratio(2.0, 0.0).unwrap(), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(p.vhat_ratio(2.0, 1.0).unwrap(), 1.0, epsilon = 1e-15);
        assert!(matches!(
            p.vhat_ratio(2.0, 2.0),
            Err(MeasureError::OutOfRange { .. })
        ));
    }

    #[test]
    fn atomized_preserves_mean() {
        let a = uniform(-1.0, 1.0).atomized(8).unwrap();
        assert_eq!(a.atoms.len(), 8);
        assert_abs_diff_eq!(a.mean(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn json_schema_round_trip() {
        let text = r#"{"atoms":[{"x":-1,"p":0.25},{"x":1,"p":0.25}],"segments":[{"l":-0.5,"r":0.5,"density":0.5}]}"#;
        let m: Measure = serde_json::from_str(text).unwrap();
        let m = validate_measure(m).unwrap();
        assert_eq!(m.segments[0].left, -0.5);
        assert_abs_diff_eq!(m.total_mass(), 1.0);
    }

    #[test]
    fn truncation_with_both_tangents_at_one_atom() {
        let mu = Measure::from_atoms([(-1.0, 0.25), (0.0, 0.5), (1.0, 0.25)]).unwrap();
        let t = PotentialProfile::new(mu).unwrap().truncate_measure(0.75).unwrap();
        // lines through (±0.75, 0.75) touching u(0) = 0.5 have slopes ±1/3
        assert_eq!(t.atoms.len(), 3);
        for (a, x) in t.atoms.iter().zip([-0.75, 0.0, 0.75]) {
            assert_eq!(a.x, x);
            assert_abs_diff_eq!(a.p, 1.0 / 3.0, epsilon = 1e-15);
        }
    }
}
