//! Path-level realisations of the diffusion.
//!
//! Brownian motion is observed at its successive hitting times of the
//! lattice `base + hℤ`: a simple random walk with expected time `h²` per
//! step. Each visit to a site adds an independent `Exp(mean h)` amount of
//! local time at that site, which is the exact law of the Itô–McKean local
//! time accrued at `x` before Brownian motion started at `x` first hits
//! `x ± h`; no local time accrues at other lattice sites meanwhile. Hence
//! the lattice local-time ledger has the law of Brownian local time, and
//! `Φ = Σ L^x m({x})` is exact for a speed measure carried by the lattice.
//!
//! Three routes to `X_T` are provided: the time change `X_t = B_{A_t}`
//! ([`simulate_gap_diffusion`], [`sample_time_change`]), the Poisson-mark
//! stopping time of the local-time region ([`poisson_stop`]), and an
//! Euler–Maruyama scheme for `dX = σ(X) dW` ([`SdeModel`]).

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::measure::{Bound, PotentialProfile};
use crate::rng::{path_rng, stream, SimRng};
use crate::speed::{Side, SpeedMeasure, Weight};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("step cap of {0} exceeded")]
    StepCapExceeded(u64),
    #[error("atoms at {0} and {1} snap to the same site")]
    GridTooCoarse(f64, f64),
    #[error("no density at {0}")]
    NoDensityAt(f64),
    #[error("{what} out of range: {value}")]
    OutOfRange { what: &'static str, value: f64 },
    #[error("speed measure has no bounded interval")]
    Unbounded,
}

pub type Result<T> = std::result::Result<T, PathError>;

pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

/// A speed measure carried by the sites of `base + i h`, `i = 0..n`.
#[derive(Debug, Clone)]
pub struct Lattice {
    pub h: f64,
    pub base: f64,
    /// Finite mass per site (0 on traps).
    pub mass: Vec<f64>,
    pub trap: Vec<bool>,
    /// Reported position per site; snapped atoms keep their exact position.
    pub position: Vec<f64>,
    pub start: usize,
}

impl Lattice {
    /// Discretises `m` on the lattice through its start point. Atoms snap
    /// to the nearest site; density contributes `λ(x) h` per site (half of
    /// each one-sided value at a segment end); the bounds are traps.
    pub fn from_speed_measure(sm: &SpeedMeasure, h: f64) -> Result<Lattice> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(PathError::OutOfRange {
                what: "grid step",
                value: h,
            });
        }
        let (lo, hi) = match sm.interval {
            (Bound::Finite(l), Bound::Finite(r)) => (l, r),
            _ => return Err(PathError::Unbounded),
        };
        let x0 = sm.start;
        let kmin = ((lo - x0) / h).round() as i64;
        let kmax = ((hi - x0) / h).round() as i64;
        if kmin >= 0 || kmax <= 0 {
            return Err(PathError::GridTooCoarse(lo, hi));
        }
        let n = (kmax - kmin + 1) as usize;
        let base = x0 + kmin as f64 * h;
        let start = (-kmin) as usize;
        let mut lat = Lattice {
            h,
            base,
            mass: vec![0.0; n],
            trap: vec![false; n],
            position: (0..n).map(|i| x0 + (kmin + i as i64) as f64 * h).collect(),
            start,
        };
        lat.trap[0] = true;
        lat.trap[n - 1] = true;
        lat.position[0] = lo;
        lat.position[n - 1] = hi;
        lat.position[start] = x0;

        let mut owner: Vec<Option<f64>> = vec![None; n];
        owner[0] = Some(lo);
        owner[n - 1] = Some(hi);
        for a in &sm.atoms {
            let w = sm.weight(a);
            if matches!(w, Weight::Infinite) && (a.x == lo || a.x == hi) {
                continue;
            }
            let k = ((a.x - x0) / h).round() as i64 - kmin;
            if k <= 0 || k >= n as i64 - 1 {
                return Err(PathError::GridTooCoarse(a.x, if k <= 0 { lo } else { hi }));
            }
            let k = k as usize;
            let tol = 1e-9 * h;
            if k == start && (a.x - x0).abs() > tol {
                return Err(PathError::GridTooCoarse(a.x, x0));
            }
            if let Some(other) = owner[k] {
                return Err(PathError::GridTooCoarse(other, a.x));
            }
            owner[k] = Some(a.x);
            lat.position[k] = a.x;
            match w {
                Weight::Finite(b) => lat.mass[k] += b,
                Weight::Infinite => lat.trap[k] = true,
            }
        }
        for k in 1..n - 1 {
            let x = x0 + (kmin + k as i64) as f64 * h;
            let tol = 1e-9 * h;
            let on_edge = sm
                .segments
                .iter()
                .any(|s| (s.left - x).abs() <= tol || (s.right - x).abs() <= tol);
            let add = if on_edge {
                0.5 * h * (sm.lambda_one_sided(x, Side::Left) + sm.lambda_one_sided(x, Side::Right))
            } else {
                h * sm.lambda_at(x)
            };
            if add.is_finite() {
                lat.mass[k] += add;
            } else {
                lat.trap[k] = true;
            }
        }
        Ok(lat)
    }

    /// Lattice on `[a, b]` with traps at both ends and no mass.
    pub fn interval(a: f64, b: f64, h: f64) -> Result<Lattice> {
        let n = ((b - a) / h).round() as i64;
        if n < 2 {
            return Err(PathError::OutOfRange {
                what: "interval",
                value: b - a,
            });
        }
        let n = n as usize + 1;
        let mut trap = vec![false; n];
        trap[0] = true;
        trap[n - 1] = true;
        Ok(Lattice {
            h,
            base: a,
            mass: vec![0.0; n],
            trap,
            position: (0..n).map(|i| a + i as f64 * h).collect(),
            start: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn site_of(&self, x: f64) -> Option<usize> {
        let k = ((x - self.base) / self.h).round();
        (k >= 0.0 && (k as usize) < self.len()).then_some(k as usize)
    }
}

/// Default grid step: every gap between atoms (and the start point) spans
/// at least 10 sites. With a density part the step is also at most
/// `E|X - x0| / 50` (taken from the profile, else the interval span / 200).
pub fn default_grid_step(sm: &SpeedMeasure) -> f64 {
    let (lo, hi) = sm.bounds();
    let mut pts: Vec<f64> = sm.atoms.iter().map(|a| a.x).collect();
    pts.push(sm.start);
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let min_gap = pts
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    let spread = sm
        .profile()
        .map_or(0.25 * (hi - lo), |p| p.potential(sm.start));
    let h = (min_gap / 10.0).min(spread / 50.0);
    if sm.is_atomic() {
        min_gap / 10.0
    } else {
        h
    }
}

/// Random walk on a lattice with its local-time ledger.
#[derive(Debug, Clone)]
pub struct LocalTimePath<'a> {
    lattice: &'a Lattice,
    pub position: usize,
    pub steps: u64,
    pub visits: Vec<u64>,
    pub local_time: Vec<f64>,
}

impl<'a> LocalTimePath<'a> {
    pub fn new(lattice: &'a Lattice, start: usize) -> Self {
        let n = lattice.len();
        Self {
            lattice,
            position: start,
            steps: 0,
            visits: vec![0; n],
            local_time: vec![0.0; n],
        }
    }

    /// Local time that the current visit will add at the current site.
    pub fn draw_dwell(&self, rng: &mut SimRng) -> f64 {
        let e: f64 = Exp1.sample(rng);
        self.lattice.h * e
    }

    pub fn record_dwell(&mut self, dwell: f64) {
        self.visits[self.position] += 1;
        self.local_time[self.position] += dwell;
    }

    pub fn step(&mut self, rng: &mut SimRng) {
        if rng.random::<bool>() {
            self.position += 1;
        } else {
            self.position -= 1;
        }
        self.steps += 1;
    }

    /// Expected Brownian time elapsed: `h²` per step.
    pub fn elapsed(&self) -> f64 {
        self.steps as f64 * self.lattice.h * self.lattice.h
    }

    pub fn at_trap(&self) -> bool {
        self.lattice.trap[self.position]
    }

    /// `Φ = Σ_x L^x m({x})` over non-trap sites.
    pub fn phi(&self) -> f64 {
        self.local_time
            .iter()
            .zip(&self.lattice.mass)
            .map(|(l, m)| l * m)
            .sum()
    }
}

/// `E^x[L^y at the exit time of (a, b)] = 2 (x∧y - a)(b - x∨y) / (b - a)`.
pub fn expected_local_time(x: f64, y: f64, a: f64, b: f64) -> Result<f64> {
    let (lo, hi) = (x.min(y), x.max(y));
    if !(a < lo && hi < b) {
        return Err(PathError::OutOfRange {
            what: "local time configuration",
            value: if a >= lo { a } else { b },
        });
    }
    Ok(2.0 * (lo - a) * (b - hi) / (b - a))
}

/// Samples of `L^y` at the first exit from `(a, b)` of a walk started at
/// `x`, on the lattice `a + hℤ` (`x`, `y` snapped to it).
pub fn simulate_local_time_at_exit(
    x: f64,
    y: f64,
    (a, b): (f64, f64),
    h: f64,
    paths: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    expected_local_time(x, y, a, b)?;
    let lat = Lattice::interval(a, b, h)?;
    let sx = lat.site_of(x).ok_or(PathError::OutOfRange {
        what: "start",
        value: x,
    })?;
    let sy = lat.site_of(y).ok_or(PathError::OutOfRange {
        what: "level",
        value: y,
    })?;
    Ok((0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, stream::LOCAL_TIME, k);
            let mut walk = LocalTimePath::new(&lat, sx);
            let mut ly = 0.0;
            while !walk.at_trap() {
                if walk.position == sy {
                    ly += walk.draw_dwell(&mut rng);
                }
                walk.step(&mut rng);
            }
            ly
        })
        .collect())
}

/// Values of the time-changed walk on a diffusion-time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GapPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// `A_t`, the walk time at which `Φ` first exceeds `t`.
    pub inverse: Vec<f64>,
    /// `Φ` at the end of the visit during which it exceeds `t` (`≥ t`).
    pub phi_after: Vec<f64>,
}

/// `X_t = B_{A_t}` at nondecreasing times `t_grid`, with `A` the
/// right-continuous inverse of `Φ`.
pub fn simulate_gap_diffusion(
    sm: &SpeedMeasure,
    t_grid: &[f64],
    h: f64,
    seed: u64,
) -> Result<GapPath> {
    let lat = Lattice::from_speed_measure(sm, h)?;
    let mut rng = path_rng(seed, stream::TIME_CHANGE, 0);
    gap_path_on(&lat, t_grid, &mut rng, DEFAULT_STEP_CAP)
}

pub fn gap_path_on(
    lat: &Lattice,
    t_grid: &[f64],
    rng: &mut SimRng,
    step_cap: u64,
) -> Result<GapPath> {
    if t_grid.windows(2).any(|w| w[1] < w[0]) || t_grid.first().is_some_and(|&t| t < 0.0) {
        return Err(PathError::OutOfRange {
            what: "time grid",
            value: t_grid.first().copied().unwrap_or(0.0),
        });
    }
    let mut out = GapPath {
        times: t_grid.to_vec(),
        values: Vec::with_capacity(t_grid.len()),
        inverse: Vec::with_capacity(t_grid.len()),
        phi_after: Vec::with_capacity(t_grid.len()),
    };
    let mut walk = LocalTimePath::new(lat, lat.start);
    let mut phi = 0.0;
    let mut next = 0;
    while next < t_grid.len() {
        if walk.steps >= step_cap {
            return Err(PathError::StepCapExceeded(step_cap));
        }
        let here = lat.position[walk.position];
        if walk.at_trap() {
            while next < t_grid.len() {
                out.values.push(here);
                out.inverse.push(walk.elapsed());
                out.phi_after.push(f64::INFINITY);
                next += 1;
            }
            break;
        }
        let m = lat.mass[walk.position];
        if m > 0.0 {
            let dwell = walk.draw_dwell(rng);
            walk.record_dwell(dwell);
            let after = phi + m * dwell;
            while next < t_grid.len() && t_grid[next] < after {
                out.values.push(here);
                out.inverse.push(walk.elapsed());
                out.phi_after.push(after);
                next += 1;
            }
            phi = after;
        } else {
            walk.visits[walk.position] += 1;
        }
        walk.step(rng);
    }
    Ok(out)
}

/// `X_T` for an independent `T ~ Exp(1)`: the site where `Φ` exceeds `T`.
pub fn sample_time_change(lat: &Lattice, rng: &mut SimRng, step_cap: u64) -> Result<f64> {
    let horizon: f64 = Exp1.sample(rng);
    let mut pos = lat.start;
    let mut phi = 0.0;
    for _ in 0..step_cap {
        if lat.trap[pos] {
            return Ok(lat.position[pos]);
        }
        let m = lat.mass[pos];
        if m > 0.0 {
            let e: f64 = Exp1.sample(rng);
            phi += m * lat.h * e;
            if phi > horizon {
                return Ok(lat.position[pos]);
            }
        }
        if rng.random::<bool>() {
            pos += 1;
        } else {
            pos -= 1;
        }
    }
    Err(PathError::StepCapExceeded(step_cap))
}

pub fn simulate_time_change(
    sm: &SpeedMeasure,
    h: f64,
    paths: u64,
    seed: u64,
    step_cap: u64,
) -> Result<Vec<f64>> {
    let lat = Lattice::from_speed_measure(sm, h)?;
    (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, stream::TIME_CHANGE, k);
            sample_time_change(&lat, &mut rng, step_cap)
        })
        .collect()
}

/// Time `X` spends at its start site before first moving: `Φ` accrued at
/// the start until the walk reaches another charged site.
pub fn first_holding_time(lat: &Lattice, rng: &mut SimRng, step_cap: u64) -> Result<f64> {
    let m0 = lat.mass[lat.start];
    let mut pos = lat.start;
    let mut held = 0.0;
    for _ in 0..step_cap {
        if pos != lat.start && (lat.trap[pos] || lat.mass[pos] > 0.0) {
            return Ok(held);
        }
        if pos == lat.start {
            if lat.trap[pos] {
                return Ok(f64::INFINITY);
            }
            let e: f64 = Exp1.sample(rng);
            held += m0 * lat.h * e;
        }
        if rng.random::<bool>() {
            pos += 1;
        } else {
            pos -= 1;
        }
    }
    Err(PathError::StepCapExceeded(step_cap))
}

pub fn simulate_holding_times(sm: &SpeedMeasure, h: f64, paths: u64, seed: u64) -> Result<Vec<f64>> {
    let lat = Lattice::from_speed_measure(sm, h)?;
    (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, stream::HOLDING, k);
            first_holding_time(&lat, &mut rng, DEFAULT_STEP_CAP)
        })
        .collect()
}

/// Outcome of the Poisson-mark stopping time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonStop {
    pub position: f64,
    /// `Φ` at the stopping time, the exponential clock of `X`.
    pub phi: f64,
}

/// Stops the walk the first time the local-time region `{(u, x): L^x > u}`
/// contains a mark of a Poisson measure with intensity `du m(dx)`.
///
/// Only the lowest mark per site matters; it is `Exp(rate m({x}))` and is
/// drawn lazily on the first visit. Traps carry a mark at height 0, so the
/// walk stops on arrival. At the stop, the local time at the stopping site
/// equals its mark. The reported `Φ` is the level in `Φ`-time of the
/// captured mark, which has the `Exp(1)` law.
pub fn poisson_stop_on(lat: &Lattice, rng: &mut SimRng, step_cap: u64) -> Result<PoissonStop> {
    let mut marks = vec![f64::NAN; lat.len()];
    let mut walk = LocalTimePath::new(lat, lat.start);
    let mut phi = 0.0;
    while walk.steps < step_cap {
        let k = walk.position;
        if lat.trap[k] {
            // Φ runs to infinity at a trap, so the first mark in Φ-time lies
            // an independent Exp(1) above the value on arrival
            let e: f64 = Exp1.sample(rng);
            return Ok(PoissonStop {
                position: lat.position[k],
                phi: phi + e,
            });
        }
        let m = lat.mass[k];
        if m > 0.0 {
            if marks[k].is_nan() {
                let e: f64 = Exp1.sample(rng);
                marks[k] = e / m;
            }
            let dwell = walk.draw_dwell(rng);
            let lt = walk.local_time[k];
            if lt + dwell > marks[k] {
                return Ok(PoissonStop {
                    position: lat.position[k],
                    phi: phi + (marks[k] - lt) * m,
                });
            }
            walk.record_dwell(dwell);
            phi += dwell * m;
        }
        walk.step(rng);
    }
    Err(PathError::StepCapExceeded(step_cap))
}

/// One Poisson-mark stop with seed `(seed, POISSON, 0)`.
pub fn poisson_stop(sm: &SpeedMeasure, h: f64, seed: u64) -> Result<PoissonStop> {
    let lat = Lattice::from_speed_measure(sm, h)?;
    let mut rng = path_rng(seed, stream::POISSON, 0);
    poisson_stop_on(&lat, &mut rng, DEFAULT_STEP_CAP)
}

pub fn simulate_poisson_stops(
    sm: &SpeedMeasure,
    h: f64,
    paths: u64,
    seed: u64,
    step_cap: u64,
) -> Result<Vec<PoissonStop>> {
    let lat = Lattice::from_speed_measure(sm, h)?;
    (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, stream::POISSON, k);
            poisson_stop_on(&lat, &mut rng, step_cap)
        })
        .collect()
}

/// CSV `path_id,stop_position,phi_at_stop`.
pub fn stops_csv(stops: &[PoissonStop]) -> String {
    let mut out = String::from("path_id,stop_position,phi_at_stop\n");
    for (i, s) in stops.iter().enumerate() {
        let _ = writeln!(out, "{i},{:.17e},{:.17e}", s.position, s.phi);
    }
    out
}

/// `σ(x) = √(U(x) / f(x))`, the diffusion coefficient when `m = λ dx`.
pub fn sigma_coefficient(profile: &PotentialProfile, x: f64) -> Result<f64> {
    let inside = match (profile.lower, profile.upper) {
        (Bound::Finite(l), Bound::Finite(r)) => l < x && x < r,
        _ => false,
    };
    let segs = &profile.base.segments;
    let i = segs.partition_point(|s| s.right <= x);
    // at a shared cell edge the density is taken from the right
    let f = match segs.get(i) {
        Some(s) if s.left < x || (s.left == x && i > 0 && segs[i - 1].right == x) => s.density,
        _ => 0.0,
    };
    if !inside || !(f > 0.0) || profile.atom_mass(x) > 0.0 {
        return Err(PathError::NoDensityAt(x));
    }
    Ok((profile.excess_potential(x) / f).sqrt())
}

/// Euler–Maruyama for `dX = σ(X) dW` started at the mean.
#[derive(Debug, Clone)]
pub struct SdeModel {
    profile: PotentialProfile,
    lo: f64,
    hi: f64,
    absorbing_lo: bool,
    absorbing_hi: bool,
}

impl SdeModel {
    /// Requires the density to cover the support interior without gaps and
    /// μ to have no interior atoms.
    pub fn new(profile: &PotentialProfile) -> Result<SdeModel> {
        let (lo, hi) = match (profile.lower, profile.upper) {
            (Bound::Finite(l), Bound::Finite(r)) => (l, r),
            _ => return Err(PathError::Unbounded),
        };
        let segs = &profile.base.segments;
        let Some(first) = segs.first() else {
            return Err(PathError::NoDensityAt(profile.mean));
        };
        if first.left != lo {
            return Err(PathError::NoDensityAt(lo));
        }
        for w in segs.windows(2) {
            if w[0].right != w[1].left {
                return Err(PathError::NoDensityAt(w[0].right));
            }
        }
        if segs[segs.len() - 1].right != hi {
            return Err(PathError::NoDensityAt(segs[segs.len() - 1].right));
        }
        if let Some(a) = profile.base.atoms.iter().find(|a| lo < a.x && a.x < hi) {
            return Err(PathError::NoDensityAt(a.x));
        }
        Ok(SdeModel {
            profile: profile.clone(),
            lo,
            hi,
            absorbing_lo: profile.atom_mass(lo) > 0.0,
            absorbing_hi: profile.atom_mass(hi) > 0.0,
        })
    }

    pub fn sigma(&self, x: f64) -> f64 {
        let segs = &self.profile.base.segments;
        let i = segs.partition_point(|s| s.right <= x).min(segs.len() - 1);
        (self.profile.excess_potential(x) / segs[i].density).sqrt()
    }

    /// One sample of `X_T`, `T ~ Exp(1)`.
    pub fn sample(&self, dt: f64, rng: &mut SimRng, step_cap: u64) -> Result<f64> {
        let horizon: f64 = Exp1.sample(rng);
        let full = (horizon / dt).floor();
        if full > step_cap as f64 {
            return Err(PathError::StepCapExceeded(step_cap));
        }
        let mut x = self.profile.mean;
        let sqrt_dt = dt.sqrt();
        let last = horizon - full * dt;
        let inner_lo = self.lo + 1e-12 * (self.hi - self.lo);
        let inner_hi = self.hi - 1e-12 * (self.hi - self.lo);
        let n = full as u64 + 1;
        for i in 0..n {
            let scale = if i + 1 == n { last.sqrt() } else { sqrt_dt };
            let z: f64 = StandardNormal.sample(rng);
            x += self.sigma(x) * scale * z;
            if x <= self.lo {
                if self.absorbing_lo {
                    return Ok(self.lo);
                }
                x = inner_lo;
            } else if x >= self.hi {
                if self.absorbing_hi {
                    return Ok(self.hi);
                }
                x = inner_hi;
            }
        }
        Ok(x)
    }
}

pub fn simulate_sde(
    profile: &PotentialProfile,
    dt: f64,
    paths: u64,
    seed: u64,
    step_cap: u64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(PathError::OutOfRange {
            what: "dt",
            value: dt,
        });
    }
    let model = SdeModel::new(profile)?;
    (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, stream::SDE, k);
            model.sample(dt, &mut rng, step_cap)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::presets;
    use crate::speed::{build_speed_measure, SegmentDensity, SpeedAtom, SpeedSegment};
    use approx::assert_abs_diff_eq;

    fn sm_of(m: crate::measure::Measure) -> SpeedMeasure {
        build_speed_measure(&PotentialProfile::new(m).unwrap()).unwrap()
    }

    #[test]
    fn local_time_formula_values() {
        assert_eq!(expected_local_time(0.0, 0.0, -1.0, 1.0).unwrap(), 1.0);
        assert_eq!(expected_local_time(0.0, 0.5, -1.0, 1.0).unwrap(), 0.5);
        assert!(expected_local_time(0.0, 1.0 - 1e-12, -1.0, 1.0).unwrap() < 1e-11);
        assert!(expected_local_time(0.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn sigma_examples() {
        let u = PotentialProfile::new(presets::uniform(-1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(sigma_coefficient(&u, 0.0).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sigma_coefficient(&u, 0.5).unwrap(), 0.5, epsilon = 1e-14);
        let l = PotentialProfile::new(presets::laplace(40.0, 8000)).unwrap();
        for &x in &[-3.0, 0.3, 2.0] {
            // cell averages of the density perturb λ by O(cell width)
            assert_abs_diff_eq!(sigma_coefficient(&l, x).unwrap(), 2f64.sqrt(), epsilon = 1e-2);
        }
        let m3 = PotentialProfile::new(presets::three_point()).unwrap();
        assert_eq!(sigma_coefficient(&m3, 0.5), Err(PathError::NoDensityAt(0.5)));
    }

    #[test]
    fn lattice_for_three_point() {
        let sm = sm_of(presets::three_point());
        let h = default_grid_step(&sm);
        assert_abs_diff_eq!(h, 0.1, epsilon = 1e-15);
        let lat = Lattice::from_speed_measure(&sm, h).unwrap();
        assert_eq!(lat.len(), 21);
        assert_eq!(lat.start, 10);
        assert_eq!(lat.mass[10], 1.0);
        assert!(lat.trap[0] && lat.trap[20]);
        assert_eq!(lat.mass.iter().filter(|&&m| m > 0.0).count(), 1);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let m = crate::measure::Measure::from_atoms([(-1.0, 0.3), (-0.5, 0.1), (-0.45, 0.1), (0.6, 0.5)])
            .unwrap();
        let sm = sm_of(m);
        assert!(matches!(
            Lattice::from_speed_measure(&sm, 0.2),
            Err(PathError::GridTooCoarse(..))
        ));
    }

    #[test]
    fn two_point_diffusion_sits_on_the_walls() {
        let sm = sm_of(presets::two_point());
        for seed in 0..20 {
            let path = simulate_gap_diffusion(&sm, &[0.01, 0.5, 2.0], 0.05, seed).unwrap();
            assert!(path.values.iter().all(|v| v.abs() == 1.0));
        }
    }

    #[test]
    fn single_atom_stops_only_on_support() {
        let sm = SpeedMeasure::from_parts(
            vec![SpeedAtom {
                x: 0.0,
                weight: Weight::Finite(0.7),
            }],
            vec![],
            (-1.0, 2.0),
            0.0,
        )
        .unwrap();
        let stops = simulate_poisson_stops(&sm, 0.1, 2000, 5, DEFAULT_STEP_CAP).unwrap();
        assert!(stops
            .iter()
            .all(|s| s.position == 0.0 || s.position == -1.0 || s.position == 2.0));
    }

    #[test]
    fn inverse_time_change_is_consistent() {
        let sm = sm_of(presets::uniform(-1.0, 1.0));
        let grid: Vec<f64> = (0..40).map(|i| 0.05 * i as f64).collect();
        for seed in 0..10 {
            let p = simulate_gap_diffusion(&sm, &grid, 0.02, seed).unwrap();
            for i in 0..grid.len() {
                assert!(p.phi_after[i] >= grid[i]);
                if i > 0 {
                    assert!(p.inverse[i] >= p.inverse[i - 1]);
                }
            }
        }
    }

    #[test]
    fn lebesgue_speed_measure_gives_brownian_motion() {
        let sm = SpeedMeasure::from_parts(
            vec![],
            vec![SpeedSegment {
                left: -10.0,
                right: 10.0,
                density: SegmentDensity::Constant(1.0),
            }],
            (-10.0, 10.0),
            0.0,
        )
        .unwrap();
        let lat = Lattice::from_speed_measure(&sm, 0.05).unwrap();
        let n = 4000;
        let t = 0.5;
        let (mut a_sum, mut a_sq, mut x_sq, mut x_4) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            let mut rng = path_rng(99, stream::TIME_CHANGE, k);
            let p = gap_path_on(&lat, &[t], &mut rng, DEFAULT_STEP_CAP).unwrap();
            a_sum += p.inverse[0];
            a_sq += p.inverse[0] * p.inverse[0];
            x_sq += p.values[0].powi(2);
            x_4 += p.values[0].powi(4);
        }
        let nf = n as f64;
        let (a_mean, x2_mean) = (a_sum / nf, x_sq / nf);
        let a_se = ((a_sq / nf - a_mean * a_mean) / nf).sqrt();
        let x2_se = ((x_4 / nf - x2_mean * x2_mean) / nf).sqrt();
        assert!((a_mean - t).abs() < 3.0 * a_se + 0.01, "A_t mean {a_mean}");
        assert!((x2_mean - t).abs() < 3.0 * x2_se + 0.01, "E X_t^2 {x2_mean}");
    }

    #[test]
    fn csv_layout() {
        let csv = stops_csv(&[PoissonStop {
            position: 1.0,
            phi: 0.5,
        }]);
        assert!(csv.starts_with("path_id,stop_position,phi_at_stop\n0,"));
    }
}
