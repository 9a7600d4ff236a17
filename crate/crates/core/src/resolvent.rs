//! Eigenfunctions and the Green function of a string with atomic mass.
//!
//! With origin `c` (the start point), `φ` and `ψ` solve `f'' = 2λ f m` with
//! `φ(c) = 1`, `φ'(c-) = 0` and `ψ(c) = 0`, `ψ'(c) = 1`. Between atoms they
//! are linear; at an atom `a` of weight `β` the slope jumps by `2λβ f(a)`.
//! Then `h± = lim |ψ/φ|` at `ℓ±`, `h = (1/h₊ + 1/h₋)⁻¹`, `u± = φ ∓ ψ/h±`
//! (the solutions vanishing at `ℓ±` with `u±(c) = 1`), and
//! `g_λ(x, y) = h u₊(x∨y) u₋(x∧y)`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::measure::{Bound, PotentialProfile};
use crate::speed::{SpeedMeasure, Weight};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResolventError {
    #[error("speed measure lives on an unbounded interval")]
    UnboundedInterval,
    #[error("speed measure has a density part")]
    NonAtomicInterior,
    #[error("speed measure has a trap at interior point {0}")]
    InteriorTrap(f64),
    #[error("point {0} is outside the interval")]
    OutOfInterval(f64),
    #[error("spectral parameter must be positive, got {0}")]
    InvalidLambda(f64),
}

pub type Result<T> = std::result::Result<T, ResolventError>;

/// Continuous piecewise-linear function given by its values at knots.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    pub knots: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseLinear {
    /// Linear interpolation; `None` outside `[knots₀, knots_last]`.
    pub fn eval(&self, x: f64) -> Option<f64> {
        let k = &self.knots;
        if !(k[0] <= x && x <= k[k.len() - 1]) {
            return None;
        }
        let i = k.partition_point(|&t| t <= x);
        if i == 0 {
            return Some(self.values[0]);
        }
        if i == k.len() {
            return Some(self.values[k.len() - 1]);
        }
        let (x0, x1) = (k[i - 1], k[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        if x == x0 {
            return Some(v0);
        }
        // anchor at the nearer knot
        let s = (v1 - v0) / (x1 - x0);
        Some(if x - x0 <= x1 - x {
            v0 + s * (x - x0)
        } else {
            v1 - s * (x1 - x)
        })
    }

    /// `(f'(x-), f'(x+))`; at the ends the missing side repeats the other.
    pub fn slopes(&self, x: f64) -> (f64, f64) {
        let k = &self.knots;
        let seg = |i: usize| (self.values[i + 1] - self.values[i]) / (k[i + 1] - k[i]);
        let n = k.len();
        let j = k.partition_point(|&t| t < x);
        if j < n && k[j] == x {
            let left = if j > 0 { seg(j - 1) } else { seg(0) };
            let right = if j + 1 < n { seg(j) } else { seg(n - 2) };
            (left, right)
        } else {
            let i = j.clamp(1, n - 1) - 1;
            (seg(i), seg(i))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenSolution {
    pub lambda: f64,
    pub origin: f64,
    pub phi: PiecewiseLinear,
    pub psi: PiecewiseLinear,
    pub h_plus: f64,
    pub h_minus: f64,
    pub h: f64,
    /// `∫_c^{ℓ₊} dx/φ²` and `∫_{ℓ₋}^c dx/φ²`, which equal `h₊` and `h₋`.
    pub h_plus_integral: f64,
    pub h_minus_integral: f64,
    pub u_plus: PiecewiseLinear,
    pub u_minus: PiecewiseLinear,
    /// Finite atom weights at the knots (0 elsewhere and at the walls).
    pub weights: Vec<f64>,
}

/// Runs the jump recursion from the origin outwards on both sides.
pub fn solve_eigenfunctions(sm: &SpeedMeasure, lambda: f64) -> Result<EigenSolution> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ResolventError::InvalidLambda(lambda));
    }
    let (lo, hi) = match sm.interval {
        (Bound::Finite(l), Bound::Finite(r)) => (l, r),
        _ => return Err(ResolventError::UnboundedInterval),
    };
    if !sm.segments.is_empty() {
        return Err(ResolventError::NonAtomicInterior);
    }
    let c = sm.start;
    let mut knots = vec![lo, c, hi];
    let mut atom_at = Vec::new();
    for a in &sm.atoms {
        match sm.weight(a) {
            Weight::Finite(b) => {
                if a.x <= lo || a.x >= hi {
                    continue;
                }
                knots.push(a.x);
                atom_at.push((a.x, b));
            }
            Weight::Infinite => {
                if lo < a.x && a.x < hi {
                    return Err(ResolventError::InteriorTrap(a.x));
                }
            }
        }
    }
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    atom_at.sort_by(|a, b| a.0.total_cmp(&b.0));
    let weights: Vec<f64> = knots
        .iter()
        .map(|&x| {
            atom_at
                .binary_search_by(|(a, _)| a.total_cmp(&x))
                .map_or(0.0, |i| atom_at[i].1)
        })
        .collect();
    let n = knots.len();
    let ic = knots.iter().position(|&x| x == c).expect("origin is a knot");

    let run = |v0: f64, right_slope: f64| -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[ic] = v0;
        let mut d = right_slope;
        for i in ic + 1..n {
            v[i] = v[i - 1] + d * (knots[i] - knots[i - 1]);
            d += 2.0 * lambda * weights[i] * v[i];
        }
        // slope just left of the origin
        let mut d = right_slope - 2.0 * lambda * weights[ic] * v0;
        for i in (0..ic).rev() {
            v[i] = v[i + 1] - d * (knots[i + 1] - knots[i]);
            d -= 2.0 * lambda * weights[i] * v[i];
        }
        v
    };
    let phi_v = run(1.0, 2.0 * lambda * weights[ic]);
    let psi_v = run(0.0, 1.0);

    let h_plus = psi_v[n - 1] / phi_v[n - 1];
    let h_minus = -psi_v[0] / phi_v[0];
    let h = 1.0 / (1.0 / h_plus + 1.0 / h_minus);
    let inv_sq = |range: std::ops::Range<usize>| -> f64 {
        range
            .map(|i| (knots[i + 1] - knots[i]) / (phi_v[i] * phi_v[i + 1]))
            .sum()
    };
    let h_plus_integral = inv_sq(ic..n - 1);
    let h_minus_integral = inv_sq(0..ic);

    // `φ ∓ ψ/h±` cancels badly near the walls, where both terms are large.
    // The same recursion run inwards from the wall gives u± with positive
    // terms only; the normalisation u±(c) = 1 fixes the constant.
    let mut u_plus = vec![0.0; n];
    let mut d = -1.0;
    for i in (0..n - 1).rev() {
        u_plus[i] = u_plus[i + 1] - d * (knots[i + 1] - knots[i]);
        d -= 2.0 * lambda * weights[i] * u_plus[i];
    }
    let mut u_minus = vec![0.0; n];
    let mut d = 1.0;
    for i in 1..n {
        u_minus[i] = u_minus[i - 1] + d * (knots[i] - knots[i - 1]);
        d += 2.0 * lambda * weights[i] * u_minus[i];
    }
    let (np, nm) = (u_plus[ic], u_minus[ic]);
    u_plus.iter_mut().for_each(|v| *v /= np);
    u_minus.iter_mut().for_each(|v| *v /= nm);

    let pl = |values: Vec<f64>| PiecewiseLinear {
        knots: knots.clone(),
        values,
    };
    Ok(EigenSolution {
        lambda,
        origin: c,
        phi: pl(phi_v),
        psi: pl(psi_v),
        h_plus,
        h_minus,
        h,
        h_plus_integral,
        h_minus_integral,
        u_plus: pl(u_plus),
        u_minus: pl(u_minus),
        weights,
    })
}

impl EigenSolution {
    pub fn lower(&self) -> f64 {
        self.phi.knots[0]
    }

    pub fn upper(&self) -> f64 {
        self.phi.knots[self.phi.knots.len() - 1]
    }
}

/// `g_λ(x, y) = h u₊(x∨y) u₋(x∧y)` on the closed interval (0 at the walls).
pub fn green_function(sol: &EigenSolution, x: f64, y: f64) -> Result<f64> {
    let (lo, hi) = (x.min(y), x.max(y));
    let up = sol
        .u_plus
        .eval(hi)
        .ok_or(ResolventError::OutOfInterval(hi))?;
    let um = sol
        .u_minus
        .eval(lo)
        .ok_or(ResolventError::OutOfInterval(lo))?;
    Ok(sol.h * up * um)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityRow {
    pub x: f64,
    pub g1: f64,
    pub half_u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub rows: Vec<IdentityRow>,
    pub max_error: f64,
    /// `g'(x₀-) - g'(x₀+)`, reported only when μ has no atom at its mean.
    pub derivative_jump: Option<f64>,
    pub h_cross_check: f64,
}

impl IdentityReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,g1_x_0,half_U,abs_err\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.17e},{:.17e},{:.17e},{:.6e}",
                r.x,
                r.g1,
                r.half_u,
                (r.g1 - r.half_u).abs()
            );
        }
        out
    }
}

/// Compares `g₁(x, x₀)` for `sm` with `U(x)/2` from `profile` on `grid`.
///
/// Points outside the interval of `sm` count with `g₁ = 0`. The speed
/// measure may come from a different law than `profile` (an atomised
/// approximation, say); the origin of `sm` is used as `x₀`.
pub fn check_main_identity(
    profile: &PotentialProfile,
    sm: &SpeedMeasure,
    grid: &[f64],
) -> Result<IdentityReport> {
    let sol = solve_eigenfunctions(sm, 1.0)?;
    let c = sol.origin;
    let mut rows = Vec::with_capacity(grid.len());
    let mut max_error: f64 = 0.0;
    for &x in grid {
        let g1 = if x < sol.lower() || x > sol.upper() {
            0.0
        } else {
            green_function(&sol, x, c)?
        };
        let half_u = 0.5 * profile.excess_potential(x);
        max_error = max_error.max((g1 - half_u).abs());
        rows.push(IdentityRow { x, g1, half_u });
    }
    let derivative_jump = (profile.atom_mass(c) == 0.0).then(|| {
        let left = sol.u_minus.slopes(c).0;
        let right = sol.u_plus.slopes(c).1;
        sol.h * (left - right)
    });
    let h_cross_check = (sol.h_plus - sol.h_plus_integral)
        .abs()
        .max((sol.h_minus - sol.h_minus_integral).abs());
    Ok(IdentityReport {
        rows,
        max_error,
        derivative_jump,
        h_cross_check,
    })
}

/// Grid of `n` equally spaced points on `[a, b]` plus the given extras.
pub fn default_grid(a: f64, b: f64, n: usize, extras: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1).max(1) as f64)
        .chain(extras.iter().copied())
        .collect();
    g.sort_by(f64::total_cmp);
    g.dedup();
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{presets, Measure};
    use crate::speed::{build_speed_measure, SpeedAtom};
    use approx::assert_abs_diff_eq;

    fn delta0() -> SpeedMeasure {
        SpeedMeasure::from_parts(
            vec![SpeedAtom {
                x: 0.0,
                weight: Weight::Finite(1.0),
            }],
            vec![],
            (-1.0, 1.0),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn unit_atom_at_origin() {
        let s = solve_eigenfunctions(&delta0(), 1.0).unwrap();
        for &x in &[0.25, 0.5, 1.0] {
            assert_abs_diff_eq!(s.phi.eval(x).unwrap(), 1.0 + 2.0 * x, epsilon = 1e-15);
            assert_abs_diff_eq!(s.u_plus.eval(x).unwrap(), 1.0 - x, epsilon = 1e-15);
        }
        for &x in &[-1.0, -0.5] {
            assert_eq!(s.phi.eval(x).unwrap(), 1.0);
            assert_abs_diff_eq!(s.u_minus.eval(x).unwrap(), 1.0 + x, epsilon = 1e-15);
        }
        for &x in &[-0.7, 0.3] {
            assert_abs_diff_eq!(s.psi.eval(x).unwrap(), x, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(s.h_plus, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.h_minus, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.h, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(s.h_plus_integral, 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(green_function(&s, 0.0, 0.0).unwrap(), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(green_function(&s, 0.5, 0.0).unwrap(), 0.125, epsilon = 1e-15);
        assert_eq!(green_function(&s, 1.5, 0.0), Err(ResolventError::OutOfInterval(1.5)));
    }

    #[test]
    fn massless_string() {
        let sm = SpeedMeasure::from_parts(vec![], vec![], (-1.0, 1.0), 0.0).unwrap();
        let s = solve_eigenfunctions(&sm, 1.0).unwrap();
        assert_eq!(s.phi.eval(0.6).unwrap(), 1.0);
        assert_eq!(s.psi.eval(-0.4).unwrap(), -0.4);
        assert_eq!((s.h_plus, s.h_minus, s.h), (1.0, 1.0, 0.5));
    }

    #[test]
    fn slope_jumps_follow_the_recursion() {
        let mu = Measure::from_atoms([(-2.0, 0.1), (-0.5, 0.3), (0.25, 0.4), (1.5, 0.2)]).unwrap();
        let p = PotentialProfile::new(mu).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        let s = solve_eigenfunctions(&sm, 1.7).unwrap();
        for (i, &a) in s.phi.knots.iter().enumerate() {
            let b = s.weights[i];
            if b == 0.0 {
                continue;
            }
            for f in [&s.phi, &s.psi, &s.u_plus, &s.u_minus] {
                let (l, r) = f.slopes(a);
                let want = 2.0 * 1.7 * b * f.eval(a).unwrap();
                assert_abs_diff_eq!(r - l, want, epsilon = 1e-12 * (1.0 + want.abs()));
            }
        }
        assert_abs_diff_eq!(s.h * (1.0 / s.h_plus + 1.0 / s.h_minus), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.h_plus, s.h_plus_integral, epsilon = 1e-13);
        assert_abs_diff_eq!(s.h_minus, s.h_minus_integral, epsilon = 1e-13);
        assert!(s.u_plus.values.windows(2).all(|w| w[1] <= w[0]));
        assert!(s.u_minus.values.windows(2).all(|w| w[1] >= w[0]));
        assert_abs_diff_eq!(s.u_plus.eval(s.origin).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.u_minus.eval(s.origin).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn three_point_identity() {
        let p = PotentialProfile::new(presets::three_point()).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        let grid = default_grid(-1.0, 1.0, 101, &[]);
        let r = check_main_identity(&p, &sm, &grid).unwrap();
        assert!(r.max_error < 1e-10);
        assert_eq!(r.derivative_jump, None);
        let sol = solve_eigenfunctions(&sm, 1.0).unwrap();
        assert_abs_diff_eq!(green_function(&sol, 0.5, 0.0).unwrap(), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn two_point_identity_and_jump() {
        let p = PotentialProfile::new(presets::two_point()).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        let r = check_main_identity(&p, &sm, &default_grid(-1.0, 1.0, 41, &[])).unwrap();
        assert!(r.max_error < 1e-14);
        for row in &r.rows {
            assert_abs_diff_eq!(row.g1, 0.5 * (1.0 - row.x.abs()), epsilon = 1e-15);
        }
        assert_abs_diff_eq!(r.derivative_jump.unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn csv_header() {
        let p = PotentialProfile::new(presets::three_point()).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        let r = check_main_identity(&p, &sm, &[0.5]).unwrap();
        assert!(r.to_csv().starts_with("x,g1_x_0,half_U,abs_err\n5.0"));
    }

    #[test]
    fn rejects_density() {
        let p = PotentialProfile::new(presets::uniform(-1.0, 1.0)).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        assert_eq!(solve_eigenfunctions(&sm, 1.0), Err(ResolventError::NonAtomicInterior));
    }
}
