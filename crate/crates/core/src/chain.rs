//! Atomic μ: the diffusion is a nearest-neighbour chain on the atoms.
//!
//! From an interior state `a_i` the chain holds for an exponential time of
//! mean `θ_i = 2β_i (a_{i+1} - a_i)(a_i - a_{i-1}) / (a_{i+1} - a_{i-1})` and
//! jumps up with the martingale probability
//! `p_i = (a_i - a_{i-1}) / (a_{i+1} - a_{i-1})`. The end states are traps.
//! When μ has no atom at its mean, the mean is added as a state with
//! `θ = 0`, which the chain leaves at once.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use thiserror::Error;

use crate::measure::{validate_measure, Atom, Measure, MeasureError};
use crate::rng::{path_rng, stream, SimRng};
use crate::speed::{SpeedMeasure, Weight};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("measure has a density part")]
    NotAtomic,
    #[error("chain needs at least 2 states, got {0}")]
    TooFewStates(usize),
    #[error("linear system is singular")]
    SingularSystem,
    #[error("invalid rate {0}")]
    InvalidRate(f64),
    #[error("no state at {0}")]
    UnknownState(f64),
    #[error("step cap of {0} exceeded")]
    StepCapExceeded(u64),
    #[error("interior state {0} has an infinite holding weight")]
    InteriorTrap(f64),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

pub type Result<T> = std::result::Result<T, ChainError>;

pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

#[derive(Debug, Clone)]
pub struct BirthDeathChain {
    pub states: Vec<f64>,
    /// Mean holding time per state (0 for traps and instantaneous states).
    pub holding_mean: Vec<f64>,
    /// Probability of jumping up (0 for traps).
    pub up_prob: Vec<f64>,
    pub absorbing: Vec<bool>,
}

/// Chain over `supp(μ) ∪ {x0}` for an atomic speed measure.
pub fn build_chain(sm: &SpeedMeasure, mu: &Measure) -> Result<BirthDeathChain> {
    if !mu.is_atomic() || !sm.is_atomic() {
        return Err(ChainError::NotAtomic);
    }
    let mut nodes: Vec<(f64, Weight)> = sm.atoms.iter().map(|a| (a.x, sm.weight(a))).collect();
    let tol = state_tolerance(&nodes.iter().map(|n| n.0).collect::<Vec<_>>());
    if !nodes.iter().any(|(x, _)| (*x - sm.start).abs() <= tol) {
        nodes.push((sm.start, Weight::Finite(0.0)));
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let n = nodes.len();
    if n < 2 {
        return Err(ChainError::TooFewStates(n));
    }
    let mut chain = BirthDeathChain {
        states: nodes.iter().map(|(x, _)| *x).collect(),
        holding_mean: vec![0.0; n],
        up_prob: vec![0.0; n],
        absorbing: vec![false; n],
    };
    for (i, (x, w)) in nodes.iter().enumerate() {
        if i == 0 || i == n - 1 {
            chain.absorbing[i] = true;
            continue;
        }
        let beta = match w {
            Weight::Finite(b) => *b,
            Weight::Infinite => return Err(ChainError::InteriorTrap(*x)),
        };
        let (lo, hi) = (nodes[i - 1].0, nodes[i + 1].0);
        let (down_gap, up_gap) = (x - lo, hi - x);
        chain.holding_mean[i] = 2.0 * beta * up_gap * down_gap / (hi - lo);
        chain.up_prob[i] = down_gap / (hi - lo);
    }
    Ok(chain)
}

fn state_tolerance(states: &[f64]) -> f64 {
    let span = states.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    1e-12 * (1.0 + span)
}

impl BirthDeathChain {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Index of the state at `x`, allowing for rounding in a recomputed mean.
    pub fn index_of(&self, x: f64) -> Result<usize> {
        let tol = state_tolerance(&self.states);
        self.states
            .iter()
            .position(|&s| (s - x).abs() <= tol)
            .ok_or(ChainError::UnknownState(x))
    }

    /// Rate matrix `Q`. `None` when some state is left instantaneously
    /// (its rates would be infinite).
    pub fn generator(&self) -> Option<DMatrix<f64>> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            if self.absorbing[i] {
                continue;
            }
            let theta = self.holding_mean[i];
            if theta <= 0.0 {
                return None;
            }
            let p = self.up_prob[i];
            q[(i, i + 1)] = p / theta;
            q[(i, i - 1)] = (1.0 - p) / theta;
            q[(i, i)] = -1.0 / theta;
        }
        Some(q)
    }

    /// Law of `X_T` for `T ~ Exp(q)` started at `start`.
    ///
    /// Row `i` of `(qI - Q) v = q e` multiplied by `θ_i` reads
    /// `(1 + qθ_i) v_i - p_i v_{i+1} - (1 - p_i) v_{i-1} = qθ_i e_i`, which
    /// stays finite for instantaneous states; trap rows are `v_i = e_i`.
    /// The start row of `M⁻¹R` is obtained from one transposed solve.
    pub fn exact_law(&self, start: f64, q: f64) -> Result<Measure> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(ChainError::InvalidRate(q));
        }
        let n = self.len();
        let s = self.index_of(start)?;
        let mut m = DMatrix::<f64>::zeros(n, n);
        let mut r = DVector::<f64>::zeros(n);
        for i in 0..n {
            if self.absorbing[i] {
                m[(i, i)] = 1.0;
                r[i] = 1.0;
                continue;
            }
            let qt = q * self.holding_mean[i];
            let p = self.up_prob[i];
            m[(i, i)] = 1.0 + qt;
            m[(i, i + 1)] = -p;
            m[(i, i - 1)] = -(1.0 - p);
            r[i] = qt;
        }
        // law_j = Σ_i (M⁻¹)_{s,i} R_{i,j} with R diagonal
        let mut e = DVector::<f64>::zeros(n);
        e[s] = 1.0;
        let y = m
            .transpose()
            .lu()
            .solve(&e)
            .ok_or(ChainError::SingularSystem)?;
        let atoms = (0..n)
            .map(|j| Atom {
                x: self.states[j],
                p: (y[j] * r[j]).max(0.0),
            })
            .collect();
        Ok(validate_measure(Measure {
            atoms,
            segments: Vec::new(),
            name: None,
        })?)
    }

    /// One sample of `X_T`, `T ~ Exp(1)` drawn from `rng`.
    pub fn sample_at_exp_time(&self, start: usize, rng: &mut SimRng, step_cap: u64) -> Result<usize> {
        let horizon: f64 = Exp1.sample(rng);
        self.advance(start, horizon, rng, step_cap)
    }

    /// Runs the chain from `state` for `duration` time units.
    pub fn advance(
        &self,
        mut state: usize,
        duration: f64,
        rng: &mut SimRng,
        step_cap: u64,
    ) -> Result<usize> {
        let mut elapsed = 0.0;
        for _ in 0..step_cap {
            if self.absorbing[state] {
                return Ok(state);
            }
            let theta = self.holding_mean[state];
            if theta > 0.0 {
                let hold = theta * <Exp1 as Distribution<f64>>::sample(&Exp1, rng);
                // ties go to the clock
                if elapsed + hold >= duration {
                    return Ok(state);
                }
                elapsed += hold;
            }
            if rng.random::<f64>() < self.up_prob[state] {
                state += 1;
            } else {
                state -= 1;
            }
        }
        Err(ChainError::StepCapExceeded(step_cap))
    }

    /// Values of the chain at increasing `times` (starting from time 0).
    pub fn sample_path(
        &self,
        start: usize,
        times: &[f64],
        rng: &mut SimRng,
        step_cap: u64,
    ) -> Result<Vec<f64>> {
        let mut state = start;
        let mut now = 0.0;
        let mut out = Vec::with_capacity(times.len());
        for &t in times {
            let dt = (t - now).max(0.0);
            // the residual holding time is again exponential, so restarting is exact
            if dt > 0.0 {
                state = self.advance(state, dt, rng, step_cap)?;
            }
            now = now.max(t);
            out.push(self.states[state]);
        }
        Ok(out)
    }
}

/// `paths` independent samples of `X_T` with per-path seeds
/// `(seed, CHAIN, path)`. Returns the count per state.
pub fn simulate_chain(
    chain: &BirthDeathChain,
    start: f64,
    paths: u64,
    seed: u64,
    step_cap: u64,
) -> Result<Vec<u64>> {
    let s = chain.index_of(start)?;
    let hits: Vec<usize> = (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, stream::CHAIN, k);
            chain.sample_at_exp_time(s, &mut rng, step_cap)
        })
        .collect::<Result<_>>()?;
    let mut counts = vec![0u64; chain.len()];
    for h in hits {
        counts[h] += 1;
    }
    Ok(counts)
}

/// CSV `state,exact_mass,empirical_mass,abs_error`.
pub fn law_csv(chain: &BirthDeathChain, exact: &Measure, counts: &[u64]) -> String {
    let total: u64 = counts.iter().sum();
    let mut out = String::from("state,exact_mass,empirical_mass,abs_error\n");
    for (i, &x) in chain.states.iter().enumerate() {
        let e = exact.atom_mass(x);
        let emp = if total > 0 {
            counts[i] as f64 / total as f64
        } else {
            0.0
        };
        let _ = writeln!(out, "{x:.17e},{e:.17e},{emp:.17e},{:.17e}", (e - emp).abs());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{presets, PotentialProfile};
    use crate::speed::build_speed_measure;
    use approx::assert_abs_diff_eq;

    fn chain_of(m: &Measure) -> (SpeedMeasure, BirthDeathChain) {
        let p = PotentialProfile::new(m.clone()).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        let c = build_chain(&sm, m).unwrap();
        (sm, c)
    }

    #[test]
    fn three_point_chain() {
        let (_, c) = chain_of(&presets::three_point());
        assert_eq!(c.states, vec![-1.0, 0.0, 1.0]);
        assert_eq!(c.up_prob[1], 0.5);
        assert_abs_diff_eq!(c.holding_mean[1], 1.0, epsilon = 1e-15);
        assert_eq!(c.absorbing, vec![true, false, true]);
        let law = c.exact_law(0.0, 1.0).unwrap();
        assert_abs_diff_eq!(law.atom_mass(-1.0), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(law.atom_mass(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(law.atom_mass(1.0), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn two_point_chain_exits_instantly() {
        let (_, c) = chain_of(&presets::two_point());
        assert_eq!(c.states, vec![-1.0, 0.0, 1.0]);
        assert_eq!(c.holding_mean[1], 0.0);
        assert!(c.generator().is_none());
        for q in [0.1, 1.0, 7.0] {
            let law = c.exact_law(0.0, q).unwrap();
            assert_abs_diff_eq!(law.atom_mass(-1.0), 0.5, epsilon = 1e-15);
            assert_abs_diff_eq!(law.atom_mass(1.0), 0.5, epsilon = 1e-15);
            assert_eq!(law.atom_mass(0.0), 0.0);
        }
    }

    #[test]
    fn asymmetric_gaps_balance_the_martingale() {
        // mean 0: 0.2·(-2) + 0.5·0 + 0.3·(4/3)
        let m = Measure::from_atoms([(-2.0, 0.2), (0.0, 0.5), (4.0 / 3.0, 0.3)]).unwrap();
        assert_abs_diff_eq!(m.mean(), 0.0, epsilon = 1e-15);
        let (_, c) = chain_of(&m);
        let p = c.up_prob[1];
        assert_abs_diff_eq!(p * (4.0 / 3.0), (1.0 - p) * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn short_clock_stays_at_start() {
        let (_, c) = chain_of(&presets::three_point());
        let law = c.exact_law(0.0, 1e6).unwrap();
        assert!(law.atom_mass(0.0) > 1.0 - 1e-5);
    }

    #[test]
    fn generator_matches_scaled_system() {
        let m = Measure::from_atoms([(-2.0, 0.1), (-1.0, 0.2), (0.0, 0.3), (1.0, 0.4)]).unwrap();
        let (_, c) = chain_of(&m);
        let x0 = m.mean();
        if let Some(q) = c.generator() {
            for i in 0..c.len() {
                assert_abs_diff_eq!(q.row(i).sum(), 0.0, epsilon = 1e-12);
            }
            let n = c.len();
            let a = DMatrix::<f64>::identity(n, n) * 2.0 - &q;
            let inv = a.try_inverse().unwrap() * 2.0;
            let s = c.index_of(x0).unwrap();
            let law = c.exact_law(x0, 2.0).unwrap();
            for j in 0..n {
                assert_abs_diff_eq!(inv[(s, j)], law.atom_mass(c.states[j]), epsilon = 1e-12);
            }
        } else {
            panic!("expected finite rates");
        }
    }

    #[test]
    fn simulation_is_deterministic_and_slow_chain_stays() {
        let (_, c) = chain_of(&presets::three_point());
        let a = simulate_chain(&c, 0.0, 500, 11, DEFAULT_STEP_CAP).unwrap();
        let b = simulate_chain(&c, 0.0, 500, 11, DEFAULT_STEP_CAP).unwrap();
        assert_eq!(a, b);
        let mut slow = c.clone();
        slow.holding_mean[1] = 1e9;
        let counts = simulate_chain(&slow, 0.0, 1000, 3, DEFAULT_STEP_CAP).unwrap();
        assert!(counts[1] >= 999);
    }

    #[test]
    fn not_atomic_rejected() {
        let u = presets::uniform(-1.0, 1.0);
        let p = PotentialProfile::new(u.clone()).unwrap();
        let sm = build_speed_measure(&p).unwrap();
        assert_eq!(build_chain(&sm, &u).unwrap_err(), ChainError::NotAtomic);
    }

    #[test]
    fn csv_layout() {
        let (_, c) = chain_of(&presets::three_point());
        let law = c.exact_law(0.0, 1.0).unwrap();
        let csv = law_csv(&c, &law, &[25, 50, 25]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "state,exact_mass,empirical_mass,abs_error");
        assert_eq!(lines.len(), 4);
    }
}
