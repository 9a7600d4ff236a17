//! Laws implied by call prices at one maturity, and price paths driven by
//! a gamma clock. Rates and dividends are zero: prices are undiscounted
//! expectations.

use std::fmt::Write as _;

use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use thiserror::Error;

use crate::chain::{build_chain, ChainError};
use crate::measure::{validate_measure, Atom, Measure, MeasureError, PotentialProfile};
use crate::pathsim::{default_grid_step, gap_path_on, Lattice, PathError, DEFAULT_STEP_CAP};
use crate::rng::{path_rng, stream, SimRng};
use crate::speed::{build_speed_measure, SpeedError};

#[derive(Debug, Error)]
pub enum FinanceError {
    #[error("arbitrage in quotes at strike {strike}: {reason}")]
    ArbitrageViolation { strike: f64, reason: &'static str },
    #[error("need at least 3 strikes, got {0}")]
    TooFewStrikes(usize),
    #[error("malformed option chain: {0}")]
    Parse(String),
    #[error("invalid clock: {0}")]
    InvalidClock(String),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Speed(#[from] SpeedError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Path(#[from] PathError),
}

pub type Result<T> = std::result::Result<T, FinanceError>;

/// Call quotes at a single maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionChain {
    pub t_star: f64,
    pub forward: f64,
    /// `(strike, call price)`, strikes strictly increasing.
    pub quotes: Vec<(f64, f64)>,
}

impl OptionChain {
    pub fn new(t_star: f64, forward: f64, mut quotes: Vec<(f64, f64)>) -> Result<Self> {
        if !(t_star > 0.0 && t_star.is_finite()) {
            return Err(FinanceError::Parse(format!("t_star must be positive, got {t_star}")));
        }
        if !forward.is_finite() || quotes.iter().any(|(k, c)| !k.is_finite() || !c.is_finite()) {
            return Err(FinanceError::Parse("non-finite value".into()));
        }
        quotes.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = quotes.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(FinanceError::Parse(format!("duplicate strike {}", w[0].0)));
        }
        Ok(Self {
            t_star,
            forward,
            quotes,
        })
    }

    /// Quotes for every strike under `mu`, with `forward` its mean.
    pub fn from_measure(mu: &Measure, t_star: f64, strikes: &[f64]) -> Result<Self> {
        Self::new(
            t_star,
            mu.mean(),
            strikes.iter().map(|&k| (k, price_at_maturity(mu, k))).collect(),
        )
    }

    /// Parses
    /// ```text
    /// t_star,forward
    /// <t_star>,<forward>
    /// strike,price
    /// <strike>,<price>
    /// ...
    /// ```
    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let bad = |msg: &str| FinanceError::Parse(msg.to_string());
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        if header.replace(' ', "") != "t_star,forward" {
            return Err(bad("expected header `t_star,forward`"));
        }
        let pair = |line: &str| -> Result<(f64, f64)> {
            let mut it = line.split(',').map(|f| f.trim().parse::<f64>());
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b)), None) => Ok((a, b)),
                _ => Err(FinanceError::Parse(format!("bad row `{line}`"))),
            }
        };
        let (t_star, forward) = pair(lines.next().ok_or_else(|| bad("missing maturity row"))?)?;
        let header = lines.next().ok_or_else(|| bad("missing quote header"))?;
        if header.replace(' ', "") != "strike,price" {
            return Err(bad("expected header `strike,price`"));
        }
        let quotes = lines.map(pair).collect::<Result<Vec<_>>>()?;
        Self::new(t_star, forward, quotes)
    }
}

/// Atomic law that reproduces every quote.
///
/// Interior strikes carry the jump of the price slope. Each side gets one
/// tail atom holding the mass beyond the extreme strike, placed so that the
/// extreme put (left) or call (right) is repriced exactly; with zero tail
/// price the tail atom sits on the extreme strike.
pub fn implied_measure(chain: &OptionChain) -> Result<Measure> {
    let q = &chain.quotes;
    let n = q.len();
    if n < 3 {
        return Err(FinanceError::TooFewStrikes(n));
    }
    let f = chain.forward;
    let scale = 1.0 + f.abs() + q.iter().fold(0.0f64, |m, (k, c)| m.max(k.abs()).max(c.abs()));
    let tol = 1e-12 * scale;
    for &(k, c) in q {
        if c < (f - k).max(0.0) - tol {
            return Err(FinanceError::ArbitrageViolation {
                strike: k,
                reason: "price below intrinsic value",
            });
        }
    }
    let slopes: Vec<f64> = q.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
    for (i, &s) in slopes.iter().enumerate() {
        if s > tol {
            return Err(FinanceError::ArbitrageViolation {
                strike: q[i + 1].0,
                reason: "price increases with strike",
            });
        }
        if s < -1.0 - tol {
            return Err(FinanceError::ArbitrageViolation {
                strike: q[i + 1].0,
                reason: "price falls faster than strike",
            });
        }
    }
    let mut atoms = Vec::with_capacity(n + 2);
    for i in 1..n - 1 {
        let mass = slopes[i] - slopes[i - 1];
        if mass < -tol {
            return Err(FinanceError::ArbitrageViolation {
                strike: q[i].0,
                reason: "prices not convex",
            });
        }
        if mass > tol {
            atoms.push(Atom { x: q[i].0, p: mass });
        }
    }
    let (k1, c1) = q[0];
    let put1 = (c1 - (f - k1)).max(0.0);
    let w_left = 1.0 + slopes[0];
    if w_left > tol {
        atoms.push(Atom {
            x: k1 - put1 / w_left,
            p: w_left,
        });
    } else if put1 > tol {
        return Err(FinanceError::ArbitrageViolation {
            strike: k1,
            reason: "positive put value with no mass below the lowest strike",
        });
    }
    let (kn, cn) = q[n - 1];
    let w_right = -slopes[n - 2];
    if w_right > tol {
        atoms.push(Atom {
            x: kn + cn / w_right,
            p: w_right,
        });
    } else if cn > tol {
        return Err(FinanceError::ArbitrageViolation {
            strike: kn,
            reason: "positive call value with no mass above the highest strike",
        });
    }
    Ok(validate_measure(Measure {
        atoms,
        segments: Vec::new(),
        name: Some("implied".into()),
    })?)
}

/// `E(X - K)⁺` for `X ~ μ`.
pub fn price_at_maturity(mu: &Measure, strike: f64) -> f64 {
    mu.call_price(strike)
}

/// `E(K - X)⁺` for `X ~ μ`.
pub fn put_at_maturity(mu: &Measure, strike: f64) -> f64 {
    mu.put_price(strike)
}

/// CSV `strike,input_price,repriced,abs_err`.
pub fn repricing_csv(chain: &OptionChain, mu: &Measure) -> String {
    let mut out = String::from("strike,input_price,repriced,abs_err\n");
    for &(k, c) in &chain.quotes {
        let r = price_at_maturity(mu, k);
        let _ = writeln!(out, "{k:.17e},{c:.17e},{r:.17e},{:.6e}", (r - c).abs());
    }
    out
}

/// Gamma subordinator with `γ_t ~ Gamma(t / t*, 1)`, so `γ_{t*} ~ Exp(1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaClock {
    pub t_star: f64,
}

impl GammaClock {
    pub fn new(t_star: f64) -> Result<Self> {
        if !(t_star > 0.0 && t_star.is_finite()) {
            return Err(FinanceError::InvalidClock(format!("t_star = {t_star}")));
        }
        Ok(Self { t_star })
    }

    /// Clock values at nondecreasing `times`, from independent increments.
    pub fn sample(&self, times: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(times.len());
        let (mut now, mut gamma) = (0.0, 0.0);
        for &t in times {
            if t < now {
                return Err(FinanceError::InvalidClock("times must be nondecreasing".into()));
            }
            let shape = (t - now) / self.t_star;
            if shape > 0.0 {
                let g = Gamma::new(shape, 1.0)
                    .map_err(|e| FinanceError::InvalidClock(e.to_string()))?;
                gamma += g.sample(rng);
            }
            now = t;
            out.push(gamma);
        }
        Ok(out)
    }
}

/// Samples of `γ_{t*}`.
pub fn simulate_clock_at_maturity(clock: &GammaClock, paths: u64, seed: u64) -> Result<Vec<f64>> {
    (0..paths)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_rng(seed, stream::GAMMA, k);
            Ok(clock.sample(&[clock.t_star], &mut rng)?[0])
        })
        .collect()
}

/// Prepared diffusion for `S_t = X_{γ_t}`.
#[derive(Debug, Clone)]
pub enum PriceModel {
    Chain {
        chain: crate::chain::BirthDeathChain,
        start: usize,
    },
    Lattice(Lattice),
}

impl PriceModel {
    /// The chain for atomic `μ`, the lattice walk otherwise.
    pub fn new(mu: &Measure) -> Result<Self> {
        let profile = PotentialProfile::new(mu.clone())?;
        let sm = build_speed_measure(&profile)?;
        if mu.is_atomic() {
            let chain = build_chain(&sm, mu)?;
            let start = chain.index_of(sm.start)?;
            Ok(PriceModel::Chain { chain, start })
        } else {
            let h = default_grid_step(&sm);
            Ok(PriceModel::Lattice(Lattice::from_speed_measure(&sm, h)?))
        }
    }

    /// `X` at the nondecreasing diffusion times `clock`.
    pub fn path_at(&self, clock: &[f64], rng: &mut SimRng) -> Result<Vec<f64>> {
        match self {
            PriceModel::Chain { chain, start } => {
                Ok(chain.sample_path(*start, clock, rng, crate::chain::DEFAULT_STEP_CAP)?)
            }
            PriceModel::Lattice(lat) => Ok(gap_path_on(lat, clock, rng, DEFAULT_STEP_CAP)?.values),
        }
    }
}

/// One path of `S` at `times`, from seeds `(seed, GAMMA, index)` for the
/// clock and `(seed, PRICE, index)` for the diffusion.
pub fn simulate_price_path(
    model: &PriceModel,
    clock: &GammaClock,
    times: &[f64],
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    let mut clock_rng = path_rng(seed, stream::GAMMA, index);
    let gamma = clock.sample(times, &mut clock_rng)?;
    let mut rng = path_rng(seed, stream::PRICE, index);
    model.path_at(&gamma, &mut rng)
}

pub fn simulate_price_paths(
    model: &PriceModel,
    clock: &GammaClock,
    times: &[f64],
    paths: u64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    (0..paths)
        .into_par_iter()
        .map(|k| simulate_price_path(model, clock, times, seed, k))
        .collect()
}
