//! Analytic convergence machinery: the loss upper bound of the budgeted
//! K-block training schedule, the resource model that prices a round, and
//! the block-count optimizer built on top of both.
//!
//! The bound evaluated here has the shape
//!
//! ```text
//! B(K) = 1 / ( γ·( ηφ − [ (δξK/L)(λ^{γ/K} − 1) − ηξδγ + penalty ] / (ε²γ) ) )
//! ```
//!
//! with `λ = 1 + ηL`, `φ = (1 − ηL/2) / w_dist`, and `γ(K) = (t_sum − Kβ)/α`
//! the total number of local iterations the time budget buys across all K
//! rounds. `penalty` is zero for an all-honest network and
//! `ξθM/N + ξσ²√M/N` when `M` of the `N` clients are lazy. When the
//! parenthesised denominator is not positive the inequality carries no
//! information; that case is reported as [`BoundValue::Vacuous`] rather than
//! a negative number.
//!
//! Two facts the optimizer relies on:
//! - `G(K) = γ·(ηφ − [...]/(ε²γ))`, the reciprocal of the bound, is strictly
//!   concave in K — γ enters it linearly and the one curved piece,
//!   `K(λ^{γ/K} − 1)`, is strictly convex — so the valid block counts
//!   `{G > 0}` form a single contiguous stretch and `B = 1/G` is convex
//!   across it;
//! - the lazy penalty is independent of K, so it shifts `G` down uniformly:
//!   it can only shrink the valid stretch from both ends, never move the
//!   location of `G`'s peak.

pub mod calibration;
pub mod estimate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::derive_tau;

pub use calibration::Calibration;

/// Physical quantities that price one round of the protocol.
///
/// Training cost per round and mining cost per block both come from a
/// cycles-over-rate model; [`alpha_from_resources`] and
/// [`beta_from_resources`] collapse them to the two scalars the rest of the
/// analysis consumes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceModel {
    /// Difficulty factor of the mining puzzle (expected hashes scale with it).
    pub kappa: f64,
    /// CPU cycles consumed per hash evaluation.
    pub chi: f64,
    /// Aggregate hash-rate of the network, in cycles per unit time.
    pub f_bl: f64,
    /// CPU cycles consumed per training sample per local iteration.
    pub rho: f64,
    /// Local compute rate of a client, in cycles per unit time.
    pub f_loc: f64,
    /// Samples held by each client.
    pub shard_size: usize,
}

impl ResourceModel {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("kappa", self.kappa),
            ("chi", self.chi),
            ("f_bl", self.f_bl),
            ("rho", self.rho),
            ("f_loc", self.f_loc),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "resource model field {name} must be finite and positive, got {v}"
                )));
            }
        }
        if self.shard_size == 0 {
            return Err(Error::Config("resource model shard_size must be positive".into()));
        }
        Ok(())
    }
}

/// Wall-clock time for one client to sweep its shard once: `|D|·ρ / f_loc`.
pub fn alpha_from_resources(r: &ResourceModel) -> Result<f64> {
    r.validate()?;
    Ok(r.shard_size as f64 * r.rho / r.f_loc)
}

/// Expected wall-clock time for the network to mine one block: `κχ / f_bl`.
pub fn beta_from_resources(r: &ResourceModel) -> Result<f64> {
    r.validate()?;
    Ok(r.kappa * r.chi / r.f_bl)
}

/// Constants the bound is evaluated under.
///
/// `eta`/`smoothness`/`lipschitz`/`divergence`/`epsilon`/`w_dist` describe
/// the optimization problem; `theta`/`sigma2`/`lazy_clients` describe the
/// lazy population; `alpha`/`beta`/`t_sum` describe the time budget.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundParams {
    /// Learning rate η.
    pub eta: f64,
    /// Gradient-smoothness constant L; the bound needs η·L < 1.
    pub smoothness: f64,
    /// Lipschitz constant ξ of the loss itself.
    pub lipschitz: f64,
    /// Divergence δ between client gradients and the global gradient.
    pub divergence: f64,
    /// Gradient lower-bound parameter ε of the analysis; a free knob, not a
    /// measured quantity.
    pub epsilon: f64,
    /// Distance from the initial model to the optimum (proxy-estimated).
    pub w_dist: f64,
    /// Model displacement caused by copying instead of training.
    pub theta: f64,
    /// Variance of the disguising noise lazy clients add.
    pub sigma2: f64,
    /// Number of lazy clients M.
    pub lazy_clients: u32,
    /// Total number of clients N.
    pub n_clients: u32,
    /// Time for one client to sweep its shard once.
    pub alpha: f64,
    /// Time charged for mining one block.
    pub beta: f64,
    /// Total time budget across all rounds.
    pub t_sum: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eta", self.eta),
            ("smoothness", self.smoothness),
            ("lipschitz", self.lipschitz),
            ("epsilon", self.epsilon),
            ("w_dist", self.w_dist),
            ("alpha", self.alpha),
            ("t_sum", self.t_sum),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::BoundDomain(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        // Zero divergence, noise, displacement, or mining cost are all
        // meaningful degenerate cases, so these only need to be nonnegative.
        let nonneg = [
            ("divergence", self.divergence),
            ("theta", self.theta),
            ("sigma2", self.sigma2),
            ("beta", self.beta),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::BoundDomain(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if self.eta * self.smoothness >= 1.0 {
            return Err(Error::BoundDomain(format!(
                "need eta*smoothness < 1 for the bound to apply, got {}",
                self.eta * self.smoothness
            )));
        }
        if self.n_clients == 0 {
            return Err(Error::BoundDomain("n_clients must be at least 1".into()));
        }
        if self.lazy_clients > self.n_clients {
            return Err(Error::BoundDomain(format!(
                "lazy_clients = {} exceeds n_clients = {}",
                self.lazy_clients, self.n_clients
            )));
        }
        Ok(())
    }

    /// Per-iteration contraction factor λ = 1 + ηL.
    pub fn lambda(&self) -> f64 {
        1.0 + self.eta * self.smoothness
    }

    /// Progress coefficient φ = (1 − ηL/2) / w_dist.
    pub fn phi(&self) -> f64 {
        (1.0 - self.eta * self.smoothness / 2.0) / self.w_dist
    }

    /// Total local iterations the budget affords at block count `k`,
    /// treated as a real number: γ(K) = (t_sum − Kβ)/α.
    pub fn gamma(&self, k: u32) -> f64 {
        (self.t_sum - f64::from(k) * self.beta) / self.alpha
    }

    /// Largest block count for which at least one local iteration per round
    /// fits the budget: ⌊t_sum / (α + β)⌋.
    pub fn k_max(&self) -> u32 {
        let k = (self.t_sum / (self.alpha + self.beta)).floor();
        if k < 0.0 {
            0
        } else {
            k.min(f64::from(u32::MAX)) as u32
        }
    }

    /// Copy with a different lazy-client count.
    pub fn with_lazy_clients(&self, m: u32) -> Self {
        Self { lazy_clients: m, ..self.clone() }
    }

    /// Copy with a different disguising-noise variance.
    pub fn with_sigma2(&self, sigma2: f64) -> Self {
        Self { sigma2, ..self.clone() }
    }
}

/// Outcome of evaluating the bound at one block count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BoundValue {
    /// The bound holds and equals this value.
    Finite(f64),
    /// The denominator was not positive: the inequality is satisfied by
    /// every nonnegative loss and carries no information at this K.
    Vacuous,
}

impl BoundValue {
    pub fn is_finite(&self) -> bool {
        matches!(self, BoundValue::Finite(_))
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            BoundValue::Finite(v) => Some(v),
            BoundValue::Vacuous => None,
        }
    }
}

/// Additive penalty from lazy clients copying models: ξθ·(M/N).
pub fn plagiarism_term(p: &BoundParams) -> f64 {
    let m = f64::from(p.lazy_clients);
    let n = f64::from(p.n_clients);
    p.lipschitz * p.theta * (m / n)
}

/// Additive penalty from the disguising noise: ξσ²·(√M/N).
pub fn noise_term(p: &BoundParams) -> f64 {
    let m = f64::from(p.lazy_clients);
    let n = f64::from(p.n_clients);
    p.lipschitz * p.sigma2 * (m.sqrt() / n)
}

/// Shared evaluation core. `penalty` is the K-independent addition to the
/// bracketed numerator; passing 0.0 yields the all-honest bound, so the
/// honest and lazy entry points cannot drift apart numerically.
fn eval_bound(p: &BoundParams, k: u32, penalty: f64) -> Result<BoundValue> {
    let (gamma, inner) = gamma_inner(p, k, penalty)?;
    if inner <= 0.0 {
        Ok(BoundValue::Vacuous)
    } else {
        Ok(BoundValue::Finite(1.0 / (gamma * inner)))
    }
}

/// The two factors of the bound's denominator: the bound is 1/(γ·inner)
/// whenever inner > 0. Factored out so the structured optimizer tests
/// validity with exactly the arithmetic the evaluator uses.
fn gamma_inner(p: &BoundParams, k: u32, penalty: f64) -> Result<(f64, f64)> {
    p.validate()?;
    if k == 0 {
        return Err(Error::BoundDomain("block count must be at least 1".into()));
    }
    let gamma = p.gamma(k);
    if gamma <= 0.0 {
        return Err(Error::InfeasibleK { k, gamma });
    }
    let kf = f64::from(k);
    let x = gamma / kf;
    // λ^{γ/K} via exp((γ/K)·ln λ): one rounding for the log, one for the
    // product, one for the exp keeps us within the 1e-9 oracle tolerance.
    let lambda_pow = (x * p.lambda().ln()).exp();
    let bracket = (p.divergence * p.lipschitz * kf / p.smoothness) * (lambda_pow - 1.0)
        - p.eta * p.lipschitz * p.divergence * gamma
        + penalty;
    let inner = p.eta * p.phi() - bracket / (p.epsilon * p.epsilon * gamma);
    Ok((gamma, inner))
}

/// Convergence bound after K blocks with every client training honestly.
pub fn bound_no_lazy(p: &BoundParams, k: u32) -> Result<BoundValue> {
    eval_bound(p, k, 0.0)
}

/// Convergence bound after K blocks with `p.lazy_clients` lazy clients.
/// With zero lazy clients both penalty terms are exactly zero and this
/// returns bit-identical values to [`bound_no_lazy`].
pub fn bound_lazy(p: &BoundParams, k: u32) -> Result<BoundValue> {
    eval_bound(p, k, plagiarism_term(p) + noise_term(p))
}

/// One row of a block-count sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: u32,
    /// Bound value, absent when vacuous at this K.
    pub bound: Option<f64>,
    pub valid: bool,
    /// Local iterations per round the budget affords at this K.
    pub tau: u32,
    pub gamma: f64,
}

/// Evaluate the (lazy-aware) bound at every feasible block count.
///
/// Feasibility means the budget affords at least one local iteration per
/// round; the walk stops at the first K where it no longer does. An empty
/// feasible set propagates the budget error for K = 1.
pub fn sweep(p: &BoundParams) -> Result<Vec<SweepRow>> {
    p.validate()?;
    let mut rows = Vec::new();
    let mut k: u32 = 1;
    loop {
        let tau = match derive_tau(p.t_sum, k, p.alpha, p.beta) {
            Ok(tau) => tau,
            Err(err) => {
                if rows.is_empty() {
                    return Err(err);
                }
                break;
            }
        };
        let value = bound_lazy(p, k)?;
        rows.push(SweepRow {
            k,
            bound: value.value(),
            valid: value.is_finite(),
            tau,
            gamma: p.gamma(k),
        });
        k += 1;
    }
    Ok(rows)
}

/// Result of optimizing the block count.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimum {
    pub k_star: u32,
    pub bound: f64,
    pub sweep: Vec<SweepRow>,
}

/// Exhaustive block-count optimization: the argmin of the bound over all
/// feasible K with a finite value, ties broken toward smaller K. This is
/// the correctness oracle; [`optimize_k_ternary`] is the fast path.
pub fn optimize_k(p: &BoundParams) -> Result<Optimum> {
    let rows = sweep(p)?;
    let mut best: Option<(u32, f64)> = None;
    for row in &rows {
        if let Some(b) = row.bound {
            if best.is_none_or(|(_, cur)| b < cur) {
                best = Some((row.k, b));
            }
        }
    }
    match best {
        Some((k_star, bound)) => Ok(Optimum { k_star, bound, sweep: rows }),
        None => Err(Error::NoValidK(format!(
            "the bound is vacuous at every feasible block count (1..={})",
            rows.last().map_or(0, |r| r.k)
        ))),
    }
}

/// Structured block-count optimization.
///
/// Exploits the bound's shape in K. Write G(K) = γ(K)·inner(K), so the
/// bound equals 1/G wherever G > 0. γ is linear in K and the only curved
/// piece of G, the mixing term K·(λ^{γ/K}−1), is strictly convex in K (its
/// second derivative is (ln λ)²·(t_sum/α)²·λ^{γ/K}/K³ > 0), which makes G
/// strictly concave. Hence the valid block counts {G > 0} form one
/// contiguous stretch of the feasible range — not necessarily reaching
/// either end, since the lazy penalty divided by a shrinking γ re-vacates
/// large K — and 1/G is convex across that stretch.
///
/// The search therefore (a) bisects the monotone budget predicate for the
/// last feasible K, (b) ternary-maximizes the concave G to find a valid K
/// or prove there is none, (c) bisects G's two sign crossings for the ends
/// of the valid stretch, and (d) ternary-minimizes the convex bound inside
/// it, finishing each stage with a short scan. Every comparison keeps the
/// left branch on ties, which preserves the exhaustive rule of breaking
/// ties toward smaller K. Agreement with [`optimize_k`] is covered by
/// randomized tests; when in doubt, use the exhaustive form.
pub fn optimize_k_ternary(p: &BoundParams) -> Result<(u32, f64)> {
    p.validate()?;
    let penalty = plagiarism_term(p) + noise_term(p);

    // Last feasible K: gallop then bisect on the monotone budget predicate.
    let feasible = |k: u32| derive_tau(p.t_sum, k, p.alpha, p.beta).is_ok();
    if !feasible(1) {
        return Err(derive_tau(p.t_sum, 1, p.alpha, p.beta).unwrap_err());
    }
    let mut lo = 1u32;
    let mut hi = 2u32;
    while feasible(hi) {
        lo = hi;
        match hi.checked_mul(2) {
            Some(next) => hi = next,
            None => {
                hi = u32::MAX;
                break;
            }
        }
    }
    while lo + 1 < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let feasible_max = lo;

    let margin = |k: u32| -> Result<f64> {
        let (gamma, inner) = gamma_inner(p, k, penalty)?;
        Ok(gamma * inner)
    };

    // Peak of the concave margin. Shrinking to [m1+1, hi] on a strict loss
    // and [lo, m2] otherwise always keeps a maximizer in the window.
    let (mut lo, mut hi) = (1u32, feasible_max);
    while hi - lo > 2 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        if margin(m1)? < margin(m2)? {
            lo = m1 + 1;
        } else {
            hi = m2;
        }
    }
    let mut peak = lo;
    let mut peak_margin = margin(lo)?;
    for k in (lo + 1)..=hi {
        let m = margin(k)?;
        if m > peak_margin {
            peak = k;
            peak_margin = m;
        }
    }
    if peak_margin <= 0.0 {
        return Err(Error::NoValidK(format!(
            "the bound is vacuous at every feasible block count (1..={feasible_max})"
        )));
    }

    // G rises to the peak and falls past it; bisect both sign crossings.
    let first_valid = if margin(1)? > 0.0 {
        1
    } else {
        let (mut lo, mut hi) = (1u32, peak);
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if margin(mid)? > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let last_valid = if margin(feasible_max)? > 0.0 {
        feasible_max
    } else {
        let (mut lo, mut hi) = (peak, feasible_max);
        while lo + 1 < hi {
            let mid = lo + (hi - lo) / 2;
            if margin(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };

    // Minimize the convex 1/G across the valid stretch. `<=` keeps the
    // left window on ties; the final strict scan then lands on the
    // smallest minimizing K.
    let value_at = |k: u32| -> Result<f64> { Ok(1.0 / margin(k)?) };
    let (mut a, mut b) = (first_valid, last_valid);
    while b - a > 8 {
        let m1 = a + (b - a) / 3;
        let m2 = b - (b - a) / 3;
        if value_at(m1)? <= value_at(m2)? {
            b = m2 - 1;
        } else {
            a = m1 + 1;
        }
    }
    let mut k_star = a;
    let mut best = value_at(a)?;
    for k in (a + 1)..=b {
        let v = value_at(k)?;
        if v < best {
            best = v;
            k_star = k;
        }
    }
    Ok((k_star, best))
}

/// Header of the sweep CSV export.
pub const SWEEP_HEADER: &str = "k,bound,valid,tau,gamma";

/// Render sweep rows as CSV. A vacuous bound becomes an empty field so
/// downstream plotting skips it instead of charting a placeholder.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let bound = r.bound.map(|b| b.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.k, bound, r.valid, r.tau, r.gamma));
    }
    out
}

/// Parse the CSV produced by [`sweep_to_csv`].
pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SWEEP_HEADER => {}
        other => {
            return Err(Error::Config(format!(
                "sweep CSV header mismatch: expected {SWEEP_HEADER:?}, got {other:?}"
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Config(format!(
                "sweep CSV line {}: expected 5 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_err =
            |what: &str| Error::Config(format!("sweep CSV line {}: bad {what}", i + 2));
        let k: u32 = fields[0].parse().map_err(|_| parse_err("k"))?;
        let bound = if fields[1].is_empty() {
            None
        } else {
            Some(fields[1].parse::<f64>().map_err(|_| parse_err("bound"))?)
        };
        let valid: bool = fields[2].parse().map_err(|_| parse_err("valid"))?;
        let tau: u32 = fields[3].parse().map_err(|_| parse_err("tau"))?;
        let gamma: f64 = fields[4].parse().map_err(|_| parse_err("gamma"))?;
        if valid != bound.is_some() {
            return Err(Error::Config(format!(
                "sweep CSV line {}: valid flag disagrees with bound presence",
                i + 2
            )));
        }
        rows.push(SweepRow { k, bound, valid, tau, gamma });
    }
    Ok(rows)
}
