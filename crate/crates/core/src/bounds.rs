//! Upper and lower bounds for `Q_n(B) = P(T(n) > B)`.
//!
//! The event `{T(n) > B}` equals `{n^{-1} Σ η(i) > B σ²}` with
//! `η = √n ξ + B(σ² − ξ²)`, a mean of i.i.d. centered terms. The
//! exponential level applies a Chernoff bound to that mean; the power level
//! applies Markov's inequality through a Rosenthal-type moment generator;
//! the lower bounds come from the one-term statistic and the normal limit.

use std::f64::consts::E;

use libm::erfc;
use rayon::prelude::*;

use crate::convex::{maximize_concave, DEFAULT_X_TOL};
use crate::dist::DistributionModel;
use crate::error::{Error, Result};
use crate::gls::{gls_tail_bound, GridConfig, PsiFunction, PsiKind};

/// Rosenthal constant used by the power-level bound unless overridden.
pub const DEFAULT_KR: f64 = 0.6379;

/// Upper end of the scan that stands in for `sup_n`.
pub const DEFAULT_N_HI: u64 = 4096;

/// Default B grid; power-level entries exist only for `B ≥ e`.
pub const DEFAULT_B_GRID: [f64; 11] = [0.25, 0.5, 1.0, 1.5, 2.0, E, 3.0, 5.0, 10.0, 20.0, 50.0];

/// Integers are scanned densely up to this n, geometrically beyond.
const DENSE_SCAN_LIMIT: u64 = 64;
const SCAN_RATIO: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConfig {
    pub kr: f64,
    pub theta_tol: f64,
    pub grid: GridConfig,
}

impl Default for BoundConfig {
    fn default() -> Self {
        BoundConfig {
            kr: DEFAULT_KR,
            theta_tol: DEFAULT_X_TOL,
            grid: GridConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundFamily {
    ExpLevel,
    PowerLevel,
    LowerClt,
    LowerQ1,
}

impl BoundFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            BoundFamily::ExpLevel => "exp",
            BoundFamily::PowerLevel => "power",
            BoundFamily::LowerClt => "lower_clt",
            BoundFamily::LowerQ1 => "lower_q1",
        }
    }

    pub fn is_upper(self) -> bool {
        matches!(self, BoundFamily::ExpLevel | BoundFamily::PowerLevel)
    }
}

/// Which n a curve refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveN {
    Single(u64),
    /// Maximum over the scanned n in `[lo, hi]`.
    SupOverRange(u64, u64),
    /// The `n → ∞` limit.
    Limit,
}

/// Diagnostics of the optimization behind one bound value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optimizer {
    /// θ* for the exponential level, p* for the power level; NaN when unused.
    pub arg: f64,
    /// The exponent or objective at the optimum.
    pub objective: f64,
    /// The attaining n for sup-over-n curves.
    pub n_star: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundPoint {
    pub b: f64,
    pub value: f64,
    pub optimizer: Optimizer,
    /// Secondary value; for the CLT curve this is the printed `exp(−B²/2)`.
    pub aux: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCurve {
    pub family: BoundFamily,
    pub n: CurveN,
    pub points: Vec<BoundPoint>,
}

impl BoundCurve {
    pub fn point_at(&self, b: f64) -> Option<&BoundPoint> {
        self.points.iter().find(|p| p.b == b)
    }
}

/// Result of a scan over n.
#[derive(Debug, Clone, PartialEq)]
pub struct SupBound {
    pub value: f64,
    pub n_star: u64,
    pub per_n: Vec<(u64, BoundPoint)>,
}

impl SupBound {
    pub fn point(&self, b: f64) -> BoundPoint {
        let at = self
            .per_n
            .iter()
            .find(|(n, _)| *n == self.n_star)
            .map(|(_, p)| p.optimizer)
            .unwrap_or(Optimizer {
                arg: f64::NAN,
                objective: f64::NAN,
                n_star: None,
            });
        BoundPoint {
            b,
            value: self.value,
            optimizer: Optimizer {
                n_star: Some(self.n_star),
                ..at
            },
            aux: None,
        }
    }
}

fn check_b(b: f64) -> Result<()> {
    if b > 0.0 && b.is_finite() {
        Ok(())
    } else {
        Err(Error::DomainError(format!(
            "B must be positive and finite, got {b}"
        )))
    }
}

fn check_n(n: u64) -> Result<()> {
    if n >= 1 {
        Ok(())
    } else {
        Err(Error::DomainError("n must be a positive integer".into()))
    }
}

/// `β(θ; n, B) = n·φ(θ/√n, Bθ/n)`, the log-MGF of `θ·n^{-1} Σ η(i)`.
pub fn beta(dist: &DistributionModel, n: u64, b: f64, theta: f64) -> f64 {
    if theta == 0.0 {
        return 0.0;
    }
    let nf = n as f64;
    nf * dist.log_mgf2(theta / nf.sqrt(), b * theta / nf)
}

/// Chernoff bound `exp(−sup_{θ≥0} [θ·Bσ² − β(θ; n, B)])`.
///
/// The conjugate is evaluated at `Bσ²`, the threshold of the mean of the η
/// terms; for σ = 1 this is the same as evaluating at B. An unbounded
/// supremum yields 0 with θ* reported as +∞.
pub fn exp_tail_bound(
    dist: &DistributionModel,
    n: u64,
    b: f64,
    cfg: &BoundConfig,
) -> Result<BoundPoint> {
    check_b(b)?;
    check_n(n)?;
    let threshold = b * dist.sigma2();
    let m = maximize_concave(|t| t * threshold - beta(dist, n, b, t), 0.0, cfg.theta_tol);
    let exponent = m.value.max(0.0);
    let value = if exponent == f64::INFINITY {
        0.0
    } else {
        (-exponent).exp().min(1.0)
    };
    Ok(BoundPoint {
        b,
        value,
        optimizer: Optimizer {
            arg: if exponent == f64::INFINITY {
                f64::INFINITY
            } else {
                m.x
            },
            objective: exponent,
            n_star: None,
        },
        aux: None,
    })
}

/// The n values visited when approximating `sup_n`: every integer up to 64,
/// then a geometric progression with ratio 1.25, always ending at `n_hi`.
pub fn sup_scan_ns(n_lo: u64, n_hi: u64) -> Vec<u64> {
    let n_lo = n_lo.max(1);
    let mut ns: Vec<u64> = (n_lo..=n_hi.min(DENSE_SCAN_LIMIT)).collect();
    let mut n = n_lo.max(DENSE_SCAN_LIMIT) as f64;
    while (n as u64) < n_hi {
        ns.push(n.round() as u64);
        n = (n * SCAN_RATIO).round().max(n + 1.0);
    }
    ns.push(n_hi);
    ns.retain(|&k| k >= n_lo && k <= n_hi);
    ns.sort_unstable();
    ns.dedup();
    ns
}

fn sup_over<F>(n_lo: u64, n_hi: u64, kernel: F) -> Result<SupBound>
where
    F: Fn(u64) -> Result<BoundPoint> + Sync,
{
    if !(n_lo >= 1 && n_lo <= n_hi) {
        return Err(Error::DomainError(format!("bad n range [{n_lo}, {n_hi}]")));
    }
    let ns = sup_scan_ns(n_lo, n_hi);
    let per_n = ns
        .par_iter()
        .map(|&n| kernel(n).map(|p| (n, p)))
        .collect::<Result<Vec<_>>>()?;
    let (mut value, mut n_star) = (f64::NEG_INFINITY, n_lo);
    for (n, p) in &per_n {
        if p.value > value {
            value = p.value;
            n_star = *n;
        }
    }
    Ok(SupBound {
        value,
        n_star,
        per_n,
    })
}

/// Maximum of [`exp_tail_bound`] over the scanned n in `[n_lo, n_hi]`.
///
/// This truncates `sup` over all n; check whether `n_star == n_hi` to see
/// if the maximum sits on the boundary.
pub fn exp_tail_bound_sup(
    dist: &DistributionModel,
    b: f64,
    n_lo: u64,
    n_hi: u64,
    cfg: &BoundConfig,
) -> Result<SupBound> {
    check_b(b)?;
    sup_over(n_lo, n_hi, |n| exp_tail_bound(dist, n, b, cfg))
}

/// `ψ(p) = K_R·(p / ln p)·Δ(p; n)` on `(1, b)`, where b is the largest p
/// with finite Δ.
pub fn rosenthal_psi(dist: &DistributionModel, n: u64, b: f64, kr: f64) -> Result<PsiFunction> {
    check_n(n)?;
    let finite = |p: f64| {
        dist.delta_p(n, b, p)
            .map(|d| d.is_finite())
            .unwrap_or(false)
    };
    let p_ok = [2.0, 1.5, 1.1, 1.01]
        .into_iter()
        .find(|&p| finite(p))
        .ok_or_else(|| Error::Divergent("delta_p is infinite for every p > 1".into()))?;
    let cap = GridConfig::default().p_cap_tail;
    let upper = if finite(cap) {
        f64::INFINITY
    } else {
        let (mut good, mut bad) = (p_ok, cap);
        for _ in 0..50 {
            let mid = 0.5 * (good + bad);
            if finite(mid) {
                good = mid;
            } else {
                bad = mid;
            }
        }
        good
    };
    let d = dist.clone();
    PsiFunction::new(
        move |p| {
            if p <= 1.0 {
                return f64::INFINITY;
            }
            match d.delta_p(n, b, p) {
                Ok(delta) => kr * p / p.ln() * delta,
                Err(_) => f64::INFINITY,
            }
        },
        1.0,
        upper,
        upper.is_finite(),
        PsiKind::RosenthalTransformed,
    )
}

/// `min(1, inf_{p>1} (ψ(p) / (Bσ²))^p)` with ψ from [`rosenthal_psi`] and
/// GLS norm 1. Defined for `B ≥ e` only.
pub fn power_tail_bound(
    dist: &DistributionModel,
    n: u64,
    b: f64,
    cfg: &BoundConfig,
) -> Result<BoundPoint> {
    check_b(b)?;
    if b < E {
        return Err(Error::DomainError(format!(
            "power-level bound needs B >= e, got {b}; use the exponential level"
        )));
    }
    let psi = rosenthal_psi(dist, n, b, cfg.kr)?;
    let t = gls_tail_bound(&psi, 1.0, b * dist.sigma2(), &cfg.grid);
    Ok(BoundPoint {
        b,
        value: t.value,
        optimizer: Optimizer {
            arg: t.arg,
            objective: t.exponent,
            n_star: None,
        },
        aux: None,
    })
}

/// Maximum of [`power_tail_bound`] over the scanned n in `[n_lo, n_hi]`.
pub fn power_tail_bound_sup(
    dist: &DistributionModel,
    b: f64,
    n_lo: u64,
    n_hi: u64,
    cfg: &BoundConfig,
) -> Result<SupBound> {
    check_b(b)?;
    if b < E {
        return Err(Error::DomainError(format!(
            "power-level bound needs B >= e, got {b}"
        )));
    }
    sup_over(n_lo, n_hi, |n| power_tail_bound(dist, n, b, cfg))
}

/// `Q_1(B) = P(0 < ξ < 1/B)`, a lower bound for `sup_n Q_n(B)`.
///
/// For n = 1, `T(1) = 1/ξ` on `ξ ≠ 0`, so the interval is open at `1/B`.
pub fn lower_bound_q1(dist: &DistributionModel, b: f64) -> Result<f64> {
    check_b(b)?;
    dist.prob_open_interval(0.0, 1.0 / b)
}

/// `(exp(−B²/2), 1 − Φ(B))`: the printed CLT lower bound and the normal
/// tail that the limit of `Q_n(B)` actually equals for σ = 1.
pub fn lower_bound_clt(b: f64) -> (f64, f64) {
    let printed = (-0.5 * b * b).exp();
    let operative = 0.5 * erfc(b / std::f64::consts::SQRT_2);
    (printed, operative)
}

fn collect_curve<F>(family: BoundFamily, n: CurveN, b_grid: &[f64], point: F) -> Result<BoundCurve>
where
    F: Fn(f64) -> Result<Option<BoundPoint>> + Sync,
{
    let points = b_grid
        .par_iter()
        .map(|&b| point(b))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(BoundCurve { family, n, points })
}

/// Exponential-level bound at fixed n over a B grid.
pub fn exp_curve(
    dist: &DistributionModel,
    n: u64,
    b_grid: &[f64],
    cfg: &BoundConfig,
) -> Result<BoundCurve> {
    collect_curve(BoundFamily::ExpLevel, CurveN::Single(n), b_grid, |b| {
        exp_tail_bound(dist, n, b, cfg).map(Some)
    })
}

pub fn exp_sup_curve(
    dist: &DistributionModel,
    n_lo: u64,
    n_hi: u64,
    b_grid: &[f64],
    cfg: &BoundConfig,
) -> Result<BoundCurve> {
    collect_curve(
        BoundFamily::ExpLevel,
        CurveN::SupOverRange(n_lo, n_hi),
        b_grid,
        |b| exp_tail_bound_sup(dist, b, n_lo, n_hi, cfg).map(|s| Some(s.point(b))),
    )
}

/// Power-level bound at fixed n; grid entries with `B < e` are left out.
pub fn power_curve(
    dist: &DistributionModel,
    n: u64,
    b_grid: &[f64],
    cfg: &BoundConfig,
) -> Result<BoundCurve> {
    collect_curve(BoundFamily::PowerLevel, CurveN::Single(n), b_grid, |b| {
        if b < E {
            Ok(None)
        } else {
            power_tail_bound(dist, n, b, cfg).map(Some)
        }
    })
}

pub fn power_sup_curve(
    dist: &DistributionModel,
    n_lo: u64,
    n_hi: u64,
    b_grid: &[f64],
    cfg: &BoundConfig,
) -> Result<BoundCurve> {
    collect_curve(
        BoundFamily::PowerLevel,
        CurveN::SupOverRange(n_lo, n_hi),
        b_grid,
        |b| {
            if b < E {
                Ok(None)
            } else {
                power_tail_bound_sup(dist, b, n_lo, n_hi, cfg).map(|s| Some(s.point(b)))
            }
        },
    )
}

/// `Q_1(B)` over a B grid; the curve refers to n = 1.
pub fn lower_q1_curve(dist: &DistributionModel, b_grid: &[f64]) -> Result<BoundCurve> {
    collect_curve(BoundFamily::LowerQ1, CurveN::Single(1), b_grid, |b| {
        let value = lower_bound_q1(dist, b)?;
        Ok(Some(BoundPoint {
            b,
            value,
            optimizer: Optimizer {
                arg: f64::NAN,
                objective: f64::NAN,
                n_star: Some(1),
            },
            aux: None,
        }))
    })
}

/// Normal-limit comparison values; report-only.
pub fn lower_clt_curve(b_grid: &[f64]) -> BoundCurve {
    let points = b_grid
        .iter()
        .map(|&b| {
            let (printed, operative) = lower_bound_clt(b);
            BoundPoint {
                b,
                value: operative,
                optimizer: Optimizer {
                    arg: f64::NAN,
                    objective: f64::NAN,
                    n_star: None,
                },
                aux: Some(printed),
            }
        })
        .collect();
    BoundCurve {
        family: BoundFamily::LowerClt,
        n: CurveN::Limit,
        points,
    }
}
