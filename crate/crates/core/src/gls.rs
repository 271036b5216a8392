//! Grand Lebesgue Space and B(φ) norm calculus.
//!
//! A [`PsiFunction`] generates the norm `sup_p |ζ|_p / ψ(p)` and the tail
//! bound `inf_p (ψ(p)·‖ζ‖ / y)^p`; a [`PhiFunction`] generates the MGF
//! majorant norm `‖ζ‖_{B(φ)}` and the Chernoff-type tail
//! `exp(−φ*(u / ‖ζ‖))`. All suprema and infima are taken on log-spaced grids
//! and then polished by golden section around the best grid point.

use std::fmt;
use std::sync::Arc;

use crate::convex::{fenchel_argmax, golden_max, invert_monotone};
use crate::dist::DistributionModel;
use crate::error::{Error, Result};

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Grid resolutions for the suprema in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Log-spaced points in p.
    pub p_points: usize,
    /// Upper end of the p grid for norms when the support is unbounded.
    pub p_cap_norm: f64,
    /// Initial upper end of the p grid for tail bounds when the support is
    /// unbounded; raised while the minimizer sits on it.
    pub p_cap_tail: f64,
    pub lambda_per_decade: usize,
    /// λ grid covers `[10^{-d/2}, 10^{d/2}]`.
    pub lambda_decades: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            p_points: 128,
            p_cap_norm: 256.0,
            p_cap_tail: 1024.0,
            lambda_per_decade: 64,
            lambda_decades: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsiKind {
    /// ψ ≡ 1 on `[1, r]`; the GLS norm is the plain L_r norm.
    Degenerate(f64),
    /// The Lp-norm curve of a random variable.
    Natural,
    /// `ψ(p) = p^{1/m}`.
    PowerFamily(f64),
    /// `K_R·(p / ln p)·Δ(p)`.
    RosenthalTransformed,
    /// Induced from a φ function by `ψ(p) = p / φ^{-1}(p)`.
    FromPhi,
    Custom,
}

/// A generator `p ↦ ψ(p) > 0` with support from `p_lo` to `b`.
///
/// Evaluation outside the support returns `+∞`.
#[derive(Clone)]
pub struct PsiFunction {
    eval: Eval,
    p_lo: f64,
    b: f64,
    b_inclusive: bool,
    kind: PsiKind,
}

impl fmt::Debug for PsiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PsiFunction")
            .field("kind", &self.kind)
            .field("p_lo", &self.p_lo)
            .field("b", &self.b)
            .finish_non_exhaustive()
    }
}

impl PsiFunction {
    /// Generator with support `[p_lo, b)`, or `[p_lo, b]` when `b_inclusive`.
    pub fn new<F>(eval: F, p_lo: f64, b: f64, b_inclusive: bool, kind: PsiKind) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(p_lo >= 1.0) || !(b > p_lo || (b == p_lo && b_inclusive)) {
            return Err(Error::DomainError(format!("bad psi support [{p_lo}, {b})")));
        }
        Ok(PsiFunction {
            eval: Arc::new(eval),
            p_lo,
            b,
            b_inclusive,
            kind,
        })
    }

    pub fn degenerate(r: f64) -> Result<Self> {
        if !(r >= 1.0 && r.is_finite()) {
            return Err(Error::DomainError(format!(
                "degenerate psi needs finite r >= 1, got {r}"
            )));
        }
        Self::new(|_| 1.0, 1.0, r, true, PsiKind::Degenerate(r))
    }

    pub fn power(m: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::DomainError(format!(
                "power psi needs m > 0, got {m}"
            )));
        }
        Self::new(
            move |p| p.powf(1.0 / m),
            1.0,
            f64::INFINITY,
            false,
            PsiKind::PowerFamily(m),
        )
    }

    /// The Lp-norm curve of a law, `p ↦ |ξ|_p`.
    pub fn natural(dist: &DistributionModel) -> Result<Self> {
        let d = dist.clone();
        Self::new(
            move |p| d.lp_norm(p).unwrap_or(f64::INFINITY),
            1.0,
            f64::INFINITY,
            false,
            PsiKind::Natural,
        )
    }

    pub fn kind(&self) -> PsiKind {
        self.kind
    }

    pub fn p_lo(&self) -> f64 {
        self.p_lo
    }

    /// Upper end of the support (may be `+∞`).
    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn in_support(&self, p: f64) -> bool {
        p >= self.p_lo && (p < self.b || (self.b_inclusive && p == self.b))
    }

    pub fn eval(&self, p: f64) -> f64 {
        if self.in_support(p) {
            (self.eval)(p)
        } else {
            f64::INFINITY
        }
    }

    /// `v(p) = p·ln ψ(p)`.
    pub fn v(&self, p: f64) -> f64 {
        p * self.eval(p).ln()
    }

    /// Log-spaced grid over the support, capped at `cap` when unbounded.
    fn grid(&self, points: usize, cap: f64) -> Vec<f64> {
        let hi = if self.b.is_finite() {
            if self.b_inclusive {
                self.b
            } else {
                self.b * (1.0 - 1e-9)
            }
        } else {
            cap.max(self.p_lo)
        };
        log_grid(self.p_lo, hi, points)
    }
}

const MAX_P_CAP: f64 = 1e15;

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if !(hi > lo) || points < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut g: Vec<f64> = (0..points)
        .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
        .collect();
    // Pin the endpoints exactly.
    g[0] = lo;
    g[points - 1] = hi;
    g
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhiKind {
    /// `φ(λ) = |λ|^m / m`.
    PowerFamily(f64),
    /// `max_± ln E exp(±λξ)` for a given law.
    NaturalFromLaw,
    Custom,
}

/// An even convex MGF majorant with `φ(0) = 0` and domain radius `λ₀`.
#[derive(Clone)]
pub struct PhiFunction {
    eval: Eval,
    lambda0: f64,
    kind: PhiKind,
}

impl fmt::Debug for PhiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiFunction")
            .field("kind", &self.kind)
            .field("lambda0", &self.lambda0)
            .finish_non_exhaustive()
    }
}

impl PhiFunction {
    /// `f` is evaluated at `|λ|` for `|λ| < lambda0`.
    pub fn custom<F>(f: F, lambda0: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(lambda0 > 0.0) {
            return Err(Error::DomainError(format!(
                "lambda0 must be positive, got {lambda0}"
            )));
        }
        Ok(PhiFunction {
            eval: Arc::new(f),
            lambda0,
            kind: PhiKind::Custom,
        })
    }

    /// `|λ|^m / m`, convex for `m > 1`.
    pub fn power(m: f64) -> Result<Self> {
        if !(m > 1.0 && m.is_finite()) {
            return Err(Error::DomainError(format!(
                "power phi needs m > 1, got {m}"
            )));
        }
        let mut phi = Self::custom(move |l| l.powf(m) / m, f64::INFINITY)?;
        phi.kind = PhiKind::PowerFamily(m);
        Ok(phi)
    }

    /// `λ ↦ max(φ(λ, 0), φ(−λ, 0))` from the bivariate log-MGF of the law.
    pub fn natural(dist: &DistributionModel) -> Self {
        let d = dist.clone();
        PhiFunction {
            eval: Arc::new(move |l| d.log_mgf2(l, 0.0).max(d.log_mgf2(-l, 0.0))),
            lambda0: f64::INFINITY,
            kind: PhiKind::NaturalFromLaw,
        }
    }

    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    pub fn lambda0(&self) -> f64 {
        self.lambda0
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let a = lambda.abs();
        if a < self.lambda0 {
            (self.eval)(a)
        } else {
            f64::INFINITY
        }
    }

    fn inverse(&self, y: f64) -> Result<f64> {
        if y <= 0.0 {
            return Ok(0.0);
        }
        let hint = if self.lambda0.is_finite() {
            0.5 * self.lambda0
        } else {
            1.0
        };
        invert_monotone(|l| self.eval(l), y, 0.0, hint)
    }
}

/// A norm together with the argument (p or λ) where the supremum sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub norm: f64,
    pub arg: f64,
}

/// A tail bound with its optimizer (p* or λ*) and the exponent
/// (`value = min(1, exp(−exponent))`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailBound {
    pub value: f64,
    pub arg: f64,
    pub exponent: f64,
}

impl TailBound {
    fn no_information(arg: f64) -> Self {
        TailBound {
            value: 1.0,
            arg,
            exponent: 0.0,
        }
    }

    fn from_exponent(exponent: f64, arg: f64) -> Self {
        let value = if exponent == f64::INFINITY {
            0.0
        } else {
            (-exponent).exp().min(1.0)
        };
        TailBound {
            value,
            arg,
            exponent,
        }
    }
}

/// `sup_p moment_curve(p) / ψ(p)` over the support of ψ.
pub fn gls_norm<C>(moment_curve: C, psi: &PsiFunction, cfg: &GridConfig) -> Result<NormEstimate>
where
    C: Fn(f64) -> f64,
{
    let grid = psi.grid(cfg.p_points, cfg.p_cap_norm);
    let ratio = |p: f64| {
        let r = moment_curve(p) / psi.eval(p);
        if r.is_nan() {
            f64::NEG_INFINITY
        } else {
            r
        }
    };
    let values: Vec<f64> = grid.iter().map(|&p| ratio(p)).collect();
    if values.contains(&f64::INFINITY) {
        return Err(Error::Unbounded(
            "moment curve is infinite inside the support".into(),
        ));
    }
    let (k, _) = argmax(&values);

    if !psi.b.is_finite() {
        let last = grid.len() - 1;
        let start = grid.partition_point(|&p| p < grid[last] / 10.0);
        if k == last && values[start..].windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::Unbounded(format!(
                "ratio still increasing at p = {}",
                grid[last]
            )));
        }
    }

    let (arg, norm) = refine_log(&ratio, &grid, k, values[k]);
    Ok(NormEstimate { norm, arg })
}

/// `min(1, inf_p (ψ(p)·norm / y)^p)`, i.e. `exp(−v*_ψ(ln(y / norm)))`.
///
/// Returns 1 when `y ≤ e·norm`, where the bound carries no information.
pub fn gls_tail_bound(psi: &PsiFunction, norm: f64, y: f64, cfg: &GridConfig) -> TailBound {
    if norm == 0.0 && y > 0.0 {
        return TailBound::from_exponent(f64::INFINITY, psi.p_lo);
    }
    if !(y > std::f64::consts::E * norm) {
        return TailBound::no_information(psi.p_lo);
    }
    let shift = norm.ln() - y.ln();
    // Maximize the negated log-bound so the refinement can reuse golden_max.
    let neg_log = |p: f64| {
        let v = -p * (psi.eval(p).ln() + shift);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let mut cap = cfg.p_cap_tail;
    let (grid, values, k) = loop {
        let grid = psi.grid(cfg.p_points, cap);
        let values: Vec<f64> = grid.iter().map(|&p| neg_log(p)).collect();
        let (k, _) = argmax(&values);
        if psi.b.is_finite() || k + 1 < grid.len() || cap >= MAX_P_CAP {
            break (grid, values, k);
        }
        cap *= 16.0;
    };
    let (arg, exponent) = refine_log(&neg_log, &grid, k, values[k]);
    if exponent <= 0.0 {
        return TailBound::no_information(arg);
    }
    TailBound::from_exponent(exponent, arg)
}

/// `‖ζ‖_{B(φ)} = max_± sup_λ φ^{-1}(ln E exp(±λζ)) / λ`.
///
/// `law_mgf(λ)` is `ln E exp(λζ)` and is called with both signs.
pub fn bphi_norm<M>(law_mgf: M, phi: &PhiFunction, cfg: &GridConfig) -> Result<NormEstimate>
where
    M: Fn(f64) -> f64,
{
    let half = cfg.lambda_decades as f64 / 2.0;
    let steps = cfg.lambda_decades * cfg.lambda_per_decade;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| 10f64.powf(-half + i as f64 / cfg.lambda_per_decade as f64))
        .filter(|&l| l < phi.lambda0)
        .collect();
    if grid.is_empty() {
        return Err(Error::DomainError(
            "phi domain lies below the lambda grid".into(),
        ));
    }

    let ratio = |l: f64, sign: f64| -> Result<f64> {
        let m = law_mgf(sign * l);
        if m.is_nan() || m == f64::INFINITY {
            return Err(Error::Unbounded(format!(
                "law MGF infinite at lambda = {}",
                sign * l
            )));
        }
        let x = phi.inverse(m).map_err(|_| {
            Error::Unbounded(format!(
                "law MGF exceeds the range of phi at lambda = {}",
                sign * l
            ))
        })?;
        Ok(x / l)
    };

    let mut best = NormEstimate {
        norm: 0.0,
        arg: grid[0],
    };
    for sign in [1.0, -1.0] {
        let values = grid
            .iter()
            .map(|&l| ratio(l, sign))
            .collect::<Result<Vec<f64>>>()?;
        let (k, _) = argmax(&values);
        let last = grid.len() - 1;
        if k == last && last > 0 && values[last] > values[last - 1] && !phi.lambda0.is_finite() {
            return Err(Error::Unbounded(format!(
                "ratio still increasing at lambda = {}",
                grid[last]
            )));
        }
        let f = |l: f64| ratio(l, sign).unwrap_or(f64::NEG_INFINITY);
        let (arg, norm) = refine_log(&f, &grid, k, values[k]);
        if norm > best.norm {
            best = NormEstimate {
                norm,
                arg: sign * arg,
            };
        }
    }
    Ok(best)
}

/// `min(1, exp(−φ*(u / norm)))`, the one-sided tail bound from a B(φ) norm.
pub fn bphi_tail_bound(phi: &PhiFunction, norm: f64, u: f64) -> TailBound {
    if !(u > 0.0) {
        return TailBound::no_information(0.0);
    }
    if norm == 0.0 {
        return TailBound::from_exponent(f64::INFINITY, 0.0);
    }
    let m = fenchel_argmax(|l| phi.eval(l), u / norm);
    TailBound::from_exponent(m.value, m.x)
}

/// `ψ(p) = p / φ^{-1}(p)`; reproduces `ψ(p) = √p` from `φ(λ) = λ²`.
pub fn psi_from_phi(phi: &PhiFunction) -> Result<PsiFunction> {
    phi.inverse(1.0)?;
    let b = if phi.lambda0.is_finite() {
        phi.eval(phi.lambda0 * (1.0 - 1e-12))
    } else {
        f64::INFINITY
    };
    let phi = phi.clone();
    PsiFunction::new(
        move |p| match phi.inverse(p) {
            Ok(x) if x > 0.0 => p / x,
            _ => f64::INFINITY,
        },
        1.0,
        b.max(1.0),
        false,
        PsiKind::FromPhi,
    )
}

/// `max_{1 ≤ k ≤ n_max} k·φ(λ/√k)` and the first k attaining it.
pub fn phi_bar(phi: &PhiFunction, lambda: f64, n_max: u64) -> (f64, u64) {
    let mut best = (f64::NEG_INFINITY, 1);
    for k in 1..=n_max.max(1) {
        let kf = k as f64;
        let v = kf * phi.eval(lambda / kf.sqrt());
        if v > best.0 * (1.0 + 1e-12) + 1e-300 || best.0 == f64::NEG_INFINITY {
            best = (v, k);
        }
    }
    best
}

/// Tail bound for `S(n)/√n` built from `φ̄` with `n_max = n`.
pub fn normalized_sum_tail(phi: &PhiFunction, norm: f64, n: u64, u: f64) -> TailBound {
    if !(u > 0.0) {
        return TailBound::no_information(0.0);
    }
    if norm == 0.0 {
        return TailBound::from_exponent(f64::INFINITY, 0.0);
    }
    let m = fenchel_argmax(|l| phi_bar(phi, l, n).0, u / norm);
    TailBound::from_exponent(m.value, m.x)
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut k = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[k] {
            k = i;
        }
    }
    (k, values[k])
}

/// Golden-section polish in log coordinates between the grid neighbours of
/// index `k`.
fn refine_log<F: Fn(f64) -> f64>(f: &F, grid: &[f64], k: usize, at_k: f64) -> (f64, f64) {
    if grid.len() < 3 {
        return (grid[k], at_k);
    }
    let lo = grid[k.saturating_sub(1)].ln();
    let hi = grid[(k + 1).min(grid.len() - 1)].ln();
    let g = |t: f64| f(t.exp());
    let (t, v) = golden_max(&g, lo, hi, 1e-10);
    if v > at_k {
        (t.exp(), v)
    } else {
        (grid[k], at_k)
    }
}
