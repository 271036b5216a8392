//! Monte Carlo estimates of `Q_n(B) = P(T(n) > B)` with exact
//! Clopper–Pearson intervals, and the verification sweep that holds every
//! analytic bound against them.
//!
//! Trials are split into fixed-size chunks. Chunk `k` draws from a ChaCha8
//! stream keyed by `(seed, n)` with stream id `k`, and chunk counts are
//! reduced in chunk order, so hit counts depend only on
//! `(seed, n, trials, chunk_size)` and never on the number of workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::beta::beta_reg;

use crate::bounds::{BoundCurve, BoundFamily, CurveN};
use crate::dist::DistributionModel;
use crate::error::{Error, Result};

/// Environment variable that caps the number of worker threads.
pub const THREADS_ENV: &str = "SELFNORM_THREADS";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MCConfig {
    pub n: u64,
    pub trials: u64,
    pub seed: u64,
    pub chunk_size: u64,
    /// Two-sided confidence level of the intervals.
    pub confidence: f64,
    /// Worker threads; `None` uses rayon's default. `SELFNORM_THREADS` caps both.
    pub threads: Option<usize>,
}

impl Default for MCConfig {
    fn default() -> Self {
        MCConfig {
            n: 1,
            trials: 1_000_000,
            seed: 0,
            chunk_size: 1 << 16,
            confidence: 0.999,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub b: f64,
    pub n: u64,
    pub hits: u64,
    pub trials: u64,
    pub point: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub confidence: f64,
}

impl TailEstimate {
    pub fn new(b: f64, n: u64, hits: u64, trials: u64, confidence: f64) -> Self {
        let (ci_lo, ci_hi) = clopper_pearson(hits, trials, confidence);
        let point = hits as f64 / trials as f64;
        TailEstimate {
            b,
            n,
            hits,
            trials,
            point,
            ci_lo: ci_lo.min(point),
            ci_hi: ci_hi.max(point),
            confidence,
        }
    }
}

/// `√n · Σx / Σx²`, or 0 when every value is zero.
pub fn t_statistic(xs: &[f64]) -> f64 {
    let (s, q) = xs.iter().fold((0.0, 0.0), |(s, q), &x| (s + x, q + x * x));
    ratio(xs.len() as u64, s, q)
}

#[inline]
fn ratio(n: u64, s: f64, q: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        (n as f64).sqrt() * s / q
    }
}

/// Draws `ξ_1..ξ_n` and returns `T(n) = √n · Σξ / Σξ²` (0 if `Σξ² = 0`).
pub fn simulate_t<R: Rng + ?Sized>(dist: &DistributionModel, n: u64, rng: &mut R) -> f64 {
    let (mut s, mut q) = (0.0, 0.0);
    for _ in 0..n {
        let x = dist.sample(rng);
        s += x;
        q += x * x;
    }
    ratio(n, s, q)
}

/// Exact two-sided binomial interval at the given confidence, from the
/// Beta-quantile characterization.
pub fn clopper_pearson(hits: u64, trials: u64, confidence: f64) -> (f64, f64) {
    assert!(
        trials >= 1 && hits <= trials,
        "need 0 <= hits <= trials, trials >= 1"
    );
    let alpha = 1.0 - confidence;
    let (k, n) = (hits as f64, trials as f64);
    let lo = if hits == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, k, n - k + 1.0)
    };
    let hi = if hits == trials {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, k + 1.0, n - k)
    };
    (lo, hi)
}

fn beta_quantile(q: f64, a: f64, b: f64) -> f64 {
    // Bisection in ln x resolves tiny quantiles to full relative precision.
    let (mut lo, mut hi) = (-690.0f64, 0.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid.exp()) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn stream_key(seed: u64, n: u64) -> u64 {
    splitmix64(seed ^ splitmix64(n.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Worker count: the explicit setting or rayon's default, capped by
/// `SELFNORM_THREADS` when that is set.
pub fn worker_count(threads: Option<usize>) -> usize {
    let wanted = threads
        .filter(|&t| t >= 1)
        .unwrap_or_else(rayon::current_num_threads);
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t >= 1);
    cap.map_or(wanted, |c| wanted.min(c))
}

/// Runs `f` inside a rayon pool sized by [`worker_count`].
pub fn with_workers<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(threads))
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Counts `T(n) > B` for every B in the grid over `cfg.trials` simulations
/// and attaches Clopper–Pearson intervals.
pub fn empirical_tail(
    dist: &DistributionModel,
    cfg: &MCConfig,
    b_grid: &[f64],
) -> Result<Vec<TailEstimate>> {
    if cfg.trials == 0 || cfg.chunk_size == 0 || cfg.n == 0 {
        return Err(Error::Config(
            "trials, chunk_size and n must be positive".into(),
        ));
    }
    if !(cfg.confidence > 0.0 && cfg.confidence < 1.0) {
        return Err(Error::Config(format!(
            "confidence must lie in (0, 1), got {}",
            cfg.confidence
        )));
    }
    let key = stream_key(cfg.seed, cfg.n);
    let chunks = cfg.trials.div_ceil(cfg.chunk_size);
    let run_chunk = |k: u64| -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(k);
        let len = cfg.chunk_size.min(cfg.trials - k * cfg.chunk_size);
        let mut hits = vec![0u64; b_grid.len()];
        for _ in 0..len {
            let t = simulate_t(dist, cfg.n, &mut rng);
            for (h, &b) in hits.iter_mut().zip(b_grid) {
                if t > b {
                    *h += 1;
                }
            }
        }
        hits
    };
    let per_chunk: Vec<Vec<u64>> = with_workers(cfg.threads, || {
        (0..chunks).into_par_iter().map(run_chunk).collect()
    });
    let mut totals = vec![0u64; b_grid.len()];
    for chunk in &per_chunk {
        for (t, h) in totals.iter_mut().zip(chunk) {
            *t += h;
        }
    }
    Ok(b_grid
        .iter()
        .zip(totals)
        .map(|(&b, hits)| TailEstimate::new(b, cfg.n, hits, cfg.trials, cfg.confidence))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Compared for the report only.
    Info,
}

impl CheckStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CheckStatus::Pass => "PASS",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Info => "INFO",
        }
    }
}

/// One bound value held against one Monte Carlo estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCheck {
    pub family: BoundFamily,
    pub curve_n: CurveN,
    pub bound: f64,
    /// θ* or p* behind the bound.
    pub arg: f64,
    pub n_star: Option<u64>,
    /// Secondary bound value carried over from the curve point.
    pub aux: Option<f64>,
    pub estimate: TailEstimate,
    pub status: CheckStatus,
    /// Upper bounds: `bound − ci_lo`; lower bounds: `ci_hi − bound`.
    pub margin: f64,
    /// `bound / point` (infinite when no hits were observed).
    pub tightness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub dist: String,
    pub estimates: Vec<TailEstimate>,
    pub cells: Vec<CellCheck>,
}

impl VerificationReport {
    pub fn failures(&self) -> impl Iterator<Item = &CellCheck> {
        self.cells.iter().filter(|c| c.status == CheckStatus::Fail)
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

/// Runs the Monte Carlo referee on every `(n, B)` cell and checks each
/// curve point against it.
///
/// Upper bounds pass when `bound ≥ ci_lo`; the `Q_1` lower bound passes when
/// `bound ≤ ci_hi` at n = 1; the normal-limit curve is reported against the
/// largest n without a verdict. A sup-over-n curve is checked against every
/// grid n inside its range.
pub fn verify_bounds(
    dist: &DistributionModel,
    n_grid: &[u64],
    b_grid: &[f64],
    cfg: &MCConfig,
    curves: &[BoundCurve],
) -> Result<VerificationReport> {
    for curve in curves {
        for p in &curve.points {
            if !b_grid.contains(&p.b) {
                return Err(Error::GridMismatch(format!(
                    "{} curve has B = {} outside the grid",
                    curve.family.as_str(),
                    p.b
                )));
            }
        }
        match curve.n {
            CurveN::Single(n) if !n_grid.contains(&n) => {
                return Err(Error::GridMismatch(format!(
                    "{} curve at n = {n} is not in the n grid",
                    curve.family.as_str()
                )));
            }
            CurveN::SupOverRange(lo, hi) if !n_grid.iter().any(|n| (lo..=hi).contains(n)) => {
                return Err(Error::GridMismatch(format!(
                    "no grid n inside the sup range [{lo}, {hi}]"
                )));
            }
            _ => {}
        }
    }

    let mut estimates = Vec::new();
    for &n in n_grid {
        let c = MCConfig { n, ..*cfg };
        estimates.extend(empirical_tail(dist, &c, b_grid)?);
    }
    let find = |n: u64, b: f64| estimates.iter().find(|e| e.n == n && e.b == b).copied();
    let n_max = n_grid.iter().copied().max().unwrap_or(1);

    let mut cells = Vec::new();
    for &n in n_grid {
        for curve in curves {
            let applies = match curve.n {
                CurveN::Single(m) => m == n,
                CurveN::SupOverRange(lo, hi) => (lo..=hi).contains(&n),
                CurveN::Limit => n == n_max,
            };
            if !applies {
                continue;
            }
            for p in &curve.points {
                let Some(est) = find(n, p.b) else { continue };
                let (status, margin) = match curve.family {
                    BoundFamily::ExpLevel | BoundFamily::PowerLevel => {
                        let ok = p.value >= est.ci_lo;
                        (
                            if ok {
                                CheckStatus::Pass
                            } else {
                                CheckStatus::Fail
                            },
                            p.value - est.ci_lo,
                        )
                    }
                    BoundFamily::LowerQ1 => {
                        let ok = p.value <= est.ci_hi;
                        (
                            if ok {
                                CheckStatus::Pass
                            } else {
                                CheckStatus::Fail
                            },
                            est.ci_hi - p.value,
                        )
                    }
                    BoundFamily::LowerClt => (CheckStatus::Info, est.ci_hi - p.value),
                };
                let tightness = if est.point > 0.0 {
                    p.value / est.point
                } else {
                    f64::INFINITY
                };
                cells.push(CellCheck {
                    family: curve.family,
                    curve_n: curve.n,
                    bound: p.value,
                    arg: p.optimizer.arg,
                    n_star: p.optimizer.n_star,
                    aux: p.aux,
                    estimate: est,
                    status,
                    margin,
                    tightness,
                });
            }
        }
    }
    Ok(VerificationReport {
        dist: dist.label().to_string(),
        estimates,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistic_arithmetic() {
        assert_eq!(t_statistic(&[1.0, 1.0, 1.0, 1.0]), 2.0);
        assert_eq!(t_statistic(&[1.0, 1.0, -1.0, -1.0]), 0.0);
        assert!((t_statistic(&[1.0, -0.5]) - 0.565_685_424_949_238).abs() < 1e-12);
        assert_eq!(t_statistic(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn clopper_pearson_edges() {
        let (lo, hi) = clopper_pearson(0, 100, 0.95);
        assert_eq!(lo, 0.0);
        // (α/2)^{1/n} characterization for zero hits.
        assert!((hi - (1.0 - 0.025f64.powf(1.0 / 100.0))).abs() < 1e-12);
        let (lo, hi) = clopper_pearson(100, 100, 0.95);
        assert_eq!(hi, 1.0);
        assert!((lo - 0.025f64.powf(1.0 / 100.0)).abs() < 1e-12);
        // Known value: 5 of 20 at 95% is [0.0866, 0.4910].
        let (lo, hi) = clopper_pearson(5, 20, 0.95);
        assert!((lo - 0.086_571_7).abs() < 1e-6, "{lo}");
        assert!((hi - 0.491_046_2).abs() < 1e-6, "{hi}");
    }

    #[test]
    fn tiny_quantiles_are_resolved() {
        let (lo, _) = clopper_pearson(1, 1_000_000, 0.999);
        // Lower limit for one hit is 1 − (1 − α/2)^{1/n} ≈ 5e-10.
        let exact = -(1.0f64 - 0.0005).ln() / 1e6;
        assert!((lo / exact - 1.0).abs() < 1e-3, "{lo} vs {exact}");
    }

    #[test]
    fn rademacher_statistic_support() {
        let r = DistributionModel::rademacher();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let t = simulate_t(&r, 4, &mut rng).abs();
            assert!(t == 0.0 || t == 1.0 || t == 2.0, "{t}");
        }
    }

    #[test]
    fn counts_do_not_depend_on_workers() {
        let g = DistributionModel::standard_gaussian();
        let grid = [0.5, 1.0, 3.0];
        let base = MCConfig {
            n: 8,
            trials: 50_000,
            seed: 42,
            chunk_size: 4096,
            threads: Some(1),
            ..MCConfig::default()
        };
        let a = empirical_tail(&g, &base, &grid).unwrap();
        let b = empirical_tail(
            &g,
            &MCConfig {
                threads: Some(3),
                ..base
            },
            &grid,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn impossible_events_have_no_hits() {
        let r = DistributionModel::rademacher();
        let cfg = MCConfig {
            n: 4,
            trials: 20_000,
            ..MCConfig::default()
        };
        let est = empirical_tail(&r, &cfg, &[2.0, 2.5]).unwrap();
        for e in est {
            assert_eq!(e.hits, 0);
            assert_eq!(e.ci_lo, 0.0);
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let r = DistributionModel::rademacher();
        let cfg = MCConfig {
            trials: 0,
            ..MCConfig::default()
        };
        assert!(empirical_tail(&r, &cfg, &[1.0]).is_err());
    }
}
