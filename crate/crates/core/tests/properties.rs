use std::f64::consts::E;

use proptest::prelude::*;
use selfnorm::bounds::{exp_tail_bound, BoundConfig};
use selfnorm::cli::{format_float, read_csv, write_csv, Row};
use selfnorm::convex::fenchel;
use selfnorm::dist::DistributionModel;
use selfnorm::gls::{
    bphi_norm, bphi_tail_bound, gls_tail_bound, psi_from_phi, GridConfig, PhiFunction, PsiFunction,
};

fn builtin() -> Vec<DistributionModel> {
    vec![
        DistributionModel::rademacher(),
        DistributionModel::standard_gaussian(),
        DistributionModel::uniform_symmetric(3f64.sqrt()).unwrap(),
        DistributionModel::discrete(vec![(-1.0, 2.0 / 3.0), (2.0, 1.0 / 3.0)]).unwrap(),
    ]
}

fn ln_cosh(x: f64) -> f64 {
    x.abs() + (-2.0 * x.abs()).exp().ln_1p() - std::f64::consts::LN_2
}

/// A convex, nondecreasing function on x ≥ 0 with f(0) = 0.
fn convex_mix(a: f64, b: f64, c: f64, m: f64) -> impl Fn(f64) -> f64 {
    move |x: f64| a * x * x / 2.0 + b * x.abs().powf(m) / m + c * ln_cosh(x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_mgf2_is_jointly_convex(
        k in 0usize..4,
        l1 in -2.5f64..2.5, l2 in -0.4f64..1.5,
        m1 in -2.5f64..2.5, m2 in -0.4f64..1.5,
    ) {
        let d = &builtin()[k];
        let a = d.log_mgf2(l1, l2);
        let b = d.log_mgf2(m1, m2);
        let mid = d.log_mgf2((l1 + m1) / 2.0, (l2 + m2) / 2.0);
        prop_assert!(mid <= 0.5 * a + 0.5 * b + 1e-9 * (1.0 + a.abs().max(b.abs())), "{mid} {a} {b}");
    }

    #[test]
    fn log_mgf2_is_quadratic_near_zero(k in 0usize..3, l1 in -1e-2f64..1e-2) {
        let d = &builtin()[k];
        let gap = (d.log_mgf2(l1, 0.0) - d.sigma2() * l1 * l1 / 2.0).abs();
        prop_assert!(gap <= 1e-3 * l1 * l1 + 1e-15);
    }

    #[test]
    fn delta_2_identity(n in 1u64..500, b in 0.0f64..20.0) {
        let d = &builtin()[3];
        let s2 = d.sigma2();
        let w = d.expect(|x| (s2 - x * x).powi(2), 1e-12).unwrap();
        let zp = d.expect(|x| x * (s2 - x * x), 1e-12).unwrap();
        let nf = n as f64;
        let exact = s2 + 2.0 * b * zp / nf.sqrt() + b * b * w / nf;
        let got = d.delta_p(n, b, 2.0).unwrap().powi(2);
        let scale = s2 + (2.0 * b * zp / nf.sqrt()).abs() + b * b * w / nf;
        prop_assert!((got - exact).abs() <= 1e-13 * scale, "{got} vs {exact}");
    }

    #[test]
    fn discrete_expectation_is_the_finite_sum(
        v in prop::collection::vec(-5.0f64..5.0, 2..6),
        w in prop::collection::vec(0.05f64..1.0, 6),
        power in 1i32..5,
    ) {
        let total: f64 = w[..v.len()].iter().sum();
        let probs: Vec<f64> = w[..v.len()].iter().map(|x| x / total).collect();
        let mean: f64 = v.iter().zip(&probs).map(|(a, p)| a * p).sum();
        let atoms: Vec<(f64, f64)> = v.iter().map(|a| a - mean).zip(probs.iter().copied()).collect();
        prop_assume!(atoms.iter().any(|(a, _)| a.abs() > 1e-6));
        let d = DistributionModel::discrete(atoms.clone()).unwrap();
        let exact: f64 = atoms.iter().map(|(a, p)| p * a.powi(power)).sum();
        let got = d.expect(|x| x.powi(power), 1e-12).unwrap();
        prop_assert!((got - exact).abs() <= 1e-13 * (1.0 + exact.abs()));
    }

    #[test]
    fn fenchel_inequality(
        a in 0.0f64..2.0, b in 0.0f64..2.0, c in 0.0f64..2.0, m in 1.2f64..4.0,
        u in 0.0f64..5.0, x in 0.0f64..10.0,
    ) {
        prop_assume!(a + b + c > 0.05);
        let f = convex_mix(a, b, c, m);
        let conj = fenchel(&f, u);
        prop_assert!(conj >= x * u - f(x) - 1e-8, "{conj} < {}", x * u - f(x));
    }

    #[test]
    fn exp_bound_is_a_probability(k in 0usize..4, n in 1u64..300, b in 1e-3f64..60.0) {
        let v = exp_tail_bound(&builtin()[k], n, b, &BoundConfig::default()).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn tail_bounds_are_clamped_and_monotone(
        m in 1.1f64..6.0, norm in 1e-3f64..100.0, y1 in 0.0f64..1e3, y2 in 0.0f64..1e3,
    ) {
        let grid = GridConfig::default();
        let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
        let psi = PsiFunction::power(m).unwrap();
        let (a, b) = (gls_tail_bound(&psi, norm, lo, &grid).value, gls_tail_bound(&psi, norm, hi, &grid).value);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b <= a * (1.0 + 1e-9) + 1e-300);
        let phi = PhiFunction::power(m.max(1.2)).unwrap();
        let (a, b) = (bphi_tail_bound(&phi, norm, lo).value, bphi_tail_bound(&phi, norm, hi).value);
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        prop_assert!(b <= a * (1.0 + 1e-9) + 1e-300);
    }

    #[test]
    fn format_round_trip(x in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO) {
        let back: f64 = format_float(x).parse().unwrap();
        if x == 0.0 {
            prop_assert_eq!(back, 0.0);
        } else {
            prop_assert!((back / x - 1.0).abs() <= 5e-15, "{x} -> {back}");
            prop_assert_eq!(format_float(back), format_float(x));
        }
    }

    #[test]
    fn csv_round_trip(values in prop::collection::vec(prop::option::of(-1e6f64..1e6), 1..20)) {
        let rows: Vec<Row> = values
            .iter()
            .enumerate()
            .map(|(i, v)| Row {
                dist: "discrete:-1:0.5,1:0.5".into(),
                n: (i + 1).to_string(),
                b: Some(0.25 * i as f64 + E),
                family: "exp".into(),
                value: *v,
                optimizer: "theta".into(),
                arg: v.map(|x| x.abs().sqrt()),
                n_star: Some(i as u64),
                mc_point: Some(f64::INFINITY),
                ..Row::default()
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            prop_assert_eq!(a.fields(), b.fields());
            for (x, y) in [(a.value, b.value), (a.b, b.b), (a.arg, b.arg)] {
                match (x, y) {
                    (Some(x), Some(y)) => prop_assert!(x == y || (y / x - 1.0).abs() <= 5e-15),
                    (None, None) => {}
                    _ => prop_assert!(false, "presence changed"),
                }
            }
        }
    }
}

#[test]
fn fenchel_is_convex_and_nondecreasing() {
    let fs: Vec<Box<dyn Fn(f64) -> f64>> = vec![
        Box::new(|x| x * x / 2.0),
        Box::new(ln_cosh),
        Box::new(convex_mix(0.3, 1.0, 0.5, 3.0)),
        Box::new(|x: f64| x.abs().powf(1.5) / 1.5),
    ];
    for f in &fs {
        let us: Vec<f64> = (0..60).map(|i| i as f64 * 0.015).collect();
        let v: Vec<f64> = us.iter().map(|&u| fenchel(f, u)).collect();
        for w in v.windows(3) {
            assert!(w[1] >= w[0] - 1e-10);
            assert!(w[1] <= 0.5 * (w[0] + w[2]) + 1e-9);
        }
    }
}

#[test]
fn lp_norm_is_nondecreasing() {
    for d in builtin() {
        let norms: Vec<f64> = [1.0, 1.5, 2.0, 3.0, 4.0, 8.0, 16.0]
            .iter()
            .map(|&p| d.lp_norm(p).unwrap())
            .collect();
        for w in norms.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-12), "{}: {norms:?}", d.label());
        }
    }
}

#[test]
fn unit_threshold_reading() {
    // With σ = 1 the conjugate point Bσ² and B coincide.
    let cfg = BoundConfig::default();
    for d in builtin().into_iter().take(3) {
        assert!((d.sigma2() - 1.0).abs() < 1e-12);
        for b in [0.5, 2.0, 10.0] {
            let v = exp_tail_bound(&d, 4, b, &cfg).unwrap();
            let direct = selfnorm::convex::maximize_concave(
                |t| t * b - selfnorm::bounds::beta(&d, 4, b, t),
                0.0,
                1e-9,
            );
            let (got, want) = (v.optimizer.objective, direct.value.max(0.0));
            assert!(
                got == want || (got - want).abs() < 1e-9,
                "{} B = {b}: {} vs {}",
                d.label(),
                v.optimizer.objective,
                direct.value
            );
        }
    }
}

#[test]
fn gls_and_bphi_exponents_stay_within_a_constant_factor() {
    // φ = λ²/2 against its induced ψ and against ψ = √p, same norm.
    let grid = GridConfig::default();
    let phi = PhiFunction::power(2.0).unwrap();
    let induced = psi_from_phi(&phi).unwrap();
    let root = PsiFunction::power(2.0).unwrap();
    for i in 1..=200 {
        let y = E + (100.0 - E) * i as f64 / 200.0;
        let b = bphi_tail_bound(&phi, 1.0, y).exponent;
        for psi in [&induced, &root] {
            let g = gls_tail_bound(psi, 1.0, y, &grid).exponent;
            let ratio = b / g;
            assert!((1.0 / 3.0..=3.0).contains(&ratio), "y = {y}: {ratio}");
        }
    }
}

#[test]
fn bphi_bounds_dominate_true_tails() {
    let grid = GridConfig::default();
    let phi = PhiFunction::power(2.0).unwrap();
    let a = 3f64.sqrt();
    let laws: [(DistributionModel, Box<dyn Fn(f64) -> f64>); 3] = [
        (
            DistributionModel::rademacher(),
            Box::new(|u| if u < 1.0 { 0.5 } else { 0.0 }),
        ),
        (
            DistributionModel::standard_gaussian(),
            Box::new(|u| 0.5 * libm::erfc(u / std::f64::consts::SQRT_2)),
        ),
        (
            DistributionModel::uniform_symmetric(a).unwrap(),
            Box::new(move |u: f64| ((a - u) / (2.0 * a)).clamp(0.0, 0.5)),
        ),
    ];
    for (d, tail) in &laws {
        let norm = bphi_norm(|l| d.log_mgf2(l, 0.0), &phi, &grid).unwrap().norm;
        assert!(norm <= 1.0 + 1e-9, "{}: {norm}", d.label());
        for i in 0..=80 {
            let u = i as f64 * 0.1;
            assert!(
                bphi_tail_bound(&phi, norm, u).value >= tail(u),
                "{} u = {u}",
                d.label()
            );
        }
        let natural = PhiFunction::natural(d);
        let n = bphi_norm(|l| d.log_mgf2(l, 0.0), &natural, &grid)
            .unwrap()
            .norm;
        for i in 0..=80 {
            let u = i as f64 * 0.1;
            assert!(
                bphi_tail_bound(&natural, n, u).value >= tail(u) - 1e-12,
                "{} natural u = {u}",
                d.label()
            );
        }
    }
}
