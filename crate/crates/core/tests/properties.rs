use proptest::prelude::*;
use rand::Rng;

use wpgsa::estimate::{fit_main_effect_monotone, Direction};
use wpgsa::gsa::{
    bootstrap_indices, in_truncation_set, input_weight, quantile, sobol_total_reference, truncation_set, Model,
    Quantiles, WeightKind,
};
use wpgsa::measures::{Family, ProbabilityMeasure};
use wpgsa::models::{flood_s, toy1_eval, toy1_grad, BuiltinKind, BuiltinModel};
use wpgsa::spectral::{intertwining_bound, poincare_constant, rayleigh_quotient, solve_eigenbasis};
use wpgsa::weights::{weight_from_g, weight_lin_closed_form, SaturatingFunction, WeightCurve};

fn finite_family() -> impl Strategy<Value = ProbabilityMeasure> {
    prop_oneof![
        (-2.0..2.0f64, 0.5..3.0f64).prop_map(|(a, l)| ProbabilityMeasure::uniform(a, a + l).unwrap()),
        (0.3..2.0f64, 0.5..3.0f64)
            .prop_map(|(sd, h)| { ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd }, Some((-h, h))).unwrap() }),
        (0.2..3.0f64, 0.5..4.0f64)
            .prop_map(|(rate, h)| { ProbabilityMeasure::new(Family::Exponential { rate }, Some((0.0, h))).unwrap() }),
        (0.5..2.0f64, 0.5..2.0f64).prop_map(|(beta, h)| {
            ProbabilityMeasure::new(Family::GeneralizedCauchy { beta }, Some((-h, h))).unwrap()
        }),
        prop::sample::select(vec![2.0, 3.0, 4.0]).prop_map(|beta| ProbabilityMeasure::new(
            Family::SymmetricBeta { beta },
            None
        )
        .unwrap()),
    ]
}

fn symmetric_truncations() -> impl Strategy<Value = ProbabilityMeasure> {
    prop_oneof![
        (-2.0..2.0f64, 0.5..3.0f64).prop_map(|(a, l)| ProbabilityMeasure::uniform(a, a + l).unwrap()),
        (0.5..2.0f64, 1.0..3.0f64).prop_map(|(sd, h)| {
            ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd }, Some((-h * sd, h * sd))).unwrap()
        }),
        (0.5..2.0f64, 0.5..3.0f64)
            .prop_map(|(rate, h)| { ProbabilityMeasure::new(Family::Exponential { rate }, Some((0.0, h))).unwrap() }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn measures_are_normalized_with_consistent_log_derivative(m in finite_family(), u in 0.05..0.95f64) {
        prop_assert!((m.quadrature(|_| 1.0).unwrap() - 1.0).abs() < 1e-10);
        let s = m.support();
        let x = s.a + u * s.length();
        prop_assert!(m.density(x).unwrap() >= 0.0);
        let h = 1e-6 * s.length();
        let fd = (m.density(x + h).unwrap().ln() - m.density(x - h).unwrap().ln()) / (2.0 * h);
        let exact = m.log_density_derivative(x).unwrap();
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{fd} vs {exact}");
    }

    #[test]
    fn inverse_cdf_inverts_the_cdf(m in finite_family(), u in 0.001..0.999f64) {
        let x = m.inverse_cdf(u).unwrap();
        prop_assert!((m.cdf(x) - u).abs() < 1e-9);
    }

    #[test]
    fn rk4_weight_matches_the_closed_form(m in symmetric_truncations()) {
        let exact = weight_lin_closed_form(&m).unwrap();
        let w = weight_from_g(&m, &SaturatingFunction::linear(&m).unwrap(), 500).unwrap();
        let (xs, ws) = w.table(0);
        let err = xs.iter().zip(&ws).map(|(&x, &v)| (v - exact.eval(x)).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-6, "max error {err:e}");
        prop_assert!(ws[1..ws.len() - 1].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn weights_from_monotone_g_are_positive(m in finite_family(), p in 0.5..3.0f64) {
        let s = m.support();
        let (a, l) = (s.a, s.length());
        let g = SaturatingFunction::from_fns(move |x| ((x - a) / l).powf(p) + (x - a) / l, move |x| {
            (p * ((x - a) / l).powf(p - 1.0) + 1.0) / l
        })
        .centered(&m)
        .unwrap();
        let w = weight_from_g(&m, &g, 500).unwrap();
        let (_, ws) = w.table(0);
        prop_assert!(ws[1..ws.len() - 1].iter().all(|&v| v > 0.0));
    }

    #[test]
    fn eigenpairs_satisfy_the_variational_characterization(m in finite_family()) {
        let w = WeightCurve::unit(&m);
        let b = solve_eigenbasis(&m, &w, 2, 300).unwrap();
        prop_assert!(b.residuals().iter().all(|&r| r <= 1e-8));
        let l1 = b.eigenvalue(1).unwrap();
        prop_assert!(b.eigenvalue(2).unwrap() > l1);
        let q = 1.0 / rayleigh_quotient(&m, &w, |x| b.eval(1, x), |x| b.eval_derivative(1, x)).unwrap();
        prop_assert!(q >= l1 * (1.0 - 1e-3) && q <= l1 * 1.01, "quotient {q} vs {l1}");
    }

    #[test]
    fn random_functions_obey_the_weighted_inequality(
        m in finite_family(),
        kind in prop::sample::select(vec![WeightKind::Unit, WeightKind::Lin, WeightKind::UniformRef]),
        c in prop::collection::vec((-1.0..1.0f64, 0.0..std::f64::consts::TAU), 1..5),
    ) {
        let w = input_weight(&m, kind, 300, None).unwrap();
        let s = m.support();
        let (a, l) = (s.a, s.length());
        let f = |x: f64| c.iter().enumerate().map(|(k, (ak, ph))| ak * ((k + 1) as f64 * 3.0 * (x - a) / l + ph).sin()).sum::<f64>();
        let df = |x: f64| c.iter().enumerate().map(|(k, (ak, ph))| {
            let fr = (k + 1) as f64 * 3.0 / l;
            ak * fr * (fr * (x - a) + ph).cos()
        }).sum::<f64>();
        if let Ok(q) = rayleigh_quotient(&m, &w.curve, f, df) {
            prop_assert!(q <= w.c_p * (1.0 + 3e-3), "quotient {q} above C_P {}", w.c_p);
        }
    }

    #[test]
    fn intertwining_bound_dominates_the_fem_constant(rate in 0.5..3.0f64, h in 0.5..3.0f64) {
        let m = ProbabilityMeasure::new(Family::Exponential { rate }, Some((0.0, h))).unwrap();
        let w = WeightCurve::unit(&m);
        let cp = poincare_constant(&m, &w, 500).unwrap();
        if let Ok(b) = intertwining_bound(&m, &w, 101) {
            prop_assert!(cp <= b.bound + 1e-6, "C_P {cp} above bound {}", b.bound);
        }
    }

    #[test]
    fn monotone_fits_are_centered_with_a_slope_floor(
        seed in 0u64..1000,
        slope in 0.0..3.0f64,
        curve in -1.0..1.0f64,
        noise in 0.0..0.5f64,
    ) {
        let m = ProbabilityMeasure::uniform(0.0, 1.0).unwrap();
        let mut rng = wpgsa::rng::stream(seed, 0);
        let x: Vec<f64> = (0..150).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = x.iter().map(|&t| slope * t + curve * t * t + noise * (rng.gen::<f64>() - 0.5)).collect();
        let fit = fit_main_effect_monotone(&x, &y, &m, Direction::Auto, 0).unwrap();
        prop_assert!(fit.slope_floor > 0.0);
        let grid = fit.support().grid(1000);
        prop_assert!(grid.iter().all(|&t| fit.direction * fit.derivative(t) >= fit.slope_floor * (1.0 - 1e-12)));
        let rms = m.quadrature(|t| fit.value(t).powi(2)).unwrap().sqrt().max(1e-300);
        prop_assert!(m.quadrature(|t| fit.value(t)).unwrap().abs() <= 1e-8 * rms.max(1.0));
    }

    #[test]
    fn toy1_gradient_matches_finite_differences(x in prop::collection::vec(0.01..0.99f64, 5)) {
        let g = toy1_grad(&x);
        for i in 0..5 {
            let h = 1e-5;
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (toy1_eval(&up) - toy1_eval(&dn)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * g[i].abs().max(1.0), "input {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn flood_overflow_is_monotone_in_discharge_and_roughness(seed in 0u64..10_000) {
        let model = BuiltinModel::new(BuiltinKind::FloodS);
        let mut rng = wpgsa::rng::stream(seed, 1);
        let x: Vec<f64> = model.inputs().iter().map(|m| m.sample_one(&mut rng)).collect();
        let (q, ks) = (&model.inputs()[0], &model.inputs()[1]);
        let (q2, ks2) = (q.sample_one(&mut rng), ks.sample_one(&mut rng));
        let base = flood_s(&x).unwrap();
        let mut xq = x.clone();
        xq[0] = q2;
        let mut xk = x.clone();
        xk[1] = ks2;
        let (sq, sk) = (flood_s(&xq).unwrap(), flood_s(&xk).unwrap());
        prop_assert!((q2 - x[0]) * (sq - base) > 0.0 || q2 == x[0]);
        prop_assert!((ks2 - x[1]) * (sk - base) < 0.0 || ks2 == x[1]);
    }

    #[test]
    fn quantiles_are_ordered(v in prop::collection::vec(-1e3..1e3f64, 1..200)) {
        let q = Quantiles::from_values(v.clone()).unwrap();
        prop_assert!(q.q025 <= q.q25 && q.q25 <= q.q50 && q.q50 <= q.q75 && q.q75 <= q.q975);
        let mut s = v;
        s.sort_by(f64::total_cmp);
        prop_assert_eq!(quantile(&s, 0.0), s[0]);
        prop_assert_eq!(quantile(&s, 1.0), s[s.len() - 1]);
    }

    #[test]
    fn bootstrap_resamples_are_reproducible(seed in any::<u64>(), r in 0usize..100, n in 1usize..500) {
        let a = bootstrap_indices(seed, r, n);
        prop_assert_eq!(&a, &bootstrap_indices(seed, r, n));
        prop_assert_eq!(a.len(), n);
        prop_assert!(a.iter().all(|&k| k < n));
    }

    #[test]
    fn truncation_sets_have_two_d_elements(d in 1usize..8, pick in 0usize..8) {
        let i = pick % d;
        let set = truncation_set(i, d);
        prop_assert_eq!(set.len(), 2 * d);
        prop_assert!(set.iter().all(|a| in_truncation_set(a, i)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, ..ProptestConfig::default() })]

    #[test]
    fn jansen_estimates_are_deterministic(seed in any::<u64>()) {
        let model = BuiltinModel::new(BuiltinKind::Toy2);
        let a = sobol_total_reference(&model, 500, seed).unwrap().values();
        let b = sobol_total_reference(&model, 500, seed).unwrap().values();
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn samples_follow_the_quadrature_cdf() {
    let families = [
        ProbabilityMeasure::uniform(-1.0, 2.0).unwrap(),
        ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, Some((-3.0, 3.0))).unwrap(),
        ProbabilityMeasure::new(Family::Exponential { rate: 1.0 }, Some((0.0, 2.0))).unwrap(),
        ProbabilityMeasure::new(Family::Gumbel { loc: 1013.0, scale: 558.0 }, Some((500.0, 3000.0))).unwrap(),
        ProbabilityMeasure::new(Family::Triangular { lower: 49.0, mode: 50.0, upper: 51.0 }, None).unwrap(),
        ProbabilityMeasure::new(Family::GeneralizedCauchy { beta: 1.0 }, Some((-1.0, 1.0))).unwrap(),
        ProbabilityMeasure::new(Family::SymmetricBeta { beta: 2.0 }, None).unwrap(),
    ];
    for (k, m) in families.iter().enumerate() {
        let mut rng = wpgsa::rng::stream(11, k as u64);
        let mut x = m.sample(100_000, &mut rng);
        x.sort_by(f64::total_cmp);
        let n = x.len() as f64;
        let ks = x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = m.cdf(v);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "{:?}: KS {ks}", m.family());
    }
}

#[test]
fn optimal_weight_solves_its_defining_equation() {
    let m = ProbabilityMeasure::new(Family::Normal { mean: 0.0, sd: 1.0 }, Some((-1.0, 2.0))).unwrap();
    let g = SaturatingFunction::from_fns(|x| x + 0.2 * x * x, |x| 1.0 + 0.4 * x).centered(&m).unwrap();
    let residual = |nodes: usize| {
        let w = weight_from_g(&m, &g, nodes).unwrap();
        let s = m.support();
        let h = s.length() / nodes as f64;
        let flux = |x: f64| w.eval(x) * g.derivative(x) * m.density(x).unwrap();
        (5..nodes - 5)
            .map(|k| {
                let x = s.a + k as f64 * h;
                ((flux(x + h) - flux(x - h)) / (2.0 * h) + g.value(x) * m.density(x).unwrap()).abs()
            })
            .fold(0.0, f64::max)
    };
    let (coarse, fine) = (residual(250), residual(500));
    assert!(fine < 1e-4, "residual {fine:e}");
    assert!(fine <= coarse / 3.0, "residual {coarse:e} -> {fine:e}");
}
