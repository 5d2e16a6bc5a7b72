mod common;

use std::f64::consts::{E, PI};

use ndd_core::distributions::{compare_fits, fit, make_histogram, Family, FittedModel, Histogram};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use common::chi_cdf;

fn model(family: Family, a: f64, b: f64) -> FittedModel {
    FittedModel::new(family, &[a, b]).unwrap()
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Total mass of the pdf; positive families are integrated over `ln x`.
fn total_mass(m: &FittedModel) -> f64 {
    let (a, b) = (m.params[0], m.params[1]);
    match m.family {
        Family::Normal => simpson(|x| m.pdf(x), a - 40.0 * b, a + 40.0 * b, 200_000),
        _ => {
            let upper = match m.family {
                Family::LogNormal => a + 14.0 * b,
                _ => (400.0 * b * (1.0 + a)).ln(),
            };
            simpson(|u| m.pdf(u.exp()) * u.exp(), -40.0, upper, 400_000)
        }
    }
}

fn grid(family: Family) -> ([f64; 3], [f64; 3]) {
    match family {
        Family::Normal => ([-2.0, 0.0, 5.0], [0.1, 1.0, 3.0]),
        Family::Chi => ([1.0, 2.0, 128.0], [0.1, 1.0, 2.0]),
        Family::ChiSquare => ([2.0, 4.0, 10.0], [0.5, 1.0, 3.0]),
        Family::Weibull => ([1.0, 2.0, 5.0], [0.5, 1.0, 3.0]),
        Family::LogNormal => ([-1.0, 0.0, 1.0], [0.25, 0.5, 1.0]),
    }
}

fn sse(hist: &Histogram, m: &FittedModel) -> f64 {
    hist.density
        .iter()
        .enumerate()
        .map(|(i, d)| (d - m.pdf(hist.bin_center(i))).powi(2))
        .sum()
}

fn chi_draws(k: f64, scale: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi2 = ChiSquared::new(k).unwrap();
    (0..n)
        .map(|_| scale * chi2.sample(&mut rng).sqrt())
        .collect()
}

fn normal_draws(mean: f64, sd: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| mean + sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

#[test]
fn pdf_spot_values() {
    assert!((model(Family::Normal, 0.0, 1.0).pdf(0.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-9);
    assert!((model(Family::Chi, 2.0, 1.0).pdf(1.0) - E.powf(-0.5)).abs() < 1e-9);
    assert!((model(Family::Chi, 1.0, 1.0).pdf(0.0) - (2.0 / PI).sqrt()).abs() < 1e-9);
    // Chi(3, 2) is Maxwell with a = 2
    let x: f64 = 1.7;
    let maxwell = (2.0 / PI).sqrt() * x * x * (-x * x / 8.0).exp() / 8.0;
    assert!((model(Family::Chi, 3.0, 2.0).pdf(x) - maxwell).abs() < 1e-12);
    // ChiSquare(2, 1) is Exponential(1/2)
    assert!((model(Family::ChiSquare, 2.0, 1.0).pdf(3.0) - 0.5 * (-1.5f64).exp()).abs() < 1e-12);
    let w = model(Family::Weibull, 2.0, 1.5);
    let expect = (2.0 / 1.5) * (1.0 / 1.5) * (-(1.0f64 / 1.5).powi(2)).exp();
    assert!((w.pdf(1.0) - expect).abs() < 1e-12);
    let ln = model(Family::LogNormal, 0.0, 1.0);
    assert!((ln.pdf(1.0) - 1.0 / (2.0 * PI).sqrt()).abs() < 1e-12);
}

#[test]
fn every_family_integrates_to_one() {
    for family in Family::ALL {
        let (shapes, scales) = grid(family);
        for a in shapes {
            for b in scales {
                let m = model(family, a, b);
                let mass = total_mass(&m);
                assert!((mass - 1.0).abs() < 1e-6, "{family} ({a}, {b}): {mass}");
            }
        }
    }
}

#[test]
fn cdf_spot_values() {
    assert!((model(Family::Normal, 0.0, 1.0).cdf(0.0) - 0.5).abs() < 1e-8);
    let rayleigh = model(Family::Chi, 2.0, 1.0).cdf(1.0);
    assert!((rayleigh - (1.0 - E.powf(-0.5))).abs() < 1e-9);
    for family in Family::ALL {
        let (shapes, scales) = grid(family);
        let m = model(family, shapes[1], scales[1]);
        if family != Family::Normal {
            assert_eq!(m.cdf(m.support_lo()), 0.0);
            assert_eq!(m.pdf(-1.0), 0.0);
        }
        assert!((m.cdf(1e6) - 1.0).abs() < 1e-6, "{family}");
    }
}

#[test]
fn chi_cdf_agrees_with_incomplete_gamma() {
    for (k, s) in [(1.0, 1.0), (2.0, 0.5), (7.5, 2.0), (128.0, 0.1)] {
        let m = model(Family::Chi, k, s);
        for q in [0.1, 0.5, 0.9] {
            let x = m.mean() + (q - 0.5) * 4.0 * m.std_dev();
            if x > 0.0 {
                assert!(
                    (m.cdf(x) - chi_cdf(k, s, x)).abs() < 1e-8,
                    "Chi({k},{s}) at {x}"
                );
            }
        }
    }
}

#[test]
fn histogram_of_equal_samples() {
    let h = make_histogram(&[1.0, 1.0, 1.0, 1.0], 4, None).unwrap();
    assert_eq!(h.counts, vec![0, 0, 0, 4]);
    let mass: f64 = h.density.iter().map(|d| d * h.bin_width()).sum();
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn histogram_of_half_normal_near_zero() {
    let draws: Vec<f64> = normal_draws(0.0, 1.0, 100_000, 5)
        .iter()
        .map(|x| x.abs())
        .collect();
    let h = make_histogram(&draws, 64, None).unwrap();
    let expect = (2.0 / PI).sqrt();
    assert!(
        (h.density[0] - expect).abs() / expect < 0.05,
        "{}",
        h.density[0]
    );
}

#[test]
fn histogram_rejects_empty_input() {
    assert!(make_histogram(&[], 8, None).is_err());
}

#[test]
fn chi_refit_recovers_mode() {
    let h = make_histogram(&chi_draws(128.0, 0.2, 50_000, 1), 64, None).unwrap();
    let chi = fit(&h, Family::Chi).unwrap();
    let normal = fit(&h, Family::Normal).unwrap();
    let mode = 0.2 * 127f64.sqrt();
    assert!(
        (chi.mode() - mode).abs() / mode < 0.02,
        "mode {}",
        chi.mode()
    );
    assert!(chi.sse < normal.sse);
    assert!(
        (chi.params[0] - 128.0).abs() / 128.0 < 0.10,
        "k {}",
        chi.params[0]
    );
    assert!(
        (chi.params[1] - 0.2).abs() / 0.2 < 0.10,
        "s {}",
        chi.params[1]
    );
}

#[test]
fn normal_refit_recovers_parameters() {
    let h = make_histogram(&normal_draws(5.0, 1.0, 50_000, 2), 64, None).unwrap();
    let m = fit(&h, Family::Normal).unwrap();
    assert!(
        (m.params[0] - 5.0).abs() < 0.05 && (m.params[1] - 1.0).abs() < 0.05,
        "{:?}",
        m.params
    );
}

#[test]
fn single_bin_cannot_be_fitted() {
    let h = make_histogram(&[2.0; 10], 8, Some((0.0, 4.0))).unwrap();
    assert!(fit(&h, Family::Normal).is_err());
}

#[test]
fn compare_fits_examples() {
    let chi = make_histogram(&chi_draws(64.0, 0.1, 20_000, 3), 64, None).unwrap();
    let ranked = compare_fits(&chi, &[Family::Normal, Family::Chi]).unwrap();
    assert_eq!(ranked[0].family, Family::Chi);
    assert_eq!(compare_fits(&chi, &[Family::Weibull]).unwrap().len(), 1);

    let normal = make_histogram(&normal_draws(5.0, 1.0, 20_000, 4), 64, None).unwrap();
    let ranked = compare_fits(&normal, &[Family::Chi, Family::Normal]).unwrap();
    let sse_of = |f| ranked.iter().find(|m| m.family == f).unwrap().sse;
    assert!(sse_of(Family::Normal) <= sse_of(Family::Chi));
}

#[test]
fn ranking_ignores_sample_count_scaling() {
    let base = chi_draws(20.0, 0.3, 4_000, 6);
    let tripled: Vec<f64> = base.iter().flat_map(|&x| [x, x, x]).collect();
    let a = compare_fits(&make_histogram(&base, 32, None).unwrap(), &Family::ALL).unwrap();
    let b = compare_fits(&make_histogram(&tripled, 32, None).unwrap(), &Family::ALL).unwrap();
    let order = |r: &[FittedModel]| r.iter().map(|m| m.family).collect::<Vec<_>>();
    assert_eq!(order(&a), order(&b));
    for (x, y) in a.iter().zip(&b) {
        assert!((x.sse - y.sse).abs() <= 1e-9 * x.sse.max(1e-300));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cdf_is_monotone(fi in 0usize..5, ai in 0usize..3, bi in 0usize..3, xs in prop::collection::vec(-5.0..50.0f64, 2..20)) {
        let family = Family::ALL[fi];
        let (shapes, scales) = grid(family);
        let m = model(family, shapes[ai], scales[bi]);
        let mut xs = xs;
        xs.sort_by(f64::total_cmp);
        let cdfs: Vec<f64> = xs.iter().map(|&x| m.cdf(x)).collect();
        for w in cdfs.windows(2) {
            prop_assert!(w[0] <= w[1] + 1e-12, "{:?}", cdfs);
        }
        prop_assert!(cdfs.iter().all(|c| (0.0..=1.0).contains(c)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fit_is_no_worse_than_the_generator(seed in any::<u64>(), k in 2.0..100.0f64, s in 0.05..2.0f64) {
        let h = make_histogram(&chi_draws(k, s, 5_000, seed), 32, None).unwrap();
        let fitted = fit(&h, Family::Chi).unwrap();
        let truth = model(Family::Chi, k, s);
        prop_assert!(fitted.sse <= sse(&h, &truth) * (1.0 + 1e-9) + 1e-15);
        prop_assert!((fitted.sse - sse(&h, &fitted)).abs() <= 1e-9 * fitted.sse.max(1e-12));
    }
}
