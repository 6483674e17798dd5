use std::f64::consts::FRAC_PI_2;

use hirul_core::stats::special::{student_t_cdf, student_t_two_sided};
use hirul_core::stats::{p_value, pearson};
use proptest::prelude::*;

/// CDF by trapezoid integration after `t = sqrt(df) tan(theta)`, which maps
/// the density to `cos^(df-1)` on a finite interval.
fn trapezoid_cdf(t: f64, df: f64) -> f64 {
    let integrate = |hi: f64| {
        let n = 200_000;
        let h = (hi + FRAC_PI_2) / n as f64;
        let f = |x: f64| x.cos().max(0.0).powf(df - 1.0);
        let mut s = 0.5 * (f(-FRAC_PI_2) + f(hi));
        for k in 1..n {
            s += f(-FRAC_PI_2 + k as f64 * h);
        }
        s * h
    };
    integrate((t / df.sqrt()).atan()) / integrate(FRAC_PI_2)
}

#[test]
fn t_cdf_matches_quadrature() {
    for df in [1.0, 3.0, 7.0, 30.0, 498.0] {
        for t in [-3.1, -0.4, 1.2, 2.6] {
            let want = trapezoid_cdf(t, df);
            let got = student_t_cdf(t, df);
            assert!((got - want).abs() < 1e-6, "df {df} t {t}: {got} vs {want}");
            let two = 2.0 * (1.0 - trapezoid_cdf(t.abs(), df));
            assert!((student_t_two_sided(t, df) - two).abs() < 1e-6);
        }
    }
}

#[test]
fn t_cdf_closed_forms() {
    for t in [-5.0f64, -1.0, 0.0, 0.3, 4.0] {
        let cauchy = 0.5 + t.atan() / std::f64::consts::PI;
        assert!((student_t_cdf(t, 1.0) - cauchy).abs() < 1e-12);
        let two = 0.5 + t / (2.0 * (2.0 + t * t).sqrt());
        assert!((student_t_cdf(t, 2.0) - two).abs() < 1e-12);
    }
}

#[test]
fn p_value_edges() {
    assert!((p_value(0.0, 10).unwrap() - 1.0).abs() < 1e-12);
    assert!(p_value(1.0, 10).is_err());
    assert!(p_value(0.5, 2).is_err());
    // r = 0.6, n = 10: t = 2.1213, two-sided p from the quadrature oracle
    let t = 0.6 * (8.0f64 / 0.64).sqrt();
    let want = 2.0 * (1.0 - trapezoid_cdf(t, 8.0));
    assert!((p_value(0.6, 10).unwrap() - want).abs() < 1e-6);
}

fn sample() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 5..60)
}

proptest! {
    #[test]
    fn pearson_is_symmetric(pts in sample()) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        if let (Ok(a), Ok(b)) = (pearson(&x, &y), pearson(&y, &x)) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn pearson_is_affine_invariant(pts in sample(), a in 0.1f64..10.0, b in -50.0f64..50.0, flip in any::<bool>()) {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        let s = if flip { -a } else { a };
        let x2: Vec<f64> = x.iter().map(|v| s * v + b).collect();
        if let (Ok(r), Ok(r2)) = (pearson(&x, &y), pearson(&x2, &y)) {
            let want = if flip { -r } else { r };
            prop_assert!((r2 - want).abs() < 1e-9, "{} vs {}", r2, want);
        }
    }
}
