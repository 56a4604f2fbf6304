use approx::assert_relative_eq;
use sbm_range::deviations::*;
use sbm_range::Error;
use statrs::function::erf::erfc;
use statrs::function::gamma::{gamma, gamma_ur};

#[test]
fn upper_rate_examples() {
    assert_relative_eq!(rate_upper(1.0, 2.0).unwrap(), -1.0);
    assert_relative_eq!(rate_upper(0.5, 2.0).unwrap(), -1.5);
    assert!(rate_upper(1.0, 2f64.sqrt()).is_err());
    assert!(rate_upper(1.0, 1.0).is_err());
    assert!(rate_upper(1.0, 2f64.sqrt() + 1e-9).unwrap().abs() < 1e-8);
}

#[test]
fn lower_rate_examples() {
    assert_relative_eq!(rate_lower(1.0, 0.7).unwrap(), -1.0 + 0.7 / 2f64.sqrt(), epsilon = 1e-15);
    assert_relative_eq!(rate_lower(1.0, 0.7).unwrap(), -0.50503, epsilon = 1e-5);
    assert!((rate_lower(2.0, 1e-12).unwrap() + 2.0).abs() < 1e-11);
    assert!(rate_lower(1.0, 2f64.sqrt()).is_err());
    assert!(rate_lower(1.0, 0.0).is_err());
    assert!(rate_lower(1.0, 2f64.sqrt() - 1e-9).unwrap().abs() < 1e-8);
}

#[test]
fn rates_meet_at_the_critical_speed() {
    for beta in [0.3f64, 1.0, 2.5] {
        let c = (2.0 * beta).sqrt();
        let (below, above) = (rate_lower(beta, c - 1e-7).unwrap(), rate_upper(beta, c + 1e-7).unwrap());
        assert!(below.abs() < 1e-6 && above.abs() < 1e-6);
    }
}

fn synthetic(method: Route, f: impl Fn(f64) -> f64, stderr: f64) -> DeviationEstimate {
    let mut e = DeviationEstimate::new(2.0, method);
    for t in [4.0, 6.0, 8.0, 10.0, 12.0] {
        e.push(t, f(t), stderr).unwrap();
    }
    e
}

#[test]
fn exact_linear_data_is_fitted_exactly() {
    let fit = fit_rate(&synthetic(Route::Pde, |t| -t, 0.0)).unwrap();
    assert_relative_eq!(fit.fitted_rate.unwrap(), -1.0, epsilon = 1e-10);
    let (a, b) = fit.correction.unwrap();
    assert!(a.abs() < 1e-9 && b.abs() < 1e-9, "{a} {b}");
    assert!(fit.fitted_rate_stderr.unwrap() < 1e-9);
    assert_eq!(fit.naive_rates()[0], (4.0, -1.0));
}

#[test]
fn model_parameters_are_identifiable() {
    // deterministic pseudo-noise of size 1e-6
    let noise = |t: f64| 1e-6 * (17.0 * t).sin();
    let fit = fit_rate(&synthetic(Route::Pde, |t| -t + 0.5 * t.ln() + 0.3 + noise(t), 0.0)).unwrap();
    assert!((fit.fitted_rate.unwrap() + 1.0).abs() < 1e-3);
    let (a, b) = fit.correction.unwrap();
    assert!((a - 0.5).abs() < 1e-2 && (b - 0.3).abs() < 1e-2);
}

#[test]
fn fit_is_invariant_under_reordering_and_error_scaling() {
    let f = |t: f64| -0.8 * t + 0.2 * t.ln() + 0.01 * (3.0 * t).cos();
    let base = synthetic(Route::McDirect, f, 0.05);
    let mut reversed = base.clone();
    reversed.entries.reverse();
    let mut scaled = base.clone();
    for e in &mut scaled.entries {
        e.stderr_log *= 7.0;
    }
    let (a, b, c) = (fit_rate(&base).unwrap(), fit_rate(&reversed).unwrap(), fit_rate(&scaled).unwrap());
    assert_relative_eq!(a.fitted_rate.unwrap(), b.fitted_rate.unwrap(), max_relative = 1e-12);
    assert_relative_eq!(a.fitted_rate.unwrap(), c.fitted_rate.unwrap(), max_relative = 1e-12);
    assert_relative_eq!(a.fitted_rate_stderr.unwrap() * 7.0, c.fitted_rate_stderr.unwrap(), max_relative = 1e-9);
    assert_eq!(b.entries.first().unwrap().t, 4.0);
}

#[test]
fn weights_follow_the_standard_errors() {
    // an outlier with a huge error bar barely moves the weighted fit
    let mut e = synthetic(Route::McSplitting, |t| -t, 0.01);
    e.push(7.0, -2.0, 1e3).unwrap();
    let fit = fit_rate(&e).unwrap();
    assert!((fit.fitted_rate.unwrap() + 1.0).abs() < 1e-4);
}

#[test]
fn singular_designs_are_rejected() {
    let mut e = DeviationEstimate::new(2.0, Route::Pde);
    e.push(4.0, -4.0, 0.0).unwrap();
    e.push(6.0, -6.0, 0.0).unwrap();
    assert!(matches!(fit_rate(&e), Err(Error::SingularFit(_))));
    e.push(6.0, -6.0, 0.0).unwrap();
    assert!(matches!(fit_rate(&e), Err(Error::SingularFit(_))));
    assert!(e.push(1.0, 0.5, 0.0).is_err());
    let mc = synthetic(Route::McDirect, |t| -t, 0.0);
    assert!(fit_rate(&mc).is_err());
}

/// `∫_z^∞ r^{d−1} e^{−r²/2} dr / (2^{d/2−1} Γ(d/2))` by adaptive Simpson.
fn polar_tail(d: usize, z: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        simpson(f, a, m, fa, flm, fm, 0.5 * tol, depth - 1) + simpson(f, m, b, fm, frm, fb, 0.5 * tol, depth - 1)
    }
    let f = |r: f64| r.powi(d as i32 - 1) * (-0.5 * r * r).exp();
    let (a, b) = (z, z + 40.0);
    let integral = simpson(&f, a, b, f(a), f(0.5 * (a + b)), f(b), 1e-15, 50);
    integral / (2f64.powf(0.5 * d as f64 - 1.0) * gamma(0.5 * d as f64))
}

#[test]
fn gaussian_tail_closed_forms() {
    for k in 1..=16 {
        let z = 0.5 * k as f64;
        assert_relative_eq!(gaussian_tail(2, z).unwrap(), (-0.5 * z * z).exp(), max_relative = 1e-12);
        assert_relative_eq!(gaussian_tail(1, z).unwrap(), erfc(z / 2f64.sqrt()), max_relative = 1e-12);
    }
    assert_eq!(gaussian_tail(1, 0.0).unwrap(), 1.0);
    assert_relative_eq!(gaussian_tail(2, 2.0).unwrap(), 0.135335283236613, max_relative = 1e-12);
    assert!(gaussian_tail(0, 1.0).is_err());
    assert!(gaussian_tail(2, -1.0).is_err());
}

#[test]
fn gaussian_tail_matches_polar_quadrature() {
    assert_relative_eq!(gaussian_tail(3, 1.0).unwrap(), polar_tail(3, 1.0), max_relative = 1e-9);
    for d in 1..=7 {
        for z in [0.3, 1.0, 2.5, 5.0] {
            assert_relative_eq!(gaussian_tail(d, z).unwrap(), polar_tail(d, z), max_relative = 1e-8);
        }
    }
}

#[test]
fn gaussian_tail_matches_incomplete_gamma() {
    for d in 1..=8 {
        for z in [0.1, 0.9, 2.0, 4.0, 7.5] {
            let q = gamma_ur(0.5 * d as f64, 0.5 * z * z);
            assert_relative_eq!(gaussian_tail(d, z).unwrap(), q, max_relative = 1e-9);
        }
    }
}

#[test]
fn gaussian_tail_is_monotone() {
    for d in 1..=5 {
        let values: Vec<f64> = (0..80).map(|k| gaussian_tail(d, 0.1 * k as f64).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]));
        for k in 1..80 {
            let z = 0.1 * k as f64;
            assert!(gaussian_tail(d + 1, z).unwrap() > gaussian_tail(d, z).unwrap());
        }
    }
}

#[test]
fn tail_ratio_reports() {
    let grid = [1.5, 2.0, 4.0, 8.0];
    let two = gaussian_tail_bound_check(2, &grid).unwrap();
    assert!(two.ratios.iter().all(|(_, r)| (r - 1.0).abs() < 1e-12));
    assert_eq!(two.near_limit, Some(true));

    // one dimension against the complementary error function
    let one = gaussian_tail_bound_check(1, &grid).unwrap();
    let (z, ratio) = *one.ratios.last().unwrap();
    assert_relative_eq!(ratio, erfc(z / 2f64.sqrt()) * (0.5 * z * z).exp() * z, max_relative = 1e-10);
    assert_relative_eq!(one.limit, (2.0 / std::f64::consts::PI).sqrt(), max_relative = 1e-14);
    assert_eq!(one.near_limit, Some(true));
    assert!(one.finite && one.monotone_approach);

    let three = gaussian_tail_bound_check(3, &[2.0, 4.0, 8.0]).unwrap();
    assert!(three.ratios.windows(2).all(|w| w[1].1 < w[0].1));
    assert!(three.monotone_approach && three.near_limit == Some(true));
    assert_eq!(three.constant, three.ratios[0].1);

    assert_eq!(gaussian_tail_bound_check(3, &[2.0, 4.0]).unwrap().near_limit, None);
    assert!(gaussian_tail_bound_check(3, &[0.5, 4.0]).is_err());
}

#[test]
fn reflection_principle_in_one_dimension() {
    let report = max_radius_bound_check(1, 1.0, 2.0, 40_000, 200, 3).unwrap();
    let (p, se, exact) = report.one_sided.unwrap();
    assert_relative_eq!(exact, 0.0455, epsilon = 1e-4);
    assert!((p - exact).abs() < 3.0 * se, "{p} ± {se} vs {exact}");
    assert_eq!(report.reflection_holds, Some(true));
    assert!(report.bound_holds);
}

#[test]
fn max_radius_bound_holds_on_a_grid() {
    for d in 1..=3 {
        for (t, a) in [(1.0, 1.5), (1.0, 3.0), (2.0, 3.0), (0.5, 2.0)] {
            let r = max_radius_bound_check(d, t, a, 4000, 100, 7).unwrap();
            assert!(r.bound_holds, "{r:?}");
        }
    }
    let r = max_radius_bound_check(2, 1.0, 3.0, 20_000, 200, 9).unwrap();
    assert!(r.prob <= 4.0 * (-4.5f64).exp());
    assert!(max_radius_bound_check(1, 4.0, 1.0, 10, 10, 1).is_err());
}

#[test]
fn deviation_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dev.csv");
    let fit = fit_rate(&synthetic(Route::Pde, |t| -1.1 * t, 0.0)).unwrap();
    write_deviations(&path, &[(fit.clone(), -1.0)]).unwrap();
    let mut reader = csv::Reader::from_path(&path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["rho", "method", "t", "log_prob", "stderr", "fitted_rate", "theory_rate", "relative_error"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(&rows[0][1], "pde");
    assert_eq!(rows[2][3].parse::<f64>().unwrap(), fit.entries[2].log_prob);
    assert!((rows[0][7].parse::<f64>().unwrap() - 0.1).abs() < 1e-9);
}
