use rayon::prelude::*;

use crate::deviations::{
    fit_rate, gaussian_tail, gaussian_tail_bound_check, max_radius_bound_check, rate_lower, rate_upper,
    write_deviations, DeviationEstimate, Route,
};
use crate::feynman_kac::{
    apriori_bound_check, fk_estimate, mild_form_residual, write_checks, CheckRow, FieldInterpolant,
};
use crate::particles::{estimate_range_prob_direct, estimate_range_prob_splitting, EstimateKind};
use crate::particles::estimate::write_estimates;
use crate::pde::{
    lower_deviation_sweep, range_log_prob, solve_radial_snapshots, write_solve_rows, BlowUpStrategy,
    Boundary, PdeProblem, Profile, RangeSolverOptions, SolveRow,
};
use crate::{Error, Result};

use super::{Run, Study, SummaryRow};

pub const LATTICE_POINTS: usize = 5;

/// Study CSVs, in the order they are written.
pub fn artifacts(study: Study) -> &'static [&'static str] {
    match study {
        Study::RateUpper => &["solves.csv", "deviations.csv"],
        Study::RateLower => &["solves.csv", "deviations_conditional.csv", "deviations_unconditional.csv"],
        Study::McVsPde => &["solves.csv", "estimates.csv"],
        Study::FkCertify | Study::BoundsSuite => &["checks.csv"],
    }
}

pub fn execute(run: &mut Run) -> Result<Vec<SummaryRow>> {
    match run.config.study {
        Study::RateUpper => upper(run),
        Study::RateLower => lower(run),
        Study::McVsPde => mc_vs_pde(run),
        Study::FkCertify => fk_certify(run),
        Study::BoundsSuite => bounds_suite(run),
    }
}

/// `ln(1 − e^{−v})`, the log of an upper deviation probability.
fn upper_log_prob(v_origin: f64, t: f64) -> Result<f64> {
    let log_prob = (-(-v_origin).exp_m1()).ln();
    if log_prob.is_finite() {
        Ok(log_prob)
    } else {
        Err(Error::Config(format!(
            "upper deviation probability underflows at t = {t}; shorten t_grid"
        )))
    }
}

fn rate_rows(fit: &DeviationEstimate, theory: f64, label: &str, tolerance: Option<f64>) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = fit
        .naive_rates()
        .into_iter()
        .map(|(t, rate)| SummaryRow {
            quantity: "naive_rate".into(),
            configuration: format!("{label} t={t}"),
            measured: rate,
            stderr: 0.0,
            theory,
            verdict: None,
        })
        .collect();
    let measured = fit.fitted_rate.expect("fitted estimate carries a rate");
    rows.push(SummaryRow {
        quantity: "fitted_rate".into(),
        configuration: label.into(),
        measured,
        stderr: fit.fitted_rate_stderr.unwrap_or(0.0),
        theory,
        verdict: tolerance.map(|tol| (measured - theory).abs() <= tol * theory.abs()),
    });
    rows
}

fn upper(run: &mut Run) -> Result<Vec<SummaryRow>> {
    let c = run.config;
    let theory = rate_upper(c.mech.beta, c.rho)?;
    let opts = c.solver_options();
    let sweeps = run.stage("blowup_solves", |run| {
        let sweeps = c
            .t_grid
            .par_iter()
            .map(|&t| range_log_prob(c.mech, c.d, t, c.rho * t, &opts))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<SolveRow> = sweeps.iter().flat_map(|s| s.rows.iter().cloned()).collect();
        write_solve_rows(&run.path("solves.csv"), &rows)?;
        Ok(sweeps)
    })?;
    let fit = run.stage("rate_fit", |run| {
        let mut estimate = DeviationEstimate::new(c.rho, Route::Pde);
        for (&t, sweep) in c.t_grid.iter().zip(&sweeps) {
            estimate.push(t, upper_log_prob(sweep.v_origin, t)?, 0.0)?;
        }
        let fit = fit_rate(&estimate)?;
        write_deviations(&run.path("deviations.csv"), &[(fit.clone(), theory)])?;
        Ok(fit)
    })?;
    Ok(rate_rows(&fit, theory, "pde", Some(c.tolerance)))
}

fn lower(run: &mut Run) -> Result<Vec<SummaryRow>> {
    let c = run.config;
    let theory = rate_lower(c.mech.beta, c.rho)?;
    let opts = c.solver_options();
    let solves = run.stage("blowup_solves", |run| {
        let solves = c
            .t_grid
            .par_iter()
            .map(|&t| lower_deviation_sweep(c.mech, c.d, t, c.rho, &opts))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<SolveRow> = solves.iter().flat_map(|(_, rows)| rows.iter().cloned()).collect();
        write_solve_rows(&run.path("solves.csv"), &rows)?;
        Ok(solves)
    })?;
    run.stage("rate_fit", |run| {
        let mut conditional = DeviationEstimate::new(c.rho, Route::Pde);
        let mut unconditional = DeviationEstimate::new(c.rho, Route::Pde);
        for (&t, (probs, _)) in c.t_grid.iter().zip(&solves) {
            if probs.conditional <= 0.0 {
                return Err(Error::Config(format!(
                    "conditional lower deviation probability underflows at t = {t}; shorten t_grid"
                )));
            }
            conditional.push(t, probs.conditional.ln(), 0.0)?;
            unconditional.push(t, probs.unconditional.ln(), 0.0)?;
        }
        let conditional = fit_rate(&conditional)?;
        let unconditional = fit_rate(&unconditional)?;
        write_deviations(&run.path("deviations_conditional.csv"), &[(conditional.clone(), theory)])?;
        // extinction keeps the unconditional probability above e^{-lambda*}
        write_deviations(&run.path("deviations_unconditional.csv"), &[(unconditional.clone(), 0.0)])?;
        let mut rows = rate_rows(&conditional, theory, "pde conditional", Some(c.tolerance));
        rows.extend(rate_rows(&unconditional, 0.0, "pde unconditional", None));
        Ok(rows)
    })
}

fn mc_vs_pde(run: &mut Run) -> Result<Vec<SummaryRow>> {
    let c = run.config;
    let opts = c.solver_options();
    let pde = run.stage("blowup_solves", |run| {
        let sweeps = c
            .t_grid
            .par_iter()
            .map(|&t| range_log_prob(c.mech, c.d, t, c.rho * t, &opts))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<SolveRow> = sweeps.iter().flat_map(|s| s.rows.iter().cloned()).collect();
        write_solve_rows(&run.path("solves.csv"), &rows)?;
        Ok(sweeps.iter().map(|s| -(-s.v_origin).exp_m1()).collect::<Vec<f64>>())
    })?;
    let estimates = run.stage("particles", |run| {
        let system = c.particle_system()?;
        let mut estimates = Vec::with_capacity(c.t_grid.len());
        for &t in &c.t_grid {
            let seed = run.task_seed(&format!("particles t={t}"));
            run.log(&format!("simulating t = {t}"));
            estimates.push(if c.levels.is_empty() {
                estimate_range_prob_direct(&system, t, c.rho, c.replicates, seed)?
            } else {
                estimate_range_prob_splitting(&system, t, c.rho, &c.levels, c.replicates, seed)?
            });
        }
        write_estimates(&run.path("estimates.csv"), &estimates)?;
        Ok(estimates)
    })?;
    let rows = estimates
        .iter()
        .zip(&pde)
        .map(|(e, &reference)| {
            let point = e.kind == EstimateKind::Point;
            let configuration = format!("t={} {}", e.t, e.method.tag());
            if c.levels.is_empty() {
                SummaryRow {
                    quantity: "prob".into(),
                    configuration,
                    measured: e.prob,
                    stderr: e.stderr,
                    theory: reference,
                    verdict: Some(point && (e.prob - reference).abs() <= 3.0 * e.stderr),
                }
            } else {
                // the fixed-effort error formula ignores clone correlation, so
                // splitting is judged on the log scale
                let measured = e.log_prob();
                SummaryRow {
                    quantity: "log_prob".into(),
                    configuration,
                    measured,
                    stderr: e.log_stderr(),
                    theory: reference.ln(),
                    verdict: Some(point && (measured - reference.ln()).abs() <= 0.5),
                }
            }
        })
        .collect();
    Ok(rows)
}

fn point(d: usize, r: f64) -> Vec<f64> {
    let mut x = vec![0.0; d];
    x[0] = r;
    x
}

struct Certified<'a> {
    name: &'static str,
    problem: &'a PdeProblem,
    field: &'a FieldInterpolant,
    allowance: f64,
    lattice: [(f64, f64); LATTICE_POINTS],
}

fn certify(run: &mut Run, target: &Certified, rows: &mut Vec<CheckRow>) -> Result<()> {
    let c = run.config;
    let (problem, field) = (target.problem, target.field);
    for kind in ["fk_estimate", "mild_residual"] {
        for (i, &(t, r)) in target.lattice.iter().enumerate() {
            let seed = run.task_seed(&format!("{kind} {} point {i}", target.name));
            let x = point(problem.d, r);
            let args = (&problem.mech, &problem.g, &problem.phi);
            let (estimate, reference) = if kind == "fk_estimate" {
                let e = fk_estimate(field, args.0, args.1, args.2, t, &x, c.paths, c.path_steps, seed)?;
                (e, field.value(t, r))
            } else {
                let e = mild_form_residual(field, args.0, args.1, args.2, t, &x, c.paths, c.path_steps, seed)?;
                (e, 0.0)
            };
            run.log(&format!(
                "{kind} {} t={t} r={r}: {} ± {} (clipped {})",
                target.name, estimate.mean, estimate.stderr, estimate.clipped_fraction
            ));
            rows.push(CheckRow {
                check: kind.into(),
                configuration: format!("{} t={t} r={r}", target.name),
                value: estimate.mean,
                reference,
                stderr: estimate.stderr,
                passed: estimate.agrees_with(reference, 3.0, target.allowance),
            });
        }
    }
    let report = apriori_bound_check(field, &problem.g, &problem.phi, &problem.mech, problem.boundary);
    rows.push(CheckRow {
        check: "apriori_bound".into(),
        configuration: format!("{} margin", target.name),
        value: report.margin,
        reference: 0.0,
        stderr: 0.0,
        passed: report.holds,
    });
    Ok(())
}

fn snapshots_every(problem: &PdeProblem, count: usize) -> usize {
    problem.steps().div_ceil(count).max(1)
}

fn fk_certify(run: &mut Run) -> Result<Vec<SummaryRow>> {
    let c = run.config;
    let smoke = PdeProblem {
        mech: c.mech,
        d: c.d,
        r_max: 6.0,
        h: c.h,
        dt: c.dt,
        t_end: c.t_end,
        g: Profile::Gaussian {
            amplitude: 1.0,
            width: 0.5,
        },
        phi: Profile::Gaussian {
            amplitude: 0.5,
            width: 0.7,
        },
        boundary: Boundary::Dirichlet(0.0),
    };
    let (t, radius) = (c.t_grid[0], c.rho * c.t_grid[0]);
    let opts = RangeSolverOptions {
        strategy: BlowUpStrategy::Forcing {
            power: c.forcing_power,
            margin: c.forcing_margin,
        },
        ..c.solver_options()
    };
    let range = opts.surrogate_problem(c.mech, c.d, t, radius, &Profile::Zero, c.surrogate)?;

    let (smoke_field, range_field) = run.stage("solves", |_| {
        let smoke_field = FieldInterpolant::new(solve_radial_snapshots(&smoke, snapshots_every(&smoke, 100))?)?;
        let range_field = FieldInterpolant::new(solve_radial_snapshots(&range, snapshots_every(&range, 400))?)?;
        Ok((smoke_field, range_field))
    })?;
    let s = c.t_end;
    let targets = [
        Certified {
            name: "smoke",
            problem: &smoke,
            field: &smoke_field,
            allowance: smoke_field.interpolation_error_bound(),
            lattice: [(0.25 * s, 0.0), (0.5 * s, 0.5), (s, 0.0), (s, 1.0), (s, 2.0)],
        },
        Certified {
            name: "range",
            problem: &range,
            field: &range_field,
            // paths leaving the ball are killed within a few steps
            allowance: range_field.interpolation_error_bound_within(radius),
            lattice: [
                (0.25 * t, 0.0),
                (0.5 * t, 0.0),
                (0.5 * t, 0.5 * radius),
                (t, 0.0),
                (t, 2.0 * radius / 3.0),
            ],
        },
    ];
    let rows = run.stage("certification", |run| {
        let mut rows = Vec::new();
        for target in &targets {
            certify(run, target, &mut rows)?;
        }
        write_checks(&run.path("checks.csv"), &rows)?;
        Ok(rows)
    })?;
    Ok(check_summary(&rows))
}

fn check_summary(rows: &[CheckRow]) -> Vec<SummaryRow> {
    rows.iter()
        .map(|r| SummaryRow {
            quantity: r.check.clone(),
            configuration: r.configuration.clone(),
            measured: r.value,
            stderr: r.stderr,
            theory: r.reference,
            verdict: Some(r.passed),
        })
        .collect()
}

fn bounds_suite(run: &mut Run) -> Result<Vec<SummaryRow>> {
    let c = run.config;
    let mut rows = run.stage("tails", |_| {
        let mut rows = Vec::new();
        for &z in &c.z_grid {
            let value = gaussian_tail(2, z)?;
            let reference = (-0.5 * z * z).exp();
            rows.push(CheckRow {
                check: "planar_tail_identity".into(),
                configuration: format!("z={z}"),
                value,
                reference,
                stderr: 0.0,
                passed: (value - reference).abs() <= 1e-12 * reference,
            });
        }
        for &d in &c.dims {
            let report = gaussian_tail_bound_check(d, &c.z_grid)?;
            for &(z, ratio) in &report.ratios {
                rows.push(CheckRow {
                    check: "tail_ratio".into(),
                    configuration: format!("d={d} z={z}"),
                    value: ratio,
                    reference: report.limit,
                    stderr: 0.0,
                    passed: report.finite && report.monotone_approach,
                });
            }
            if let (Some(near), Some(&(z, ratio))) = (report.near_limit, report.ratios.last()) {
                rows.push(CheckRow {
                    check: "tail_ratio_limit".into(),
                    configuration: format!("d={d} z={z}"),
                    value: ratio,
                    reference: report.limit,
                    stderr: 0.0,
                    passed: near,
                });
            }
        }
        Ok(rows)
    })?;
    run.stage("max_radius", |run| {
        for &d in &c.dims {
            for &t in &c.t_grid {
                let seed = run.task_seed(&format!("max_radius d={d} t={t}"));
                let a = c.rho * t;
                let report = max_radius_bound_check(d, t, a, c.paths, c.path_steps, seed)?;
                rows.push(CheckRow {
                    check: "max_radius_bound".into(),
                    configuration: format!("d={d} t={t} a={a}"),
                    value: report.prob,
                    reference: report.bound,
                    stderr: report.stderr,
                    passed: report.bound_holds,
                });
                if let (Some((p, se, exact)), Some(holds)) = (report.one_sided, report.reflection_holds) {
                    rows.push(CheckRow {
                        check: "reflection".into(),
                        configuration: format!("d={d} t={t} a={a}"),
                        value: p,
                        reference: exact,
                        stderr: se,
                        passed: holds,
                    });
                }
            }
        }
        write_checks(&run.path("checks.csv"), &rows)?;
        Ok(())
    })?;
    Ok(check_summary(&rows))
}
