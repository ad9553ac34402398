//! Subcommand implementations.
//!
//! Each command resolves the config, creates the run directory (manifest
//! first), computes its tables, and returns an error when a verified
//! inequality fails. Estimate gates run after the CSVs are written, so a
//! violated bound still leaves a complete artifact trail behind.

use crate::config::{BuiltProblem, ProfileConfig, RunConfig};
use crate::output::{csv_fields, RunDir};
use mildsim_core::analysis::{
    dependence_epsilon, dependence_experiment, estimate_holder_exponent, gronwall_bound,
    gronwall_fixed_point, gronwall_numeric_verify, mean_calibration_twin, mean_equation_residual,
    mean_residual_budget, maximal_regularity_check, DependenceConfig, DependenceDirection,
    GronwallParams, HolderExponentEstimate, VerificationRow,
};
use mildsim_core::convolution::{
    convolution_bound_slack, ito_isometry_check, stochastic_convolution_sample,
    ConvolutionQuadrature,
};
use mildsim_core::grid::TimeGrid;
use mildsim_core::holder::make_weighted_example;
use mildsim_core::problems::OuMixture;
use mildsim_core::solver::{
    per_time_summary, solve_mild, F2Spec, KappaPolicy, MildSolution, NoiseSpec, ProblemInstance,
};
use mildsim_core::spectral::{check_semigroup_bounds, HVector};
use mildsim_core::{Error, Result};
use std::path::Path;

/// Orders checked by `verify-estimates` against the semigroup envelope.
const SEMIGROUP_THETAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Points in the refined semigroup time grid, log-spaced per decade span.
const SEMIGROUP_GRID_POINTS: usize = 48;

/// Relative start of the semigroup grid below the horizon.
const SEMIGROUP_GRID_START: f64 = 1e-4;

/// Equality tolerance for the Gronwall fixed-point verification.
const GRONWALL_VERIFY_TOL: f64 = 1e-8;

/// Grid resolution for the maximal-regularity forcing example.
const MAX_REG_GRID_STEPS: usize = 512;

pub fn simulate(config: &RunConfig) -> Result<()> {
    let run = RunDir::create(config, "simulate")?;
    let (ensemble, operator, extra) = match config.build()? {
        BuiltProblem::Instance(instance) => {
            let solution = solve_mild(&instance, &config.solver_config())?;
            let row = solver_report_row(&solution);
            (solution.ensemble, instance.operator().clone(), Some(row))
        }
        BuiltProblem::Mixture { mixture, horizon } => {
            let grid = TimeGrid::uniform(horizon, config.solver.grid_steps)?;
            let ensemble =
                mixture.sample(&grid, config.solver.realizations, config.solver.seed);
            (ensemble, mixture.operator().clone(), None)
        }
    };

    let exps = config.exponent_set();
    let summary = per_time_summary(&ensemble, &operator, &exps);
    run.write_csv(
        "solution_summary.csv",
        "time,mean_norm,beta_moment,weighted_eta_moment",
        summary.iter().map(|r| {
            csv_fields(&[r.time, r.mean_norm, r.beta_moment, r.weighted_eta_moment])
        }),
    )?;

    let mean = ensemble.mean_trajectory();
    run.write_csv(
        "mean_trajectory.csv",
        "time,mode,coefficient",
        mean.times().iter().enumerate().flat_map(|(j, &t)| {
            let value = mean.value(j).coeffs().to_vec();
            value
                .into_iter()
                .enumerate()
                .map(move |(k, c)| format!("{t},{k},{c}"))
        }),
    )?;

    if let Some(row) = extra {
        run.write_csv(
            "solver_report.csv",
            "kappa_sq,t_loc,contraction_factor,binding,iterations,max_ratio,converged,\
             ball_max_part,ball_bound,ball_slack,within_ball",
            [row],
        )?;
    }
    finish(&run, "simulate");
    Ok(())
}

fn solver_report_row(solution: &MildSolution) -> String {
    let t = &solution.t_loc;
    let b = &solution.ball;
    format!(
        "{},{},{},{:?},{},{},{},{},{},{},{}",
        t.kappa_sq,
        t.t_loc,
        t.contraction_factor,
        t.binding,
        solution.log.iterations,
        solution.log.max_ratio,
        solution.log.converged,
        b.max_part,
        b.kappa_sq + 4.0 * b.se_margin,
        b.slack,
        b.within_ball,
    )
}

pub fn verify_estimates(config: &RunConfig) -> Result<()> {
    let instance = require_instance(config, "verify-estimates")?;
    let run = RunDir::create(config, "verify-estimates")?;
    let exps = *instance.exponents();
    let op = instance.operator();
    let horizon = instance.horizon();
    let mut rows: Vec<VerificationRow> = Vec::new();

    // Semigroup decay and difference envelopes on a refined grid.
    let t_grid = log_spaced(SEMIGROUP_GRID_START * horizon, horizon, SEMIGROUP_GRID_POINTS);
    for theta in SEMIGROUP_THETAS {
        for margin in check_semigroup_bounds(op, theta, &t_grid)? {
            rows.push(VerificationRow {
                time: margin.t,
                quantity: format!("semigroup_decay_theta_{theta}"),
                value: margin.decay_actual,
                standard_error: 0.0,
                bound: margin.decay_bound,
                slack: margin.decay_slack,
            });
            if let (Some(actual), Some(bound), Some(slack)) = (
                margin.difference_actual,
                margin.difference_bound,
                margin.difference_slack,
            ) {
                rows.push(VerificationRow {
                    time: margin.t,
                    quantity: format!("semigroup_difference_theta_{theta}"),
                    value: actual,
                    standard_error: 0.0,
                    bound,
                    slack,
                });
            }
        }
    }

    // Deterministic convolution of the problem's own forcing; the t = 0 row
    // is trivial (empty integral) and skipped because the bound for
    // theta > beta is unbounded there.
    let conv_grid = TimeGrid::graded(horizon, config.solver.grid_steps, 2.0)?;
    let f2 = instance.f2().materialize(&conv_grid, exps.beta, instance.dim())?;
    let quad = ConvolutionQuadrature::for_beta(exps.beta)?;
    for theta in [0.0, exps.beta, exps.eta] {
        let report =
            convolution_bound_slack(op, &f2, exps.beta, exps.sigma, theta, &quad)?;
        for j in 1..report.times.len() {
            rows.push(VerificationRow {
                time: report.times[j],
                quantity: format!("convolution_theta_{theta}"),
                value: report.value_norms[j],
                standard_error: 0.0,
                bound: report.bounds[j],
                slack: report.slacks[j],
            });
        }
    }

    // Ito isometry: the analytic second moment against its envelope (slack)
    // and the MC second moment against a 4 SE band (deviation rows).
    let iso_grid = TimeGrid::uniform(horizon, config.solver.grid_steps)?;
    let model = instance.noise().materialize(&iso_grid, instance.dim())?;
    let thetas = config
        .experiment
        .isometry_thetas
        .clone()
        .unwrap_or_else(|| vec![0.0, exps.eta]);
    for theta in thetas {
        let report = ito_isometry_check(
            op,
            &model,
            theta,
            config.solver.realizations,
            config.solver.seed,
        )?;
        for j in 0..report.times.len() {
            rows.push(VerificationRow {
                time: report.times[j],
                quantity: format!("ito_isometry_theta_{theta}"),
                value: report.mc_second_moment[j],
                standard_error: report.standard_error[j],
                bound: report.bound[j],
                slack: report.bound[j] - report.analytic_second_moment[j],
            });
            let deviation = (report.mc_second_moment[j] - report.analytic_second_moment[j]).abs();
            let band = 4.0 * report.standard_error[j];
            rows.push(VerificationRow {
                time: report.times[j],
                quantity: format!("ito_isometry_mc_band_theta_{theta}"),
                value: deviation,
                standard_error: report.standard_error[j],
                bound: band,
                slack: band - deviation,
            });
        }
    }

    // Moment-ball rows from a full solve: weighted eta and beta second
    // moments against kappa^2 plus the MC margin.
    let solution = solve_mild(&instance, &config.solver_config())?;
    let ball_bound = solution.ball.kappa_sq + 4.0 * solution.ball.se_margin;
    for row in per_time_summary(&solution.ensemble, op, &exps) {
        rows.push(VerificationRow {
            time: row.time,
            quantity: "ball_eta_weighted_moment".to_string(),
            value: row.weighted_eta_moment,
            standard_error: solution.ball.se_margin,
            bound: ball_bound,
            slack: ball_bound - row.weighted_eta_moment,
        });
        rows.push(VerificationRow {
            time: row.time,
            quantity: "ball_beta_moment".to_string(),
            value: row.beta_moment,
            standard_error: solution.ball.se_margin,
            bound: ball_bound,
            slack: ball_bound - row.beta_moment,
        });
    }

    let path = write_verification_rows(&run, "estimates.csv", &rows)?;
    finish(&run, "verify-estimates");
    gate_nonnegative(&rows, &path)
}

pub fn regularity(config: &RunConfig) -> Result<()> {
    match config.build()? {
        BuiltProblem::Instance(instance) => regularity_instance(config, &instance),
        BuiltProblem::Mixture { mixture, horizon } => {
            regularity_mixture(config, &mixture, horizon)
        }
    }
}

fn regularity_instance(config: &RunConfig, instance: &ProblemInstance) -> Result<()> {
    if matches!(instance.noise(), NoiseSpec::Zero) {
        return Err(Error::invalid(
            "regularity needs nonzero noise: the exponent target is the stochastic convolution",
        ));
    }
    let run = RunDir::create(config, "regularity")?;
    let exps = *instance.exponents();
    let op = instance.operator();

    // Exponent of A^eta W_G on a uniform grid over the local interval.
    let solution = solve_mild(instance, &config.solver_config())?;
    let t_loc = solution.grid.horizon();
    let est_grid = TimeGrid::uniform(t_loc, config.solver.grid_steps)?;
    let model = instance.noise().materialize(&est_grid, instance.dim())?;
    let w_g = stochastic_convolution_sample(
        op,
        &model,
        config.solver.realizations,
        config.solver.seed,
    )?;
    let window = config
        .experiment
        .window
        .map(|[lo, hi]| (lo, hi))
        .unwrap_or((t_loc / 10.0, t_loc));
    let estimate = estimate_holder_exponent(
        &w_g,
        op,
        exps.eta,
        config.experiment.holder_p,
        window,
        &config.experiment.lags,
        config.solver.seed,
    )?;
    write_exponent_tables(&run, &estimate, exps.gamma_max())?;

    // Mean-equation residual against the calibrated noise-free budget.
    let tol = config.experiment.membership_tol;
    let report = mean_equation_residual(&solution.ensemble, instance, tol)?;
    let twin = mean_calibration_twin(instance)?;
    let mut twin_config = config.solver_config();
    twin_config.n_realizations = 1;
    // The twin's constants are dominated by the base's, so the base ball
    // radius stays admissible and the override lands both solves on the
    // identical grid.
    twin_config.kappa_policy = KappaPolicy::Fixed(solution.t_loc.kappa_sq);
    twin_config.t_loc_override = Some(t_loc);
    let twin_solution = solve_mild(&twin, &twin_config)?;
    let calibration = mean_equation_residual(&twin_solution.ensemble, &twin, tol)?;
    let budget = mean_residual_budget(&report, &calibration, config.experiment.headroom)?;
    let rows: Vec<VerificationRow> = report
        .times
        .iter()
        .zip(report.residuals.iter().zip(report.standard_errors.iter().zip(&budget)))
        .map(|(&time, (&residual, (&se, &cap)))| VerificationRow {
            time,
            quantity: "mean_equation_residual".to_string(),
            value: residual,
            standard_error: se,
            bound: cap,
            slack: cap - residual,
        })
        .collect();
    let residual_path = write_verification_rows(&run, "mean_residual.csv", &rows)?;

    // Maximal-regularity check on the problem's forcing direction with a
    // profile vanishing at t = 0.
    let profile = config
        .experiment
        .regularity_profile
        .clone()
        .unwrap_or(ProfileConfig::Affine { intercept: 0.0, slope: 0.5 })
        .to_profile();
    let reg_grid = TimeGrid::graded(instance.horizon(), MAX_REG_GRID_STEPS, 2.0)?;
    let f_samples: Vec<f64> = reg_grid.times().iter().map(|&t| profile.eval(t)).collect();
    let direction = forcing_direction(instance);
    let forcing = make_weighted_example(&reg_grid, &f_samples, exps.beta, &direction)?;
    let quad = ConvolutionQuadrature::for_beta(exps.beta)?;
    let max_reg = maximal_regularity_check(
        &HVector::zeros(instance.dim()),
        &forcing,
        op,
        exps.beta,
        exps.sigma,
        &quad,
        tol,
    )?;

    let diagnostics = [
        ("exponent_estimate", estimate.estimate),
        ("exponent_floor", exps.gamma_max() - 0.05),
        ("t_loc", t_loc),
        ("kappa_sq", solution.t_loc.kappa_sq),
        ("mean_az_member", bool_field(report.az_membership.is_member)),
        ("mean_quotient_member", bool_field(report.quotient_membership.is_member)),
        ("max_reg_quotient_norm", max_reg.quotient_norm),
        ("max_reg_abeta_sup", max_reg.abeta_sup),
        ("max_reg_ai_norm", max_reg.ai_norm),
        ("max_reg_data_norm", max_reg.data_norm),
        ("max_reg_empirical_c", max_reg.empirical_c),
        ("max_reg_abeta_continuity_defect", max_reg.abeta_continuity_defect),
        ("max_reg_ai_member", bool_field(max_reg.ai_membership.is_member)),
        ("max_reg_quotient_member", bool_field(max_reg.quotient_membership.is_member)),
    ];
    run.write_csv(
        "regularity_diagnostics.csv",
        "name,value",
        diagnostics.iter().map(|(name, value)| format!("{name},{value}")),
    )?;
    finish(&run, "regularity");
    gate_nonnegative(&rows, &residual_path)
}

fn regularity_mixture(config: &RunConfig, mixture: &OuMixture, horizon: f64) -> Result<()> {
    let run = RunDir::create(config, "regularity")?;
    let grid = TimeGrid::uniform(horizon, config.solver.grid_steps)?;
    let ensemble = mixture.sample(&grid, config.solver.realizations, config.solver.seed);
    let window = config
        .experiment
        .window
        .map(|[lo, hi]| (lo, hi))
        .unwrap_or((0.0, horizon));
    let estimate = estimate_holder_exponent(
        &ensemble,
        mixture.operator(),
        0.0,
        config.experiment.holder_p,
        window,
        &config.experiment.lags,
        config.solver.seed,
    )?;
    write_exponent_tables(&run, &estimate, mixture.target_exponent())?;

    let lag_times: Vec<f64> = estimate.lag_times.clone();
    let truth = mixture.structure_function(&lag_times);
    let diagnostics = [
        ("target_exponent", mixture.target_exponent()),
        ("exponent_estimate", estimate.estimate),
        ("abs_error", (estimate.estimate - mixture.target_exponent()).abs()),
        ("ci_lo", estimate.ci_lo),
        ("ci_hi", estimate.ci_hi),
        (
            "max_moment_rel_error",
            estimate
                .lag_moments
                .iter()
                .zip(&truth)
                .map(|(m, t)| (m / t - 1.0).abs())
                .fold(0.0f64, f64::max),
        ),
    ];
    run.write_csv(
        "regularity_diagnostics.csv",
        "name,value",
        diagnostics.iter().map(|(name, value)| format!("{name},{value}")),
    )?;
    finish(&run, "regularity");
    Ok(())
}

pub fn dependence(config: &RunConfig) -> Result<()> {
    let section = config
        .experiment
        .dependence
        .as_ref()
        .ok_or_else(|| Error::invalid("dependence needs an [experiment.dependence] section"))?;
    let instance = require_instance(config, "dependence")?;
    let run = RunDir::create(config, "dependence")?;

    let exps = instance.exponents();
    let epsilon = match section.epsilon {
        Some(eps) => eps,
        None => dependence_epsilon(instance.f1().lipschitz, exps, instance.horizon())?,
    };
    let direction = DependenceDirection {
        f2: section.direction_f2,
        g: section.direction_g,
        xi: section.direction_xi,
    };
    let dep_config = DependenceConfig {
        radius_f2: section.radius_f2,
        radius_g: section.radius_g,
        radius_xi: section.radius_xi,
        magnitudes: section.magnitudes.clone(),
        grid_steps: section.grid_steps,
        n_realizations: section.realizations,
        seed: config.solver.seed,
        epsilon,
        coupled_noise: true,
    };
    let report = dependence_experiment(&instance, &direction, &dep_config)?;

    run.write_csv(
        "dependence_rows.csv",
        "magnitude,fitted_c_h,fitted_c_beta,xi_diff_sq,xi_beta_diff_sq,f2_diff_norm_sq,\
         g_diff_sup_sq",
        report.rows.iter().map(|r| {
            csv_fields(&[
                r.magnitude,
                r.fitted_c_h,
                r.fitted_c_beta,
                r.xi_diff_sq,
                r.xi_beta_diff_sq,
                r.f2_diff_norm_sq,
                r.g_diff_sup_sq,
            ])
        }),
    )?;
    run.write_csv(
        "dependence_summary.csv",
        "epsilon,t_ball,horizon,kappa_sq,c_h_spread,c_beta_spread",
        [csv_fields(&[
            report.epsilon,
            report.t_ball,
            report.horizon,
            report.kappa_sq,
            report.c_h_spread,
            report.c_beta_spread,
        ])],
    )?;
    finish(&run, "dependence");
    Ok(())
}

pub fn gronwall(config: &RunConfig) -> Result<()> {
    let section = config
        .experiment
        .gronwall
        .as_ref()
        .ok_or_else(|| Error::invalid("gronwall needs an [experiment.gronwall] section"))?;
    let params = GronwallParams::new(
        section.a,
        section.b,
        section.mu,
        section.nu,
        section.series_cutoff,
    )?;
    if section.samples < 2 {
        return Err(Error::invalid("gronwall needs at least 2 sample points"));
    }
    let run = RunDir::create(config, "gronwall")?;
    let n = section.samples - 1;
    let times: Vec<f64> = (0..=n)
        .map(|i| section.a + (section.b - section.a) * (i as f64 / n as f64))
        .collect();
    let profile = section
        .f
        .clone()
        .unwrap_or(ProfileConfig::Constant { value: 1.0 })
        .to_profile();
    let f_values: Vec<f64> = times.iter().map(|&t| profile.eval(t)).collect();

    let phi = gronwall_fixed_point(&params, &times, &f_values, section.fixed_point_sweeps)?;
    let verification = gronwall_numeric_verify(&params, &times, &phi, &f_values, GRONWALL_VERIFY_TOL)?;

    let mut rows = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let bound = gronwall_bound(&params, &times, &f_values, t)?;
        rows.push(csv_fields(&[
            t,
            bound.f_at_t,
            bound.series_factor,
            bound.remainder,
            bound.bound,
            bound.majorant,
            phi[i],
            bound.bound - phi[i],
        ]));
    }
    run.write_csv(
        "gronwall.csv",
        "time,f,series_factor,remainder,bound,majorant,fixed_point,slack",
        rows,
    )?;
    finish(&run, "gronwall");

    if !verification.hypothesis_holds {
        return Err(Error::ConvergenceFailure(format!(
            "fixed point violates the integral equality at {} sample times",
            verification.hypothesis_failures.len()
        )));
    }
    if !verification.conclusion_holds {
        return Err(Error::EstimateViolation(format!(
            "series bound fails below the fixed point at {} sample times",
            verification.conclusion_failures.len()
        )));
    }
    Ok(())
}

fn require_instance(config: &RunConfig, subcommand: &str) -> Result<ProblemInstance> {
    match config.build()? {
        BuiltProblem::Instance(instance) => Ok(instance),
        BuiltProblem::Mixture { .. } => Err(Error::invalid(format!(
            "synthetic mixtures support simulate and regularity, not {subcommand}"
        ))),
    }
}

fn forcing_direction(instance: &ProblemInstance) -> HVector {
    match instance.f2() {
        F2Spec::Singular { v, .. } | F2Spec::Bounded { v, .. } => v.clone(),
        F2Spec::Zero => HVector::basis(instance.dim(), 0),
    }
}

fn write_exponent_tables(
    run: &RunDir,
    estimate: &HolderExponentEstimate,
    gamma_max: f64,
) -> Result<()> {
    run.write_csv(
        "exponents.csv",
        "theta,p,estimate,ci_lo,ci_hi,gamma_max",
        [csv_fields(&[
            estimate.theta,
            estimate.p,
            estimate.estimate,
            estimate.ci_lo,
            estimate.ci_hi,
            gamma_max,
        ])],
    )?;
    run.write_csv(
        "exponent_lags.csv",
        "lag_time,moment",
        estimate
            .lag_times
            .iter()
            .zip(&estimate.lag_moments)
            .map(|(&d, &m)| csv_fields(&[d, m])),
    )?;
    Ok(())
}

fn write_verification_rows(
    run: &RunDir,
    name: &str,
    rows: &[VerificationRow],
) -> Result<std::path::PathBuf> {
    run.write_csv(
        name,
        "time,quantity,value,standard_error,bound,slack",
        rows.iter().map(|r| {
            format!(
                "{},{},{},{},{},{}",
                r.time, r.quantity, r.value, r.standard_error, r.bound, r.slack
            )
        }),
    )
}

fn gate_nonnegative(rows: &[VerificationRow], path: &Path) -> Result<()> {
    let negative = rows.iter().filter(|r| r.slack < 0.0).count();
    if negative > 0 {
        return Err(Error::EstimateViolation(format!(
            "{negative} negative-slack rows in {}",
            path.display()
        )));
    }
    Ok(())
}

fn bool_field(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn finish(run: &RunDir, subcommand: &str) {
    println!(
        "{subcommand}: artifacts in {} (manifest {})",
        run.path().display(),
        run.hash()
    );
}
