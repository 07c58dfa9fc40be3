use std::fs;
use std::path::Path;

use serde_json::json;
use ultrakfp::covariance::{
    covariance_by_quadrature, covariance_matrix, covariance_ode_residual, fit_lemma21_constants, scaling_identity_residual,
    Lemma21Grid,
};
use ultrakfp::geometry::{ball_volume_mc, homogeneous_norm, norm_homogeneity_residual};
use ultrakfp::kernel::kernel_mass;
use ultrakfp::potential::norm_ratio_estimate;
use ultrakfp::regularity::{growth_lemma_check, half_ball_box, half_ball_nodes, moser_ratio, oscillation_profile};
use ultrakfp::sampling::{stream_rng, uniform};
use ultrakfp::solver::{mc_sample_moments, random_initial_data, solve_forward_with};
use ultrakfp::{
    gamma_eval, Axis, GapKernel, BoundaryCondition, CoefficientField, Drift, Grid, GriddedFunction, Model, Point, SolutionField,
    SolverConfig,
};

use crate::config::{default_space, point_or, BoundaryConfig, ExperimentSection, InitialConfig, RunConfig};
use crate::output::{loglog_svg, num, Table};
use crate::report::{write_json, CliError, Outcome};

pub const COMMANDS: &[&str] = &[
    "validate",
    "norm",
    "kernel",
    "covariance",
    "verify-lemma21",
    "potential",
    "solve",
    "mc-oracle",
    "moser",
    "growth",
    "holder",
];

pub struct Context<'a> {
    pub config: &'a RunConfig,
    pub model: &'a Model,
    pub seed: u64,
    pub out: &'a Path,
    pub checkpoint_every: Option<usize>,
}

pub fn dispatch(command: &str, ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    match command {
        "validate" => validate(ctx, outcome),
        "norm" => norm(ctx, outcome),
        "kernel" => kernel(ctx, outcome),
        "covariance" => covariance(ctx, outcome),
        "verify-lemma21" => lemma21(ctx, outcome),
        "potential" => potential(ctx, outcome),
        "solve" => solve(ctx, outcome),
        "mc-oracle" => mc(ctx, outcome),
        "moser" => moser(ctx, outcome),
        "growth" => growth(ctx, outcome),
        "holder" => holder(ctx, outcome),
        other => Err(CliError::Config(format!("unknown command {other}"))),
    }
}

fn save_json(ctx: &Context, outcome: &mut Outcome, name: &str, value: &impl serde::Serialize) -> Result<(), CliError> {
    write_json(&ctx.out.join(name), value)?;
    outcome.artifact(name);
    Ok(())
}

fn save_table(ctx: &Context, outcome: &mut Outcome, name: &str, table: &Table) -> Result<(), CliError> {
    table.write(&ctx.out.join(name))?;
    outcome.artifact(name);
    Ok(())
}

fn origin_at(model: &Model, t: f64) -> Point {
    Point::new(vec![0.0; model.dim()], t)
}

fn validate(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    outcome.check("structure", true, format!("N = {}, blocks {:?}, Q = {}", m.dim(), m.blocks(), m.q()));
    let summary = json!({
        "N": m.dim(),
        "blocks": m.blocks(),
        "Q": m.q(),
        "alpha": m.alpha(),
        "trace_B": m.trace_b(),
        "drift_norm": m.drift_norm(),
        "reduced": m.is_reduced(),
    });
    save_json(ctx, outcome, "summary.json", &summary)
}

fn norm(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.norm;
    let points = match &sec.points {
        Some(ps) => ps.iter().map(|p| p.to_point(m, "norm.points")).collect::<Result<Vec<_>, _>>()?,
        None => vec![Point::new(vec![1.0; m.dim()], 0.0)],
    };
    let mut header: Vec<String> = (1..=m.dim()).map(|i| format!("x{i}")).collect();
    header.push("t".into());
    header.push("norm".into());
    let mut table = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    for p in &points {
        let r = homogeneous_norm(m, p);
        println!("norm({:?}, {}) = {r:.6}", p.x, p.t);
        let mut row: Vec<String> = p.x.iter().map(|&v| num(v)).collect();
        row.push(num(p.t));
        row.push(num(r));
        table.row(row);
    }
    save_table(ctx, outcome, "norm.csv", &table)?;

    let residual = norm_homogeneity_residual(m, sec.samples, ctx.seed);
    outcome.check(
        "norm_homogeneity",
        residual <= sec.tolerance,
        format!("max relative residual {residual:e} over {} samples (≤ {:e})", sec.samples, sec.tolerance),
    );

    let q2 = (m.q() + 2) as i32;
    let mut vol = Table::new(&["r", "volume", "stderr", "volume_over_r_pow"]);
    let estimates = sec
        .volume_radii
        .iter()
        .enumerate()
        .map(|(k, &r)| ball_volume_mc(m, r, sec.volume_samples, ctx.seed.wrapping_add(1 + k as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    for e in &estimates {
        vol.row(vec![num(e.r), num(e.volume), num(e.stderr), num(e.volume / e.r.powi(q2))]);
    }
    save_table(ctx, outcome, "ball_volume.csv", &vol)?;
    if let Some(base) = estimates.first() {
        let mut worst = 0.0f64;
        for e in &estimates[1..] {
            let scale = (e.r / base.r).powi(q2);
            let se = (e.stderr.powi(2) + (scale * base.stderr).powi(2)).sqrt();
            worst = worst.max((e.volume - scale * base.volume).abs() / se);
        }
        outcome.check(
            "ball_volume_scaling",
            worst <= 3.0,
            format!("largest deviation from r^{q2} scaling: {worst:.3} standard errors (≤ 3)"),
        );
    }
    Ok(())
}

fn kernel(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.kernel;
    let pole = point_or(&sec.pole, m, "kernel.pole", origin_at(m, 0.0))?;
    let points = match &sec.points {
        Some(ps) => ps.iter().map(|p| p.to_point(m, "kernel.points")).collect::<Result<Vec<_>, _>>()?,
        None => vec![origin_at(m, pole.t + 1.0)],
    };
    let mut header: Vec<String> = (1..=m.dim()).map(|i| format!("x{i}")).collect();
    header.extend(["t", "value", "gap_norm", "underflow"].map(String::from));
    let mut table = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let mut gaps = Vec::new();
    for p in &points {
        let e = gamma_eval(m, p, &pole);
        println!("Gamma({:?}, {}; pole {:?}, {}) = {:.6}", p.x, p.t, pole.x, pole.t, e.value);
        let mut row: Vec<String> = p.x.iter().map(|&v| num(v)).collect();
        row.extend([num(p.t), num(e.value), num(e.gap_norm), e.underflow.to_string()]);
        table.row(row);
        if e.t_gap > 0.0 && !gaps.contains(&p.t) {
            gaps.push(p.t);
        }
    }
    save_table(ctx, outcome, "kernel.csv", &table)?;
    for t in gaps {
        let mass = kernel_mass(m, t, &pole)?;
        let expected = (-(t - pole.t) * m.trace_b()).exp();
        let err = (mass - expected).abs();
        outcome.check(
            format!("kernel_mass_t={t}"),
            err <= sec.mass_tolerance,
            format!("mass {mass:.12} vs e^(-s trB) = {expected:.12}, error {err:e}"),
        );
    }
    Ok(())
}

fn covariance(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.covariance;
    let n = m.dim();
    let mut header = vec!["t".to_string()];
    for i in 0..n {
        for j in 0..n {
            header.push(format!("c{}{}", i + 1, j + 1));
        }
    }
    header.push("det".into());
    let mut table = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let mut quad_worst = 0.0f64;
    let mut ode_worst = 0.0f64;
    for &t in &sec.times {
        let c = covariance_matrix(m, t, Drift::Full)?;
        let mut row = vec![num(t)];
        for i in 0..n {
            for j in 0..n {
                row.push(num(c.c[(i, j)]));
            }
        }
        row.push(num(c.c.determinant()));
        table.row(row);
        let q = covariance_by_quadrature(m, t, Drift::Full, 1e-13)?;
        let rel = (&q - &c.c).norm_fro() / c.c.norm_fro();
        quad_worst = quad_worst.max(rel);
        ode_worst = ode_worst.max(covariance_ode_residual(m, t)?);
    }
    save_table(ctx, outcome, "covariance.csv", &table)?;
    outcome.check(
        "quadrature_agreement",
        quad_worst <= sec.quadrature_tolerance,
        format!("relative Frobenius difference {quad_worst:e} (≤ {:e})", sec.quadrature_tolerance),
    );
    outcome.check(
        "covariance_ode",
        ode_worst <= sec.ode_tolerance,
        format!("largest residual {ode_worst:e} (≤ {:e})", sec.ode_tolerance),
    );
    let mut rng = stream_rng(ctx.seed, 0);
    let mut scaling_worst = 0.0f64;
    for _ in 0..sec.random_times {
        let t = 10f64.powf(uniform(&mut rng, -2.0, 1.0));
        scaling_worst = scaling_worst.max(scaling_identity_residual(m, t)?);
    }
    outcome.check(
        "scaling_identity",
        scaling_worst <= sec.scaling_tolerance,
        format!(
            "largest residual {scaling_worst:e} over {} times in [0.01, 10] (≤ {:e})",
            sec.random_times, sec.scaling_tolerance
        ),
    );
    Ok(())
}

fn lemma21(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.lemma21;
    let grid = Lemma21Grid {
        directions: sec.directions,
        times: sec.times,
        seed: ctx.seed,
    };
    let report = fit_lemma21_constants(m, sec.horizon, grid)?;
    println!("C_T = {:e}, C'_T = {:e}", report.c_t, report.c_prime_t);
    save_json(ctx, outcome, "lemma21.json", &report)?;
    outcome.check(
        "constants_finite",
        report.c_t.is_finite() && report.c_prime_t.is_finite(),
        format!("C_T = {:e}, C'_T = {:e}", report.c_t, report.c_prime_t),
    );
    outcome.check(
        "zero_violations",
        report.max_violation <= 0.0,
        format!(
            "max violation {:e} over {} samples ({} excluded)",
            report.max_violation, report.samples, report.excluded
        ),
    );
    if m.is_reduced() {
        outcome.check(
            "reduced_model_c_t",
            report.c_t <= 1e-6,
            format!("C = C₀ for a reduced drift, so C_T = {:e} should vanish (≤ 1e-6)", report.c_t),
        );
    }
    Ok(())
}

fn potential(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.potential;
    let space = sec.space.clone().unwrap_or_else(|| default_space(m, 1.0, 0.5, (16, 16)));
    let time = sec.time.unwrap_or(Axis::new(0.0, 1.0, 16));
    let grid = Grid::new(space, time)?;
    let report = norm_ratio_estimate(m, &grid, sec.trials, ctx.seed)?;
    println!(
        "ratio_2ktilde = {:.6} (p = {}), ratio_2k = {:.6} (p = {})",
        report.ratio_2ktilde, report.exponent_2ktilde, report.ratio_2k, report.exponent_2k
    );
    save_json(ctx, outcome, "potential.json", &report)?;
    outcome.check(
        "norm_ratios_finite",
        report.ratio_2ktilde.is_finite() && report.ratio_2k.is_finite() && report.ratio_2ktilde > 0.0 && report.ratio_2k > 0.0,
        format!("{:e}, {:e}", report.ratio_2ktilde, report.ratio_2k),
    );
    Ok(())
}

fn boundary(model: &Model, b: &BoundaryConfig, t0: f64) -> Result<BoundaryCondition<f64>, CliError> {
    Ok(match b {
        BoundaryConfig::Neumann {} => BoundaryCondition::Neumann,
        BoundaryConfig::FixedDirichlet {} => BoundaryCondition::FixedDirichlet,
        BoundaryConfig::KernelDirichlet { pole } => BoundaryCondition::KernelDirichlet {
            pole: point_or(pole, model, "solve.boundary.pole", origin_at(model, t0 - 0.5))?,
        },
    })
}

fn solve(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.solve;
    let space = sec.space.clone().unwrap_or_else(|| default_space(m, 4.0, 2.0, (80, 80)));
    let grid = Grid::slice(space, sec.t0)?;
    let initial: GriddedFunction<f64> = match &sec.initial {
        InitialConfig::Kernel { pole } => {
            let pole = point_or(pole, m, "solve.initial.pole", origin_at(m, sec.t0 - 0.5))?;
            GriddedFunction::from_fn(grid.clone(), |x: &[f64], t| gamma_eval(m, &Point::new(x.to_vec(), t), &pole).value)
        }
        InitialConfig::Random { seed } => random_initial_data(&grid, seed.unwrap_or(ctx.seed)),
        InitialConfig::Constant { value } => GriddedFunction::from_fn(grid.clone(), |_, _| *value),
        InitialConfig::File { path } => {
            let f = GriddedFunction::read(path)?;
            if f.grid() != &grid {
                return Err(CliError::Config(format!("{} does not match the configured grid", path.display())));
            }
            f
        }
    };
    let coeff = CoefficientField::from_spec(&sec.coefficient, m.m0())?.with_model(m)?;
    let save_every = ctx.checkpoint_every.unwrap_or(sec.save_every).max(1);
    let mut cfg = SolverConfig::new(sec.dt, sec.horizon)
        .with_diffusion(sec.diffusion)
        .with_boundary(boundary(m, &sec.boundary, sec.t0)?)
        .with_save_every(save_every);
    cfg.seed = ctx.seed;

    let dir = ctx.out.join("solution");
    fs::create_dir_all(&dir)?;
    let checkpoint = ctx.checkpoint_every.is_some();
    let space = grid.space.clone();
    let sol = solve_forward_with(m, &coeff, &cfg, &initial, |k, t, values| {
        if checkpoint {
            let g = Grid::slice(space.clone(), t)?;
            GriddedFunction::new(g, values.to_vec())?.write(dir.join(format!("slice_{k:05}.bin")))?;
            log::info!("checkpoint {k} at t = {t}");
        }
        Ok(())
    })?;
    let solver_json = json!({
        "dt": sec.dt,
        "T": sec.horizon,
        "t0": sec.t0,
        "diffusion": sec.diffusion,
        "save_every": save_every,
        "seed": ctx.seed,
    });
    sol.save(&dir, solver_json)?;
    outcome.artifact("solution/manifest.json");

    let cell = grid.spatial_cell_volume();
    let mut table = Table::new(&["t", "min", "max", "mass"]);
    for (k, t) in sol.times().iter().enumerate() {
        let s = sol.slice(k);
        let mass: f64 = s.iter().enumerate().map(|(i, v)| v * grid.spatial_trapezoid(i) * cell).sum();
        let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        table.row(vec![num(*t), num(lo), num(hi), num(mass)]);
    }
    save_table(ctx, outcome, "solve.csv", &table)?;
    let init_min = initial.values().iter().cloned().fold(f64::INFINITY, f64::min);
    if init_min >= 0.0 {
        let lo = sol.slices().iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        outcome.check("nonnegative", lo >= 0.0, format!("smallest value {lo:e}"));
    }
    if let (InitialConfig::Kernel { pole }, true) = (&sec.initial, coeff.is_constant()) {
        let pole = point_or(pole, m, "solve.initial.pole", origin_at(m, sec.t0 - 0.5))?;
        let last = sol.len() - 1;
        let t = sol.times()[last];
        let err = grid
            .nodes::<f64>()
            .iter()
            .zip(sol.slice(last))
            .map(|(x, v)| (v - gamma_eval(m, &Point::new(x.clone(), t), &pole).value).abs())
            .fold(0.0, f64::max);
        println!("max |u - Gamma| at t = {t}: {err:e}");
        save_json(ctx, outcome, "kernel_error.json", &json!({"t": t, "max_abs_error": err}))?;
    }
    Ok(())
}

fn mc(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.mc;
    let mut default_pole = origin_at(m, 0.0);
    default_pole.x[0] = 1.0;
    let pole = point_or(&sec.pole, m, "mc.pole", default_pole)?;
    let t = pole.t + sec.t;
    let report = mc_sample_moments(m, &pole, t, sec.paths, sec.steps, ctx.seed)?;
    let mean = m.flow_matrix(sec.t).matvec(&pole.x);
    let cov = covariance_matrix(m, sec.t, Drift::Full)?.c.scale(2.0);
    let n = m.dim();
    let mut table = Table::new(&["quantity", "i", "j", "empirical", "stderr", "expected", "z"]);
    let z = |a: f64, b: f64, se: f64| if se > 0.0 { (a - b).abs() / se } else { 0.0 };
    for i in 0..n {
        let zi = z(report.mean[i], mean[i], report.mean_stderr[i]);
        table.row(vec!["mean".into(), i.to_string(), String::new(), num(report.mean[i]), num(report.mean_stderr[i]), num(mean[i]), num(zi)]);
    }
    for i in 0..n {
        for j in 0..n {
            let zij = z(report.cov[i][j], cov[(i, j)], report.cov_stderr[i][j]);
            table.row(vec![
                "cov".into(),
                i.to_string(),
                j.to_string(),
                num(report.cov[i][j]),
                num(report.cov_stderr[i][j]),
                num(cov[(i, j)]),
                num(zij),
            ]);
        }
    }
    save_table(ctx, outcome, "mc.csv", &table)?;
    save_json(ctx, outcome, "mc.json", &report)?;
    let worst = report.max_z_score(&mean, &cov);
    outcome.check(
        "moments_within_stderr",
        worst <= sec.z_max,
        format!("largest |z| {worst:.3} against E(t)ξ and 2C(t) (≤ {})", sec.z_max),
    );
    Ok(())
}

/// Closed-form kernel samples on a grid fitted to `B_r⁻(center)`.
fn kernel_ball_field(model: &Model, pole: &Point, center: &Point, r: f64, nodes: usize) -> Result<SolutionField<f64>, CliError> {
    let (bounds, (t_lo, t_hi)) = half_ball_box(model, center, r, 0.02);
    let anisotropic: Vec<usize> = (0..model.dim()).map(|i| if i < model.m0() { nodes } else { 2 * nodes }).collect();
    let space: Vec<Axis> = bounds.iter().zip(&anisotropic).map(|(&(a, b), &n)| Axis::new(a, b, n)).collect();
    let times: Vec<f64> = (0..=nodes).map(|k| t_lo + (t_hi - t_lo) * k as f64 / nodes as f64).collect();
    let nodes_x = Grid::slice(space.clone(), 0.0)?.nodes::<f64>();
    let mut u = SolutionField::new(space, model.spec());
    for &t in &times {
        let k = GapKernel::new(model, t - pole.t)?;
        u.push(t, nodes_x.iter().map(|x| k.value(x, &pole.x)).collect())?;
    }
    Ok(u)
}

fn moser(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.moser;
    let pole = point_or(&sec.pole, m, "moser.pole", origin_at(m, -1.0))?;
    let lo = point_or(&sec.center_lo, m, "moser.center_lo", Point::new(vec![-0.5; m.dim()], 0.0))?;
    let hi = point_or(&sec.center_hi, m, "moser.center_hi", Point::new(vec![0.5; m.dim()], 0.5))?;
    let mut rng = stream_rng(ctx.seed, 0);
    let mut header: Vec<String> = vec!["center".into()];
    header.extend((1..=m.dim()).map(|i| format!("x{i}")));
    header.extend(["t", "r", "ratio"].map(String::from));
    let mut table = Table::new(&header.iter().map(String::as_str).collect::<Vec<_>>());
    let mut worst_spread = 0.0f64;
    let mut all_finite = true;
    let mut max_ratio = 0.0f64;
    for c in 0..sec.centers {
        let x: Vec<f64> = lo.x.iter().zip(&hi.x).map(|(&a, &b)| uniform(&mut rng, a, b)).collect();
        let center = Point::new(x, uniform(&mut rng, lo.t, hi.t));
        let mut ratios = Vec::new();
        for &r in &sec.radii {
            let u = kernel_ball_field(m, &pole, &center, r, sec.nodes)?;
            let q = moser_ratio(&u, &center, r, sec.p)?;
            all_finite &= q.is_finite() && q > 0.0;
            max_ratio = max_ratio.max(q);
            let mut row = vec![c.to_string()];
            row.extend(center.x.iter().map(|&v| num(v)));
            row.extend([num(center.t), num(r), num(q)]);
            table.row(row);
            ratios.push(q);
        }
        if let Some(&first) = ratios.first() {
            for q in &ratios[1..] {
                worst_spread = worst_spread.max((q / first - 1.0).abs());
            }
        }
    }
    save_table(ctx, outcome, "moser.csv", &table)?;
    outcome.check("ratios_finite", all_finite, format!("largest ratio {max_ratio:.6}"));
    outcome.check(
        "ratios_stable",
        worst_spread <= sec.tolerance,
        format!("largest relative spread across radii {worst_spread:.4} (≤ {})", sec.tolerance),
    );
    Ok(())
}

fn experiment_runs(
    ctx: &Context,
    sec: &ExperimentSection,
) -> Result<Vec<(u64, SolutionField<f64>)>, CliError> {
    let m = ctx.model;
    let space = sec.space.clone().unwrap_or_else(|| default_space(m, 1.5, 1.0, (100, 200)));
    let grid = Grid::slice(space, 0.0)?;
    let coeff = CoefficientField::from_spec(&sec.coefficient, m.m0())?.with_model(m)?;
    (0..sec.runs as u64)
        .map(|k| {
            let seed = ctx.seed.wrapping_add(k);
            let init = random_initial_data(&grid, seed);
            let mut cfg = SolverConfig::new(sec.dt, sec.horizon)
                .with_diffusion(sec.diffusion)
                .with_boundary(BoundaryCondition::FixedDirichlet);
            cfg.seed = seed;
            let sol = ultrakfp::solver::solve_forward(m, &coeff, &cfg, &init)?;
            Ok((seed, sol))
        })
        .collect()
}

fn growth(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.growth;
    let center = point_or(&sec.center, m, "growth.center", origin_at(m, sec.solver.horizon))?;
    let mut table = Table::new(&["run", "seed", "scale", "fraction", "h0_empirical"]);
    for (k, (seed, sol)) in experiment_runs(ctx, &sec.solver)?.into_iter().enumerate() {
        // scale by the median over the ball so that {u ≥ 1} fills half of it
        let set = half_ball_nodes(m, &sol, &center, sec.r)?;
        let mut vals: Vec<f64> = set.nodes.iter().map(|&(s, f)| sol.slice(s)[f]).collect();
        vals.sort_by(f64::total_cmp);
        let median = vals.get(vals.len() / 2).copied().unwrap_or(0.0);
        if !(median > 0.0) {
            outcome.check(format!("run_{k}_h0_positive"), false, format!("median over the ball is {median:e}"));
            continue;
        }
        let scaled = sol.map(|v| v / median);
        let g = growth_lemma_check(&scaled, &center, sec.r, sec.theta)?;
        table.row(vec![k.to_string(), seed.to_string(), num(1.0 / median), num(g.fraction), num(g.h0_empirical)]);
        outcome.check(
            format!("run_{k}_h0_positive"),
            g.fraction < 0.5 || g.h0_empirical > 0.0,
            format!("fraction {:.4}, h0 {:e}", g.fraction, g.h0_empirical),
        );
    }
    save_table(ctx, outcome, "growth.csv", &table)
}

fn holder(ctx: &Context, outcome: &mut Outcome) -> Result<(), CliError> {
    let m = ctx.model;
    let sec = &ctx.config.holder;
    let center = point_or(&sec.center, m, "holder.center", origin_at(m, sec.solver.horizon))?;
    let mut table = Table::new(&["run", "seed", "level", "r", "osc", "ratio"]);
    let mut summary = Vec::new();
    let mut series = Vec::new();
    for (k, (seed, sol)) in experiment_runs(ctx, &sec.solver)?.into_iter().enumerate() {
        let p = oscillation_profile(&sol, &center, sec.r0, sec.theta, sec.levels)?;
        for (l, (r, o)) in p.radii.iter().zip(&p.osc).enumerate() {
            let ratio = if l == 0 { String::new() } else { num(p.ratios[l - 1]) };
            table.row(vec![k.to_string(), seed.to_string(), l.to_string(), num(*r), num(*o), ratio]);
        }
        outcome.check(
            format!("run_{k}_rho_below_max"),
            p.fitted_rho < sec.rho_max,
            format!("rho {:.4}, alpha {:?} (rho < {})", p.fitted_rho, p.fitted_alpha, sec.rho_max),
        );
        series.push((format!("run {k}"), p.radii.iter().cloned().zip(p.osc.iter().cloned()).collect()));
        summary.push(json!({
            "run": k,
            "seed": seed,
            "alpha": p.fitted_alpha,
            "rho": p.fitted_rho,
            "theta": p.theta,
            "center": {"x": p.center, "t": p.center_t},
        }));
    }
    save_table(ctx, outcome, "holder.csv", &table)?;
    save_json(ctx, outcome, "holder.json", &summary)?;
    loglog_svg(&ctx.out.join("holder.svg"), "oscillation vs radius", &series)?;
    outcome.artifact("holder.svg");
    Ok(())
}
