//! The five batch commands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dispatch_conic::SolverConfig;
use dispatch_core::embed::{ConstraintFlags, DispatchProblem};
use dispatch_core::loadflow::{
    admittance_with_capacitors, power_mismatch, zbus_fixed_point, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use dispatch_core::model::{validate_feeder, FeederModel, HorizonScenario};
use dispatch_core::recovery::power_factor;
use dispatch_core::{io, pipeline, IndexMap};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::profiles::{generate, ProfileSpec};
use crate::report::{ConfigEcho, RunReport, SolutionFile, SweepEntry, ValidationResiduals, VoltageFlag};
use crate::{status_exit_code, Args, CliError, RunMode, EXIT_INFEASIBLE, EXIT_NOT_TIGHT, EXIT_OK};

/// Residual level above which a validation family is flagged.
pub const VALIDATION_TOL: f64 = 1e-6;

pub fn run(args: &Args) -> Result<i32, CliError> {
    if !(args.tol > 0.0) {
        return Err(CliError::Input(format!("--tol must be positive, got {}", args.tol)));
    }
    match args.mode {
        RunMode::GenProfiles => cmd_gen_profiles(args),
        RunMode::Dispatch => cmd_dispatch(args),
        RunMode::Feasibility => cmd_feasibility(args),
        RunMode::Capsweep => cmd_capsweep(args),
        RunMode::Validate => cmd_validate(args),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Input(format!("--{flag} is required")))
}

fn load_inputs(args: &Args) -> Result<(FeederModel, HorizonScenario), CliError> {
    let model = io::load_feeder(required(&args.feeder, "feeder")?)?;
    let scenario = io::load_scenario(required(&args.scenario, "scenario")?, &model)?;
    let problems = validate_feeder(&model, &scenario);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|v| format!("{}: {}", v.subject, v.message)).collect();
        return Err(CliError::Input(list.join("; ")));
    }
    Ok((model, scenario))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report types serialize");
    text.push('\n');
    write_file(dir, name, &text)
}

fn solver_config(args: &Args) -> SolverConfig {
    SolverConfig {
        tol: args.tol,
        verbose: args.verbose,
        ..SolverConfig::default()
    }
}

fn echo(args: &Args, w_v: f64) -> ConfigEcho {
    ConfigEcho {
        seed: args.seed,
        tol: args.tol,
        rank_threshold: args.rank_threshold,
        w_v,
        enable: args.enable.clone(),
    }
}

#[derive(Serialize)]
struct Timing {
    build_seconds: f64,
    solve_seconds: f64,
    total_seconds: f64,
}

fn cmd_gen_profiles(args: &Args) -> Result<i32, CliError> {
    let path = required(&args.profiles, "profiles")?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let spec: ProfileSpec =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let scenario = generate(&spec, args.seed)?;
    write_json(&args.out, "scenario.json", &scenario)?;
    log::info!("wrote {}", args.out.join("scenario.json").display());
    Ok(EXIT_OK)
}

fn cmd_dispatch(args: &Args) -> Result<i32, CliError> {
    let start = Instant::now();
    let (model, scenario) = load_inputs(args)?;
    let flags = ConstraintFlags::parse_list(&args.enable)?;
    let outcome = pipeline::run(
        &model,
        &scenario,
        &DispatchProblem::dispatch(flags),
        &solver_config(args),
        args.rank_threshold,
    )?;
    let status = outcome.status();
    let mut report = RunReport::empty("dispatch", status.as_str(), echo(args, scenario.w_v));
    report.iterations = outcome.result.iterations;
    if let Some(sol) = &outcome.solution {
        report.fill(sol, &model, &scenario);
        if let Some(file) = SolutionFile::from_solution(sol, &model) {
            report.validation = Some(validate_solution(&file, &model, &scenario, flags)?);
            write_json(&args.out, "solution.json", &file)?;
        }
    }
    write_outputs(args, &report)?;
    write_json(
        &args.out,
        "timing.json",
        &Timing {
            build_seconds: outcome.build_seconds,
            solve_seconds: outcome.result.solve_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    log::info!(
        "dispatch: {} objective {:?} tight {} max rank ratio {:.2e}",
        status,
        report.objective,
        report.tight,
        report.rank_ratios.iter().copied().fold(0.0, f64::max)
    );
    Ok(status_exit_code(status, report.tight))
}

fn write_outputs(args: &Args, report: &RunReport) -> Result<(), CliError> {
    write_json(&args.out, "report.json", report)?;
    if !report.pcc.is_empty() {
        write_file(&args.out, "report.csv", &report.to_csv())?;
    }
    Ok(())
}

fn cmd_feasibility(args: &Args) -> Result<i32, CliError> {
    let (model, scenario) = load_inputs(args)?;
    let flags = ConstraintFlags::parse_list(&args.enable)?;
    let w_v = args.wv.unwrap_or(scenario.w_v);
    let outcome = pipeline::run(
        &model,
        &scenario,
        &DispatchProblem::feasibility(flags, w_v),
        &solver_config(args),
        args.rank_threshold,
    )?;
    let status = outcome.status();
    let mut report = RunReport::empty("feasibility", status.as_str(), echo(args, w_v));
    report.iterations = outcome.result.iterations;
    if let Some(sol) = &outcome.solution {
        report.fill(sol, &model, &scenario);
        let index = &outcome.matrices.index;
        for (t, s) in sol.slots.iter().enumerate() {
            for (k, n, p) in index.entries().skip(index.pcc_len()) {
                let node = &model.nodes[n];
                let vm = s.vmag[k];
                if vm < node.vmin || vm > node.vmax {
                    report.voltage_flags.push(VoltageFlag {
                        node: node.id.clone(),
                        phase: p.letter(),
                        slot: t + 1,
                        vmag_pu: vm,
                        vmin_pu: node.vmin,
                        vmax_pu: node.vmax,
                    });
                }
            }
        }
        report.proceed = Some(report.voltage_flags.is_empty());
        log::info!(
            "feasibility: {} flagged entries, proceed = {}",
            report.voltage_flags.len(),
            report.voltage_flags.is_empty()
        );
    }
    write_outputs(args, &report)?;
    Ok(status_exit_code(status, report.tight))
}

/// All level-index vectors over the switchable nodes, in lexicographic order.
fn switch_configurations(model: &FeederModel) -> Vec<Vec<usize>> {
    let sizes: Vec<usize> = model
        .nodes
        .iter()
        .filter(|n| !n.switch_levels.is_empty())
        .map(|n| n.switch_levels.len())
        .collect();
    let mut out = vec![Vec::new()];
    for &s in &sizes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..s).map(move |k| {
                    let mut v = prefix.clone();
                    v.push(k);
                    v
                })
            })
            .collect();
    }
    out
}

fn cmd_capsweep(args: &Args) -> Result<i32, CliError> {
    let (model, scenario) = load_inputs(args)?;
    let flags = ConstraintFlags::parse_list(&args.enable)?;
    let switchable: Vec<usize> = (0..model.nodes.len())
        .filter(|&n| !model.nodes[n].switch_levels.is_empty())
        .collect();
    if switchable.is_empty() {
        return Err(CliError::Input("no node declares switch levels".into()));
    }
    let configs = switch_configurations(&model);
    let config = solver_config(args);
    let problem = DispatchProblem::dispatch(flags);
    let results: Vec<Result<SweepEntry, CliError>> = configs
        .par_iter()
        .map(|levels| {
            let settings: Vec<(usize, [f64; 3])> = switchable
                .iter()
                .zip(levels)
                .map(|(&n, &k)| (n, model.nodes[n].switch_levels[k]))
                .collect();
            let m = model.with_capacitors(&settings);
            let outcome = pipeline::run(&m, &scenario, &problem, &config, args.rank_threshold)?;
            Ok(SweepEntry {
                levels: levels.clone(),
                status: outcome.status().as_str().to_string(),
                objective: outcome.solution.as_ref().map(|s| s.objective),
                tight: outcome.solution.as_ref().is_some_and(|s| s.tight),
            })
        })
        .collect();
    let sweep = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best = sweep
        .iter()
        .filter(|e| e.objective.is_some())
        .min_by(|a, b| {
            a.objective
                .unwrap()
                .total_cmp(&b.objective.unwrap())
                .then_with(|| a.levels.cmp(&b.levels))
        })
        .cloned();
    let mut report = RunReport::empty(
        "capsweep",
        best.as_ref().map_or("primal-infeasible", |b| b.status.as_str()),
        echo(args, scenario.w_v),
    );
    report.sweep = sweep;
    let code = match &best {
        Some(b) => {
            report.objective = b.objective;
            report.tight = b.tight;
            report.best_levels = Some(b.levels.clone());
            log::info!("capsweep: best levels {:?} objective {:?}", b.levels, b.objective);
            if b.tight {
                EXIT_OK
            } else {
                EXIT_NOT_TIGHT
            }
        }
        None => {
            log::warn!("capsweep: every configuration is infeasible");
            EXIT_INFEASIBLE
        }
    };
    write_outputs(args, &report)?;
    Ok(code)
}

fn cmd_validate(args: &Args) -> Result<i32, CliError> {
    let (model, scenario) = load_inputs(args)?;
    let flags = ConstraintFlags::parse_list(&args.enable)?;
    let path = args.solution.clone().unwrap_or_else(|| args.out.join("solution.json"));
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Input(format!("solution file {}: {e}", path.display())))?;
    let file: SolutionFile =
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let residuals = validate_solution(&file, &model, &scenario, flags)?;
    let flagged = residuals.flagged(VALIDATION_TOL);
    let mut report = RunReport::empty(
        "validate",
        if flagged.is_empty() { "clean" } else { "flagged" },
        echo(args, scenario.w_v),
    );
    report.objective = Some(file.objective);
    report.validation = Some(residuals);
    write_json(&args.out, "validation.json", &report)?;
    if flagged.is_empty() {
        log::info!("validate: all residuals below {VALIDATION_TOL:e}");
        Ok(EXIT_OK)
    } else {
        log::warn!("validate: flagged families {}", flagged.join(", "));
        Ok(EXIT_NOT_TIGHT)
    }
}

/// Replays every constraint family on the voltages and schedules of a
/// solution file.
pub fn validate_solution(
    file: &SolutionFile,
    model: &FeederModel,
    scenario: &HorizonScenario,
    flags: ConstraintFlags,
) -> Result<ValidationResiduals, CliError> {
    if scenario.slots == 0 || file.slots.is_empty() {
        return Err(CliError::Input("empty horizon".into()));
    }
    if file.slots.len() != scenario.slots {
        return Err(CliError::Input(format!(
            "solution has {} slots, scenario has {}",
            file.slots.len(),
            scenario.slots
        )));
    }
    let index = IndexMap::new(model);
    let m = index.pcc_len();
    let kva = model.bases.kva;
    let mw = model.bases.mw();
    let y = admittance_with_capacitors(model)?;
    let mut r = ValidationResiduals::default();
    let mut cost = 0.0;
    for (t, rec) in file.slots.iter().enumerate() {
        let v = rec.voltages();
        if v.len() != index.n_tot() || rec.elastic_kw.len() != model.elastic.len() || rec.dg_p_kw.len() != model.dg.len() {
            return Err(CliError::Input(format!("slot {}: record does not match the feeder", t + 1)));
        }
        let vv = cvec(&v);
        let s = power_mismatch(&y, &vv);
        let mut expected = Vec::with_capacity(v.len() - m);
        for (k, n, p) in index.entries() {
            let i = p.index();
            if n == 0 {
                r.pcc_voltage = r.pcc_voltage.max((v[k] - scenario.pcc_voltage[t][i]).norm());
                let eta = scenario.pcc_min_pf[t][i];
                if flags.pcc_pf && eta > 0.0 {
                    r.pcc_power_factor = r.pcc_power_factor.max(eta - power_factor(s[k].re, s[k].im));
                }
                cost += scenario.kappa[t] * mw * s[k].re;
                continue;
            }
            let el: f64 = model
                .elastic
                .iter()
                .zip(&rec.elastic_kw)
                .filter(|(e, _)| e.node == n && e.phase == p)
                .map(|(_, kw)| kw / kva)
                .sum();
            let (pg, qg) = match model.dg_at(n, p) {
                Some(d) => {
                    let dg = &model.dg[d];
                    let (pg, qg) = (rec.dg_p_kw[d][i] / kva, rec.dg_q_kvar[d][i] / kva);
                    let gap = [dg.pmin - pg, pg - dg.pmax, dg.qmin - qg, qg - dg.qmax];
                    r.generation_limits = gap.into_iter().fold(r.generation_limits, f64::max);
                    cost += scenario.dg_cost[d][t] * mw * pg;
                    (pg, qg)
                }
                None => (0.0, 0.0),
            };
            let want = Complex64::new(
                pg - scenario.p_load[t][n][i] - el,
                qg - scenario.q_load[t][n][i],
            );
            r.balance = r.balance.max((s[k] - want).norm());
            expected.push(want);
            let node = &model.nodes[n];
            let vm = v[k].norm();
            r.voltage_limits = r.voltage_limits.max(node.vmin - vm).max(vm - node.vmax);
        }
        if flags.thermal {
            for line in &model.lines {
                let Some(imax) = line.i_max else { continue };
                let zinv = line
                    .z
                    .clone()
                    .try_inverse()
                    .ok_or_else(|| CliError::Input("singular line impedance".into()))?;
                let dv: Vec<Complex64> = line
                    .phases
                    .iter()
                    .map(|p| {
                        v[index.row(model, line.from, p).unwrap()] - v[index.row(model, line.to, p).unwrap()]
                    })
                    .collect();
                let current = zinv * cvec(&dv);
                for c in current.iter() {
                    r.line_current = r.line_current.max(c.norm() - imax);
                }
            }
        }
        match zbus_fixed_point(&y, &expected, &v[..m], DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(lf) => {
                let dev = lf.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                r.loadflow = r.loadflow.max(dev);
            }
            Err(e) => {
                log::warn!("slot {}: load flow failed: {e}", t + 1);
                r.loadflow = f64::INFINITY;
            }
        }
    }
    r.cost = (cost - file.objective).abs() / file.objective.abs().max(1.0);
    Ok(r)
}

fn cvec(v: &[Complex64]) -> nalgebra::DVector<Complex64> {
    nalgebra::DVector::from_column_slice(v)
}
