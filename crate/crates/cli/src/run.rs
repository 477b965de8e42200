//! `run`, `audit` and `eig`: solve, partition, diagnose, and write artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use specpart_core::diagnostics::{
    interface_midpoint, monotonicity, radii_in_steps, DedrPoint, DiagOptions, FieldSet, Monotonicity,
    PohozaevTerms, ProbeSummary,
};
use specpart_core::eigensolve::{lowest_eigenpairs, EigenOptions};
use specpart_core::energy::PartitionState;
use specpart_core::frame::FieldFrame;
use specpart_core::grid::{discrete_rectangle_eigenvalue, Domain};
use specpart_core::optimizer::{restart_seeds, solve_best_of, summarize};
use specpart_core::partition::{compare_levels, partition, CellExtraction, ExtractOptions};
use specpart_core::{AlmgrenSample64, PartitionResult64, SolveReport64};

use crate::artifacts::{self, columns, join, KeyValues, SpfFields};
use crate::config::{FieldSource, RunConfig, ShapeSpec};
use crate::error::CliError;

/// Diagnostics of one field source at one center.
#[derive(Debug, Clone)]
pub struct SourceReport {
    pub name: &'static str,
    pub center: (f64, f64),
    pub almgren: AlmgrenSample64,
    pub monotonicity: Monotonicity<f64>,
    pub dedr: Vec<DedrPoint<f64>>,
    pub pohozaev: Vec<PohozaevTerms<f64>>,
    pub probes: ProbeSummary<f64>,
}

/// What a finished command leaves behind.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub dir: PathBuf,
    pub summary: KeyValues,
    pub diagnostics: Vec<SourceReport>,
}

fn eigen_options(cfg: &RunConfig) -> EigenOptions<f64> {
    EigenOptions {
        tol: cfg.solver.eig_tol,
        max_iter: cfg.solver.eig_max_iter,
        ..EigenOptions::default()
    }
}

fn extract_options(cfg: &RunConfig) -> ExtractOptions<f64> {
    ExtractOptions {
        threshold_rel: cfg.partition.threshold,
        smoothing: cfg.partition.smoothing,
    }
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    artifacts::write(dir, name, contents).map_err(|e| CliError::io(&dir.join(name), e))
}

/// Records a failed stage in `summary.txt` and returns its error.
fn fail(dir: &Path, mode: &str, stage: &str, err: CliError) -> CliError {
    let mut kv = KeyValues::default();
    kv.push("status", "failed");
    kv.push("mode", mode);
    kv.push("failed_stage", stage);
    kv.push("exit_code", err.exit_code());
    kv.push("error", &err);
    match write(dir, "summary.txt", kv.render()) {
        Ok(()) => err,
        Err(io) => io,
    }
}

/// Full pipeline: best-of-n solve, partition, diagnostics, artifacts.
pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let dir = cfg.output.dir.clone();
    prepare_dir(&dir)?;
    let domain = cfg.build_domain()?;
    let costs = cfg.costs()?;
    let seeds = restart_seeds(cfg.solver.seed, cfg.solver.restarts);
    let t = Instant::now();
    let (state, report) = solve_best_of(&domain, &costs, cfg.solver.q, &cfg.schedule(), &seeds)
        .map_err(|e| fail(&dir, "run", "solve", CliError::from_core(&e)))?;
    eprintln!(
        "solved {} restart(s) in {:.1?}; best seed {} with energy {}",
        seeds.len(),
        t.elapsed(),
        report.seed,
        report.final_energy()
    );
    finish(cfg, &domain, &state, &report, "run")
}

/// Partition and diagnostics of a saved state; β and the costs are taken
/// from the last rungs of the configured ladders.
pub fn audit(spf: &Path, cfg: &RunConfig) -> Result<Outcome, CliError> {
    let dir = cfg.output.dir.clone();
    let bytes = std::fs::read(spf).map_err(|e| CliError::io(spf, e))?;
    let fields = SpfFields::from_bytes(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", spf.display())))?;
    let domain = cfg.build_domain()?;
    if fields.ks() != cfg.groups.k {
        return Err(CliError::Config(format!(
            "groups.k = {} but {} holds groups of sizes {}",
            join(&cfg.groups.k),
            spf.display(),
            join(&fields.ks())
        )));
    }
    let groups = fields
        .to_dofs(&domain.grid)
        .map_err(|e| CliError::Config(format!("{}: {e}", spf.display())))?;
    prepare_dir(&dir)?;
    let beta = *cfg.solver.beta_ladder.last().expect("validated nonempty");
    let state = PartitionState::new(
        groups.into_iter().map(FieldFrame::new).collect(),
        cfg.final_costs()?,
        beta,
        cfg.solver.q,
    )
    .map_err(|e| CliError::Io(format!("{}: {e}", spf.display())))?;
    let report = summarize(&domain, &state, cfg.solver.seed, Vec::new())
        .map_err(|e| fail(&dir, "audit", "summarize", CliError::from_core(&e)))?;
    finish(cfg, &domain, &state, &report, "audit")
}

fn finish(
    cfg: &RunConfig,
    domain: &Domain<f64>,
    state: &PartitionState<f64>,
    report: &SolveReport64,
    mode: &str,
) -> Result<Outcome, CliError> {
    let dir = cfg.output.dir.clone();
    let result = partition(domain, state, report, &extract_options(cfg), &eigen_options(cfg))
        .map_err(|e| fail(&dir, mode, "partition", CliError::from_core(&e)))?;
    let diag = if cfg.diagnostics.enabled {
        Some(diagnose(cfg, domain, state, report, &result))
    } else {
        None
    };
    let diag_err = match &diag {
        Some(Err(e)) => Some(e.clone()),
        _ => None,
    };
    let reports = match diag {
        Some(Ok(r)) => r,
        _ => Vec::new(),
    };

    let summary = summary(cfg, domain, report, &result, mode, diag_err.as_ref());
    write(&dir, "summary.txt", summary.render())?;
    for (i, mask) in result.cell_masks.iter().enumerate() {
        write(&dir, &format!("cells_{}.spmask", i + 1), mask.to_spmask(domain.h()))?;
    }
    if cfg.output.fields {
        let groups: Vec<Vec<Vec<f64>>> = state.groups.iter().map(|g| g.fields.clone()).collect();
        write(&dir, "fields.spf", SpfFields::from_dofs(&domain.grid, &groups).to_bytes())?;
    }
    if cfg.output.plotdata {
        write_plotdata(&dir, domain, state, report, &result, &reports)?;
    }
    if cfg.diagnostics.enabled {
        write(&dir, "diag.txt", diag_text(&reports, diag_err.as_ref()).render())?;
    }
    match diag_err {
        Some(e) => Err(e),
        None => Ok(Outcome {
            dir,
            summary,
            diagnostics: reports,
        }),
    }
}

/// Lattice node nearest the centroid of the mask among nodes at least
/// `clearance` from the boundary.
fn interior_center(domain: &Domain<f64>, clearance: f64) -> Option<(usize, usize)> {
    let grid = &domain.grid;
    let n = grid.dofs() as f64;
    let (cx, cy) = (0..grid.dofs())
        .map(|d| grid.dof_position(d))
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let floor = clearance - 1e-9 * domain.h();
    (0..grid.dofs())
        .filter(|&d| grid.boundary_distance(d) >= floor)
        .min_by(|&a, &b| {
            let da = grid.dof_position(a);
            let db = grid.dof_position(b);
            let ka = (da.0 - cx).powi(2) + (da.1 - cy).powi(2);
            let kb = (db.0 - cx).powi(2) + (db.1 - cy).powi(2);
            ka.total_cmp(&kb).then(a.cmp(&b))
        })
        .map(|d| grid.nodes()[d])
}

fn diag_error(e: specpart_core::Error) -> CliError {
    CliError::from_core(&e)
}

/// Frequency scan, energy identity, Pohozaev balance and interface probes
/// for each configured field source.
pub fn diagnose(
    cfg: &RunConfig,
    domain: &Domain<f64>,
    state: &PartitionState<f64>,
    report: &SolveReport64,
    result: &PartitionResult64,
) -> Result<Vec<SourceReport>, CliError> {
    let d = &cfg.diagnostics;
    let h = domain.h();
    let cells = CellExtraction {
        cell_masks: result.cell_masks.clone(),
        interface_mask: result.interface_mask.clone(),
    };
    // Without a configured center, shrink the outer radius until a
    // suitable node keeps every sample circle inside the domain.
    let (center, r_max) = match d.center {
        Some(c) => (c, d.r_max),
        None => {
            let found = (d.r_min + 1..=d.r_max).rev().find_map(|s| {
                let clearance = s as f64 * h;
                let node = if state.m() > 1 {
                    interface_midpoint(domain, &cells, clearance)
                } else {
                    interior_center(domain, clearance)
                };
                node.map(|n| (domain.grid.position(n.0, n.1), s))
            });
            found.ok_or_else(|| {
                CliError::Diagnostics(format!(
                    "no sample center lies {} grid steps from the boundary",
                    d.r_min + 1
                ))
            })?
        }
    };
    let radii = radii_in_steps(h, d.r_min, r_max);
    let opts = DiagOptions {
        interaction: d.interaction,
        ..DiagOptions::default()
    };
    let mut sources: Vec<(&'static str, FieldSet<f64>)> = Vec::new();
    if matches!(d.fields, FieldSource::Relaxed | FieldSource::Both) {
        let fs = FieldSet::from_state(domain, state, &report.multipliers, opts).map_err(diag_error)?;
        sources.push(("relaxed", fs));
    }
    if matches!(d.fields, FieldSource::Cells | FieldSource::Both) {
        let fs = FieldSet::from_cells(domain, &result.cell_eigs, &state.costs, opts).map_err(diag_error)?;
        sources.push(("cells", fs));
    }
    let mut out = Vec::with_capacity(sources.len());
    for (name, fs) in sources {
        let almgren = fs.almgren_scan(center, &radii).map_err(diag_error)?;
        let mono = monotonicity(&almgren, fs.monotonicity_constant());
        let dedr = fs.dedr_identity_residual(center, &radii).map_err(diag_error)?;
        let pohozaev = radii
            .iter()
            .map(|&r| fs.pohozaev_residual(center, r))
            .collect::<Result<Vec<_>, _>>()
            .map_err(diag_error)?;
        let probes = if state.m() > 1 {
            fs.interface_gradient_match(&cells, d.probes, d.probe_distance * h)
        } else {
            ProbeSummary {
                probes: Vec::new(),
                singular: 0,
                unresolved: 0,
                median_mismatch: 0.0,
                all_positive: true,
            }
        };
        out.push(SourceReport {
            name,
            center,
            almgren,
            monotonicity: mono,
            dedr,
            pohozaev,
            probes,
        });
    }
    Ok(out)
}

fn shape_text(cfg: &RunConfig) -> String {
    match &cfg.domain.shape {
        ShapeSpec::Rectangle { width, height } => format!("rectangle {width} {height}"),
        ShapeSpec::Disk { radius } => format!("disk {radius}"),
        ShapeSpec::Custom { path } => format!("custom {}", path.display()),
    }
}

/// All report and partition scalars in a fixed key order.
pub fn summary(
    cfg: &RunConfig,
    domain: &Domain<f64>,
    report: &SolveReport64,
    result: &PartitionResult64,
    mode: &str,
    diag_err: Option<&CliError>,
) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.push("status", if diag_err.is_some() { "diagnostics_degenerate" } else { "ok" });
    kv.push("mode", mode);
    kv.push("shape", shape_text(cfg));
    kv.push("h", domain.h());
    kv.push("nx", domain.grid.nx());
    kv.push("ny", domain.grid.ny());
    kv.push("dofs", domain.dofs());
    kv.push("m", cfg.groups.m);
    kv.push_list("k", &cfg.groups.k);
    kv.push("cost", cfg.groups.cost);
    kv.push("q", cfg.solver.q);
    kv.push("restarts", cfg.solver.restarts);
    kv.push("seed", report.seed);
    kv.push("stages", report.stages.len());
    for (s, st) in report.stages.iter().enumerate() {
        let p = format!("stage.{}", s + 1);
        kv.push(format!("{p}.beta"), st.beta);
        kv.push(format!("{p}.p"), st.p.map_or("none".to_string(), |p| p.to_string()));
        kv.push(format!("{p}.energy_start"), st.energy_start);
        kv.push(format!("{p}.energy_end"), st.energy_end);
        kv.push(format!("{p}.penalty_integral"), st.penalty_integral);
        kv.push(format!("{p}.residual_l2"), st.residuals.iter().map(|r| r.l2).fold(0.0, f64::max));
        kv.push(format!("{p}.residual_h1"), st.residuals.iter().map(|r| r.h1).fold(0.0, f64::max));
        kv.push(format!("{p}.iterations"), st.iterations);
        kv.push(format!("{p}.grad_rel"), st.grad_rel);
        kv.push(format!("{p}.converged"), st.converged);
        kv.push(format!("{p}.line_search_failed"), st.line_search_failed);
    }
    let gap = compare_levels(result);
    kv.push("objective_relaxed", result.objective_relaxed);
    kv.push("penalty", result.penalty);
    kv.push("penalty_integral", result.penalty_integral);
    kv.push("objective_partition", result.objective_partition);
    kv.push("objective_main", result.objective_main);
    kv.push("level_gap", gap.gap);
    kv.push("level_alarm", gap.alarm);
    kv.push("level_excess", gap.excess);
    kv.push("interface_nodes", result.interface_mask.count());
    for i in 0..result.cell_masks.len() {
        let p = format!("group.{}", i + 1);
        let mu = &result.multipliers.mu[i];
        kv.push(format!("{p}.cell_nodes"), result.cell_masks[i].count());
        kv.push_list(format!("{p}.cell_eigs"), &result.cell_eigs[i].values);
        kv.push(format!("{p}.top_eig"), result.top_eigs[i]);
        kv.push_list(format!("{p}.energies"), &report.energies[i]);
        kv.push_list(format!("{p}.weights"), &result.weights[i]);
        kv.push(format!("{p}.selection"), result.selection[i]);
        kv.push(format!("{p}.discarded"), result.selection[i] - 1);
        kv.push(format!("{p}.block_spread"), report.block_spread[i]);
        kv.push_list(format!("{p}.mu_diag"), &mu.diag());
        kv.push(format!("{p}.mu_offdiag_max"), mu.max_abs_offdiag());
    }
    if let Some(e) = diag_err {
        kv.push("diagnostics_error", e);
    }
    kv
}

pub fn diag_text(reports: &[SourceReport], err: Option<&CliError>) -> KeyValues {
    let mut kv = KeyValues::default();
    kv.push("status", if err.is_some() { "degenerate" } else { "ok" });
    if let Some(e) = err {
        kv.push("error", e);
    }
    let names: Vec<&str> = reports.iter().map(|r| r.name).collect();
    kv.push_list("sources", &names);
    for r in reports {
        let p = r.name;
        let a = &r.almgren;
        kv.push(format!("{p}.center"), format!("{} {}", r.center.0, r.center.1));
        kv.push_list(format!("{p}.radii"), &a.radii);
        kv.push_list(format!("{p}.E"), &a.e_vals);
        kv.push_list(format!("{p}.H"), &a.h_vals);
        kv.push_list(format!("{p}.N"), &a.n_vals);
        kv.push(format!("{p}.singular_candidates"), a.singular_candidates().len());
        kv.push(format!("{p}.monotonicity_c"), r.monotonicity.c);
        kv.push(format!("{p}.monotonicity_max_drop"), r.monotonicity.max_drop);
        let dedr: Vec<f64> = r.dedr.iter().map(|d| d.residual).collect();
        kv.push_list(format!("{p}.dedr_residual"), &dedr);
        kv.push(format!("{p}.dedr_max"), dedr.iter().copied().fold(0.0, f64::max));
        let poh: Vec<f64> = r.pohozaev.iter().map(|t| t.residual).collect();
        kv.push_list(format!("{p}.pohozaev_residual"), &poh);
        kv.push(format!("{p}.pohozaev_max"), poh.iter().copied().fold(0.0, f64::max));
        kv.push(format!("{p}.probes"), r.probes.probes.len());
        kv.push(format!("{p}.probes_singular"), r.probes.singular);
        kv.push(format!("{p}.probes_unresolved"), r.probes.unresolved);
        kv.push(format!("{p}.median_mismatch"), r.probes.median_mismatch);
        kv.push(format!("{p}.all_positive"), r.probes.all_positive);
        for (i, pr) in r.probes.probes.iter().enumerate() {
            kv.push(
                format!("{p}.probe.{}", i + 1),
                format!(
                    "{} {} {} {} {} {} {} {} {}",
                    pr.point.0,
                    pr.point.1,
                    pr.normal.0,
                    pr.normal.1,
                    pr.cells.0 + 1,
                    pr.cells.1 + 1,
                    pr.sides.0,
                    pr.sides.1,
                    pr.mismatch
                ),
            );
        }
    }
    kv
}

fn write_plotdata(
    dir: &Path,
    domain: &Domain<f64>,
    state: &PartitionState<f64>,
    report: &SolveReport64,
    result: &PartitionResult64,
    reports: &[SourceReport],
) -> Result<(), CliError> {
    let grid = &domain.grid;
    let h = domain.h();
    if !report.stages.is_empty() {
        let rows: Vec<Vec<f64>> = report
            .stages
            .iter()
            .enumerate()
            .map(|(s, st)| {
                vec![
                    (s + 1) as f64,
                    st.beta,
                    st.p.unwrap_or(f64::NAN),
                    st.energy_start,
                    st.energy_end,
                    st.penalty_integral,
                    st.iterations as f64,
                    st.grad_rel,
                ]
            })
            .collect();
        let header = ["stage", "beta", "p", "energy_start", "energy_end", "penalty_integral", "iterations", "grad_rel"];
        write(dir, "plotdata_stages.dat", columns(&header, &rows))?;
    }

    // density slices through the diagnostics center, or the lattice middle
    let center = reports.first().map(|r| r.center);
    let ci = center.map_or(grid.nx() / 2, |c| ((c.0 / h).round() as usize).saturating_sub(1).min(grid.nx() - 1));
    let cj = center.map_or(grid.ny() / 2, |c| ((c.1 / h).round() as usize).saturating_sub(1).min(grid.ny() - 1));
    let lattices: Vec<Vec<f64>> = state.densities().iter().map(|r| grid.to_lattice(r)).collect();
    let names: Vec<String> = (1..=state.m()).map(|i| format!("rho_{i}")).collect();
    let slice = |coord: &str, fixed_row: bool| {
        let n = if fixed_row { grid.nx() } else { grid.ny() };
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|t| {
                let (i, j) = if fixed_row { (t, cj) } else { (ci, t) };
                let mut row = vec![(t + 1) as f64 * h];
                row.extend(lattices.iter().map(|l| l[j * grid.nx() + i]));
                row
            })
            .collect();
        let mut header = vec![coord];
        header.extend(names.iter().map(String::as_str));
        columns(&header, &rows)
    };
    write(dir, "plotdata_slice_x.dat", slice("x", true))?;
    write(dir, "plotdata_slice_y.dat", slice("y", false))?;

    let iface: Vec<Vec<f64>> = grid
        .nodes()
        .iter()
        .filter(|&&(i, j)| result.interface_mask.get(i, j))
        .map(|&(i, j)| {
            let (x, y) = grid.position(i, j);
            vec![x, y]
        })
        .collect();
    write(dir, "plotdata_interface.dat", columns(&["x", "y"], &iface))?;

    for r in reports {
        let a = &r.almgren;
        let rows: Vec<Vec<f64>> = (0..a.radii.len())
            .map(|t| {
                vec![
                    a.radii[t],
                    a.e_vals[t],
                    a.h_vals[t],
                    a.n_vals[t],
                    r.dedr[t].fd,
                    r.dedr[t].rhs,
                    r.dedr[t].residual,
                    r.pohozaev[t].residual,
                ]
            })
            .collect();
        let header = ["r", "E", "H", "N", "dEdr_fd", "dEdr_rhs", "dEdr_residual", "pohozaev_residual"];
        write(dir, &format!("plotdata_almgren_{}.dat", r.name), columns(&header, &rows))?;
    }
    Ok(())
}

/// Lowest eigenvalues of the configured domain, `Σk_i` of them, with the
/// closed-form discrete spectrum alongside for rectangles.
pub fn eig(cfg: &RunConfig) -> Result<KeyValues, CliError> {
    let domain = cfg.build_domain()?;
    let k: usize = cfg.groups.k.iter().sum();
    let t = Instant::now();
    let res = lowest_eigenpairs(&domain, None, k, &eigen_options(cfg)).map_err(|e| CliError::from_core(&e))?;
    eprintln!("eigensolve: {} iterations in {:.1?}", res.iterations, t.elapsed());
    let mut kv = KeyValues::default();
    kv.push("shape", shape_text(cfg));
    kv.push("h", domain.h());
    kv.push("dofs", domain.dofs());
    kv.push("k", k);
    kv.push_list("eigenvalues", &res.values);
    kv.push_list("residuals", &res.residuals);
    if let ShapeSpec::Rectangle { .. } = cfg.domain.shape {
        let h = domain.h();
        let (a, b) = ((domain.grid.nx() + 1) as f64 * h, (domain.grid.ny() + 1) as f64 * h);
        let mut exact: Vec<f64> = (1..=k)
            .flat_map(|p| (1..=k).map(move |q| discrete_rectangle_eigenvalue(a, b, h, p, q)))
            .collect();
        exact.sort_by(f64::total_cmp);
        exact.truncate(k);
        let rel: Vec<f64> = res.values.iter().zip(&exact).map(|(v, e)| (v - e).abs() / e).collect();
        kv.push_list("closed_form", &exact);
        kv.push_list("relative_error", &rel);
    }
    Ok(kv)
}
