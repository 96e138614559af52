use std::io::Write;
use std::path::{Path, PathBuf};

use otkit::discrepancy::{discrepancy, witness_eval};
use otkit::dither::{dither as run_dither, objective, DitherState};
use otkit::divergence::{
    default_epsilon_grid, divergence_solves, epsilon_sweep, format_sweep_csv, s_infinity, witness_from_limits,
};
use otkit::exact_ot::exact_ot;
use otkit::kernels::{CostKind, CostSpec, KernelSpec};
use otkit::measures::{format_measure, format_point_values, BoundingBox, DiscreteMeasure};
use otkit::sinkhorn::{contraction_estimate, limit_potential_at, ot_infinity, softmin, solve};
use serde_json::{json, Value};

use crate::config::{
    load, read_measure, resolve, ComputeConfig, ComputeKind, DitherRunConfig, PotentialsConfig, SweepConfig,
};
use crate::CliError;

pub struct Options<'a> {
    pub config: &'a Path,
    pub sets: &'a [String],
    pub allow_partial: bool,
    pub seed: Option<u64>,
}

impl Options<'_> {
    fn base(&self) -> PathBuf {
        self.config.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(contents)?;
    f.sync_all()?;
    drop(f);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn emit_json(base: &Path, output: Option<&PathBuf>, value: &Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize") + "\n";
    match output {
        Some(p) => write_atomic(&resolve(base, p), text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// JSON has no infinity; the ε = ∞ limit is written as the string "inf".
fn json_eps(eps: f64) -> Value {
    if eps.is_finite() {
        json!(eps)
    } else {
        json!("inf")
    }
}

fn kernel_of(cost: &CostSpec, bbox: &BoundingBox) -> Option<KernelSpec> {
    cost.as_kernel(bbox)
}

fn partial_or_fail(allow_partial: bool, converged: bool, what: impl FnOnce() -> otkit::Error) -> Result<(), CliError> {
    if converged || allow_partial {
        Ok(())
    } else {
        Err(CliError::Solver(what()))
    }
}

pub fn compute(opts: &Options) -> Result<(), CliError> {
    let cfg: ComputeConfig = load(opts.config, opts.sets)?;
    let base = opts.base();
    let bbox = cfg.bbox.build()?;
    let mu = read_measure(&base, &cfg.mu, "mu", &bbox)?;
    let nu = read_measure(&base, &cfg.nu, "nu", &bbox)?;
    let cost = cfg.cost.build(&bbox)?;
    let (value, diagnostics, converged) = match cfg.kind {
        ComputeKind::OtExact => {
            let r = exact_ot(&cost, &mu, &nu)?;
            let diag = json!({ "pivots": r.pivots, "dual_value": r.dual_value(&mu, &nu) });
            (r.value, diag, true)
        }
        ComputeKind::OtEps => {
            let s = solve(&cost, &mu, &nu, &cfg.sinkhorn.build(None)?)?;
            partial_or_fail(opts.allow_partial, s.converged, || {
                s.ensure_converged("OT_eps(mu,nu)").unwrap_err()
            })?;
            let kappa = contraction_estimate(&cost, &bbox, s.potentials.epsilon).kappa;
            let diag = serde_json::to_value(s.diagnostics(kappa)).expect("serializable");
            (s.value, diag, s.converged)
        }
        ComputeKind::SEps => {
            let solves = divergence_solves(&cost, &mu, &nu, &cfg.sinkhorn.build(None)?)?;
            partial_or_fail(opts.allow_partial, solves.converged(), || {
                solves.ensure_converged().unwrap_err()
            })?;
            let r = solves.result();
            let diag = json!({
                "epsilon": r.epsilon,
                "ot_mu_nu": r.ot_mu_nu,
                "ot_mu_mu": r.ot_mu_mu,
                "ot_nu_nu": r.ot_nu_nu,
                "iterations": [solves.cross.iterations, solves.self_mu.iterations, solves.self_nu.iterations],
                "duality_gap": solves.cross.duality_gap,
            });
            (r.s_eps, diag, solves.converged())
        }
        ComputeKind::Discrepancy => {
            let k = match &cfg.kernel {
                Some(k) => k.build(&bbox).map_err(|e| CliError::config("kernel", e))?,
                None => kernel_of(&cost, &bbox)
                    .ok_or_else(|| CliError::Config("kernel: missing and the cost is not of the form -K".into()))?,
            };
            let d = discrepancy(&k, &mu, &nu)?;
            (d.value, serde_json::to_value(d).expect("serializable"), true)
        }
        ComputeKind::SInf => {
            let cost = match cost.kind() {
                CostKind::NegatedKernel(_) => cost.clone(),
                _ => CostSpec::negated_kernel(
                    kernel_of(&cost, &bbox).ok_or_else(|| CliError::config("cost", otkit::Error::NotNegatedKernel))?,
                ),
            };
            let v = s_infinity(&cost, &mu, &nu)?;
            (v, json!({ "epsilon": "inf", "ot_inf": ot_infinity(&cost, &mu, &nu).ot_inf }), true)
        }
    };
    let out = json!({
        "value": value,
        "kind": cfg.kind.name(),
        "converged": converged,
        "diagnostics": diagnostics,
    });
    emit_json(&base, cfg.output.as_ref(), &out)
}

pub fn sweep(opts: &Options) -> Result<(), CliError> {
    let cfg: SweepConfig = load(opts.config, opts.sets)?;
    let base = opts.base();
    let bbox = cfg.bbox.build()?;
    let mu = read_measure(&base, &cfg.mu, "mu", &bbox)?;
    let nu = read_measure(&base, &cfg.nu, "nu", &bbox)?;
    let cost = cfg.cost.build(&bbox)?;
    let grid = cfg.epsilons.clone().unwrap_or_else(default_epsilon_grid);
    let template = cfg.sinkhorn.build(Some(grid.first().copied().unwrap_or(1.0)))?;
    let records = epsilon_sweep(&cost, &mu, &nu, &grid, &template).map_err(|e| match e {
        otkit::Error::InvalidParameter(msg) => CliError::Config(format!("epsilons: {msg}")),
        other => other.into(),
    })?;
    let failed: Vec<f64> = records.iter().filter(|r| !r.converged).map(|r| r.epsilon).collect();
    if !failed.is_empty() {
        eprintln!("warning: Sinkhorn did not converge at epsilon {failed:?}");
        partial_or_fail(opts.allow_partial, false, || otkit::Error::NotConverged {
            term: format!("sweep at epsilon {}", failed[0]),
            iterations: template.max_iter,
            residual: f64::NAN,
        })?;
    }
    let csv = format_sweep_csv(&records);
    match &cfg.output {
        Some(p) => write_atomic(&resolve(&base, p), csv.as_bytes()),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn trace_lines(state: &DitherState) -> String {
    let mut out = String::new();
    for t in &state.trace {
        out.push_str(&serde_json::to_string(t).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn dither(opts: &Options) -> Result<(), CliError> {
    let run: DitherRunConfig = load(opts.config, opts.sets)?;
    let base = opts.base();
    let bbox = run.bbox.build()?;
    let target = read_measure(&base, &run.target, "target", &bbox)?;
    let cfg = run.build(&bbox, opts.seed)?;
    if target.dim() != bbox.dim() {
        return Err(CliError::Config("target: dimension does not match the box".into()));
    }
    let warnings = cfg.warnings(&target);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let initial = objective(&cfg, &target, &cfg.initial_positions())?;
    let state = run_dither(&cfg, &target)?;
    let measure: DiscreteMeasure = state.measure()?;
    write_atomic(&resolve(&base, &run.output), format_measure(&measure).as_bytes())?;
    write_atomic(&resolve(&base, &run.trace), trace_lines(&state).as_bytes())?;
    let last = state.trace.last().expect("trace holds the initial state");
    let summary = json!({
        "energy": state.energy,
        "initial_energy": initial,
        "epsilon": json_eps(cfg.epsilon),
        "M": cfg.m,
        "seed": cfg.seed,
        "iterations": last.iter,
        "grad_norm": last.grad_norm,
        "converged": state.converged(),
        "termination": state.termination,
        "warnings": warnings,
    });
    emit_json(&base, run.summary.as_ref(), &summary)
}

pub fn potentials(opts: &Options) -> Result<(), CliError> {
    let cfg: PotentialsConfig = load(opts.config, opts.sets)?;
    let base = opts.base();
    let bbox = cfg.bbox.build()?;
    let mu = read_measure(&base, &cfg.mu, "mu", &bbox)?;
    let nu = read_measure(&base, &cfg.nu, "nu", &bbox)?;
    let cost = cfg.cost.build(&bbox)?;
    let sk = cfg.sinkhorn.build(None)?;
    if cfg.grid.n_per_axis == 0 {
        return Err(CliError::Config("grid.n_per_axis: must be positive".into()));
    }
    let s = solve(&cost, &mu, &nu, &sk)?;
    partial_or_fail(opts.allow_partial, s.converged, || {
        s.ensure_converged("OT_eps(mu,nu)").unwrap_err()
    })?;
    let dir = resolve(&base, &cfg.output_dir);
    let eps = s.potentials.epsilon;
    let limits = ot_infinity(&cost, &mu, &nu);
    let grid = bbox.grid(cfg.grid.n_per_axis);

    // Softmin extensions of the potentials to the grid.
    let phi_grid = softmin(&cost, &nu, &s.potentials.psi, eps, &grid)?;
    let psi_grid = softmin(&cost, &mu, &s.potentials.phi, eps, &grid)?;
    let diff: Vec<f64> = phi_grid.iter().zip(&psi_grid).map(|(a, b)| a - b).collect();
    let phi_inf_grid = limit_potential_at(&cost, &nu, limits.ot_inf, &grid);
    let psi_inf_grid = limit_potential_at(&cost, &mu, limits.ot_inf, &grid);
    let diff_inf: Vec<f64> = phi_inf_grid.iter().zip(&psi_inf_grid).map(|(a, b)| a - b).collect();

    let mut files = vec![
        ("phi.txt", format_point_values(mu.points(), &s.potentials.phi)),
        ("psi.txt", format_point_values(nu.points(), &s.potentials.psi)),
        ("phi_inf.txt", format_point_values(mu.points(), &limits.phi_inf)),
        ("psi_inf.txt", format_point_values(nu.points(), &limits.psi_inf)),
        ("diff.txt", format_point_values(&grid, &diff)),
        ("diff_inf.txt", format_point_values(&grid, &diff_inf)),
    ];
    let mut notes = Vec::new();
    match kernel_of(&cost, &bbox) {
        Some(k) => match (
            witness_eval(&k, &mu, &nu, &grid),
            witness_from_limits(&k, &bbox, &mu, &nu, &grid),
        ) {
            (Ok(w), Ok(wl)) => {
                files.push(("witness.txt", format_point_values(&grid, &w)));
                files.push(("witness_limits.txt", format_point_values(&grid, &wl)));
            }
            (Err(e), _) | (_, Err(e)) => notes.push(format!("witness skipped: {e}")),
        },
        None => notes.push("witness skipped: the cost is not of the form -K".to_string()),
    }
    for (name, text) in &files {
        write_atomic(&dir.join(name), text.as_bytes())?;
    }
    let kappa = contraction_estimate(&cost, &bbox, eps).kappa;
    let summary = json!({
        "diagnostics": s.diagnostics(kappa),
        "converged": s.converged,
        "ot_inf": limits.ot_inf,
        "files": files.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
        "notes": notes,
    });
    write_atomic(
        &dir.join("summary.json"),
        (serde_json::to_string_pretty(&summary).expect("serializable") + "\n").as_bytes(),
    )
}
