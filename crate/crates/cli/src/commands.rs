use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ccm_core::realize::{ControlLaw, IssConstants, ObserverLaw};
use ccm_core::sdp::SolveOptions;
use ccm_core::sim::{decay_rate, overshoot, run_open_loop, run_output_feedback, run_state_feedback, SimTrace};
use ccm_core::synth::{synthesize, verify_pointwise, GridBox, Metric, MetricFile, Role, SynthOutcome, SystemModel};
use clap::ValueEnum;
use serde::Serialize;

use crate::config::{self, LoadedConfig};
use crate::plots;

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok,
    Inconclusive,
    Infeasible,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::Infeasible => 2,
            Status::Inconclusive => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Mode {
    Open,
    StateFb,
    OutputFb,
}

impl Mode {
    fn label(self) -> &'static str {
        match self {
            Mode::Open => "open",
            Mode::StateFb => "state_fb",
            Mode::OutputFb => "output_fb",
        }
    }
}

fn metric_path(dir: &Path, role: Role) -> PathBuf {
    dir.join(format!("{role}.toml"))
}

fn infeasible_path(dir: &Path, role: Role) -> PathBuf {
    dir.join(format!("{role}.infeasible.toml"))
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e).with_context(|| format!("removing stale {}", path.display())),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct InfeasibleFile<'a> {
    role: Role,
    lambda: f64,
    alpha1: f64,
    alpha2: f64,
    message: &'a str,
    /// Farkas multipliers, one per compiled equality
    certificate: &'a [f64],
}

pub fn synthesize_cmd(config_arg: &str, out: Option<PathBuf>) -> Result<Status> {
    let cfg = config::load(config_arg)?;
    let dir = out.unwrap_or_else(|| cfg.config.output.dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut report = format!("synthesis report for {}\n", cfg.source);
    let mut status = Status::Ok;
    // both roles are always attempted, so an infeasible controller still yields an observer verdict
    for (role, section) in [(Role::Controller, cfg.config.controller), (Role::Observer, cfg.config.observer)] {
        let params = section.params();
        let synth = synthesize(&cfg.model, role, &params, &SolveOptions::default()).map_err(|e| anyhow!("{role}: {e}"))?;
        let s = &synth.stats;
        let _ = writeln!(report, "\n[{role}]");
        let _ = writeln!(report, "lambda = {}, alpha1 = {}, alpha2 = {}, rho degree = {}", params.lambda, params.alpha1, params.alpha2, params.rho_degree);
        let _ = writeln!(
            report,
            "matrix blocks = {}, scalar variables = {}, equality constraints = {}, gram entries = {}",
            s.compile.matrix_blocks, s.compile.scalar_variables, s.compile.equalities, s.compile.gram_entries
        );
        for (name, full, kept) in &s.gram_sizes {
            let _ = writeln!(report, "gram basis '{name}': {kept} of {full} monomials kept");
        }
        let _ = writeln!(report, "solver iterations = {}, wall time = {:.6} s, solver message: {}", s.iterations, s.seconds, s.solver_message);
        let target = metric_path(&dir, role);
        let infeasible = infeasible_path(&dir, role);
        match &synth.outcome {
            SynthOutcome::Feasible(metric) => {
                fs::write(&target, MetricFile::new(metric, &cfg.model).to_toml()).with_context(|| format!("writing {}", target.display()))?;
                remove_if_present(&infeasible)?;
                describe_metric(&mut report, metric, cfg.model.names());
                if let Some((mismatch, eig)) = synth.certificate_residual {
                    let _ = writeln!(report, "certificate residual: coefficient mismatch {mismatch:.3e}, negative eigenvalue {eig:.3e}");
                }
                let _ = writeln!(report, "status = feasible, metric written to {}", target.display());
            }
            SynthOutcome::Infeasible(cert) => {
                let doc = InfeasibleFile {
                    role,
                    lambda: params.lambda,
                    alpha1: params.alpha1,
                    alpha2: params.alpha2,
                    message: &s.solver_message,
                    certificate: cert,
                };
                fs::write(&infeasible, toml::to_string(&doc)?).with_context(|| format!("writing {}", infeasible.display()))?;
                remove_if_present(&target)?;
                let _ = writeln!(report, "status = infeasible, certificate written to {}", infeasible.display());
                status = status.max(Status::Infeasible);
            }
            SynthOutcome::Inconclusive(msg) => {
                remove_if_present(&target)?;
                remove_if_present(&infeasible)?;
                let _ = writeln!(report, "status = inconclusive: {msg}");
                status = status.max(Status::Inconclusive);
            }
        }
    }
    let report_path = dir.join("synthesis_report.txt");
    fs::write(&report_path, &report).with_context(|| format!("writing {}", report_path.display()))?;
    print!("{report}");
    Ok(status)
}

fn fmt_matrix(m: &nalgebra::DMatrix<f64>) -> String {
    let rows: Vec<String> = m.row_iter().map(|r| format!("[{}]", r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))).collect();
    format!("[{}]", rows.join(", "))
}

fn describe_metric(report: &mut String, metric: &Metric, names: &[String]) {
    let (wmin, wmax) = metric.w_eigen_range();
    let (mlo, mhi) = metric.m_bounds();
    let iss = IssConstants::from_metric(metric);
    let _ = writeln!(report, "W = {}", fmt_matrix(&metric.w));
    let _ = writeln!(report, "W eigenvalues in [{wmin:.6}, {wmax:.6}], required [{}, {}]", metric.alpha1, metric.alpha2);
    let _ = writeln!(report, "M = W^-1 = {}, implied eigenvalue range [{mlo:.6}, {mhi:.6}]", fmt_matrix(&metric.m()));
    let _ = writeln!(report, "rho = {}", metric.rho.to_text(names));
    let _ = writeln!(
        report,
        "disturbance gain: 1/sqrt(alpha1) = {:.6} (used), sqrt(alpha1) = {:.6}, sqrt(alpha2) = {:.6}",
        iss.kappa, iss.sqrt_alpha1, iss.sqrt_alpha2
    );
    let _ = writeln!(report, "digest = {}", metric.digest);
}

fn parse_box(spec: &str) -> Result<(f64, f64)> {
    let (lo, hi) = spec.split_once(':').ok_or_else(|| anyhow!("--box expects LO:HI, got {spec:?}"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("--box lower bound {lo:?}"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("--box upper bound {hi:?}"))?;
    if !(lo <= hi) {
        bail!("--box needs LO <= HI, got {lo}:{hi}");
    }
    Ok((lo, hi))
}

fn load_metric(path: &Path) -> Result<(Metric, SystemModel)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file = MetricFile::from_toml(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    file.build().map_err(|e| anyhow!("{}: {e}", path.display()))
}

pub fn verify_cmd(paths: &[PathBuf], bbox: &str, grid: usize, tol: f64) -> Result<Status> {
    let (lo, hi) = parse_box(bbox)?;
    if grid == 0 {
        bail!("--grid must be at least 1");
    }
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let found: Vec<PathBuf> = [Role::Controller, Role::Observer].iter().map(|r| metric_path(p, *r)).filter(|f| f.exists()).collect();
            if found.is_empty() {
                bail!("{}: no controller.toml or observer.toml in directory", p.display());
            }
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let mut status = Status::Ok;
    for path in files {
        let (metric, model) = load_metric(&path)?;
        if !metric.digest_matches() {
            eprintln!("warning: {}: digest does not match contents (file was edited)", path.display());
        }
        let v = verify_pointwise(&metric, &model, &GridBox::cube(model.n(), lo, hi), grid).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        let pass = v.passed(tol);
        println!(
            "{}: {} metric, {} points on [{lo}, {hi}]^{}: max eigenvalue {:.6e} at {:?}, min rho {:.6e} -> {}",
            path.display(),
            metric.role,
            v.points,
            model.n(),
            v.max_violation,
            v.worst_point,
            v.min_rho,
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            status = Status::Infeasible;
        }
    }
    Ok(status)
}

fn load_role(dir: &Path, role: Role, cfg: &LoadedConfig) -> Result<Metric> {
    let path = metric_path(dir, role);
    if !path.exists() {
        bail!("missing {} metric file {} (run `ccm synthesize` first)", role, path.display());
    }
    let (metric, model) = load_metric(&path)?;
    if metric.role != role {
        bail!("{}: holds a {} metric", path.display(), metric.role);
    }
    if model.to_spec() != cfg.model.to_spec() {
        bail!("{}: metric was synthesized for a different model than {}", path.display(), cfg.source);
    }
    Ok(metric)
}

pub fn simulate_cmd(
    config_arg: &str,
    metrics: Option<PathBuf>,
    mode: Mode,
    noise: Option<f64>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<Status> {
    let cfg = config::load(config_arg)?;
    let sim = cfg.sim_config(noise, seed)?;
    let metric_dir = metrics.unwrap_or_else(|| cfg.config.output.dir.clone());
    let model = &cfg.model;
    let trace = match mode {
        Mode::Open => run_open_loop(model, &sim)?,
        Mode::StateFb => {
            let claw = ControlLaw::to_origin(load_role(&metric_dir, Role::Controller, &cfg)?, model)?;
            run_state_feedback(model, &claw, &sim)?
        }
        Mode::OutputFb => {
            let claw = ControlLaw::to_origin(load_role(&metric_dir, Role::Controller, &cfg)?, model)?;
            let olaw = ObserverLaw::new(load_role(&metric_dir, Role::Observer, &cfg)?, model)?;
            run_output_feedback(model, &claw, &olaw, &sim)?
        }
    };
    let out = out.unwrap_or_else(|| cfg.config.output.dir.join(format!("trace_{}.csv", mode.label())));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    fs::write(&out, buf).with_context(|| format!("writing {}", out.display()))?;

    let summary = summarize(&trace, mode, &sim.x0, sim.noise_std, sim.seed)?;
    let summary_path = out.with_extension("summary.txt");
    fs::write(&summary_path, &summary).with_context(|| format!("writing {}", summary_path.display()))?;
    print!("{summary}");
    println!("trace written to {}", out.display());
    Ok(Status::Ok)
}

fn summarize(trace: &SimTrace, mode: Mode, x0: &nalgebra::DVector<f64>, noise: f64, seed: u64) -> Result<String> {
    let horizon = *trace.t.last().expect("traces are never empty");
    let last = trace.len() - 1;
    let mut s = String::new();
    let _ = writeln!(s, "mode = {}", mode.label());
    let _ = writeln!(s, "x0 = {:?}", x0.as_slice());
    let _ = writeln!(s, "noise std = {noise}, seed = {seed}");
    let _ = writeln!(s, "samples = {}, horizon = {horizon}", trace.len());
    let _ = writeln!(s, "overshoot = {:.6}", overshoot(trace)?);
    match decay_rate(trace, horizon / 2.0, horizon) {
        Ok(r) => {
            let _ = writeln!(s, "decay rate of d over [{}, {horizon}] = {r:.6}", horizon / 2.0);
        }
        Err(_) => {
            let _ = writeln!(s, "decay rate of d over [{}, {horizon}] = n/a", horizon / 2.0);
        }
    }
    let (max, mean) = trace.state_norm_stats(horizon / 2.0, horizon)?;
    let _ = writeln!(s, "|x| over second half: max = {max:.6e}, mean = {mean:.6e}");
    let _ = writeln!(s, "final |x| = {:.6e}, final d = {:.6e}, final estimation error = {:.6e}", trace.x[last].norm(), trace.d[last], trace.est_err[last]);
    Ok(s)
}

pub fn report_cmd(traces: &[PathBuf], out: &Path) -> Result<Status> {
    let mut loaded = Vec::new();
    for path in traces {
        let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let trace = SimTrace::read_csv(file).map_err(|e| anyhow!("{}: {e}", path.display()))?;
        if trace.is_empty() {
            bail!("{}: trace has no rows", path.display());
        }
        let abs = fs::canonicalize(path).with_context(|| format!("resolving {}", path.display()))?;
        loaded.push((abs, trace));
    }
    let header = loaded[0].1.header();
    for (path, t) in &loaded[1..] {
        if t.header() != header {
            bail!("{}: header {:?} is inconsistent with {:?}", path.display(), t.header(), header);
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut stems: Vec<String> = Vec::new();
    for (path, _) in &loaded {
        let base = path.file_stem().map_or("trace".to_string(), |s| s.to_string_lossy().into_owned());
        let mut stem = base.clone();
        let mut k = 2;
        while stems.contains(&stem) {
            stem = format!("{base}_{k}");
            k += 1;
        }
        stems.push(stem);
    }

    let mut written = Vec::new();
    let mut emit = |name: String, body: String| -> Result<()> {
        let p = out.join(&name);
        fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
        written.push(name);
        Ok(())
    };
    for ((path, trace), stem) in loaded.iter().zip(&stems) {
        emit(format!("{stem}_states.py"), plots::states(path, stem, &trace.names))?;
        emit(format!("{stem}_distance.py"), plots::distance(path, stem))?;
        if trace.y != trace.y_clean {
            let h = trace.header();
            let p = trace.y[0].len();
            let y0 = 1 + 2 * trace.names.len() + trace.u[0].len();
            let pairs = (0..p).map(|i| (h[y0 + i].clone(), h[y0 + p + i].clone())).collect::<Vec<_>>();
            emit(format!("{stem}_measurement.py"), plots::measurement(path, stem, &pairs))?;
        }
    }
    if loaded.len() > 1 {
        let runs: Vec<(String, &Path)> = stems.iter().cloned().zip(loaded.iter().map(|(p, _)| p.as_path())).collect();
        emit("peaking.py".to_string(), plots::peaking(&runs, &loaded[0].1.names))?;
    }
    let index = written.iter().map(|w| format!("{w}\n")).collect::<String>();
    fs::write(out.join("index.txt"), &index).with_context(|| format!("writing index in {}", out.display()))?;
    for w in &written {
        println!("{}", out.join(w).display());
    }
    Ok(Status::Ok)
}
