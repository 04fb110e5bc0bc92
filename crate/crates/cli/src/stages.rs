//! Pipeline stages behind the subcommands. Every stage reads its inputs from
//! the experiment config plus earlier artifacts in the output directory and
//! writes its own artifacts back there, so stages can be rerun independently
//! and a full pipeline is reproducible from the config and seed alone.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use roacert_core::cegis::{self, CegisConfig, CegisStatus, Certificate};
use roacert_core::dynamics::{DisturbancePolicy, NonlinearMap, UncertainSystem};
use roacert_core::errmodel::{self, ErrorBound};
use roacert_core::geometry::{grid_eps_net, AxisBox, Polytope, Region};
use roacert_core::lyapunov::SampleSet;
use roacert_core::relu::{self, Layer, ReluNetwork};
use roacert_core::roa::{self, RoaEstimate, ValueGrid};
use roacert_core::{dynamics, seed, Matrix, Vector};

use crate::config::{worker_count, BoundDomain, BoundMode, ConfigError, ExperimentConfig};

/// Fixed artifact names inside the output directory.
pub struct Artifacts {
    out: PathBuf,
}

impl Artifacts {
    pub fn new(out: &Path) -> Self {
        Artifacts { out: out.to_path_buf() }
    }

    pub fn network(&self) -> PathBuf {
        self.out.join("network.json")
    }

    pub fn dataset(&self) -> PathBuf {
        self.out.join("dataset.csv")
    }

    pub fn mae(&self) -> PathBuf {
        self.out.join("mae.csv")
    }

    pub fn error_bound(&self) -> PathBuf {
        self.out.join("error_bound.json")
    }

    pub fn roi(&self) -> PathBuf {
        self.out.join("roi.json")
    }

    pub fn certificate(&self) -> PathBuf {
        self.out.join("certificate.json")
    }

    pub fn cegis_log(&self) -> PathBuf {
        self.out.join("cegis_log.txt")
    }

    pub fn node_log(&self) -> PathBuf {
        self.out.join("nodes.csv")
    }

    pub fn grid_csv(&self, axes: (usize, usize)) -> PathBuf {
        self.out.join(format!("grid_x{}_x{}.csv", axes.0 + 1, axes.1 + 1))
    }

    pub fn svg(&self, axes: (usize, usize)) -> PathBuf {
        self.out.join(format!("roa_x{}_x{}.svg", axes.0 + 1, axes.1 + 1))
    }

    pub fn simulation(&self) -> PathBuf {
        self.out.join("simulation.json")
    }

    pub fn trajectory(&self) -> PathBuf {
        self.out.join("trajectory.csv")
    }
}

/// Loads an artifact written by an earlier stage; a missing or unreadable
/// file is a configuration problem (the experiment references state that does
/// not exist), not a solver failure.
fn load_artifact<T>(
    path: &PathBuf,
    hint: &str,
    f: impl FnOnce(&PathBuf) -> roacert_core::Result<T>,
) -> anyhow::Result<T> {
    if !path.exists() {
        return Err(ConfigError(format!(
            "missing artifact {}; run `{hint}` first",
            path.display()
        ))
        .into());
    }
    f(path).map_err(|e| ConfigError(format!("artifact {}: {e}", path.display())).into())
}

/// Uniform grid over a box, endpoints included, row-major over axes.
fn grid_points(region: &AxisBox, per_axis: usize) -> Vec<Vector> {
    let n = region.dim();
    let mut out = Vec::with_capacity(per_axis.pow(n as u32));
    let mut idx = vec![0usize; n];
    loop {
        out.push(Vector::from_fn(n, |i, _| {
            region.lo()[i] + region.width(i) * idx[i] as f64 / (per_axis - 1) as f64
        }));
        let mut d = 0;
        loop {
            idx[d] += 1;
            if idx[d] < per_axis {
                break;
            }
            idx[d] = 0;
            d += 1;
            if d == n {
                return out;
            }
        }
    }
}

/// Shifts the output-layer bias so the network maps the origin to zero.
/// The true residual vanishes at the origin, so this removes a constant
/// offset the trainer never fully eliminates and tightens the small-state
/// error pieces.
fn center_at_origin(net: ReluNetwork) -> anyhow::Result<ReluNetwork> {
    let at_origin = net.eval(&Vector::zeros(net.input_dim()));
    let mut layers: Vec<Layer> = net.layers().to_vec();
    let last = layers.len() - 1;
    layers[last].bias -= at_origin;
    ReluNetwork::new(layers).context("recentering the trained network")
}

/// Linear part of the decomposition: the finite-difference Jacobian of the
/// system map at the origin.
fn linear_part(map: &NonlinearMap) -> anyhow::Result<Matrix> {
    dynamics::jacobian_at_origin(map, dynamics::DEFAULT_JACOBIAN_STEP)
        .context("linearizing the system at the origin")
}

/// Trains the residual network and writes `network.json`, `dataset.csv`, and
/// the per-epoch `mae.csv`.
pub fn approximate(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let map = cfg.resolve_system()?;
    let a = linear_part(&map)?;
    let region = cfg.region_box();
    let samples: Vec<(Vector, Vector)> = grid_points(&region, cfg.approximate.grid)
        .into_iter()
        .map(|x| {
            let y = map.eval(&x) - &a * &x;
            (x, y)
        })
        .collect();
    log::info!(
        "training {:?} on {} residual samples over |x| <= {}",
        cfg.approximate.arch,
        samples.len(),
        cfg.region.halfwidth
    );
    let arts = Artifacts::new(&cfg.output_dir);
    relu::write_dataset_csv(arts.dataset(), &samples)?;
    let trained = relu::train(&samples, &cfg.approximate.arch, &cfg.train_config())?;
    write_mae_csv(&arts.mae(), &trained.mae_history)?;
    let net = center_at_origin(trained.network)?;
    net.save(arts.network())?;
    println!(
        "approximate: {} samples, final mae {:.3e}, network -> {}",
        samples.len(),
        trained.mae_history.last().copied().unwrap_or(f64::NAN),
        arts.network().display()
    );
    Ok(())
}

fn write_mae_csv(path: &Path, history: &[f64]) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epoch", "mae"])?;
    for (i, mae) in history.iter().enumerate() {
        writer.write_record([(i + 1).to_string(), format!("{mae:.17}")])?;
    }
    writer.flush()?;
    Ok(())
}

/// Samples approximation residuals on an epsilon-net and fits the concave
/// piecewise-affine disturbance bound; writes `error_bound.json`. By default
/// the net covers the region of interest, the set the certificate speaks
/// about, which keeps the bound free of approximation error incurred in
/// corners of the sample box the dynamics never revisit.
pub fn bound_error(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let map = cfg.resolve_system()?;
    let a = linear_part(&map)?;
    let arts = Artifacts::new(&cfg.output_dir);
    let net = load_artifact(&arts.network(), "approximate", |p| ReluNetwork::load(p))?;
    let eb = &cfg.error_bound;
    let region = match eb.domain {
        BoundDomain::Roi => {
            Region::Polytope(load_artifact(&arts.roi(), "build-roi", |p| Polytope::load(p))?)
        }
        BoundDomain::Region => Region::Box(cfg.region_box()),
    };
    let samples = grid_eps_net(&region, eb.eps, eb.max_points)?;
    let pairs = errmodel::residuals(|x| map.eval(x), &a, &net, &samples, worker_count());
    let fitted = errmodel::concave_bound(&pairs, &eb.gamma_grid)?;
    let bound = match eb.mode {
        BoundMode::Sampled => fitted,
        BoundMode::Inflated => {
            let l_f = eb.lipschitz_f.expect("validated for inflated mode");
            let l_n = net.lipschitz_upper(&Matrix::zeros(net.input_dim(), net.input_dim()));
            errmodel::inflate(&fitted, eb.eps, l_f, l_n)?
        }
    };
    bound.save(arts.error_bound())?;
    let worst = pairs.iter().map(|(_, w)| *w).fold(0.0, f64::max);
    println!(
        "bound-error: {} samples, worst residual {:.3e}, {} pieces -> {}",
        samples.len(),
        worst,
        bound.pieces().len(),
        arts.error_bound().display()
    );
    Ok(())
}

/// Builds the region of interest from forward simulation of the true map and
/// writes `roi.json`.
pub fn build_roi(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let map = cfg.resolve_system()?;
    let region = cfg.region_box();
    let arts = Artifacts::new(&cfg.output_dir);
    let roi = roacert_core::geometry::build_roi(
        |x| map.eval(x),
        &region,
        &cfg.roi_config(worker_count()),
    )?;
    roi.save(arts.roi())?;
    println!(
        "build-roi: {} facets, {} vertices -> {}",
        roi.num_facets(),
        roi.vertices().len(),
        arts.roi().display()
    );
    Ok(())
}

/// Reassembles the uncertain closed loop from config plus artifacts.
fn assemble_system(cfg: &ExperimentConfig) -> anyhow::Result<UncertainSystem> {
    let map = cfg.resolve_system()?;
    let a = linear_part(&map)?;
    let arts = Artifacts::new(&cfg.output_dir);
    let net = load_artifact(&arts.network(), "approximate", |p| ReluNetwork::load(p))?;
    let bound = load_artifact(&arts.error_bound(), "bound-error", |p| ErrorBound::load(p))?;
    let roi = load_artifact(&arts.roi(), "build-roi", |p| Polytope::load(p))?;
    UncertainSystem::new(a, net, bound, roi, cfg.excluded_box())
        .map_err(|e| ConfigError(format!("assembling the uncertain system: {e}")).into())
}

/// Runs the learner/verifier loop and writes `certificate.json` (on success)
/// plus the per-iteration `cegis_log.txt`. When the config asks for a node
/// log, the CSV holds the most recent solver call of the run.
pub fn synthesize(cfg: &ExperimentConfig) -> anyhow::Result<CegisStatus> {
    let sys = assemble_system(cfg)?;
    let arts = Artifacts::new(&cfg.output_dir);
    let node_log = Some(arts.node_log());
    let ccfg = CegisConfig {
        k: cfg.cegis.k,
        max_iterations: cfg.cegis.max_iterations,
        initial_samples: SampleSet::new(),
        learner: cfg.learner.to_core(),
        verifier: cfg.verifier.to_core(node_log),
        seed: cfg.seed,
        batch_cuts: cfg.cegis.batch_cuts,
    };
    let run = cegis::run(&sys, &ccfg)?;

    let mut log_text = String::new();
    for record in &run.log {
        log_text.push_str(&record.line());
        log_text.push('\n');
    }
    log_text.push_str(&format!(
        "status={} iterations={}\n",
        status_str(run.status),
        run.iterations
    ));
    std::fs::write(arts.cegis_log(), log_text)?;

    if let Some(cert) = &run.certificate {
        cert.save(arts.certificate())?;
        println!(
            "synthesize: {} after {} iterations, ub {:.3e}, levels [{:.6}, {:.6}] -> {}",
            status_str(run.status),
            run.iterations,
            cert.verifier_ub,
            cert.c_min,
            cert.c_max,
            arts.certificate().display()
        );
    } else {
        println!(
            "synthesize: {} after {} iterations",
            status_str(run.status),
            run.iterations
        );
    }
    Ok(run.status)
}

pub fn status_str(status: CegisStatus) -> &'static str {
    match status {
        CegisStatus::Certified => "CERTIFIED",
        CegisStatus::Infeasible => "INFEASIBLE",
        CegisStatus::FeasibilityUnknown => "FEASIBILITY_UNKNOWN",
        CegisStatus::BudgetExceeded => "BUDGET_EXCEEDED",
    }
}

/// Exit code contract shared by `synthesize` and `pipeline`.
pub fn status_exit_code(status: CegisStatus) -> i32 {
    match status {
        CegisStatus::Certified => 0,
        CegisStatus::Infeasible => 2,
        CegisStatus::FeasibilityUnknown | CegisStatus::BudgetExceeded => 3,
    }
}

#[derive(Serialize)]
struct SimulationFile {
    schema_version: u32,
    trajectories: usize,
    converged: usize,
    fraction: f64,
    decrease_violations: usize,
}

/// Evaluates the certified level sets on plot grids, renders the SVG
/// pictures, and cross-checks the certificate by simulation; writes the grid
/// CSVs, the SVGs, and `simulation.json`.
pub fn roa_stage(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let sys = assemble_system(cfg)?;
    let arts = Artifacts::new(&cfg.output_dir);
    let cert = load_artifact(&arts.certificate(), "synthesize", |p| Certificate::load(p))?;
    cert.digest
        .check(&sys)
        .context("certificate does not match the current artifacts")?;
    let est = RoaEstimate::new(cert.candidate()?, cert.c_max, cert.c_min)?;

    let grids = roa::value_grid(&sys, &est, cfg.roa.resolution, worker_count())?;
    for grid in &grids {
        grid.save_csv(arts.grid_csv(grid.axes))?;
        let svg = arts.svg(grid.axes);
        if sys.dim() == 2 {
            roa::save_svg(&sys, &est, grid, &svg)?;
        } else {
            slice_svg(&sys, &est, grid, &svg)?;
        }
        println!("roa: wrote {} and {}", arts.grid_csv(grid.axes).display(), svg.display());
    }

    if est.degenerate() {
        log::warn!(
            "levels are degenerate (c_min {:.6} >= c_max {:.6}); skipping simulation",
            est.c_min(),
            est.c_max()
        );
        println!("roa: degenerate level sets, no simulation report");
        return Ok(());
    }
    let report = roa::validate_by_simulation(
        &sys,
        &est,
        cfg.roa.trajectories,
        cfg.roa.sim_steps,
        seed::derive(cfg.seed, "roa-sim"),
    )?;
    let file = SimulationFile {
        schema_version: 1,
        trajectories: report.trajectories,
        converged: report.converged,
        fraction: report.fraction,
        decrease_violations: report.decrease_violations,
    };
    std::fs::write(arts.simulation(), serde_json::to_string_pretty(&file)?)?;
    println!(
        "roa: {}/{} trajectories converged, {} decrease violations -> {}",
        report.converged,
        report.trajectories,
        report.decrease_violations,
        arts.simulation().display()
    );
    Ok(())
}

/// The planar cross-section of the region polytope in the grid plane (other
/// coordinates zero), as plot-ordered vertex pairs. `None` when the section
/// is empty or degenerate.
fn roi_slice_vertices(roi: &Polytope, axes: (usize, usize)) -> Option<Vec<(f64, f64)>> {
    let mut rows: Vec<[f64; 2]> = Vec::new();
    let mut rhs: Vec<f64> = Vec::new();
    for i in 0..roi.num_facets() {
        let (a, b) = roi.facet(i);
        let (c0, c1) = (a[axes.0], a[axes.1]);
        // A facet normal orthogonal to the slice plane constrains nothing
        // inside it; it only decides whether the plane meets the polytope.
        if c0.abs().max(c1.abs()) <= 1e-12 {
            if b < -1e-12 {
                return None;
            }
            continue;
        }
        rows.push([c0, c1]);
        rhs.push(b);
    }
    if rows.len() < 3 {
        return None;
    }
    let a2 = Matrix::from_fn(rows.len(), 2, |r, c| rows[r][c]);
    let section = Polytope::from_halfspaces(a2, Vector::from_vec(rhs)).ok()?;
    let mut verts: Vec<(f64, f64)> = section.vertices().iter().map(|v| (v[0], v[1])).collect();
    let cx = verts.iter().map(|v| v.0).sum::<f64>() / verts.len() as f64;
    let cy = verts.iter().map(|v| v.1).sum::<f64>() / verts.len() as f64;
    verts.sort_by(|p, q| {
        (p.1 - cy)
            .atan2(p.0 - cx)
            .total_cmp(&(q.1 - cy).atan2(q.0 - cx))
    });
    Some(verts)
}

/// Slice analogue of the planar SVG writer: same element order, classes, and
/// colors, with the region outline replaced by the polytope cross-section.
fn slice_svg(
    sys: &UncertainSystem,
    est: &RoaEstimate,
    grid: &ValueGrid,
    path: &Path,
) -> anyhow::Result<()> {
    let (lo0, hi0) = (grid.xs[0], *grid.xs.last().expect("nonempty grid"));
    let (lo1, hi1) = (grid.ys[0], *grid.ys.last().expect("nonempty grid"));
    let margin = 20.0;
    let span = 560.0;
    let scale = span / (hi0 - lo0).max(hi1 - lo1);
    let width = (hi0 - lo0) * scale + 2.0 * margin;
    let height = (hi1 - lo1) * scale + 2.0 * margin;
    let px = |x: f64| margin + (x - lo0) * scale;
    let py = |y: f64| margin + (hi1 - y) * scale;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.3} {height:.3}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect class=\"bg\" x=\"0\" y=\"0\" width=\"{width:.3}\" height=\"{height:.3}\" fill=\"#ffffff\"/>\n"
    ));
    if let Some(verts) = roi_slice_vertices(sys.roi(), grid.axes) {
        let points: Vec<String> = verts
            .iter()
            .map(|v| format!("{:.3},{:.3}", px(v.0), py(v.1)))
            .collect();
        svg.push_str(&format!(
            "  <polygon class=\"roi\" points=\"{}\" fill=\"none\" stroke=\"#333333\" stroke-width=\"2\"/>\n",
            points.join(" ")
        ));
    }
    let bx = sys.excluded();
    svg.push_str(&format!(
        "  <rect class=\"excluded\" x=\"{:.3}\" y=\"{:.3}\" width=\"{:.3}\" height=\"{:.3}\" fill=\"#f2f2f2\" stroke=\"#999999\" stroke-width=\"1.5\"/>\n",
        px(bx.lo()[grid.axes.0]),
        py(bx.hi()[grid.axes.1]),
        (bx.hi()[grid.axes.0] - bx.lo()[grid.axes.0]) * scale,
        (bx.hi()[grid.axes.1] - bx.lo()[grid.axes.1]) * scale,
    ));
    let mut d = String::new();
    for (a, b) in roa::contour_segments(grid, est.c_max()) {
        d.push_str(&format!(
            "M {:.3} {:.3} L {:.3} {:.3} ",
            px(a.0),
            py(a.1),
            px(b.0),
            py(b.1)
        ));
    }
    svg.push_str(&format!(
        "  <path class=\"roa\" d=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
        d.trim_end()
    ));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Rolls one disturbed (or nominal) trajectory and writes `trajectory.csv`.
pub fn simulate_stage(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| ConfigError("the simulate subcommand needs a [simulate] section".into()))?;
    let sys = assemble_system(cfg)?;
    let policy = if sim.disturbed {
        DisturbancePolicy::Uniform {
            seed: seed::derive(cfg.seed, "simulate"),
        }
    } else {
        DisturbancePolicy::Zero
    };
    let x0 = Vector::from_vec(sim.x0.clone());
    let region = cfg.region_box();
    let traj = sys.simulate(&x0, sim.steps, policy, Some(&region))?;
    let arts = Artifacts::new(&cfg.output_dir);
    traj.save_csv(arts.trajectory())?;
    let fin = traj.final_state();
    println!(
        "simulate: {} steps, final |x| = {:.3e}{} -> {}",
        sim.steps,
        fin.abs().max(),
        match traj.escaped_at {
            Some(k) => format!(", left the sample region at step {k}"),
            None => String::new(),
        },
        arts.trajectory().display()
    );
    Ok(())
}

/// Re-verifies a stored certificate against the current artifacts: digests
/// must match, the decrease bound must re-certify, and the level constants
/// must reproduce.
pub fn replay_stage(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let sys = assemble_system(cfg)?;
    let arts = Artifacts::new(&cfg.output_dir);
    let cert = load_artifact(&arts.certificate(), "synthesize", |p| Certificate::load(p))?;
    let ok = cegis::replay(&cert, &sys, &cfg.verifier.to_core(None))?;
    anyhow::ensure!(ok, "certificate replay failed");
    println!("replay: certificate verified against the artifacts");
    Ok(())
}

/// Stage names accepted by `pipeline --stage`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, clap::ValueEnum)]
pub enum StageName {
    Approximate,
    BuildRoi,
    BoundError,
    Synthesize,
    Roa,
}

/// Runs the stages in order, stopping after `upto` when given. The region of
/// interest is built before the error bound so the bound can sample the set
/// the certificate speaks about. Later stages only run while the synthesis
/// outcome is a certificate; the exit code reflects that outcome.
pub fn pipeline(cfg: &ExperimentConfig, upto: Option<StageName>) -> anyhow::Result<i32> {
    let last = upto.unwrap_or(StageName::Roa);
    approximate(cfg)?;
    if last == StageName::Approximate {
        return Ok(0);
    }
    build_roi(cfg)?;
    if last == StageName::BuildRoi {
        return Ok(0);
    }
    bound_error(cfg)?;
    if last == StageName::BoundError {
        return Ok(0);
    }
    let status = synthesize(cfg)?;
    if status != CegisStatus::Certified || last == StageName::Synthesize {
        return Ok(status_exit_code(status));
    }
    roa_stage(cfg)?;
    Ok(0)
}
