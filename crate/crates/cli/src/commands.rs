use crate::config::{Command, ConfigError, RunConfig};
use rayon::prelude::*;
use scat2d::bs::{
    assemble_m, factorize_potential, log_energies, smatrix, sweep_smatrix, BsError, EnergyPoint, FactorizedPotential,
    Preset,
};
use scat2d::levinson::{levinson_check, CountSpec, LevinsonError, SweepSpec};
use scat2d::opcore::{
    assemble_f0, build_disk_grid, build_disk_grid_panels, nullspace_projection, AngularGrid, Basis, OpError,
    QuadGrid2D, Space, WeightedOperator, C64,
};
use scat2d::sfun::sfun_selftest;
use scat2d::threshold::{classify_threshold, compute_projection_set, tune_critical_coupling, Stage, ThresholdError};
use scat2d::waveop::{compare_waveops, default_horizon, BumpSpec, CompareSpec, LogGrid, WaveOpError, WavePacket};
use std::fs::File;
use std::io::BufWriter;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Compute { module: &'static str, message: String },
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Compute { module, message } => write!(f, "{module}: {message}"),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

macro_rules! module_error {
    ($ty:ty, $name:literal) => {
        impl From<$ty> for RunError {
            fn from(e: $ty) -> Self {
                RunError::Compute { module: $name, message: e.to_string() }
            }
        }
    };
}

module_error!(OpError, "opcore");
module_error!(BsError, "bs");
module_error!(ThresholdError, "threshold");
module_error!(LevinsonError, "levinson");
module_error!(WaveOpError, "waveop");

/// CSV body plus `key = value` summary lines.
#[derive(Debug, Default)]
pub struct Report {
    pub header: String,
    pub rows: Vec<String>,
    pub summary: Vec<(String, String)>,
    /// Set when a self-check failed after the report was produced.
    pub failure: Option<RunError>,
}

impl Report {
    fn new(header: &str) -> Self {
        Report { header: header.to_string(), ..Default::default() }
    }

    fn put(&mut self, key: &str, value: impl std::fmt::Display) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub fn csv(&self, timestamp: Option<u64>) -> String {
        let mut s = format!("{}\n", self.header);
        for r in &self.rows {
            s += r;
            s.push('\n');
        }
        for (k, v) in &self.summary {
            s += &format!("# {k} = {v}\n");
        }
        if let Some(t) = timestamp {
            s += &format!("# timestamp_unix = {t}\n");
        }
        s
    }

    pub fn summary_text(&self) -> String {
        self.summary.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn e(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn build_grid(c: &RunConfig) -> Result<QuadGrid2D, RunError> {
    let r = c.grid.radius;
    let mut breaks = vec![0.0];
    breaks.extend(c.preset.discontinuities().into_iter().filter(|d| *d < r * (1.0 - 1e-12)));
    breaks.push(r);
    let per_panel = c.grid.n_radial.div_ceil(breaks.len() - 1);
    Ok(build_disk_grid_panels(&breaks, per_panel, c.grid.n_angular)?)
}

pub fn build_potential(c: &RunConfig, grid: &QuadGrid2D) -> Result<FactorizedPotential, RunError> {
    let pot = factorize_potential(c.preset, c.g, grid)?;
    Ok(if c.grid.m_angles == c.grid.n_angular { pot } else { pot.with_basis(Basis::Nodal) })
}

fn fixture_name(p: &Preset, g: f64) -> String {
    let kind = match p {
        Preset::Gaussian { .. } => "gaussian",
        Preset::SquareWell { .. } => "square_well",
        Preset::Ring { .. } => "ring",
    };
    format!("{kind}_g{g}")
}

pub fn run(cmd: Command, c: &RunConfig) -> Result<Report, RunError> {
    match cmd {
        Command::Sweep => sweep(c),
        Command::Classify => classify(c),
        Command::Tune => tune(c),
        Command::Levinson => levinson(c),
        Command::Waveop => waveop(c),
        Command::Selftest => selftest(),
    }
}

/// `|| M^{-1} v F0(lambda)* ||`, the factor whose growth signals a p-resonance.
fn resolvent_factor_norm(pot: &FactorizedPotential, lambda: f64, ang: &AngularGrid) -> Result<f64, RunError> {
    let m = assemble_m(pot, EnergyPoint::BoundaryLambda(lambda))?;
    let vf = pot.v_op().compose(&assemble_f0(lambda, &pot.grid, ang, pot.basis)?.adjoint())?;
    Ok(m.solve(&vf)?.norm())
}

fn sweep(c: &RunConfig) -> Result<Report, RunError> {
    let grid = build_grid(c)?;
    let pot = build_potential(c, &grid)?;
    let ang = AngularGrid::new(c.grid.m_angles)?;
    let lambdas = log_energies(c.sweep.lambda_min, c.sweep.lambda_max, c.sweep.points);
    let samples = sweep_smatrix(&pot, &lambdas, &ang)?;
    let mut rep = Report::new("lambda,s_minus_1_norm,unitarity_defect,cond_M");
    let (mut failed, mut max_s, mut max_u) = (0, 0.0f64, 0.0f64);
    for (l, s) in lambdas.iter().zip(&samples) {
        match s {
            Ok(s) => {
                max_s = max_s.max(s.s_minus_1_norm);
                max_u = max_u.max(s.unitarity_defect);
                rep.rows.push(format!("{},{},{},{}", e(*l), e(s.s_minus_1_norm), e(s.unitarity_defect), e(s.cond_m)));
            }
            Err(err) => {
                failed += 1;
                rep.rows.push(format!("{},NaN,NaN,NaN", e(*l)));
                rep.put(&format!("error_at_{}", e(*l)), err);
            }
        }
    }
    rep.put("potential", fixture_name(&c.preset, c.g));
    rep.put("samples", lambdas.len());
    rep.put("failed", failed);
    rep.put("max_s_minus_1_norm", e(max_s));
    rep.put("max_unitarity_defect", e(max_u));
    if !pot.is_zero() {
        let norms: Vec<f64> =
            lambdas.par_iter().map(|l| resolvent_factor_norm(&pot, *l, &ang).unwrap_or(f64::NAN)).collect();
        let finite: Vec<f64> = norms.iter().copied().filter(|x| x.is_finite()).collect();
        let min = finite.iter().copied().fold(f64::INFINITY, f64::min);
        rep.put("resolvent_factor_norm_lambda_min", e(norms[0]));
        rep.put("resolvent_factor_norm_lambda_max", e(norms[norms.len() - 1]));
        // growth toward the threshold, as at a p-resonant coupling
        let growth = norms.len() >= 3 && norms[0] > 2.0 * min && norms[0] > norms[1] && norms[1] > norms[2];
        rep.put("resolvent_factor_growth", growth);
    }
    if failed == lambdas.len() {
        if let Some(Err(err)) = samples.into_iter().next() {
            return Err(err.into());
        }
    }
    Ok(rep)
}

fn gap_for(gaps: &[(Stage, f64)], stage: Stage) -> String {
    gaps.iter().find(|(s, _)| *s == stage).map(|(_, r)| e(*r)).unwrap_or_else(|| "NaN".into())
}

fn classify(c: &RunConfig) -> Result<Report, RunError> {
    let grid = build_grid(c)?;
    let pot = build_potential(c, &grid)?;
    let pset = compute_projection_set(&pot, c.tol)?;
    let report = classify_threshold(&pset, &pot)?;
    let mut rep = Report::new("g,n_s,n_p,n_zero_bound,gap_S1,gap_S2,gap_S3");
    rep.rows.push(format!(
        "{},{},{},{},{},{},{}",
        e(c.g),
        report.n_s,
        report.n_p,
        report.n_zero_bound,
        gap_for(&report.gaps, Stage::S1),
        gap_for(&report.gaps, Stage::S2),
        gap_for(&report.gaps, Stage::S3)
    ));
    rep.put("potential", fixture_name(&c.preset, c.g));
    for line in report.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            rep.put(k, v);
        }
    }
    Ok(rep)
}

fn tune(c: &RunConfig) -> Result<Report, RunError> {
    let t = c.tune.as_ref().ok_or_else(|| ConfigError("tune needs tune.target, tune.bracket_lo, tune.bracket_hi".into()))?;
    let grid = build_grid(c)?;
    let g = tune_critical_coupling(c.preset, &grid, t.target, t.bracket, c.tol)?;
    let pot = factorize_potential(c.preset, g, &grid)?;
    let pset = compute_projection_set(&pot, c.tol)?;
    let target = match t.target {
        scat2d::threshold::Target::SResonance => "s_resonance",
        scat2d::threshold::Target::PResonance => "p_resonance",
        scat2d::threshold::Target::ZeroBound => "zero_bound",
    };
    let mut rep = Report::new("target,g_star,bracket_lo,bracket_hi");
    rep.rows.push(format!("{target},{},{},{}", e(g), e(t.bracket.0), e(t.bracket.1)));
    rep.put("g_star", e(g));
    rep.put("n_s", pset.ranks.t2);
    rep.put("n_p", pset.ranks.t3);
    rep.put("n_zero_bound", pset.ranks.s3);
    Ok(rep)
}

fn levinson(c: &RunConfig) -> Result<Report, RunError> {
    let grid = build_grid(c)?;
    let pot = build_potential(c, &grid)?;
    let spec = SweepSpec::new(c.sweep.lambda_min, c.sweep.lambda_max, c.levinson.points_per_decade, c.grid.m_angles);
    let count = CountSpec { box_radius: c.levinson.box_radius, n_grid: c.levinson.n_grid };
    let r = levinson_check(&pot, &spec, &count)?;
    let mut rep = Report::new("lambda,integrand_n0,integrand_n1,integrand_n2");
    let [w0, w1, w2] = &r.windings;
    for (i, l) in w0.midpoints.iter().enumerate() {
        rep.rows.push(format!("{},{},{},{}", e(*l), e(w0.integrand[i]), e(w1.integrand[i]), e(w2.integrand[i])));
    }
    rep.put("potential", fixture_name(&c.preset, c.g));
    for w in &r.windings {
        let n = w.n_regularization;
        rep.put(&format!("winding_n{n}"), format!("{:.6}", w.winding));
        rep.put(&format!("tail_n{n}"), e(w.tail_estimate));
        rep.put(&format!("fd_error_n{n}"), e(w.fd_error_estimate));
    }
    rep.put("eigenphase_winding", w0.eigenphase_winding);
    rep.put("n_bound", r.n_bound);
    rep.put("discrepancy", format!("{:.6}", r.discrepancy));
    rep.put("n_spread", format!("{:.6}", r.n_spread));
    rep.put("lambda_min_used", e(r.lambda_range.0));
    rep.put("lambda_max_used", e(r.lambda_range.1));
    rep.put("samples", r.samples.len());
    Ok(rep)
}

fn write_snapshot(path: &std::path::Path, packet: &WavePacket) -> Result<(), RunError> {
    let io = |err: std::io::Error| WaveOpError::Io(format!("{}: {err}", path.display()));
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    packet.write_snapshot(&mut w)?;
    Ok(())
}

fn waveop(c: &RunConfig) -> Result<Report, RunError> {
    let grid = build_grid(c)?;
    let pot = build_potential(c, &grid)?;
    let pset = compute_projection_set(&pot, c.tol)?;
    let w = &c.waveop;
    let psi = WavePacket::bump(&BumpSpec {
        n: w.packet_n,
        side: w.packet_side,
        window: w.window,
        direction: w.direction,
        kappa: w.kappa,
        center: [0.0, 0.0],
    })?;
    let log_grid = LogGrid::with_step(w.log_range.0, w.log_range.1, w.log_step)?;
    let t0 = w.t0.unwrap_or_else(|| default_horizon(c.preset.support_radius(), w.window));
    let spec = CompareSpec { grid: log_grid, t0, dt: w.dt, compare: w.log_range };
    let r = compare_waveops(&pot, &pset, &psi, &spec)?;
    let mut rep = Report::new("fixture,window_lo,window_hi,relative_error,isometry_defect,identity_defect");
    rep.rows.push(format!(
        "{},{},{},{},{},{}",
        fixture_name(&c.preset, c.g),
        e(w.window.0),
        e(w.window.1),
        e(r.relative_error),
        e(r.isometry_defect),
        e(r.max_identity_defect)
    ));
    rep.put("t0", e(t0));
    rep.put("relative_error", e(r.relative_error));
    rep.put("isometry_defect", e(r.isometry_defect));
    rep.put("identity_defect", e(r.max_identity_defect));
    rep.put("cauchy", e(r.cauchy));
    rep.put("norm_drift", e(r.norm_drift));
    rep.put("leaked_mass", e(r.leaked_mass));
    rep.put("window_mass", e(r.window_mass));
    rep.put("simplified_residual", e(r.simplified_residual));
    for (mode, sv) in &r.commutator_singular_values {
        let head: Vec<String> = sv.iter().take(6).map(|x| format!("{x:.3e}")).collect();
        rep.put(&format!("commutator_sv_mode{mode}"), head.join(" "));
    }
    if let Some(prefix) = &w.snapshot {
        let with = |suffix: &str| {
            let mut p = prefix.clone().into_os_string();
            p.push(suffix);
            std::path::PathBuf::from(p)
        };
        write_snapshot(&with("_input.bin"), &psi)?;
        write_snapshot(&with("_oracle.bin"), &r.oracle)?;
        rep.put("snapshot_input", with("_input.bin").display());
        rep.put("snapshot_oracle", with("_oracle.bin").display());
    }
    Ok(rep)
}

fn selftest() -> Result<Report, RunError> {
    let mut rep = Report::new("check,value,limit,pass");
    let mut failed = Vec::new();
    let mut check = |name: &str, value: f64, limit: f64| {
        let pass = value <= limit;
        if !pass {
            failed.push(name.to_string());
        }
        rep.rows.push(format!("{name},{},{},{pass}", e(value), e(limit)));
    };

    check("wronskian", sfun_selftest().max_rel_deviation, 1e-8);

    let disk = build_disk_grid(6.0, 32, 32)?;
    let ang = AngularGrid::new(32)?;
    let gauss = disk.sample(Basis::Nodal, |x| C64::new((-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp(), 0.0));
    let mut f0_err = 0.0f64;
    for l in [0.1, 1.0, 4.0] {
        let f = assemble_f0(l, &disk, &ang, Basis::Nodal)?.apply(&gauss);
        let exact = (-l / 2.0).exp() / std::f64::consts::SQRT_2;
        f0_err = f0_err.max(f.parts[0].iter().map(|z| (z - exact).norm()).fold(0.0, f64::max));
    }
    check("f0_gaussian", f0_err, 1e-6);

    let free = factorize_potential(Preset::gaussian(), 0.0, &disk)?;
    let mut free_err = 0.0f64;
    for l in log_energies(1e-6, 1e2, 5) {
        free_err = free_err.max(smatrix(&free, l, &ang)?.s_minus_1_norm);
    }
    check("free_s_minus_1", free_err, 1e-12);

    let well = factorize_potential(Preset::gaussian(), 1.0, &disk)?;
    check("unitarity_gaussian", smatrix(&well, 1.0, &ang)?.unitarity_defect, 1e-6);

    let space = Space { basis: Basis::Nodal, weights: vec![vec![1.0, 1.0]] };
    let d = WeightedOperator::diagonal(&space, |_, i| C64::new(if i == 0 { 1.0 } else { 0.0 }, 0.0));
    let ns = nullspace_projection(&d, 1e-8)?;
    check("nullspace_rank_defect", (ns.rank() as f64 - 1.0).abs(), 0.0);

    drop(check);
    rep.put("checks", rep.rows.len());
    rep.put("failed", failed.len());
    if !failed.is_empty() {
        rep.failure =
            Some(RunError::Compute { module: "selftest", message: format!("SelftestFailed: {}", failed.join(" ")) });
    }
    Ok(rep)
}
