//! `mvlab` front end: flat experiment configs, subcommands and output files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::bifurcation::{continue_branch, enumerate_bifurcations, spectrum, BranchConfig};
use crate::dynamics::particles::{empirical_density, simulate_particles, ForceMethod, ParticleConfig, ParticleEnsemble};
use crate::dynamics::{decay_report, evolve, EvolveConfig};
use crate::error::{Error, Result};
use crate::potentials::{kappa_con, Potential};
use crate::stationary::{distinct_states, finite_or_null, select_minimiser, GibbsMap, SolveConfig};
use crate::torus::{basis_eval, norm_const, DensityField, Mode, TorusGrid};
use crate::transitions::{generic_seeds, scan_transition, ScanConfig, NONTRIVIAL_L1};

/// Flat experiment document. Every key is optional; flags override file values.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Catalog name: kuramoto, hegselmann_krause, hegselmann_krause_rescaled,
    /// onsager, bdz, keller_segel, negative_dirichlet, or `modes`.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub kmode: Option<f64>,
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub radius: Option<f64>,
    #[arg(long)]
    pub ell: Option<f64>,
    #[arg(long)]
    pub s: Option<f64>,
    /// Dirichlet kernel order.
    #[arg(long)]
    pub n: Option<f64>,
    /// Coefficient list for `name = modes`, e.g. `1:-1;2:0.5` or `1,2:-0.3`.
    #[arg(long)]
    pub modes: Option<String>,
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub side: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Grid points per axis.
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub points: Option<usize>,
    #[arg(long)]
    pub kmax: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub kappa_min: Option<f64>,
    #[arg(long)]
    pub kappa_max: Option<f64>,
    #[arg(long)]
    pub kappa_points: Option<usize>,
    /// Read every κ value in units of κ♯.
    #[arg(long)]
    pub relative: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t_final: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub record_every: Option<f64>,
    /// Initial perturbation `ε` in `ϱ∞(1 + ε w_k/N_k)`.
    #[arg(long)]
    pub perturbation: Option<f64>,
    #[arg(long)]
    pub n_particles: Option<usize>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long, value_parser = ["pairwise", "spectral"])]
    pub force: Option<String>,
    #[arg(long)]
    pub snapshot_every: Option<f64>,
    #[arg(long)]
    pub s_max: Option<f64>,
    #[arg(long)]
    pub ds: Option<f64>,
    #[arg(long)]
    pub max_branches: Option<usize>,
    #[arg(long)]
    pub coarse: Option<usize>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl ExperimentConfig {
    /// Reads a JSON or TOML document chosen by extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
            _ => serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?,
        };
        Ok(parsed)
    }

    /// `self` with every value set in `top` replaced.
    pub fn overlay(mut self, top: &Self) -> Self {
        overlay!(
            self, top, name, kmode, radius, ell, s, n, modes, side, d, beta, points, kmax, damping, tol, max_iter,
            kappa, kappa_min, kappa_max, kappa_points, relative, out, seed, t_final, dt, record_every, perturbation,
            n_particles, bins, force, snapshot_every, s_max, ds, max_branches, coarse, rel_tol
        );
        self
    }

    fn side(&self) -> f64 {
        self.side.unwrap_or(1.0)
    }

    fn dim(&self) -> usize {
        self.d.unwrap_or(1)
    }

    fn beta(&self) -> Result<f64> {
        let b = self.beta.unwrap_or(1.0);
        if !(b > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {b}")));
        }
        Ok(b)
    }

    fn grid(&self) -> Result<TorusGrid> {
        let m = self.points.unwrap_or(256);
        TorusGrid::new(self.dim(), self.side(), m).map_err(|e| Error::Config(e.to_string()))
    }

    fn solve_config(&self) -> Result<SolveConfig> {
        let mut cfg = SolveConfig::default();
        if let Some(v) = self.damping {
            cfg.damping = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.max_iter = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Potential resolved on the configured grid band.
    pub fn potential(&self) -> Result<Potential> {
        let name = self.name.as_deref().ok_or_else(|| Error::Config("missing potential name".into()))?;
        let grid = self.grid()?;
        let kmax = self.kmax.unwrap_or(grid.band());
        if name == "modes" {
            let text = self.modes.as_deref().ok_or_else(|| Error::Config("name = modes requires 'modes'".into()))?;
            let table = parse_modes(text, self.dim())?;
            let kmax = kmax.max(table.iter().map(|(k, _)| k[0].max(k[1]) as usize).max().unwrap_or(0));
            return Potential::from_modes("modes", self.side(), self.dim(), kmax, &table);
        }
        let mut params = BTreeMap::new();
        for (key, v) in [("kmode", self.kmode), ("R", self.radius), ("ell", self.ell), ("s", self.s), ("n", self.n)] {
            if let Some(v) = v {
                params.insert(key.to_string(), v);
            }
        }
        let w = Potential::from_spec(name, &params, self.side(), self.dim(), kmax)?;
        w.check_grid(&grid).map_err(|e| Error::Config(e.to_string()))?;
        Ok(w)
    }

    fn kappa_unit(&self, w: &Potential, beta: f64) -> Result<f64> {
        if !self.relative.unwrap_or(false) {
            return Ok(1.0);
        }
        let ks = spectrum(w, 0.0, beta, w.kmax()).kappa_sharp;
        if !ks.is_finite() {
            return Err(Error::Config("relative κ needs a finite κ♯".into()));
        }
        Ok(ks)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

/// `k:v` pairs separated by `;`, with `k = k0` or `k0,k1`.
fn parse_modes(text: &str, dim: usize) -> Result<Vec<(Mode, f64)>> {
    let bad = |m: String| Error::Config(format!("modes: {m}"));
    let mut out = Vec::new();
    for item in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = item.split_once(':').ok_or_else(|| bad(format!("'{item}' lacks ':'")))?;
        let idx: Vec<i64> = k
            .split(',')
            .map(|t| t.trim().parse().map_err(|_| bad(format!("bad index in '{item}'"))))
            .collect::<Result<_>>()?;
        if idx.len() != dim || idx.iter().any(|&i| i < 0) {
            return Err(bad(format!("'{item}' needs {dim} nonnegative indices")));
        }
        let v: f64 = v.trim().parse().map_err(|_| bad(format!("bad value in '{item}'")))?;
        out.push(([idx[0], idx.get(1).copied().unwrap_or(0)], v));
    }
    if out.is_empty() {
        return Err(bad("empty list".into()));
    }
    Ok(out)
}

#[derive(Parser, Debug)]
#[command(name = "mvlab", version, about = "McKean–Vlasov experiments on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON or TOML experiment document.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    exp: ExperimentConfig,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coefficient table, H-split, sup norms, κ_con, κ♯ and bifurcation points.
    Potential(Common),
    /// Stationary states at one κ or over a κ grid.
    Stationary(Common),
    /// Branches from every simple bifurcation point in range.
    Bifurcate(Common),
    /// Phase-transition scan with predictor evidence.
    Transition(Common),
    /// PDE trajectory with decay report.
    Dynamics(Common),
    /// Interacting particle simulation.
    Particles(Common),
}

/// Exit status for an error: 2 for bad input, 3 for numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::Truncation { .. } | Error::Resolution(_) | Error::Json(_) => 2,
        Error::Degenerate(_) | Error::Unavailable(_) | Error::Numerical(_) | Error::Io(_) => 3,
    }
}

/// Parses arguments, runs the subcommand and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (common, cmd): (&Common, fn(&ExperimentConfig) -> Result<Outcome>) = match &cli.command {
        Command::Potential(c) => (c, cmd_potential),
        Command::Stationary(c) => (c, cmd_stationary),
        Command::Bifurcate(c) => (c, cmd_bifurcate),
        Command::Transition(c) => (c, cmd_transition),
        Command::Dynamics(c) => (c, cmd_dynamics),
        Command::Particles(c) => (c, cmd_particles),
    };
    let result = resolve(common).and_then(|cfg| cmd(&cfg));
    match result {
        Ok(Outcome { files, status }) => {
            for f in files {
                println!("{}", f.display());
            }
            status
        }
        Err(e) => {
            eprintln!("mvlab: {e}");
            exit_code(&e)
        }
    }
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let base = match &common.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(base.overlay(&common.exp))
}

pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub status: i32,
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.dir.join(name);
        let f = File::create(&p)?;
        self.files.push(p);
        Ok(BufWriter::new(f))
    }

    fn json(&mut self, name: &str, v: &Value) -> Result<()> {
        let mut f = self.create(name)?;
        serde_json::to_writer_pretty(&mut f, v)?;
        use std::io::Write;
        writeln!(f)?;
        Ok(())
    }

    fn done(self, status: i32) -> Outcome {
        Outcome { files: self.files, status }
    }
}

fn table_json(w: &Potential) -> Value {
    let rows: Vec<Value> = w
        .table()
        .into_iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|(k, v)| json!({"k": &k[..w.dim()], "coeff": v, "normalised": w.normalised(k)}))
        .collect();
    Value::Array(rows)
}

pub fn cmd_potential(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = cfg.potential()?;
    let beta = cfg.beta()?;
    let spec = spectrum(&w, 0.0, beta, w.kmax());
    let split = w.h_split();
    let kcon = match kappa_con(&w, beta) {
        Ok(v) => finite_or_null(v),
        Err(_) => Value::Null,
    };
    let points = enumerate_bifurcations(&w, beta, w.kmax());
    let doc = json!({
        "potential": w.to_json(),
        "beta": beta,
        "h_stable": w.is_h_stable(),
        "h_split": {"stable": table_json(&split.stable), "unstable": table_json(&split.unstable)},
        "sup_norms": w.sup_norms(),
        "kappa_con": kcon,
        "kappa_sharp": finite_or_null(spec.kappa_sharp),
        "k_sharp": spec.k_sharp.map(|k| k[..w.dim()].to_vec()),
        "k_sharp_unique": spec.k_sharp_unique,
        "bifurcation_points": points,
    });
    let mut out = Output::new(cfg.out_dir())?;
    out.json("potential.json", &doc)?;
    Ok(out.done(0))
}

pub fn cmd_stationary(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = cfg.potential()?;
    let beta = cfg.beta()?;
    let grid = cfg.grid()?;
    let solve = cfg.solve_config()?;
    let unit = cfg.kappa_unit(&w, beta)?;
    let kappas: Vec<f64> = match (cfg.kappa, cfg.kappa_min, cfg.kappa_max) {
        (Some(k), _, _) => vec![k * unit],
        (None, Some(lo), Some(hi)) => {
            let n = cfg.kappa_points.unwrap_or(11);
            if !(hi > lo && lo >= 0.0) || n < 2 {
                return Err(Error::Config(format!("empty κ range [{lo}, {hi}] with {n} points")));
            }
            (0..n).map(|i| unit * (lo + (hi - lo) * i as f64 / (n - 1) as f64)).collect()
        }
        _ => return Err(Error::Config("stationary needs kappa or kappa_min/kappa_max".into())),
    };
    let focus: Vec<Mode> = w.dominant_mode().map(|d| vec![d.mode]).unwrap_or_default();
    let mut seeds = vec![DensityField::uniform(grid)];
    seeds.extend(generic_seeds(&w, &grid, &focus)?);
    let mut out = Output::new(cfg.out_dir())?;
    let mut docs = Vec::new();
    let mut sweep = Vec::new();
    for (i, &kappa) in kappas.iter().enumerate() {
        let map = GibbsMap::new(&w, grid, kappa, beta)?;
        let states = distinct_states(map.solve_all(&seeds, &solve)?, 1e-6);
        let sel = select_minimiser(&states)?;
        let best = &states[sel.index];
        let name = if kappas.len() == 1 { "profile.csv".to_string() } else { format!("profile_{i:03}.csv") };
        best.write_profile_csv(out.create(&name)?)?;
        sweep.push((kappa, best.report.free_energy, best.l1_distance(), states.len()));
        docs.push(json!({
            "kappa": kappa,
            "minimiser": sel.index,
            "nontrivial_minimiser": !best.is_trivial(NONTRIVIAL_L1),
            "states": states.iter().map(|s| s.to_json()).collect::<Vec<_>>(),
        }));
    }
    out.json("stationary.json", &json!({"potential": w.name, "beta": beta, "results": docs}))?;
    if kappas.len() > 1 {
        use std::io::Write;
        let mut f = out.create("sweep.csv")?;
        writeln!(f, "kappa,min_free_energy,l1_distance,n_states")?;
        for (k, fe, l1, n) in sweep {
            writeln!(f, "{k:.16e},{fe:.16e},{l1:.16e},{n}")?;
        }
    }
    Ok(out.done(0))
}

pub fn cmd_bifurcate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = cfg.potential()?;
    let beta = cfg.beta()?;
    let grid = cfg.grid()?;
    let unit = cfg.kappa_unit(&w, beta)?;
    let lo = cfg.kappa_min.unwrap_or(0.0) * unit;
    let hi = cfg.kappa_max.map_or(f64::INFINITY, |v| v * unit);
    if !(hi > lo) {
        return Err(Error::Config(format!("empty κ range [{lo}, {hi}]")));
    }
    let mut bcfg = BranchConfig { solve: cfg.solve_config()?, ..Default::default() };
    if let Some(v) = cfg.s_max {
        bcfg.s_max = v;
    }
    if let Some(v) = cfg.ds {
        bcfg.ds = v;
    }
    if hi.is_finite() {
        bcfg.kappa_max = Some(hi);
    }
    let cap = cfg.max_branches.unwrap_or(8);
    let origins: Vec<_> = enumerate_bifurcations(&w, beta, grid.band())
        .into_iter()
        .filter(|p| p.kappa_star >= lo && p.kappa_star <= hi)
        .collect();
    let mut out = Output::new(cfg.out_dir())?;
    let mut summary = Vec::new();
    let mut continued = 0;
    for p in &origins {
        let k = &p.mode[..w.dim()];
        let label = k.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("_");
        if !p.simple {
            summary.push(json!({"origin": p, "status": "enumerated-only", "reason": "multiplicity above one"}));
            continue;
        }
        if continued >= cap {
            summary.push(json!({"origin": p, "status": "enumerated-only", "reason": "max_branches reached"}));
            continue;
        }
        let branch = continue_branch(p, &w, &grid, beta, &bcfg)?;
        let file = format!("branch_{label}.csv");
        branch.write_csv(out.create(&file)?)?;
        continued += 1;
        summary.push(json!({
            "origin": p,
            "status": "continued",
            "file": file,
            "curvature_fit": branch.curvature_fit,
            "diagnostics": branch.diagnostics,
        }));
    }
    out.json("bifurcate.json", &json!({"potential": w.name, "beta": beta, "origins": summary}))?;
    Ok(out.done(0))
}

pub fn cmd_transition(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = cfg.potential()?;
    let beta = cfg.beta()?;
    let grid = cfg.grid()?;
    let mut scfg = ScanConfig { points: grid.points(), solve: cfg.solve_config()?, ..Default::default() };
    scfg.solve.max_iter = cfg.max_iter.unwrap_or(4000);
    if let Some(v) = cfg.coarse {
        scfg.coarse = v;
    }
    if let Some(v) = cfg.rel_tol {
        scfg.rel_tol = v;
    }
    let ks = spectrum(&w, 0.0, beta, w.kmax()).kappa_sharp;
    let unit = cfg.kappa_unit(&w, beta)?;
    // H-stable potentials have no finite κ♯; any positive range will do
    let base = if ks.is_finite() { ks } else { 1.0 };
    let lo = cfg.kappa_min.map_or(0.02 * base, |v| v * unit);
    let hi = cfg.kappa_max.map_or(1.05 * base, |v| v * unit);
    let report = scan_transition(&w, beta, (lo, hi), &scfg)?;
    let mut out = Output::new(cfg.out_dir())?;
    out.json("transition.json", &serde_json::to_value(&report)?)?;
    report.write_trace_csv(out.create("trace.csv")?)?;
    Ok(out.done(0))
}

fn perturbed_uniform(w: &Potential, grid: &TorusGrid, eps: f64) -> Result<DensityField> {
    let k = w.dominant_mode().map_or([1, 0], |d| d.mode);
    let nk = norm_const(k, grid.side(), grid.dim());
    let u = grid.uniform_value();
    let vals = basis_eval(k, grid)?.iter().map(|b| u * (1.0 + eps * b / nk)).collect();
    DensityField::normalized(*grid, vals)
}

pub fn cmd_dynamics(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = cfg.potential()?;
    let beta = cfg.beta()?;
    let grid = cfg.grid()?;
    let unit = cfg.kappa_unit(&w, beta)?;
    let kappa = cfg.kappa.ok_or_else(|| Error::Config("dynamics needs kappa".into()))? * unit;
    let eps = cfg.perturbation.unwrap_or(0.1);
    if !(eps.abs() < 1.0) {
        return Err(Error::Config(format!("perturbation must lie in (-1, 1), got {eps}")));
    }
    let ecfg = EvolveConfig {
        t_final: cfg.t_final.unwrap_or(10.0),
        dt: cfg.dt,
        record_every: cfg.record_every.unwrap_or(0.1),
        ..Default::default()
    };
    ecfg.validate()?;
    let rho0 = perturbed_uniform(&w, &grid, eps)?;
    let traj = evolve(&rho0, &w, kappa, beta, &ecfg)?;
    let decay = decay_report(&traj, &w);
    let mut out = Output::new(cfg.out_dir())?;
    traj.write_csv(out.create("trajectory.csv")?)?;
    let fin = crate::stationary::GibbsMap::new(&w, grid, kappa, beta)?;
    let doc = json!({
        "potential": w.name,
        "kappa": kappa,
        "beta": beta,
        "dt": traj.dt,
        "accepted_steps": traj.accepted_steps,
        "rejected_steps": traj.rejected_steps,
        "max_free_energy_increase": finite_or_null(traj.max_free_energy_increase),
        "max_mass_error": traj.max_mass_error,
        "steady": traj.steady,
        "aborted": traj.aborted,
        "final_residual": fin.residual(&traj.final_state.values),
        "decay": decay,
    });
    out.json("dynamics.json", &doc)?;
    {
        use std::io::Write;
        let mut f = out.create("final_state.csv")?;
        writeln!(f, "{}", if grid.dim() == 1 { "x,rho" } else { "x,y,rho" })?;
        for (i, v) in traj.final_state.values.iter().enumerate() {
            let p = grid.node(i);
            if grid.dim() == 1 {
                writeln!(f, "{:.16e},{v:.16e}", p[0])?;
            } else {
                writeln!(f, "{:.16e},{:.16e},{v:.16e}", p[0], p[1])?;
            }
        }
    }
    Ok(out.done(if traj.aborted.is_some() { 3 } else { 0 }))
}

pub fn cmd_particles(cfg: &ExperimentConfig) -> Result<Outcome> {
    let w = cfg.potential()?;
    let beta = cfg.beta()?;
    let grid = cfg.grid()?;
    let unit = cfg.kappa_unit(&w, beta)?;
    let kappa = cfg.kappa.unwrap_or(0.0) * unit;
    let force = match cfg.force.as_deref().unwrap_or("pairwise") {
        "pairwise" => ForceMethod::Pairwise,
        "spectral" => ForceMethod::Spectral,
        other => return Err(Error::Config(format!("unknown force method '{other}'"))),
    };
    let pcfg = ParticleConfig {
        t_final: cfg.t_final.unwrap_or(1.0),
        dt: cfg.dt.unwrap_or(1e-3),
        force,
        snapshot_every: cfg.snapshot_every,
    };
    let bins = cfg.bins.unwrap_or(16);
    if bins == 0 || grid.points() % bins != 0 {
        return Err(Error::Config(format!("{bins} bins do not divide M = {}", grid.points())));
    }
    let ens = ParticleEnsemble::uniform(cfg.n_particles.unwrap_or(1000), grid.side(), grid.dim(), cfg.seed.unwrap_or(0))?;
    let run = simulate_particles(&ens, &w, kappa, beta, &pcfg)?;
    let mut out = Output::new(cfg.out_dir())?;
    if cfg.snapshot_every.is_some() {
        for (i, s) in run.snapshots.iter().enumerate() {
            s.write_csv(out.create(&format!("particles_{i:04}.csv"))?)?;
        }
    }
    run.final_state.write_csv(out.create("particles_final.csv")?)?;
    let hist = empirical_density(&run.final_state, &grid, bins)?;
    {
        use std::io::Write;
        let mut f = out.create("histogram.csv")?;
        writeln!(f, "{}", if grid.dim() == 1 { "x,rho" } else { "x,y,rho" })?;
        for (i, v) in hist.values.iter().enumerate() {
            let p = grid.node(i);
            if grid.dim() == 1 {
                writeln!(f, "{:.16e},{v:.16e}", p[0])?;
            } else {
                writeln!(f, "{:.16e},{:.16e},{v:.16e}", p[0], p[1])?;
            }
        }
    }
    Ok(out.done(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse() {
        assert_eq!(parse_modes("1:-1; 2:0.5", 1).unwrap(), vec![([1, 0], -1.0), ([2, 0], 0.5)]);
        assert_eq!(parse_modes("1,2:-0.3", 2).unwrap(), vec![([1, 2], -0.3)]);
        assert!(parse_modes("1:", 1).is_err());
        assert!(parse_modes("1,2:1", 1).is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = serde_json::from_str::<ExperimentConfig>(r#"{"name":"kuramoto","bogus":1}"#);
        assert!(e.is_err());
    }

    #[test]
    fn flags_override_file() {
        let file: ExperimentConfig = serde_json::from_str(r#"{"name":"onsager","ell":2,"beta":3}"#).unwrap();
        let flags = ExperimentConfig { beta: Some(5.0), ..Default::default() };
        let merged = file.overlay(&flags);
        assert_eq!(merged.beta, Some(5.0));
        assert_eq!(merged.ell, Some(2.0));
    }

    #[test]
    fn toml_documents_parse() {
        let c: ExperimentConfig = toml::from_str("name = \"kuramoto\"\nkmode = 1\nL = 6.283185307179586\n").unwrap();
        assert_eq!(c.side, Some(6.283185307179586));
    }
}
