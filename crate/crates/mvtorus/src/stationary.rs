//! Gibbs fixed-point map, accelerated self-consistent iteration, multi-seed
//! search and global-minimiser selection.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::functionals::{FreeEnergy, FunctionalReport};
use crate::potentials::Potential;
use crate::torus::{basis_eval, norm_const, DensityField, Mode, Spectral, TorusGrid};

/// Free-energy ties closer than this are degenerate.
pub const TIE_TOL: f64 = 1e-10;
/// Acceleration starts once `‖ϱ - 𝓣ϱ‖₂ ≤ ANDERSON_GATE·‖ϱ∞‖₂`; earlier
/// mixing can land on unstable fixed points such as `ϱ∞` itself.
const ANDERSON_GATE: f64 = 1e-3;
/// Number of modes recorded in a state's profile.
const PROFILE_MODES: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveConfig {
    pub damping: f64,
    pub depth: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub symmetrize: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self { damping: 0.5, depth: 3, tol: 1e-11, max_iter: 20_000, symmetrize: true }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeAmplitude {
    pub mode: Mode,
    /// Coefficient `ϱ̃(k)` of the cosine-type basis element.
    pub coeff: f64,
    /// Translation-invariant amplitude over the sign orbit.
    pub orbit: f64,
}

#[derive(Clone, Debug)]
pub struct StationaryState {
    pub rho: DensityField,
    pub kappa: f64,
    pub beta: f64,
    /// `‖ϱ - 𝓣ϱ‖₂`.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
    pub report: FunctionalReport,
    /// `F(ϱ) - F(ϱ∞)` through the gap identity.
    pub free_energy_gap: f64,
    pub mode_profile: Vec<ModeAmplitude>,
}

impl StationaryState {
    pub fn l1_distance(&self) -> f64 {
        self.rho.l1_from_uniform()
    }

    /// `ϱ̃(k)` of the density.
    pub fn coeff(&self, k: Mode) -> f64 {
        self.rho.spectral().get(k)
    }

    pub fn is_trivial(&self, l1_tol: f64) -> bool {
        self.l1_distance() <= l1_tol
    }

    pub fn to_json(&self) -> Value {
        let g = &self.rho.grid;
        let mut profile = serde_json::Map::new();
        let nodes: Vec<[f64; 2]> = (0..g.len()).map(|i| g.node(i)).collect();
        profile.insert("x".into(), json!(nodes.iter().map(|p| p[0]).collect::<Vec<_>>()));
        if g.dim() == 2 {
            profile.insert("y".into(), json!(nodes.iter().map(|p| p[1]).collect::<Vec<_>>()));
        }
        profile.insert("rho".into(), json!(self.rho.values));
        json!({
            "kappa": self.kappa,
            "beta": self.beta,
            "L": g.side(),
            "d": g.dim(),
            "M": g.points(),
            "residual": self.residual,
            "converged": self.converged,
            "iterations": self.iterations,
            "free_energy": finite_or_null(self.report.free_energy),
            "free_energy_gap": finite_or_null(self.free_energy_gap),
            "l1_distance": self.l1_distance(),
            "report": self.report,
            "modes": self.mode_profile,
            "profile": Value::Object(profile),
        })
    }

    /// Nodal profile as CSV: `x,rho` (or `x,y,rho` in 2D).
    pub fn write_profile_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let g = &self.rho.grid;
        if g.dim() == 1 {
            writeln!(out, "x,rho")?;
        } else {
            writeln!(out, "x,y,rho")?;
        }
        for (i, v) in self.rho.values.iter().enumerate() {
            let p = g.node(i);
            if g.dim() == 1 {
                writeln!(out, "{:.16e},{:.16e}", p[0], v)?;
            } else {
                writeln!(out, "{:.16e},{:.16e},{:.16e}", p[0], p[1], v)?;
            }
        }
        Ok(())
    }
}

pub fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Leading modes in order of increasing `|k|²`, one per sign orbit.
fn mode_profile(rho: &DensityField) -> Vec<ModeAmplitude> {
    let spec = rho.spectral();
    let mut modes: Vec<Mode> = rho.grid.modes().into_iter().filter(|k| k[0] >= 0 && k[1] >= 0).collect();
    modes.sort_by_key(|k| (k[0] * k[0] + k[1] * k[1], k[0], k[1]));
    modes
        .into_iter()
        .take(PROFILE_MODES)
        .map(|k| ModeAmplitude { mode: k, coeff: spec.get(k), orbit: spec.orbit_amplitude(k) })
        .collect()
}

/// Average over coordinate reflections `x_i -> -x_i`.
pub fn even_projection(grid: &TorusGrid, f: &[f64]) -> Vec<f64> {
    let m = grid.points();
    let r = |i: usize| (m - i) % m;
    if grid.dim() == 1 {
        (0..m).map(|i| 0.5 * (f[i] + f[r(i)])).collect()
    } else {
        let mut out = vec![0.0; f.len()];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = 0.25 * (f[i * m + j] + f[r(i) * m + j] + f[i * m + r(j)] + f[r(i) * m + r(j)]);
            }
        }
        out
    }
}

/// Translate coefficients by a continuous shift: result is `f(x - shift)`.
pub fn translate_coeffs(grid: &TorusGrid, c: &[f64], shift: [f64; 2]) -> Vec<f64> {
    let mut out = c.to_vec();
    for axis in 0..grid.dim() {
        if shift[axis] == 0.0 {
            continue;
        }
        let src = out.clone();
        for k in grid.modes() {
            if k[axis] <= 0 {
                continue;
            }
            let mut neg = k;
            neg[axis] = -k[axis];
            let phi = 2.0 * PI * k[axis] as f64 / grid.side() * shift[axis];
            let (s, co) = phi.sin_cos();
            let (a, b) = (src[grid.slot(k)], src[grid.slot(neg)]);
            // w_{-k} carries sin(2π(-k)x/L) = -sin(ωx)
            out[grid.slot(k)] = a * co + b * s;
            out[grid.slot(neg)] = b * co - a * s;
        }
    }
    out
}

/// Translate so that the sine-type components of `k` along each axis vanish
/// and the cosine-type ones are nonnegative. `k` must have nonnegative entries.
pub fn phase_fix(rho: &DensityField, k: Mode) -> Result<DensityField> {
    let g = rho.grid;
    g.check_mode(k)?;
    let sp = Spectral::new(g);
    let mut c = sp.forward(&rho.values);
    for axis in 0..g.dim() {
        if k[axis] <= 0 {
            continue;
        }
        let mut pos = [0i64; 2];
        pos[axis] = k[axis];
        let mut neg = pos;
        neg[axis] = -pos[axis];
        let (a, b) = (c[g.slot(pos)], c[g.slot(neg)]);
        if a == 0.0 && b == 0.0 {
            continue;
        }
        let omega = 2.0 * PI * k[axis] as f64 / g.side();
        let mut shift = [0.0; 2];
        shift[axis] = b.atan2(a) / omega;
        c = translate_coeffs(&g, &c, shift);
    }
    let vals: Vec<f64> = sp.inverse(&c).into_iter().map(|v| v.max(0.0)).collect();
    DensityField::normalized(g, vals)
}

/// `min ‖a - τb‖₂` over whole-cell translations and coordinate reflections.
pub fn aligned_distance(a: &DensityField, b: &DensityField) -> f64 {
    let g = a.grid;
    let reflected = |f: &[f64], mask: usize| -> Vec<f64> {
        let m = g.points();
        let r = |i: usize, on: bool| if on { (m - i) % m } else { i };
        (0..f.len())
            .map(|idx| {
                if g.dim() == 1 {
                    f[r(idx, mask & 1 == 1)]
                } else {
                    f[r(idx / m, mask & 1 == 1) * m + r(idx % m, mask & 2 == 2)]
                }
            })
            .collect()
    };
    let masks = if g.dim() == 1 { 2 } else { 4 };
    let m = g.points() as i64;
    let mut best = f64::INFINITY;
    for mask in 0..masks {
        let fb = reflected(&b.values, mask);
        let shifts1: Vec<i64> = if g.dim() == 2 { (0..m).collect() } else { vec![0] };
        for s0 in 0..m {
            for &s1 in &shifts1 {
                let sh = g.shift_cells(&fb, [s0, s1]);
                let d: f64 = a.values.iter().zip(&sh).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.min(d);
            }
        }
    }
    (best * g.cell_volume()).sqrt()
}

/// `e^{βκ(‖W₋‖∞ + ‖W‖₁)}`, the sup bound on `𝓣ϱ`.
pub fn gibbs_linf_bound(w: &Potential, kappa: f64, beta: f64) -> Result<f64> {
    let n = w.sup_norms();
    let neg = n.negative.ok_or_else(|| Error::Unavailable("‖W₋‖∞ needs a nodal form".into()))?;
    let l1 = n.l1.ok_or_else(|| Error::Unavailable("‖W‖₁ needs a nodal form".into()))?;
    Ok((beta * kappa * (neg + l1)).exp())
}

/// Lower bound on a fixed point of `𝓣` with sup norm `sup_rho`:
/// `L^{-d} e^{-βκ(‖W₋‖∞ + ‖W‖₁ sup_rho)}`. With `scaled = false` the factor
/// `L^{-d}` is omitted.
pub fn positivity_lower_bound(w: &Potential, kappa: f64, beta: f64, sup_rho: f64, scaled: bool) -> Result<f64> {
    let n = w.sup_norms();
    let neg = n.negative.ok_or_else(|| Error::Unavailable("‖W₋‖∞ needs a nodal form".into()))?;
    let l1 = n.l1.ok_or_else(|| Error::Unavailable("‖W‖₁ needs a nodal form".into()))?;
    let factor = if scaled { w.side().powi(-(w.dim() as i32)) } else { 1.0 };
    Ok(factor * (-beta * kappa * (neg + l1 * sup_rho)).exp())
}

/// The map `𝓣` at fixed `(W, κ, β)` on a fixed grid.
#[derive(Clone)]
pub struct GibbsMap {
    pub functional: FreeEnergy,
}

impl GibbsMap {
    pub fn new(w: &Potential, grid: TorusGrid, kappa: f64, beta: f64) -> Result<Self> {
        Ok(Self { functional: FreeEnergy::new(w, grid, kappa, beta)? })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.functional.grid()
    }

    pub fn kappa(&self) -> f64 {
        self.functional.kappa
    }

    pub fn beta(&self) -> f64 {
        self.functional.beta
    }

    /// `exp(-βκW⋆ϱ)/Z`, exponent shifted by its maximum.
    pub fn apply(&self, rho: &[f64]) -> Vec<f64> {
        let bk = self.functional.beta * self.functional.kappa;
        let conv = self.functional.interaction.convolve(rho);
        let expo: Vec<f64> = conv.iter().map(|c| -bk * c).collect();
        let top = expo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = expo.iter().map(|e| (e - top).exp()).collect();
        let z = self.grid().integrate(&out);
        out.iter_mut().for_each(|v| *v /= z);
        out
    }

    pub fn residual(&self, rho: &[f64]) -> f64 {
        let t = self.apply(rho);
        let d: Vec<f64> = rho.iter().zip(&t).map(|(a, b)| a - b).collect();
        self.grid().l2_norm(&d)
    }

    /// Damped Anderson iteration from `seed`; non-convergence is returned as
    /// a state with `converged = false`.
    pub fn solve(&self, seed: &DensityField, cfg: &SolveConfig) -> Result<StationaryState> {
        cfg.validate()?;
        let g = *self.grid();
        if seed.grid != g {
            return Err(Error::Domain("seed lives on a different grid".into()));
        }
        let run = fixed_point(&g, seed.values.clone(), cfg, |x| Some(self.apply(x)));
        let rho = DensityField::normalized(g, run.x.iter().map(|v| v.max(0.0)).collect())?;
        Ok(self.state(rho, run.residual, run.converged, run.iterations, run.history))
    }

    pub(crate) fn state(&self, rho: DensityField, residual: f64, converged: bool, iterations: usize, history: Vec<f64>) -> StationaryState {
        let report = self.functional.report(&rho.values);
        let free_energy_gap = self.functional.free_energy_gap(&rho.values);
        StationaryState {
            mode_profile: mode_profile(&rho),
            rho,
            kappa: self.kappa(),
            beta: self.beta(),
            residual,
            converged,
            iterations,
            history,
            report,
            free_energy_gap,
        }
    }

    /// Solve from every seed in parallel.
    pub fn solve_all(&self, seeds: &[DensityField], cfg: &SolveConfig) -> Result<Vec<StationaryState>> {
        seeds.par_iter().map(|s| self.solve(s, cfg)).collect()
    }
}

pub(crate) struct FixedPointRun {
    pub x: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Damped Anderson iteration for a map on unit-mass densities. The map may
/// return `None` to abort (treated as non-convergence).
pub(crate) fn fixed_point<F>(g: &TorusGrid, x0: Vec<f64>, cfg: &SolveConfig, mut map: F) -> FixedPointRun
where
    F: FnMut(&[f64]) -> Option<Vec<f64>>,
{
    let project = |f: Vec<f64>| if cfg.symmetrize { even_projection(g, &f) } else { f };
    let mut x = project(x0);
    let mut dx_hist: Vec<Vec<f64>> = Vec::new();
    let mut df_hist: Vec<Vec<f64>> = Vec::new();
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut best = f64::INFINITY;
    let gate = ANDERSON_GATE * g.l2_norm(&g.uniform());

    for it in 0..=cfg.max_iter {
        let Some(t) = map(&x) else {
            history.push(f64::INFINITY);
            break;
        };
        let t = project(t);
        let f: Vec<f64> = t.iter().zip(&x).map(|(a, b)| a - b).collect();
        let res = g.l2_norm(&f);
        history.push(res);
        iterations = it;
        if !res.is_finite() {
            break;
        }
        if res <= cfg.tol {
            converged = true;
            break;
        }
        if it == cfg.max_iter {
            break;
        }
        if res > 1e3 * best {
            dx_hist.clear();
            df_hist.clear();
            prev = None;
        }
        best = best.min(res);

        if let Some((px, pf)) = prev.take() {
            dx_hist.push(x.iter().zip(&px).map(|(a, b)| a - b).collect());
            df_hist.push(f.iter().zip(&pf).map(|(a, b)| a - b).collect());
            if dx_hist.len() > cfg.depth {
                dx_hist.remove(0);
                df_hist.remove(0);
            }
        }
        let theta = cfg.damping;
        let mut next: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + theta * b).collect();
        if cfg.depth > 0 && !df_hist.is_empty() && res <= gate {
            if let Some(gamma) = least_squares(&df_hist, &f) {
                let mut mixed = next.clone();
                for (j, gj) in gamma.iter().enumerate() {
                    for i in 0..mixed.len() {
                        mixed[i] -= gj * (dx_hist[j][i] + theta * df_hist[j][i]);
                    }
                }
                if mixed.iter().all(|v| v.is_finite() && *v > 0.0) {
                    next = mixed;
                } else {
                    dx_hist.clear();
                    df_hist.clear();
                }
            }
        }
        prev = Some((x, f));
        let mass = g.integrate(&next);
        next.iter_mut().for_each(|v| *v /= mass);
        x = next;
    }
    let residual = *history.last().unwrap_or(&f64::INFINITY);
    FixedPointRun { x, residual, converged, iterations, history }
}

/// Coefficients `γ` minimising `‖f - ΣγⱼΔfⱼ‖₂`.
fn least_squares(df: &[Vec<f64>], f: &[f64]) -> Option<Vec<f64>> {
    let n = f.len();
    let m = df.len();
    let a = DMatrix::from_fn(n, m, |i, j| df[j][i]);
    let b = DVector::from_column_slice(f);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return None;
    }
    let sol = svd.solve(&b, smax * 1e-12).ok()?;
    let out: Vec<f64> = sol.iter().cloned().collect();
    out.iter().all(|v| v.is_finite()).then_some(out)
}

pub fn gibbs_map(rho: &DensityField, w: &Potential, kappa: f64, beta: f64) -> Result<DensityField> {
    let map = GibbsMap::new(w, rho.grid, kappa, beta)?;
    DensityField::normalized(rho.grid, map.apply(&rho.values))
}

pub fn solve(seed: &DensityField, w: &Potential, kappa: f64, beta: f64, cfg: &SolveConfig) -> Result<StationaryState> {
    GibbsMap::new(w, seed.grid, kappa, beta)?.solve(seed, cfg)
}

/// Seeds `ϱ∞(1 + ε L^{d/2} w_k)` for every mode and amplitude.
pub fn deflated_branch_seeds(grid: &TorusGrid, modes: &[Mode], amplitudes: &[f64]) -> Result<Vec<DensityField>> {
    let mut out = Vec::new();
    let scale = grid.volume().sqrt();
    let u = grid.uniform_value();
    for &k in modes {
        let wk = basis_eval(k, grid)?;
        // sup of L^{d/2} w_k
        let peak = scale * norm_const(k, grid.side(), grid.dim());
        for &eps in amplitudes {
            if eps == 0.0 {
                out.push(DensityField::uniform(*grid));
                continue;
            }
            if eps.abs() * peak >= 1.0 {
                return Err(Error::Domain(format!(
                    "amplitude {eps} on mode {k:?} makes the seed nonpositive"
                )));
            }
            let vals: Vec<f64> = wk.iter().map(|w| u * (1.0 + eps * scale * w)).collect();
            out.push(DensityField::normalized(*grid, vals)?);
        }
    }
    Ok(out)
}

/// Converged states, deduplicated up to translation and reflection.
pub fn distinct_states(states: Vec<StationaryState>, tol: f64) -> Vec<StationaryState> {
    let mut out: Vec<StationaryState> = Vec::new();
    for s in states.into_iter().filter(|s| s.converged) {
        if !out.iter().any(|o| aligned_distance(&o.rho, &s.rho) <= tol) {
            out.push(s);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub index: usize,
    /// Other states within `TIE_TOL` in free energy and distinct as profiles.
    pub ties: Vec<usize>,
    pub degenerate: bool,
}

/// Index of the state of least free energy; converged states take priority.
pub fn select_minimiser(states: &[StationaryState]) -> Result<Selection> {
    if states.is_empty() {
        return Err(Error::Domain("no states to select from".into()));
    }
    let any_converged = states.iter().any(|s| s.converged);
    let eligible: Vec<usize> = (0..states.len()).filter(|&i| states[i].converged || !any_converged).collect();
    let index = *eligible
        .iter()
        .min_by(|&&a, &&b| states[a].free_energy_gap.total_cmp(&states[b].free_energy_gap))
        .expect("nonempty");
    let fmin = states[index].free_energy_gap;
    let g = &states[index].rho.grid;
    let ties: Vec<usize> = eligible
        .into_iter()
        .filter(|&i| i != index && (states[i].free_energy_gap - fmin).abs() <= TIE_TOL)
        .filter(|&i| {
            let d: Vec<f64> = states[i].rho.values.iter().zip(&states[index].rho.values).map(|(a, b)| a - b).collect();
            g.l2_norm(&d) > 1e-8
        })
        .collect();
    Ok(Selection { index, degenerate: !ties.is_empty(), ties })
}
