//! Browser bindings: potential inspection, stationary profiles and PDE
//! relaxation frames for a static page.

use serde_json::json;
use wasm_bindgen::prelude::*;

use mvtorus::bifurcation::{enumerate_bifurcations, spectrum};
use mvtorus::dynamics::{evolve, EvolveConfig};
use mvtorus::potentials::Potential;
use mvtorus::stationary::{distinct_states, select_minimiser, GibbsMap, SolveConfig};
use mvtorus::torus::{basis_eval, norm_const, DensityField, TorusGrid};
use mvtorus::transitions::generic_seeds;
use mvtorus::Error;

/// Grid points used by the demo.
const POINTS: usize = 128;

fn to_js(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn build(name: &str, param: f64, side: f64) -> Result<(Potential, TorusGrid), Error> {
    let grid = TorusGrid::line(side, POINTS)?;
    let kmax = grid.band();
    let w = match name {
        "kuramoto" => Potential::kuramoto(param.max(1.0).round() as usize, side, kmax)?,
        "hegselmann_krause" => Potential::hegselmann_krause(param * side, side, false, kmax)?,
        "onsager" => Potential::onsager(param.max(1.0).round() as usize, side, kmax)?,
        "negative_dirichlet" => Potential::negative_dirichlet(param.max(1.0).round() as usize, side, kmax)?,
        other => return Err(Error::Config(format!("unknown demo potential '{other}'"))),
    };
    Ok((w, grid))
}

fn kappa_sharp(w: &Potential, beta: f64) -> Result<f64, Error> {
    let ks = spectrum(w, 0.0, beta, w.kmax()).kappa_sharp;
    if ks.is_finite() {
        Ok(ks)
    } else {
        Err(Error::Domain("potential is H-stable; no bifurcation from the uniform state".into()))
    }
}

pub fn summary(name: &str, param: f64, side: f64, beta: f64) -> Result<String, Error> {
    let (w, _) = build(name, param, side)?;
    let spec = spectrum(&w, 0.0, beta, w.kmax());
    let points: Vec<_> = enumerate_bifurcations(&w, beta, w.kmax())
        .into_iter()
        .take(12)
        .map(|p| json!({"k": p.mode[0], "kappa_star": p.kappa_star, "simple": p.simple}))
        .collect();
    let coeffs: Vec<f64> = (1..=16).map(|k| w.coeff([k, 0])).collect();
    Ok(json!({
        "kappa_sharp": if spec.kappa_sharp.is_finite() { json!(spec.kappa_sharp) } else { json!(null) },
        "k_sharp": spec.k_sharp.map(|k| k[0]),
        "h_stable": w.is_h_stable(),
        "coeffs": coeffs,
        "bifurcation_points": points,
    })
    .to_string())
}

/// Flat `[x_0.., rho_0..]` of the minimising stationary state at
/// `κ = kappa_rel·κ♯`, followed by its free energy.
pub fn stationary(name: &str, param: f64, side: f64, beta: f64, kappa_rel: f64) -> Result<Vec<f64>, Error> {
    let (w, grid) = build(name, param, side)?;
    let kappa = kappa_rel * kappa_sharp(&w, beta)?;
    let focus: Vec<_> = w.dominant_mode().map(|d| vec![d.mode]).unwrap_or_default();
    let mut seeds = vec![DensityField::uniform(grid)];
    seeds.extend(generic_seeds(&w, &grid, &focus)?);
    let cfg = SolveConfig { max_iter: 4000, ..Default::default() };
    let map = GibbsMap::new(&w, grid, kappa, beta)?;
    let states = distinct_states(map.solve_all(&seeds, &cfg)?, 1e-6);
    let best = &states[select_minimiser(&states)?.index];
    let mut out: Vec<f64> = grid.axis_nodes();
    out.extend_from_slice(&best.rho.values);
    out.push(best.report.free_energy);
    Ok(out)
}

/// `frames` snapshots of `ϱ` (each `POINTS` long) from a perturbed uniform
/// state, evolved at `κ = kappa_rel·κ♯` up to `t_final`.
pub fn relax(name: &str, param: f64, side: f64, beta: f64, kappa_rel: f64, t_final: f64, frames: usize) -> Result<Vec<f64>, Error> {
    let (w, grid) = build(name, param, side)?;
    let kappa = kappa_rel * kappa_sharp(&w, beta)?;
    let k = w.dominant_mode().map_or([1, 0], |d| d.mode);
    let nk = norm_const(k, side, 1);
    let u = grid.uniform_value();
    let vals = basis_eval(k, &grid)?.iter().map(|b| u * (1.0 + 0.2 * b / nk)).collect();
    let rho0 = DensityField::normalized(grid, vals)?;
    let frames = frames.max(2);
    let cfg = EvolveConfig { t_final, record_every: t_final / (frames - 1) as f64, keep_states: true, ..Default::default() };
    let traj = evolve(&rho0, &w, kappa, beta, &cfg)?;
    let mut out = Vec::with_capacity(frames * grid.len());
    for i in 0..frames {
        let s = traj.states.get(i).unwrap_or(&traj.final_state);
        out.extend_from_slice(&s.values);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn potential_summary(name: &str, param: f64, side: f64, beta: f64) -> Result<String, JsValue> {
    summary(name, param, side, beta).map_err(to_js)
}

#[wasm_bindgen]
pub fn stationary_profile(name: &str, param: f64, side: f64, beta: f64, kappa_rel: f64) -> Result<Vec<f64>, JsValue> {
    stationary(name, param, side, beta, kappa_rel).map_err(to_js)
}

#[wasm_bindgen]
pub fn relaxation_frames(
    name: &str,
    param: f64,
    side: f64,
    beta: f64,
    kappa_rel: f64,
    t_final: f64,
    frames: usize,
) -> Result<Vec<f64>, JsValue> {
    relax(name, param, side, beta, kappa_rel, t_final, frames).map_err(to_js)
}

#[wasm_bindgen]
pub fn grid_points() -> usize {
    POINTS
}
