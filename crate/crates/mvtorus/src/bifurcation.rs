//! Linear stability spectrum, bifurcation points, Keller–Segel two-square
//! counts and branch continuation from the uniform state.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potentials::{Potential, DEGENERACY_TOL};
use crate::stationary::{aligned_distance, fixed_point, GibbsMap, SolveConfig, StationaryState};
use crate::torus::{basis_eval, DensityField, Interaction, Mode, TorusGrid};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub mode: Mode,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumReport {
    pub kappa: f64,
    pub beta: f64,
    pub eigenvalues: Vec<Eigenvalue>,
    /// `+∞` for H-stable potentials.
    pub kappa_sharp: f64,
    pub k_sharp: Option<Mode>,
    pub k_sharp_unique: bool,
}

fn wave_sq(k: Mode, side: f64) -> f64 {
    let f = 2.0 * std::f64::consts::PI / side;
    f * f * (k[0] * k[0] + k[1] * k[1]) as f64
}

/// `λ_k = -β⁻¹|2πk/L|² - κ L^{-d/2} |2πk/L|² W̃(k)/Θ(k)`.
pub fn eigenvalue(w: &Potential, k: Mode, kappa: f64, beta: f64) -> f64 {
    let q = wave_sq(k, w.side());
    -q / beta - kappa * w.side().powf(-(w.dim() as f64) / 2.0) * q * w.normalised(k)
}

/// `κ = -L^{d/2} Θ(k)/(β W̃(k))`, the zero of `λ_k`.
pub fn crossing_kappa(w: &Potential, k: Mode, beta: f64) -> f64 {
    -w.side().powf(w.dim() as f64 / 2.0) / (beta * w.normalised(k))
}

/// Eigenvalues over permutation classes up to `kmax` and the crossing `κ♯`.
pub fn spectrum(w: &Potential, kappa: f64, beta: f64, kmax: usize) -> SpectrumReport {
    let eigenvalues = w
        .class_modes(kmax)
        .into_iter()
        .map(|k| Eigenvalue { mode: k, lambda: eigenvalue(w, k, kappa, beta) })
        .collect();
    let (kappa_sharp, k_sharp, k_sharp_unique) = match w.dominant_mode() {
        Some(d) => (crossing_kappa(w, d.mode, beta), Some(d.mode), d.is_unique()),
        None => (f64::INFINITY, None, false),
    };
    SpectrumReport { kappa, beta, eigenvalues, kappa_sharp, k_sharp, k_sharp_unique }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BifurcationPoint {
    pub mode: Mode,
    pub kappa_star: f64,
    /// `W̃(k*)/Θ(k*)`.
    pub ratio: f64,
    /// Classes sharing the normalised coefficient within `DEGENERACY_TOL`.
    pub multiplicity: usize,
    pub simple: bool,
    /// Odd multiplicity above one: a bifurcation point whose branches are not continued.
    pub odd_multiplicity: bool,
    /// Relative gap to the nearest other normalised coefficient.
    pub gap: f64,
}

/// All `k*` up to `kmax` with `W̃(k*) < 0`, one per class of equal
/// normalised coefficient.
pub fn enumerate_bifurcations(w: &Potential, beta: f64, kmax: usize) -> Vec<BifurcationPoint> {
    let classes = w.class_modes(kmax);
    let ratios: Vec<(Mode, f64)> = classes.iter().map(|&k| (k, w.normalised(k))).collect();
    let same = |a: f64, b: f64| (a - b).abs() <= DEGENERACY_TOL * a.abs().max(b.abs());
    let mut out: Vec<BifurcationPoint> = Vec::new();
    for &(k, r) in &ratios {
        if r >= 0.0 || out.iter().any(|p| same(p.ratio, r)) {
            continue;
        }
        let multiplicity = ratios.iter().filter(|&&(_, v)| same(v, r)).count();
        let gap = ratios
            .iter()
            .filter(|&&(_, v)| !same(v, r))
            .map(|&(_, v)| (v - r).abs() / r.abs())
            .fold(f64::INFINITY, f64::min);
        out.push(BifurcationPoint {
            mode: k,
            kappa_star: crossing_kappa(w, k, beta),
            ratio: r,
            multiplicity,
            simple: multiplicity == 1,
            odd_multiplicity: multiplicity > 1 && multiplicity % 2 == 1,
            gap,
        });
    }
    out.sort_by(|a, b| a.kappa_star.total_cmp(&b.kappa_star));
    out
}

/// Jacobi's count `r(z) = d_{1,4}(z) - d_{3,4}(z)`: representations
/// `z = a² + b²` with `a > 0, b ≥ 0`.
pub fn two_square_count(z: u64) -> Result<u64> {
    if z == 0 {
        return Err(Error::Domain("z must be positive".into()));
    }
    // multiplicative form of the divisor difference
    let mut n = z;
    while n % 2 == 0 {
        n /= 2;
    }
    let mut count = 1u64;
    let mut p = 3u64;
    while p * p <= n {
        if n % p == 0 {
            let mut e = 0u64;
            while n % p == 0 {
                n /= p;
                e += 1;
            }
            if p % 4 == 1 {
                count *= e + 1;
            } else if e % 2 == 1 {
                return Ok(0);
            }
        }
        p += 2;
    }
    if n > 1 {
        if n % 4 == 1 {
            count *= 2;
        } else {
            return Ok(0);
        }
    }
    Ok(count)
}

/// Number of classes `{a ≥ b ≥ 0}` with `a² + b² = z`.
pub fn two_square_classes(z: u64) -> Result<u64> {
    let r = two_square_count(z)?;
    let root = (z as f64).sqrt().round() as u64;
    let half = (z % 2 == 0) && {
        let h = ((z / 2) as f64).sqrt().round() as u64;
        h * h * 2 == z
    };
    // ordered pairs: (a,0) once, (a,a) once, other classes twice
    let square = root * root == z;
    let singles = u64::from(square) + u64::from(half);
    Ok(singles + (r - singles) / 2)
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchPoint {
    /// Coefficient of `w_{k*}` in `ϱ - ϱ∞`.
    pub s: f64,
    pub kappa: f64,
    pub l1_distance: f64,
    pub free_energy: f64,
    pub residual: f64,
    pub leading_mode_amplitude: f64,
    #[serde(skip)]
    pub state: Option<StationaryState>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvatureFit {
    pub kappa0: f64,
    pub first_derivative: f64,
    pub second_derivative: f64,
    pub points_used: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct Branch {
    pub origin: BifurcationPoint,
    pub points: Vec<BranchPoint>,
    pub curvature_fit: Option<CurvatureFit>,
    pub diagnostics: Vec<String>,
}

impl Branch {
    /// Points with `s > 0` in increasing order.
    pub fn positive(&self) -> impl Iterator<Item = &BranchPoint> {
        self.points.iter().filter(|p| p.s > 0.0)
    }

    /// Branch CSV: `s,kappa,l1_distance,free_energy,residual,leading_mode_amplitude`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,kappa,l1_distance,free_energy,residual,leading_mode_amplitude")?;
        for p in &self.points {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                p.s, p.kappa, p.l1_distance, p.free_energy, p.residual, p.leading_mode_amplitude
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchConfig {
    pub s_max: f64,
    pub ds: f64,
    pub kappa_max: Option<f64>,
    /// Half-width of the window for the quadratic fit.
    pub fit_window: f64,
    pub solve: SolveConfig,
}

impl Default for BranchConfig {
    fn default() -> Self {
        Self { s_max: 0.05, ds: 0.005, kappa_max: None, fit_window: 0.05, solve: SolveConfig::default() }
    }
}

/// Stationary state with `ϱ̃(k) = s`, solving for `κ` at each step by Newton on
/// the scalar equation `<𝓣_κ ϱ, w_k> = s`.
pub fn solve_at_amplitude(
    w: &Potential,
    grid: &TorusGrid,
    beta: f64,
    k: Mode,
    s: f64,
    kappa_guess: f64,
    seed: &[f64],
    cfg: &SolveConfig,
) -> Result<StationaryState> {
    let interaction = Interaction::new(w, *grid)?;
    let wk = basis_eval(k, grid)?;
    let mut kappa = kappa_guess;
    let run = fixed_point(grid, seed.to_vec(), cfg, |x| {
        let u = interaction.convolve(x);
        let top = u.iter().cloned().fold(f64::INFINITY, f64::min);
        let gibbs = |kap: f64| -> Vec<f64> {
            let mut t: Vec<f64> = u.iter().map(|v| (-beta * kap * (v - top)).exp()).collect();
            let z = grid.integrate(&t);
            t.iter_mut().for_each(|v| *v /= z);
            t
        };
        let mut t = gibbs(kappa);
        for _ in 0..60 {
            let c = grid.inner(&t, &wk);
            let ubar = grid.inner(&u, &t);
            let centred: Vec<f64> = u.iter().zip(&t).map(|(a, b)| (a - ubar) * b).collect();
            let dc = -beta * grid.inner(&centred, &wk);
            if !(dc.is_finite()) || dc == 0.0 {
                return None;
            }
            let step = (c - s) / dc;
            let next = if kappa - step > 0.0 { kappa - step } else { 0.5 * kappa };
            let done = (next - kappa).abs() <= 1e-15 * kappa.abs();
            kappa = next;
            t = gibbs(kappa);
            if done {
                break;
            }
        }
        t.iter().all(|v| v.is_finite()).then_some(t)
    });
    let map = GibbsMap::new(w, *grid, kappa, beta)?;
    let rho = DensityField::normalized(*grid, run.x.iter().map(|v| v.max(0.0)).collect())?;
    let residual = map.residual(&rho.values);
    let converged = run.converged && residual <= 10.0 * cfg.tol.max(1e-14);
    Ok(map.state(rho, residual, converged, run.iterations, run.history))
}

/// Least-squares fit `κ(s) = Σ_{j≤4} c_j s^j` over `|s| ≤ window`.
pub fn fit_curvature(points: &[(f64, f64)], window: f64) -> Option<CurvatureFit> {
    let used: Vec<&(f64, f64)> = points.iter().filter(|p| p.0.abs() <= window * (1.0 + 1e-12)).collect();
    if used.len() < 5 {
        return None;
    }
    let scale = window;
    let a = DMatrix::from_fn(used.len(), 5, |i, j| (used[i].0 / scale).powi(j as i32));
    let b = DVector::from_iterator(used.len(), used.iter().map(|p| p.1));
    let c = a.svd(true, true).solve(&b, 1e-14).ok()?;
    Some(CurvatureFit {
        kappa0: c[0],
        first_derivative: c[1] / scale,
        second_derivative: 2.0 * c[2] / (scale * scale),
        points_used: used.len(),
    })
}

/// Amplitude-parameterised continuation of the branch born at a simple
/// bifurcation point, on both sides `s > 0` and `s < 0`.
pub fn continue_branch(origin: &BifurcationPoint, w: &Potential, grid: &TorusGrid, beta: f64, cfg: &BranchConfig) -> Result<Branch> {
    if !origin.simple {
        return Err(Error::Degenerate(format!(
            "bifurcation at {:?} has multiplicity {}; not continued",
            origin.mode, origin.multiplicity
        )));
    }
    if !(cfg.ds > 0.0 && cfg.s_max >= cfg.ds) {
        return Err(Error::Config("need 0 < ds ≤ s_max".into()));
    }
    let k = origin.mode;
    grid.check_mode(k)?;
    let wk = basis_eval(k, grid)?;
    let u = grid.uniform_value();
    let steps = (cfg.s_max / cfg.ds).round() as usize;

    let side = |sign: f64| -> (Vec<BranchPoint>, Vec<String>) {
        let mut pts: Vec<BranchPoint> = Vec::new();
        let mut notes = Vec::new();
        let mut seed: Vec<f64> = Vec::new();
        let mut hist: Vec<(f64, f64)> = vec![(0.0, origin.kappa_star)];
        for j in 1..=steps {
            let s = sign * cfg.ds * j as f64;
            if pts.is_empty() {
                seed = wk.iter().map(|v| u + s * v).collect();
            }
            if seed.iter().any(|v| *v <= 0.0) {
                notes.push(format!("s={s:.3e}: seed loses positivity"));
                break;
            }
            // secant predictor in s² for κ
            let guess = match hist.len() {
                1 => origin.kappa_star,
                n => {
                    let (s1, k1) = hist[n - 2];
                    let (s2, k2) = hist[n - 1];
                    k2 + (k2 - k1) / (s2 * s2 - s1 * s1) * (s * s - s2 * s2)
                }
            };
            let guess = if guess > 0.0 { guess } else { hist[hist.len() - 1].1 };
            match solve_at_amplitude(w, grid, beta, k, s, guess, &seed, &cfg.solve) {
                Ok(st) if st.converged && st.rho.min_value() > 0.0 => {
                    if let Some(kmax) = cfg.kappa_max {
                        if st.kappa > kmax {
                            notes.push(format!("s={s:.3e}: left the scan range"));
                            break;
                        }
                    }
                    hist.push((s, st.kappa));
                    seed = st.rho.values.clone();
                    pts.push(BranchPoint {
                        s,
                        kappa: st.kappa,
                        l1_distance: st.l1_distance(),
                        free_energy: st.report.free_energy,
                        residual: st.residual,
                        leading_mode_amplitude: st.coeff(k),
                        state: Some(st),
                    });
                }
                Ok(st) => {
                    notes.push(format!("s={s:.3e}: corrector did not converge (residual {:.3e})", st.residual));
                    break;
                }
                Err(e) => {
                    notes.push(format!("s={s:.3e}: {e}"));
                    break;
                }
            }
        }
        (pts, notes)
    };
    let mut halves: Vec<(Vec<BranchPoint>, Vec<String>)> = [1.0, -1.0].par_iter().map(|&sg| side(sg)).collect();
    let (neg, neg_notes) = halves.pop().expect("two halves");
    let (pos, pos_notes) = halves.pop().expect("two halves");

    let trivial = GibbsMap::new(w, *grid, origin.kappa_star, beta)?;
    let uni = grid.uniform();
    let mut points: Vec<BranchPoint> = neg.into_iter().rev().collect();
    points.push(BranchPoint {
        s: 0.0,
        kappa: origin.kappa_star,
        l1_distance: 0.0,
        free_energy: trivial.functional.free_energy(&uni),
        residual: trivial.residual(&uni),
        leading_mode_amplitude: 0.0,
        state: None,
    });
    points.extend(pos);
    let curvature_fit = fit_curvature(&points.iter().map(|p| (p.s, p.kappa)).collect::<Vec<_>>(), cfg.fit_window);
    Ok(Branch {
        origin: origin.clone(),
        points,
        curvature_fit,
        diagnostics: pos_notes.into_iter().chain(neg_notes).collect(),
    })
}

/// Natural-parameter continuation in `κ`: secant predictor on the nodal
/// values, fixed-point corrector. Stops at the first failed correction.
pub fn natural_continuation(
    start: &StationaryState,
    w: &Potential,
    kappas: &[f64],
    cfg: &SolveConfig,
) -> Result<Vec<StationaryState>> {
    let g = start.rho.grid;
    let mut out: Vec<StationaryState> = Vec::new();
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut cur = (start.kappa, start.rho.values.clone());
    for &kappa in kappas {
        let mut seed = cur.1.clone();
        if let Some((k0, v0)) = &prev {
            let t = (kappa - cur.0) / (cur.0 - k0);
            let pred: Vec<f64> = cur.1.iter().zip(v0).map(|(a, b)| a + t * (a - b)).collect();
            if pred.iter().all(|v| *v > 0.0) {
                seed = pred;
            }
        }
        let seed = DensityField::normalized(g, seed)?;
        let st = GibbsMap::new(w, g, kappa, start.beta)?.solve(&seed, cfg)?;
        if !st.converged {
            out.push(st);
            break;
        }
        prev = Some(std::mem::replace(&mut cur, (kappa, st.rho.values.clone())));
        out.push(st);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub applicable: bool,
    pub kappa: f64,
    pub seeds: usize,
    pub converged_nontrivial: usize,
    /// Aligned L² distances of converged nontrivial states from the branch.
    pub off_branch: Vec<f64>,
}

/// Multi-seed solve at `kappa` from random seeds of L² size up to
/// `radius·‖ϱ∞‖₂`; reports nontrivial states away from the branch state at
/// the same `κ`. Inapplicable unless `|κ - κ*| ≤ radius·κ*`.
pub fn local_uniqueness_probe(
    origin: &BifurcationPoint,
    branch: &Branch,
    w: &Potential,
    grid: &TorusGrid,
    beta: f64,
    kappa: f64,
    radius: f64,
    n_seeds: usize,
    rng_seed: u64,
    cfg: &SolveConfig,
) -> Result<ProbeReport> {
    let mut report = ProbeReport { applicable: false, kappa, seeds: n_seeds, converged_nontrivial: 0, off_branch: Vec::new() };
    if (kappa - origin.kappa_star).abs() > radius * origin.kappa_star {
        return Ok(report);
    }
    report.applicable = true;
    // branch state at this κ from the nearest branch point
    let near = branch
        .points
        .iter()
        .filter(|p| p.state.is_some() && p.s > 0.0)
        .min_by(|a, b| (a.kappa - kappa).abs().total_cmp(&(b.kappa - kappa).abs()));
    let map = GibbsMap::new(w, *grid, kappa, beta)?;
    let on_branch = match near {
        Some(p) if kappa > origin.kappa_star => Some(map.solve(&p.state.as_ref().expect("filtered").rho, cfg)?),
        _ => None,
    };
    let u = grid.uniform_value();
    let modes: Vec<Mode> = grid.modes().into_iter().filter(|m| m[0].abs() <= 4 && m[1].abs() <= 4 && *m != [0, 0]).collect();
    let basis: Vec<Vec<f64>> = modes.iter().map(|&m| basis_eval(m, grid)).collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut seeds = Vec::with_capacity(n_seeds);
    while seeds.len() < n_seeds {
        let mut v = vec![0.0; grid.len()];
        for b in &basis {
            let c: f64 = rng.gen_range(-1.0..1.0);
            v.iter_mut().zip(b).for_each(|(x, y)| *x += c * y);
        }
        let norm = grid.l2_norm(&v);
        let amp = rng.gen_range(0.0..radius) * grid.l2_norm(&grid.uniform()) / norm;
        let vals: Vec<f64> = v.iter().map(|x| u + amp * x).collect();
        if vals.iter().all(|x| *x > 0.0) {
            seeds.push(DensityField::normalized(*grid, vals)?);
        }
    }
    let states = map.solve_all(&seeds, cfg)?;
    for st in states.iter().filter(|s| s.converged && !s.is_trivial(1e-6)) {
        report.converged_nontrivial += 1;
        let d = on_branch.as_ref().map_or(f64::INFINITY, |b| aligned_distance(&b.rho, &st.rho));
        if d > 1e-6 {
            report.off_branch.push(d);
        }
    }
    Ok(report)
}
