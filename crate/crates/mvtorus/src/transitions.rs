//! Transition-point detection by κ-scan, continuity classification and the
//! resonance, α-stabilisation and comparison predictors.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::bifurcation::{crossing_kappa, solve_at_amplitude};
use crate::error::{Error, Result};
use crate::functionals::{entdef_g, FreeEnergy};
use crate::potentials::{class_rep, Potential, DEGENERACY_TOL};
use crate::stationary::{distinct_states, select_minimiser, GibbsMap, SolveConfig, StationaryState};
use crate::torus::{basis_eval, norm_const, DensityField, Interaction, Mode, TorusGrid};

/// Amplitude of the pure-resonance competitor.
pub const PURE_RESONANCE_EPS: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    Continuous,
    Discontinuous,
    Undetermined,
    NoTransition,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prediction {
    PredictedContinuous,
    PredictedDiscontinuous,
    NotPredicted,
    Inconclusive,
    Inapplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResonanceStructure {
    /// Minimal normalised coefficient `W̃(k)/Θ(k)`.
    pub min_ratio: f64,
    pub delta_star: Option<f64>,
    /// Largest δ examined (all negative modes admitted).
    pub delta_searched: f64,
    /// `K^{δ*}`, or every negative mode when no triple exists.
    pub k_delta: Vec<Mode>,
    /// Triples `(kᵃ, kᵇ, kᶜ)` with `kᵃ = kᵇ + kᶜ` inside `K^{δ*}`.
    pub triples: Vec<[Mode; 3]>,
    /// Negative modes with their normalised coefficient, ascending.
    pub levels: Vec<(Mode, f64)>,
}

impl ResonanceStructure {
    /// `K^δ`, restricted to negative modes.
    pub fn modes_within(&self, delta: f64) -> Vec<Mode> {
        let cut = self.min_ratio + delta;
        let tol = DEGENERACY_TOL * self.min_ratio.abs();
        self.levels.iter().filter(|l| l.1 <= cut + tol).map(|l| l.0).collect()
    }
}

fn add(a: Mode, b: Mode) -> Mode {
    [a[0] + b[0], a[1] + b[1]]
}

fn sub(a: Mode, b: Mode) -> Mode {
    [a[0] - b[0], a[1] - b[1]]
}

/// Smallest δ for which `K^δ` holds an additive triple, by admitting negative
/// modes in order of their normalised coefficient.
pub fn resonance_structure(w: &Potential, kmax: usize) -> ResonanceStructure {
    let kmax = kmax.min(w.kmax()) as i64;
    let dim = w.dim();
    let mut levels: Vec<(Mode, f64)> = Vec::new();
    for a in 0..=kmax {
        for b in 0..=if dim == 2 { kmax } else { 0 } {
            let k = [a, b];
            if k == [0, 0] {
                continue;
            }
            let r = w.normalised(k);
            if r < 0.0 {
                levels.push((k, r));
            }
        }
    }
    levels.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    let Some(&(_, min_ratio)) = levels.first() else {
        return ResonanceStructure {
            min_ratio: 0.0,
            delta_star: None,
            delta_searched: 0.0,
            k_delta: Vec::new(),
            triples: Vec::new(),
            levels,
        };
    };
    let tol = DEGENERACY_TOL * min_ratio.abs();
    let mut set: HashSet<Mode> = HashSet::new();
    let mut i = 0;
    while i < levels.len() {
        // admit one level of tied coefficients at a time
        let level = levels[i].1;
        let mut j = i;
        while j < levels.len() && levels[j].1 <= level + tol {
            set.insert(levels[j].0);
            j += 1;
        }
        let mut triples = Vec::new();
        for &(m, _) in &levels[i..j] {
            for &b in &set {
                let c = sub(m, b);
                if set.contains(&c) && b >= c {
                    triples.push([m, b, c]);
                }
                let a = add(m, b);
                if set.contains(&a) {
                    let t = if m >= b { [a, m, b] } else { [a, b, m] };
                    triples.push(t);
                }
            }
        }
        if !triples.is_empty() {
            triples.sort();
            triples.dedup();
            let mut k_delta: Vec<Mode> = levels[..j].iter().map(|l| l.0).collect();
            k_delta.sort();
            return ResonanceStructure {
                min_ratio,
                delta_star: Some(level - min_ratio),
                delta_searched: level - min_ratio,
                k_delta,
                triples,
                levels,
            };
        }
        i = j;
    }
    let mut k_delta: Vec<Mode> = levels.iter().map(|l| l.0).collect();
    k_delta.sort();
    ResonanceStructure {
        min_ratio,
        delta_star: None,
        delta_searched: levels.last().map_or(0.0, |l| l.1 - min_ratio),
        k_delta,
        triples: Vec::new(),
        levels,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscontinuityPrediction {
    pub verdict: Prediction,
    pub delta_star: Option<f64>,
    pub kappa_sharp: Option<f64>,
    pub epsilon: Option<f64>,
    /// `F_{κ♯}(competitor) - F_{κ♯}(ϱ∞)`.
    pub competitor_gap: Option<f64>,
    pub reason: String,
}

/// Competitor test at `κ♯`: `ϱ∞(1 + ε Σ_{K^{δ*}} w_k)` against `ϱ∞`.
pub fn predict_discontinuous(w: &Potential, beta: f64, grid: &TorusGrid) -> Result<DiscontinuityPrediction> {
    let rs = resonance_structure(w, grid.band());
    let mut out = DiscontinuityPrediction {
        verdict: Prediction::NotPredicted,
        delta_star: rs.delta_star,
        kappa_sharp: None,
        epsilon: None,
        competitor_gap: None,
        reason: String::new(),
    };
    let Some(dom) = w.dominant_mode() else {
        out.verdict = Prediction::Inapplicable;
        out.reason = "H-stable potential".into();
        return Ok(out);
    };
    let kappa_sharp = crossing_kappa(w, dom.mode, beta);
    out.kappa_sharp = Some(kappa_sharp);
    let Some(delta_star) = rs.delta_star else {
        out.reason = format!("no additive triple among negative modes (δ searched up to {:.3e})", rs.delta_searched);
        return Ok(out);
    };
    let mut sum = vec![0.0; grid.len()];
    for &k in &rs.k_delta {
        for (s, v) in sum.iter_mut().zip(basis_eval(k, grid)?) {
            *s += v;
        }
    }
    let functional = FreeEnergy::new(w, *grid, kappa_sharp, beta)?;
    let u = grid.uniform_value();
    let mut eps = if delta_star > 0.0 { delta_star.sqrt() } else { PURE_RESONANCE_EPS };
    for _ in 0..60 {
        let vals: Vec<f64> = sum.iter().map(|s| u * (1.0 + eps * s)).collect();
        if vals.iter().all(|v| *v > 0.0) {
            let gap = functional.free_energy_gap(&vals);
            out.epsilon = Some(eps);
            out.competitor_gap = Some(gap);
            if gap < 0.0 {
                out.verdict = Prediction::PredictedDiscontinuous;
                out.reason = format!("competitor lowers the free energy at κ♯ by {:.3e}", -gap);
            } else {
                out.reason = "competitor does not lower the free energy at κ♯".into();
            }
            return Ok(out);
        }
        eps *= 0.5;
    }
    Err(Error::Numerical("competitor stays nonpositive for every ε tried".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuityPrediction {
    pub verdict: Prediction,
    pub kappa_sharp: Option<f64>,
    /// Largest non-dominant negative normalised coefficient relative to the dominant one.
    pub alpha_eff: Option<f64>,
    /// Upper bound on `‖ϱ‖₂²` over critical points at `κ♯`.
    pub norm_bound: Option<f64>,
    /// Amplitude `c` beyond which `𝓖(c) > α_eff Lᵈ/2 · bound`.
    pub c_min: Option<f64>,
    /// Smallest `k♯` orbit amplitude among nontrivial critical points found at `κ♯`.
    pub smallest_found: Option<f64>,
    pub reason: String,
}

fn nonzero_components(k: Mode) -> usize {
    k.iter().filter(|&&c| c != 0).count()
}

/// Entropy-defect test at `κ♯`: every nontrivial critical point must carry a
/// `k♯` amplitude `c` with `𝓖(c) > α_eff Lᵈ/2 · ‖ϱ‖₂²`. Critical points are
/// sought by a multi-seed solve on `grid`.
pub fn predict_continuous(w: &Potential, beta: f64, grid: &TorusGrid, cfg: &SolveConfig) -> Result<ContinuityPrediction> {
    let mut out = ContinuityPrediction {
        verdict: Prediction::Inconclusive,
        kappa_sharp: None,
        alpha_eff: None,
        norm_bound: None,
        c_min: None,
        smallest_found: None,
        reason: String::new(),
    };
    let Some(dom) = w.dominant_mode() else {
        out.verdict = Prediction::Inapplicable;
        out.reason = "H-stable potential".into();
        return Ok(out);
    };
    if !dom.is_unique() {
        out.verdict = Prediction::Inapplicable;
        out.reason = format!("dominant mode shared by {} classes", dom.multiplicity);
        return Ok(out);
    }
    let ks = dom.mode;
    let kappa_sharp = crossing_kappa(w, ks, beta);
    out.kappa_sharp = Some(kappa_sharp);
    let sharp = class_rep(ks, w.dim());
    let alpha_eff = w
        .class_modes(w.kmax())
        .into_iter()
        .filter(|&k| class_rep(k, w.dim()) != sharp && w.coeff(k) < 0.0)
        .map(|k| w.normalised(k) / dom.ratio)
        .fold(0.0f64, f64::max);
    out.alpha_eff = Some(alpha_eff);
    if alpha_eff == 0.0 {
        out.verdict = Prediction::PredictedContinuous;
        out.reason = "single negative class: entropy defect dominates".into();
        return Ok(out);
    }
    let norms = w.sup_norms();
    let (Some(neg), Some(l1), Some(osc)) = (norms.negative, norms.l1, norms.oscillation) else {
        out.reason = "norm bound needs a nodal form".into();
        return Ok(out);
    };
    let vol = w.side().powi(w.dim() as i32);
    let bk = beta * kappa_sharp;
    let bound = ((bk * osc).exp() / vol).min((bk * (neg + l1 / vol)).exp() / vol);
    out.norm_bound = Some(bound);
    let target = alpha_eff * vol / 2.0 * bound;
    let n = nonzero_components(ks);
    let g = |c: f64| entdef_g(n, c, w.side(), w.dim());
    // |ϱ̃(k)| over the sign orbit cannot exceed N_k times the orbit size
    let cap = norm_const(ks, w.side(), w.dim()) * (1usize << n) as f64;
    if g(cap)? <= target {
        out.reason = format!("𝓖 stays below α_eff·Lᵈ/2·bound = {target:.3e} for every admissible amplitude");
        return Ok(out);
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid)? > target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    out.c_min = Some(hi);

    let seeds = generic_seeds(w, grid, &[ks])?;
    let map = GibbsMap::new(w, *grid, kappa_sharp, beta)?;
    let states = map.solve_all(&seeds, cfg)?;
    let found = distinct_states(states, 1e-6);
    let smallest = found
        .iter()
        .filter(|s| !s.is_trivial(CRITICAL_L1))
        .map(|s| s.rho.spectral().orbit_amplitude(ks))
        .fold(f64::INFINITY, f64::min);
    if smallest.is_finite() {
        out.smallest_found = Some(smallest);
    }
    if smallest < hi {
        out.reason = format!("nontrivial critical point with k♯ amplitude {smallest:.3e} below c = {hi:.3e}");
    } else {
        out.verdict = Prediction::PredictedContinuous;
        out.reason = format!("no nontrivial critical point at κ♯ with k♯ amplitude below c = {hi:.3e}");
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonVerdict {
    pub verdict: Prediction,
    pub reason: String,
}

/// `G` inherits a continuous transition from `W` when both share `k♯` and
/// its coefficient and `G̃ ≥ W̃` elsewhere.
pub fn comparison_check(w: &Potential, g: &Potential, w_classification: Classification) -> ComparisonVerdict {
    let fail = |reason: String| ComparisonVerdict { verdict: Prediction::Inapplicable, reason };
    if w.dim() != g.dim() || (w.side() - g.side()).abs() > 1e-12 * w.side() {
        return fail("potentials live on different tori".into());
    }
    let (Some(dw), Some(dg)) = (w.dominant_mode(), g.dominant_mode()) else {
        return fail("both potentials need a negative mode".into());
    };
    if !dw.is_unique() || !dg.is_unique() || class_rep(dw.mode, w.dim()) != class_rep(dg.mode, g.dim()) {
        return fail("dominant modes differ or are not unique".into());
    }
    let ks = dw.mode;
    let scale = w.coeff(ks).abs();
    if (w.coeff(ks) - g.coeff(ks)).abs() > 1e-12 * scale {
        return fail(format!("dominant coefficients differ: {} vs {}", w.coeff(ks), g.coeff(ks)));
    }
    let kmax = w.kmax().max(g.kmax()) as i64;
    let upper = if w.dim() == 2 { kmax } else { 0 };
    for a in 0..=kmax {
        for b in 0..=upper {
            let k = [a, b];
            if g.coeff(k) < w.coeff(k) - 1e-12 * scale {
                return fail(format!("G̃({k:?}) < W̃({k:?})"));
            }
        }
    }
    if w_classification == Classification::Continuous {
        ComparisonVerdict { verdict: Prediction::PredictedContinuous, reason: "inherits the continuous transition of W".into() }
    } else {
        ComparisonVerdict {
            verdict: Prediction::NotPredicted,
            reason: "hypotheses hold but W is not classified continuous".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BdzVerdict {
    pub verdict: Prediction,
    /// `2W̃(2) - W̃(1)`.
    pub indicator: f64,
    pub reason: String,
}

/// Sign of `2W̃(2) - W̃(1)` under mode separation at `κ♯`.
pub fn bdz_criterion(w: &Potential) -> BdzVerdict {
    let w1 = w.coeff([1, 0]);
    let w2 = w.coeff([2, 0]);
    let indicator = 2.0 * w2 - w1;
    let inapplicable = |reason: &str| BdzVerdict { verdict: Prediction::Inapplicable, indicator, reason: reason.into() };
    if w.dim() != 1 {
        return inapplicable("one-dimensional potentials only");
    }
    if !(w1 < 0.0) {
        return inapplicable("W̃(1) must be negative");
    }
    // at κ♯ = -√(2L)/(βW̃(1)) the k-th factor is √(2L)(1 - W̃(k)/W̃(1))
    let separated = (2..=w.kmax()).all(|k| w.coeff([k as i64, 0]) / w1 < 1.0 - DEGENERACY_TOL);
    if !separated {
        return inapplicable("modes k ≥ 2 are not separated from k = 1");
    }
    let tol = 1e-9 * w1.abs();
    if indicator > tol {
        BdzVerdict { verdict: Prediction::PredictedContinuous, indicator, reason: "2W̃(2) - W̃(1) > 0".into() }
    } else if indicator < -tol {
        BdzVerdict { verdict: Prediction::PredictedDiscontinuous, indicator, reason: "2W̃(2) - W̃(1) < 0".into() }
    } else {
        BdzVerdict { verdict: Prediction::Inconclusive, indicator, reason: "2W̃(2) - W̃(1) vanishes within tolerance".into() }
    }
}

/// States closer than this to `ϱ∞` in L¹ count as trivial.
pub const NONTRIVIAL_L1: f64 = 1e-5;
/// Triviality cutoff at `κ♯`, where the residual of a near-uniform iterate
/// decays only like the cube of its amplitude.
const CRITICAL_L1: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanConfig {
    pub points: usize,
    /// Probes in the initial sweep.
    pub coarse: usize,
    /// Final bracket width relative to `κ♯`.
    pub rel_tol: f64,
    pub jump_threshold: f64,
    /// Bracket tolerance relative to `κ♯` for the classification.
    pub bracket_rel: f64,
    /// Lowest-ratio negative classes used for perturbative seeds.
    pub seed_modes: usize,
    /// Seed amplitudes as fractions of the positivity limit.
    pub seed_fractions: Vec<f64>,
    /// Strengths `A` of concentrated seeds `exp(A w_k/N_k)`.
    pub bump_strengths: Vec<f64>,
    pub solve: SolveConfig,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            points: 256,
            coarse: 12,
            rel_tol: 1e-6,
            jump_threshold: 1e-2,
            bracket_rel: 1e-3,
            seed_modes: 2,
            seed_fractions: vec![0.2, 0.8],
            bump_strengths: vec![3.0, 30.0],
            solve: SolveConfig { max_iter: 4000, ..SolveConfig::default() },
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        self.solve.validate()?;
        if self.coarse < 2 {
            return Err(Error::Config("coarse sweep needs at least two probes".into()));
        }
        if !(self.rel_tol > 0.0 && self.bracket_rel > 0.0 && self.jump_threshold > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.seed_fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config("seed fractions must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Probe {
    pub kappa: f64,
    /// Least free energy among `ϱ∞` and the states found.
    pub min_free_energy: f64,
    /// `min F - F(ϱ∞)`, never positive.
    pub min_gap: f64,
    /// `‖ϱ_κ - ϱ∞‖₁` of the selected minimiser.
    pub l1_distance: f64,
    pub n_states_found: usize,
    pub unconverged: usize,
    /// A nontrivial state with `F ≤ F(ϱ∞)` was found.
    pub nontrivial_minimiser: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evidence {
    pub delta_star: Option<f64>,
    pub resonance_triples: Vec<[Mode; 3]>,
    /// `κ` where the branch from `k♯` first reaches `F ≤ F(ϱ∞)`.
    pub free_energy_crossing: Option<f64>,
    pub discontinuity: Option<DiscontinuityPrediction>,
    pub continuity: Option<ContinuityPrediction>,
    /// `κ ↦ min F_κ - (κ/2)E(ϱ∞, ϱ∞)` nonincreasing over the probes.
    pub monotone: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionReport {
    pub potential: String,
    pub beta: f64,
    pub kappa_range: [f64; 2],
    pub kappa_sharp: Option<f64>,
    pub k_sharp: Option<Mode>,
    pub kappa_c: Option<f64>,
    pub bracket: Option<[f64; 2]>,
    pub classification: Classification,
    pub l1_jump: Option<f64>,
    pub evidence: Evidence,
    /// Probes in increasing `κ`.
    pub probes: Vec<Probe>,
    pub notes: Vec<String>,
}

impl TransitionReport {
    /// Scan trace CSV: `kappa,min_free_energy,l1_distance,n_states_found`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "kappa,min_free_energy,l1_distance,n_states_found")?;
        for p in &self.probes {
            writeln!(out, "{:.16e},{:.16e},{:.16e},{}", p.kappa, p.min_free_energy, p.l1_distance, p.n_states_found)?;
        }
        Ok(())
    }
}

/// Perturbative seeds on the lowest negative classes and concentrated seeds on
/// `focus`.
pub fn generic_seeds(w: &Potential, grid: &TorusGrid, focus: &[Mode]) -> Result<Vec<DensityField>> {
    seeds_from(w, grid, focus, 2, &[0.2, 0.8], &[3.0, 30.0])
}

fn seeds_from(
    w: &Potential,
    grid: &TorusGrid,
    focus: &[Mode],
    n_modes: usize,
    fractions: &[f64],
    strengths: &[f64],
) -> Result<Vec<DensityField>> {
    let rs = resonance_structure(w, grid.band());
    let mut modes: Vec<Mode> = Vec::new();
    for &(k, _) in &rs.levels {
        if modes.len() >= n_modes {
            break;
        }
        if !modes.iter().any(|m| class_rep(*m, w.dim()) == class_rep(k, w.dim())) {
            modes.push(k);
        }
    }
    let u = grid.uniform_value();
    let mut out = Vec::new();
    for &k in &modes {
        let wk = basis_eval(k, grid)?;
        let peak = wk.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for &f in fractions {
            for sign in [1.0, -1.0] {
                let vals: Vec<f64> = wk.iter().map(|v| u + sign * f * u * v / peak).collect();
                out.push(DensityField::normalized(*grid, vals)?);
            }
        }
    }
    for &k in focus {
        let wk = basis_eval(k, grid)?;
        let nk = norm_const(k, grid.side(), grid.dim());
        for &a in strengths {
            let vals: Vec<f64> = wk.iter().map(|v| (a * (v / nk - 1.0)).exp()).collect();
            out.push(DensityField::normalized(*grid, vals)?);
        }
    }
    Ok(out)
}

/// Branch from `k` traced in the amplitude `s = ϱ̃(k)`, positive side only.
fn trace_branch(
    w: &Potential,
    grid: &TorusGrid,
    beta: f64,
    k: Mode,
    kappa_cap: f64,
    cfg: &SolveConfig,
) -> Vec<StationaryState> {
    let nk = norm_const(k, grid.side(), grid.dim());
    let mut svals = Vec::new();
    let mut s = 1e-4 * nk;
    while s < 0.05 * nk {
        svals.push(s);
        s *= 1.6;
    }
    let mut s = 0.05 * nk;
    while s < 0.98 * nk {
        svals.push(s);
        s += 0.02 * nk;
    }
    let Ok(wk) = basis_eval(k, grid) else { return Vec::new() };
    let u = grid.uniform_value();
    let kappa_star = crossing_kappa(w, k, beta);
    let mut out: Vec<StationaryState> = Vec::new();
    let mut hist: Vec<(f64, f64)> = vec![(0.0, kappa_star)];
    for &s in &svals {
        let seed: Vec<f64> = match out.last() {
            Some(st) => st.rho.values.clone(),
            None => wk.iter().map(|v| u + s * v).collect(),
        };
        let n = hist.len();
        let guess = if n >= 2 {
            let (s1, k1) = hist[n - 2];
            let (s2, k2) = hist[n - 1];
            let g = k2 + (k2 - k1) / (s2 - s1) * (s - s2);
            if g > 0.0 {
                g
            } else {
                k2
            }
        } else {
            kappa_star
        };
        match solve_at_amplitude(w, grid, beta, k, s, guess, &seed, cfg) {
            Ok(st) if st.converged && st.rho.min_value() > 0.0 => {
                let kap = st.kappa;
                hist.push((s, kap));
                out.push(st);
                if kap > kappa_cap {
                    break;
                }
            }
            _ => break,
        }
    }
    out
}

/// Seeds interpolated along the branch at `kappa`, plus the two nearest
/// branch states.
fn branch_seeds(branch: &[StationaryState], kappa: f64) -> Vec<DensityField> {
    let mut out = Vec::new();
    for pair in branch.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (lo, hi) = if a.kappa <= b.kappa { (a, b) } else { (b, a) };
        if kappa >= lo.kappa && kappa <= hi.kappa && hi.kappa > lo.kappa {
            let t = (kappa - lo.kappa) / (hi.kappa - lo.kappa);
            let vals: Vec<f64> = lo.rho.values.iter().zip(&hi.rho.values).map(|(x, y)| x + t * (y - x)).collect();
            if let Ok(d) = DensityField::normalized(lo.rho.grid, vals) {
                out.push(d);
            }
        }
    }
    let mut idx: Vec<usize> = (0..branch.len()).collect();
    idx.sort_by(|&i, &j| (branch[i].kappa - kappa).abs().total_cmp(&(branch[j].kappa - kappa).abs()));
    out.extend(idx.into_iter().take(2).map(|i| branch[i].rho.clone()));
    out
}

struct Scanner<'a> {
    w: &'a Potential,
    grid: TorusGrid,
    beta: f64,
    seeds: Vec<DensityField>,
    branch: Vec<StationaryState>,
    cfg: &'a ScanConfig,
}

struct ProbeOutcome {
    probe: Probe,
    minimiser: Option<StationaryState>,
}

impl Scanner<'_> {
    fn probe(&self, kappa: f64) -> Result<ProbeOutcome> {
        let map = GibbsMap::new(self.w, self.grid, kappa, self.beta)?;
        let mut seeds = branch_seeds(&self.branch, kappa);
        seeds.extend(self.seeds.iter().cloned());
        let mut states = map.solve_all(&seeds, &self.cfg.solve)?;
        // retry stalled solves with heavier damping
        let retry_cfg = SolveConfig {
            damping: 0.5 * self.cfg.solve.damping,
            max_iter: 2 * self.cfg.solve.max_iter,
            ..self.cfg.solve.clone()
        };
        let retried: Vec<(usize, StationaryState)> = states
            .par_iter()
            .enumerate()
            .filter(|(_, s)| !s.converged)
            .map(|(i, _)| map.solve(&seeds[i], &retry_cfg).map(|s| (i, s)))
            .collect::<Result<_>>()?;
        for (i, s) in retried {
            states[i] = s;
        }
        let unconverged = states.iter().filter(|s| !s.converged).count();
        let found = distinct_states(states, 1e-6);
        let candidates: Vec<StationaryState> = found
            .iter()
            .filter(|s| !s.is_trivial(NONTRIVIAL_L1) && s.free_energy_gap <= 0.0)
            .cloned()
            .collect();
        let f_inf = map.functional.free_energy(&self.grid.uniform());
        let (min_gap, l1, minimiser) = if candidates.is_empty() {
            (0.0, 0.0, None)
        } else {
            let sel = select_minimiser(&candidates)?;
            let st = candidates[sel.index].clone();
            (st.free_energy_gap.min(0.0), st.l1_distance(), Some(st))
        };
        Ok(ProbeOutcome {
            probe: Probe {
                kappa,
                min_free_energy: f_inf + min_gap,
                min_gap,
                l1_distance: l1,
                n_states_found: found.len(),
                unconverged,
                nontrivial_minimiser: minimiser.is_some(),
            },
            minimiser,
        })
    }
}

/// Bisection for the smallest `κ` in `kappa_range` at which a nontrivial state
/// with `F ≤ F(ϱ∞)` exists, with continuity classification.
pub fn scan_transition(w: &Potential, beta: f64, kappa_range: (f64, f64), cfg: &ScanConfig) -> Result<TransitionReport> {
    cfg.validate()?;
    let (lo0, hi0) = kappa_range;
    if !(lo0 > 0.0 && hi0 > lo0) {
        return Err(Error::Config(format!("need 0 < κ_lo < κ_hi, got [{lo0}, {hi0}]")));
    }
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("β must be positive, got {beta}")));
    }
    let grid = TorusGrid::new(w.dim(), w.side(), cfg.points)?;
    w.check_grid(&grid)?;
    let rs = resonance_structure(w, grid.band());
    let mut report = TransitionReport {
        potential: w.name.clone(),
        beta,
        kappa_range: [lo0, hi0],
        kappa_sharp: None,
        k_sharp: None,
        kappa_c: None,
        bracket: None,
        classification: Classification::NoTransition,
        l1_jump: None,
        evidence: Evidence {
            delta_star: rs.delta_star,
            resonance_triples: rs.triples.clone(),
            free_energy_crossing: None,
            discontinuity: None,
            continuity: None,
            monotone: true,
        },
        probes: Vec::new(),
        notes: Vec::new(),
    };
    let Some(dom) = w.dominant_mode() else {
        report.notes.push("H-stable potential: ϱ∞ is the unique minimiser for every κ".into());
        return Ok(report);
    };
    let ks = dom.mode;
    let kappa_sharp = crossing_kappa(w, ks, beta);
    report.kappa_sharp = Some(kappa_sharp);
    report.k_sharp = Some(ks);
    report.evidence.discontinuity = Some(predict_discontinuous(w, beta, &grid)?);
    report.evidence.continuity = Some(predict_continuous(w, beta, &grid, &cfg.solve)?);

    let branch = if dom.is_unique() {
        trace_branch(w, &grid, beta, ks, hi0.max(kappa_sharp) * 1.5, &cfg.solve)
    } else {
        report.notes.push(format!("k♯ shared by {} classes: no branch seeds", dom.multiplicity));
        Vec::new()
    };
    report.evidence.free_energy_crossing = branch.iter().find(|s| s.free_energy_gap <= 0.0).map(|s| s.kappa);
    let scanner = Scanner {
        w,
        grid,
        beta,
        seeds: seeds_from(w, &grid, &[ks], cfg.seed_modes, &cfg.seed_fractions, &cfg.bump_strengths)?,
        branch,
        cfg,
    };

    let coarse: Vec<f64> = (0..cfg.coarse)
        .map(|i| lo0 + (hi0 - lo0) * i as f64 / (cfg.coarse - 1) as f64)
        .collect();
    let sweep: Vec<ProbeOutcome> = coarse.par_iter().map(|&k| scanner.probe(k)).collect::<Result<_>>()?;
    let first = sweep.iter().position(|o| o.probe.nontrivial_minimiser);
    let mut outcomes: Vec<ProbeOutcome> = Vec::new();
    let mut upper: Option<ProbeOutcome> = None;
    let mut bracket = None;
    match first {
        None => {
            report.notes.push("no nontrivial minimiser in the scanned range".into());
            outcomes.extend(sweep);
        }
        Some(0) => {
            report.notes.push("nontrivial minimiser already at the lower end of the range".into());
            bracket = Some([lo0, lo0]);
            outcomes.extend(sweep);
        }
        Some(j) => {
            let (mut lo, mut hi) = (coarse[j - 1], coarse[j]);
            let mut sweep = sweep;
            let mut best = sweep.remove(j);
            outcomes.extend(sweep);
            let width = cfg.rel_tol * kappa_sharp.min(hi0);
            while hi - lo > width {
                let mid = 0.5 * (lo + hi);
                let o = scanner.probe(mid)?;
                if o.probe.nontrivial_minimiser {
                    hi = mid;
                    outcomes.push(std::mem::replace(&mut best, o));
                } else {
                    lo = mid;
                    outcomes.push(o);
                }
            }
            bracket = Some([lo, hi]);
            upper = Some(best);
        }
    }

    if let Some(u) = upper {
        let [lo, hi] = bracket.expect("bracket set with upper");
        let kc = 0.5 * (lo + hi);
        let jump = u.minimiser.as_ref().map_or(0.0, |s| s.l1_distance());
        report.kappa_c = Some(kc);
        report.l1_jump = Some(jump);
        let tol = cfg.bracket_rel * kappa_sharp;
        report.classification = if jump < cfg.jump_threshold && (kc - kappa_sharp).abs() < tol {
            Classification::Continuous
        } else if jump >= cfg.jump_threshold && kc < kappa_sharp - tol {
            Classification::Discontinuous
        } else {
            Classification::Undetermined
        };
        outcomes.push(u);
    } else if bracket.is_some() {
        report.kappa_c = Some(lo0);
        report.bracket = bracket;
        report.classification = Classification::Undetermined;
    }
    if report.bracket.is_none() {
        report.bracket = bracket;
    }
    let mut probes: Vec<Probe> = outcomes.into_iter().map(|o| o.probe).collect();
    probes.sort_by(|a, b| a.kappa.total_cmp(&b.kappa));
    let unconverged: usize = probes.iter().map(|p| p.unconverged).sum();
    if unconverged > 0 {
        report.notes.push(format!("{unconverged} seed solves did not converge after retry"));
    }
    let e_inf = {
        let inter = Interaction::new(w, grid)?;
        let uni = grid.uniform();
        inter.bilinear(&uni, &uni)
    };
    report.evidence.monotone = probes.windows(2).all(|p| {
        let h = |q: &Probe| q.min_free_energy - 0.5 * q.kappa * e_inf;
        h(&p[1]) <= h(&p[0]) + 1e-9 * (1.0 + h(&p[0]).abs())
    });
    report.probes = probes;
    Ok(report)
}
