//! Interacting particle system `dXᵢ = −κ/N Σⱼ ∇W(Xᵢ − Xⱼ)dt + √(2/β) dBᵢ`
//! on the torus, integrated by Euler–Maruyama.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::torus::{norm_const, DensityField, Mode, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceMethod {
    /// Direct `O(N²)` sum of `∇W(Xᵢ - Xⱼ)`.
    Pairwise,
    /// Exact Fourier sum over the nonzero modes of `W`, `O(N·K)`.
    Spectral,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<[f64; 2]>,
    pub side: f64,
    pub dim: usize,
    pub seed: u64,
    pub kappa: f64,
    pub beta: f64,
    pub t: f64,
}

fn wrap(x: f64, side: f64) -> f64 {
    let y = (x + 0.5 * side).rem_euclid(side) - 0.5 * side;
    // rem_euclid can round up to `side`
    if y >= 0.5 * side {
        -0.5 * side
    } else {
        y
    }
}

impl ParticleEnsemble {
    /// `n` independent uniform positions.
    pub fn uniform(n: usize, side: f64, dim: usize, seed: u64) -> Result<Self> {
        check_shape(n, side, dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| {
                let mut p = [0.0; 2];
                for c in p.iter_mut().take(dim) {
                    *c = rng.gen_range(-0.5 * side..0.5 * side);
                }
                p
            })
            .collect();
        Ok(Self { positions, side, dim, seed, kappa: 0.0, beta: 1.0, t: 0.0 })
    }

    /// `n` samples from a grid density, uniform within each node cell.
    pub fn from_density(rho: &DensityField, n: usize, seed: u64) -> Result<Self> {
        let g = rho.grid;
        check_shape(n, g.side(), g.dim())?;
        let vol = g.cell_volume();
        let mut cdf = Vec::with_capacity(g.len());
        let mut acc = 0.0;
        for v in &rho.values {
            acc += v.max(0.0) * vol;
            cdf.push(acc);
        }
        let h = g.spacing();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let positions = (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(0.0..acc);
                let idx = cdf.partition_point(|&c| c <= u).min(g.len() - 1);
                let node = g.node(idx);
                let mut p = [0.0; 2];
                for a in 0..g.dim() {
                    p[a] = wrap(node[a] + rng.gen_range(-0.5 * h..0.5 * h), g.side());
                }
                p
            })
            .collect();
        Ok(Self { positions, side: g.side(), dim: g.dim(), seed, kappa: 0.0, beta: 1.0, t: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Snapshot CSV with a `# N=…,L=…,seed=…,kappa=…,beta=…,t=…` header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# N={},L={:.17e},seed={},kappa={:.17e},beta={:.17e},t={:.17e}",
            self.len(),
            self.side,
            self.seed,
            self.kappa,
            self.beta,
            self.t
        )?;
        writeln!(out, "{}", if self.dim == 1 { "x" } else { "x,y" })?;
        for p in &self.positions {
            if self.dim == 1 {
                writeln!(out, "{:.17e}", p[0])?;
            } else {
                writeln!(out, "{:.17e},{:.17e}", p[0], p[1])?;
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("particle snapshot: {m}"));
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))??;
        let header = header.strip_prefix("# ").ok_or_else(|| bad("missing header"))?;
        let mut field = std::collections::BTreeMap::new();
        for kv in header.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed header"))?;
            field.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| field.get(k).ok_or_else(|| bad(&format!("header lacks {k}")));
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| bad(&format!("bad {k}"))) };
        let n: usize = get("N")?.parse().map_err(|_| bad("bad N"))?;
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("bad seed"))?;
        let cols = lines.next().ok_or_else(|| bad("missing column line"))??;
        let dim = cols.split(',').count();
        let mut positions = Vec::with_capacity(n);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut p = [0.0; 2];
            for (a, tok) in line.split(',').enumerate().take(dim) {
                p[a] = tok.trim().parse().map_err(|_| bad("bad coordinate"))?;
            }
            positions.push(p);
        }
        if positions.len() != n {
            return Err(bad(&format!("header says N={n}, found {} rows", positions.len())));
        }
        Ok(Self { positions, side: num("L")?, dim, seed, kappa: num("kappa")?, beta: num("beta")?, t: num("t")? })
    }
}

fn check_shape(n: usize, side: f64, dim: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 particles, got {n}")));
    }
    if !(side > 0.0) || !(dim == 1 || dim == 2) {
        return Err(Error::Domain("side must be positive and dim 1 or 2".into()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleConfig {
    pub t_final: f64,
    pub dt: f64,
    pub force: ForceMethod,
    /// Snapshots are kept at multiples of this time.
    pub snapshot_every: Option<f64>,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self { t_final: 1.0, dt: 1e-3, force: ForceMethod::Pairwise, snapshot_every: None }
    }
}

/// Fourier data `(k, W̃(k)/N_k)` over the nonzero signed modes.
struct ModeSum {
    modes: Vec<(Mode, f64)>,
}

impl ModeSum {
    fn new(w: &Potential) -> Self {
        let kmax = w.kmax() as i64;
        let range2 = if w.dim() == 2 { -kmax..=kmax } else { 0..=0 };
        let mut modes = Vec::new();
        for k0 in -kmax..=kmax {
            for k1 in range2.clone() {
                let k = [k0, k1];
                if k == [0, 0] {
                    continue;
                }
                let c = w.coeff(k);
                if c != 0.0 {
                    modes.push((k, c / norm_const(k, w.side(), w.dim())));
                }
            }
        }
        Self { modes }
    }
}

/// `(f, f')` of the axis factor in `w_k`.
fn factor(k: i64, x: f64, side: f64) -> (f64, f64) {
    let q = 2.0 * PI * k as f64 / side;
    let (s, c) = (q * x).sin_cos();
    match k {
        0 => (1.0, 0.0),
        k if k > 0 => (c, -q * s),
        _ => (s, q * c),
    }
}

/// `(w_k(x), ∇w_k(x))`.
fn basis_with_grad(k: Mode, side: f64, dim: usize, x: [f64; 2]) -> (f64, [f64; 2]) {
    let n = norm_const(k, side, dim);
    let (f0, d0) = factor(k[0], x[0], side);
    if dim == 1 {
        return (n * f0, [n * d0, 0.0]);
    }
    let (f1, d1) = factor(k[1], x[1], side);
    (n * f0 * f1, [n * d0 * f1, n * f0 * d1])
}

/// Mean-field drift `−κ/N Σⱼ ∇W(Xᵢ − Xⱼ)` for every particle.
pub fn drift(ens: &ParticleEnsemble, w: &Potential, kappa: f64, method: ForceMethod) -> Result<Vec<[f64; 2]>> {
    let n = ens.len() as f64;
    let (side, dim) = (ens.side, ens.dim);
    match method {
        ForceMethod::Pairwise => {
            if w.eval([0.0; 2]).is_none() {
                return Err(Error::Unavailable(format!("{} has no pointwise gradient", w.name)));
            }
            let pos = &ens.positions;
            Ok(pos
                .par_iter()
                .map(|xi| {
                    let mut f = [0.0; 2];
                    for xj in pos {
                        let d = [wrap(xi[0] - xj[0], side), wrap(xi[1] - xj[1], side)];
                        let (_, g, _) = w.eval(d).expect("checked above");
                        f[0] += g[0];
                        f[1] += g[1];
                    }
                    [-kappa * f[0] / n, -kappa * f[1] / n]
                })
                .collect())
        }
        ForceMethod::Spectral => {
            let sum = ModeSum::new(w);
            // empirical coefficients μ̃(k) = (1/N) Σⱼ w_k(Xⱼ), fixed summation order
            let mu: Vec<f64> = sum
                .modes
                .par_iter()
                .map(|&(k, _)| ens.positions.iter().map(|&x| basis_with_grad(k, side, dim, x).0).sum::<f64>() / n)
                .collect();
            Ok(ens
                .positions
                .par_iter()
                .map(|&x| {
                    let mut f = [0.0; 2];
                    for (&(k, m), &c) in sum.modes.iter().zip(&mu) {
                        let (_, g) = basis_with_grad(k, side, dim, x);
                        f[0] += m * c * g[0];
                        f[1] += m * c * g[1];
                    }
                    [-kappa * f[0], -kappa * f[1]]
                })
                .collect())
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParticleRun {
    pub snapshots: Vec<ParticleEnsemble>,
    pub final_state: ParticleEnsemble,
    pub steps: usize,
}

/// Euler–Maruyama from `initial` up to `cfg.t_final`; the noise stream is
/// seeded from `initial.seed`.
pub fn simulate_particles(
    initial: &ParticleEnsemble,
    w: &Potential,
    kappa: f64,
    beta: f64,
    cfg: &ParticleConfig,
) -> Result<ParticleRun> {
    if !(cfg.t_final > 0.0 && cfg.dt > 0.0 && beta > 0.0 && kappa >= 0.0) {
        return Err(Error::Config("t_final, dt, beta must be positive and kappa nonnegative".into()));
    }
    if w.dim() != initial.dim || (w.side() - initial.side).abs() > 1e-12 * w.side() {
        return Err(Error::Domain("ensemble and potential live on different tori".into()));
    }
    let mut ens = initial.clone();
    ens.kappa = kappa;
    ens.beta = beta;
    // stream distinct from the one used for sampling initial positions
    let mut rng = ChaCha8Rng::seed_from_u64(initial.seed);
    rng.set_stream(1);
    let sigma = (2.0 / beta).sqrt();
    let steps = (cfg.t_final / cfg.dt).round().max(1.0) as usize;
    let every = cfg.snapshot_every.map(|s| ((s / cfg.dt).round() as usize).max(1));
    let mut snapshots = vec![ens.clone()];
    let t0 = ens.t;
    for step in 1..=steps {
        let h = if step == steps { cfg.t_final - (steps - 1) as f64 * cfg.dt } else { cfg.dt };
        let f = if kappa == 0.0 { vec![[0.0; 2]; ens.len()] } else { drift(&ens, w, kappa, cfg.force)? };
        let sq = sigma * h.max(0.0).sqrt();
        for (p, fi) in ens.positions.iter_mut().zip(&f) {
            for a in 0..ens.dim {
                let z: f64 = rng.sample(StandardNormal);
                p[a] = wrap(p[a] + h * fi[a] + sq * z, ens.side);
            }
        }
        ens.t = t0 + cfg.t_final.min(step as f64 * cfg.dt);
        if every.is_some_and(|e| step % e == 0) {
            snapshots.push(ens.clone());
        }
    }
    Ok(ParticleRun { snapshots, final_state: ens, steps })
}

/// Normalised histogram with `bins` bins per axis, spread over the node
/// cells of `grid`; integrates to one under the grid quadrature.
pub fn empirical_density(ens: &ParticleEnsemble, grid: &TorusGrid, bins: usize) -> Result<DensityField> {
    let m = grid.points();
    if bins == 0 || m % bins != 0 {
        return Err(Error::Domain(format!("{bins} bins do not divide {m} grid points")));
    }
    if grid.dim() != ens.dim || (grid.side() - ens.side).abs() > 1e-12 * grid.side() {
        return Err(Error::Domain("ensemble and grid live on different tori".into()));
    }
    let l = grid.side();
    let h = grid.spacing();
    let width = l / bins as f64;
    let bin_of = |x: f64| -> usize { ((((x + 0.5 * l + 0.5 * h).rem_euclid(l)) / width) as usize).min(bins - 1) };
    let nb = if grid.dim() == 1 { bins } else { bins * bins };
    let mut counts = vec![0usize; nb];
    for p in &ens.positions {
        let b = if grid.dim() == 1 { bin_of(p[0]) } else { bin_of(p[0]) * bins + bin_of(p[1]) };
        counts[b] += 1;
    }
    let r = m / bins;
    let n = ens.len() as f64;
    let bin_volume = width.powi(grid.dim() as i32);
    let values = (0..grid.len())
        .map(|idx| {
            let b = if grid.dim() == 1 { idx / r } else { (idx / m / r) * bins + (idx % m) / r };
            counts[b] as f64 / (n * bin_volume)
        })
        .collect();
    DensityField::normalized(*grid, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kura() -> Potential {
        Potential::kuramoto(1, 2.0 * PI, 31).unwrap()
    }

    #[test]
    fn spectral_force_matches_pairwise() {
        let ens = ParticleEnsemble::uniform(200, 2.0 * PI, 1, 7).unwrap();
        let w = kura();
        let a = drift(&ens, &w, 2.0, ForceMethod::Pairwise).unwrap();
        let b = drift(&ens, &w, 2.0, ForceMethod::Spectral).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x[0] - y[0]).abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_force_matches_pairwise_2d() {
        let l = 1.0;
        let w = Potential::from_modes("two", l, 2, 4, &[([1, 0], -1.0), ([1, 2], -0.5), ([3, 3], 0.2)]).unwrap();
        let ens = ParticleEnsemble::uniform(100, l, 2, 3).unwrap();
        let a = drift(&ens, &w, 1.5, ForceMethod::Pairwise).unwrap();
        let b = drift(&ens, &w, 1.5, ForceMethod::Spectral).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x[0] - y[0]).abs() < 1e-11 && (x[1] - y[1]).abs() < 1e-11);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let w = kura();
        let ens = ParticleEnsemble::uniform(300, 2.0 * PI, 1, 11).unwrap();
        let cfg = ParticleConfig { t_final: 0.1, dt: 0.01, ..Default::default() };
        let a = simulate_particles(&ens, &w, 3.0, 1.0, &cfg).unwrap();
        let b = simulate_particles(&ens, &w, 3.0, 1.0, &cfg).unwrap();
        assert_eq!(a.final_state, b.final_state);
        assert!(a.final_state.positions.iter().all(|p| p[0] >= -PI && p[0] < PI));
    }

    #[test]
    fn single_point_gives_single_bin() {
        let g = TorusGrid::line(1.0, 64).unwrap();
        let mut ens = ParticleEnsemble::uniform(10, 1.0, 1, 0).unwrap();
        ens.positions.iter_mut().for_each(|p| *p = [0.1, 0.0]);
        let rho = empirical_density(&ens, &g, 16).unwrap();
        assert!((g.integrate(&rho.values) - 1.0).abs() < 1e-14);
        let support = rho.values.iter().filter(|v| **v > 0.0).count();
        assert_eq!(support, 4);
    }

    #[test]
    fn histogram_is_relabeling_invariant() {
        let g = TorusGrid::square(1.0, 16).unwrap();
        let ens = ParticleEnsemble::uniform(500, 1.0, 2, 5).unwrap();
        let mut rev = ens.clone();
        rev.positions.reverse();
        assert_eq!(empirical_density(&ens, &g, 8).unwrap(), empirical_density(&rev, &g, 8).unwrap());
    }

    #[test]
    fn snapshot_roundtrip() {
        let ens = ParticleEnsemble::uniform(5, 2.0, 2, 9).unwrap();
        let mut buf = Vec::new();
        ens.write_csv(&mut buf).unwrap();
        let back = ParticleEnsemble::read_csv(&buf[..]).unwrap();
        assert_eq!(back, ens);
    }

    #[test]
    fn keller_segel_pairwise_is_unsupported() {
        let w = Potential::keller_segel(0.75, 1.0, 1, 16).unwrap();
        let ens = ParticleEnsemble::uniform(10, 1.0, 1, 0).unwrap();
        assert!(matches!(drift(&ens, &w, 1.0, ForceMethod::Pairwise), Err(Error::Unavailable(_))));
    }
}
