//! Entropy, interaction energy, free energy, relative entropy, dissipation,
//! Euler–Lagrange residual and the entropy-defect bound.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::potentials::Potential;
use crate::torus::{DensityField, Interaction, Mode, TorusGrid};

/// Floor under the logarithm in the Fisher information.
const LOG_FLOOR: f64 = 1e-30;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalReport {
    /// `∫ϱ log ϱ`.
    pub entropy: f64,
    /// `E(ϱ,ϱ) = ∬W(x-y)ϱ(x)ϱ(y)`.
    pub energy: f64,
    pub free_energy: f64,
    pub relative_entropy: f64,
    pub dissipation: f64,
    pub el_residual: f64,
    /// Set when some nodal value is nonpositive and the +∞ sentinel is used.
    pub nonpositive: bool,
}

/// Functionals of one potential at fixed `(κ, β)` on one grid.
#[derive(Clone)]
pub struct FreeEnergy {
    pub interaction: Interaction,
    pub kappa: f64,
    pub beta: f64,
}

fn all_positive(v: &[f64]) -> bool {
    v.iter().all(|&x| x > 0.0)
}

impl FreeEnergy {
    pub fn new(w: &Potential, grid: TorusGrid, kappa: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if !(kappa >= 0.0) {
            return Err(Error::Domain(format!("kappa must be nonnegative, got {kappa}")));
        }
        Ok(Self { interaction: Interaction::new(w, grid)?, kappa, beta })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.interaction.grid()
    }

    /// `∫ϱ log ϱ`, `+∞` if some value is nonpositive.
    pub fn entropy(&self, rho: &[f64]) -> f64 {
        if !all_positive(rho) {
            return f64::INFINITY;
        }
        self.grid().cell_volume() * rho.iter().map(|v| v * v.ln()).sum::<f64>()
    }

    pub fn energy(&self, rho: &[f64]) -> f64 {
        self.interaction.bilinear(rho, rho)
    }

    pub fn free_energy(&self, rho: &[f64]) -> f64 {
        let s = self.entropy(rho);
        if s.is_infinite() {
            return s;
        }
        s / self.beta + 0.5 * self.kappa * self.energy(rho)
    }

    /// `H(ϱ|ϱ∞) = ∫ϱ log(ϱ/ϱ∞)`.
    pub fn relative_entropy(&self, rho: &[f64]) -> f64 {
        relative_entropy(self.grid(), rho)
    }

    /// `F(ϱ) - F(ϱ∞)` through the gap identity, free of cancellation.
    pub fn free_energy_gap(&self, rho: &[f64]) -> f64 {
        let h = self.relative_entropy(rho);
        if h.is_infinite() {
            return h;
        }
        let u = self.grid().uniform_value();
        let d: Vec<f64> = rho.iter().map(|v| v - u).collect();
        h / self.beta + 0.5 * self.kappa * self.interaction.bilinear(&d, &d)
    }

    /// `log ϱ + βκ W⋆ϱ` at the nodes (`None` if not strictly positive).
    fn potential_field(&self, rho: &[f64]) -> Option<Vec<f64>> {
        if !all_positive(rho) {
            return None;
        }
        let conv = self.interaction.convolve(rho);
        let bk = self.beta * self.kappa;
        Some(rho.iter().zip(&conv).map(|(r, c)| r.ln() + bk * c).collect())
    }

    /// `∫|∇ log(ϱ/exp(-βκW⋆ϱ))|² ϱ`.
    pub fn dissipation(&self, rho: &[f64]) -> f64 {
        let Some(u) = self.potential_field(rho) else {
            return f64::INFINITY;
        };
        let sp = self.interaction.spectral();
        let grads = sp.gradient(&sp.forward(&u));
        let mut acc = 0.0;
        for (i, r) in rho.iter().enumerate() {
            let g2: f64 = grads.iter().map(|g| g[i] * g[i]).sum();
            acc += g2 * r;
        }
        acc * self.grid().cell_volume()
    }

    /// `sup |β⁻¹ log ϱ + κW⋆ϱ - c̄|` with `c̄` the ϱ-weighted mean.
    pub fn el_residual(&self, rho: &[f64]) -> f64 {
        let Some(u) = self.potential_field(rho) else {
            return f64::INFINITY;
        };
        let g = self.grid();
        let mass = g.integrate(rho);
        let mean = g.inner(&u, rho) / mass;
        u.iter().fold(0.0f64, |a, v| a.max((v - mean).abs())) / self.beta
    }

    pub fn report(&self, rho: &[f64]) -> FunctionalReport {
        let entropy = self.entropy(rho);
        let energy = self.energy(rho);
        FunctionalReport {
            entropy,
            energy,
            free_energy: if entropy.is_finite() {
                entropy / self.beta + 0.5 * self.kappa * energy
            } else {
                f64::INFINITY
            },
            relative_entropy: self.relative_entropy(rho),
            dissipation: self.dissipation(rho),
            el_residual: self.el_residual(rho),
            nonpositive: !all_positive(rho),
        }
    }
}

pub fn free_energy(rho: &DensityField, w: &Potential, kappa: f64, beta: f64) -> Result<f64> {
    Ok(FreeEnergy::new(w, rho.grid, kappa, beta)?.free_energy(&rho.values))
}

pub fn el_residual(rho: &DensityField, w: &Potential, kappa: f64, beta: f64) -> Result<f64> {
    Ok(FreeEnergy::new(w, rho.grid, kappa, beta)?.el_residual(&rho.values))
}

pub fn dissipation(rho: &DensityField, w: &Potential, kappa: f64, beta: f64) -> Result<f64> {
    Ok(FreeEnergy::new(w, rho.grid, kappa, beta)?.dissipation(&rho.values))
}

/// `∫ϱ log(ϱ/ϱ∞)`; zero values contribute 0, negative values give `+∞`.
pub fn relative_entropy(grid: &TorusGrid, rho: &[f64]) -> f64 {
    if rho.iter().any(|&v| v < 0.0) {
        return f64::INFINITY;
    }
    let u = grid.uniform_value();
    grid.cell_volume() * rho.iter().map(|&v| if v > 0.0 { v * (v / u).ln() } else { 0.0 }).sum::<f64>()
}

/// `∫|∇ log ϱ|² ϱ` computed spectrally.
pub fn fisher_information(grid: &TorusGrid, rho: &[f64]) -> f64 {
    let sp = crate::torus::Spectral::new(*grid);
    let logr: Vec<f64> = rho.iter().map(|v| v.max(LOG_FLOOR).ln()).collect();
    let grads = sp.gradient(&sp.forward(&logr));
    let mut acc = 0.0;
    for (i, r) in rho.iter().enumerate() {
        acc += grads.iter().map(|g| g[i] * g[i]).sum::<f64>() * r;
    }
    acc * grid.cell_volume()
}

/// Constant `C(n)` of the entropy-defect lemma.
pub fn entdef_constant(n: usize) -> Result<f64> {
    match n {
        0 => Err(Error::Domain("n must be at least 1".into())),
        1 | 2 => Ok(1.0),
        _ => {
            let nf = n as f64;
            Ok((nf / 2.0).powi(n as i32) / (nf - 1.0).powi(n as i32 - 1))
        }
    }
}

/// `λ(n) = 1/C(n)`.
pub fn entdef_lambda(n: usize) -> Result<f64> {
    Ok(1.0 / entdef_constant(n)?)
}

/// `log 𝓘ₙ(z)` summed in log space.
pub fn log_entdef_in(n: usize, z: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be at least 1".into()));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    let nf = n as f64;
    let lz = z.abs().ln();
    let ln2 = 2f64.ln();
    let term = |l: usize| {
        let lf = l as f64;
        2.0 * lf * lz + (nf - 1.0) * ln_gamma(2.0 * lf + 1.0) - 2.0 * nf * ln_gamma(lf + 1.0) - 2.0 * lf * nf * ln2
    };
    // running log-sum-exp
    let mut acc = 0.0f64;
    let mut prev = 0.0f64;
    for l in 1..100_000 {
        let t = term(l);
        let hi = acc.max(t);
        acc = hi + ((acc - hi).exp() + (t - hi).exp()).ln();
        if t < prev && t - acc < (1e-16f64).ln() {
            break;
        }
        prev = t;
    }
    Ok(acc)
}

/// `𝓘ₙ(z) = Σ_l z^{2l} ((2l)!)^{n-1} / ((l!)^{2n} 2^{2ln})`.
pub fn entdef_in(n: usize, z: f64) -> Result<f64> {
    Ok(log_entdef_in(n, z)?.exp())
}

/// `𝓖̃(z) = λ z² / 2^{n+1} - log 𝓘ₙ(z)`.
pub fn entdef_g_tilde(n: usize, z: f64) -> Result<f64> {
    let lambda = entdef_lambda(n)?;
    Ok(lambda * z * z / 2f64.powi(n as i32 + 1) - log_entdef_in(n, z)?)
}

/// `𝓖` as a function of the mode amplitude `|ϱ̃(k)|`: the lemma's variable
/// is `y = L^{d/2} 2^{n/2} |ϱ̃(k)|` and `𝓖(y) = 𝓖̃(y/λ)`.
pub fn entdef_g(n: usize, amplitude: f64, side: f64, dim: usize) -> Result<f64> {
    let y = side.powf(dim as f64 / 2.0) * 2f64.powf(n as f64 / 2.0) * amplitude.abs();
    entdef_g_tilde(n, y / entdef_lambda(n)?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntdefCheck {
    /// `H(ϱ|ϱ∞) - C(n)(L^d/2)|ϱ̃(k)|²`.
    pub lhs: f64,
    /// `𝓖(|ϱ̃(k)|)`.
    pub rhs: f64,
    pub satisfied: bool,
}

/// Evaluate the entropy-defect bound for one mode `k ≠ 0`.
pub fn entdef_bound_check(rho: &DensityField, k: Mode) -> Result<EntdefCheck> {
    if k == [0, 0] {
        return Err(Error::Domain("k must be nonzero".into()));
    }
    let g = &rho.grid;
    g.check_mode(k)?;
    let n = k.iter().filter(|&&v| v != 0).count();
    let amp = rho.spectral().get(k);
    let h = relative_entropy(g, &rho.values);
    let lhs = h - entdef_constant(n)? * 0.5 * g.volume() * amp * amp;
    let rhs = entdef_g(n, amp, g.side(), g.dim())?;
    Ok(EntdefCheck { lhs, rhs, satisfied: lhs - rhs >= -1e-12 && rhs >= -1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::basis_eval;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_density(grid: &TorusGrid, rng: &mut ChaCha8Rng, modes: i64, amp: f64) -> DensityField {
        let mut v = vec![0.0; grid.len()];
        for k in grid.modes().into_iter().filter(|k| k[0].abs() <= modes && k[1].abs() <= modes) {
            if k == [0, 0] {
                continue;
            }
            let c: f64 = rng.gen_range(-amp..amp);
            let w = basis_eval(k, grid).unwrap();
            for (a, b) in v.iter_mut().zip(w) {
                *a += c * b;
            }
        }
        let vals: Vec<f64> = v.iter().map(|x| x.exp()).collect();
        DensityField::normalized(*grid, vals).unwrap()
    }

    #[test]
    fn uniform_free_energy() {
        let g = TorusGrid::line(2.0 * PI, 64).unwrap();
        let w = Potential::kuramoto(1, 2.0 * PI, 31).unwrap();
        let u = DensityField::uniform(g);
        for kappa in [0.0, 1.0, 7.0] {
            let f = free_energy(&u, &w, kappa, 1.0).unwrap();
            assert_abs_diff_eq!(f, (1.0 / (2.0 * PI)).ln(), epsilon = 1e-14);
        }
        assert_abs_diff_eq!(el_residual(&u, &w, 3.0, 1.0).unwrap(), 0.0, epsilon = 1e-12);
        let plus = Potential::from_modes("w1", 2.0 * PI, 1, 31, &[([1, 0], 1.0)]).unwrap();
        assert_abs_diff_eq!(dissipation(&u, &plus, 2.0, 1.0).unwrap(), 0.0, epsilon = 1e-20);
    }

    #[test]
    fn gap_identity_random() {
        let g = TorusGrid::line(1.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for w in [
            Potential::hegselmann_krause(0.3, 1.0, false, 31).unwrap(),
            Potential::onsager(1, 1.0, 31).unwrap(),
            Potential::bdz(0.1, 0.3, 1.0, 31).unwrap(),
        ] {
            for _ in 0..100 {
                let rho = random_density(&g, &mut rng, 6, 0.4);
                let fe = FreeEnergy::new(&w, g, 2.5, 1.7).unwrap();
                let lhs = fe.free_energy(&rho.values) - fe.free_energy(&g.uniform());
                assert_abs_diff_eq!(lhs, fe.free_energy_gap(&rho.values), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn nonpositive_sentinel() {
        let g = TorusGrid::line(1.0, 16).unwrap();
        let w = Potential::kuramoto(1, 1.0, 7).unwrap();
        let mut v = g.uniform();
        v[3] = 0.0;
        let fe = FreeEnergy::new(&w, g, 1.0, 1.0).unwrap();
        assert_eq!(fe.free_energy(&v), f64::INFINITY);
        assert!(fe.report(&v).nonpositive);
    }

    #[test]
    fn perturbed_uniform_not_stationary() {
        let g = TorusGrid::line(2.0 * PI, 64).unwrap();
        let w = Potential::kuramoto(1, 2.0 * PI, 31).unwrap();
        let w1 = basis_eval([1, 0], &g).unwrap();
        let v: Vec<f64> = w1.iter().map(|x| g.uniform_value() + 0.1 * x).collect();
        let rho = DensityField::normalized(g, v).unwrap();
        assert!(el_residual(&rho, &w, 5.0, 1.0).unwrap() > 1e-3);
        assert!(dissipation(&rho, &w, 5.0, 1.0).unwrap() > 1e-6);
    }

    #[test]
    fn entdef_constants() {
        assert_eq!(entdef_constant(1).unwrap(), 1.0);
        assert_eq!(entdef_constant(2).unwrap(), 1.0);
        assert_eq!(entdef_constant(3).unwrap(), 0.84375);
        assert!((3..=10).all(|n| entdef_constant(n).unwrap() < 1.0));
        assert!(entdef_constant(0).is_err());
    }

    #[test]
    fn entdef_series() {
        for n in 1..5 {
            assert_eq!(entdef_in(n, 0.0).unwrap(), 1.0);
            assert_abs_diff_eq!(entdef_in(n, 2.5).unwrap(), entdef_in(n, -2.5).unwrap(), epsilon = 1e-15);
        }
        // I₀(1) from its power series
        let i0: f64 = (0..30).map(|l| 0.25f64.powi(l) / (1..=l).map(|j| j as f64).product::<f64>().powi(2)).sum();
        assert_abs_diff_eq!(entdef_in(1, 1.0).unwrap(), i0, epsilon = 1e-14);
        assert_abs_diff_eq!(i0, 1.266066, epsilon = 1e-6);
        assert!(entdef_in(3, 50.0).unwrap().is_finite());
    }

    #[test]
    fn entdef_g_monotone() {
        for n in 1..=3 {
            let vals: Vec<f64> = (0..=100).map(|i| entdef_g_tilde(n, 5.0 * i as f64 / 100.0).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]), "n={n}");
            assert_eq!(vals[0], 0.0);
        }
    }

    #[test]
    fn entdef_bound_random_1d() {
        let g = TorusGrid::line(1.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let u = DensityField::uniform(g);
        let c = entdef_bound_check(&u, [1, 0]).unwrap();
        assert_abs_diff_eq!(c.lhs, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.rhs, 0.0, epsilon = 1e-15);
        for _ in 0..200 {
            let rho = random_density(&g, &mut rng, 4, 1.5);
            assert!(entdef_bound_check(&rho, [1, 0]).unwrap().satisfied);
        }
    }

    #[test]
    fn ckp_and_log_sobolev() {
        let g = TorusGrid::line(2.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let rho = random_density(&g, &mut rng, 5, 0.8);
            let h = relative_entropy(&g, &rho.values);
            assert!(h >= 0.0);
            assert!(h >= 0.5 * rho.l1_from_uniform().powi(2) - 1e-14);
            let fisher = fisher_information(&g, &rho.values);
            assert!(h <= g.side().powi(2) / (4.0 * PI * PI) * fisher + 1e-14);
        }
    }
}
