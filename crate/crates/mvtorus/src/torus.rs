//! Periodic grids, the real cos/sin basis `w_k`, transforms, convolution and
//! the interaction bilinear form.
//!
//! Coefficients are stored in a dense "slot" layout: in 1D slot `k + M/2`, in
//! 2D row-major over `(k0 + M/2, k1 + M/2)`. The slot for `k_i = -M/2`
//! (Nyquist) exists but is always zero.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-index `k`; in 1D the second component is zero.
pub type Mode = [i64; 2];

/// Uniform periodic grid on `(-L/2, L/2)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    dim: usize,
    side: f64,
    points: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, side: f64, points: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Domain(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(side > 0.0) || !side.is_finite() {
            return Err(Error::Domain(format!("side length must be positive, got {side}")));
        }
        if points < 8 || !points.is_power_of_two() {
            return Err(Error::Domain(format!(
                "points per axis must be a power of two >= 8, got {points}"
            )));
        }
        Ok(Self { dim, side, points })
    }

    pub fn line(side: f64, points: usize) -> Result<Self> {
        Self::new(1, side, points)
    }

    pub fn square(side: f64, points: usize) -> Result<Self> {
        Self::new(2, side, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn points(&self) -> usize {
        self.points
    }

    /// Total number of nodes `M^d`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.points as f64
    }

    /// Quadrature weight `(L/M)^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// `L^d`.
    pub fn volume(&self) -> f64 {
        self.side.powi(self.dim as i32)
    }

    /// Value of the uniform density `1/L^d`.
    pub fn uniform_value(&self) -> f64 {
        1.0 / self.volume()
    }

    /// Largest resolved `|k_i|`, i.e. `M/2 - 1`.
    pub fn band(&self) -> usize {
        self.points / 2 - 1
    }

    pub fn axis_nodes(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|i| -0.5 * self.side + i as f64 * h).collect()
    }

    pub fn node(&self, idx: usize) -> [f64; 2] {
        let h = self.spacing();
        let x = |i: usize| -0.5 * self.side + i as f64 * h;
        if self.dim == 1 {
            [x(idx), 0.0]
        } else {
            [x(idx / self.points), x(idx % self.points)]
        }
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.cell_volume() * f.iter().sum::<f64>()
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        self.cell_volume() * f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn l2_norm(&self, f: &[f64]) -> f64 {
        self.inner(f, f).sqrt()
    }

    pub fn l1_norm(&self, f: &[f64]) -> f64 {
        self.cell_volume() * f.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn contains_mode(&self, k: Mode) -> bool {
        let b = self.band() as i64;
        let ok = |v: i64| v.abs() <= b;
        ok(k[0]) && (if self.dim == 1 { k[1] == 0 } else { ok(k[1]) })
    }

    pub fn check_mode(&self, k: Mode) -> Result<()> {
        if self.contains_mode(k) {
            Ok(())
        } else {
            Err(Error::Truncation { mode: k, limit: self.points / 2 })
        }
    }

    /// All resolved signed modes.
    pub fn modes(&self) -> Vec<Mode> {
        let b = self.band() as i64;
        if self.dim == 1 {
            (-b..=b).map(|k| [k, 0]).collect()
        } else {
            let mut out = Vec::new();
            for k0 in -b..=b {
                for k1 in -b..=b {
                    out.push([k0, k1]);
                }
            }
            out
        }
    }

    /// Number of coefficient slots, equal to `M^d`.
    pub fn coefficient_len(&self) -> usize {
        self.len()
    }

    pub fn slot(&self, k: Mode) -> usize {
        let h = (self.points / 2) as i64;
        if self.dim == 1 {
            (k[0] + h) as usize
        } else {
            ((k[0] + h) as usize) * self.points + (k[1] + h) as usize
        }
    }

    pub fn mode_of_slot(&self, slot: usize) -> Mode {
        let h = (self.points / 2) as i64;
        if self.dim == 1 {
            [slot as i64 - h, 0]
        } else {
            [(slot / self.points) as i64 - h, (slot % self.points) as i64 - h]
        }
    }

    /// Node index of `-x` for the node with index `idx`.
    pub fn reflect_index(&self, idx: usize) -> usize {
        let m = self.points;
        let r = |i: usize| (m - i) % m;
        if self.dim == 1 {
            r(idx)
        } else {
            r(idx / m) * m + r(idx % m)
        }
    }

    /// Translate a nodal field by whole cells: `out(x) = f(x - shift*h)`.
    pub fn shift_cells(&self, f: &[f64], shift: [i64; 2]) -> Vec<f64> {
        let m = self.points as i64;
        let wrap = |i: i64| i.rem_euclid(m) as usize;
        let mut out = vec![0.0; f.len()];
        if self.dim == 1 {
            for i in 0..self.points {
                out[i] = f[wrap(i as i64 - shift[0])];
            }
        } else {
            for i in 0..self.points {
                for j in 0..self.points {
                    let src = wrap(i as i64 - shift[0]) * self.points + wrap(j as i64 - shift[1]);
                    out[i * self.points + j] = f[src];
                }
            }
        }
        out
    }

    /// Nodal field of the constant density `1/L^d`.
    pub fn uniform(&self) -> Vec<f64> {
        vec![self.uniform_value(); self.len()]
    }
}

/// `Θ(k) = ∏ √(2 - δ_{k_i,0})`.
pub fn theta(k: Mode) -> f64 {
    k.iter().map(|&v| if v == 0 { 1.0 } else { 2f64.sqrt() }).product()
}

/// Normalisation `N_k = Θ(k) / L^{d/2}`.
pub fn norm_const(k: Mode, side: f64, dim: usize) -> f64 {
    theta(k) / side.powf(dim as f64 / 2.0)
}

fn axis_factor(k: i64, x: f64, side: f64) -> f64 {
    let arg = 2.0 * PI * k as f64 * x / side;
    match k {
        0 => 1.0,
        k if k > 0 => arg.cos(),
        _ => arg.sin(),
    }
}

/// Pointwise value of `w_k(x)`.
pub fn basis_value(k: Mode, side: f64, dim: usize, x: [f64; 2]) -> f64 {
    let mut v = norm_const(k, side, dim);
    for i in 0..dim {
        v *= axis_factor(k[i], x[i], side);
    }
    v
}

/// Nodal values of `w_k` on the grid.
pub fn basis_eval(k: Mode, grid: &TorusGrid) -> Result<Vec<f64>> {
    grid.check_mode(k)?;
    Ok((0..grid.len())
        .map(|i| basis_value(k, grid.side(), grid.dim(), grid.node(i)))
        .collect())
}

/// Coefficients `f̃(k) = <f, w_k>` over the resolved band.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralField {
    pub grid: TorusGrid,
    pub coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self { grid, coeffs: vec![0.0; grid.coefficient_len()] }
    }

    pub fn get(&self, k: Mode) -> f64 {
        if self.grid.contains_mode(k) {
            self.coeffs[self.grid.slot(k)]
        } else {
            0.0
        }
    }

    pub fn set(&mut self, k: Mode, value: f64) -> Result<()> {
        self.grid.check_mode(k)?;
        let s = self.grid.slot(k);
        self.coeffs[s] = value;
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// `√(Σ_σ |f̃(σk)|²)` over sign patterns of an even-index mode; invariant
    /// under translation of the field.
    pub fn orbit_amplitude(&self, k: Mode) -> f64 {
        sign_orbit(k, self.grid.dim())
            .into_iter()
            .map(|m| self.get(m).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// All distinct sign flips `σ(k)` of a mode.
pub fn sign_orbit(k: Mode, dim: usize) -> Vec<Mode> {
    let mut out = vec![k];
    for axis in 0..dim {
        if k[axis] != 0 {
            let extra: Vec<Mode> = out
                .iter()
                .map(|m| {
                    let mut f = *m;
                    f[axis] = -f[axis];
                    f
                })
                .collect();
            out.extend(extra);
        }
    }
    out
}

/// 1D real-basis transform of arbitrary even length, backed by a complex FFT.
#[derive(Clone)]
struct AxisBasis {
    m: usize,
    side: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl AxisBasis {
    fn new(m: usize, side: f64) -> Self {
        let mut planner = FftPlanner::new();
        Self { m, side, fwd: planner.plan_fft_forward(m), inv: planner.plan_fft_inverse(m) }
    }

    /// Nodal values -> coefficients in slot layout `k + m/2`.
    fn forward(&self, input: &[f64], out: &mut [f64], buf: &mut Vec<Complex64>) {
        let m = self.m;
        let half = m / 2;
        let h = self.side / m as f64;
        let n0 = 1.0 / self.side.sqrt();
        let n1 = (2.0 / self.side).sqrt();
        buf.clear();
        buf.extend(input.iter().map(|&v| Complex64::new(v, 0.0)));
        self.fwd.process(buf);
        out.iter_mut().for_each(|c| *c = 0.0);
        out[half] = h * n0 * buf[0].re;
        for k in 1..half {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            out[half + k] = h * n1 * sign * buf[k].re;
            out[half - k] = h * n1 * sign * buf[k].im;
        }
    }

    /// Coefficients in slot layout -> nodal values.
    fn inverse(&self, coeffs: &[f64], out: &mut [f64], buf: &mut Vec<Complex64>) {
        let m = self.m;
        let half = m / 2;
        let n0 = 1.0 / self.side.sqrt();
        let n1 = (2.0 / self.side).sqrt();
        buf.clear();
        buf.resize(m, Complex64::new(0.0, 0.0));
        buf[0] = Complex64::new(n0 * coeffs[half], 0.0);
        for k in 1..half {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            buf[k] = Complex64::new(n1 * sign * coeffs[half + k], n1 * sign * coeffs[half - k]);
        }
        self.inv.process(buf);
        for (o, b) in out.iter_mut().zip(buf.iter()) {
            *o = b.re;
        }
    }
}

/// Separable real-basis transform in dimension 1 or 2 with `m` points per axis.
#[derive(Clone)]
struct BasisTransform {
    dim: usize,
    m: usize,
    axis: AxisBasis,
}

impl BasisTransform {
    fn new(dim: usize, m: usize, side: f64) -> Self {
        Self { dim, m, axis: AxisBasis::new(m, side) }
    }

    fn forward(&self, f: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut buf = Vec::with_capacity(m);
        let mut out = vec![0.0; f.len()];
        if self.dim == 1 {
            self.axis.forward(f, &mut out, &mut buf);
            return out;
        }
        let mut rows = vec![0.0; f.len()];
        for i in 0..m {
            self.axis.forward(&f[i * m..(i + 1) * m], &mut rows[i * m..(i + 1) * m], &mut buf);
        }
        let mut col = vec![0.0; m];
        let mut colc = vec![0.0; m];
        for j in 0..m {
            for i in 0..m {
                col[i] = rows[i * m + j];
            }
            self.axis.forward(&col, &mut colc, &mut buf);
            for i in 0..m {
                out[i * m + j] = colc[i];
            }
        }
        out
    }

    fn inverse(&self, c: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut buf = Vec::with_capacity(m);
        let mut out = vec![0.0; c.len()];
        if self.dim == 1 {
            self.axis.inverse(c, &mut out, &mut buf);
            return out;
        }
        let mut cols = vec![0.0; c.len()];
        let mut col = vec![0.0; m];
        let mut colv = vec![0.0; m];
        for j in 0..m {
            for i in 0..m {
                col[i] = c[i * m + j];
            }
            self.axis.inverse(&col, &mut colv, &mut buf);
            for i in 0..m {
                cols[i * m + j] = colv[i];
            }
        }
        for i in 0..m {
            self.axis.inverse(&cols[i * m..(i + 1) * m], &mut out[i * m..(i + 1) * m], &mut buf);
        }
        out
    }
}

/// Transform engine bound to a grid, with a 3/2-padded companion for
/// dealiased products.
#[derive(Clone)]
pub struct Spectral {
    grid: TorusGrid,
    base: BasisTransform,
    padded: BasisTransform,
}

impl Spectral {
    pub fn new(grid: TorusGrid) -> Self {
        let m = grid.points();
        Self {
            grid,
            base: BasisTransform::new(grid.dim(), m, grid.side()),
            padded: BasisTransform::new(grid.dim(), 3 * m / 2, grid.side()),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn forward(&self, f: &[f64]) -> Vec<f64> {
        self.base.forward(f)
    }

    pub fn inverse(&self, c: &[f64]) -> Vec<f64> {
        self.base.inverse(c)
    }

    /// Coefficients of `∂f/∂x_axis`.
    pub fn derivative(&self, c: &[f64], axis: usize) -> Vec<f64> {
        let g = &self.grid;
        let mut out = vec![0.0; c.len()];
        for (slot, &v) in c.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let k = g.mode_of_slot(slot);
            let ka = k[axis];
            if ka == 0 || !g.contains_mode(k) {
                continue;
            }
            let omega = 2.0 * PI * ka.unsigned_abs() as f64 / g.side();
            let mut target = k;
            target[axis] = -ka;
            // d/dx w_k = ω w_{-k} (k > 0), d/dx w_{-k} = -ω w_k
            let factor = if ka > 0 { omega } else { -omega };
            out[g.slot(target)] += factor * v;
        }
        out
    }

    /// Nodal gradient components of a field given by coefficients.
    pub fn gradient(&self, c: &[f64]) -> Vec<Vec<f64>> {
        (0..self.grid.dim()).map(|a| self.inverse(&self.derivative(c, a))).collect()
    }

    /// Coefficients of the divergence of a vector field given nodally.
    pub fn divergence(&self, v: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.coefficient_len()];
        for (axis, comp) in v.iter().enumerate() {
            let d = self.derivative(&self.forward(comp), axis);
            for (o, x) in out.iter_mut().zip(d) {
                *o += x;
            }
        }
        out
    }

    fn embed(&self, c: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mp = 3 * g.points() / 2;
        let hp = (mp / 2) as i64;
        let mut out = vec![0.0; mp.pow(g.dim() as u32)];
        for (slot, &v) in c.iter().enumerate() {
            let k = g.mode_of_slot(slot);
            if !g.contains_mode(k) {
                continue;
            }
            let s = if g.dim() == 1 {
                (k[0] + hp) as usize
            } else {
                ((k[0] + hp) as usize) * mp + (k[1] + hp) as usize
            };
            out[s] = v;
        }
        out
    }

    fn restrict(&self, cp: &[f64]) -> Vec<f64> {
        let g = &self.grid;
        let mp = 3 * g.points() / 2;
        let hp = (mp / 2) as i64;
        let mut out = vec![0.0; g.coefficient_len()];
        for k in g.modes() {
            let s = if g.dim() == 1 {
                (k[0] + hp) as usize
            } else {
                ((k[0] + hp) as usize) * mp + (k[1] + hp) as usize
            };
            out[g.slot(k)] = cp[s];
        }
        out
    }

    /// Coefficients of the band-truncated product `f·g` computed on the
    /// 3/2-padded grid, free of aliasing for band-limited inputs.
    pub fn dealiased_product(&self, fc: &[f64], gc: &[f64]) -> Vec<f64> {
        let fp = self.padded.inverse(&self.embed(fc));
        let gp = self.padded.inverse(&self.embed(gc));
        let prod: Vec<f64> = fp.iter().zip(&gp).map(|(a, b)| a * b).collect();
        self.restrict(&self.padded.forward(&prod))
    }
}

/// `f̃(k) = <f, w_k>` for all resolved `k`.
pub fn cosine_transform(f: &[f64], grid: &TorusGrid) -> SpectralField {
    SpectralField { grid: *grid, coeffs: Spectral::new(*grid).forward(f) }
}

/// Nodal values of `Σ_k f̃(k) w_k`.
pub fn inverse_transform(field: &SpectralField) -> Vec<f64> {
    Spectral::new(field.grid).inverse(&field.coeffs)
}

/// Nonnegative grid function of unit mass.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl DensityField {
    /// Validates nonnegativity and unit mass (within 1e-12).
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Domain("density has the wrong number of nodes".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("density must be nonnegative".into()));
        }
        let mass = grid.integrate(&values);
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("density has mass {mass}, expected 1")));
        }
        Ok(Self { grid, values })
    }

    /// Rescales a nonnegative field to unit mass.
    pub fn normalized(grid: TorusGrid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() || values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Domain("density must be nonnegative on every node".into()));
        }
        let mass = grid.integrate(&values);
        if !(mass > 0.0) {
            return Err(Error::Domain("density has zero mass".into()));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Self { grid, values })
    }

    pub fn uniform(grid: TorusGrid) -> Self {
        Self { values: grid.uniform(), grid }
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `‖ϱ - ϱ∞‖₁`.
    pub fn l1_from_uniform(&self) -> f64 {
        let u = self.grid.uniform_value();
        self.grid.cell_volume() * self.values.iter().map(|v| (v - u).abs()).sum::<f64>()
    }

    /// `‖ϱ - ϱ∞‖₂`.
    pub fn l2_from_uniform(&self) -> f64 {
        let u = self.grid.uniform_value();
        (self.grid.cell_volume() * self.values.iter().map(|v| (v - u).powi(2)).sum::<f64>()).sqrt()
    }

    pub fn spectral(&self) -> SpectralField {
        cosine_transform(&self.values, &self.grid)
    }
}

/// Convolution with a fixed potential on a fixed grid.
#[derive(Clone)]
pub struct Interaction {
    spectral: Spectral,
    mult: Vec<f64>,
}

impl Interaction {
    pub fn new(w: &crate::potentials::Potential, grid: TorusGrid) -> Result<Self> {
        Ok(Self { mult: w.multipliers(&grid)?, spectral: Spectral::new(grid) })
    }

    pub fn grid(&self) -> &TorusGrid {
        self.spectral.grid()
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// Coefficients of `W⋆g` from coefficients of `g`.
    pub fn convolve_coeffs(&self, gc: &[f64]) -> Vec<f64> {
        gc.iter().zip(&self.mult).map(|(a, b)| a * b).collect()
    }

    pub fn convolve(&self, g: &[f64]) -> Vec<f64> {
        self.spectral.inverse(&self.convolve_coeffs(&self.spectral.forward(g)))
    }

    /// `∬ W(x-y) g(x) h(y) dx dy`.
    pub fn bilinear(&self, g: &[f64], h: &[f64]) -> f64 {
        let gc = self.spectral.forward(g);
        let hc = self.spectral.forward(h);
        self.bilinear_coeffs(&gc, &hc)
    }

    pub fn bilinear_coeffs(&self, gc: &[f64], hc: &[f64]) -> f64 {
        gc.iter().zip(hc).zip(&self.mult).map(|((a, b), m)| a * b * m).sum()
    }
}

/// `(W⋆g)` on the grid of `g`.
pub fn convolve(w: &crate::potentials::Potential, grid: &TorusGrid, g: &[f64]) -> Result<Vec<f64>> {
    Ok(Interaction::new(w, *grid)?.convolve(g))
}

/// `∬ W(x-y) g(x) h(y) dx dy` via the spectral sum.
pub fn bilinear_form(w: &crate::potentials::Potential, grid: &TorusGrid, g: &[f64], h: &[f64]) -> Result<f64> {
    Ok(Interaction::new(w, *grid)?.bilinear(g, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn direct_coeffs(f: &[f64], grid: &TorusGrid) -> Vec<f64> {
        let mut out = vec![0.0; grid.coefficient_len()];
        for k in grid.modes() {
            let w = basis_eval(k, grid).unwrap();
            out[grid.slot(k)] = grid.inner(f, &w);
        }
        out
    }

    fn random_bandlimited(grid: &TorusGrid, seed: u64, kcap: i64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = vec![0.0; grid.coefficient_len()];
        for k in grid.modes() {
            if k[0].abs() <= kcap && k[1].abs() <= kcap {
                c[grid.slot(k)] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut f = vec![0.0; grid.len()];
        for k in grid.modes() {
            let v = c[grid.slot(k)];
            if v != 0.0 {
                let w = basis_eval(k, grid).unwrap();
                for (a, b) in f.iter_mut().zip(w) {
                    *a += v * b;
                }
            }
        }
        (f, c)
    }

    #[test]
    fn zero_mode_is_constant() {
        let g = TorusGrid::line(2.0 * PI, 64).unwrap();
        let w = basis_eval([0, 0], &g).unwrap();
        for v in w {
            assert_abs_diff_eq!(v, 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn orthonormality_first_sixteen() {
        let g = TorusGrid::line(1.0, 64).unwrap();
        let ks: Vec<Mode> = (-7..=8).map(|k| [k, 0]).collect();
        let ws: Vec<Vec<f64>> = ks.iter().map(|&k| basis_eval(k, &g).unwrap()).collect();
        for i in 0..ks.len() {
            for j in 0..ks.len() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(g.inner(&ws[i], &ws[j]), e, epsilon = 1e-12);
            }
        }
        assert_abs_diff_eq!(
            g.inner(&basis_eval([2, 0], &g).unwrap(), &basis_eval([3, 0], &g).unwrap()),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn out_of_band_rejected() {
        let g = TorusGrid::line(1.0, 16).unwrap();
        assert!(matches!(basis_eval([8, 0], &g), Err(Error::Truncation { .. })));
        assert!(basis_eval([7, 0], &g).is_ok());
    }

    #[test]
    fn grid_validation() {
        assert!(TorusGrid::new(3, 1.0, 16).is_err());
        assert!(TorusGrid::new(1, 1.0, 12).is_err());
        assert!(TorusGrid::new(1, -1.0, 16).is_err());
        assert!(TorusGrid::new(1, 1.0, 4).is_err());
    }

    #[test]
    fn transform_of_basis_function() {
        let g = TorusGrid::line(1.0, 64).unwrap();
        let f = basis_eval([5, 0], &g).unwrap();
        let c = cosine_transform(&f, &g);
        for k in g.modes() {
            let e = if k == [5, 0] { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(c.get(k), e, epsilon = 1e-12);
        }
        let f = basis_eval([-3, 0], &g).unwrap();
        let c = cosine_transform(&f, &g);
        assert_abs_diff_eq!(c.get([-3, 0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.get([3, 0]), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_density_transform() {
        let g = TorusGrid::line(2.0 * PI, 64).unwrap();
        let c = cosine_transform(&g.uniform(), &g);
        assert_abs_diff_eq!(c.get([0, 0]), 1.0 / (2.0 * PI).sqrt(), epsilon = 1e-14);
        for k in g.modes().into_iter().filter(|k| k[0] != 0) {
            assert_abs_diff_eq!(c.get(k), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn fft_matches_direct_sum_1d_and_2d() {
        for grid in [TorusGrid::line(1.7, 32).unwrap(), TorusGrid::square(2.3, 16).unwrap()] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let f: Vec<f64> = (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let fast = Spectral::new(grid).forward(&f);
            let slow = direct_coeffs(&f, &grid);
            for (a, b) in fast.iter().zip(&slow) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn round_trip_bandlimited() {
        for grid in [TorusGrid::line(1.0, 64).unwrap(), TorusGrid::square(3.0, 16).unwrap()] {
            let (f, c) = random_bandlimited(&grid, 11, (grid.band() - 1) as i64);
            let sp = Spectral::new(grid);
            let c2 = sp.forward(&f);
            for (a, b) in c.iter().zip(&c2) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-11);
            }
            let f2 = sp.inverse(&c2);
            for (a, b) in f.iter().zip(&f2) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn derivative_matches_analytic() {
        let g = TorusGrid::line(3.0, 64).unwrap();
        let sp = Spectral::new(g);
        let f: Vec<f64> = g.axis_nodes().iter().map(|x| (2.0 * PI * 2.0 * x / 3.0).sin()).collect();
        let d = sp.inverse(&sp.derivative(&sp.forward(&f), 0));
        for (x, v) in g.axis_nodes().iter().zip(d) {
            let e = 2.0 * PI * 2.0 / 3.0 * (2.0 * PI * 2.0 * x / 3.0).cos();
            assert_abs_diff_eq!(v, e, epsilon = 1e-10);
        }
    }

    #[test]
    fn dealiased_product_exact_for_low_modes() {
        let g = TorusGrid::line(1.0, 32).unwrap();
        let sp = Spectral::new(g);
        let (f, fc) = random_bandlimited(&g, 5, 7);
        let (h, hc) = random_bandlimited(&g, 6, 7);
        let prod: Vec<f64> = f.iter().zip(&h).map(|(a, b)| a * b).collect();
        let exact = sp.forward(&prod);
        let dealiased = sp.dealiased_product(&fc, &hc);
        for (a, b) in exact.iter().zip(&dealiased) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn reflect_and_shift() {
        let g = TorusGrid::line(1.0, 16).unwrap();
        for i in 0..16 {
            let x = g.node(i)[0];
            let r = g.node(g.reflect_index(i))[0];
            let d = (x + r) / g.side();
            assert_abs_diff_eq!(d - d.round(), 0.0, epsilon = 1e-14);
        }
        let f: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let s = g.shift_cells(&f, [2, 0]);
        assert_eq!(s[2], 0.0);
        assert_eq!(s[0], 14.0);
    }

    fn brute_convolution(w: &crate::potentials::Potential, g: &TorusGrid, f: &[f64]) -> Vec<f64> {
        (0..g.len())
            .map(|i| {
                let y = g.node(i);
                (0..g.len())
                    .map(|j| {
                        let x = g.node(j);
                        w.value([y[0] - x[0], y[1] - x[1]]).unwrap() * f[j]
                    })
                    .sum::<f64>()
                    * g.cell_volume()
            })
            .collect()
    }

    #[test]
    fn convolution_matches_brute_force() {
        use crate::potentials::Potential;
        let g = TorusGrid::line(2.0 * PI, 64).unwrap();
        let w = Potential::kuramoto(1, 2.0 * PI, 31).unwrap();
        assert!(convolve(&w, &g, &g.uniform()).unwrap().iter().all(|v| v.abs() < 1e-15));
        let w1 = basis_eval([1, 0], &g).unwrap();
        let rho: Vec<f64> = w1.iter().map(|v| g.uniform_value() * (1.0 + 0.1 * v * (2.0 * PI).sqrt())).collect();
        let fast = convolve(&w, &g, &rho).unwrap();
        let slow = brute_convolution(&w, &g, &rho);
        for ((a, b), c) in fast.iter().zip(&slow).zip(&w1) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            // W⋆ϱ = W̃(1)/N₁ · ϱ̃(1) · w₁ with ϱ̃(1) = 0.1·ϱ∞·√(2π), N₁ = 1/√π
            let expect = -0.1 * g.uniform_value() * (2.0 * PI).sqrt() * PI.sqrt() * c;
            assert_abs_diff_eq!(*a, expect, epsilon = 1e-12);
        }
        let o = Potential::onsager(2, 1.0, 15).unwrap();
        let g = TorusGrid::line(1.0, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..1.0)).collect();
        let fast = convolve(&o, &g, &f).unwrap();
        let slow = brute_convolution(&o, &g, &f);
        for (a, b) in fast.iter().zip(&slow) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn convolution_translation_equivariant() {
        use crate::potentials::Potential;
        let g = TorusGrid::line(1.0, 64).unwrap();
        let w = Potential::hegselmann_krause(0.4, 1.0, false, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a = g.shift_cells(&convolve(&w, &g, &f).unwrap(), [8, 0]);
        let b = convolve(&w, &g, &g.shift_cells(&f, [8, 0])).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        let h: Vec<f64> = (0..64).map(|_| rng.gen_range(0.0..1.0)).collect();
        let e0 = bilinear_form(&w, &g, &f, &h).unwrap();
        let e1 = bilinear_form(&w, &g, &g.shift_cells(&f, [8, 0]), &g.shift_cells(&h, [8, 0])).unwrap();
        assert_abs_diff_eq!(e0, e1, epsilon = 1e-12);
        assert_abs_diff_eq!(e0, bilinear_form(&w, &g, &h, &f).unwrap(), epsilon = 1e-14);
        let u = g.uniform();
        let k = Potential::kuramoto(2, 1.0, 31).unwrap();
        assert_abs_diff_eq!(bilinear_form(&k, &g, &u, &u).unwrap(), 0.0, epsilon = 1e-15);
    }
}
