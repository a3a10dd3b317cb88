//! Interaction-potential catalog, H-stability split, α-stabilisation and
//! norm estimates.
//!
//! The cosine coefficient table `W̃(k)`, `k ∈ ℕ^d`, is the source of truth;
//! nodal values come from the closed form when one exists and from the
//! (finite) cosine series otherwise.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::torus::{norm_const, theta, Mode, Spectral, TorusGrid};

/// Relative tolerance for ties between normalised coefficients.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Kuramoto { kmode: usize },
    HegselmannKrause { radius: f64, rescaled: bool },
    Onsager { ell: usize },
    Bdz { ell: f64, radius: f64 },
    KellerSegel { s: f64 },
    /// Defined by its coefficient table alone.
    Table,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    pub name: String,
    side: f64,
    dim: usize,
    kmax: usize,
    coeffs: Vec<f64>,
    family: Family,
}

/// Mode `k♯` minimising `W̃(k)/Θ(k)` over `k ≠ 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DominantMode {
    pub mode: Mode,
    pub ratio: f64,
    /// Number of permutation classes attaining the minimum within tolerance.
    pub multiplicity: usize,
}

impl DominantMode {
    pub fn is_unique(&self) -> bool {
        self.multiplicity == 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HStabilitySplit {
    pub stable: Potential,
    pub unstable: Potential,
}

/// Sup norms used by the decay and convexity thresholds. `None` marks a
/// norm that is unavailable (no nodal form).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SupNorms {
    pub grad: Option<f64>,
    pub laplacian: Option<f64>,
    pub laplacian_unstable: Option<f64>,
    pub unstable_negative: Option<f64>,
    pub negative: Option<f64>,
    pub oscillation: Option<f64>,
    pub l1: Option<f64>,
}

fn cmp_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= DEGENERACY_TOL * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Permutation-class representative: components sorted descending.
pub fn class_rep(k: Mode, dim: usize) -> Mode {
    if dim == 2 && k[1] > k[0] {
        [k[1], k[0]]
    } else {
        k
    }
}

/// Reduce a coordinate to the fundamental cell `[-L/2, L/2)`.
fn wrap(x: f64, side: f64) -> f64 {
    x - side * ((x + 0.5 * side) / side).floor()
}

fn gamma_sign_ln(x: f64) -> Option<(f64, f64)> {
    if x <= 0.0 && x == x.round() {
        return None;
    }
    if x > 0.0 {
        Some((1.0, ln_gamma(x)))
    } else {
        let s = (PI * x).sin();
        Some((s.signum(), PI.ln() - s.abs().ln() - ln_gamma(1.0 - x)))
    }
}

/// Coefficient formula for `|sin θ|^ℓ` against `cos(kθ)/√(2π)` on `[-π, π]`.
fn onsager_reduced(ell: usize, k: usize) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let l = ell as f64;
    let kf = k as f64;
    let a = gamma_sign_ln((-kf + l + 2.0) / 2.0);
    let b = gamma_sign_ln((kf + l + 2.0) / 2.0);
    match (a, b) {
        (Some((sa, la)), Some((sb, lb))) => {
            let cos = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let lnv = 0.5 * PI.ln() + (0.5 - l) * 2f64.ln() + ln_gamma(l + 1.0) - la - lb;
            cos * sa * sb * lnv.exp()
        }
        _ => 0.0,
    }
}

/// `θ - sin θ`, accurate for small θ.
fn theta_minus_sin(t: f64) -> f64 {
    if t.abs() < 1e-2 {
        let t2 = t * t;
        t * t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
    } else {
        t - t.sin()
    }
}

impl Potential {
    /// Potential given by a coefficient table over `ℕ^d`, row-major in 2D.
    pub fn from_table(name: &str, side: f64, dim: usize, kmax: usize, coeffs: Vec<f64>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(Error::Domain(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(side > 0.0) {
            return Err(Error::Domain("side length must be positive".into()));
        }
        if coeffs.len() != (kmax + 1).pow(dim as u32) {
            return Err(Error::Domain("coefficient table has the wrong length".into()));
        }
        Ok(Self { name: name.to_string(), side, dim, kmax, coeffs, family: Family::Table })
    }

    /// Table potential from a sparse list of `(k, W̃(k))`.
    pub fn from_modes(name: &str, side: f64, dim: usize, kmax: usize, modes: &[(Mode, f64)]) -> Result<Self> {
        let mut p = Self::from_table(name, side, dim, kmax, vec![0.0; (kmax + 1).pow(dim as u32)])?;
        for &(k, v) in modes {
            p.set_coeff(k, v)?;
        }
        Ok(p)
    }

    /// Generalised Kuramoto potential `W = -w_kmode`.
    pub fn kuramoto(kmode: usize, side: f64, kmax: usize) -> Result<Self> {
        if kmode == 0 {
            return Err(Error::Domain("kmode must be at least 1".into()));
        }
        if kmode > kmax {
            return Err(Error::Domain(format!("kmode {kmode} exceeds table size {kmax}")));
        }
        let mut p = Self::from_modes("kuramoto", side, 1, kmax, &[([kmode as i64, 0], -1.0)])?;
        p.family = Family::Kuramoto { kmode };
        Ok(p)
    }

    /// Hegselmann–Krause potential `-½((|x| - R/2)₋)²`, optionally divided by `R³`.
    pub fn hegselmann_krause(radius: f64, side: f64, rescaled: bool, kmax: usize) -> Result<Self> {
        if !(radius > 0.0) || radius > side {
            return Err(Error::Domain(format!("need 0 < R <= L, got R={radius}, L={side}")));
        }
        let scale = if rescaled { radius.powi(-3) } else { 1.0 };
        let mut coeffs = vec![0.0; kmax + 1];
        coeffs[0] = -scale * radius.powi(3) / (24.0 * side.sqrt());
        for (k, c) in coeffs.iter_mut().enumerate().skip(1) {
            let kf = k as f64;
            let t = PI * kf * radius / side;
            *c = -scale * 2f64.sqrt() * side.powf(2.5) * theta_minus_sin(t) / (4.0 * PI.powi(3) * kf.powi(3));
        }
        let name = if rescaled { "hegselmann_krause_rescaled" } else { "hegselmann_krause" };
        let mut p = Self::from_table(name, side, 1, kmax, coeffs)?;
        p.family = Family::HegselmannKrause { radius, rescaled };
        Ok(p)
    }

    /// Onsager potential `|sin(2πx/L)|^ℓ`.
    pub fn onsager(ell: usize, side: f64, kmax: usize) -> Result<Self> {
        if ell == 0 {
            return Err(Error::Domain("ell must be at least 1".into()));
        }
        let scale = (side / (2.0 * PI)).sqrt();
        let coeffs = (0..=kmax)
            .map(|k| theta([k as i64, 0]) * scale * onsager_reduced(ell, k))
            .collect();
        let mut p = Self::from_table("onsager", side, 1, kmax, coeffs)?;
        p.family = Family::Onsager { ell };
        Ok(p)
    }

    /// Barré–Degond–Zatorska potential `(|x|-ℓ)² - (R-ℓ)²` on `|x| < R`.
    pub fn bdz(ell: f64, radius: f64, side: f64, kmax: usize) -> Result<Self> {
        if !(ell > 0.0 && ell <= radius && radius <= 0.5 * side) {
            return Err(Error::Domain(format!(
                "need 0 < ell <= R <= L/2, got ell={ell}, R={radius}, L={side}"
            )));
        }
        let f = |x: f64| (x - ell).powi(2) - (radius - ell).powi(2);
        let coeffs = (0..=kmax)
            .map(|k| {
                let nk = norm_const([k as i64, 0], side, 1);
                let om = 2.0 * PI * k as f64 / side;
                2.0 * nk * quadrature::integrate(|x| f(x) * (om * x).cos(), 0.0, radius, &[ell], 1e-14)
            })
            .collect();
        let mut p = Self::from_table("bdz", side, 1, kmax, coeffs)?;
        p.family = Family::Bdz { ell, radius };
        Ok(p)
    }

    /// Keller–Segel kernel, the spectral truncation of the fundamental
    /// solution of `-(-Δ)^s`.
    pub fn keller_segel(s: f64, side: f64, dim: usize, kmax: usize) -> Result<Self> {
        if !(s > 0.5 && s <= 1.0) {
            return Err(Error::Domain(format!("s must lie in (1/2, 1], got {s}")));
        }
        let n = kmax + 1;
        let mut coeffs = vec![0.0; n.pow(dim as u32)];
        for (idx, c) in coeffs.iter_mut().enumerate() {
            let k: Mode = if dim == 1 { [idx as i64, 0] } else { [(idx / n) as i64, (idx % n) as i64] };
            let k2 = (k[0] * k[0] + k[1] * k[1]) as f64;
            if k2 > 0.0 {
                *c = -(2.0 * PI / side).powf(2.0 * s) * norm_const(k, side, dim) / k2.powf(s);
            }
        }
        let mut p = Self::from_table("keller_segel", side, dim, kmax, coeffs)?;
        p.family = Family::KellerSegel { s };
        Ok(p)
    }

    /// Negative Dirichlet kernel `-1 - 2 Σ_{k=1}^n w_k`.
    pub fn negative_dirichlet(n: usize, side: f64, kmax: usize) -> Result<Self> {
        if n > kmax {
            return Err(Error::Domain("n exceeds table size".into()));
        }
        let mut modes = vec![([0, 0], -side.sqrt())];
        modes.extend((1..=n).map(|k| ([k as i64, 0], -2.0)));
        Self::from_modes("negative_dirichlet", side, 1, kmax, &modes)
    }

    /// Build a catalog potential from a name and parameter map.
    pub fn from_spec(name: &str, params: &BTreeMap<String, f64>, side: f64, dim: usize, kmax: usize) -> Result<Self> {
        let get = |key: &str| {
            params.get(key).copied().ok_or_else(|| Error::Config(format!("potential {name} requires parameter '{key}'")))
        };
        let as_count = |v: f64, key: &str| {
            if v >= 1.0 && v == v.round() {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("parameter '{key}' must be a positive integer")))
            }
        };
        let allowed: &[&str] = match name {
            "kuramoto" => &["kmode"],
            "hegselmann_krause" | "hegselmann_krause_rescaled" => &["R"],
            "onsager" => &["ell"],
            "bdz" => &["ell", "R"],
            "keller_segel" => &["s"],
            "negative_dirichlet" => &["n"],
            _ => return Err(Error::Config(format!("unknown potential '{name}'"))),
        };
        if let Some(extra) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown parameter '{extra}' for potential {name}")));
        }
        if dim != 1 && name != "keller_segel" {
            return Err(Error::Config(format!("potential {name} is one-dimensional")));
        }
        match name {
            "kuramoto" => Self::kuramoto(as_count(get("kmode")?, "kmode")?, side, kmax),
            "hegselmann_krause" => Self::hegselmann_krause(get("R")?, side, false, kmax),
            "hegselmann_krause_rescaled" => Self::hegselmann_krause(get("R")?, side, true, kmax),
            "onsager" => Self::onsager(as_count(get("ell")?, "ell")?, side, kmax),
            "bdz" => Self::bdz(get("ell")?, get("R")?, side, kmax),
            "keller_segel" => Self::keller_segel(get("s")?, side, dim, kmax),
            "negative_dirichlet" => Self::negative_dirichlet(as_count(get("n")?, "n")?, side, kmax),
            _ => unreachable!(),
        }
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Parameter map of the catalog family (empty for tables).
    pub fn params(&self) -> BTreeMap<String, f64> {
        let mut m = BTreeMap::new();
        match self.family {
            Family::Kuramoto { kmode } => {
                m.insert("kmode".into(), kmode as f64);
            }
            Family::HegselmannKrause { radius, .. } => {
                m.insert("R".into(), radius);
            }
            Family::Onsager { ell } => {
                m.insert("ell".into(), ell as f64);
            }
            Family::Bdz { ell, radius } => {
                m.insert("ell".into(), ell);
                m.insert("R".into(), radius);
            }
            Family::KellerSegel { s } => {
                m.insert("s".into(), s);
            }
            Family::Table => {}
        }
        m
    }

    /// Keller–Segel coefficients are a truncation model, not a function.
    pub fn is_spectral_model(&self) -> bool {
        matches!(self.family, Family::KellerSegel { .. })
    }

    fn index(&self, k: Mode) -> Option<usize> {
        let a = k[0].unsigned_abs() as usize;
        let b = k[1].unsigned_abs() as usize;
        if a > self.kmax || b > self.kmax || (self.dim == 1 && b != 0) {
            return None;
        }
        Some(if self.dim == 1 { a } else { a * (self.kmax + 1) + b })
    }

    /// `W̃(k)`; the sign pattern of `k` is ignored (even potential) and modes
    /// beyond the table are zero.
    pub fn coeff(&self, k: Mode) -> f64 {
        self.index(k).map_or(0.0, |i| self.coeffs[i])
    }

    fn set_coeff(&mut self, k: Mode, v: f64) -> Result<()> {
        let i = self
            .index(k)
            .ok_or_else(|| Error::Domain(format!("mode {k:?} outside coefficient table")))?;
        self.coeffs[i] = v;
        Ok(())
    }

    /// `W̃(k)/Θ(k)`.
    pub fn normalised(&self, k: Mode) -> f64 {
        self.coeff(k) / theta(k)
    }

    /// All tabulated even-index modes `k ∈ ℕ^d` with their coefficients.
    pub fn table(&self) -> Vec<(Mode, f64)> {
        let n = self.kmax + 1;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let k = if self.dim == 1 { [i as i64, 0] } else { [(i / n) as i64, (i % n) as i64] };
                (k, v)
            })
            .collect()
    }

    /// Permutation-class representatives `k ≠ 0` up to `kmax`.
    pub fn class_modes(&self, kmax: usize) -> Vec<Mode> {
        let kmax = kmax.min(self.kmax) as i64;
        if self.dim == 1 {
            (1..=kmax).map(|k| [k, 0]).collect()
        } else {
            let mut out = Vec::new();
            for a in 0..=kmax {
                for b in 0..=a {
                    if a + b > 0 {
                        out.push([a, b]);
                    }
                }
            }
            out
        }
    }

    /// H-stable: no negative coefficient at `k ≠ 0`.
    pub fn is_h_stable(&self) -> bool {
        self.table().iter().all(|&(k, v)| (k == [0, 0]) || v >= 0.0)
    }

    pub fn is_mean_zero(&self) -> bool {
        self.coeff([0, 0]) == 0.0
    }

    /// The dominant mode `k♯` over permutation classes, if any coefficient at
    /// `k ≠ 0` is negative.
    pub fn dominant_mode(&self) -> Option<DominantMode> {
        let classes = self.class_modes(self.kmax);
        let (mode, ratio) = classes
            .iter()
            .map(|&k| (k, self.normalised(k)))
            .min_by(|a, b| a.1.total_cmp(&b.1))?;
        if ratio >= 0.0 {
            return None;
        }
        let multiplicity = classes.iter().filter(|&&k| cmp_eq(self.normalised(k), ratio)).count();
        Some(DominantMode { mode, ratio, multiplicity })
    }

    /// Check that this potential can act on fields of `grid`.
    pub fn check_grid(&self, grid: &TorusGrid) -> Result<()> {
        if grid.dim() != self.dim {
            return Err(Error::Resolution(format!(
                "potential is {}-dimensional, grid is {}-dimensional",
                self.dim,
                grid.dim()
            )));
        }
        if (grid.side() - self.side).abs() > 1e-12 * self.side {
            return Err(Error::Resolution(format!(
                "potential side {} differs from grid side {}",
                self.side,
                grid.side()
            )));
        }
        let needs_full_band = matches!(
            self.family,
            Family::HegselmannKrause { .. } | Family::Onsager { .. } | Family::Bdz { .. }
        );
        if needs_full_band && self.kmax < grid.band() {
            return Err(Error::Resolution(format!(
                "coefficient table stops at k={} but the grid resolves k={}",
                self.kmax,
                grid.band()
            )));
        }
        Ok(())
    }

    /// Multipliers `W̃(|k|)/N_k` in the grid's coefficient slot layout.
    pub fn multipliers(&self, grid: &TorusGrid) -> Result<Vec<f64>> {
        self.check_grid(grid)?;
        let mut out = vec![0.0; grid.coefficient_len()];
        for k in grid.modes() {
            let v = self.coeff(k);
            if v != 0.0 {
                out[grid.slot(k)] = v / norm_const(k, self.side, self.dim);
            }
        }
        Ok(out)
    }

    fn with_coeffs(&self, name: &str, coeffs: Vec<f64>) -> Potential {
        Potential {
            name: name.to_string(),
            side: self.side,
            dim: self.dim,
            kmax: self.kmax,
            coeffs,
            family: Family::Table,
        }
    }

    /// Componentwise split into `W_s` (positive part) and `W_u = W - W_s`.
    pub fn h_split(&self) -> HStabilitySplit {
        let stable: Vec<f64> = self.coeffs.iter().map(|&v| v.max(0.0)).collect();
        let unstable: Vec<f64> = self.coeffs.iter().zip(&stable).map(|(&v, &s)| v - s).collect();
        let zero = |c: &[f64]| c.iter().all(|&v| v == 0.0);
        let name_s = format!("{}_stable", self.name);
        let name_u = format!("{}_unstable", self.name);
        let (stable, unstable) = if zero(&unstable) {
            let mut s = self.clone();
            s.name = name_s;
            (s, self.with_coeffs(&name_u, unstable))
        } else if zero(&stable) {
            let mut u = self.clone();
            u.name = name_u;
            (self.with_coeffs(&name_s, stable), u)
        } else {
            (self.with_coeffs(&name_s, stable), self.with_coeffs(&name_u, unstable))
        };
        HStabilitySplit { stable, unstable }
    }

    /// α-stabilised potential: non-dominant negative modes scaled by `alpha`.
    pub fn alpha_stabilise(&self, alpha: f64) -> Result<Potential> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Domain(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        let dom = self
            .dominant_mode()
            .ok_or_else(|| Error::Degenerate("potential has no negative mode".into()))?;
        if !dom.is_unique() {
            return Err(Error::Degenerate(format!(
                "minimum of W̃(k)/Θ(k) attained by {} classes",
                dom.multiplicity
            )));
        }
        if alpha == 1.0 {
            return Ok(self.clone());
        }
        let sharp = class_rep(dom.mode, self.dim);
        let coeffs = self
            .table()
            .into_iter()
            .map(|(k, v)| if v < 0.0 && class_rep(k, self.dim) != sharp { alpha * v } else { v })
            .collect();
        Ok(self.with_coeffs(&format!("{}_alpha{alpha}", self.name), coeffs))
    }

    /// `self + other` at the coefficient level (same side and dimension).
    pub fn plus(&self, other: &Potential) -> Result<Potential> {
        if other.dim != self.dim || (other.side - self.side).abs() > 1e-12 * self.side {
            return Err(Error::Domain("potentials live on different tori".into()));
        }
        let kmax = self.kmax.max(other.kmax);
        let mut p = Potential::from_table(
            &format!("{}+{}", self.name, other.name),
            self.side,
            self.dim,
            kmax,
            vec![0.0; (kmax + 1).pow(self.dim as u32)],
        )?;
        for (k, v) in self.table().into_iter().chain(other.table()) {
            let cur = p.coeff(k);
            p.set_coeff(k, cur + v)?;
        }
        Ok(p)
    }

    fn series_eval(&self, x: [f64; 2]) -> (f64, [f64; 2], f64) {
        let mut v = 0.0;
        let mut g = [0.0; 2];
        let mut lap = 0.0;
        let om = 2.0 * PI / self.side;
        for (k, c) in self.table() {
            if c == 0.0 {
                continue;
            }
            let a = c * norm_const(k, self.side, self.dim);
            let (c0, s0) = ((om * k[0] as f64 * x[0]).cos(), (om * k[0] as f64 * x[0]).sin());
            let (c1, s1) = if self.dim == 2 {
                ((om * k[1] as f64 * x[1]).cos(), (om * k[1] as f64 * x[1]).sin())
            } else {
                (1.0, 0.0)
            };
            let w0 = om * k[0] as f64;
            let w1 = om * k[1] as f64;
            v += a * c0 * c1;
            g[0] -= a * w0 * s0 * c1;
            g[1] -= a * w1 * c0 * s1;
            lap -= a * (w0 * w0 + w1 * w1) * c0 * c1;
        }
        (v, g, lap)
    }

    /// `(W, ∇W, ΔW)` at a point; `None` for spectral-only potentials. At
    /// kinks the one-sided (smooth-part) value is returned.
    pub fn eval(&self, x: [f64; 2]) -> Option<(f64, [f64; 2], f64)> {
        let l = self.side;
        match self.family {
            Family::KellerSegel { .. } => None,
            Family::Kuramoto { .. } | Family::Table => Some(self.series_eval(x)),
            Family::HegselmannKrause { radius, rescaled } => {
                let scale = if rescaled { radius.powi(-3) } else { 1.0 };
                let y = wrap(x[0], l);
                let h = 0.5 * radius;
                if y.abs() < h {
                    let d = y.abs() - h;
                    Some((-0.5 * scale * d * d, [-scale * d * y.signum(), 0.0], -scale))
                } else {
                    Some((0.0, [0.0; 2], 0.0))
                }
            }
            Family::Onsager { ell } => {
                let om = 2.0 * PI / l;
                let s = (om * x[0]).sin();
                let c = (om * x[0]).cos();
                let e = ell as f64;
                let a = s.abs();
                let v = a.powi(ell as i32);
                let g = e * a.powi(ell as i32 - 1) * s.signum() * c * om;
                let second = if ell >= 2 { e * (e - 1.0) * a.powi(ell as i32 - 2) * c * c * om * om } else { 0.0 };
                Some((v, [g, 0.0], second - e * v * om * om))
            }
            Family::Bdz { ell, radius } => {
                let y = wrap(x[0], l);
                if y.abs() < radius {
                    let d = y.abs() - ell;
                    Some((d * d - (radius - ell).powi(2), [2.0 * d * y.signum(), 0.0], 2.0))
                } else {
                    Some((0.0, [0.0; 2], 0.0))
                }
            }
        }
    }

    pub fn value(&self, x: [f64; 2]) -> Option<f64> {
        self.eval(x).map(|e| e.0)
    }

    /// Nodal values, gradients and Laplacians on a uniform grid with `m`
    /// points per axis.
    fn nodal_samples(&self, m: usize) -> Option<(Vec<f64>, Vec<[f64; 2]>, Vec<f64>)> {
        if self.is_spectral_model() {
            return None;
        }
        let grid = TorusGrid::new(self.dim, self.side, m).ok()?;
        if matches!(self.family, Family::Table | Family::Kuramoto { .. }) && self.kmax < grid.band() {
            // exact trigonometric polynomial: evaluate through the transform
            let sp = Spectral::new(grid);
            let mut c = vec![0.0; grid.coefficient_len()];
            for (k, v) in self.table() {
                for sk in crate::torus::sign_orbit(k, self.dim) {
                    if sk.iter().all(|&q| q >= 0) {
                        c[grid.slot(sk)] = v;
                    }
                }
            }
            let vals = sp.inverse(&c);
            let g0 = sp.inverse(&sp.derivative(&c, 0));
            let g1 = if self.dim == 2 { sp.inverse(&sp.derivative(&c, 1)) } else { vec![0.0; vals.len()] };
            let mut lc = sp.derivative(&sp.derivative(&c, 0), 0);
            if self.dim == 2 {
                for (a, b) in lc.iter_mut().zip(sp.derivative(&sp.derivative(&c, 1), 1)) {
                    *a += b;
                }
            }
            let laps = sp.inverse(&lc);
            let grads = g0.into_iter().zip(g1).map(|(a, b)| [a, b]).collect();
            return Some((vals, grads, laps));
        }
        let mut vals = Vec::with_capacity(grid.len());
        let mut grads = Vec::with_capacity(grid.len());
        let mut laps = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let (v, g, l) = self.eval(grid.node(i))?;
            vals.push(v);
            grads.push(g);
            laps.push(l);
        }
        Some((vals, grads, laps))
    }

    fn sample_points(&self) -> usize {
        let base = if self.dim == 1 { 256 } else { 64 };
        (4 * base).max(4 * (2 * self.kmax + 2).next_power_of_two())
    }

    /// `‖W‖₁` by quadrature on the closed form (dense trapezoid for tables).
    pub fn l1_norm(&self) -> Option<f64> {
        let l = self.side;
        match self.family {
            Family::KellerSegel { .. } => None,
            Family::HegselmannKrause { radius, rescaled } => {
                let scale = if rescaled { radius.powi(-3) } else { 1.0 };
                Some(scale * radius.powi(3) / 24.0)
            }
            Family::Onsager { .. } | Family::Bdz { .. } => {
                let mut breaks = vec![0.0, -0.25 * l, 0.25 * l];
                if let Family::Bdz { ell, radius } = self.family {
                    breaks.extend([ell, -ell, radius, -radius]);
                }
                Some(quadrature::integrate(
                    |x| self.value([x, 0.0]).unwrap_or(0.0).abs(),
                    -0.5 * l,
                    0.5 * l,
                    &breaks,
                    1e-13,
                ))
            }
            Family::Kuramoto { .. } | Family::Table => {
                let m = self.sample_points();
                let (vals, _, _) = self.nodal_samples(m)?;
                let cell = (l / m as f64).powi(self.dim as i32);
                Some(cell * vals.iter().map(|v| v.abs()).sum::<f64>())
            }
        }
    }

    /// Sup norms by dense nodal sampling on a 4x oversampled grid.
    pub fn sup_norms(&self) -> SupNorms {
        let m = self.sample_points();
        let split = self.h_split();
        let samples = self.nodal_samples(m);
        let unstable = split.unstable.nodal_samples(m);
        let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        SupNorms {
            grad: samples
                .as_ref()
                .map(|s| s.1.iter().fold(0.0f64, |a, g| a.max((g[0] * g[0] + g[1] * g[1]).sqrt()))),
            laplacian: samples.as_ref().map(|s| max_abs(&s.2)),
            laplacian_unstable: unstable.as_ref().map(|s| max_abs(&s.2)),
            unstable_negative: unstable.as_ref().map(|s| s.0.iter().fold(0.0f64, |a, &v| a.max(-v))),
            negative: samples.as_ref().map(|s| s.0.iter().fold(0.0f64, |a, &v| a.max(-v))),
            oscillation: samples.as_ref().map(|s| {
                let hi = s.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = s.0.iter().cloned().fold(f64::INFINITY, f64::min);
                hi - lo
            }),
            l1: self.l1_norm(),
        }
    }

    /// Quadrature cross-check `<W, w_k>` of the closed form (1D only).
    pub fn quadrature_coeff(&self, k: usize) -> Option<f64> {
        if self.dim != 1 || self.is_spectral_model() {
            return None;
        }
        let l = self.side;
        let om = 2.0 * PI * k as f64 / l;
        let nk = norm_const([k as i64, 0], l, 1);
        let mut breaks = vec![0.0];
        match self.family {
            Family::HegselmannKrause { radius, .. } => breaks.extend([0.5 * radius, -0.5 * radius]),
            Family::Onsager { .. } => breaks.extend([0.25 * l, -0.25 * l]),
            Family::Bdz { ell, radius } => breaks.extend([ell, -ell, radius, -radius]),
            _ => {}
        }
        // subdivide so each piece holds a bounded number of oscillations
        let pieces = 4 * (k + 1);
        breaks.extend((1..pieces).map(|i| -0.5 * l + l * i as f64 / pieces as f64));
        Some(quadrature::integrate(
            |x| self.value([x, 0.0]).unwrap_or(0.0) * nk * (om * x).cos(),
            -0.5 * l,
            0.5 * l,
            &breaks,
            1e-13,
        ))
    }

    /// JSON object `{name, L, d, params, family, coeffs: [[[k..], value], ..]}`.
    pub fn to_json(&self) -> Value {
        let coeffs: Vec<Value> = self
            .table()
            .into_iter()
            .map(|(k, v)| {
                let idx: Vec<i64> = k[..self.dim].to_vec();
                json!([idx, v])
            })
            .collect();
        json!({
            "name": self.name,
            "L": self.side,
            "d": self.dim,
            "kmax": self.kmax,
            "params": self.params(),
            "family": self.family,
            "model": if self.is_spectral_model() { "spectral-truncation" } else { "closed-form" },
            "coeffs": coeffs,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| Error::Config(format!("potential JSON: {m}"));
        let name = v["name"].as_str().ok_or_else(|| bad("missing name"))?;
        let side = v["L"].as_f64().ok_or_else(|| bad("missing L"))?;
        let dim = v["d"].as_u64().ok_or_else(|| bad("missing d"))? as usize;
        let entries = v["coeffs"].as_array().ok_or_else(|| bad("missing coeffs"))?;
        let mut kmax = 0usize;
        let mut parsed = Vec::with_capacity(entries.len());
        for e in entries {
            let idx = e[0].as_array().ok_or_else(|| bad("coefficient index"))?;
            if idx.len() != dim {
                return Err(bad("index length differs from d"));
            }
            let mut k = [0i64; 2];
            for (i, c) in idx.iter().enumerate() {
                k[i] = c.as_i64().ok_or_else(|| bad("integer index"))?;
                if k[i] < 0 {
                    return Err(bad("indices must be nonnegative"));
                }
                kmax = kmax.max(k[i] as usize);
            }
            parsed.push((k, e[1].as_f64().ok_or_else(|| bad("coefficient value"))?));
        }
        if let Some(km) = v["kmax"].as_u64() {
            kmax = kmax.max(km as usize);
        }
        let mut p = Self::from_modes(name, side, dim, kmax, &parsed)?;
        if let Some(f) = v.get("family") {
            p.family = serde_json::from_value(f.clone()).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(p)
    }
}

impl SupNorms {
    /// `κ_con = β⁻¹/‖W_u−‖∞`, `+∞` when that norm vanishes.
    pub fn kappa_con(&self, beta: f64) -> Result<f64> {
        let n = self
            .unstable_negative
            .ok_or_else(|| Error::Unavailable("‖W_u−‖∞ needs a nodal form".into()))?;
        Ok(if n == 0.0 { f64::INFINITY } else { 1.0 / (beta * n) })
    }
}

/// Convexity threshold `κ_con` of `W` at inverse temperature `β`.
pub fn kappa_con(w: &Potential, beta: f64) -> Result<f64> {
    if w.h_split().unstable.table().iter().all(|&(_, v)| v == 0.0) {
        return Ok(f64::INFINITY);
    }
    w.sup_norms().kappa_con(beta)
}

/// Scan `(ell, R)` on a lattice for BDZ potentials with `W̃(1) < 0 < W̃(k)`
/// for `2 <= k <= kmax`.
pub fn bdz_mode_separated(side: f64, steps: usize, kmax: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 1..=steps {
        let radius = 0.5 * side * i as f64 / steps as f64;
        for j in 1..=i {
            let ell = radius * j as f64 / i as f64;
            if let Ok(p) = Potential::bdz(ell, radius, side, kmax) {
                if p.coeff([1, 0]) < 0.0 && (2..=kmax as i64).all(|k| p.coeff([k, 0]) > 0.0) {
                    out.push((ell, radius));
                }
            }
        }
    }
    out
}
