//! Scalar self-consistency for the generalised Kuramoto model: modified
//! Bessel ratios, the order-parameter equation and concentration of the
//! closed-form states.

use std::f64::consts::PI;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::torus::{DensityField, TorusGrid};

/// `r_n(a) = I_{n+1}(a)/I_n(a)` by backward evaluation of the continued
/// fraction `r_n = 1/(2(n+1)/a + r_{n+1})`.
pub fn bessel_ratio(n: usize, a: f64) -> Result<f64> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("argument must be finite and nonnegative, got {a}")));
    }
    if a == 0.0 {
        return Ok(0.0);
    }
    let depth = n + 40 + (2.0 * a).ceil().min(1e6) as usize;
    // tail started at the midpoint of the two-sided bound
    let (lo, hi) = ratio_bounds(depth, a);
    let mut r = 0.5 * (lo + hi);
    for j in (n..depth).rev() {
        r = 1.0 / (2.0 * (j + 1) as f64 / a + r);
    }
    Ok(r)
}

/// Two-sided bound `a/(n+1+√(a²+(n+1)²)) ≤ r_n(a) ≤ a/(n+√(a²+(n+2)²))`.
pub fn ratio_bounds(n: usize, a: f64) -> (f64, f64) {
    let nf = n as f64;
    (a / (nf + 1.0 + (a * a + (nf + 1.0).powi(2)).sqrt()), a / (nf + (a * a + (nf + 2.0).powi(2)).sqrt()))
}

/// `e^{-a} I_n(a)` by the trapezoid rule on `(1/π)∫₀^π e^{a(cos t - 1)} cos(nt) dt`.
pub fn scaled_bessel_i(n: usize, a: f64) -> f64 {
    let m = 64 + (16.0 * a.abs().sqrt()).ceil() as usize + 2 * n;
    let h = PI / m as f64;
    let f = |t: f64| (a * (t.cos() - 1.0)).exp() * (n as f64 * t).cos();
    let inner: f64 = (1..m).map(|j| f(j as f64 * h)).sum();
    (0.5 * (f(0.0) + f(PI)) + inner) * h / PI
}

/// `κ♯ = √(2L)/β` of the Kuramoto potential.
pub fn kappa_sharp(beta: f64, side: f64) -> f64 {
    (2.0 * side).sqrt() / beta
}

/// `M(a, κ) = √(2/L) βκ r₀(a)`.
pub fn mean_field_map(a: f64, kappa: f64, beta: f64, side: f64) -> Result<f64> {
    Ok((2.0 / side).sqrt() * beta * kappa * bessel_ratio(0, a.abs())? * a.signum())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BesselState {
    pub a: f64,
    pub kappa: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum OrderParameter {
    TrivialOnly,
    Nontrivial(BesselState),
}

impl OrderParameter {
    pub fn a(&self) -> f64 {
        match self {
            OrderParameter::TrivialOnly => 0.0,
            OrderParameter::Nontrivial(s) => s.a,
        }
    }
}

/// Positive root of `M(a, κ) = a`. Dividing by `a` and using
/// `r₀ = 1/(2/a + r₁)` gives the monotone equation `a r₁(a) = √(2/L)βκ - 2`.
pub fn solve_order_parameter(kappa: f64, beta: f64, side: f64) -> Result<OrderParameter> {
    if !(kappa > 0.0 && beta > 0.0 && side > 0.0) {
        return Err(Error::Domain("kappa, beta and L must be positive".into()));
    }
    let target = (2.0 / side).sqrt() * beta * kappa - 2.0;
    if target <= 0.0 {
        return Ok(OrderParameter::TrivialOnly);
    }
    let g = |a: f64| -> Result<f64> { Ok(a * bessel_ratio(1, a)? - target) };
    // a r₁(a) < a, so the root lies below target + 4
    let (mut lo, mut hi) = (0.0, target + 4.0);
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut a = 0.5 * (lo + hi);
    for _ in 0..50 {
        let r1 = bessel_ratio(1, a)?;
        let deriv = a - 2.0 * r1 - a * r1 * r1;
        let next = a - g(a)? / deriv;
        let next = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        let step = (next - a).abs();
        a = next;
        if g(a)? < 0.0 {
            lo = a;
        } else {
            hi = a;
        }
        if step <= 1e-12 * a.max(1e-300) {
            break;
        }
    }
    Ok(OrderParameter::Nontrivial(BesselState { a, kappa, ratio: bessel_ratio(0, a)? }))
}

/// `ϱ(x, a) = e^{a cos(2πkx/L)}/(L I₀(a))` at the grid nodes (1D).
pub fn closed_form_state(grid: &TorusGrid, a: f64, kmode: usize) -> Result<DensityField> {
    if grid.dim() != 1 {
        return Err(Error::Domain("closed-form Kuramoto states are one-dimensional".into()));
    }
    let l = grid.side();
    let i0 = scaled_bessel_i(0, a.abs());
    let vals = (0..grid.len())
        .map(|i| {
            let x = grid.node(i)[0];
            (a * (2.0 * PI * kmode as f64 * x / l).cos() - a.abs()).exp() / (l * i0)
        })
        .collect();
    DensityField::normalized(*grid, vals)
}

fn closed_form_value(x: f64, a: f64, kmode: usize, side: f64) -> f64 {
    (a * ((2.0 * PI * kmode as f64 * x / side).cos() - 1.0)).exp() / (side * scaled_bessel_i(0, a))
}

/// `‖ϱ(·, a) - ϱ∞‖₁` by adaptive quadrature.
pub fn closed_form_l1_distance(a: f64, kmode: usize, side: f64) -> f64 {
    let u = 1.0 / side;
    let k = kmode.max(1) as f64;
    let breaks: Vec<f64> = (0..=4 * kmode.max(1)).map(|j| -0.5 * side + side * j as f64 / (4.0 * k)).collect();
    quadrature::integrate(|x| (closed_form_value(x, a, kmode, side) - u).abs(), -0.5 * side, 0.5 * side, &breaks, 1e-13)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConcentrationRow {
    pub a: f64,
    /// Mass within distance `eps` of each minimum `x_j = jL/k` of `W`.
    pub peak_masses: Vec<f64>,
    pub total: f64,
}

/// Mass of the closed-form state near each of the `k` minima of `W`.
pub fn concentration_diagnostic(a_values: &[f64], kmode: usize, side: f64, eps: f64) -> Result<Vec<ConcentrationRow>> {
    if kmode == 0 || !(eps > 0.0) || eps > side / (2.0 * kmode as f64) {
        return Err(Error::Domain("need k ≥ 1 and 0 < eps ≤ L/(2k)".into()));
    }
    if a_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Domain("a values must be nondecreasing".into()));
    }
    let centres: Vec<f64> = (0..kmode as i64)
        .map(|j| {
            let x = side * j as f64 / kmode as f64;
            x - side * ((x + 0.5 * side) / side).floor()
        })
        .collect();
    Ok(a_values
        .iter()
        .map(|&a| {
            // the state is periodic, so windows need no wrapping
            let peak_masses: Vec<f64> = centres
                .iter()
                .map(|&c| quadrature::integrate(|x| closed_form_value(x, a, kmode, side), c - eps, c + eps, &[c], 1e-14))
                .collect();
            ConcentrationRow { a, total: peak_masses.iter().sum(), peak_masses }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderParameterRow {
    pub kappa: f64,
    pub a: f64,
    pub l1_distance: f64,
}

pub fn order_parameter_curve(kappas: &[f64], beta: f64, side: f64) -> Result<Vec<OrderParameterRow>> {
    kappas
        .iter()
        .map(|&kappa| {
            let a = solve_order_parameter(kappa, beta, side)?.a();
            Ok(OrderParameterRow { kappa, a, l1_distance: closed_form_l1_distance(a, 1, side) })
        })
        .collect()
}

/// CSV `kappa,a,l1_distance`.
pub fn write_order_parameter_csv<W: Write>(rows: &[OrderParameterRow], mut out: W) -> Result<()> {
    writeln!(out, "kappa,a,l1_distance")?;
    for r in rows {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", r.kappa, r.a, r.l1_distance)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::Potential;
    use crate::stationary::{aligned_distance, deflated_branch_seeds, solve, SolveConfig};
    use approx::assert_abs_diff_eq;

    /// `I_n(a)` from the power series.
    fn bessel_series(n: usize, a: f64) -> f64 {
        let mut term = (a / 2.0).powi(n as i32) / (1..=n).map(|j| j as f64).product::<f64>();
        let mut sum = term;
        for m in 1..500 {
            term *= (a / 2.0).powi(2) / (m as f64 * (m + n) as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    #[test]
    fn ratio_values() {
        assert_eq!(bessel_ratio(0, 0.0).unwrap(), 0.0);
        assert_abs_diff_eq!(bessel_ratio(0, 1.0).unwrap(), 0.446390, epsilon = 1e-6);
        for n in 0..=4 {
            for a in [0.01, 0.3, 1.0, 4.0, 15.0, 40.0] {
                let want = bessel_series(n + 1, a) / bessel_series(n, a);
                assert_abs_diff_eq!(bessel_ratio(n, a).unwrap(), want, epsilon = 1e-13 * want.max(1.0));
            }
        }
        assert!(bessel_ratio(0, -1.0).is_err());
    }

    #[test]
    fn ratio_bounds_hold() {
        for n in 0..=4 {
            for a in [0.1, 1.0, 10.0, 100.0] {
                let r = bessel_ratio(n, a).unwrap();
                let (lo, hi) = ratio_bounds(n, a);
                assert!(lo <= r && r <= hi, "n={n} a={a}");
            }
        }
    }

    #[test]
    fn scaled_bessel_matches_series() {
        for n in 0..3 {
            for a in [0.0, 0.5, 3.0, 20.0] {
                assert_abs_diff_eq!(scaled_bessel_i(n, a), (-a as f64).exp() * bessel_series(n, a), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn r0_monotone_and_slope() {
        let vals: Vec<f64> = (0..=10_000).map(|i| bessel_ratio(0, 100.0 * i as f64 / 10_000.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
        let h = 1e-5;
        let slope = (bessel_ratio(0, h).unwrap() - 0.0) / h;
        assert_abs_diff_eq!(slope, 0.5, epsilon = 1e-6);
    }

    #[test]
    fn turan_sign() {
        for i in 1..=200 {
            let a = 0.5 * i as f64;
            let (i0, i1, i2) = (scaled_bessel_i(0, a), scaled_bessel_i(1, a), scaled_bessel_i(2, a));
            assert!(i0 * i2 - i1 * i1 < 0.0, "a={a}");
        }
    }

    #[test]
    fn order_parameter() {
        let l = 2.0 * PI;
        let ks = kappa_sharp(1.0, l);
        assert_abs_diff_eq!(ks, 3.544907701811032, epsilon = 1e-12);
        assert_eq!(solve_order_parameter(ks, 1.0, l).unwrap(), OrderParameter::TrivialOnly);
        assert_eq!(solve_order_parameter(0.5 * ks, 1.0, l).unwrap(), OrderParameter::TrivialOnly);
        let mut prev: Option<(f64, f64)> = None;
        for i in 1..=20 {
            let kappa = ks * (1.0 + 4.0 * i as f64 / 20.0);
            let a = solve_order_parameter(kappa, 1.0, l).unwrap().a();
            assert!(a > 0.0);
            assert_abs_diff_eq!(mean_field_map(a, kappa, 1.0, l).unwrap(), a, epsilon = 1e-12 * a.max(1.0));
            if let Some((k1, a1)) = prev {
                assert!(a > kappa / k1 * a1);
            }
            prev = Some((kappa, a));
            // exactly one sign change of a - M(a, κ) on a sample grid
            let amax = (2.0 / l).sqrt() * kappa;
            let signs: Vec<bool> = (1..=2000)
                .map(|j| {
                    let s = amax * j as f64 / 2000.0;
                    s - mean_field_map(s, kappa, 1.0, l).unwrap() > 0.0
                })
                .collect();
            assert_eq!(signs.windows(2).filter(|w| w[0] != w[1]).count(), 1);
        }
    }

    #[test]
    fn order_parameter_near_threshold() {
        let l = 2.0 * PI;
        let ks = kappa_sharp(1.3, l);
        let a = solve_order_parameter(ks * (1.0 + 1e-8), 1.3, l).unwrap().a();
        assert!(a > 0.0 && a < 1e-3);
        assert_abs_diff_eq!(mean_field_map(a, ks * (1.0 + 1e-8), 1.3, l).unwrap(), a, epsilon = 1e-15);
    }

    #[test]
    fn pde_consistency() {
        let l = 2.0 * PI;
        let g = TorusGrid::line(l, 128).unwrap();
        let w = Potential::kuramoto(1, l, 63).unwrap();
        let ks = kappa_sharp(1.0, l);
        for f in [1.1, 1.5, 2.0] {
            let kappa = f * ks;
            let a = solve_order_parameter(kappa, 1.0, l).unwrap().a();
            let seed = deflated_branch_seeds(&g, &[[1, 0]], &[0.2]).unwrap().remove(0);
            let st = solve(&seed, &w, kappa, 1.0, &SolveConfig::default()).unwrap();
            assert!(st.converged);
            assert_abs_diff_eq!(kappa * st.coeff([1, 0]), a, epsilon = 1e-6);
            let cf = closed_form_state(&g, a, 1).unwrap();
            assert!(aligned_distance(&st.rho, &cf) < 1e-6);
        }
    }

    #[test]
    fn concentration() {
        let l = 2.0 * PI;
        let r = concentration_diagnostic(&[0.0], 1, l, l / 20.0).unwrap();
        assert_abs_diff_eq!(r[0].peak_masses[0], 0.1, epsilon = 1e-12);
        let r = concentration_diagnostic(&[50.0], 1, l, l / 10.0).unwrap();
        assert!(r[0].peak_masses[0] > 0.99);
        let r = concentration_diagnostic(&[1.0, 10.0, 60.0], 2, l, l / 10.0).unwrap();
        for row in &r {
            assert_abs_diff_eq!(row.peak_masses[0], row.peak_masses[1], epsilon = 1e-8);
        }
        assert!(r[2].peak_masses[0] > 0.49);
        assert!(concentration_diagnostic(&[2.0, 1.0], 1, l, 0.1).is_err());
    }

    #[test]
    fn order_parameter_csv() {
        let rows = order_parameter_curve(&[1.0, 5.0], 1.0, 2.0 * PI).unwrap();
        assert_eq!(rows[0].a, 0.0);
        assert_abs_diff_eq!(rows[0].l1_distance, 0.0, epsilon = 1e-14);
        assert!(rows[1].l1_distance > 0.0);
        let mut buf = Vec::new();
        write_order_parameter_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
