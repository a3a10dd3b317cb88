//! Acceptance criteria 1-10. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use mvtorus::bifurcation::{
    continue_branch, crossing_kappa, eigenvalue, enumerate_bifurcations, spectrum, two_square_count, BranchConfig,
};
use mvtorus::dynamics::particles::{empirical_density, simulate_particles, ForceMethod, ParticleConfig, ParticleEnsemble};
use mvtorus::dynamics::{decay_report, evolve, EvolveConfig, Trajectory};
use mvtorus::functionals::{entdef_bound_check, entdef_constant, entdef_g_tilde};
use mvtorus::kuramoto::{closed_form_state, kappa_sharp, solve_order_parameter};
use mvtorus::potentials::Potential;
use mvtorus::stationary::{
    deflated_branch_seeds, gibbs_linf_bound, phase_fix, positivity_lower_bound, GibbsMap, SolveConfig,
};
use mvtorus::torus::{basis_eval, norm_const, DensityField, Mode, TorusGrid};
use mvtorus::transitions::{predict_discontinuous, scan_transition, Classification, Prediction, ScanConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Writes past the test harness capture so the lines always reach the log.
fn report(n: usize, v: &Verdict, secs: f64) {
    let line = format!(
        "criterion {n}: {} ({secs:.1}s) {}\n",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn perturbed(grid: &TorusGrid, modes: &[(Mode, f64)]) -> DensityField {
    let u = grid.uniform_value();
    let mut v = vec![u; grid.len()];
    for &(k, e) in modes {
        let nk = norm_const(k, grid.side(), grid.dim());
        for (x, b) in v.iter_mut().zip(basis_eval(k, grid).unwrap()) {
            *x += u * e * b / nk;
        }
    }
    DensityField::normalized(*grid, v).unwrap()
}

fn kuramoto_transition() -> Verdict {
    let l = 2.0 * PI;
    let w = Potential::kuramoto(1, l, 127).unwrap();
    let ks = (4.0 * PI).sqrt();
    let r = scan_transition(&w, 1.0, (0.5 * ks, 1.1 * ks), &ScanConfig::default()).unwrap();
    let kc = r.kappa_c.unwrap_or(f64::NAN);
    let jump = r.l1_jump.unwrap_or(f64::NAN);
    let pass = (kc - ks).abs() <= 1e-3 && r.classification == Classification::Continuous && jump < 1e-2;
    verdict(pass, format!("kappa_c={kc:.7} (target {ks:.7}), {:?}, l1_jump={jump:.2e}", r.classification))
}

fn bessel_consistency() -> Verdict {
    let l = 2.0 * PI;
    let g = TorusGrid::line(l, 256).unwrap();
    let w = Potential::kuramoto(1, l, 127).unwrap();
    let ks = kappa_sharp(1.0, l);
    let mut worst: f64 = 0.0;
    for f in [1.1, 1.5, 2.0] {
        let kappa = f * ks;
        let a = solve_order_parameter(kappa, 1.0, l).unwrap().a();
        let seed = deflated_branch_seeds(&g, &[[1, 0]], &[0.2]).unwrap().remove(0);
        let st = GibbsMap::new(&w, g, kappa, 1.0).unwrap().solve(&seed, &SolveConfig::default()).unwrap();
        let centred = phase_fix(&st.rho, [1, 0]).unwrap();
        let pde_a = kappa * centred.spectral().get([1, 0]);
        worst = worst.max((pde_a - a).abs());
    }
    verdict(worst <= 1e-6, format!("max |beta kappa rho(1) - a| = {worst:.2e}"))
}

fn branch_curvature() -> Verdict {
    let l = 2.0 * PI;
    let beta = 1.0;
    let g = TorusGrid::line(l, 128).unwrap();
    let w = Potential::kuramoto(1, l, 63).unwrap();
    let origin = enumerate_bifurcations(&w, beta, 63).remove(0);
    let br = continue_branch(&origin, &w, &g, beta, &BranchConfig::default()).unwrap();
    let Some(fit) = br.curvature_fit else {
        return verdict(false, "no curvature fit".into());
    };
    let rho_inf = 1.0 / l;
    let claimed = 2.0 * beta * origin.kappa_star / (3.0 * rho_inf);
    let rel = (fit.second_derivative - claimed).abs() / claimed;
    verdict(
        rel <= 0.05,
        format!(
            "fitted kappa''(0)={:.6}, target 2 beta kappa*/(3 rho_inf)={claimed:.6} (rel err {rel:.3}); kappa'(0)={:.1e}; \
             exact value from the Bessel branch is kappa* L/2={:.6}",
            fit.second_derivative,
            fit.first_derivative,
            origin.kappa_star * l / 2.0
        ),
    )
}

fn hk_discontinuous() -> Verdict {
    let w = Potential::hegselmann_krause(0.1, 1.0, true, 255).unwrap();
    let ks = spectrum(&w, 0.0, 1.0, 255).kappa_sharp;
    let cfg = ScanConfig { points: 512, coarse: 24, ..Default::default() };
    let r = scan_transition(&w, 1.0, (0.02 * ks, 1.05 * ks), &cfg).unwrap();
    let grid = TorusGrid::line(1.0, 512).unwrap();
    let pred = predict_discontinuous(&w, 1.0, &grid).unwrap();
    let kc = r.kappa_c.unwrap_or(f64::NAN);
    let jump = r.l1_jump.unwrap_or(f64::NAN);
    let pass = kc < ks - 1e-3 * ks
        && jump > 0.1
        && r.classification == Classification::Discontinuous
        && pred.verdict == Prediction::PredictedDiscontinuous;
    verdict(
        pass,
        format!("kappa_c={kc:.5} < kappa_sharp={ks:.5}, l1_jump={jump:.3}, {:?}, predictor {:?}", r.classification, pred.verdict),
    )
}

fn coefficient_closed_forms() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut tables = Vec::new();
    for r in [0.1, 0.25, 0.5, 1.0] {
        tables.push(Potential::hegselmann_krause(r, 1.0, false, 64).unwrap());
    }
    tables.push(Potential::hegselmann_krause(0.1, 1.0, true, 64).unwrap());
    for ell in 1..=6 {
        tables.push(Potential::onsager(ell, 1.0, 64).unwrap());
    }
    for w in &tables {
        for k in 0..=64usize {
            let q = w.quadrature_coeff(k).unwrap();
            worst = worst.max((q - w.coeff([k as i64, 0])).abs());
        }
    }
    // W̃_ℓ(k) = -ℓ(ℓ-1)/(k² - ℓ²) W̃_{ℓ-2}(k), with W̃_0 the constant function
    let side = 1.0;
    let mut rec: f64 = 0.0;
    for ell in 2..=6usize {
        let w = Potential::onsager(ell, side, 64).unwrap();
        let prev = (ell > 2).then(|| Potential::onsager(ell - 2, side, 64).unwrap());
        for k in 0..=64i64 {
            if k == ell as i64 {
                continue;
            }
            let lower = match &prev {
                Some(p) => p.coeff([k, 0]),
                None => {
                    if k == 0 {
                        side.sqrt()
                    } else {
                        0.0
                    }
                }
            };
            let e = ell as f64;
            let rhs = -e * (e - 1.0) / ((k * k) as f64 - e * e) * lower;
            rec = rec.max((w.coeff([k, 0]) - rhs).abs());
        }
    }
    verdict(worst < 1e-8 && rec < 1e-10, format!("max quadrature error {worst:.2e}, max recursion residual {rec:.2e}"))
}

/// Criterion 6 runs, also reused by criterion 8.
fn dynamics_runs() -> Vec<(String, Trajectory)> {
    let mut out = Vec::new();
    let l = 2.0 * PI;
    let g = TorusGrid::line(l, 128).unwrap();
    let w = Potential::kuramoto(1, l, 63).unwrap();
    let rho0 = perturbed(&g, &[([1, 0], 0.3), ([-2, 0], 0.1)]);
    let lap = w.sup_norms().laplacian.unwrap();
    let kappa = 0.25 * 2.0 * PI * PI / (l * l * lap);
    let cfg = EvolveConfig { t_final: 30.0, ..Default::default() };
    out.push(("kuramoto decay".into(), evolve(&rho0, &w, kappa, 1.0, &cfg).unwrap()));
    let ks = kappa_sharp(1.0, l);
    let cfg = EvolveConfig { t_final: 20.0, ..Default::default() };
    out.push(("kuramoto 1.5 kappa_sharp".into(), evolve(&rho0, &w, 1.5 * ks, 1.0, &cfg).unwrap()));
    let g1 = TorusGrid::line(1.0, 256).unwrap();
    let rho1 = perturbed(&g1, &[([1, 0], 0.2), ([-2, 0], 0.1), ([3, 0], 0.05)]);
    let others = [
        Potential::hegselmann_krause(0.3, 1.0, false, 127).unwrap(),
        Potential::onsager(2, 1.0, 127).unwrap(),
        Potential::bdz(0.1, 0.3, 1.0, 127).unwrap(),
        Potential::keller_segel(0.75, 1.0, 1, 127).unwrap(),
        Potential::negative_dirichlet(4, 1.0, 127).unwrap(),
    ];
    for w in others {
        let ks = spectrum(&w, 0.0, 1.0, 127).kappa_sharp;
        for f in [0.5, 1.5] {
            let cfg = EvolveConfig { t_final: 0.5, record_every: 0.05, ..Default::default() };
            out.push((format!("{} {f} kappa_sharp", w.name), evolve(&rho1, &w, f * ks, 1.0, &cfg).unwrap()));
        }
    }
    out
}

fn decay_theory(runs: &[(String, Trajectory)]) -> Verdict {
    let l = 2.0 * PI;
    let w = Potential::kuramoto(1, l, 63).unwrap();
    let rep = decay_report(&runs[0].1, &w);
    let (fit, th) = (rep.fitted_rate.unwrap_or(f64::NAN), rep.theoretical_rate.unwrap_or(f64::NAN));
    let rate_ok = rep.asserted == Some(true);
    let worst = runs.iter().map(|(_, t)| t.max_free_energy_increase).fold(f64::NEG_INFINITY, f64::max);
    let aborted = runs.iter().filter(|(_, t)| t.aborted.is_some()).count();
    verdict(
        rate_ok && worst <= 1e-10 && aborted == 0,
        format!(
            "kappa={:.4}: fitted rate {fit:.4} >= {th:.4} - 5%; max per-step F increase over {} runs {worst:.1e}",
            rep.kappa,
            runs.len()
        ),
    )
}

fn random_density(grid: &TorusGrid, rng: &mut ChaCha8Rng) -> DensityField {
    let amp = rng.gen_range(0.1..3.0);
    let mut f = vec![0.0; grid.len()];
    let kmax = 4i64;
    for k0 in -kmax..=kmax {
        for k1 in if grid.dim() == 2 { -kmax..=kmax } else { 0..=0 } {
            if [k0, k1] == [0, 0] {
                continue;
            }
            let c = amp * rng.gen_range(-1.0..1.0) / (1 + k0.abs() + k1.abs()) as f64;
            for (x, b) in f.iter_mut().zip(basis_eval([k0, k1], grid).unwrap()) {
                *x += c * b;
            }
        }
    }
    DensityField::normalized(*grid, f.iter().map(|v| v.exp()).collect()).unwrap()
}

fn entropy_defect() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let g1 = TorusGrid::line(1.0, 64).unwrap();
    let g2 = TorusGrid::square(1.0, 32).unwrap();
    let mut worst = f64::INFINITY;
    for i in 0..1000 {
        let (rho, ks): (DensityField, Vec<Mode>) = if i % 2 == 0 {
            (random_density(&g1, &mut rng), vec![[1, 0], [-3, 0]])
        } else {
            (random_density(&g2, &mut rng), vec![[1, 0], [0, -2], [1, 1], [-2, 3]])
        };
        for k in ks {
            let c = entdef_bound_check(&rho, k).unwrap();
            worst = worst.min(c.lhs - c.rhs);
        }
    }
    let c3 = entdef_constant(3).unwrap();
    let monotone = (1..=3).all(|n| {
        let v: Vec<f64> = (0..=500).map(|i| entdef_g_tilde(n, 5.0 * i as f64 / 500.0).unwrap()).collect();
        v.windows(2).all(|w| w[1] >= w[0])
    });
    verdict(
        worst > -1e-12 && c3 == 0.84375 && monotone,
        format!("min (lhs - G) over 1000 densities {worst:.2e}; C(3)={c3}; G monotone on [0,5]: {monotone}"),
    )
}

fn conservation_positivity(runs: &[(String, Trajectory)]) -> Verdict {
    let mass = runs.iter().map(|(_, t)| t.max_mass_error).fold(0.0, f64::max);
    let cases: Vec<(Potential, f64)> = {
        let l = 2.0 * PI;
        let ks = kappa_sharp(1.0, l);
        vec![
            (Potential::kuramoto(1, l, 127).unwrap(), 1.5 * ks),
            (Potential::kuramoto(1, l, 127).unwrap(), 3.0 * ks),
            (Potential::onsager(2, l, 127).unwrap(), 1.2 * crossing_kappa(&Potential::onsager(2, l, 127).unwrap(), [2, 0], 1.0)),
            (Potential::hegselmann_krause(0.5 * l, l, false, 127).unwrap(), 2.0),
        ]
    };
    let mut literal_ok = true;
    let mut scaled_ok = true;
    let mut positive = true;
    let mut notes = Vec::new();
    for (w, kappa) in &cases {
        let g = TorusGrid::line(w.side(), 256).unwrap();
        let k = w.dominant_mode().map_or([1, 0], |d| d.mode);
        let seed = perturbed(&g, &[(k, 0.5)]);
        let st = GibbsMap::new(w, g, *kappa, 1.0).unwrap().solve(&seed, &SolveConfig::default()).unwrap();
        if !st.converged {
            continue;
        }
        let sup = gibbs_linf_bound(w, *kappa, 1.0).unwrap();
        let min = st.rho.min_value();
        let lit = positivity_lower_bound(w, *kappa, 1.0, sup, false).unwrap();
        let sc = positivity_lower_bound(w, *kappa, 1.0, sup, true).unwrap();
        positive &= min > 0.0;
        literal_ok &= min >= lit;
        scaled_ok &= min >= sc;
        notes.push(format!("{} kappa={kappa:.3}: min={min:.3e} literal={lit:.3e} scaled={sc:.3e}", w.name));
    }
    verdict(
        mass < 1e-12 && positive && literal_ok,
        format!(
            "max mass error {mass:.1e}; literal bound holds: {literal_ok}; L^-d-scaled bound holds: {scaled_ok}; {}",
            notes.join("; ")
        ),
    )
}

fn keller_segel_points() -> Verdict {
    let (l, beta, s) = (2.0 * PI, 1.0, 0.75);
    let w = Potential::keller_segel(s, l, 1, 16).unwrap();
    let mut worst: f64 = 0.0;
    let mut zero: f64 = 0.0;
    for k in 1..=5i64 {
        let target = (l / (2.0 * PI)).powf(2.0 * s) * (k as f64).powf(2.0 * s) * l / beta;
        let ks = crossing_kappa(&w, [k, 0], beta);
        worst = worst.max((ks - target).abs());
        zero = zero.max(eigenvalue(&w, [k, 0], ks, beta).abs() / eigenvalue(&w, [k, 0], 0.0, beta).abs());
    }
    let brute = |z: u64| -> u64 {
        let mut c = 0;
        let mut a = 1u64;
        while a * a <= z {
            let r = z - a * a;
            let b = (r as f64).sqrt().round() as u64;
            if b * b == r {
                c += 1;
            }
            a += 1;
        }
        c
    };
    let mut agree = true;
    let mut not_one = Vec::new();
    for p in [2u64, 3, 5, 7, 11, 13] {
        for n in 1..=3u32 {
            let z = p.pow(2 * n);
            let r = two_square_count(z).unwrap();
            agree &= r == brute(z);
            if r != 1 {
                not_one.push(format!("r({p}^{})={r}", 2 * n));
            }
        }
    }
    let pass = worst < 1e-8 && zero < 1e-14 && agree && not_one.is_empty();
    verdict(
        pass,
        format!(
            "1D max |kappa*_k - formula| {worst:.1e}, max relative lambda_k(kappa*_k) {zero:.1e}; \
             2D: Jacobi count equals brute force: {agree}; r(p^2n)=1 fails for {}",
            if not_one.is_empty() { "none".to_string() } else { not_one.join(", ") }
        ),
    )
}

fn particle_cross_check() -> Verdict {
    let l = 2.0 * PI;
    let grid = TorusGrid::line(l, 128).unwrap();
    let w = Potential::kuramoto(1, l, 63).unwrap();
    let ks = kappa_sharp(1.0, l);
    let bins = 16;
    let r = grid.points() / bins;
    let bin_average = |v: &[f64]| -> Vec<f64> {
        (0..v.len()).map(|i| v[(i / r) * r..(i / r + 1) * r].iter().sum::<f64>() / r as f64).collect()
    };
    let l1 = |a: &[f64], b: &[f64]| grid.l1_norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
    let n = 10_000;
    let cfg = ParticleConfig { t_final: 10.0, dt: 0.01, force: ForceMethod::Spectral, snapshot_every: None };
    let uni = grid.uniform();
    let mut sub = Vec::new();
    for seed in 0..3 {
        let ens = ParticleEnsemble::uniform(n, l, 1, seed).unwrap();
        let run = simulate_particles(&ens, &w, 0.5 * ks, 1.0, &cfg).unwrap();
        let h = empirical_density(&run.final_state, &grid, bins).unwrap();
        sub.push(l1(&h.values, &uni));
    }
    // supercritical: cluster of the PDE, aligned to the particle centre of mass
    let kappa = 1.5 * ks;
    let a = solve_order_parameter(kappa, 1.0, l).unwrap().a();
    let cluster = closed_form_state(&grid, a, 1).unwrap();
    let ens = ParticleEnsemble::uniform(n, l, 1, 7).unwrap();
    let run = simulate_particles(&ens, &w, kappa, 1.0, &cfg).unwrap();
    let (sx, cx) = run.final_state.positions.iter().fold((0.0, 0.0), |(s, c), p| (s + p[0].sin(), c + p[0].cos()));
    let centre = sx.atan2(cx);
    let mut shifted = run.final_state.clone();
    for p in shifted.positions.iter_mut() {
        p[0] = (p[0] - centre + 1.5 * l).rem_euclid(l) - 0.5 * l;
    }
    let h = empirical_density(&shifted, &grid, bins).unwrap();
    let sup = l1(&h.values, &bin_average(&cluster.values));
    let worst_sub = sub.iter().cloned().fold(0.0, f64::max);
    verdict(
        worst_sub <= 0.05 && sup <= 0.1,
        format!("N={n}: subcritical L1 to uniform {sub:.4?} (3 seeds); supercritical L1 to aligned cluster {sup:.4}"),
    )
}

#[test]
fn acceptance() {
    let mut fails = Vec::new();
    let mut run = |n: usize, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        report(n, &v, t.elapsed().as_secs_f64());
        if !v.pass {
            fails.push(n);
        }
    };
    run(1, &mut kuramoto_transition);
    run(2, &mut bessel_consistency);
    run(3, &mut branch_curvature);
    run(4, &mut hk_discontinuous);
    run(5, &mut coefficient_closed_forms);
    let runs = dynamics_runs();
    run(6, &mut || decay_theory(&runs));
    run(7, &mut entropy_defect);
    run(8, &mut || conservation_positivity(&runs));
    run(9, &mut keller_segel_points);
    run(10, &mut particle_cross_check);
    assert!(fails.is_empty(), "failing criteria: {fails:?}");
}
