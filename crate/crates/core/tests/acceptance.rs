//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion; exits nonzero if any fails.
//!
//! `cargo test -p chern-extremal --test acceptance -- 5 8` runs a subset.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use chern_extremal::calabi::{
    calabi_functional, el_residual, gradient_norm_sq, integral_identities, second_variation, variation_at,
};
use chern_extremal::extremal::{classify_sign, mean_scalar, total_scalar, CurvatureSign, SIGN_TOL};
use chern_extremal::gauduchon::verify_gauduchon;
use chern_extremal::geometry::{chern_curvature_oracle, chern_scalar, conformal_scalar, volume_density};
use chern_extremal::grid::{inner, integrate, random_band_limited};
use chern_extremal::operators::{
    complex_laplacian, complex_laplacian_adjoint, hodge_laplacian, torsion_scalar, InitialGuess, KrylovConfig,
};
use chern_extremal::scenario::random_hermitian;
use chern_extremal::study::{distance_mod_constants, DIRECTION_AMPLITUDE};
use chern_extremal::{
    extremal_factor, gauduchon_factor, GridSpec, HermitianMetricField, Result, ScalarField, Scenario,
};

// glibc returns freed 16 MB fields to the OS, so every fresh field pays its
// page faults again; mimalloc keeps them mapped
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: String) -> Self {
        Self { passed, detail }
    }
}

fn grid(n: usize, points: usize) -> GridSpec {
    GridSpec::new(n, points).unwrap()
}

fn builtin(name: &str) -> Scenario {
    Scenario::builtin(name).unwrap_or_else(|| panic!("builtin {name}"))
}

/// A builtin's metric sampled on an `points`-per-axis grid.
fn builtin_at(name: &str, points: usize) -> Result<HermitianMetricField> {
    let s = builtin(name);
    s.metric.realize(grid(s.dim, points))
}

fn cfg() -> KrylovConfig {
    KrylovConfig::default()
}

/// Band limit for random test functions: at most 2, and within the lower
/// quarter of the spectrum.
fn band(spec: GridSpec) -> usize {
    2.min(spec.points() / 4 - 1).max(1)
}

fn phi_field(spec: GridSpec) -> ScalarField {
    ScalarField::from_fn(spec, |x| 0.1 * (2.0 * PI * x[0]).cos())
}

/// The three metrics of the variation matrix.
fn matrix_metrics() -> Result<Vec<(&'static str, HermitianMetricField)>> {
    Ok(vec![
        ("conformal_flat", builtin("conformal_flat").realize()?),
        ("non_kahler", builtin("non_kahler").realize()?),
        ("hermitian3", builtin("hermitian3").realize()?),
    ])
}

fn exponents(n: usize) -> Vec<f64> {
    let mut p = vec![2.0, n as f64, 3.5];
    p.dedup();
    p
}

fn conformal_curvature_oracle(start: Instant) -> Result<Outcome> {
    let spec = grid(2, 32);
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let g = random_hermitian(spec, 1000 + k, 1, 0.2)?;
        let f = random_band_limited(spec, 2000 + k, 2, 0.3)?;
        let predicted = conformal_scalar(&chern_scalar(&g)?, &f, &g)?;
        worst = worst.max((&chern_curvature_oracle(&g.conformal(&f)?) - &predicted).sup_norm());
    }
    let elapsed = start.elapsed();
    Ok(Outcome::new(
        worst < 1e-8 && elapsed < Duration::from_secs(60),
        format!("worst sup-norm gap {worst:.2e} (tol 1e-8), {:.1} s (limit 60 s)", elapsed.as_secs_f64()),
    ))
}

fn adjoint_identity() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for name in ["flat", "conformal_flat", "non_kahler"] {
        let g = builtin_at(name, 32)?;
        let torsion = torsion_scalar(&g);
        for k in 0..20 {
            let u = random_band_limited(g.spec(), 300 + k, 2, 1.0)?;
            let rhs = &(&(&torsion * &u) - &hodge_laplacian(&g, &u)) - &complex_laplacian(&g, &u)?;
            worst = worst.max((&complex_laplacian_adjoint(&g, &u) - &rhs).sup_norm());
        }
    }
    Ok(Outcome::new(worst < 1e-8, format!("worst residual {worst:.2e} (tol 1e-8)")))
}

fn conformal_identities() -> Result<Outcome> {
    let mut boxed: f64 = 0.0;
    let mut adjoint: f64 = 0.0;
    for name in ["flat", "conformal_flat", "non_kahler"] {
        let g = builtin_at(name, 32)?;
        let n = g.dim() as f64;
        for k in 0..5 {
            let f = random_band_limited(g.spec(), 400 + k, 2, 0.3)?;
            let u = random_band_limited(g.spec(), 500 + k, 2, 1.0)?;
            let gf = g.conformal(&f)?;
            let weight = |e: f64| f.map(|v| (e * v).exp());
            let b = &complex_laplacian(&gf, &u)? - &(&weight(-1.0) * &complex_laplacian(&g, &u)?);
            boxed = boxed.max(b.sup_norm());
            let inside = &weight(n - 1.0) * &u;
            let a = &complex_laplacian_adjoint(&gf, &u) - &(&weight(-n) * &complex_laplacian_adjoint(&g, &inside));
            adjoint = adjoint.max(a.sup_norm());
        }
    }
    Ok(Outcome::new(boxed < 1e-8 && adjoint < 1e-8, format!("box {boxed:.2e}, adjoint {adjoint:.2e} (tol 1e-8)")))
}

fn gauduchon_solver() -> Result<Outcome> {
    let oscillation = |f: &ScalarField| f.max() - f.min();
    let flat = gauduchon_factor(&builtin("flat").realize()?, &cfg())?;
    let kahler = gauduchon_factor(&builtin("kahler").realize()?, &cfg())?;
    let constant = oscillation(&flat.factor).max(oscillation(&kahler.factor));

    let g = builtin("conformal_flat").realize()?;
    let conformal = distance_mod_constants(&gauduchon_factor(&g, &cfg())?.factor, &-&phi_field(g.spec()));

    let g = builtin("non_kahler").realize()?;
    let defect = verify_gauduchon(&gauduchon_factor(&g, &cfg())?.realize(&g)?);
    Ok(Outcome::new(
        constant < 1e-10 && conformal < 1e-7 && defect < 1e-8,
        format!(
            "flat/Kahler oscillation {constant:.2e} (tol 1e-10), conformally flat {conformal:.2e} (tol 1e-7), \
             non-Kahler defect {defect:.2e} (tol 1e-8)"
        ),
    ))
}

fn extremal_pipeline(start: Instant) -> Result<Outcome> {
    let g = builtin("conformal_flat").realize()?;
    let n = g.dim() as f64;
    let res = extremal_factor(&g, &cfg())?;
    let error = distance_mod_constants(&res.factor, &-&phi_field(g.spec()));
    let g_e = res.realize(&g)?;
    let energy = calabi_functional(&g_e, n)?;
    let (_, residual) = el_residual(&g_e, n)?;
    let elapsed = start.elapsed();
    Ok(Outcome::new(
        error < 1e-6 && energy < 1e-10 && residual < 1e-6 && elapsed < Duration::from_secs(60),
        format!(
            "factor error {error:.2e} (tol 1e-6), C_n {energy:.2e} (tol 1e-10), \
             Euler-Lagrange residual {residual:.2e} (tol 1e-6), {:.1} s (limit 60 s)",
            elapsed.as_secs_f64()
        ),
    ))
}

fn uniqueness() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for s in Scenario::builtins() {
        let g = s.realize()?;
        let a = extremal_factor(&g, &cfg())?;
        let b = extremal_factor(&g, &KrylovConfig { initial: InitialGuess::Random(s.seed + 17), ..cfg() })?;
        worst = worst.max(distance_mod_constants(&a.factor, &b.factor));
    }
    Ok(Outcome::new(worst < 1e-6, format!("largest difference modulo constants {worst:.2e} (tol 1e-6)")))
}

fn minimization() -> Result<Outcome> {
    let mut descent = f64::INFINITY;
    for s in Scenario::builtins() {
        let g = s.realize()?;
        let n = g.dim() as f64;
        let g_e = extremal_factor(&g, &cfg())?.realize(&g)?;
        let c_e = calabi_functional(&g_e, n)?;
        for k in 0..20 {
            let h = random_band_limited(g.spec(), 600 + k, band(g.spec()), 1.0)?;
            for eps in [1e-2, 1e-3] {
                descent = descent.min(calabi_functional(&g_e.conformal(&(&h * eps))?, n)? - c_e);
            }
        }
    }
    let mut convex = f64::INFINITY;
    for (_, g) in matrix_metrics()? {
        for k in 0..5 {
            let f = random_band_limited(g.spec(), 700 + k, band(g.spec()), DIRECTION_AMPLITUDE)?;
            for t in [0.0, 0.1] {
                convex = convex.min(second_variation(&g, &f, t)?);
            }
        }
    }
    Ok(Outcome::new(
        descent >= -1e-12 && convex >= -1e-12,
        format!("min C_n increase {descent:.2e}, min second variation {convex:.2e} (both >= -1e-12)"),
    ))
}

fn variation_formulas(start: Instant) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    let mut where_worst = String::new();
    let mut count = 0;
    for (name, g) in matrix_metrics()? {
        for k in 0..5 {
            let f = random_band_limited(g.spec(), 800 + k, band(g.spec()), DIRECTION_AMPLITUDE)?;
            for p in exponents(g.dim()) {
                for t in [0.0, 0.1] {
                    let r = variation_at(&g, &f, p, t)?;
                    count += 1;
                    if r.rel_error > worst {
                        worst = r.rel_error;
                        where_worst = format!("{name}, p = {p}, t = {t}");
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(Outcome::new(
        worst < 1e-6 && elapsed < Duration::from_secs(300),
        format!(
            "{count} cases, worst relative error {worst:.2e} at {where_worst} (tol 1e-6), {:.1} s (limit 300 s)",
            elapsed.as_secs_f64()
        ),
    ))
}

fn scale_invariance() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for (_, g) in matrix_metrics()? {
        for p in exponents(g.dim()) {
            let c = calabi_functional(&g, p)?;
            for lambda in [0.5, 2.0, 10.0] {
                worst = worst.max((calabi_functional(&g.scaled(lambda)?, p)? - c).abs() / c);
            }
        }
    }
    Ok(Outcome::new(worst < 1e-12, format!("worst relative deviation {worst:.2e} (tol 1e-12)")))
}

fn zero_branch() -> Result<Outcome> {
    let mut mean: f64 = 0.0;
    let mut total: f64 = 0.0;
    let mut sup_e: f64 = 0.0;
    let mut signs = Vec::new();
    for s in Scenario::builtins() {
        let g = s.realize()?;
        let g_g = gauduchon_factor(&g, &cfg())?.realize(&g)?;
        let s_g = chern_scalar(&g_g)?;
        mean = mean.max(mean_scalar(&g_g)?.abs() / s_g.sup_norm().max(1.0));
        let sign = classify_sign(&g, SIGN_TOL, &cfg())?;
        total = total.max(total_scalar(&g_g)?.abs() / sign.scale);
        signs.push(sign.sign);
        // the sign is a conformal invariant: a rescaled representative agrees
        let f = random_band_limited(g.spec(), 900, band(g.spec()), 0.3)?;
        signs.push(classify_sign(&g.conformal(&f)?, SIGN_TOL, &cfg())?.sign);
        let g_e = extremal_factor(&g, &cfg())?.realize(&g)?;
        sup_e = sup_e.max(chern_scalar(&g_e)?.sup_norm());
    }
    let all_zero = signs.iter().all(|&s| s == CurvatureSign::Zero);
    println!(
        "    note: only the zero branch is reachable on the flat torus, whose Gauduchon degree vanishes; \
         the positive and negative branches need manifolds of nonzero degree and are not exercised"
    );
    Ok(Outcome::new(
        mean < 1e-6 && total < 1e-6 && all_zero && sup_e < 1e-5,
        format!(
            "relative mean curvature {mean:.2e}, relative total curvature {total:.2e} (tol 1e-6), \
             all signs Zero: {all_zero}, sup |s_E| {sup_e:.2e} (tol 1e-5)"
        ),
    ))
}

fn identity_suite() -> Result<Outcome> {
    let g = builtin("non_kahler").realize()?;
    let g_g = gauduchon_factor(&g, &cfg())?.realize(&g)?;
    let mut worst: f64 = 0.0;
    let mut ps = vec![2.0, g.dim() as f64];
    ps.dedup();
    for p in ps {
        let r = integral_identities(&g_g, p)?;
        worst = worst.max(r.worst());
    }
    let w = volume_density(&g_g);
    let mut energy: f64 = 0.0;
    for k in 0..5 {
        let u = random_band_limited(g.spec(), 1100 + k, 2, 1.0)?;
        let pairing = inner(&u, &complex_laplacian(&g_g, &u)?, &w);
        let gradient = integrate(&gradient_norm_sq(&g_g, &u), &w);
        energy = energy.max((pairing + gradient).abs() / gradient);
    }
    Ok(Outcome::new(
        worst < 1e-7 && energy < 1e-7,
        format!("worst scaled decomposition defect {worst:.2e}, Gauduchon energy identity {energy:.2e} (tol 1e-7)"),
    ))
}

fn convergence_sweep() -> Result<Outcome> {
    let mut errors = Vec::new();
    for points in [8, 16, 32] {
        let g = builtin_at("conformal_flat", points)?;
        let res = extremal_factor(&g, &cfg())?;
        errors.push(distance_mod_constants(&res.factor, &-&phi_field(g.spec())));
    }
    let reduction = errors[0] / errors[2];
    Ok(Outcome::new(
        reduction >= 1e3,
        format!(
            "errors at N = 8, 16, 32: {:.2e}, {:.2e}, {:.2e}; reduction {reduction:.2e} (need >= 1e3)",
            errors[0], errors[1], errors[2]
        ),
    ))
}

type Criterion = fn(Instant) -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 12] = [
        ("conformal change of curvature against the full curvature tensor", conformal_curvature_oracle),
        ("adjoint decomposition of the complex Laplacian", |_| adjoint_identity()),
        ("conformal covariance of the Laplacian and its adjoint", |_| conformal_identities()),
        ("Gauduchon solver", |_| gauduchon_solver()),
        ("extremal pipeline on a conformally flat metric", extremal_pipeline),
        ("uniqueness across solver initializations", |_| uniqueness()),
        ("extremal metric minimizes the Calabi energy", |_| minimization()),
        ("first variation formulas against finite differences", variation_formulas),
        ("scale invariance of the Calabi functional", |_| scale_invariance()),
        ("zero-degree branch", |_| zero_branch()),
        ("integral identities on the Gauduchon representative", |_| identity_suite()),
        ("grid convergence of the extremal factor", |_| convergence_sweep()),
    ];
    // numeric arguments select criteria; libtest flags are ignored
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (k, (title, run)) in criteria.iter().enumerate() {
        let number = k + 1;
        if !selected.is_empty() && !selected.contains(&number) {
            continue;
        }
        let start = Instant::now();
        let (passed, detail) = match run(start) {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let mark = if passed { "PASS" } else { "FAIL" };
        println!("criterion {number:>2} [{mark}] {title}: {detail} [{:.1} s]", start.elapsed().as_secs_f64());
        failures += usize::from(!passed);
    }
    if failures == 0 {
        println!("acceptance: all selected criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
