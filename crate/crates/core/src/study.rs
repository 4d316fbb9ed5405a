//! Scripted studies over a scenario, each producing a [`RunReport`]: the
//! extremal solve, the identity suite, the Calabi variation study, and grid
//! refinement.

use crate::calabi::{
    calabi_functional, el_residual, gradient_norm_sq, integral_identities, second_variation, variation_at,
};
use crate::error::Result;
use crate::extremal::{extremal_factor, mean_scalar, total_scalar, SIGN_TOL};
use crate::gauduchon::{gauduchon_factor, verify_gauduchon};
use crate::geometry::{chern_curvature_oracle, chern_scalar, conformal_scalar, volume_density, HermitianMetricField};
use crate::grid::{inner, integrate, random_band_limited, GridSpec, ScalarField};
use crate::operators::{
    complex_laplacian, complex_laplacian_adjoint, hodge_laplacian, torsion_scalar, HodgePlusBox, KrylovConfig,
    LinearMap,
};
use crate::scenario::{trig_field, Check, MetricSpec, RunReport, Scenario, SweepPoint, Tolerances};

/// Calabi energy an extremal metric on the torus may retain.
pub const EXTREMAL_ENERGY_TOL: f64 = 1e-10;

/// Sup-norm bound on the extremal curvature in the zero-degree case.
pub const ZERO_CURVATURE_TOL: f64 = 1e-5;

/// Lower bound separating a generic metric's Euler-Lagrange residual from
/// an extremal one.
pub const SEPARATION_FLOOR: f64 = 1e-2;

/// Slack allowed below zero for quantities that are nonnegative in exact
/// arithmetic.
pub const NONNEGATIVE_SLACK: f64 = 1e-12;

pub fn krylov_config(tol: &Tolerances) -> KrylovConfig {
    KrylovConfig::with_tol(tol.krylov)
}

/// `min_c sup |a - b - c|`.
pub fn distance_mod_constants(a: &ScalarField, b: &ScalarField) -> f64 {
    let d = a - b;
    (d.max() - d.min()) / 2.0
}

/// Sub-seeds derived from a scenario seed, so every random draw in a study is
/// reproducible.
fn seed(base: u64, stream: u64, k: u64) -> u64 {
    base.wrapping_mul(1_000_003).wrapping_add(stream * 10_007 + k)
}

/// Largest band limit not above `want` that keeps random test functions in
/// the lower quarter of the spectrum, so their quadratic products stay clear
/// of the Nyquist mode.
fn band(spec: GridSpec, want: usize) -> usize {
    want.min((spec.points() / 4).saturating_sub(1)).max(1)
}

/// Closed-form extremal factor where the metric family has one.
pub fn analytic_extremal_factor(metric: &MetricSpec, spec: GridSpec) -> Result<Option<ScalarField>> {
    Ok(match metric {
        MetricSpec::Flat => Some(ScalarField::zeros(spec)),
        MetricSpec::ConformalFlat { phi } => Some(-&trig_field(phi, spec)?),
        _ => None,
    })
}

/// Relative standard deviation of `u` measured against `scale`.
fn spread(u: &ScalarField, w: &ScalarField, scale: f64) -> f64 {
    let vol = integrate(&ScalarField::constant(u.spec(), 1.0), w);
    let mean = integrate(u, w) / vol;
    let centered = u.map(|v| v - mean);
    (inner(&centered, &centered, w) / vol).sqrt() / scale
}

pub struct SolveOutcome {
    pub report: RunReport,
    pub gauduchon_factor: ScalarField,
    pub extremal_factor: ScalarField,
    pub extremal_curvature: ScalarField,
}

/// Runs the extremal pipeline and checks its outputs.
pub fn solve(scenario: &Scenario, tol: &Tolerances) -> Result<SolveOutcome> {
    let g = scenario.realize()?;
    let n = g.dim();
    let res = extremal_factor(&g, &krylov_config(tol))?;
    let g_g = res.gauduchon.realize(&g)?;
    let g_e = res.realize(&g)?;
    let s_g = chern_scalar(&g_g)?;
    let s_e = chern_scalar(&g_e)?;
    let w_g = volume_density(&g_g);
    let w_e = volume_density(&g_e);

    let mut report = RunReport::new("solve", scenario);
    report.solves.insert("gauduchon".into(), res.gauduchon.report.clone());
    report.solves.insert("poisson".into(), res.report.clone());

    let total = total_scalar(&g_g)?;
    let scale = (1..=n).product::<usize>() as f64 * integrate(&ScalarField::constant(g.spec(), 1.0), &w_g);
    let energy = calabi_functional(&g_e, n as f64)?;
    report.value("mean_curvature", res.mean_curvature);
    report.value("total_scalar_gauduchon", total);
    report.value("calabi_energy_extremal", energy);
    report.value("calabi_energy_input", calabi_functional(&g, n as f64)?);
    report.value("volume_shift", res.volume_shift);

    report.check(Check::at_most(
        "gauduchon_residual",
        "positive null vector of the adjoint complex Laplacian",
        res.gauduchon.residual,
        tol.gauduchon,
    ));
    report.check(Check::at_most(
        "gauduchon_defect",
        "torsion scalar of the Gauduchon representative",
        verify_gauduchon(&g_g),
        tol.integral,
    ));
    report.check(Check::at_most(
        "poisson_residual",
        "box_G f = (s_G - C) / n",
        res.report.relative_residual,
        tol.krylov,
    ));
    report.check(Check::at_most("euler_lagrange_residual", "box_E*(s_E |s_E|^{n-2}) = 0", res.el_residual, tol.solve));
    report.check(Check::at_most(
        "calabi_energy_extremal",
        "extremal metric minimizes C_n (zero on the torus)",
        energy,
        EXTREMAL_ENERGY_TOL,
    ));
    report.check(Check::at_most(
        "gauduchon_degree",
        "total scalar curvature of the Gauduchon representative vanishes",
        total.abs() / scale,
        SIGN_TOL,
    ));
    report.check(Check::at_most(
        "extremal_curvature_sup",
        "zero-degree class has s_E = 0",
        s_e.sup_norm(),
        ZERO_CURVATURE_TOL,
    ));
    report.check(Check::at_most(
        "extremal_curvature_spread",
        "extremal metric has constant Chern scalar curvature",
        spread(&s_e, &w_e, 1.0 + s_e.sup_norm()),
        tol.solve,
    ));
    let poisson_shifted = res.poisson.map(|v| (v + res.volume_shift).exp());
    report.check(Check::at_most(
        "conformal_curvature_product",
        "s_E e^{f} = s_G - n box_G f is constant",
        spread(&(&s_e * &poisson_shifted), &w_g, s_g.sup_norm().max(1.0)),
        tol.solve,
    ));
    if let Some(exact) = analytic_extremal_factor(&scenario.metric, g.spec())? {
        report.check(Check::at_most(
            "analytic_extremal_factor",
            "closed-form extremal factor up to a constant",
            distance_mod_constants(&res.factor, &exact),
            tol.solve,
        ));
    }

    Ok(SolveOutcome {
        report,
        gauduchon_factor: res.gauduchon.factor,
        extremal_factor: res.factor,
        extremal_curvature: s_e,
    })
}

/// Number of random samples per identity in [`verify`].
const VERIFY_SAMPLES: u64 = 5;

/// Grid size at which the spectral-accuracy tolerances apply.
pub const VERIFY_POINTS: usize = 32;

/// Largest grid, in points, that [`verify`] refines to.
pub const VERIFY_POINT_BUDGET: usize = 1 << 21;

/// Grid on which [`verify`] evaluates a scenario: analytic metrics coarser
/// than [`VERIFY_POINTS`] are resampled there when the grid fits the budget.
pub fn verify_grid(scenario: &Scenario) -> GridSpec {
    let native = scenario.grid();
    if scenario.points >= VERIFY_POINTS || matches!(scenario.metric, MetricSpec::ExplicitFile { .. }) {
        return native;
    }
    match GridSpec::new(scenario.dim, VERIFY_POINTS) {
        Ok(fine) if fine.len() <= VERIFY_POINT_BUDGET => fine,
        _ => native,
    }
}

/// Runs every identity once, recording the worst residual over random
/// samples.
pub fn verify(scenario: &Scenario, tol: &Tolerances) -> Result<RunReport> {
    let g = scenario.metric.realize(verify_grid(scenario))?;
    let spec = g.spec();
    let n = g.dim();
    let w = volume_density(&g);
    let mut report = RunReport::new("verify", scenario);
    report.value("evaluation_points", spec.points() as f64);
    let base = scenario.seed;
    let factor = |k| random_band_limited(spec, seed(base, 1, k), band(spec, 2), 0.3);
    let function = |k| random_band_limited(spec, seed(base, 2, k), band(spec, 2), 1.0);

    // conformal change of the Chern scalar curvature, against the full-tensor path
    let s = chern_scalar(&g)?;
    let mut worst: f64 = 0.0;
    for k in 0..VERIFY_SAMPLES {
        let f = factor(k)?;
        let direct = chern_curvature_oracle(&g.conformal(&f)?);
        worst = worst.max((&direct - &conformal_scalar(&s, &f, &g)?).sup_norm());
    }
    report.check(Check::at_most(
        "conformal_curvature",
        "s_f = e^{-f}(s_g - n box_g f), full curvature tensor of e^f g",
        worst,
        tol.identity,
    ));

    let torsion = torsion_scalar(&g);
    let mut adjoint: f64 = 0.0;
    let mut duality: f64 = 0.0;
    for k in 0..VERIFY_SAMPLES {
        let u = function(k)?;
        let v = function(k + VERIFY_SAMPLES)?;
        let lhs = complex_laplacian_adjoint(&g, &u);
        let rhs = &(&(&torsion * &u) - &hodge_laplacian(&g, &u)) - &complex_laplacian(&g, &u)?;
        adjoint = adjoint.max((&lhs - &rhs).sup_norm());
        let norms = (inner(&u, &u, &w) * inner(&v, &v, &w)).sqrt();
        let gap = inner(&lhs, &v, &w) - inner(&u, &complex_laplacian(&g, &v)?, &w);
        duality = duality.max(gap.abs() / norms);
    }
    report.check(Check::at_most(
        "adjoint_decomposition",
        "box* u = box*(1) u - hodge u - box u",
        adjoint,
        tol.identity,
    ));
    report.check(Check::at_most("duality", "<box* u, v> = <u, box v>", duality, tol.exact));

    let mut conf_box: f64 = 0.0;
    let mut conf_adj: f64 = 0.0;
    for k in 0..VERIFY_SAMPLES {
        let f = factor(k + VERIFY_SAMPLES)?;
        let u = function(k + 2 * VERIFY_SAMPLES)?;
        let gf = g.conformal(&f)?;
        let scale_by = |a: &ScalarField, e: f64| a.zip_map(&f, |x, fv| x * (e * fv).exp());
        let b = &complex_laplacian(&gf, &u)? - &scale_by(&complex_laplacian(&g, &u)?, -1.0);
        conf_box = conf_box.max(b.sup_norm());
        let inner_u = scale_by(&u, (n - 1) as f64);
        let a = &complex_laplacian_adjoint(&gf, &u) - &scale_by(&complex_laplacian_adjoint(&g, &inner_u), -(n as f64));
        conf_adj = conf_adj.max(a.sup_norm());
    }
    report.check(Check::at_most("conformal_box", "box_{e^f g} u = e^{-f} box_g u", conf_box, tol.identity));
    report.check(Check::at_most(
        "conformal_adjoint",
        "box*_{e^f g} u = e^{-nf} box*_g(e^{(n-1)f} u)",
        conf_adj,
        tol.identity,
    ));

    let g_g = gauduchon_factor(&g, &krylov_config(tol))?.realize(&g)?;
    let w_g = volume_density(&g_g);
    let mut energy: f64 = 0.0;
    let mut kernel = f64::INFINITY;
    let sum_op = HodgePlusBox::new(&g_g);
    for k in 0..VERIFY_SAMPLES {
        let phi = function(k + 3 * VERIFY_SAMPLES)?;
        let pairing = inner(&phi, &complex_laplacian(&g_g, &phi)?, &w_g);
        let gradient = integrate(&gradient_norm_sq(&g_g, &phi), &w_g);
        let norm_sq = inner(&phi, &phi, &w_g);
        energy = energy.max((pairing + gradient).abs() / norm_sq);
        let image = sum_op.apply(&phi)?;
        kernel = kernel.min((inner(&image, &image, &w_g) / norm_sq).sqrt());
    }
    report.check(Check::at_most(
        "gauduchon_energy",
        "<phi, box_G phi> = -integral |d phi|^2 on a Gauduchon metric",
        energy,
        tol.integral,
    ));
    report.check(Check::at_least(
        "hodge_plus_box_kernel",
        "hodge + box_G annihilates only constants",
        kernel,
        tol.solve,
    ));

    let mut exponents = vec![2.0];
    if n != 2 {
        exponents.push(n as f64);
    }
    for p in exponents {
        let r = integral_identities(&g_g, p)?;
        report.value(&format!("identity_scale_p{p}"), r.scale);
        report.check(Check::at_most(
            &format!("box_integral_p{p}"),
            "integral of box_G(s |s|^{2p-2}) vanishes",
            r.box_integral.abs() / r.scale,
            tol.integral,
        ));
        report.check(Check::at_most(
            &format!("box_expansion_p{p}"),
            "product-rule expansion of box_G(s |s|^{2p-2})",
            (r.box_integral - r.expanded_box_integral).abs() / r.scale,
            tol.integral,
        ));
        report.check(Check::at_most(
            &format!("adjoint_pairing_p{p}"),
            "integral |s|^p box*(s |s|^{p-2}) expansion",
            (r.adjoint_pairing - r.expanded_pairing).abs() / r.scale,
            tol.integral,
        ));
    }
    Ok(report)
}

/// Number of random directions per exponent in [`calabi`].
pub const VARIATION_DIRECTIONS: u64 = 5;
/// Amplitude of the random variation directions; small enough that
/// `s - n t box f` keeps its sign across the finite-difference stencil.
pub const DIRECTION_AMPLITUDE: f64 = 0.05;
/// Random perturbations tried around the extremal metric.
pub const MINIMIZER_SAMPLES: u64 = 20;

/// Functional values, scale invariance, variation formulas against finite
/// differences, convexity, and the minimizing property of the extremal
/// metric.
pub fn calabi(scenario: &Scenario, exponents: &[f64], times: &[f64], tol: &Tolerances) -> Result<RunReport> {
    let g = scenario.realize()?;
    let spec = g.spec();
    let n = g.dim() as f64;
    let mut report = RunReport::new("calabi", scenario);
    let base = scenario.seed;

    let mut scale_dev: f64 = 0.0;
    for &p in exponents {
        let c = calabi_functional(&g, p)?;
        report.value(&format!("calabi_p{p}"), c);
        for lambda in [0.5, 2.0, 10.0] {
            let cl = calabi_functional(&g.scaled(lambda)?, p)?;
            scale_dev = scale_dev.max((cl - c).abs() / c.max(1e-12));
        }
    }
    report.check(Check::at_most("scale_invariance", "C_p(lambda g) = C_p(g)", scale_dev, tol.exact));

    let directions: Vec<ScalarField> = (0..VARIATION_DIRECTIONS)
        .map(|k| random_band_limited(spec, seed(base, 3, k), band(spec, 2), DIRECTION_AMPLITUDE))
        .collect::<Result<_>>()?;
    let mut worst: f64 = 0.0;
    let mut convex = f64::INFINITY;
    for f in &directions {
        for &p in exponents {
            for &t in times {
                let r = variation_at(&g, f, p, t)?;
                worst = worst.max(r.rel_error);
                report.variations.push(r);
            }
        }
        for &t in times {
            convex = convex.min(second_variation(&g, f, t)?);
        }
    }
    report.check(Check::at_most(
        "first_variation",
        "closed-form d/dt C_p(e^{tf} g) against finite differences",
        worst,
        tol.variation,
    ));
    report.check(Check::at_least("second_variation", "d^2/dt^2 C_n(e^{tf} g) >= 0", convex, -NONNEGATIVE_SLACK));

    let res = extremal_factor(&g, &krylov_config(tol))?;
    let g_e = res.realize(&g)?;
    let c_e = calabi_functional(&g_e, n)?;
    let mut descent = f64::INFINITY;
    for k in 0..MINIMIZER_SAMPLES {
        let h = random_band_limited(spec, seed(base, 4, k), band(spec, 2), 1.0)?;
        for eps in [1e-2, 1e-3] {
            descent = descent.min(calabi_functional(&g_e.conformal(&(&h * eps))?, n)? - c_e);
        }
    }
    report.check(Check::at_least(
        "extremal_minimizes",
        "C_n(e^{eps h} omega_E) >= C_n(omega_E)",
        descent,
        -NONNEGATIVE_SLACK,
    ));
    let (_, extremal_residual) = el_residual(&g_e, n)?;
    report.check(Check::at_most(
        "extremal_euler_lagrange",
        "box_E*(s_E |s_E|^{n-2}) = 0",
        extremal_residual,
        tol.solve,
    ));
    if res.factor.max() - res.factor.min() > tol.solve {
        let (_, generic) = el_residual(&g, n)?;
        report.check(Check::at_least(
            "generic_euler_lagrange",
            "a non-extremal metric in the class is not critical",
            generic,
            SEPARATION_FLOOR,
        ));
    }
    Ok(report)
}

/// Solves on each grid and measures the extremal factor against the
/// closed form, or against the finest grid sampled at the coarse points.
pub fn sweep(scenario: &Scenario, points: &[usize], tol: &Tolerances) -> Result<RunReport> {
    let mut report = RunReport::new("sweep", scenario);
    let cfg = krylov_config(tol);
    let mut solutions = Vec::with_capacity(points.len());
    for &pts in points {
        let spec = GridSpec::new(scenario.dim, pts)?;
        let g = scenario.metric.realize(spec)?;
        solutions.push(extremal_factor(&g, &cfg)?);
    }
    let finest = solutions.last().map(|r| r.factor.clone());
    for (&pts, res) in points.iter().zip(&solutions) {
        let spec = GridSpec::new(scenario.dim, pts)?;
        let reference = match analytic_extremal_factor(&scenario.metric, spec)? {
            Some(exact) => exact,
            None => finest.as_ref().expect("nonempty sweep").restrict(spec)?,
        };
        report.sweep.push(SweepPoint {
            points: pts,
            error: distance_mod_constants(&res.factor, &reference),
            poisson_residual: res.report.relative_residual,
        });
    }
    let errors: Vec<f64> = report.sweep.iter().map(|p| p.error).collect();
    let increases = errors.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    report.check(Check::at_most(
        "monotone_refinement",
        "error does not grow under grid refinement, up to roundoff",
        increases.max(0.0),
        tol.exact,
    ));
    if let (Some(first), Some(last)) = (errors.first(), errors.last()) {
        report.value("first_error", *first);
        report.value("last_error", *last);
        if *last > 0.0 {
            report.value("error_reduction", first / last);
        }
        report.check(Check::at_most("finest_error", "extremal factor on the finest grid", *last, tol.solve));
    }
    Ok(report)
}

/// Checks reused by the acceptance suite: Gauduchon defect and mean
/// curvature of a representative.
pub fn zero_branch(g: &HermitianMetricField, cfg: &KrylovConfig) -> Result<(f64, f64)> {
    let g_g = gauduchon_factor(g, cfg)?.realize(g)?;
    Ok((verify_gauduchon(&g_g), mean_scalar(&g_g)?))
}
