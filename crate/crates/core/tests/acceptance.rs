//! Acceptance criteria on the flat torus. Every criterion prints one
//! `[PRIMARY]` line; the binary fails if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specrecon::control::{project_onto_intersection, AlphaKey, Ellipsoid, InfluenceFunctional, QcqpOptions, QuadraticForm};
use specrecon::harness::{
    evaluate, make_functional, reconstruct, run_forward, sigma_table, Evaluation, ForwardArtifacts, Mode,
    Reconstruction, Scenario,
};
use specrecon::linalg::SymMatrix;
use specrecon::potential::SliceField;
use specrecon::slicing::{build_catalog, build_partition, slice_membership, CatalogSource, SliceVariant};
use specrecon::spectra::{approximation_residual, perturb, PotentialSpec, SpectralData};

// Golden values frozen from the first oracle run of the baseline scenarios.
const GOLDEN_METRIC_MAX: f64 = 3.704043;
const GOLDEN_Q_CONSTANT_MAX: f64 = 3.458651;
const GOLDEN_Q_NEAR_MAX: f64 = 0.007980;
/// Relative slack on golden comparisons; goldens are kept to six decimals.
const GOLDEN_SLACK: f64 = 1e-6;

const FORWARD_TOL: f64 = 1e-10;
const RESIDUAL_TOL: f64 = 1e-8;
const QCQP_TOL: f64 = 1e-8;
const C3_SPREAD: f64 = 0.2;
const BLIND_BUDGET: usize = 400;

fn constant_scenario() -> Scenario {
    Scenario {
        potential: PotentialSpec::constant(1.0),
        ..Scenario::default()
    }
}

fn baseline(eps: f64) -> Scenario {
    Scenario {
        potential: PotentialSpec::cos_x1(1.0, 0.3),
        eps,
        ..Scenario::default()
    }
}

struct Solved {
    forward: ForwardArtifacts,
}

fn constant_forward() -> &'static Solved {
    static CELL: OnceLock<Solved> = OnceLock::new();
    CELL.get_or_init(|| Solved {
        forward: run_forward(&constant_scenario()).expect("constant forward solve"),
    })
}

fn cosine_forward() -> &'static Solved {
    static CELL: OnceLock<Solved> = OnceLock::new();
    CELL.get_or_init(|| Solved {
        forward: run_forward(&baseline(0.3)).expect("cosine forward solve"),
    })
}

type Run = (Reconstruction, Evaluation);

/// Baseline oracle runs at ε ∈ {0.4, 0.3, 0.2} with the default radius R.
fn baseline_runs() -> &'static [Run] {
    static CELL: OnceLock<Vec<Run>> = OnceLock::new();
    CELL.get_or_init(|| {
        [0.4, 0.3, 0.2]
            .into_iter()
            .map(|eps| {
                let r = reconstruct(&baseline(eps), &cosine_forward().forward, None).expect("baseline run");
                let e = evaluate(&r).expect("baseline evaluation");
                (r, e)
            })
            .collect()
    })
}

fn verdict(id: u32, name: &str, pass: bool, detail: &str) -> bool {
    println!(
        "[PRIMARY] criterion {id} {name}: {} | {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

fn nonincreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] <= w[0])
}

fn within_golden(value: f64, golden: f64) -> bool {
    value <= golden * (1.0 + GOLDEN_SLACK)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ")
}

fn forward_exactness() -> bool {
    let t = Instant::now();
    let fwd = run_forward(&Scenario {
        modes: 4,
        ..constant_scenario()
    })
    .expect("forward");
    let seconds = t.elapsed().as_secs_f64();
    let sol = &fwd.solution;
    let h = fwd.manifold.spacing();
    let lambda2 = 1.0 + (2.0 - 2.0 * h.cos()) / (h * h);
    let phi_err = sol
        .mode(0)
        .iter()
        .map(|v| (v.abs() - 0.5 / PI).abs())
        .fold(0.0, f64::max);
    let l1 = (sol.eigenvalues()[0] - 1.0).abs();
    let l2 = (sol.eigenvalues()[1] - lambda2).abs();
    let pass = l1 <= FORWARD_TOL && phi_err <= FORWARD_TOL && l2 <= FORWARD_TOL && seconds < 30.0;
    verdict(
        1,
        "forward exactness",
        pass,
        &format!("|λ₁−1| = {l1:.2e}, |φ₁−1/2π| = {phi_err:.2e}, |λ₂−symbol| = {l2:.2e}, {seconds:.1} s"),
    )
}

fn residuals() -> bool {
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, s) in [("constant", constant_forward()), ("cosine", cosine_forward())] {
        let sol = &s.forward.solution;
        let ortho = sol.orthonormality_residual(200);
        let rayleigh = sol.rayleigh_residuals().into_iter().fold(0.0, f64::max);
        worst = worst.max(ortho).max(rayleigh);
        parts.push(format!("{name}: J = {}, orthonormality {ortho:.2e}, Rayleigh {rayleigh:.2e}", sol.len()));
    }
    verdict(2, "orthonormality and Rayleigh residuals", worst <= RESIDUAL_TOL, &parts.join("; "))
}

fn bit_identical(a: &SpectralData, b: &SpectralData) -> bool {
    let same = |x: &[f64], y: &[f64]| x.len() == y.len() && x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
    a.u_points() == b.u_points()
        && same(a.eigenvalues(), b.eigenvalues())
        && (0..a.mode_count()).all(|j| same(a.values(j), b.values(j)) && same(a.gradients(j), b.gradients(j)))
}

fn perturbation_contract() -> bool {
    let s = baseline(0.3);
    let exact = cosine_forward().forward.interior_data(&s).expect("interior data");
    let mut pass = bit_identical(&perturb(&exact, 0.0, 17).expect("δ = 0"), &exact);
    let mut parts = vec![format!("δ = 0 passthrough bit-identical: {pass}")];
    for delta in [1e-4, 1e-3, 1e-2] {
        let approx = perturb(&exact, delta, 17).expect("perturb");
        let res = approximation_residual(&exact, &approx, delta);
        let expected = ((1.0 / delta).floor() as usize).min(exact.mode_count());
        let ok = res.within(delta) && res.modes_checked == expected;
        pass &= ok;
        parts.push(format!(
            "δ = {delta:e}: {} modes, eigenvalue gap {:.2e}, C0,1 gap {:.2e}",
            res.modes_checked, res.eigenvalue_gap, res.c01_gap
        ));
    }
    verdict(3, "perturbation contract", pass, &parts.join("; "))
}

fn rotation(theta: f64) -> [[f64; 2]; 2] {
    [[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]
}

fn apply(r: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [r[0][0] * v[0] + r[0][1] * v[1], r[1][0] * v[0] + r[1][1] * v[1]]
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn random_form(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> QuadraticForm {
    let b: Vec<Vec<f64>> = (0..rank).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut data = vec![0.0; n * n];
    for c in 0..n {
        for r in 0..n {
            data[c * n + r] = b.iter().map(|v| v[r] * v[c]).sum();
        }
    }
    QuadraticForm::new(SymMatrix::from_col_major(n, data).expect("matrix")).expect("form")
}

fn qcqp() -> bool {
    let opts = QcqpOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 8;
    let energies: Vec<f64> = (1..=n).map(|j| j as f64).collect();
    let sets = vec![
        Ellipsoid::ball(n, 1.0),
        Ellipsoid::diagonal(&energies, 3.0),
        Ellipsoid::dense(&random_form(&mut rng, n, 3), 0.05),
        Ellipsoid::dense(&random_form(&mut rng, n, 5), 0.2),
    ];
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sol = project_onto_intersection(&u, &sets, &opts).expect("projection");
    let best = dist(&u, &sol.x);
    let feasible = |y: &[f64]| sets.iter().all(|s| s.value(y) <= s.cap());
    let mut beaten: f64 = 0.0;
    let mut tested = 0;
    while tested < 100 {
        let mut y: Vec<f64> = sol.x.iter().map(|x| x + 0.3 * rng.random_range(-1.0..1.0)).collect();
        while !feasible(&y) {
            y.iter_mut().for_each(|v| *v *= 0.9);
        }
        beaten = beaten.max(best - dist(&u, &y));
        tested += 1;
    }
    let mut closed: f64 = 0.0;
    // ball of radius 2: y/|y|·2
    let y = [3.0, 0.0, 0.0];
    let (x, _) = Ellipsoid::ball(3, 4.0).project(&y).expect("ball");
    closed = closed.max(dist(&x, &[2.0, 0.0, 0.0]));
    // x² + 4y² ≤ 1: axis points project to the vertices
    let diag = Ellipsoid::diagonal(&[1.0, 4.0], 1.0);
    for (p, v) in [([3.0, 0.0], [1.0, 0.0]), ([0.0, 2.0], [0.0, 0.5])] {
        let (x, _) = diag.project(&p).expect("ellipse");
        closed = closed.max(dist(&x, &v));
        let x = project_onto_intersection(&p, std::slice::from_ref(&diag), &opts).expect("ellipse").x;
        closed = closed.max(dist(&x, &v));
        // the same ellipse rotated by 30°
        let r = rotation(PI / 6.0);
        let m = [[r[0][0], r[1][0]], [r[0][1], r[1][1]]];
        let mut data = vec![0.0; 4];
        for c in 0..2 {
            for row in 0..2 {
                data[c * 2 + row] = (0..2).map(|k| r[row][k] * [1.0, 4.0][k] * m[k][c]).sum();
            }
        }
        let form = QuadraticForm::new(SymMatrix::from_col_major(2, data).expect("matrix")).expect("form");
        let rot = Ellipsoid::dense(&form, 1.0);
        let (x, _) = rot.project(&apply(&r, p)).expect("rotated ellipse");
        closed = closed.max(dist(&x, &apply(&r, v)));
    }
    let pass = beaten <= QCQP_TOL && closed <= QCQP_TOL;
    verdict(
        4,
        "QCQP optimality",
        pass,
        &format!("100 feasible points beat the minimizer by at most {beaten:.2e}; closed-form projection error {closed:.2e}"),
    )
}

fn base_for_seed(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2).map(|_| rng.random_range(0.0..2.0 * PI)).collect()
}

fn slicing_coverage() -> bool {
    let fwd = &cosine_forward().forward;
    let man = &fwd.manifold;
    let mut pass = true;
    let mut c3 = Vec::new();
    let mut parts = Vec::new();
    for seed in 0..4 {
        let s = Scenario {
            base: base_for_seed(seed),
            seed,
            ..baseline(0.3)
        };
        let r = reconstruct(&s, fwd, None).expect("reconstruction");
        let e = evaluate(&r).expect("evaluation");
        let part = &r.partition;
        let p = r.base;
        let mut bad = 0;
        for x in man.points().filter(|&x| man.distance(x, p) >= s.r0) {
            let hits = r
                .catalog
                .outer
                .iter()
                .filter(|c| slice_membership(part, &c.tau, SliceVariant::Star, x))
                .count();
            if hits != 1 {
                bad += 1;
            }
        }
        pass &= bad == 0 && e.empty_slices.is_empty();
        c3.push(e.c3(s.eps));
        parts.push(format!(
            "seed {seed}: p = ({:.3}, {:.3}), {} classes, {bad} points not in exactly one slice, C₃ = {:.3}",
            s.base[0],
            s.base[1],
            r.catalog.class_count(),
            e.c3(s.eps)
        ));
    }
    let mean = c3.iter().sum::<f64>() / c3.len() as f64;
    let spread = c3.iter().map(|c| (c / mean - 1.0).abs()).fold(0.0, f64::max);
    pass &= spread <= C3_SPREAD;
    parts.push(format!("C₃ spread ±{:.1}% around {mean:.3}", 100.0 * spread));
    verdict(5, "slicing coverage and proximity", pass, &parts.join("; "))
}

fn metric_fidelity() -> bool {
    let t = Instant::now();
    let fwd = &cosine_forward().forward;
    let runs = baseline_runs();
    let default_max: Vec<f64> = runs.iter().map(|(_, e)| e.metric.max).collect();
    let mut doubled = Vec::new();
    for eps in [0.4, 0.3, 0.2] {
        let s = Scenario {
            metric_radius: Some(2.0 * f64::powf(eps, 0.125)),
            ..baseline(eps)
        };
        let r = reconstruct(&s, fwd, None).expect("reconstruction");
        doubled.push(evaluate(&r).expect("evaluation").metric.max);
    }
    let seconds = t.elapsed().as_secs_f64();
    let golden = within_golden(default_max[1], GOLDEN_METRIC_MAX);
    let trend = nonincreasing(&default_max) && nonincreasing(&doubled);
    let means: Vec<f64> = runs.iter().map(|(_, e)| e.metric.mean).collect();
    verdict(
        6,
        "metric fidelity",
        golden && trend && seconds < 300.0,
        &format!(
            "max |d̂−d| over ε = 0.4, 0.3, 0.2: R = ε^(1/8) [{}], R = 2ε^(1/8) [{}]; golden {GOLDEN_METRIC_MAX:.6} met: {golden}; nonincreasing: {trend}; mean [{}]; {seconds:.0} s",
            fmt_list(&default_max),
            fmt_list(&doubled),
            fmt_list(&means)
        ),
    )
}

/// max over evaluable nodes of |Δ_X f − Δf| with f injected at the
/// corresponding points.
fn laplacian_error(run: &Run, f: &dyn Fn([f64; 2]) -> f64, lap: &dyn Fn([f64; 2]) -> f64) -> (f64, usize) {
    let (r, e) = run;
    let field = SliceField::new(r.estimate.params, &r.space, &r.integrals).expect("field");
    let offset = r.space.outer_offset();
    let man = &r.forward.manifold;
    let coords: Vec<[f64; 2]> = (0..field.len())
        .map(|c| man.coords(e.points[offset + c].expect("corresponding point")))
        .collect();
    let values: Vec<f64> = coords.iter().map(|&x| f(x)).collect();
    let params = r.estimate.params;
    let mut worst: f64 = 0.0;
    let mut nodes = 0;
    for (i, &x) in coords.iter().enumerate() {
        if !params.passes_choice_xi(field.base_distance(i)) {
            continue;
        }
        if let Ok(v) = field.graph_laplacian(i, params.rho2, Some(&values)) {
            worst = worst.max((v - lap(x)).abs());
            nodes += 1;
        }
    }
    (worst, nodes)
}

fn laplacian_consistency() -> bool {
    let runs = baseline_runs();
    type Field = (&'static str, fn([f64; 2]) -> f64, fn([f64; 2]) -> f64);
    let fields: [Field; 3] = [
        ("cos x1", |x| x[0].cos(), |x| -x[0].cos()),
        ("cos x2", |x| x[1].cos(), |x| -x[1].cos()),
        ("cos x1 cos x2", |x| x[0].cos() * x[1].cos(), |x| -2.0 * x[0].cos() * x[1].cos()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f, lap) in fields {
        let errs: Vec<(f64, usize)> = runs.iter().map(|run| laplacian_error(run, &f, &lap)).collect();
        let ok = errs[0].1 > 0 && errs[2].1 > 0 && errs[2].0 < errs[0].0;
        pass &= ok;
        parts.push(format!(
            "{name}: [{}] on [{}] nodes",
            fmt_list(&errs.iter().map(|e| e.0).collect::<Vec<_>>()),
            errs.iter().map(|e| e.1.to_string()).collect::<Vec<_>>().join(", ")
        ));
    }
    let (constant, nodes) = runs
        .iter()
        .map(|run| laplacian_error(run, &|_| 2.5, &|_| 0.0))
        .fold((0.0f64, 0), |a, b| (a.0.max(b.0), a.1 + b.1));
    pass &= constant <= 1e-8 && nodes > 0;
    parts.push(format!("constant field: {constant:.2e}"));
    verdict(7, "graph Laplacian consistency", pass, &parts.join("; "))
}

fn potential_recovery() -> bool {
    let cs = constant_scenario();
    let r = reconstruct(&cs, &constant_forward().forward, None).expect("constant run");
    let e = evaluate(&r).expect("constant evaluation");
    let q_const = e.q_far_max.unwrap_or(f64::INFINITY);
    let runs = baseline_runs();
    let far: Vec<f64> = runs.iter().map(|(_, e)| e.q_far_max.unwrap_or(f64::INFINITY)).collect();
    let near = runs[2].1.q_near_max.unwrap_or(f64::INFINITY);
    let overlap = &runs[1].1.overlap;
    let checks = [
        within_golden(q_const, GOLDEN_Q_CONSTANT_MAX),
        nonincreasing(&far),
        within_golden(near, GOLDEN_Q_NEAR_MAX),
        overlap.holds,
    ];
    verdict(
        8,
        "potential recovery",
        checks.iter().all(|&c| c),
        &format!(
            "q ≡ 1: sup |q̂_i − 1| = {q_const:.6} (golden {GOLDEN_Q_CONSTANT_MAX:.6}); cosine sup error over ε = 0.4, 0.3, 0.2: [{}] nonincreasing: {}; near field at ε = 0.2: {near:.6} (golden {GOLDEN_Q_NEAR_MAX:.6}); overlap gap {:.4} vs allowance {:.4} on {} points",
            fmt_list(&far),
            checks[1],
            overlap.max_gap,
            overlap.allowance,
            overlap.points
        ),
    )
}

fn blind_vs_oracle() -> bool {
    let t = Instant::now();
    let fwd = &cosine_forward().forward;
    let s = Scenario {
        mode: Mode::Blind,
        budget: BLIND_BUDGET,
        ..baseline(0.3)
    };
    let data = Arc::new(fwd.interior_data(&s).expect("data"));
    let p = fwd.base_point(&s);
    let part = build_partition(&fwd.manifold, p, s.r0, s.eps, s.r_l(), s.smallness).expect("partition");
    let sigma = s.sigma(part.anchor_count());
    let func = Arc::new(make_functional(&s, fwd, &data, &part, sigma).expect("functional"));
    let c1 = specrecon::spectra::estimate_c1(&data).expect("c1");
    let catalog = build_catalog(
        &part,
        c1,
        &CatalogSource::Blind {
            functional: func.clone(),
            budget: s.budget,
        },
    );
    let table = sigma_table(&func, fwd).expect("sigma table");
    let within = table.iter().filter(|r| (r.blind - r.oracle).abs() <= r.sigma).count();
    let worst = table.iter().map(|r| (r.blind - r.oracle).abs()).fold(0.0, f64::max);
    let sigma_max = table.iter().map(|r| r.sigma).fold(0.0, f64::max);
    let agree = !table.is_empty() && within == table.len();
    let end_to_end = match &catalog {
        Ok(cat) => {
            let oracle = &baseline_runs()[1];
            let r = reconstruct(&s, fwd, None);
            match r.and_then(|r| evaluate(&r).map(|e| (r, e))) {
                Ok((_, e)) => {
                    let limit = 2.0 * oracle.1.q_far_max.unwrap_or(f64::NAN);
                    let ok = e.q_far_max.is_some_and(|q| q <= limit);
                    format!("{} classes; blind q̂ error {:?} vs limit {limit:.4}: {ok}", cat.class_count(), e.q_far_max)
                }
                Err(err) => format!("pipeline failed: {err}"),
            }
        }
        Err(err) => format!("catalog failed: {err}"),
    };
    let e2e_ok = end_to_end.ends_with(": true");
    let seconds = t.elapsed().as_secs_f64();
    verdict(
        9,
        "blind vs oracle",
        agree && e2e_ok && seconds < 1800.0,
        &format!(
            "σ target {sigma:.2e}; {within}/{} blind 𝓛ᵃ(M_α) within achieved σ (max |blind − oracle| {worst:.4}, max achieved σ {sigma_max:.4}); end to end: {end_to_end}; {seconds:.0} s",
            table.len()
        ),
    )
}

fn rotation_robustness() -> bool {
    let base = &cosine_forward().forward;
    let rotated = ForwardArtifacts {
        solution: Arc::new(base.solution.with_random_cluster_rotation(29)),
        ..base.clone()
    };
    let clusters = base.solution.clusters().iter().filter(|c| c.len() > 1).count();
    let s = baseline(0.3);
    let a = &baseline_runs()[1].0;
    let b = reconstruct(&s, &rotated, None).expect("rotated run");
    let budget = a.sigma.max(b.sigma);
    let d_hat = if a.space.labels == b.space.labels {
        a.space.dist.iter().zip(&b.space.dist).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let mut q_hat: f64 = 0.0;
    for (x, y) in a.estimate.slices.iter().zip(&b.estimate.slices) {
        q_hat = q_hat.max(match (x.q_hat, y.q_hat) {
            (Some(p), Some(q)) => (p - q).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        });
    }
    for (x, y) in a.estimate.near.iter().zip(&b.estimate.near) {
        q_hat = q_hat.max((x.q_hat - y.q_hat).abs());
    }
    // blind values for a few sets, reported alongside
    let blind_sample = {
        let sb = Scenario {
            mode: Mode::Blind,
            ..s.clone()
        };
        let mut worst: f64 = 0.0;
        let part = &a.partition;
        let sigma = sb.sigma(part.anchor_count());
        let funcs: Vec<InfluenceFunctional> = [base, &rotated]
            .iter()
            .map(|f| {
                let data = Arc::new(f.interior_data(&sb).expect("data"));
                make_functional(&sb, f, &data, part, sigma).expect("functional")
            })
            .collect();
        for k in 0..4 {
            let key = AlphaKey::new([(k, 1.0 + 0.5 * k as f64)]).expect("key");
            let v: Vec<f64> = funcs.iter().map(|f| f.value(&key).expect("value")).collect();
            worst = worst.max((v[0] - v[1]).abs());
        }
        format!("blind 𝓛ᵃ on 4 sets changes by at most {worst:.2e} (σ target {sigma:.2e})")
    };
    verdict(
        10,
        "basis-ambiguity robustness",
        d_hat <= budget && q_hat <= budget,
        &format!(
            "{clusters} multi-mode clusters rotated; max |Δd̂| = {d_hat:.2e}, max |Δq̂| = {q_hat:.2e}, σ budget {budget:.2e}; {blind_sample}"
        ),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(u32, fn() -> bool); 10] = [
        (1, forward_exactness),
        (2, residuals),
        (3, perturbation_contract),
        (4, qcqp),
        (5, slicing_coverage),
        (6, metric_fidelity),
        (7, laplacian_consistency),
        (8, potential_recovery),
        (9, blind_vs_oracle),
        (10, rotation_robustness),
    ];
    let mut failed = Vec::new();
    for (id, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == &id.to_string()) {
            continue;
        }
        let ok = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| verdict(id, "", false, "panicked"));
        if !ok {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
