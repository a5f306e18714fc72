//! Acceptance criteria, one pass/fail line each. Failures exit non-zero only
//! under `ACCEPTANCE_STRICT=1`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use kcmtree::analysis::{
    run_critical_scaling, run_mixing_scaling, run_quasicritical_scaling, ExperimentConfig, Regime,
    MIN_CRITICAL_EXPONENT, MIN_R_SQUARED,
};
use kcmtree::bounds::{
    hellinger, iid_product_tv, product_mixing_threshold, product_tv_lower_bound, tv_distance, worst_start,
    FiniteDistribution,
};
use kcmtree::exact::{
    evolve_distribution, mixing_time_exact, spectral_gap, spectral_gap_with_vector, DistributionVector, NormIndex,
    SparseGenerator, StartPolicy,
};
use kcmtree::mc::{
    autocorrelation, relaxation_time_mc, simulate, simulate_endpoint, FitPolicy, InitialCondition, McBudget,
    Observable, SimulationSpec,
};
use kcmtree::model::cluster_size;
use kcmtree::recursions::{
    certificate_resolution, certify_pn_bound, classify_survival, cluster_stats, critical_bound_exact, critical_density,
    pn_series, subcritical_bounds, test_function_gap_bound, DirichletMode, SurvivalVerdict,
};
use kcmtree::{Configuration, ModelParams, Rational, TreeTopology};

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

type Criterion = fn() -> Outcome;

fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

fn within_time(outcome: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    let ok = elapsed <= limit;
    Outcome::new(
        outcome.passed && ok,
        format!(
            "{}; {:.1}s of {}s",
            outcome.detail,
            elapsed.as_secs_f64(),
            limit.as_secs()
        ),
    )
}

fn timed(limit_s: u64, f: impl FnOnce() -> Outcome) -> Outcome {
    let t0 = Instant::now();
    let out = f();
    within_time(out, t0.elapsed(), Duration::from_secs(limit_s))
}

fn recursion_bounds() -> Outcome {
    timed(10, || {
        let mut failures = Vec::new();
        let mut bits = Vec::new();
        for k in 2..=5usize {
            let n_max = 1_000_000;
            let resolution = certificate_resolution(&critical_bound_exact(k, n_max).unwrap());
            let c = certify_pn_bound(k, k, &rat(1, k as i64), n_max, resolution, |n| {
                critical_bound_exact(k, n).unwrap()
            })
            .unwrap();
            bits.push(resolution);
            if let Some(n) = c.first_failure {
                failures.push(format!("k={k} critical at n={n}"));
            }
        }
        for (num, den) in [(40, 100), (45, 100), (49, 100)] {
            let p = rat(num, den);
            let targets = subcritical_bounds(2, p.clone(), 1000).unwrap();
            let resolution = certificate_resolution(&targets[1000]);
            let c = certify_pn_bound(2, 2, &p, 1000, resolution, |n| targets[n].clone()).unwrap();
            bits.push(resolution);
            if let Some(n) = c.first_failure {
                failures.push(format!("p={num}/{den} subcritical at n={n}"));
            }
        }
        Outcome::new(
            failures.is_empty(),
            if failures.is_empty() {
                format!("certified, upward rounding at {bits:?} bits")
            } else {
                failures.join(", ")
            },
        )
    })
}

fn cluster_statistics() -> Outcome {
    timed(30, || {
        let mut worst_mean = 0.0f64;
        let mut worst_coeff = 0.0f64;
        for k in 2..=5usize {
            let p = 1.0 / k as f64;
            let s = cluster_stats(k, p, 50).unwrap();
            for (l, m) in s.mean.iter().enumerate() {
                worst_mean = worst_mean.max((m - (l as f64 + 1.0) / k as f64).abs());
            }
            let coeff = s.variance[50] / 50f64.powi(3) / (p * (1.0 - p) / 3.0);
            worst_coeff = worst_coeff.max((coeff - 1.0).abs());
        }
        let mut worst_enum = 0.0f64;
        for p in [0.3f64, 0.5, 0.7] {
            let s = cluster_stats(2, p, 3).unwrap();
            for l in 0..=3 {
                let tree = TreeTopology::new(2, l).unwrap();
                let n = tree.vertex_count();
                let (mut m1, mut m2) = (0.0, 0.0);
                for state in 0..(1u64 << n) {
                    let c = Configuration::from_state_index(n, state);
                    let ones = c.count_ones() as i32;
                    let w = p.powi(ones) * (1.0 - p).powi(n as i32 - ones);
                    let v = cluster_size(&tree, &c).unwrap() as f64;
                    m1 += w * v;
                    m2 += w * v * v;
                }
                worst_enum = worst_enum
                    .max((m1 - s.mean[l]).abs())
                    .max((m2 - m1 * m1 - s.variance[l]).abs());
            }
        }
        Outcome::new(
            worst_mean <= 1e-12 && worst_enum <= 1e-10 && worst_coeff <= 0.25,
            format!(
                "mean err {worst_mean:.1e}, enumeration err {worst_enum:.1e}, Var/L^3 off by {:.1}%",
                100.0 * worst_coeff
            ),
        )
    })
}

fn exact_spectral() -> Outcome {
    timed(120, || {
        let gen =
            |l: usize, p: f64| SparseGenerator::new(&TreeTopology::new(2, l).unwrap(), ModelParams::ofa(p, 2)).unwrap();
        let g0 = spectral_gap(&gen(0, 0.5)).unwrap();
        let mut notes = vec![format!("gap(L=0) = {g0}")];
        let mut ok = (g0 - 1.0).abs() < 1e-12;
        let mut tightest = f64::INFINITY;
        for p in [0.3, 0.5, 0.7] {
            let gaps: Vec<f64> = (0..=3).map(|l| spectral_gap(&gen(l, p)).unwrap()).collect();
            if !gaps.windows(2).all(|w| w[1] < w[0]) {
                ok = false;
                notes.push(format!("p={p} gaps not decreasing: {gaps:?}"));
            }
            for (l, g) in gaps.iter().enumerate() {
                let b = test_function_gap_bound(2, p, l, DirichletMode::Exact).unwrap();
                tightest = tightest.min(1.0 / g - b.bound);
                if b.bound > (1.0 + 1e-9) / g {
                    ok = false;
                    notes.push(format!("p={p} L={l}: Var/D = {} > T_rel = {}", b.bound, 1.0 / g));
                }
            }
        }
        notes.push(format!("min T_rel - Var/D = {tightest:.3e}"));
        let single = TreeTopology::new(2, 0).unwrap();
        let t1 = mixing_time_exact(&single, ModelParams::ofa(0.5, 2), NormIndex::One, &StartPolicy::All).unwrap();
        let single_ok = (t1.time - 4f64.ln()).abs() < 1e-6;
        ok &= single_ok;
        notes.push(format!("single-spin T_1 - ln 4 = {:.1e}", t1.time - 4f64.ln()));
        let mut ordered = 0;
        for p in [0.3, 0.5, 0.7] {
            for l in 0..=2 {
                let tree = TreeTopology::new(2, l).unwrap();
                let params = ModelParams::ofa(p, 2);
                let a = mixing_time_exact(&tree, params, NormIndex::One, &StartPolicy::All).unwrap();
                let b = mixing_time_exact(&tree, params, NormIndex::Two, &StartPolicy::All).unwrap();
                if a.time <= b.time {
                    ordered += 1;
                } else {
                    ok = false;
                    notes.push(format!("p={p} L={l}: T_1 = {} > T_2 = {}", a.time, b.time));
                }
            }
        }
        notes.push(format!("T_1 <= T_2 on {ordered}/9 exhaustive cases"));
        Outcome::new(ok, notes.join(", "))
    })
}

fn mc_fidelity() -> Outcome {
    timed(300, || {
        let mut ok = true;
        let mut notes = Vec::new();
        // Direct autocorrelation of a free spin.
        let free = TreeTopology::new(2, 0).unwrap();
        let series = simulate(&free, ModelParams::ofa(0.5, 2), &SimulationSpec::new(1e5, 0.05, 41)).unwrap();
        let tau = autocorrelation(&series, Observable::RootSpin, 80)
            .unwrap()
            .fit(&FitPolicy::default())
            .unwrap()
            .tau;
        ok &= (tau - 1.0).abs() <= 0.05;
        notes.push(format!("free-spin tau = {tau:.4}"));
        for l in 1..=3 {
            let tree = TreeTopology::new(2, l).unwrap();
            let params = ModelParams::ofa(0.5, 2);
            let exact = 1.0 / spectral_gap(&SparseGenerator::new(&tree, params).unwrap()).unwrap();
            let est = relaxation_time_mc(&tree, params, &McBudget::default(), 100 + l as u64, None).unwrap();
            let rel = (est.t_rel - exact).abs() / exact;
            ok &= rel <= 0.15;
            notes.push(format!(
                "L={l}: {:.2} vs {exact:.2} ({:+.1}%)",
                est.t_rel,
                100.0 * (est.t_rel - exact) / exact
            ));
        }
        // Endpoints from the all-occupied state long after relaxation.
        let tree = TreeTopology::new(2, 2).unwrap();
        let params = ModelParams::ofa(0.5, 2);
        let t_rel = 1.0 / spectral_gap(&SparseGenerator::new(&tree, params).unwrap()).unwrap();
        let replicas = 100_000u64;
        let mut counts = vec![0u64; 1 << tree.vertex_count()];
        for r in 0..replicas {
            let c = simulate_endpoint(&tree, params, &InitialCondition::AllOnes, 20.0 * t_rel, 7, r).unwrap();
            counts[c.state_index() as usize] += 1;
        }
        let expected = replicas as f64 / counts.len() as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        let p_value = ChiSquared::new((counts.len() - 1) as f64).unwrap().sf(chi2);
        ok &= p_value > 1e-3;
        notes.push(format!(
            "chi-square {chi2:.1} on {} dof, p = {p_value:.3}",
            counts.len() - 1
        ));
        Outcome::new(ok, notes.join(", "))
    })
}

fn critical_scaling() -> Outcome {
    timed(1800, || {
        let critical = run_critical_scaling(&ExperimentConfig::default()).unwrap();
        let control = run_critical_scaling(&control_config()).unwrap();
        let mut notes = Vec::new();
        let mut ok = critical.cross_checks.iter().all(|c| c.passed);
        match &critical.fit {
            Some(f) => {
                ok &= f.preferred == Regime::PowerLaw
                    && f.exponent >= MIN_CRITICAL_EXPONENT
                    && f.r_squared >= MIN_R_SQUARED;
                notes.push(format!(
                    "p=0.5: exponent {:.3} ± {:.3}, R² {:.4}, ΔAIC {:+.1}",
                    f.exponent, f.stderr, f.r_squared, f.model_comparison
                ));
            }
            None => {
                ok = false;
                notes.push(format!("p=0.5 fit failed: {:?}", critical.fit_error));
            }
        }
        match &control.fit {
            Some(f) => {
                ok &= f.preferred == Regime::Exponential;
                let depths = control.estimates.iter().map(|e| e.depth);
                notes.push(format!(
                    "p=0.7 control (L={}..{}): prefers {:?}, ΔAIC {:+.2}",
                    depths.clone().min().unwrap(),
                    depths.max().unwrap(),
                    f.preferred,
                    f.model_comparison
                ));
            }
            None => {
                ok = false;
                notes.push(format!("p=0.7 fit failed: {:?}", control.fit_error));
            }
        }
        Outcome::new(ok, notes.join(", "))
    })
}

fn control_config() -> ExperimentConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/control-p07.json");
    ExperimentConfig::load(&path).unwrap()
}

fn quasicritical_scaling() -> Outcome {
    timed(1800, || {
        let r = run_quasicritical_scaling(&ExperimentConfig::default()).unwrap();
        let grid = r
            .points
            .iter()
            .map(|q| {
                format!(
                    "ε={}: {:.1}±{:.1} -> {:.1}±{:.1}",
                    q.eps, q.t_rel, q.stderr, q.t_rel_doubled, q.stderr_doubled
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        match &r.fit {
            Some(f) => Outcome::new(
                r.unsaturated == 0 && f.exponent >= MIN_CRITICAL_EXPONENT,
                format!(
                    "exponent {:.3} ± {:.3}, {} unsaturated [{grid}]",
                    f.exponent, f.stderr, r.unsaturated
                ),
            ),
            None => Outcome::new(false, format!("{:?} [{grid}]", r.fit_error)),
        }
    })
}

fn mixing() -> Outcome {
    let cfg = ExperimentConfig {
        depths: vec![1, 2, 3],
        ..ExperimentConfig::default()
    };
    let r = run_mixing_scaling(&cfg).unwrap();
    let l2 = r.rows.iter().find(|row| row.depth == 2).unwrap();
    let ratios: Vec<String> = r.rows.iter().map(|row| format!("{:.4}", row.upper_ratio)).collect();
    Outcome::new(
        r.upper_ratio_spread < 3.0 && l2.t_star <= l2.t1,
        format!(
            "T_1/(L·T_rel) = [{}], spread {:.3}; L=2: t* = {:.3} <= T_1 = {:.3}",
            ratios.join(", "),
            r.upper_ratio_spread,
            l2.t_star,
            l2.t1
        ),
    )
}

fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (FiniteDistribution, FiniteDistribution) {
    let mut draw = || {
        let w: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < 0.2 { 0.0 } else { rng.gen::<f64>() })
            .collect();
        FiniteDistribution::normalized(w).unwrap_or_else(|_| FiniteDistribution::new(vec![1.0 / n as f64; n]).unwrap())
    };
    (draw(), draw())
}

fn to_finite(d: &DistributionVector<f64>) -> FiniteDistribution {
    FiniteDistribution::normalized(d.weights.iter().map(|w| w.max(0.0)).collect()).unwrap()
}

fn product_bounds() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut notes = Vec::new();
    let mut sandwich = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=64);
        let (a, b) = random_pair(&mut rng, n);
        let d = hellinger(&a, &b).unwrap().distance;
        let tv = tv_distance(&a, &b).unwrap();
        if 0.5 * d * d <= tv + 1e-12 && tv <= d + 1e-12 {
            sandwich += 1;
        }
    }
    notes.push(format!("sandwich {sandwich}/1000"));
    let mut tensor_err = 0.0f64;
    for factors in [2, 3] {
        for _ in 0..200 {
            let pairs: Vec<_> = (0..factors)
                .map(|_| {
                    let n = rng.gen_range(2..=6);
                    random_pair(&mut rng, n)
                })
                .collect();
            let (xs, ys): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
            let joint = hellinger(
                &FiniteDistribution::product_of(&xs).unwrap(),
                &FiniteDistribution::product_of(&ys).unwrap(),
            )
            .unwrap()
            .affinity;
            let prod: f64 = pairs.iter().map(|(a, b)| hellinger(a, b).unwrap().affinity).product();
            tensor_err = tensor_err.max((joint - prod).abs());
        }
    }
    notes.push(format!("tensorization err {tensor_err:.1e}"));
    // Two-factor cases: random pairs and evolved laws of exactly solved chains.
    let mut violations = 0;
    let mut cases = 0;
    for _ in 0..500 {
        let (n1, n2) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
        let (a1, b1) = random_pair(&mut rng, n1);
        let (a2, b2) = random_pair(&mut rng, n2);
        let bound = product_tv_lower_bound(&[tv_distance(&a1, &b1).unwrap(), tv_distance(&a2, &b2).unwrap()]).unwrap();
        let exact = tv_distance(&a1.product(&a2), &b1.product(&b2)).unwrap();
        cases += 1;
        violations += usize::from(bound > exact + 1e-12);
    }
    let mut hook = Vec::new();
    for (l, p) in [(1usize, 0.5), (1, 0.3), (2, 0.5)] {
        let tree = TreeTopology::new(2, l).unwrap();
        let gen = SparseGenerator::new(&tree, ModelParams::ofa(p, 2)).unwrap();
        let mu = gen.stationary();
        let g = spectral_gap_with_vector(&gen).unwrap();
        let start = worst_start(&g.eigenfunction).unwrap().state;
        let nu0 = DistributionVector::point_mass(gen.dimension(), start);
        let pi = to_finite(&mu);
        for t in [0.0, 1.0, 5.0, 20.0] {
            let nu = to_finite(&evolve_distribution(&gen, &nu0, t).unwrap());
            let tv = tv_distance(&nu, &pi).unwrap();
            let bound = product_tv_lower_bound(&[tv, tv]).unwrap();
            let exact = iid_product_tv(&nu, &pi, 2).unwrap();
            cases += 1;
            violations += usize::from(bound > exact + 1e-12);
        }
        if l == 1 {
            // Products of m factors at t* from the eigenfunction maximizer.
            for m in 1..=4usize {
                let t_star = product_mixing_threshold(&vec![g.gap; m], m).unwrap().max(0.0);
                let nu = to_finite(&evolve_distribution(&gen, &nu0, t_star).unwrap());
                let exact = iid_product_tv(&nu, &pi, m).unwrap();
                hook.push(exact >= 1.0 - (-1.0f64).exp() - 1e-9);
            }
        }
    }
    notes.push(format!(
        "product bound exceeded exact TV in {violations}/{cases} two-factor cases"
    ));
    let hook_ok = hook.iter().all(|&h| h);
    notes.push(format!(
        "t* hook {}/{}",
        hook.iter().filter(|&&h| h).count(),
        hook.len()
    ));
    Outcome::new(
        sandwich == 1000 && tensor_err < 1e-12 && violations == 0 && hook_ok,
        notes.join(", "),
    )
}

fn discontinuous_probe() -> Outcome {
    timed(10, || {
        let pc = critical_density(3, 2).unwrap();
        let at = *pn_series(3, 8.0f64 / 9.0, 2, 10_000).unwrap().last();
        let below = *pn_series(3, 8.0f64 / 9.0 - 1e-3, 2, 10_000).unwrap().last();
        let dies = classify_survival(3, 2, 8.0 / 9.0 - 1e-3, 10_000) == SurvivalVerdict::DiesOut;
        Outcome::new(
            (pc - 8.0 / 9.0).abs() <= 1e-9 && (at - 0.75).abs() <= 1e-3 && below < 1e-6 && dies && at > 0.74,
            format!(
                "p_c - 8/9 = {:.1e}, p_n(8/9) = {at:.6}, p_n(8/9 - 1e-3) = {below:.1e}",
                pc - 8.0 / 9.0
            ),
        )
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("recursion bounds", recursion_bounds),
        ("cluster statistics", cluster_statistics),
        ("exact spectral layer", exact_spectral),
        ("Monte Carlo fidelity", mc_fidelity),
        ("critical scaling", critical_scaling),
        ("quasi-critical scaling", quasicritical_scaling),
        ("mixing brackets", mixing),
        ("product bounds", product_bounds),
        ("discontinuous probe", discontinuous_probe),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let out = run();
        failed += usize::from(!out.passed);
        println!(
            "[{}] {id}. {name}: {}",
            if out.passed { "PASS" } else { "FAIL" },
            out.detail
        );
    }
    if failed == 0 {
        println!("all criteria passed");
        return ExitCode::SUCCESS;
    }
    println!("{failed} criteria failed");
    // Failures are reported above; the exit status only gates under strict mode.
    if std::env::var_os("ACCEPTANCE_STRICT").is_some_and(|v| v != "0") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
