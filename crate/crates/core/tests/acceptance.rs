//! Acceptance criteria, one line of output per criterion. Exits nonzero if
//! any criterion fails or overruns its time budget.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use penselect::bounds::{
    chaining_h, covering_bound, oracle_constant, packing_check, phi, truncated_moment_bound, ChainingParams,
};
use penselect::harness::{default_suite, run_experiment_with_threads, suite_csv, ExperimentConfig, Report};
use penselect::linspace::{projector_distance, Subspace};
use penselect::models::{
    histogram_space, piecewise_poly_space, trig_space, Family, ModelCollection, ModelSpec, Partition, Shape,
};
use penselect::noise::{default_families, NoiseSpec, DEFAULT_GRID_POINTS};
use penselect::KAPPA;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn config(value: serde_json::Value) -> ExperimentConfig {
    ExperimentConfig::from_json(&value.to_string()).expect("valid config")
}

fn run(cfg: &ExperimentConfig) -> std::result::Result<Report, String> {
    run_experiment_with_threads(cfg, None).map_err(|e| e.to_string())
}

/// Random partition of `{1..n}` with block sizes in `[min, max]` (the last
/// block is merged into its neighbour when it would be too small).
fn random_partition(rng: &mut ChaCha8Rng, n: usize, min: usize, max: usize) -> Partition {
    let mut blocks = Vec::new();
    let mut lo = 1;
    while lo <= n {
        let size = rng.random_range(min..=max);
        let hi = (lo + size - 1).min(n);
        if hi - lo + 1 < min && !blocks.is_empty() {
            let (plo, _) = blocks.pop().unwrap();
            blocks.push((plo, n));
            break;
        }
        blocks.push((lo, hi));
        lo = hi + 1;
    }
    Partition::new(n, &blocks).expect("valid partition")
}

fn random_subset(rng: &mut ChaCha8Rng, size: usize) -> Vec<usize> {
    loop {
        let s: Vec<usize> = (0..size).filter(|_| rng.random_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn criterion_1() -> Outcome {
    ensure(oracle_constant(2.0) == Ok(10.0), || "C(2) != 10".into())?;
    ensure(KAPPA == 18.0, || "κ != 18".into())?;
    let mut worst_v = 0.0_f64;
    let mut worst_b = 0.0_f64;
    for d in 1..=50 {
        let hv = chaining_h(&ChainingParams::new(1.0, 0.0, d));
        let hb = chaining_h(&ChainingParams::new(0.0, 1.0, d));
        ensure(hv < 14.0 * (d as f64).sqrt(), || format!("H(D={d}, v=1) = {hv} ≥ 14√D"))?;
        ensure(hb < 18.0 * d as f64, || format!("H(D={d}, b=1) = {hb} ≥ 18D"))?;
        worst_v = worst_v.max(hv / (14.0 * (d as f64).sqrt()));
        worst_b = worst_b.max(hb / (18.0 * d as f64));
    }
    Ok(format!("max H/14√D = {worst_v:.4}, max H/18D = {worst_b:.6}"))
}

fn monomial_space(p: &Partition, d: usize) -> Subspace {
    let n = p.n();
    let mut cols = Vec::new();
    for (lo, hi) in p.blocks() {
        let center = (lo + hi) as f64 / 2.0;
        let half = ((hi - lo) as f64 / 2.0).max(1.0);
        for k in 0..=d {
            let mut v = vec![0.0; n];
            for i in lo..=hi {
                v[i - 1] = ((i as f64 - center) / half).powi(k as i32);
            }
            cols.push(v);
        }
    }
    Subspace::span(&cols).expect("monomials span")
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_gram = 0.0_f64;
    let mut worst_proj = 0.0_f64;
    for k in 0..200 {
        match k % 3 {
            0 => {
                let n = rng.random_range(2..=1024);
                let p = random_partition(&mut rng, n, 1, 64);
                worst_gram = worst_gram.max(histogram_space(&p).map_err(|e| e.to_string())?.basis().gram_deviation());
            }
            1 => {
                let n = rng.random_range(8..=256);
                let d = rng.random_range(0..=3);
                let p = random_partition(&mut rng, n, d + 1, d + 40);
                let s = piecewise_poly_space(&p, d).map_err(|e| e.to_string())?;
                worst_gram = worst_gram.max(s.basis().gram_deviation());
                let dist = projector_distance(&s, &monomial_space(&p, d)).map_err(|e| e.to_string())?;
                worst_proj = worst_proj.max(dist);
            }
            _ => {
                let n = rng.random_range(8..=1024);
                let dbar = rng.random_range(1..=10usize.min((n - 1) / 2));
                let subset = random_subset(&mut rng, 2 * dbar + 1);
                let s = trig_space(&subset, n, dbar).map_err(|e| e.to_string())?;
                worst_gram = worst_gram.max(s.basis().gram_deviation());
            }
        }
    }
    ensure(worst_gram <= 1e-10, || format!("max |BᵀB − I| = {worst_gram:e}"))?;
    ensure(worst_proj <= 1e-8, || format!("max projector difference = {worst_proj:e}"))?;
    Ok(format!("max |BᵀB − I| = {worst_gram:.2e}, max |P_cheb − P_mono| = {worst_proj:.2e}"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_id = 0.0_f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=512);
        let p = random_partition(&mut rng, n, 1, 40);
        let s = histogram_space(&p).map_err(|e| e.to_string())?;
        let e2 = (s.lambda2().powi(2) - 1.0 / p.min_block_size() as f64).abs();
        let einf = (s.lambda_inf() - 1.0).abs();
        worst_id = worst_id.max(e2).max(einf);
    }
    ensure(worst_id <= 1e-12, || format!("histogram identity error {worst_id:e}"))?;

    let mut worst_ratio = 0.0_f64;
    for k in 0..100 {
        let (n, family, shape) = match k % 3 {
            0 => {
                let n = rng.random_range(2..=512);
                (n, Family::Histogram, Shape::Partition(random_partition(&mut rng, n, 1, 40)))
            }
            1 => {
                let n = rng.random_range(8..=256);
                let d = rng.random_range(0..=3);
                let p = random_partition(&mut rng, n, d + 1, d + 40);
                (n, Family::PiecewisePoly { d }, Shape::Partition(p))
            }
            _ => {
                let n = rng.random_range(8..=512);
                let dbar = rng.random_range(1..=8usize.min((n - 1) / 2));
                let s = random_subset(&mut rng, 2 * dbar + 1);
                (n, Family::Trig { dbar }, Shape::Subset(s))
            }
        };
        let coll = ModelCollection::new(n, family, vec![ModelSpec { id: "m".into(), shape, delta: 1.0 }])
            .map_err(|e| e.to_string())?;
        let s = coll.space(0).map_err(|e| e.to_string())?.expect("nonempty");
        let (b2, binf) = coll.structural_bounds(0);
        let l2sq = s.lambda2().powi(2);
        let linf = s.lambda_inf();
        ensure(l2sq <= b2 * (1.0 + 1e-12) && linf <= binf * (1.0 + 1e-12), || {
            format!("{family:?} n={n}: exact ({l2sq}, {linf}) above structural ({b2}, {binf})")
        })?;
        worst_ratio = worst_ratio.max(l2sq / b2).max(linf / binf);
    }
    Ok(format!("identity error {worst_id:.1e}, max exact/structural = {worst_ratio:.3}"))
}

fn criterion_4() -> Outcome {
    let mut parts = Vec::new();
    for (k, fam) in default_families().into_iter().enumerate() {
        let spec = NoiseSpec::new(fam).map_err(|e| e.to_string())?;
        let cert = spec.verify_subgamma(DEFAULT_GRID_POINTS);
        ensure(cert.ok, || format!("{}: margin {:e}", fam.name(), cert.worst_margin))?;
        let lambda = spec.mgf_check_lambda();
        let (emp, se) = spec.empirical_log_mgf(lambda, 1_000_000, 400 + k as u64);
        let exact = spec.log_laplace(lambda).map_err(|e| e.to_string())?;
        let z = (emp - exact).abs() / se;
        ensure(z <= 3.0, || format!("{}: empirical log-MGF off by {z:.2} stderr", fam.name()))?;
        parts.push(format!("{} {:.2}σ", fam.name(), z));
    }
    Ok(parts.join(", "))
}

fn criterion_5() -> Outcome {
    let mut parts = Vec::new();
    for (fam, params) in [("centered_poisson", json!({"mu": 3.0})), ("scaled_rademacher", json!({"a": 2.0}))] {
        let cfg = config(json!({
            "kind": "verify_noise", "n": 100, "trials": 100000, "seed": 5,
            "noise": {"family": fam, "params": params}, "u_grid": [1.0, 2.0], "mgf_samples": 1000,
        }));
        let r = run(&cfg)?;
        for rec in r.records.iter().filter(|r| r.experiment == "bernstein") {
            ensure(rec.pass, || format!("{fam} u={:?}: {} > {} + 3·{}", rec.u, rec.empirical, rec.bound, rec.stderr))?;
            parts.push(format!("{fam} u={}: {:.4} ≤ {:.4}", rec.u.unwrap(), rec.empirical, rec.bound));
        }
    }
    ensure(parts.len() == 4, || "missing Bernstein records".into())?;
    Ok(parts.join(", "))
}

fn criterion_6() -> Outcome {
    let mut checked = 0;
    let mut max_emp = 0.0_f64;
    for (fam, params) in [("gaussian", json!({"sd": 1.0})), ("centered_poisson", json!({"mu": 3.0}))] {
        let cfg = config(json!({
            "kind": "deviation_chi", "n": 256, "trials": 100000, "seed": 6,
            "noise": {"family": fam, "params": params},
            "collection": {"family": "histogram", "generator": "regular", "blocks": [1, 4, 16]},
        }));
        let r = run(&cfg)?;
        for rec in r.records.iter().filter(|r| r.experiment == "chi2_joint" || r.experiment == "sup_norm_tail") {
            ensure(rec.pass, || format!("{fam} {rec:?}"))?;
            if rec.experiment == "chi2_joint" {
                max_emp = max_emp.max(rec.empirical);
            }
            checked += 1;
        }
    }
    // 3 dimensions × 3 u × (4 x + 1)
    ensure(checked == 2 * 3 * 3 * 5, || format!("only {checked} grid points"))?;
    Ok(format!("{checked} grid points, max joint-event frequency {max_emp}"))
}

fn criterion_7() -> Outcome {
    let sigma = 0.1;
    let cfg = config(json!({
        "kind": "oracle", "n": 256, "trials": 1000, "seed": 7,
        "noise": {"family": "gaussian", "params": {"sd": sigma}},
        "collection": {"family": "histogram", "generator": "dyadic", "min_block": 8},
        "penalty": {"mode": "general", "K": 2.0},
        "signal": {"type": "step"},
    }));
    let r = run(&cfg)?;
    let mean = r.details["risk_mean"].as_f64().ok_or("no risk")?;
    let se = r.details["risk_stderr"].as_f64().ok_or("no stderr")?;

    // bound recomputed from the collection: pen = Kκ²σ²(D_m + Δ_m)
    let coll = ModelCollection::dyadic(256, Family::Histogram, 8).map_err(|e| e.to_string())?;
    let f: Vec<f64> = (1..=256).map(|i| if i <= 128 { 0.0 } else { 1.0 }).collect();
    let bias = coll.residuals(&f).map_err(|e| e.to_string())?;
    let s2 = sigma * sigma;
    let mut inf = f64::INFINITY;
    let mut total_weight = 0.0;
    for (i, m) in coll.models().iter().enumerate() {
        let dm = coll.dim(i) as f64;
        inf = inf.min(bias[i] + s2 * dm + 2.0 * 324.0 * s2 * (dm + m.delta));
        total_weight += (-m.delta).exp();
    }
    let bound = 10.0 * (inf + 324.0 * s2 * total_weight);
    ensure(mean <= bound + 3.0 * se, || format!("risk {mean} > {bound} + 3·{se}"))?;
    ensure(r.all_pass, || "report has a failing record".into())?;
    let frac = r.details["refines_jumps_fraction"].as_f64().ok_or("no concentration")?;
    ensure(frac >= 0.95, || format!("only {frac} of trials refine the jump"))?;
    Ok(format!(
        "risk {mean:.4} ± {se:.4} ≤ {bound:.2} (|ℳ| = {}), refining jump in {:.1}%",
        coll.len(),
        100.0 * frac
    ))
}

fn criterion_8() -> Outcome {
    let mut parts = Vec::new();
    for d in 1..=3 {
        for delta in [0.25, 0.5, 1.0] {
            let r = packing_check(d, delta, 100_000, 8).map_err(|e| e.to_string())?;
            let bound = covering_bound(d, delta).map_err(|e| e.to_string())?;
            ensure(r.ok && r.found_size as f64 <= bound, || format!("D={d} δ={delta}: {r:?}"))?;
            parts.push(format!("{}/{}", r.found_size, bound));
        }
    }
    Ok(format!("found/bound: {}", parts.join(" ")))
}

/// `E[X² 1{X ≥ x0}]` for `P(X ≥ x) = min(1, e^{−φ(x)})` by composite Simpson.
fn truncated_second_moment(alpha: f64, beta: f64, x0: f64) -> f64 {
    let target = phi(alpha, beta, x0) + 60.0;
    let upper = target * beta + (target * target * beta * beta + 2.0 * target * alpha).sqrt();
    let steps = 400_000;
    let h = (upper - x0) / steps as f64;
    let g = |x: f64| 2.0 * x * (-phi(alpha, beta, x)).exp();
    let mut sum = g(x0) + g(upper);
    for i in 1..steps {
        let x = x0 + i as f64 * h;
        sum += if i % 2 == 1 { 4.0 * g(x) } else { 2.0 * g(x) };
    }
    x0 * x0 * (-phi(alpha, beta, x0)).exp() + sum * h / 3.0
}

fn criterion_9() -> Outcome {
    let mut worst = 0.0_f64;
    let mut count = 0;
    for alpha in [0.5, 1.0, 2.0, 4.0, 8.0_f64] {
        for beta in [0.0, 1.0_f64] {
            for level in [1.0, 3.0_f64] {
                // φ(x0) = level
                let x0 = level * beta + (level * level * beta * beta + 2.0 * level * alpha).sqrt();
                let exact = truncated_second_moment(alpha, beta, x0);
                let bound = truncated_moment_bound(1.0, alpha, beta, x0 * (1.0 + 1e-12), 2).map_err(|e| e.to_string())?;
                ensure(exact <= bound, || format!("α={alpha} β={beta} x0={x0}: {exact} > {bound}"))?;
                worst = worst.max(exact / bound);
                count += 1;
            }
        }
    }
    Ok(format!("{count} combinations, max quadrature/bound = {worst:.4}"))
}

fn criterion_10() -> Outcome {
    let suite = default_suite();
    let run_all = |threads: Option<usize>| -> std::result::Result<String, String> {
        let reports: Vec<Report> = suite
            .iter()
            .map(|c| run_experiment_with_threads(c, threads).map_err(|e| e.to_string()))
            .collect::<std::result::Result<_, _>>()?;
        if let Some(r) = reports.iter().find(|r| !r.all_pass) {
            return Err(format!("default experiment {} failed", r.name));
        }
        Ok(suite_csv(&reports))
    };
    let a = run_all(None)?;
    let b = run_all(None)?;
    ensure(a == b, || "two runs with the same seed differ".into())?;
    let one = run_all(Some(1))?;
    let four = run_all(Some(4))?;
    ensure(one == four, || "1-thread and 4-thread CSV differ".into())?;
    ensure(one == a, || "thread override changed the CSV".into())?;
    Ok(format!("{} experiments, {} CSV rows identical across runs and thread counts", suite.len(), a.lines().count() - 1))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("exact constants", Duration::from_secs(1), criterion_1),
        ("basis correctness", Duration::from_secs(30), criterion_2),
        ("lambda identities and bounds", Duration::from_secs(30), criterion_3),
        ("noise certification", Duration::from_secs(60), criterion_4),
        ("Bernstein Monte Carlo", Duration::from_secs(60), criterion_5),
        ("chi-square deviation Monte Carlo", Duration::from_secs(300), criterion_6),
        ("oracle inequality Monte Carlo", Duration::from_secs(300), criterion_7),
        ("packing", Duration::from_secs(30), criterion_8),
        ("truncated moment quadrature", Duration::from_secs(10), criterion_9),
        ("determinism", Duration::from_secs(600), criterion_10),
    ];
    let mut failed = 0;
    for (k, (name, limit, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > *limit => Err(format!("{msg}; took {:.1}s, limit {}s", elapsed.as_secs_f64(), limit.as_secs())),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("criterion {:>2} PASS  {name} ({:.2}s): {msg}", k + 1, elapsed.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({:.2}s): {msg}", k + 1, elapsed.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all 10 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 10 criteria fail");
        ExitCode::FAILURE
    }
}
