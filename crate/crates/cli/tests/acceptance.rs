//! Acceptance gate. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use proxybounds_cli::simulate::{simulate, SimulationConfig};
use proxybounds_core::dgp::{example1_spec, example2_spec, example3_spec, random_valid_spec};
use proxybounds_core::rng::{derive_seed, stream, tag};
use proxybounds_core::*;

const L0_SET: (f64, f64) = (0.472973, 1.118034);

type Outcome = std::result::Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn l0() -> LatentSpec {
    LatentSpec::from_config_str(&std::fs::read_to_string(fixtures().join("l0.toml")).unwrap())
        .unwrap()
}

fn random_specs() -> Vec<LatentSpec> {
    let mut rng = stream(20_240_601, tag::SIMULATION, 0);
    (0..100).map(|_| random_valid_spec(&mut rng)).collect()
}

fn within_time(start: Instant, limit: Duration, detail: String) -> Outcome {
    let t = start.elapsed();
    if t < limit {
        Ok(format!("{detail}; {:.1}s", t.as_secs_f64()))
    } else {
        Err(format!(
            "{detail}; took {:.1}s, limit {}s",
            t.as_secs_f64(),
            limit.as_secs()
        ))
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let step = 1e-3;
    let mut worst = 0.0f64;
    for (i, spec) in random_specs().iter().enumerate() {
        let m = latent_to_observable_moments(spec);
        for regime in [Regime::Baseline, Regime::FreeCov] {
            let b = identify(&m, regime).map_err(|e| format!("spec {i}: {e}"))?;
            let bf = brute_force_bounds(&m, step, 2.0 * m.var_y.sqrt(), regime)
                .map_err(|e| e.to_string())?;
            let (lo, hi) = bf
                .interval
                .ok_or(format!("spec {i} {regime}: grid found no feasible point"))?;
            let gap = (lo - b.lower).abs().max((hi - b.upper).abs());
            worst = worst.max(gap);
            if gap > 1e-3 {
                return Err(format!(
                    "spec {i} {regime}: closed form [{}, {}] vs grid [{lo}, {hi}]",
                    b.lower, b.upper
                ));
            }
        }
    }
    within_time(
        start,
        Duration::from_secs(60),
        format!("100 specs x 2 regimes, max gap {worst:.2e}"),
    )
}

fn containment() -> Outcome {
    let mut violations = 0;
    for spec in random_specs() {
        let b =
            identify_baseline(&latent_to_observable_moments(&spec)).map_err(|e| e.to_string())?;
        if !(b.lower <= spec.beta && spec.beta <= b.upper) {
            violations += 1;
        }
    }
    if violations == 0 {
        Ok("beta inside [LB, UB] for 100 of 100 specs".into())
    } else {
        Err(format!("{violations} specs with beta outside [LB, UB]"))
    }
}

fn sharpness() -> Outcome {
    let mut non_psd = 0;
    let mut worst = 0.0f64;
    for (i, spec) in random_specs().iter().take(10).enumerate() {
        let m = latent_to_observable_moments(spec);
        let b = identify_baseline(&m).map_err(|e| e.to_string())?;
        for k in 0..20 {
            let beta = b.lower + (b.upper - b.lower) * k as f64 / 19.0;
            let s = sharpness_spec(&m, beta).map_err(|e| format!("set {i}, beta {beta}: {e}"))?;
            if s.var_eps < 0.0 || s.var_u1 < 0.0 || s.var_u2 < 0.0 || s.cov_u1_u2 < 0.0 {
                return Err(format!(
                    "set {i}, beta {beta}: negative constructed variance"
                ));
            }
            let back = latent_to_observable_moments(&s);
            for (a, e) in back.second_moments().iter().zip(m.second_moments()) {
                worst = worst.max((a - e).abs());
            }
            if !s.is_psd() {
                non_psd += 1;
                println!("    note: set {i}, beta {beta:.6}: latent covariance not PSD (min eigenvalue {:.3e})", s.min_eigenvalue());
            }
        }
    }
    if worst <= 1e-12 {
        Ok(format!(
            "200 points, max moment error {worst:.2e}, {non_psd} non-PSD latent covariances"
        ))
    } else {
        Err(format!("max moment error {worst:.2e} exceeds 1e-12"))
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6
}

fn example_inequalities() -> Outcome {
    let e = |r: Result<LatentSpec>| {
        r.map(|s| latent_to_observable_moments(&s))
            .map_err(|e| e.to_string())
    };
    let m1 = e(example1_spec(1.0, 1.0, 0.0))?;
    let b1 = reduced_form(&m1, ProxyIndex::First).map_err(|e| e.to_string())?;
    let s1 = identify_baseline(&m1).map_err(|e| e.to_string())?;
    let ok1 = close(b1, 0.5)
        && close(s1.lower, 0.8)
        && close(s1.upper, 1.0)
        && b1 < s1.lower
        && s1.lower <= 1.0;

    let m2 = e(example2_spec(0.5, -0.6))?;
    let b1_2 = reduced_form(&m2, ProxyIndex::First).map_err(|e| e.to_string())?;
    let ub2 = identify_baseline(&m2).map_err(|e| e.to_string())?.upper;
    let ok2 = close(b1_2, 4.0 / 3.0) && close(ub2, 1.0) && b1_2 > ub2;

    let m3 = e(example3_spec(2.0, 0.0))?;
    let b_star = lubotsky_wittenberg(&m3).map_err(|e| e.to_string())?.b_star;
    let lb_c = identify_free_cov(&m3).map_err(|e| e.to_string())?.lower;
    let ok3 = close(b_star, 0.6) && close(lb_c, 2.0 / 3.0) && b_star < lb_c && lb_c <= 1.0;

    let detail = format!(
        "ex1 b1 {b1:.6} < LB {:.6} <= beta 1 = UB {:.6}; ex2 b1 {b1_2:.6} > UB {ub2:.6}; ex3 b* {b_star:.6} < LB_C {lb_c:.6} <= 1",
        s1.lower, s1.upper
    );
    if ok1 && ok2 && ok3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ols_collapse() -> Outcome {
    let mut worst = 0.0f64;
    for (beta, var_eps) in [(0.0, 1.0), (0.3, 0.5), (1.0, 1.0), (2.5, 0.1)] {
        let spec = LatentSpec {
            beta,
            mean_u1: 0.0,
            mean_u2: 0.0,
            var_eps,
            var_u1: 0.0,
            var_u2: 0.0,
            cov_x_u1: 0.0,
            cov_x_u2: 0.0,
            cov_u1_u2: 0.0,
        };
        let m = latent_to_observable_moments(&spec);
        let lb = identify_baseline(&m).map_err(|e| e.to_string())?.lower;
        worst =
            worst.max((lb - reduced_form(&m, ProxyIndex::First).map_err(|e| e.to_string())?).abs());
    }
    if worst > 1e-12 {
        return Err(format!("population gap {worst:.2e} exceeds 1e-12"));
    }

    let spec = LatentSpec {
        beta: 1.0,
        mean_u1: 0.0,
        mean_u2: 0.0,
        var_eps: 1.0,
        var_u1: 0.0,
        var_u2: 0.0,
        cov_x_u1: 0.0,
        cov_x_u2: 0.0,
        cov_u1_u2: 0.0,
    };
    let n = 10_000;
    let tol = 2.0 / (n as f64).sqrt();
    let mut passing = 0;
    for rep in 0..50 {
        let s = sample_dgp(&spec, n, derive_seed(5, tag::SIMULATION, rep), 0)
            .map_err(|e| e.to_string())?;
        let m = moment_summary(
            &residualize(&s).map_err(|e| e.to_string())?,
            DivisorPolicy::NMinus1,
        )
        .map_err(|e| e.to_string())?;
        let lb = identify_baseline(&m).map_err(|e| e.to_string())?.lower;
        let b1 = reduced_form(&m, ProxyIndex::First).map_err(|e| e.to_string())?;
        if (lb - b1).abs() <= tol {
            passing += 1;
        }
    }
    let detail = format!("population gap {worst:.2e}; simulation {passing}/50 reps within {tol}");
    if passing >= 48 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn consistency() -> Outcome {
    let start = Instant::now();
    let s = sample_dgp(&l0(), 100_000, 42, 3).map_err(|e| e.to_string())?;
    let m = moment_summary(
        &residualize(&s).map_err(|e| e.to_string())?,
        DivisorPolicy::NMinus1,
    )
    .map_err(|e| e.to_string())?;
    let b = identify_baseline(&m).map_err(|e| e.to_string())?;
    let detail = format!(
        "[{:.6}, {:.6}] vs [{}, {}]",
        b.lower, b.upper, L0_SET.0, L0_SET.1
    );
    if (b.lower - L0_SET.0).abs() <= 0.02 && (b.upper - L0_SET.1).abs() <= 0.02 {
        within_time(start, Duration::from_secs(30), detail)
    } else {
        Err(detail)
    }
}

fn coverage() -> Outcome {
    let start = Instant::now();
    let cfg = SimulationConfig {
        spec: l0(),
        n: 2000,
        reps: 300,
        covariates: 0,
        regime: Regime::Baseline,
        seed: 7,
        inference: Some(InferenceConfig {
            alpha: 0.90,
            bootstrap: 500,
            draws: 5000,
            ..InferenceConfig::default()
        }),
        divisor: DivisorPolicy::NMinus1,
    };
    let r = simulate(&cfg).map_err(|e| e.to_string())?;
    let agg = r.aggregate.ok_or("no aggregate")?;
    let covered = r
        .rows
        .iter()
        .filter(|row| row.covered == Some(true))
        .count();
    let share = covered as f64 / 300.0;
    let detail = format!(
        "{covered}/300 reps cover [{}, {}] ({:.1}%), {} failed",
        L0_SET.0,
        L0_SET.1,
        100.0 * share,
        agg.failed_reps
    );
    if share >= 0.85 {
        within_time(start, Duration::from_secs(600), detail)
    } else {
        Err(detail)
    }
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_proxybounds"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn specification_test() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("report.json");
    let input = fixtures().join("infeasible.csv");
    let o = cli(&[
        "analyze",
        "--input",
        input.to_str().unwrap(),
        "--outcome",
        "y",
        "--proxy1",
        "z1",
        "--proxy2",
        "z2",
        "--out",
        out.to_str().unwrap(),
    ]);
    let code = o.status.code();
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let verdict = report["regimes"][0]["specification_test"]["verdict"]
        .as_str()
        .unwrap_or("")
        .to_string();
    let detail = format!("exit code {code:?}, verdict {verdict}");
    if code == Some(4) && verdict == "rejected" {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = fixtures().join("l0_n2000_seed2000.csv");
    let mut reports = Vec::new();
    for threads in ["1", "8"] {
        let out = dir.path().join(format!("report_{threads}.json"));
        let o = cli(&[
            "--threads",
            threads,
            "analyze",
            "--input",
            input.to_str().unwrap(),
            "--outcome",
            "y",
            "--proxy1",
            "z1",
            "--proxy2",
            "z2",
            "--covariates",
            "w1,w2",
            "--regime",
            "baseline,free-cov",
            "--seed",
            "99",
            "--out",
            out.to_str().unwrap(),
        ]);
        if !o.status.success() {
            return Err(format!(
                "run with {threads} threads failed: {}",
                String::from_utf8_lossy(&o.stderr)
            ));
        }
        reports.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    if reports[0] == reports[1] {
        Ok(format!(
            "reports identical at 1 and 8 workers ({} bytes)",
            reports[0].len()
        ))
    } else {
        Err("reports differ between 1 and 8 workers".into())
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("containment", containment),
        ("sharpness round trip", sharpness),
        ("analytic example inequalities", example_inequalities),
        ("OLS collapse", ols_collapse),
        ("estimator consistency", consistency),
        ("inference coverage", coverage),
        ("specification test via CLI", specification_test),
        ("determinism across worker counts", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
