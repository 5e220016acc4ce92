//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Runs without the libtest harness so the
//! lines always appear in `cargo test` output.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use vrlm_core::engine::{theory_steps_spider, theory_steps_storm};
use vrlm_core::metrics::report;
use vrlm_core::problems::{QuadraticNcsc, QuadraticParams};
use vrlm_core::{Engine, EngineConfig, EstimatorKind, MixingMatrix, StepSizes};
use vrlm_harness::{parse_config, run, run_sweep, RunConfig, RunSet, Status};

type Check = common::Check;
type Criterion = (&'static str, fn() -> Check);

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn shipped(name: &str, out: &Path) -> Result<RunConfig, String> {
    let mut cfg = parse_config(&configs_dir().join(name)).map_err(|e| e.to_string())?;
    cfg.out_dir = out.to_path_buf();
    Ok(cfg)
}

fn tmp() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

fn run_ok(cfg: &RunConfig) -> Result<RunSet, String> {
    let set = run(cfg).map_err(|e| e.to_string())?;
    match set.status() {
        Status::Ok => Ok(set),
        s => Err(format!(
            "run ended with {s:?}: {}",
            set.outcomes
                .iter()
                .find_map(|o| o.error.clone())
                .unwrap_or_default()
        )),
    }
}

fn within(label: &str, elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed > limit {
        Err(format!(
            "{label} took {:.1}s, limit {}s",
            elapsed.as_secs_f64(),
            limit.as_secs()
        ))
    } else {
        Ok(())
    }
}

fn structural_invariants() -> Check {
    let dir = tmp()?;
    let text = format!(
        r#"
T = 10000
metric_every = 100
out_dir = "{}"
check_invariants = true
[problem]
kind = "quadratic"
d1 = 10
d2 = 10
n = 16
noise = 0.1
dual_het = 0.5
seed = 3
g = {{ kind = "l1", weight = 0.01 }}
h = {{ kind = "simplex", dim = 10 }}
[topology]
kind = "ring"
m = 8
[vr]
kind = "spider"
q = 4
S1 = 16
S2 = 4
[steps]
mode = "manual"
eta_x = 0.02
eta_y = 0.2
eta_lambda = 0.05
"#,
        dir.path().display()
    );
    let cfg = RunConfig::from_toml(&text).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let set = run_ok(&cfg)?;
    within("run", start.elapsed(), Duration::from_secs(60))?;
    let inv = set.outcomes[0]
        .invariants
        .clone()
        .ok_or("no invariant report")?;
    if inv.checks < cfg.iterations {
        return Err(format!(
            "only {} of {} iterations checked",
            inv.checks, cfg.iterations
        ));
    }
    if !inv.ok() {
        return Err(format!("{inv:?}"));
    }
    Ok(format!(
        "{} checks in {:.1}s, tracking rel {:.1e}, multiplier mean rel {:.1e}, consensus ratio {:.3}, infeasible rows 0",
        inv.checks,
        start.elapsed().as_secs_f64(),
        inv.max_tracking_rel,
        inv.max_lambda_mean_rel,
        inv.max_consensus_ratio
    ))
}

fn quad(components: Option<usize>, noise: f64) -> QuadraticNcsc {
    QuadraticNcsc::random(&QuadraticParams {
        agents: 6,
        d1: 4,
        d2: 3,
        components,
        noise,
        sigma2: Some(if noise > 0.0 { 1.0 } else { 0.0 }),
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

const STEPS: StepSizes = StepSizes {
    eta_x: 0.02,
    eta_y: 0.2,
    eta_lambda: 0.05,
};

fn estimator_exactness() -> Check {
    let w = MixingMatrix::ring(6).unwrap();
    let noiseless = quad(None, 0.0);
    let mut worst = 0.0f64;
    for kind in [
        EstimatorKind::Spider { q: 7, s1: 3, s2: 2 },
        EstimatorKind::Storm {
            beta: 0.2,
            batch: 2,
        },
    ] {
        let mut e = Engine::new(&noiseless, &w, EngineConfig::new(kind, 3, STEPS))
            .map_err(|e| e.to_string())?;
        for _ in 0..=200 {
            let r = report(&e).map_err(|e| e.to_string())?;
            worst = worst.max(r.tracking_residual.sqrt());
            if r.tracking_residual.sqrt() > 1e-12 {
                return Err(format!(
                    "noiseless {kind:?} t={}: residual {:e}",
                    r.t,
                    r.tracking_residual.sqrt()
                ));
            }
            e.step().map_err(|e| e.to_string())?;
        }
    }

    let n = 10;
    let q = 4;
    let finite = quad(Some(n), 0.5);
    let mut e = Engine::new(
        &finite,
        &w,
        EngineConfig::new(EstimatorKind::Spider { q, s1: n, s2: 2 }, n, STEPS),
    )
    .map_err(|e| e.to_string())?;
    for _ in 0..40 {
        e.step().map_err(|e| e.to_string())?;
        let r = report(&e).map_err(|e| e.to_string())?;
        if r.t % q == 0 && r.tracking_residual.sqrt() > 1e-12 {
            return Err(format!(
                "SPIDER checkpoint t={}: residual {:e}",
                r.t,
                r.tracking_residual.sqrt()
            ));
        }
    }

    let noisy = quad(None, 0.5);
    let mut storm = Engine::new(
        &noisy,
        &w,
        EngineConfig::new(
            EstimatorKind::Storm {
                beta: 1.0,
                batch: 3,
            },
            3,
            STEPS,
        ),
    )
    .map_err(|e| e.to_string())?;
    let mut plain = Engine::new(
        &noisy,
        &w,
        EngineConfig::new(EstimatorKind::Plain { batch: 3 }, 3, STEPS),
    )
    .map_err(|e| e.to_string())?;
    for t in 1..=100 {
        storm.step().map_err(|e| e.to_string())?;
        plain.step().map_err(|e| e.to_string())?;
        if storm.state() != plain.state() {
            return Err(format!(
                "STORM with beta = 1 differs from plain minibatch at t={t}"
            ));
        }
    }
    Ok(format!("noiseless residual max {worst:.1e}, SPIDER checkpoints exact, STORM beta = 1 bitwise plain"))
}

fn oracle_equivalence() -> Check {
    let a = common::check_closed_form_maximizers()?;
    let b = common::check_stationarity_brute_force()?;
    Ok(format!("{a}; brute force {b}"))
}

fn first_below(set: &RunSet, tol: f64) -> Option<usize> {
    set.outcomes[0]
        .records
        .iter()
        .find(|r| r.report.primal_measure() < tol && r.report.dual_measure() < tol)
        .map(|r| r.report.t)
}

fn convergence() -> Check {
    let dir = tmp()?;
    let spider_cfg = shipped("quadratic_spider.toml", &dir.path().join("spider"))?;
    let start = Instant::now();
    let spider = run_ok(&spider_cfg)?;
    let spider_time = start.elapsed();
    within("SPIDER run", spider_time, Duration::from_secs(120))?;
    let spider_t = first_below(&spider, 1e-4)
        .filter(|&t| t <= 50_000)
        .ok_or_else(|| {
            let r = &spider.outcomes[0].records.last().unwrap().report;
            format!(
                "SPIDER never below 1e-4 by 5e4: final {:.2e} / {:.2e}",
                r.primal_measure(),
                r.dual_measure()
            )
        })?;

    let storm_cfg = shipped("quadratic_storm.toml", &dir.path().join("storm"))?;
    let start = Instant::now();
    let storm = run_ok(&storm_cfg)?;
    let storm_time = start.elapsed();
    within("STORM run", storm_time, Duration::from_secs(120))?;
    let storm_t = first_below(&storm, 1e-3).ok_or_else(|| {
        let r = &storm.outcomes[0].records.last().unwrap().report;
        format!(
            "STORM never below 1e-3: final {:.2e} / {:.2e}",
            r.primal_measure(),
            r.dual_measure()
        )
    })?;
    Ok(format!(
        "SPIDER below 1e-4 at t={spider_t} ({:.1}s), STORM below 1e-3 at t={storm_t} ({:.1}s)",
        spider_time.as_secs_f64(),
        storm_time.as_secs_f64()
    ))
}

fn dro() -> Check {
    let dir = tmp()?;
    let start = Instant::now();
    let cfg = shipped("dro.toml", &dir.path().join("dro"))?;
    let set = run_ok(&cfg)?;
    if set.outcomes.len() != 5 {
        return Err(format!(
            "expected 5 repetitions, got {}",
            set.outcomes.len()
        ));
    }
    let mut worst_ratio = 0.0f64;
    for o in &set.outcomes {
        let first = o
            .records
            .first()
            .ok_or("no records")?
            .report
            .unit_prox_metric;
        let last = o.records.last().unwrap().report.unit_prox_metric;
        worst_ratio = worst_ratio.max(last / first);
        if last > first / 100.0 {
            return Err(format!(
                "seed {}: metric {first:.3e} -> {last:.3e}, less than 100x",
                o.seed
            ));
        }
    }
    let agg =
        fs::read_to_string(dir.path().join("dro/aggregate.csv")).map_err(|e| e.to_string())?;
    let runs: Vec<&str> = agg
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap_or(""))
        .collect();
    if runs.is_empty() || runs.iter().any(|r| *r != "5") {
        return Err("aggregate.csv does not average 5 runs on every row".into());
    }

    let sweep_cfg = shipped("dro_sparsity.toml", &dir.path().join("sparsity"))?;
    let rows = run_sweep(&sweep_cfg).map_err(|e| e.to_string())?;
    let mut nnz = Vec::new();
    for row in &rows {
        if row.status != "ok" {
            return Err(format!("sparsity point {} ended {}", row.label, row.status));
        }
        let summary = fs::read_to_string(
            dir.path()
                .join(format!("sparsity/sweep_{:03}/summary.json", row.index)),
        )
        .map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_str(&summary).map_err(|e| e.to_string())?;
        let xbar = v["final_xbar"]
            .as_array()
            .ok_or("summary has no final_xbar")?;
        nnz.push(
            xbar.iter()
                .filter(|x| x.as_f64().is_some_and(|v| v.abs() > 1e-8))
                .count(),
        );
    }
    if nnz.windows(2).any(|w| w[1] > w[0]) {
        return Err(format!("nnz not nonincreasing in the l1 weight: {nnz:?}"));
    }
    within("DRO runs", start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "5 seeds, worst final/initial {worst_ratio:.1e}; nnz over lambda sweep {nnz:?}; {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn accounting() -> Check {
    let dir = tmp()?;
    let mut cfg = shipped("quadratic_spider.toml", dir.path())?;
    let (q, s0, s1, s2) = (4usize, 16usize, 16usize, 4usize);
    let mut lines = Vec::new();
    for t_max in [400usize, 402] {
        cfg.iterations = t_max;
        cfg.metric_every = t_max;
        let set = run_ok(&cfg)?;
        let last = &set.outcomes[0].records.last().unwrap().report;
        let checkpoints = t_max / q;
        let expected = (t_max - checkpoints) * s2 + checkpoints * s1 + s0;
        if t_max % q == 0 {
            let closed = (t_max - t_max / q) * s2 + t_max.div_ceil(q) * s1 + s0;
            if closed != expected {
                return Err(format!("closed form {closed} vs schedule {expected}"));
            }
        }
        if last.samples != expected as u64 {
            return Err(format!("T={t_max}: samples {} vs {expected}", last.samples));
        }
        if last.comms != t_max as u64 {
            return Err(format!("T={t_max}: comms {} vs {t_max}", last.comms));
        }
        lines.push(format!("T={t_max} samples {expected}"));
    }
    Ok(format!("{}, comms = T", lines.join(", ")))
}

fn rel_ok(label: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= 1e-12 * want.abs() {
        Ok(())
    } else {
        Err(format!("{label}: {got:e} vs {want:e}"))
    }
}

#[allow(clippy::excessive_precision, clippy::type_complexity)]
fn theory_calculators() -> Check {
    // (L, μ, ρ, σ, ε), then SPIDER (L_P, η_x, η_y, η_Λ), then STORM (β, η_x, η_y, η_Λ, S0).
    // Values come from an arbitrary-precision evaluation of the step-size formulas.
    let fixtures: [((f64, f64, f64, f64, f64), [f64; 4], [f64; 4], usize); 5] = [
        (
            (1.0, 1.0, 0.0, 1.0, 0.1),
            [
                2.2360679774997896964,
                0.0013157894736842105263,
                0.25,
                0.0064388625153585058928,
            ],
            [
                1.984126984126984127e-7,
                1.325700604724327305e-7,
                0.00007874259854358900567,
                1.0311004703411434594e-6,
            ],
            2246,
        ),
        (
            (2.0, 0.5, 0.5, 2.0, 0.05),
            [
                16.124515496597099305,
                0.000081300813008130081301,
                0.125,
                0.000216344152135134562,
            ],
            [
                1.0433360042735042735e-9,
                5.3920793490595567574e-10,
                2.8550065732650690583e-6,
                3.2159211601559506969e-9,
            ],
            61919,
        ),
        (
            (10.0, 1.0, 0.8047, 1.0, 0.01),
            [
                200.24984394500785728,
                1.0581805999219236275e-6,
                0.025,
                7.1663200692502296496e-6,
            ],
            [
                2.8069702685709152969e-11,
                4.0558817864862535202e-12,
                9.3657792464290499648e-8,
                2.3107084720246381598e-11,
            ],
            18875,
        ),
        (
            (1.2925910247883945, 1.0, 0.8, 0.5, 0.02),
            [
                3.5828716513422957927,
                0.000062023495075233394346,
                0.19340997671009406461,
                0.00079984151367383077311,
            ],
            [
                2.090632205318075606e-8,
                2.472242901321523892e-8,
                0.000019774371680216920505,
                1.7681340954152426709e-7,
            ],
            1339,
        ),
        (
            (5.0, 2.5, 0.95, 3.0, 0.001),
            [
                20.615528128088302749,
                6.7371006954536937089e-7,
                0.05,
                8.4213758693171171361e-6,
            ],
            [
                6.7684643708035520901e-13,
                2.5058076713736782767e-11,
                2.9087076964701076874e-8,
                1.6246184333835032619e-10,
            ],
            2187990,
        ),
    ];
    for ((l, mu, rho, sigma, eps), sp, st, s0) in fixtures {
        let tag = format!("L={l} mu={mu} rho={rho}");
        let a = theory_steps_spider(l, mu, rho).map_err(|e| e.to_string())?;
        rel_ok(&format!("{tag} SPIDER L_P"), a.l_p, sp[0])?;
        rel_ok(&format!("{tag} SPIDER eta_x"), a.steps.eta_x, sp[1])?;
        rel_ok(&format!("{tag} SPIDER eta_y"), a.steps.eta_y, sp[2])?;
        rel_ok(
            &format!("{tag} SPIDER eta_lambda"),
            a.steps.eta_lambda,
            sp[3],
        )?;
        let b = theory_steps_storm(l, mu, rho, sigma, eps).map_err(|e| e.to_string())?;
        rel_ok(
            &format!("{tag} STORM beta"),
            b.beta.ok_or("no beta")?,
            st[0],
        )?;
        rel_ok(&format!("{tag} STORM eta_x"), b.steps.eta_x, st[1])?;
        rel_ok(&format!("{tag} STORM eta_y"), b.steps.eta_y, st[2])?;
        rel_ok(
            &format!("{tag} STORM eta_lambda"),
            b.steps.eta_lambda,
            st[3],
        )?;
        if b.initial_batch != Some(s0) {
            return Err(format!("{tag} STORM S0 {:?} vs {s0}", b.initial_batch));
        }
    }
    Ok("5 tuples, SPIDER and STORM constants within 1e-12 relative".into())
}

fn reproducibility() -> Check {
    let mut checked = Vec::new();
    for name in [
        "quadratic_spider.toml",
        "quadratic_storm.toml",
        "dro.toml",
        "dro_sparsity.toml",
    ] {
        let mut csvs = Vec::new();
        for _ in 0..2 {
            let dir = tmp()?;
            let mut cfg = shipped(name, dir.path())?;
            cfg.iterations = 1000;
            cfg.metric_every = 50;
            cfg.repeats = 1;
            cfg.sweep.clear();
            run_ok(&cfg)?;
            csvs.push(fs::read(dir.path().join("metrics.csv")).map_err(|e| e.to_string())?);
        }
        if csvs[0] != csvs[1] {
            return Err(format!("{name}: metrics.csv differs between runs"));
        }
        checked.push(name.trim_end_matches(".toml"));
    }
    Ok(format!(
        "byte-identical metrics.csv for {}",
        checked.join(", ")
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("structural invariants", structural_invariants),
        ("estimator exactness", estimator_exactness),
        ("oracle equivalence", oracle_equivalence),
        ("single-agent reduction", common::check_reductions),
        ("quadratic convergence", convergence),
        ("DRO experiment", dro),
        ("sample and communication accounting", accounting),
        ("theory step calculators", theory_calculators),
        ("reproducibility", reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("PASS {}. {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", k + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
