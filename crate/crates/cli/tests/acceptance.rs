//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use osde_core::bench::{self, LowDepthMode, Method, SweepConfig};
use osde_core::pipeline::{self, PipelineConfig};
use osde_core::qae::{self, QaeBackend};
use osde_core::{legendre, quad, seed, RbmKernel};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn verdict(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn demo_kernel() -> RbmKernel {
    RbmKernel::on_unit_interval(0.5, 1.0)
}

fn orthogonality() -> Check {
    let mut worst = 0.0f64;
    for l in 0..=8 {
        for m in 0..=8 {
            let v = quad::integrate_1d(
                |x| legendre::eval_p(l, x) * legendre::eval_p(m, x),
                -1.0,
                1.0,
                1e-13,
            )
            .map_err(|e| e.to_string())?
            .value;
            let expect = if l == m {
                2.0 / (2 * l + 1) as f64
            } else {
                0.0
            };
            worst = worst.max((v - expect).abs());
        }
    }
    verdict(
        worst <= 1e-10,
        format!("max deviation {worst:.2e} (tol 1e-10)"),
    )
}

fn projection_decay() -> Check {
    let grid: Vec<f64> = (0..1001).map(|i| -1.0 + 2.0 * i as f64 / 1000.0).collect();
    let sup_err = |degree: usize| -> Result<f64, String> {
        let s = legendre::project(|x| x[0].exp(), 1, degree, 1e-13).map_err(|e| e.to_string())?;
        grid.iter()
            .map(|&x| s.eval(&[x]).map(|v| (v - x.exp()).abs()))
            .try_fold(0.0f64, |m, e| e.map(|e| m.max(e)))
            .map_err(|e| e.to_string())
    };
    let errs: Vec<f64> = (2..=9).map(sup_err).collect::<Result<_, _>>()?;
    let worst = errs
        .windows(2)
        .map(|w| w[0] / w[1])
        .fold(f64::INFINITY, f64::min);
    verdict(
        worst >= 2.0,
        format!("smallest per-degree reduction {worst:.2} for L = 2..8 (need >= 2)"),
    )
}

fn normalization() -> Check {
    let k = demo_kernel();
    let mut worst = 0.0f64;
    for dt in [0.05, 0.2, 0.6] {
        for x in [-1.0, -0.7, -0.2, 0.0, 0.4, 0.9, 1.0] {
            let m = quad::integrate_1d(
                |y| k.transition_density(x, 0.0, y, dt).unwrap(),
                -1.0,
                1.0,
                1e-12,
            )
            .map_err(|e| e.to_string())?
            .value;
            worst = worst.max((m - 1.0).abs());
        }
    }
    verdict(
        worst <= 1e-6,
        format!("max |mass - 1| {worst:.2e} (tol 1e-6)"),
    )
}

fn stationary_limit() -> Check {
    let k = demo_kernel();
    let c = 2.0 * k.mu / (k.sigma * k.sigma);
    let norm = c / (c.exp() - (-c).exp());
    let mut worst = 0.0f64;
    for i in 0..201 {
        let y = -1.0 + 2.0 * i as f64 / 200.0;
        let p = k
            .transition_density(0.0, 0.0, y, 10.0)
            .map_err(|e| e.to_string())?;
        worst = worst.max((p - norm * (c * y).exp()).abs());
    }
    verdict(
        worst <= 1e-4,
        format!("sup-norm gap {worst:.2e} at dt = 10 (tol 1e-4)"),
    )
}

fn chapman_kolmogorov() -> Check {
    let k = demo_kernel();
    let (t1, t2) = (0.2, 0.5);
    let mut worst = 0.0f64;
    for i in 0..21 {
        let y = -1.0 + 0.1 * i as f64;
        let composed = quad::integrate_1d(
            |m| {
                k.transition_density(0.0, 0.0, m, t1).unwrap()
                    * k.transition_density(m, t1, y, t2).unwrap()
            },
            -1.0,
            1.0,
            1e-10,
        )
        .map_err(|e| e.to_string())?
        .value;
        let direct = k
            .transition_density(0.0, 0.0, y, t2)
            .map_err(|e| e.to_string())?;
        worst = worst.max((composed - direct).abs());
    }
    verdict(
        worst <= 1e-4,
        format!("max composition gap {worst:.2e} (tol 1e-4)"),
    )
}

fn qae_accuracy() -> Check {
    let eps = 2f64.powi(-7);
    let mut lines = Vec::new();
    let mut ok = true;
    for (j, a) in [0.1, 0.3, 0.7].into_iter().enumerate() {
        let errs: Vec<f64> = (0..1000u64)
            .map(|i| {
                let mut rng = seed::stream(seed::derive_seed(1, &[j as u64, i]));
                qae::rqae_simulate(a, eps, 12, &mut rng).map(|o| o.estimate - a)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let bias = errs.iter().sum::<f64>() / 1000.0;
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / 1000.0).sqrt();
        ok &= rmse <= 4.0 * eps && bias.abs() <= rmse / 3.0;
        lines.push(format!(
            "a={a}: rmse {:.2}ε bias {:.2}ε",
            rmse / eps,
            bias / eps
        ));
    }
    verdict(
        ok,
        format!("{} (need rmse <= 4ε, |bias| <= rmse/3)", lines.join(", ")),
    )
}

fn exact_transport() -> Check {
    let mut cfg = PipelineConfig::demo(8);
    cfg.backend = QaeBackend::Exact;
    cfg.times.truncate(4);
    let tol = cfg.quad_tol;
    let k = cfg.kernel;
    let traj = pipeline::run(&cfg, 0).map_err(|e| e.to_string())?;
    let mut prev = legendre::project(
        |x| {
            k.transition_density(cfg.x0[0], cfg.times[0], x[0], cfg.times[1])
                .unwrap()
        },
        1,
        cfg.degree,
        tol,
    )
    .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (i, step) in traj.steps.iter().enumerate() {
        if i > 0 {
            let (s, sn) = (cfg.times[i], cfg.times[i + 1]);
            let last = &traj.steps[i - 1].density;
            prev = legendre::project(
                |x| {
                    quad::integrate_1d(
                        |y| {
                            last.eval(&[y]).unwrap() * k.transition_density(y, s, x[0], sn).unwrap()
                        },
                        -1.0,
                        1.0,
                        tol / 10.0,
                    )
                    .unwrap()
                    .value
                },
                1,
                cfg.degree,
                tol,
            )
            .map_err(|e| e.to_string())?;
        }
        for (a, b) in step.density.coeffs().iter().zip(prev.coeffs()) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        worst <= 10.0 * tol,
        format!(
            "max coefficient gap {worst:.2e} over 3 steps (tol {:.0e})",
            10.0 * tol
        ),
    )
}

fn headline_rmse() -> Check {
    let cfg = SweepConfig {
        ns: vec![8, 16],
        runs: 10,
        methods: vec![Method::Proposed],
        ..SweepConfig::default()
    };
    let records = bench::run_sweep(&cfg, 20_240_601).map_err(|e| e.to_string())?;
    if let Some(r) = records.iter().find(|r| r.failed()) {
        return Err(format!("N = {} run {} failed: {}", r.n, r.run, r.error));
    }
    let summary = bench::summarize(&records, None).map_err(|e| e.to_string())?;
    let rmses: Vec<(usize, f64)> = summary.cells.iter().map(|c| (c.n, c.rmse)).collect();
    let ok = rmses.iter().all(|&(_, r)| r <= 1e-3);
    let shown: Vec<String> = rmses
        .iter()
        .map(|(n, r)| format!("N={n}: {r:.2e}"))
        .collect();
    verdict(ok, format!("RMSE {} (tol 1e-3)", shown.join(", ")))
}

fn scaling_slopes() -> Check {
    let cfg = SweepConfig {
        ns: vec![8, 16, 32, 64],
        runs: 5,
        methods: vec![Method::Proposed, Method::LowDepth],
        low_depth_mode: LowDepthMode::AllExpectations,
        ..SweepConfig::default()
    };
    let records = bench::run_sweep(&cfg, 20_240_601).map_err(|e| e.to_string())?;
    if let Some(r) = records.iter().find(|r| r.failed()) {
        return Err(format!("{} N = {} failed: {}", r.method, r.n, r.error));
    }
    let summary = bench::summarize(&records, None).map_err(|e| e.to_string())?;
    let fit = |m| summary.fit(m).ok_or_else(|| format!("no fit for {m}"));
    let (p, l) = (fit(Method::Proposed)?, fit(Method::LowDepth)?);
    let ok = (1.2..=1.8).contains(&p.queries.slope)
        && l.queries.slope - p.queries.slope >= 0.5
        && (0.25..=0.75).contains(&p.depth.slope)
        && (0.25..=0.75).contains(&l.depth.slope);
    verdict(
        ok,
        format!(
            "queries {:.3} vs {:.3} (gap {:.3}), depth {:.3} / {:.3}",
            p.queries.slope,
            l.queries.slope,
            l.queries.slope - p.queries.slope,
            p.depth.slope,
            l.depth.slope
        ),
    )
}

fn classical_reference() -> Check {
    let cfg = SweepConfig {
        ns: vec![8],
        ..SweepConfig::default()
    };
    let q = bench::frozen_references(&cfg).map_err(|e| e.to_string())?[&8];
    let rmse = cfg.classical_target_rmse;
    let per_path = (q * (1.0 - q) / (rmse * rmse)).ceil() as u64;
    for n in 1..=128usize {
        let v = bench::classical_reference(q, n, rmse).map_err(|e| e.to_string())?;
        if v != n as u64 * per_path {
            return Err(format!("N = {n}: {v} != {}", n as u64 * per_path));
        }
    }
    let paths = 100_000u64;
    let times = pipeline::demo_times(8, cfg.t0, cfg.t_first, cfg.t_end);
    let (p, _) = bench::sample_classical_mc(
        &cfg.kernel,
        8,
        &times,
        cfg.x0,
        paths,
        &mut seed::stream(20_240_601),
    )
    .map_err(|e| e.to_string())?;
    let se = (q * (1.0 - q) / paths as f64).sqrt();
    let z = (p - q) / se;
    verdict(
        z.abs() <= 3.0,
        format!("cost = N·{per_path} for N <= 128; sampled {p:.5} vs {q:.5} ({z:+.2} SE)"),
    )
}

fn run_osde(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_osde"))
        .arg("--out-dir")
        .arg(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let Ok(entries) = fs::read_dir(&d) else {
            continue;
        };
        for e in entries.flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, fs::read(&p).unwrap_or_default()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Check {
    let commands: [&[&str]; 5] = [
        &["pipeline", "--N", "4"],
        &["bench", "--ns", "2,4", "--runs", "2"],
        &[
            "qae",
            "--variant",
            "lqae",
            "--a",
            "0.4",
            "--eps",
            "0.05",
            "--N",
            "8",
            "--trials",
            "50",
        ],
        &["rbm", "--dt", "0.3"],
        &["project", "--function", "exp", "--L", "6"],
    ];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (i, args) in commands.iter().enumerate() {
        let dir = root.path().join(i.to_string());
        let out_a = run_osde(&dir, args)?;
        let files_a = tree(&dir);
        let _ = fs::remove_dir_all(&dir);
        let out_b = run_osde(&dir, args)?;
        if out_a != out_b || files_a != tree(&dir) {
            return Err(format!("{} differs between runs", args[0]));
        }
    }
    Ok(format!(
        "{} commands byte-identical on stdout and files",
        commands.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("Legendre orthogonality", orthogonality),
        ("projection error decay", projection_decay),
        ("transition density normalization", normalization),
        ("stationary limit", stationary_limit),
        ("Chapman-Kolmogorov", chapman_kolmogorov),
        ("amplitude estimation accuracy", qae_accuracy),
        ("exact-backend transport", exact_transport),
        ("headline RMSE", headline_rmse),
        ("scaling slopes", scaling_slopes),
        ("classical reference", classical_reference),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{secs:.1} s]", i + 1);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
