//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any failed.

use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;
use ric_core::dos::{
    bootstrap_entropy_errors, enumerate_exact, enumerate_spectra, free_entropy_from_dos, wham_solve, WhamOptions,
};
use ric_core::emc::{run, BinGrid, EmcOptions, Ladder};
use ric_core::ensemble::{generate, mp_support_edges, EnsembleSpec, MeasurementMatrix, Normalization};
use ric_core::ric::{phase_diagram, ric, trace_branch, PhaseOptions, RecoveryCondition, RicOptions};
use ric_core::rng::stream_rng;
use ric_core::rs::{entropy_at_lambda, mu_grid, xi_limit, RsParams, RsSolver, SaddlePoint, SolverOptions};
use ric_core::Branch;

type Outcome = Result<String, String>;

fn binary_entropy(r: f64) -> f64 {
    -r * r.ln() - (1.0 - r) * (1.0 - r).ln()
}

fn solver() -> RsSolver {
    RsSolver::new(SolverOptions::default()).unwrap()
}

/// `(lambda, sigma)` at a single `mu`, continued from the small-bias start.
fn rs_at(s: &RsSolver, alpha: f64, rho: f64, mu: f64) -> Result<(f64, f64), String> {
    let init = s.continuation_start(alpha, rho, mu).map_err(|e| e.to_string())?;
    let p = s
        .rs_point(&RsParams::new(alpha, rho, mu).unwrap(), &init)
        .map_err(|e| e.to_string())?;
    Ok((p.lambda, p.sigma))
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mp_edges() -> Outcome {
    let s = solver();
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for (alpha, rho) in [(0.5, 0.1), (0.5, 0.25), (0.3, 0.1)] {
        let (lo, hi) = mp_support_edges(alpha, rho).unwrap();
        for (sign, edge) in [(1.0, lo), (-1.0, hi)] {
            let (l1, _) = rs_at(&s, alpha, rho, sign * 1e-3)?;
            let (l2, _) = rs_at(&s, alpha, rho, sign * 2e-3)?;
            let extrapolated = 2.0 * l1 - l2;
            worst = worst.max((extrapolated - edge).abs());
            detail.push(format!("{extrapolated:.5}/{edge:.5}"));
        }
    }
    check(
        worst < 1e-2,
        format!("max |lambda(0) - edge| = {worst:.2e} [{}]", detail.join(" ")),
    )
}

fn zero_bias_entropy() -> Outcome {
    let s = solver();
    let mut worst: f64 = 0.0;
    for sign in [1.0, -1.0] {
        let (_, s1) = rs_at(&s, 0.5, 0.1, sign * 1e-3)?;
        let (_, s2) = rs_at(&s, 0.5, 0.1, sign * 2e-3)?;
        worst = worst.max((2.0 * s1 - s2 - binary_entropy(0.1)).abs());
    }
    check(
        worst < 1e-3,
        format!("|Sigma(0) - H(0.1)| = {worst:.2e}, H(0.1) = {:.5}", binary_entropy(0.1)),
    )
}

fn grids() -> [(Branch, Vec<f64>); 2] {
    [
        (Branch::Min, mu_grid(Branch::Min, 1e-3, 12.0, 40).unwrap()),
        (Branch::Max, mu_grid(Branch::Max, 1e-3, 2.5, 40).unwrap()),
    ]
}

fn saddle_residuals() -> Outcome {
    let s = solver();
    let mut worst: f64 = 0.0;
    let mut failed = 0;
    for (_, grid) in grids() {
        for (_, p) in s.trace(0.5, 0.1, &grid).map_err(|e| e.to_string())? {
            match p {
                Ok(p) => worst = worst.max(p.residual_max),
                Err(_) => failed += 1,
            }
        }
    }
    check(
        failed == 0 && worst < 1e-8,
        format!("max residual {worst:.2e} over 80 points, {failed} unconverged"),
    )
}

fn envelope() -> Outcome {
    let s = solver();
    let mut worst: f64 = 0.0;
    for (_, grid) in grids() {
        for (mu, p) in s.trace(0.5, 0.1, &grid).map_err(|e| e.to_string())? {
            let p = p.map_err(|e| format!("mu = {mu}: {e}"))?;
            let fd = s
                .lambda_finite_difference(0.5, 0.1, &p, 1e-4 * mu.abs())
                .map_err(|e| e.to_string())?;
            worst = worst.max(((fd - p.lambda) / p.lambda).abs());
        }
    }
    check(worst < 1e-3, format!("max relative |lambda - FD| = {worst:.2e}"))
}

/// `Xi_beta(z)` by direct quadrature of its inner Gaussian integral, with the
/// conjugates rescaled from `(Q_hat, Delta_hat, q0_hat)` at `m = mu / beta`.
fn xi_finite_beta(sp: &SaddlePoint, mu: f64, beta: f64, z: f64) -> f64 {
    let m = mu / beta;
    let q_sum = sp.q_hat / m; // Q~ + q~_1
    let q1 = (sp.delta_hat + sp.q0_hat) / (m * m);
    let q0 = sp.q0_hat / (m * m);
    let (a, b) = ((q1 - q0).sqrt(), q0.sqrt() * z);
    let (lim, n) = (40.0, 400_000);
    let h = 2.0 * lim / n as f64;
    let integral: f64 = (0..=n)
        .map(|i| {
            let y = -lim + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let t = a * y + b;
            w * (-0.5 * y * y + m * t * t / (2.0 * q_sum)).exp()
        })
        .sum::<f64>()
        * h
        / (2.0 * std::f64::consts::PI).sqrt();
    1.0 + (-sp.k).exp() * q_sum.powf(-m / 2.0) * integral
}

fn xi_oracle() -> Outcome {
    let mut rng = stream_rng(2024, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mu: f64 = rng.random_range(0.1..2.5) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let q_hat = mu.signum() * rng.random_range(0.5..3.0);
        let delta_hat = if q_hat > 0.0 {
            rng.random_range(0.0..0.7) * q_hat
        } else {
            rng.random_range(0.0..2.0)
        };
        let sp = SaddlePoint {
            q: 0.0,
            chi: 0.0,
            q_hat,
            q0_hat: rng.random_range(0.0..1.0),
            delta_hat,
            k: rng.random_range(-2.0..2.0),
        };
        let z: f64 = rng.random_range(-3.0..3.0);
        let closed = xi_limit(z, &sp).map_err(|e| e.to_string())?;
        let direct = xi_finite_beta(&sp, mu, 1e4, z);
        worst = worst.max(((closed - direct) / direct).abs());
    }
    check(
        worst < 1e-3,
        format!("max relative |Xi - Xi_beta| = {worst:.2e} on 100 draws"),
    )
}

fn small_instance() -> MeasurementMatrix {
    generate(&EnsembleSpec::new(12, 0.5, Normalization::Raw, 1).unwrap()).unwrap()
}

fn emc_stationarity() -> Outcome {
    let a = small_instance();
    let spectra = enumerate_spectra(&a, 3).map_err(|e| e.to_string())?;
    let mut detail = Vec::new();
    let mut worst: f64 = 0.0;
    for (branch, mu) in [(Branch::Min, 2.5), (Branch::Max, -2.5)] {
        let ladder = Ladder::new(branch, vec![mu], 1).unwrap();
        let r = run(&a, 3, &ladder, &EmcOptions::new(1_000_000, 1)).map_err(|e| e.to_string())?;
        let h = &r.histograms[0];
        let mut p = vec![0.0; h.grid.count];
        for &(lo, hi) in &spectra {
            let l = if branch == Branch::Min { lo } else { hi };
            let b = h.grid.index(l).ok_or("exact eigenvalue outside the histogram grid")?;
            p[b] += (-12.0 * mu * l / 2.0).exp();
        }
        let z: f64 = p.iter().sum();
        let n = h.total_samples as f64;
        let tv = 0.5
            * h.counts
                .iter()
                .zip(&p)
                .map(|(&c, &q)| (c as f64 / n - q / z).abs())
                .sum::<f64>();
        worst = worst.max(tv);
        detail.push(format!("{branch}: {tv:.4}"));
    }
    check(worst < 0.02, format!("total variation {}", detail.join(", ")))
}

fn wham_oracle() -> Outcome {
    let a = small_instance();
    let mut detail = Vec::new();
    let mut ok = true;
    for branch in [Branch::Min, Branch::Max] {
        let exact = enumerate_exact(&a, 3, branch, BinGrid::default()).map_err(|e| e.to_string())?;
        let ladder = Ladder::geometric(branch, 0.0, 6.0, 8, 1).unwrap();
        let r = run(&a, 3, &ladder, &EmcOptions::new(200_000, 1)).map_err(|e| e.to_string())?;
        let sol = wham_solve(&r.histograms, branch, 12, 3, &WhamOptions::default()).map_err(|e| e.to_string())?;
        if sol.dos.grid != exact.dos.grid {
            return Err("sampled and enumerated grids differ".into());
        }
        let mut worst: f64 = 0.0;
        let mut bins = 0;
        for b in 0..sol.dos.grid.count {
            if sol.dos.samples[b] >= 100 {
                worst = worst.max((sol.dos.log_counts[b] - exact.dos.log_counts[b]).abs() / 12.0);
                bins += 1;
            }
        }
        let f0 = free_entropy_from_dos(&sol.dos, 0.0).map_err(|e| e.to_string())?.value;
        let f_err = (f0 - 220f64.ln() / 12.0).abs();
        ok &= worst < 0.05 && f_err < 1e-3 && bins > 0;
        detail.push(format!(
            "{branch}: max |dSigma| = {worst:.4} on {bins} bins, phi(0) = {f0:.5}"
        ));
    }
    check(ok, detail.join("; "))
}

fn desk_scale_reproduction() -> Outcome {
    let (alpha, rho, n, s) = (0.5, 0.125, 64, 8);
    let a = generate(&EnsembleSpec::new(n, alpha, Normalization::Raw, 1).unwrap()).unwrap();
    let rs = solver();
    let plateau = binary_entropy(rho);
    let (e_lo, e_hi) = mp_support_edges(alpha, rho).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for (branch, top) in [(Branch::Min, 4.0), (Branch::Max, 2.0)] {
        let curve = trace_branch(&rs, alpha, rho, branch, &RicOptions::default()).map_err(|e| e.to_string())?;
        let ladder = Ladder::geometric(branch, 0.0, top, 12, 1).unwrap();
        let r = run(&a, s, &ladder, &EmcOptions::new(20_000, 1)).map_err(|e| e.to_string())?;
        let opts = WhamOptions::default();
        let sol = wham_solve(&r.histograms, branch, n, s, &opts).map_err(|e| e.to_string())?;
        let se = bootstrap_entropy_errors(&r.block_counts, ladder.mus(), sol.dos.grid, branch, n, s, 50, 1, &opts)
            .map_err(|e| e.to_string())?;
        let sigma = sol.dos.entropy();
        let mut violations = 0;
        let mut bins = 0;
        let mut peak = (f64::NAN, f64::NEG_INFINITY);
        for b in 0..sigma.len() {
            if sol.dos.samples[b] < 100 {
                continue;
            }
            bins += 1;
            let l = sol.dos.grid.center(b);
            if sigma[b] > peak.1 {
                peak = (l, sigma[b]);
            }
            let bound = entropy_at_lambda(&curve, plateau, l).unwrap_or(f64::NEG_INFINITY);
            let err = if se[b].is_finite() { se[b] } else { 0.0 };
            if sigma[b] > bound + 2.0 * err {
                violations += 1;
            }
        }
        let inside = peak.0 > e_lo && peak.0 < e_hi;
        ok &= violations == 0 && inside && bins > 0;
        detail.push(format!(
            "{branch}: {violations}/{bins} bins above RS + 2se, peak at lambda = {:.3}",
            peak.0
        ));
    }
    check(ok, format!("{}; edges ({e_lo:.3}, {e_hi:.3})", detail.join("; ")))
}

fn ric_ordering() -> Outcome {
    let est = ric(0.5, 0.1, &RicOptions::default()).map_err(|e| e.to_string())?;
    let (zmin, zmax) = ric_core::ric::zero_points(0.5, 0.1, &RicOptions::default()).map_err(|e| e.to_string())?;
    let ok = est.delta_max > 1.0944
        && (0.0..=1.0).contains(&est.delta_min)
        && zmin.sigma.abs() < 1e-4
        && zmax.sigma.abs() < 1e-4;
    check(
        ok,
        format!(
            "delta_min = {:.4}, delta_max = {:.4}, Sigma at zero-points {:.1e} / {:.1e}",
            est.delta_min, est.delta_max, zmin.sigma, zmax.sigma
        ),
    )
}

fn phase_nesting() -> Outcome {
    let alphas: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let boundaries = phase_diagram(&alphas, &RecoveryCondition::ALL, &PhaseOptions::default());
    let get = |c: RecoveryCondition| -> Result<Vec<f64>, String> {
        let b = boundaries.iter().find(|b| b.condition == c).unwrap();
        if let Some((alpha, e)) = b.failures.first() {
            return Err(format!("{c} at alpha = {alpha}: {e}"));
        }
        Ok(b.points.iter().map(|p| p.1).collect())
    };
    let (l0, sym, asym) = (
        get(RecoveryCondition::L0)?,
        get(RecoveryCondition::L1Symmetric)?,
        get(RecoveryCondition::L1Asymmetric)?,
    );
    let nested = (0..alphas.len()).all(|i| sym[i] <= asym[i] && asym[i] <= l0[i]);
    let monotone = [&l0, &sym, &asym].iter().all(|v| v.windows(2).all(|w| w[1] >= w[0]));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(" ");
    check(
        nested && monotone,
        format!(
            "nested {nested}, monotone {monotone}; l0 [{}] l1_sym [{}] l1_asym [{}]",
            fmt(&l0),
            fmt(&sym),
            fmt(&asym)
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 MP-edge limit", mp_edges),
        ("2 zero-bias entropy", zero_bias_entropy),
        ("3 saddle residuals", saddle_residuals),
        ("4 envelope vs finite differences", envelope),
        ("5 Xi-limit oracle", xi_oracle),
        ("6 EMC stationarity oracle", emc_stationarity),
        ("7 WHAM oracle", wham_oracle),
        ("8 desk-scale entropy curves", desk_scale_reproduction),
        ("9 RIC ordering", ric_ordering),
        ("10 phase-diagram nesting", phase_nesting),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !filter.is_empty() && !filter.iter().any(|p| name.contains(p.as_str())) {
            continue;
        }
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {name} ({secs:.1}s): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name} ({secs:.1}s): {d}");
            }
        }
    }
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
