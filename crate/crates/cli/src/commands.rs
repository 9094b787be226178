use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use ric_core::dos::{
    bootstrap_entropy_errors, entropy_curve_from_dos, enumerate_exact, free_entropy_from_dos, read_dos, wham_solve,
    write_dos, WhamOptions,
};
use ric_core::emc::{
    read_blocks, read_histogram, run, write_blocks, write_histogram, BinGrid, EmcOptions, HistogramRecord, Ladder,
};
use ric_core::ensemble::{generate, mp_support_edges, EnsembleSpec, MeasurementMatrix, Normalization};
use ric_core::plot;
use ric_core::ric::{self, ric_table, write_phase_csv, write_ric_csv, PhaseOptions, RecoveryCondition, RicOptions};
use ric_core::rs::{mu_grid, read_curve_csv, write_curve_csv, RsParams, RsSolver, SolverOptions};
use ric_core::Branch;

use crate::config::{comment_value, RunConfig};
use crate::output::{relative_to, Output};
use crate::CliError;

const SOLVER_KEYS: [&str; 4] = ["quad_nodes", "damping", "tol", "max_iter"];

fn with_solver<'a>(keys: &[&'a str]) -> Vec<&'a str> {
    keys.iter().copied().chain(SOLVER_KEYS).collect()
}

fn solver_options(cfg: &RunConfig) -> Result<SolverOptions, CliError> {
    Ok(SolverOptions {
        tol: cfg.f64("tol")?,
        max_iter: cfg.usize("max_iter")?,
        quad_nodes: cfg.usize("quad_nodes")?,
        damping: cfg.f64("damping")?,
    })
}

fn binary_entropy(r: f64) -> f64 {
    -r * r.ln() - (1.0 - r) * (1.0 - r).ln()
}

/// `steps` evenly spaced values from `lo` to `hi`.
fn linear_grid(lo: f64, hi: f64, steps: usize, what: &str) -> Result<Vec<f64>, CliError> {
    match steps {
        0 => Err(CliError::Config(format!("empty {what} grid"))),
        1 => Ok(vec![lo]),
        _ if hi < lo => Err(CliError::Config(format!("{what} grid has max < min"))),
        _ => Ok((0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect()),
    }
}

pub fn rs_curve(cfg: &RunConfig) -> Result<(), CliError> {
    let keys = with_solver(&["alpha", "rho", "mu_min", "mu_max", "mu_steps"]);
    let (alpha, rho) = (cfg.f64("alpha")?, cfg.f64("rho")?);
    RsParams::new(alpha, rho, 1.0)?;
    let steps = cfg.usize("mu_steps")?;
    if steps == 0 {
        return Err(CliError::Config("empty mu grid (mu_steps = 0)".into()));
    }
    let solver = RsSolver::new(solver_options(cfg)?)?;
    let mut points = Vec::new();
    let mut failures = Vec::new();
    for branch in [Branch::Min, Branch::Max] {
        let grid = mu_grid(branch, cfg.f64("mu_min")?, cfg.f64("mu_max")?, steps)?;
        for (mu, p) in solver.trace(alpha, rho, &grid)? {
            match p {
                Ok(p) => points.push(p),
                Err(e) => {
                    eprintln!("ric: mu = {mu}: {e}");
                    failures.push(mu);
                }
            }
        }
    }
    let out = Output::new(cfg, "rs-curve", &keys)?;
    let mut w = out.create("rs_curve.csv")?;
    write_curve_csv(&mut w, &out.comments(), &points)?;
    w.flush()?;
    out.write_text(
        "rs_curve.gp",
        &plot::entropy_curve_script(
            "rs_curve.csv",
            "rs_curve.png",
            &format!("RS entropy, alpha = {alpha}, rho = {rho}"),
        ),
    )?;
    let sigma_max = points.iter().map(|p| p.sigma).fold(f64::NEG_INFINITY, f64::max);
    let total = 2 * steps;
    out.manifest(
        cfg,
        &[
            ("points".into(), points.len().to_string()),
            ("failures".into(), failures.len().to_string()),
            (
                "failed_mu".into(),
                failures.iter().map(|m| format!("{m:e}")).collect::<Vec<_>>().join(","),
            ),
            ("sigma_max".into(), format!("{sigma_max:e}")),
        ],
    )?;
    if failures.len() * 10 > total {
        return Err(CliError::Numerical(format!(
            "{} of {total} mu points failed",
            failures.len()
        )));
    }
    Ok(())
}

pub fn ric(cfg: &RunConfig) -> Result<(), CliError> {
    let keys = with_solver(&["alpha", "rho_min", "rho_max", "rho_steps"]);
    let alpha = cfg.f64("alpha")?;
    let rhos = linear_grid(cfg.f64("rho_min")?, cfg.f64("rho_max")?, cfg.usize("rho_steps")?, "rho")?;
    if let Some(bad) = rhos.iter().find(|&&r| !(r > 0.0 && r < alpha)) {
        return Err(CliError::Config(format!("rho = {bad} outside (0, alpha = {alpha})")));
    }
    let opts = RicOptions {
        solver: solver_options(cfg)?,
        ..RicOptions::default()
    };
    let mut rows = Vec::new();
    let mut failed = Vec::new();
    for (rho, r) in rhos.iter().zip(ric_table(alpha, &rhos, &opts)) {
        match r {
            Ok(e) => rows.push(e),
            Err(e) => {
                eprintln!("ric: rho = {rho}: {e}");
                failed.push(*rho);
            }
        }
    }
    let out = Output::new(cfg, "ric", &keys)?;
    let mut w = out.create("ric.csv")?;
    write_ric_csv(&mut w, &out.comments(), &rows)?;
    w.flush()?;
    out.write_text(
        "ric.gp",
        &plot::ric_script("ric.csv", "ric.png", &format!("RICs at alpha = {alpha}")),
    )?;
    out.manifest(
        cfg,
        &[
            ("rows".into(), rows.len().to_string()),
            (
                "failed_rho".into(),
                failed.iter().map(|r| format!("{r:e}")).collect::<Vec<_>>().join(","),
            ),
        ],
    )?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Numerical(format!(
            "{} of {} rho values failed",
            failed.len(),
            rhos.len()
        )))
    }
}

pub fn phase_diagram(cfg: &RunConfig) -> Result<(), CliError> {
    let keys = with_solver(&["alpha_min", "alpha_max", "alpha_steps"]);
    let alphas = linear_grid(
        cfg.f64("alpha_min")?,
        cfg.f64("alpha_max")?,
        cfg.usize("alpha_steps")?,
        "alpha",
    )?;
    if let Some(bad) = alphas.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
        return Err(CliError::Config(format!("alpha = {bad} outside (0, 1]")));
    }
    let opts = PhaseOptions {
        ric: RicOptions {
            solver: solver_options(cfg)?,
            ..RicOptions::default()
        },
        ..PhaseOptions::default()
    };
    let boundaries = ric::phase_diagram(&alphas, &RecoveryCondition::ALL, &opts);
    let mut results = Vec::new();
    for b in &boundaries {
        for (alpha, e) in &b.failures {
            eprintln!("ric: {} at alpha = {alpha}: {e}", b.condition);
        }
        if b.points.windows(2).any(|w| w[1].1 < w[0].1) {
            log::warn!("{} boundary is not monotone in alpha", b.condition);
        }
        results.push((
            format!("failed_alpha_{}", b.condition),
            b.failures.iter().map(|f| f.0.to_string()).collect::<Vec<_>>().join(","),
        ));
    }
    let out = Output::new(cfg, "phase-diagram", &keys)?;
    let mut w = out.create("phase.csv")?;
    write_phase_csv(&mut w, &out.comments(), &boundaries)?;
    w.flush()?;
    out.write_text(
        "phase.gp",
        &plot::phase_script("phase.csv", "phase.png", "Recovery boundaries"),
    )?;
    out.manifest(cfg, &results)
}

fn measurement_matrix(cfg: &RunConfig) -> Result<MeasurementMatrix, CliError> {
    let path = cfg.text("matrix");
    let a = if path.is_empty() {
        if cfg.text("matrix_seed") == "auto" {
            return Err(CliError::Config(
                "--seed is required to generate the measurement matrix".into(),
            ));
        }
        let norm: Normalization = cfg.text("normalization").parse()?;
        generate(&EnsembleSpec::new(
            cfg.usize("N")?,
            cfg.f64("alpha")?,
            norm,
            cfg.seed("matrix_seed")?,
        )?)?
    } else {
        MeasurementMatrix::read_from(Path::new(path))?
    };
    if a.n_cols() != cfg.usize("N")? {
        return Err(CliError::Config(format!(
            "matrix has {} columns but N = {}",
            a.n_cols(),
            cfg.text("N")
        )));
    }
    Ok(a)
}

fn grid(cfg: &RunConfig) -> Result<BinGrid, CliError> {
    Ok(BinGrid::uniform(
        cfg.f64("bin_lo")?,
        cfg.f64("bin_hi")?,
        cfg.usize("bins")?,
    )?)
}

const EMC_KEYS: [&str; 18] = [
    "alpha",
    "N",
    "S",
    "seed",
    "matrix_seed",
    "normalization",
    "matrix",
    "branch",
    "mu_lo",
    "mu_hi",
    "rungs",
    "sweeps",
    "burn_in",
    "exchange_interval",
    "bins",
    "bin_lo",
    "bin_hi",
    "blocks",
];

pub fn emc(cfg: &RunConfig) -> Result<(), CliError> {
    let seed = cfg.seed("seed")?;
    let a = measurement_matrix(cfg)?;
    let branch: Branch = cfg.text("branch").parse()?;
    let s = cfg.usize("S")?;
    let ladder = Ladder::geometric(
        branch,
        cfg.f64("mu_lo")?,
        cfg.f64("mu_hi")?,
        cfg.usize("rungs")?,
        cfg.usize("exchange_interval")?,
    )?;
    let opts = EmcOptions {
        sweeps: cfg.usize("sweeps")?,
        burn_in: cfg.usize("burn_in")?,
        grid: grid(cfg)?,
        seed,
        blocks: cfg.usize("blocks")?,
    };
    let r = run(&a, s, &ladder, &opts)?;
    let out = Output::new(cfg, "emc", &EMC_KEYS)?;
    let comments = out.comments();
    for (h, blocks) in r.histograms.iter().zip(&r.block_counts) {
        let rec = HistogramRecord {
            histogram: h.clone(),
            n_cols: a.n_cols(),
            subset_size: s,
            branch,
        };
        let mut w = out.create(&format!("hist_rung_{:02}.csv", h.rung))?;
        write_histogram(&mut w, &comments, &rec)?;
        w.flush()?;
        let mut w = out.create(&format!("blocks_rung_{:02}.csv", h.rung))?;
        write_blocks(&mut w, &comments, &h.grid, blocks)?;
        w.flush()?;
    }
    let mut results = r.summary();
    for i in r.weak_exchanges(0.1) {
        results.push((format!("weak_exchange_{i}"), format!("{:.4}", r.exchange_acceptance[i])));
    }
    out.manifest(cfg, &results)
}

/// Expands directories to their `hist_rung_*.csv` files, sorted by name.
fn histogram_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    f.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("hist_rung_") && n.ends_with(".csv"))
                })
                .collect();
            if found.is_empty() {
                return Err(CliError::Config(format!("no hist_rung_*.csv in {}", p.display())));
            }
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

fn open(p: &Path) -> Result<BufReader<File>, CliError> {
    File::open(p)
        .map(BufReader::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

pub fn wham(cfg: &RunConfig, inputs: &[PathBuf]) -> Result<(), CliError> {
    let paths = histogram_paths(inputs)?;
    let mut hists = Vec::new();
    let mut source = Vec::new();
    let mut meta = None;
    for (rung, p) in paths.iter().enumerate() {
        let (comments, rec) = read_histogram(open(p)?, rung)?;
        let key = (rec.n_cols, rec.subset_size, rec.branch);
        match meta {
            None => {
                meta = Some(key);
                source = comments;
            }
            Some(m) if m != key => {
                return Err(CliError::Config(format!(
                    "{} has (N, S, branch) different from the first input",
                    p.display()
                )))
            }
            _ => {}
        }
        hists.push(rec.histogram);
    }
    let (n, s, branch) = meta.expect("at least one input");
    let opts = WhamOptions {
        tol: cfg.f64("wham_tol")?,
        ..WhamOptions::default()
    };
    let sol = wham_solve(&hists, branch, n, s, &opts)?;
    let out = Output::new(cfg, "wham", &["wham_tol", "bootstrap"])?;
    let mut comments = out.comments();
    comments.extend(source.iter().map(|c| format!("source: {c}")));

    let mut w = out.create(&format!("dos_{branch}.csv"))?;
    write_dos(&mut w, &comments, &sol.dos)?;
    w.flush()?;

    let curve = entropy_curve_from_dos(&sol.dos, 101)?;
    let mut w = out.create(&format!("entropy_{branch}.csv"))?;
    for c in &comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "route,lambda,sigma")?;
    for (route, pts) in [("direct", &curve.direct), ("legendre", &curve.legendre)] {
        for (l, s) in pts.iter() {
            writeln!(w, "{route},{l:e},{s:e}")?;
        }
    }
    w.flush()?;

    let resamples = cfg.usize("bootstrap")?;
    if resamples > 0 {
        let seed = cfg.seed("seed")?;
        let mut blocks = Vec::new();
        for p in &paths {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let sibling = p.with_file_name(name.replacen("hist_rung_", "blocks_rung_", 1));
            if sibling == *p || !sibling.exists() {
                return Err(CliError::Config(format!("no block file next to {}", p.display())));
            }
            let (grid, b) = read_blocks(open(&sibling)?)?;
            if grid.count != sol.dos.grid.count {
                return Err(CliError::Config(format!(
                    "{} is on a different grid",
                    sibling.display()
                )));
            }
            blocks.push(b);
        }
        let mus: Vec<f64> = hists.iter().map(|h| h.mu).collect();
        let se = bootstrap_entropy_errors(&blocks, &mus, sol.dos.grid, branch, n, s, resamples, seed, &opts)?;
        let sigma = sol.dos.entropy();
        let mut w = out.create(&format!("dos_{branch}_errors.csv"))?;
        for c in &comments {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "lambda,sigma,std_err,samples")?;
        for b in 0..sigma.len() {
            if sol.dos.samples[b] > 0 {
                writeln!(
                    w,
                    "{:e},{:e},{:e},{}",
                    sol.dos.grid.center(b),
                    sigma[b],
                    se[b],
                    sol.dos.samples[b]
                )?;
            }
        }
        w.flush()?;
    }

    let phi0 = free_entropy_from_dos(&sol.dos, 0.0)?.value;
    let min_samples = cfg.usize("min_samples")? as u64;
    let supported = sol.dos.support_mask(min_samples).iter().filter(|&&m| m).count();
    out.manifest(
        cfg,
        &[
            (
                "inputs".into(),
                paths
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("iterations".into(), sol.iters.to_string()),
            ("phi_at_zero".into(), format!("{phi0:e}")),
            ("supported_bins".into(), supported.to_string()),
            (
                "rung_free_entropies".into(),
                sol.free_entropies
                    .iter()
                    .map(|f| format!("{f:e}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ],
    )
}

pub fn oracle(cfg: &RunConfig) -> Result<(), CliError> {
    let keys = [
        "alpha",
        "N",
        "S",
        "matrix_seed",
        "normalization",
        "matrix",
        "bins",
        "bin_lo",
        "bin_hi",
    ];
    let a = measurement_matrix(cfg)?;
    let s = cfg.usize("S")?;
    let grid = grid(cfg)?;
    let out = Output::new(cfg, "oracle", &keys)?;
    let mut results = Vec::new();
    let mut stars = (f64::NAN, f64::NAN);
    for branch in [Branch::Min, Branch::Max] {
        let e = enumerate_exact(&a, s, branch, grid)?;
        let mut w = out.create(&format!("dos_exact_{branch}.csv"))?;
        write_dos(&mut w, &out.comments(), &e.dos)?;
        w.flush()?;
        stars = (e.lambda_min_star, e.lambda_max_star);
        results.push(("subsets".to_string(), e.subsets.to_string()));
    }
    results.dedup();
    results.push(("lambda_min_star".into(), format!("{:e}", stars.0)));
    results.push(("lambda_max_star".into(), format!("{:e}", stars.1)));
    results.push(("delta_min".into(), format!("{:e}", 1.0 - stars.0)));
    results.push(("delta_max".into(), format!("{:e}", stars.1 - 1.0)));
    out.manifest(cfg, &results)
}

pub fn compare(cfg: &RunConfig, rs_csv: &Path, dos_csv: &Path) -> Result<(), CliError> {
    let (rs_comments, points) = read_curve_csv(open(rs_csv)?)?;
    let (dos_comments, dos) = read_dos(open(dos_csv)?)?;
    let num = |comments: &[String], key: &str, file: &Path| -> Result<f64, CliError> {
        comment_value(comments, key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| CliError::Config(format!("{} does not record {key}", file.display())))
    };
    let alpha = num(&rs_comments, "alpha", rs_csv)?;
    let rho = num(&rs_comments, "rho", rs_csv)?;
    let dos_alpha = num(&dos_comments, "alpha", dos_csv)?;
    let dos_rho = dos.subset_size as f64 / dos.n_cols as f64;
    if (alpha - dos_alpha).abs() > 1e-12 || (rho - dos_rho).abs() > 1e-12 {
        return Err(CliError::Config(format!(
            "mismatched inputs: RS curve at (alpha, rho) = ({alpha}, {rho}), density of states at ({dos_alpha}, {dos_rho})"
        )));
    }
    let mut branch_points: Vec<_> = points
        .into_iter()
        .filter(|p| dos.branch.admits(p.mu) && p.mu != 0.0)
        .collect();
    if branch_points.is_empty() {
        return Err(CliError::Config(format!(
            "RS curve has no points on the {} branch",
            dos.branch
        )));
    }
    branch_points.sort_by(|a, b| a.mu.abs().total_cmp(&b.mu.abs()));
    let out = Output::new(cfg, "compare", &[])?;
    let mut comments = vec![out.comments()[0].clone()];
    comments.push(format!(
        "alpha={alpha} rho={rho} rs={} dos={}",
        rs_csv.display(),
        dos_csv.display()
    ));
    let name = format!("comparison_{}.csv", dos.branch);
    let mut w = out.create(&name)?;
    plot::write_comparison_csv(&mut w, &comments, &dos, &branch_points, binary_entropy(rho))?;
    w.flush()?;
    let rs_abs = fs::canonicalize(rs_csv).unwrap_or_else(|_| rs_csv.to_path_buf());
    let edges = mp_support_edges(alpha, rho)?;
    out.write_text(
        &format!("compare_{}.gp", dos.branch),
        &plot::comparison_script(
            &relative_to(&cfg.output_dir(), &rs_abs),
            &name,
            &format!("compare_{}.png", dos.branch),
            edges,
            &format!("Entropy, alpha = {alpha}, rho = {rho}"),
        ),
    )?;
    out.manifest(
        cfg,
        &[
            ("rs_csv".into(), rs_csv.display().to_string()),
            ("dos_csv".into(), dos_csv.display().to_string()),
            ("mp_edges".into(), format!("{:e},{:e}", edges.0, edges.1)),
        ],
    )
}
