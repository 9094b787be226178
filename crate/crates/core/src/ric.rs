//! RICs from entropy-curve zero-points, and recovery phase boundaries.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::roots::brent;
use crate::rs::{RsParams, RsPoint, RsSolver, SolverOptions};
use crate::{Branch, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RicOptions {
    pub solver: SolverOptions,
    /// `|mu|` of the first continuation point.
    pub mu_start: f64,
    /// Ratio between successive `|mu|` while searching for `Sigma < 0`.
    pub growth: f64,
    /// Give up looking for a zero crossing beyond this `|mu|`.
    pub mu_limit: f64,
    /// Target `|Sigma|` at the refined zero-point.
    pub sigma_tol: f64,
}

impl Default for RicOptions {
    fn default() -> Self {
        RicOptions {
            solver: SolverOptions::default(),
            mu_start: 1e-3,
            growth: 1.3,
            mu_limit: 1e5,
            sigma_tol: 1e-9,
        }
    }
}

/// Refined zero of `Sigma` on one branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZeroPoint {
    pub branch: Branch,
    pub lambda: f64,
    pub mu: f64,
    pub sigma: f64,
    /// `lambda` at the two ends of the final `mu` bracket.
    pub lambda_bracket: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RicEstimate {
    pub alpha: f64,
    pub rho: f64,
    pub lambda_star_min: f64,
    pub lambda_star_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_sym: f64,
}

impl RicEstimate {
    /// RICs from the extreme attainable eigenvalues. `lambda_star_min` below
    /// zero (or rank deficiency) caps `delta_min` at one.
    pub fn from_zero_points(alpha: f64, rho: f64, lambda_star_min: f64, lambda_star_max: f64) -> Self {
        let delta_min = (1.0 - lambda_star_min.max(0.0)).min(1.0);
        let delta_max = lambda_star_max - 1.0;
        RicEstimate {
            alpha,
            rho,
            lambda_star_min,
            lambda_star_max,
            delta_min,
            delta_max,
            delta_sym: delta_min.max(delta_max),
        }
    }
}

/// Below this `lambda` the minimum-eigenvalue branch is treated as reaching zero.
pub const LAMBDA_FLOOR: f64 = 1e-5;

/// Follows one branch from small `|mu|` until `Sigma` turns negative, or on
/// the minimum branch until `lambda` drops below [`LAMBDA_FLOOR`] with `Sigma`
/// still positive.
pub fn trace_branch(
    solver: &RsSolver,
    alpha: f64,
    rho: f64,
    branch: Branch,
    opts: &RicOptions,
) -> Result<Vec<RsPoint>> {
    if !(opts.growth > 1.0 && opts.mu_start > 0.0) {
        return Err(Error::invalid("continuation needs growth > 1 and mu_start > 0"));
    }
    let s = branch.sign();
    let params = RsParams::new(alpha, rho, s * opts.mu_start)?;
    let first = solver.rs_point(&params, &crate::rs::SaddlePoint::initial(&params))?;
    let mut curve = vec![first];
    let mut log_step = opts.growth.ln();
    while curve.last().unwrap().sigma > 0.0 {
        let last = *curve.last().unwrap();
        if branch == Branch::Min && last.lambda < LAMBDA_FLOOR {
            break;
        }
        let mu = last.mu * log_step.exp();
        if mu.abs() > opts.mu_limit {
            return Err(Error::Unbracketed {
                lambda: last.lambda,
                sigma: last.sigma,
            });
        }
        let params = RsParams::new(alpha, rho, mu)?;
        match solver.rs_point(&params, &floor_overlap(&last)) {
            Ok(p) => {
                // saturated branch: Sigma levels off above zero
                let stalled =
                    (p.sigma - last.sigma).abs() < 1e-9 && (p.lambda - last.lambda).abs() < 1e-9 * p.lambda.max(1.0);
                curve.push(p);
                if stalled && p.sigma > 0.0 {
                    return Err(Error::Unbracketed {
                        lambda: p.lambda,
                        sigma: p.sigma,
                    });
                }
                log_step = (log_step * 1.5).min(opts.growth.ln());
            }
            Err(e) => {
                log_step *= 0.25;
                if log_step < 1e-6 {
                    log::debug!("branch {branch} stopped at mu = {mu}: {e}");
                    return Err(Error::Unbracketed {
                        lambda: last.lambda,
                        sigma: last.sigma,
                    });
                }
            }
        }
    }
    Ok(curve)
}

fn floor_overlap(p: &RsPoint) -> crate::rs::SaddlePoint {
    let mut sp = p.saddle;
    sp.q = sp.q.max(1e-6);
    sp
}

/// Index `i` such that `Sigma` changes sign between `curve[i]` and `curve[i + 1]`
/// (points ordered by increasing `|mu|`).
fn crossing(curve: &[RsPoint]) -> Option<usize> {
    curve
        .windows(2)
        .position(|w| w[0].sigma >= 0.0 && w[1].sigma <= 0.0 && !(w[0].sigma == 0.0 && w[1].sigma == 0.0))
}

/// `lambda` where the tabulated curve crosses `Sigma = 0`, by linear
/// interpolation in `(Sigma, lambda)` between the bracketing points.
pub fn entropy_zero_point(curve: &[RsPoint], branch: Branch) -> Result<f64> {
    if curve.iter().any(|p| !branch.admits(p.mu)) {
        return Err(Error::invalid(format!("curve contains points off the {branch} branch")));
    }
    let mut sorted = curve.to_vec();
    sorted.sort_by(|a, b| a.mu.abs().partial_cmp(&b.mu.abs()).unwrap());
    if let Some(p) = sorted.iter().find(|p| p.sigma == 0.0) {
        return Ok(p.lambda);
    }
    let i = crossing(&sorted).ok_or_else(|| {
        let last = sorted
            .last()
            .map(|p| (p.lambda, p.sigma))
            .unwrap_or((f64::NAN, f64::NAN));
        Error::Unbracketed {
            lambda: last.0,
            sigma: last.1,
        }
    })?;
    let (a, b) = (sorted[i], sorted[i + 1]);
    let t = a.sigma / (a.sigma - b.sigma);
    Ok(a.lambda + t * (b.lambda - a.lambda))
}

/// Zero-point refined by a bracketed root search on `mu`, re-solving the saddle point.
pub fn refine_zero_point(
    solver: &RsSolver,
    alpha: f64,
    rho: f64,
    curve: &[RsPoint],
    branch: Branch,
    opts: &RicOptions,
) -> Result<ZeroPoint> {
    let i = crossing(curve).ok_or_else(|| {
        let last = curve
            .last()
            .map(|p| (p.lambda, p.sigma))
            .unwrap_or((f64::NAN, f64::NAN));
        Error::Unbracketed {
            lambda: last.0,
            sigma: last.1,
        }
    })?;
    let (a, b) = (curve[i], curve[i + 1]);
    let mut best = if a.sigma.abs() < b.sigma.abs() { a } else { b };
    // ends of the current sign-change bracket, for the reported lambda range
    let mut pos = a;
    let mut neg = b;
    let mut sigma_of = |mu: f64| -> Result<f64> {
        let params = RsParams::new(alpha, rho, mu)?;
        let start = if (mu - pos.mu).abs() < (mu - neg.mu).abs() {
            pos
        } else {
            neg
        };
        let p = solver.rs_point(&params, &floor_overlap(&start))?;
        if p.sigma > 0.0 {
            pos = p;
        } else {
            neg = p;
        }
        if p.sigma.abs() < best.sigma.abs() {
            best = p;
        }
        Ok(p.sigma)
    };
    brent(
        &mut sigma_of,
        a.mu,
        b.mu,
        Some(a.sigma),
        Some(b.sigma),
        1e-13 * a.mu.abs(),
        opts.sigma_tol,
        200,
    )?;
    let lambda_bracket = if pos.lambda < neg.lambda {
        (pos.lambda, neg.lambda)
    } else {
        (neg.lambda, pos.lambda)
    };
    Ok(ZeroPoint {
        branch,
        lambda: best.lambda,
        mu: best.mu,
        sigma: best.sigma,
        lambda_bracket,
    })
}

/// Both zero-points at `(alpha, rho)`. A minimum branch that reaches
/// `lambda = 0` with positive entropy yields `lambda_star_min = 0`.
pub fn zero_points(alpha: f64, rho: f64, opts: &RicOptions) -> Result<(ZeroPoint, ZeroPoint)> {
    let solver = RsSolver::new(opts.solver)?;
    let mut out = Vec::with_capacity(2);
    for branch in [Branch::Min, Branch::Max] {
        let curve = trace_branch(&solver, alpha, rho, branch, opts)?;
        let last = *curve.last().unwrap();
        if last.sigma > 0.0 {
            out.push(ZeroPoint {
                branch,
                lambda: 0.0,
                mu: last.mu,
                sigma: last.sigma,
                lambda_bracket: (0.0, last.lambda),
            });
        } else {
            out.push(refine_zero_point(&solver, alpha, rho, &curve, branch, opts)?);
        }
    }
    Ok((out[0], out[1]))
}

/// RS estimate of the RICs at `(alpha, rho)`.
pub fn ric(alpha: f64, rho: f64, opts: &RicOptions) -> Result<RicEstimate> {
    if !(rho > 0.0 && rho < alpha && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < rho < alpha <= 1, got alpha = {alpha}, rho = {rho}"
        )));
    }
    let (zmin, zmax) = zero_points(alpha, rho, opts)?;
    Ok(RicEstimate::from_zero_points(alpha, rho, zmin.lambda, zmax.lambda))
}

/// RIC table over a `rho` grid at fixed `alpha`; entries fail independently.
pub fn ric_table(alpha: f64, rhos: &[f64], opts: &RicOptions) -> Vec<Result<RicEstimate>> {
    #[cfg(feature = "parallel")]
    let it = rhos.par_iter();
    #[cfg(not(feature = "parallel"))]
    let it = rhos.iter();
    it.map(|&rho| ric(alpha, rho, opts)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RecoveryCondition {
    /// `delta_2S < 1`: the `S`-sparse solution is unique.
    L0,
    /// `delta_2S < sqrt(2) - 1`: l1 minimization recovers it.
    L1Symmetric,
    /// `(4 sqrt(2) - 3) delta_min + delta_max < 4 (sqrt(2) - 1)`.
    L1Asymmetric,
}

impl RecoveryCondition {
    pub const ALL: [RecoveryCondition; 3] = [
        RecoveryCondition::L0,
        RecoveryCondition::L1Symmetric,
        RecoveryCondition::L1Asymmetric,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RecoveryCondition::L0 => "l0",
            RecoveryCondition::L1Symmetric => "l1_sym",
            RecoveryCondition::L1Asymmetric => "l1_asym",
        }
    }
}

impl fmt::Display for RecoveryCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RecoveryCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "l0" => Ok(RecoveryCondition::L0),
            "l1_sym" | "l1_symmetric" => Ok(RecoveryCondition::L1Symmetric),
            "l1_asym" | "l1_asymmetric" => Ok(RecoveryCondition::L1Asymmetric),
            other => Err(Error::parse(format!("unknown recovery condition '{other}'"))),
        }
    }
}

/// Evaluates a recovery condition on the RICs of order `2S`.
pub fn recovery_condition(delta_min: f64, delta_max: f64, condition: RecoveryCondition) -> bool {
    let sqrt2 = std::f64::consts::SQRT_2;
    let sym = delta_min.max(delta_max);
    match condition {
        RecoveryCondition::L0 => sym < 1.0,
        RecoveryCondition::L1Symmetric => sym < sqrt2 - 1.0,
        RecoveryCondition::L1Asymmetric => (4.0 * sqrt2 - 3.0) * delta_min + delta_max < 4.0 * (sqrt2 - 1.0),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseBoundary {
    pub condition: RecoveryCondition,
    /// `(alpha, rho_star)`, sorted by `alpha`.
    pub points: Vec<(f64, f64)>,
    /// `alpha` values where the boundary could not be located.
    pub failures: Vec<(f64, String)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseOptions {
    pub ric: RicOptions,
    /// Relative bracket width `hi / lo - 1` at which the search on `rho` stops.
    pub rho_rel_tol: f64,
    /// Smallest `rho / alpha` probed.
    pub rho_floor: f64,
}

impl Default for PhaseOptions {
    fn default() -> Self {
        PhaseOptions {
            ric: RicOptions::default(),
            rho_rel_tol: 1e-3,
            rho_floor: 1e-8,
        }
    }
}

/// Largest `rho` (sparsity `S / N`) for which every condition holds with RICs
/// at sparsity `2 rho`, one entry per condition.
pub fn phase_point(alpha: f64, conditions: &[RecoveryCondition], opts: &PhaseOptions) -> Vec<Result<f64>> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return conditions
            .iter()
            .map(|_| Err(Error::invalid(format!("alpha must lie in (0, 1], got {alpha}"))))
            .collect();
    }
    let mut cache: HashMap<u64, Option<RicEstimate>> = HashMap::new();
    let mut ric_at = |rho: f64| -> Option<RicEstimate> {
        *cache
            .entry(rho.to_bits())
            .or_insert_with(|| match ric(alpha, 2.0 * rho, &opts.ric) {
                Ok(r) => Some(r),
                Err(e) => {
                    log::debug!("ric failed at alpha = {alpha}, rho = {}: {e}", 2.0 * rho);
                    None
                }
            })
    };
    // at 2 rho = alpha the 2S-column submatrices are rank deficient, so
    // delta_min = 1 and every condition fails there
    let rho_cap = 0.5 * alpha;
    conditions
        .iter()
        .map(|&cond| {
            let holds = |r: Option<RicEstimate>| r.is_some_and(|r| recovery_condition(r.delta_min, r.delta_max, cond));
            let mut hi = rho_cap;
            let mut lo = 0.5 * rho_cap;
            while !holds(ric_at(lo)) {
                hi = lo;
                lo *= 0.1;
                if lo < opts.rho_floor * alpha {
                    return Err(Error::invalid(format!(
                        "{cond} fails down to rho = {lo:e} at alpha = {alpha}"
                    )));
                }
            }
            while hi / lo - 1.0 > opts.rho_rel_tol {
                let mid = (lo * hi).sqrt();
                if holds(ric_at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(lo)
        })
        .collect()
}

/// Phase boundaries for several conditions over an `alpha` grid.
pub fn phase_diagram(alphas: &[f64], conditions: &[RecoveryCondition], opts: &PhaseOptions) -> Vec<PhaseBoundary> {
    let mut sorted = alphas.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    #[cfg(feature = "parallel")]
    let it = sorted.par_iter();
    #[cfg(not(feature = "parallel"))]
    let it = sorted.iter();
    let per_alpha: Vec<Vec<Result<f64>>> = it.map(|&a| phase_point(a, conditions, opts)).collect();

    conditions
        .iter()
        .enumerate()
        .map(|(k, &condition)| {
            let mut b = PhaseBoundary {
                condition,
                points: Vec::new(),
                failures: Vec::new(),
            };
            for (&alpha, row) in sorted.iter().zip(&per_alpha) {
                match &row[k] {
                    Ok(r) => b.points.push((alpha, *r)),
                    Err(e) => b.failures.push((alpha, e.to_string())),
                }
            }
            b
        })
        .collect()
}

pub fn phase_boundary(alphas: &[f64], condition: RecoveryCondition, opts: &PhaseOptions) -> PhaseBoundary {
    phase_diagram(alphas, &[condition], opts).remove(0)
}

pub const RIC_COLUMNS: [&str; 7] = [
    "alpha",
    "rho",
    "lambda_star_min",
    "lambda_star_max",
    "delta_min",
    "delta_max",
    "delta_sym",
];

pub fn write_ric_csv<W: Write>(mut w: W, comments: &[String], rows: &[RicEstimate]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", RIC_COLUMNS.join(","))?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            r.alpha, r.rho, r.lambda_star_min, r.lambda_star_max, r.delta_min, r.delta_max, r.delta_sym
        )?;
    }
    Ok(())
}

/// Phase-diagram CSV: one row per `alpha`, columns `l0, l1_sym, l1_asym`;
/// missing boundaries are written as `nan`.
pub fn write_phase_csv<W: Write>(mut w: W, comments: &[String], boundaries: &[PhaseBoundary]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "alpha,rho_star_l0,rho_star_l1_sym,rho_star_l1_asym")?;
    let mut alphas: Vec<f64> = boundaries
        .iter()
        .flat_map(|b| b.points.iter().map(|p| p.0).chain(b.failures.iter().map(|f| f.0)))
        .collect();
    alphas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    alphas.dedup();
    let lookup = |cond: RecoveryCondition, alpha: f64| -> String {
        boundaries
            .iter()
            .find(|b| b.condition == cond)
            .and_then(|b| b.points.iter().find(|p| p.0 == alpha))
            .map(|p| format!("{:e}", p.1))
            .unwrap_or_else(|| "nan".into())
    };
    for a in alphas {
        writeln!(
            w,
            "{a},{},{},{}",
            lookup(RecoveryCondition::L0, a),
            lookup(RecoveryCondition::L1Symmetric, a),
            lookup(RecoveryCondition::L1Asymmetric, a)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(mu: f64, lambda: f64, sigma: f64) -> RsPoint {
        RsPoint {
            mu,
            phi: sigma - 0.5 * mu * lambda,
            lambda,
            sigma,
            saddle: crate::rs::SaddlePoint {
                q: 0.0,
                chi: 0.1,
                q_hat: 1.0,
                q0_hat: 0.0,
                delta_hat: 0.1,
                k: 1.0,
            },
            residual_max: 0.0,
            iters: 1,
        }
    }

    #[test]
    fn interpolated_zero_point() {
        let curve = [point(-0.1, 2.5, 0.2), point(-0.2, 2.7, 0.0), point(-0.4, 2.9, -0.1)];
        assert_eq!(entropy_zero_point(&curve, Branch::Max).unwrap(), 2.7);
        let curve = [point(0.1, 0.3, 0.2), point(0.2, 0.1, -0.2)];
        assert!((entropy_zero_point(&curve, Branch::Min).unwrap() - 0.2).abs() < 1e-15);
        let flat = [point(0.1, 0.3, 0.2), point(0.2, 0.1, 0.1)];
        assert!(matches!(
            entropy_zero_point(&flat, Branch::Min),
            Err(Error::Unbracketed { .. })
        ));
        assert!(entropy_zero_point(&flat, Branch::Max).is_err());
    }

    #[test]
    fn delta_arithmetic() {
        let r = RicEstimate::from_zero_points(0.5, 0.1, 1.0, 1.0);
        assert_eq!((r.delta_min, r.delta_max, r.delta_sym), (0.0, 0.0, 0.0));
        let r = RicEstimate::from_zero_points(0.5, 0.1, -0.02, 3.0);
        assert_eq!(r.delta_min, 1.0);
        assert_eq!(r.delta_sym, 2.0);
        let r = RicEstimate::from_zero_points(0.5, 0.1, 0.3, 1.5);
        assert!((r.delta_min - 0.7).abs() < 1e-15 && (r.delta_sym - 0.7).abs() < 1e-15);
    }

    #[test]
    fn recovery_thresholds() {
        use RecoveryCondition::*;
        assert!(recovery_condition(0.41, 0.41, L1Symmetric));
        assert!(!recovery_condition(0.42, 0.42, L1Symmetric));
        assert!(!recovery_condition(0.2, 1.18, L1Asymmetric));
        assert!(recovery_condition(0.1, 1.3, L1Asymmetric));
        assert!(recovery_condition(0.999, 0.999, L0));
        assert!(!recovery_condition(1.0, 1.0, L0));
        for c in RecoveryCondition::ALL {
            assert_eq!(c.label().parse::<RecoveryCondition>().unwrap(), c);
        }
    }

    #[test]
    fn symmetric_l1_implies_asymmetric() {
        // (4 sqrt2 - 2)(sqrt2 - 1) < 4 (sqrt2 - 1)
        for i in 0..=100 {
            for j in 0..=100 {
                let (a, b) = (0.4142 * i as f64 / 100.0, 0.4142 * j as f64 / 100.0);
                if recovery_condition(a, b, RecoveryCondition::L1Symmetric) {
                    assert!(recovery_condition(a, b, RecoveryCondition::L1Asymmetric));
                }
            }
        }
    }

    #[test]
    fn ric_at_reference_point() {
        let opts = RicOptions::default();
        let solver = RsSolver::new(opts.solver).unwrap();
        let (zmin, zmax) = zero_points(0.5, 0.1, &opts).unwrap();
        assert!(zmin.sigma.abs() < 1e-4 && zmax.sigma.abs() < 1e-4);
        assert!(zmin.lambda_bracket.1 - zmin.lambda_bracket.0 < 1e-4);
        assert!(zmax.lambda_bracket.1 - zmax.lambda_bracket.0 < 1e-4);
        assert!(zmin.lambda >= 0.0 && zmin.lambda < 0.305_572);
        assert!(zmax.lambda > 2.094_427);
        let r = ric(0.5, 0.1, &opts).unwrap();
        assert!(r.delta_max > 1.0944);
        // the tabulated curve brackets the refined zero
        let curve = trace_branch(&solver, 0.5, 0.1, Branch::Max, &opts).unwrap();
        let coarse = entropy_zero_point(&curve, Branch::Max).unwrap();
        assert!((coarse - zmax.lambda).abs() < 1e-2);
        assert!(ric(0.5, 0.5, &opts).is_err());
    }

    #[test]
    fn csv_output() {
        let r = RicEstimate::from_zero_points(0.5, 0.1, 0.03, 3.7);
        let mut buf = Vec::new();
        write_ric_csv(&mut buf, &["x".into()], &[r]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# x\nalpha,rho,lambda_star_min"));
        let b = PhaseBoundary {
            condition: RecoveryCondition::L0,
            points: vec![(0.5, 0.2)],
            failures: vec![],
        };
        let mut buf = Vec::new();
        write_phase_csv(&mut buf, &[], &[b]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "alpha,rho_star_l0,rho_star_l1_sym,rho_star_l1_asym\n0.5,2e-1,nan,nan\n"
        );
    }
}
