//! Entropy curves `Sigma(lambda)` traced by continuation in `mu`.

use std::io::{BufRead, Write};

use super::saddle::{RsParams, RsSolver, SaddlePoint};
use crate::{Branch, Error, Result};

/// One sample of the entropy curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RsPoint {
    pub mu: f64,
    pub phi: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub saddle: SaddlePoint,
    pub residual_max: f64,
    pub iters: usize,
}

/// Warm starts never begin exactly on the `q = 0` fixed point, so a branch
/// with `q > 0` can be picked up once `q = 0` becomes unstable.
const WARM_Q_FLOOR: f64 = 1e-6;
/// Smallest `|mu|` of the internal ramp used when a grid starts far from zero.
const RAMP_START: f64 = 1e-3;
const RAMP_FACTOR: f64 = 1.4;

/// `steps` values of `mu` on `branch`, geometric in `|mu|` from `abs_min` to `abs_max`.
pub fn mu_grid(branch: Branch, abs_min: f64, abs_max: f64, steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("mu grid needs at least one point"));
    }
    if !(abs_min > 0.0 && abs_max >= abs_min && abs_max.is_finite()) {
        return Err(Error::invalid(format!("bad |mu| range [{abs_min}, {abs_max}]")));
    }
    let s = branch.sign();
    if steps == 1 {
        return Ok(vec![s * abs_min]);
    }
    let ratio = (abs_max / abs_min).ln() / (steps - 1) as f64;
    Ok((0..steps).map(|i| s * abs_min * (ratio * i as f64).exp()).collect())
}

/// Branch of a single-signed, strictly monotone grid without zero.
pub fn grid_branch(grid: &[f64]) -> Result<Branch> {
    let first = *grid.first().ok_or_else(|| Error::invalid("empty mu grid"))?;
    let branch = Branch::of_mu(first).ok_or_else(|| Error::invalid("mu grid contains 0"))?;
    if grid.iter().any(|&m| !m.is_finite() || !branch.admits(m)) {
        return Err(Error::invalid("mu grid must be finite and single-signed without 0"));
    }
    let up = grid.windows(2).all(|w| w[1] > w[0]);
    let down = grid.windows(2).all(|w| w[1] < w[0]);
    if !(up || down) {
        return Err(Error::invalid("mu grid must be strictly monotone"));
    }
    Ok(branch)
}

fn warm_start(prev: &SaddlePoint) -> SaddlePoint {
    SaddlePoint {
        q: prev.q.max(WARM_Q_FLOOR),
        ..*prev
    }
}

impl RsSolver {
    /// Solves the saddle point and evaluates `phi`, `lambda`, `Sigma` at `params`.
    pub fn rs_point(&self, params: &RsParams, init: &SaddlePoint) -> Result<RsPoint> {
        let sol = self.solve_saddle(params, init)?;
        let sp = sol.saddle;
        let residual_max = self
            .residuals(params, &sp)?
            .iter()
            .fold(0.0f64, |acc, r| acc.max(r.abs()));
        let phi = self.free_entropy(params, &sp)?;
        let lambda = RsSolver::lambda(params, &sp);
        if !(phi.is_finite() && lambda.is_finite()) {
            return Err(Error::NonFinite(format!("phi or lambda at mu = {}", params.mu)));
        }
        Ok(RsPoint {
            mu: params.mu,
            phi,
            lambda,
            sigma: phi + 0.5 * params.mu * lambda,
            saddle: sp,
            residual_max,
            iters: sol.iters,
        })
    }

    /// Saddle point suitable as a warm start at `mu`, ramping up from small `|mu|`.
    pub fn continuation_start(&self, alpha: f64, rho: f64, mu: f64) -> Result<SaddlePoint> {
        let p = RsParams::new(alpha, rho, mu)?;
        if mu.abs() <= 10.0 * RAMP_START {
            return Ok(SaddlePoint::initial(&p));
        }
        let from = mu.signum() * RAMP_START;
        let sp = SaddlePoint::initial(&RsParams::new(alpha, rho, from)?);
        self.ramp(alpha, rho, from, &sp, mu)
    }

    /// Continues a solution at `from` geometrically in `|mu|` up to (excluding) `to`.
    fn ramp(&self, alpha: f64, rho: f64, from: f64, sp: &SaddlePoint, to: f64) -> Result<SaddlePoint> {
        let mut m = from.abs();
        let mut sp = *sp;
        loop {
            m *= RAMP_FACTOR;
            if m >= to.abs() {
                return Ok(warm_start(&sp));
            }
            let params = RsParams::new(alpha, rho, to.signum() * m)?;
            sp = self.solve_saddle(&params, &warm_start(&sp))?.saddle;
        }
    }

    /// Entropy curve over `mu_grid` (one branch), continuing from small `|mu|`.
    /// Fails with the first solver failure.
    pub fn rs_curve(&self, alpha: f64, rho: f64, mu_grid: &[f64]) -> Result<Vec<RsPoint>> {
        self.trace(alpha, rho, mu_grid)?.into_iter().map(|(_, r)| r).collect()
    }

    /// Like [`rs_curve`](Self::rs_curve) but keeps going past failures,
    /// restarting from the last converged point. Results follow `mu_grid` order.
    pub fn trace(&self, alpha: f64, rho: f64, mu_grid: &[f64]) -> Result<Vec<(f64, Result<RsPoint>)>> {
        grid_branch(mu_grid)?;
        RsParams::new(alpha, rho, mu_grid[0])?;
        let mut order: Vec<usize> = (0..mu_grid.len()).collect();
        order.sort_by(|&i, &j| mu_grid[i].abs().partial_cmp(&mu_grid[j].abs()).unwrap());

        let mut out: Vec<Option<Result<RsPoint>>> = (0..mu_grid.len()).map(|_| None).collect();
        let mut last: Option<(f64, SaddlePoint)> = None;
        for &i in &order {
            let mu = mu_grid[i];
            let params = RsParams::new(alpha, rho, mu)?;
            let point = match &last {
                // big steps can jump out of the basin; retry through intermediate values
                Some((from, sp)) => self
                    .rs_point(&params, &warm_start(sp))
                    .or_else(|_| self.rs_point(&params, &self.ramp(alpha, rho, *from, sp, mu)?)),
                None => self
                    .continuation_start(alpha, rho, mu)
                    .and_then(|init| self.rs_point(&params, &init)),
            };
            if let Ok(p) = &point {
                last = Some((mu, p.saddle));
            } else if let Err(e) = &point {
                log::warn!("rs solver failed at mu = {mu}: {e}");
            }
            out[i] = Some(point);
        }
        Ok(mu_grid
            .iter()
            .zip(out)
            .map(|(&mu, r)| (mu, r.expect("every grid point visited")))
            .collect())
    }

    /// `-2 dphi/dmu` by central differences with step `h`, re-solving the
    /// saddle point at `mu +- h` from the converged `point`.
    pub fn lambda_finite_difference(&self, alpha: f64, rho: f64, point: &RsPoint, h: f64) -> Result<f64> {
        let mut phi = [0.0; 2];
        for (slot, sign) in phi.iter_mut().zip([1.0, -1.0]) {
            let params = RsParams::new(alpha, rho, point.mu + sign * h)?;
            let sol = self.solve_saddle(&params, &point.saddle)?;
            *slot = self.free_entropy(&params, &sol.saddle)?;
        }
        Ok(-(phi[0] - phi[1]) / h)
    }
}

/// `max_k { -mu lambda_k / 2 + Sigma_k }` over tabulated curve points.
pub fn legendre_phi(points: &[RsPoint], mu: f64) -> f64 {
    points
        .iter()
        .map(|p| -0.5 * mu * p.lambda + p.sigma)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `Sigma(lambda)` read off one branch of a curve, ordered by increasing `|mu|`.
///
/// Between the curve's `mu -> 0` end and the bulk of the spectrum the entropy is
/// the `plateau` value (the zero-bias entropy); past the last tabulated point
/// the curve has no support and `None` is returned.
pub fn entropy_at_lambda(points: &[RsPoint], plateau: f64, lambda: f64) -> Option<f64> {
    let first = points.first()?;
    let last = points.last()?;
    let inward = if last.lambda < first.lambda {
        lambda >= first.lambda
    } else {
        lambda <= first.lambda
    };
    if inward {
        return Some(plateau);
    }
    points.windows(2).find_map(|w| {
        let (a, b) = (w[0].lambda, w[1].lambda);
        if (lambda - a) * (lambda - b) <= 0.0 && a != b {
            Some(w[0].sigma + (w[1].sigma - w[0].sigma) * (lambda - a) / (b - a))
        } else {
            None
        }
    })
}

pub const CURVE_COLUMNS: [&str; 12] = [
    "mu",
    "q",
    "chi",
    "Q_hat",
    "q0_hat",
    "Delta_hat",
    "K",
    "phi",
    "lambda",
    "sigma",
    "residual_max",
    "iters",
];

/// Writes curve points as CSV; `comment` lines are prefixed with `# `.
pub fn write_curve_csv<W: Write>(mut w: W, comments: &[String], points: &[RsPoint]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "{}", CURVE_COLUMNS.join(","))?;
    for p in points {
        let s = &p.saddle;
        writeln!(
            w,
            "{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            p.mu, s.q, s.chi, s.q_hat, s.q0_hat, s.delta_hat, s.k, p.phi, p.lambda, p.sigma, p.residual_max, p.iters
        )?;
    }
    Ok(())
}

/// Reads a curve written by [`write_curve_csv`]; returns the comment lines too.
pub fn read_curve_csv<R: BufRead>(r: R) -> Result<(Vec<String>, Vec<RsPoint>)> {
    let mut comments = Vec::new();
    let mut header_seen = false;
    let mut points = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        if !header_seen {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols != CURVE_COLUMNS {
                return Err(Error::parse(format!("unexpected RS curve header: {line}")));
            }
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != CURVE_COLUMNS.len() {
            return Err(Error::parse(format!("line {}: expected 12 fields", lineno + 1)));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|e| Error::parse(format!("line {}, column {}: {e}", lineno + 1, CURVE_COLUMNS[i])))
        };
        points.push(RsPoint {
            mu: num(0)?,
            saddle: SaddlePoint {
                q: num(1)?,
                chi: num(2)?,
                q_hat: num(3)?,
                q0_hat: num(4)?,
                delta_hat: num(5)?,
                k: num(6)?,
            },
            phi: num(7)?,
            lambda: num(8)?,
            sigma: num(9)?,
            residual_max: num(10)?,
            iters: f[11]
                .parse()
                .map_err(|e| Error::parse(format!("line {}, column iters: {e}", lineno + 1)))?,
        });
    }
    if !header_seen {
        return Err(Error::parse("RS curve file has no header"));
    }
    Ok((comments, points))
}
