//! Replica-symmetric saddle point at fixed `(alpha, rho, mu)`.
//!
//! Order parameters: overlap `q`, rescaled susceptibility `chi`, conjugates
//! `Q_hat`, `q0_hat`, `Delta_hat = q1_hat - q0_hat`, and the sparsity
//! multiplier `K`. In the zero-temperature limit the inner Gaussian integral
//! of the site kernel is elementary:
//!
//! ```text
//! Xi(z) = 1 + exp(-K) * sqrt(Q_hat / (Q_hat - Delta_hat)) * exp(q0_hat z^2 / (2 (Q_hat - Delta_hat)))
//! ```
//!
//! which requires `Q_hat` and `Q_hat - Delta_hat` to share a sign. Writing
//! `p(z) = (Xi - 1) / Xi`, the stationarity conditions of the free entropy are
//!
//! ```text
//! chi       = mu rho / Q_hat
//! q         = q0_hat / (Q_hat - Delta_hat)^2 * ∫Dz z^2 p^2
//! 1         = ∫Dz p [Delta_hat / (Q_hat (Q_hat - Delta_hat)) + q0_hat z^2 / (Q_hat - Delta_hat)^2]
//! rho       = ∫Dz p
//! Delta_hat = alpha mu^2 (1 - q) / ((alpha + chi) D)
//! q0_hat    = alpha mu^2 q / D^2,          D = alpha + chi + mu (1 - q)
//! ```

use crate::quadrature::{EvenRule, PanelQuadrature, Transition};
use crate::roots::brent;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    /// Absolute tolerance on every stationarity residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Resolution of the Gaussian quadrature (see [`PanelQuadrature::new`]).
    pub quad_nodes: usize,
    /// Weight of the previous iterate when mixing `(q, chi)`.
    pub damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 10_000,
            quad_nodes: 96,
            damping: 0.5,
        }
    }
}

/// Control parameters of one saddle-point problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RsParams {
    pub alpha: f64,
    pub rho: f64,
    pub mu: f64,
}

impl RsParams {
    pub fn new(alpha: f64, rho: f64, mu: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < alpha && alpha <= 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < rho < alpha <= 1, got alpha = {alpha}, rho = {rho}"
            )));
        }
        if !mu.is_finite() || mu == 0.0 {
            return Err(Error::invalid(format!("mu must be finite and nonzero, got {mu}")));
        }
        Ok(RsParams { alpha, rho, mu })
    }

    fn d(&self, q: f64, chi: f64) -> f64 {
        self.alpha + chi + self.mu * (1.0 - q)
    }

    fn delta_hat_of(&self, q: f64, chi: f64) -> f64 {
        let mu2 = self.mu * self.mu;
        self.alpha * mu2 * (1.0 - q) / ((self.alpha + chi) * self.d(q, chi))
    }

    fn q0_hat_of(&self, q: f64, chi: f64) -> f64 {
        let d = self.d(q, chi);
        self.alpha * self.mu * self.mu * q / (d * d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaddlePoint {
    pub q: f64,
    pub chi: f64,
    pub q_hat: f64,
    pub q0_hat: f64,
    pub delta_hat: f64,
    pub k: f64,
}

impl SaddlePoint {
    pub fn q1_hat(&self) -> f64 {
        self.delta_hat + self.q0_hat
    }

    /// Leading-order small-`|mu|` solution, used to start continuation.
    pub fn initial(params: &RsParams) -> Self {
        let RsParams { alpha, rho, mu } = *params;
        let s = mu.signum();
        let r = (rho / alpha).sqrt();
        let chi = s * r * alpha / (1.0 - s * r);
        let q_hat = mu.abs() * r * (1.0 - s * r);
        let q = rho * rho;
        let delta_hat = params.delta_hat_of(q, chi);
        let q0_hat = params.q0_hat_of(q, chi);
        let gap = q_hat - delta_hat;
        let k = 0.5 * (q_hat / gap).ln() - logit(rho);
        SaddlePoint {
            q,
            chi,
            q_hat,
            q0_hat,
            delta_hat,
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.q, self.chi, self.q_hat, self.q0_hat, self.delta_hat, self.k];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("saddle point {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::invalid(format!("overlap q = {} outside [0, 1]", self.q)));
        }
        if self.q0_hat < 0.0 {
            return Err(Error::invalid(format!("q0_hat = {} is negative", self.q0_hat)));
        }
        XiKernel::of(self).map(|_| ())
    }
}

/// `ln(Xi(z) - 1) = offset + curvature * z^2 / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiKernel {
    pub offset: f64,
    pub curvature: f64,
}

impl XiKernel {
    pub fn new(q_hat: f64, q0_hat: f64, delta_hat: f64, k: f64) -> Result<Self> {
        let gap = q_hat - delta_hat;
        if q_hat == 0.0 || gap == 0.0 || q_hat.signum() != gap.signum() || !(q_hat / gap).is_finite() {
            return Err(Error::SingularKernel { q_hat, gap });
        }
        Ok(XiKernel {
            offset: -k + 0.5 * (q_hat / gap).ln(),
            curvature: q0_hat / gap,
        })
    }

    pub fn of(sp: &SaddlePoint) -> Result<Self> {
        XiKernel::new(sp.q_hat, sp.q0_hat, sp.delta_hat, sp.k)
    }

    fn log_excess(&self, z: f64) -> f64 {
        self.offset + 0.5 * self.curvature * z * z
    }

    /// `(Xi(z) - 1) / Xi(z)`.
    pub fn occupancy(&self, z: f64) -> f64 {
        logistic(self.log_excess(z))
    }

    pub fn log_xi(&self, z: f64) -> f64 {
        softplus(self.log_excess(z))
    }

    pub fn xi(&self, z: f64) -> f64 {
        1.0 + self.log_excess(z).exp()
    }

    /// Where the occupancy crosses 1/2 on `z > 0`, and the logistic width there.
    pub fn transition(&self) -> Option<Transition> {
        if self.curvature == 0.0 {
            return None;
        }
        let z2 = -2.0 * self.offset / self.curvature;
        if !(z2 > 0.0) {
            return None;
        }
        let center = z2.sqrt();
        Some(Transition {
            center,
            width: 1.0 / (self.curvature * center).abs(),
        })
    }
}

/// `lim_{beta -> inf} Xi_beta(z)` at the saddle point `sp`.
pub fn xi_limit(z: f64, sp: &SaddlePoint) -> Result<f64> {
    Ok(XiKernel::of(sp)?.xi(z))
}

pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Kernel averages over `Dz` needed by the stationarity conditions.
#[derive(Clone, Copy, Debug, Default)]
pub struct KernelMoments {
    /// `∫Dz p`
    pub occ: f64,
    /// `∫Dz p (1 - p)`
    pub occ_var: f64,
    /// `∫Dz z^2 p`
    pub occ_z2: f64,
    /// `∫Dz z^2 p^2`
    pub occ_sq_z2: f64,
    /// `∫Dz ln Xi`
    pub log_xi: f64,
}

/// Outcome of [`RsSolver::solve_saddle`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Solution {
    pub saddle: SaddlePoint,
    pub iters: usize,
    pub residual_max: f64,
}

struct Sweep {
    delta_hat: f64,
    q0_hat: f64,
    q_hat: f64,
    offset: f64,
    q_new: f64,
    chi_new: f64,
    eq22: f64,
    eq23: f64,
}

/// Saddle-point solver; holds the options and the quadrature builder.
#[derive(Clone, Debug)]
pub struct RsSolver {
    opts: SolverOptions,
    panels: PanelQuadrature,
}

impl RsSolver {
    pub fn new(opts: SolverOptions) -> Result<Self> {
        if !(opts.tol > 0.0) || opts.max_iter == 0 {
            return Err(Error::invalid("solver needs tol > 0 and max_iter > 0"));
        }
        if !(0.0..1.0).contains(&opts.damping) {
            return Err(Error::invalid(format!(
                "damping must lie in [0, 1), got {}",
                opts.damping
            )));
        }
        Ok(RsSolver {
            panels: PanelQuadrature::new(opts.quad_nodes)?,
            opts,
        })
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    pub fn moments(&self, kernel: &XiKernel) -> KernelMoments {
        let mut rule = EvenRule::default();
        self.moments_with(kernel, &mut rule)
    }

    fn moments_with(&self, kernel: &XiKernel, rule: &mut EvenRule) -> KernelMoments {
        self.panels.fill(kernel.transition(), rule);
        let mut m = KernelMoments::default();
        for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
            let x = kernel.log_excess(z);
            let p = logistic(x);
            let z2 = z * z;
            m.occ += w * p;
            m.occ_var += w * p * (1.0 - p);
            m.occ_z2 += w * z2 * p;
            m.occ_sq_z2 += w * z2 * p * p;
            m.log_xi += w * softplus(x);
        }
        m
    }

    /// Kernel offset `ln(Xi(0) - 1)` such that `∫Dz p = rho` at the given curvature.
    fn solve_offset(&self, curvature: f64, rho: f64, guess: f64, rule: &mut EvenRule) -> Result<(f64, KernelMoments)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut x = if guess.is_finite() { guess } else { logit(rho) };
        for _ in 0..300 {
            let kernel = XiKernel { offset: x, curvature };
            let m = self.moments_with(&kernel, rule);
            let f = m.occ - rho;
            if f.abs() <= 1e-15 {
                return Ok((x, m));
            }
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = if m.occ_var > 0.0 { x - f / m.occ_var } else { f64::NAN };
            let next = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if hi.is_finite() {
                x - 1.0 - (x - newton).abs().min(50.0)
            } else {
                x + 1.0 + (newton - x).abs().min(50.0)
            };
            if (next - x).abs() <= 1e-15 * x.abs().max(1.0) {
                return Ok((
                    next,
                    self.moments_with(
                        &XiKernel {
                            offset: next,
                            curvature,
                        },
                        rule,
                    ),
                ));
            }
            x = next;
        }
        Err(Error::invalid(format!(
            "sparsity constraint not solvable at curvature {curvature}"
        )))
    }

    /// One pass of the fixed-point scheme from `(q, chi)`.
    fn sweep(&self, p: &RsParams, q: f64, chi: f64, q_hat_guess: f64, offset_guess: f64) -> Result<Sweep> {
        let d = p.d(q, chi);
        if !(d > 0.0 && p.alpha + chi > 0.0) {
            return Err(Error::invalid(format!(
                "left the admissible region: alpha + chi = {}, alpha + chi + mu (1 - q) = {d}",
                p.alpha + chi
            )));
        }
        let delta_hat = p.delta_hat_of(q, chi);
        let q0_hat = p.q0_hat_of(q, chi);
        if !(delta_hat > 0.0) || !q0_hat.is_finite() {
            return Err(Error::SingularKernel {
                q_hat: q_hat_guess,
                gap: q_hat_guess - delta_hat,
            });
        }

        let mut rule = EvenRule::default();
        let mut offset = offset_guess;
        // Q_hat condition, solved in t = ln(Q_hat - Delta_hat)
        let mut eq22 = |t: f64| -> Result<f64> {
            let gap = t.exp();
            let q_hat = delta_hat + gap;
            let (x, m) = self.solve_offset(q0_hat / gap, p.rho, offset, &mut rule)?;
            offset = x;
            Ok(delta_hat * m.occ / (q_hat * gap) + q0_hat * m.occ_z2 / (gap * gap) - 1.0)
        };

        let gap_guess = q_hat_guess - delta_hat;
        let t0 = if gap_guess > 0.0 {
            gap_guess.ln()
        } else {
            delta_hat.ln()
        };
        let f0 = eq22(t0)?;
        let (mut ta, mut fa, mut tb, mut fb) = (t0, f0, t0, f0);
        let mut step = 0.5;
        // signum(0.0) is 1.0, so an exact root must be tested separately
        while fa != 0.0 && fb != 0.0 && (fa > 0.0) == (fb > 0.0) {
            if step > 1500.0 {
                return Err(Error::invalid("no bracket for Q_hat"));
            }
            if f0 > 0.0 {
                ta = tb;
                fa = fb;
                tb += step;
                fb = eq22(tb)?;
            } else {
                tb = ta;
                fb = fa;
                ta -= step;
                fa = eq22(ta)?;
            }
            step *= 2.0;
        }
        let ftol = 1e-3 * self.opts.tol;
        let root = brent(&mut eq22, ta, tb, Some(fa), Some(fb), 1e-15, ftol, 200)?
            .ok_or_else(|| Error::invalid("Q_hat bracket lost its sign change"))?;

        let gap = root.x.exp();
        let q_hat = delta_hat + gap;
        let curvature = q0_hat / gap;
        let (offset, m) = self.solve_offset(curvature, p.rho, offset, &mut rule)?;
        let eq22 = delta_hat * m.occ / (q_hat * gap) + q0_hat * m.occ_z2 / (gap * gap) - 1.0;
        Ok(Sweep {
            delta_hat,
            q0_hat,
            q_hat,
            offset,
            q_new: q0_hat * m.occ_sq_z2 / (gap * gap),
            chi_new: p.mu * p.rho / q_hat,
            eq22,
            eq23: m.occ - p.rho,
        })
    }

    /// Damped fixed-point iteration of the six stationarity conditions.
    pub fn solve_saddle(&self, params: &RsParams, init: &SaddlePoint) -> Result<Solution> {
        init.validate()?;
        let fail = |iters: usize, reason: String| Error::SolverFailed {
            mu: params.mu,
            iters,
            reason,
        };
        let damping = self.opts.damping;
        let (mut q, mut chi, mut q_hat) = (init.q, init.chi, init.q_hat);
        let mut offset = XiKernel::of(init)?.offset;
        let mut last_residual = f64::NAN;
        for iter in 1..=self.opts.max_iter {
            let s = self
                .sweep(params, q, chi, q_hat, offset)
                .map_err(|e| fail(iter, format!("{e} (q = {q}, chi = {chi})")))?;
            let q_mix = damping * q + (1.0 - damping) * s.q_new;
            let chi_mix = damping * chi + (1.0 - damping) * s.chi_new;
            let residual = [
                chi_mix - s.chi_new,
                q_mix - s.q_new,
                s.eq22,
                s.eq23,
                s.delta_hat - params.delta_hat_of(q_mix, chi_mix),
                s.q0_hat - params.q0_hat_of(q_mix, chi_mix),
            ]
            .iter()
            .fold(0.0f64, |acc, r| acc.max(r.abs()));
            q = q_mix;
            chi = chi_mix;
            q_hat = s.q_hat;
            offset = s.offset;
            last_residual = residual;
            if !residual.is_finite() || !(0.0..=1.0).contains(&q) {
                return Err(fail(
                    iter,
                    format!("iterate left the valid region (q = {q}, chi = {chi})"),
                ));
            }
            if residual < self.opts.tol {
                let gap = q_hat - s.delta_hat;
                let saddle = SaddlePoint {
                    q,
                    chi,
                    q_hat,
                    q0_hat: s.q0_hat,
                    delta_hat: s.delta_hat,
                    k: 0.5 * (q_hat / gap).ln() - offset,
                };
                return Ok(Solution {
                    saddle,
                    iters: iter,
                    residual_max: residual,
                });
            }
        }
        Err(fail(
            self.opts.max_iter,
            format!("no convergence, last residual {last_residual:e}"),
        ))
    }

    /// Residuals of the six stationarity conditions, recomputed from scratch,
    /// ordered as: chi, q, Q_hat, K (sparsity), Delta_hat, q0_hat.
    pub fn residuals(&self, params: &RsParams, sp: &SaddlePoint) -> Result<[f64; 6]> {
        let kernel = XiKernel::of(sp)?;
        let m = self.moments(&kernel);
        let gap = sp.q_hat - sp.delta_hat;
        Ok([
            sp.chi - params.mu * params.rho / sp.q_hat,
            sp.q - sp.q0_hat * m.occ_sq_z2 / (gap * gap),
            1.0 - (sp.delta_hat * m.occ / (sp.q_hat * gap) + sp.q0_hat * m.occ_z2 / (gap * gap)),
            params.rho - m.occ,
            sp.delta_hat - params.delta_hat_of(sp.q, sp.chi),
            sp.q0_hat - params.q0_hat_of(sp.q, sp.chi),
        ])
    }

    /// Replica-symmetric free entropy density `phi(mu; rho)` (nats per component).
    pub fn free_entropy(&self, params: &RsParams, sp: &SaddlePoint) -> Result<f64> {
        let kernel = XiKernel::of(sp)?;
        let RsParams { alpha, rho, mu } = *params;
        let SaddlePoint {
            q,
            chi,
            q_hat,
            q0_hat,
            k,
            ..
        } = *sp;
        let d = params.d(q, chi);
        if !(d > 0.0 && alpha + chi > 0.0) {
            return Err(Error::invalid(format!(
                "free entropy undefined: D = {d}, alpha + chi = {}",
                alpha + chi
            )));
        }
        let m = self.moments(&kernel);
        Ok(
            -0.5 * alpha * d.ln() + 0.5 * alpha * (alpha + chi).ln() - alpha * mu * q / (2.0 * d) + 0.5 * q_hat
                - 0.5 * sp.q1_hat() * (1.0 + chi / mu)
                + 0.5 * q0_hat * q
                + k * rho
                + m.log_xi,
        )
    }

    /// Typical eigenvalue `lambda = -2 dphi/dmu`; only the explicit `mu`
    /// dependence of the free entropy contributes at a stationary point.
    pub fn lambda(params: &RsParams, sp: &SaddlePoint) -> f64 {
        let RsParams { alpha, mu, .. } = *params;
        let SaddlePoint { q, chi, .. } = *sp;
        let d = params.d(q, chi);
        alpha / d - alpha * mu * q * (1.0 - q) / (d * d) - sp.q1_hat() * chi / (mu * mu)
    }
}
