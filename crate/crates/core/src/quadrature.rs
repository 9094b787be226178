//! Quadrature for the standard normal measure `Dz = exp(-z^2/2) dz / sqrt(2 pi)`.
//!
//! [`QuadratureRule::gauss_hermite`] is the general-purpose rule. The
//! saddle-point integrands are even in `z` and contain a logistic factor whose
//! transition sharpens without bound as `|mu|` grows, which no fixed
//! Gauss–Hermite order resolves; [`PanelQuadrature`] builds composite
//! Gauss–Legendre rules on `z >= 0` graded geometrically towards that
//! transition.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    order: usize,
}

impl QuadratureRule {
    /// Gauss–Hermite rule for `Dz` (probabilists' convention), weights summing to one.
    pub fn gauss_hermite(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be positive"));
        }
        // Jacobi matrix of the monic probabilists' Hermite recurrence
        let jacobi = DMatrix::from_fn(order, order, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().cloned().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for x in nodes.iter_mut() {
            *x = polish_hermite_root(*x, order);
        }
        // exact symmetry
        for i in 0..order / 2 {
            let v = 0.5 * (nodes[order - 1 - i] - nodes[i]);
            nodes[i] = -v;
            nodes[order - 1 - i] = v;
        }
        if order % 2 == 1 {
            nodes[order / 2] = 0.0;
        }
        // Christoffel weights from the orthonormal recurrence
        let mut weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                let (mut p_prev, mut p) = (0.0, 1.0);
                let mut sum = 1.0;
                for k in 0..order - 1 {
                    let next = (x * p - (k as f64).sqrt() * p_prev) / ((k + 1) as f64).sqrt();
                    p_prev = p;
                    p = next;
                    sum += p * p;
                }
                1.0 / sum
            })
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(QuadratureRule { nodes, weights, order })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.order
    }
}

/// Newton polish of a root of the orthonormal Hermite polynomial of degree `n`.
fn polish_hermite_root(mut x: f64, n: usize) -> f64 {
    for _ in 0..3 {
        let (mut p_prev, mut p) = (0.0, 1.0);
        let (mut d_prev, mut d) = (0.0, 0.0);
        for k in 0..n {
            let (sk, sk1) = ((k as f64).sqrt(), ((k + 1) as f64).sqrt());
            let next = (x * p - sk * p_prev) / sk1;
            let dnext = (p + x * d - sk * d_prev) / sk1;
            p_prev = p;
            p = next;
            d_prev = d;
            d = dnext;
        }
        if d == 0.0 {
            break;
        }
        let step = p / d;
        x -= step;
        if step.abs() < 1e-16 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

/// Estimate of `∫ Dz f(z)`; fails if `f` is not finite at some node.
pub fn integrate_gaussian(rule: &QuadratureRule, f: impl Fn(f64) -> f64) -> Result<f64> {
    let mut acc = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = f(x);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("integrand at z = {x}")));
        }
        acc += w * v;
    }
    Ok(acc)
}

/// Location and width of a sharp feature of an even integrand on `z > 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub center: f64,
    pub width: f64,
}

/// Rule for `∫ Dz f(z)` with `f` even, using nodes on `z >= 0` only.
#[derive(Clone, Debug, Default)]
pub struct EvenRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl EvenRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

/// Builder of composite Gauss–Legendre rules for even integrands.
#[derive(Clone, Debug)]
pub struct PanelQuadrature {
    ref_nodes: Vec<f64>,
    ref_weights: Vec<f64>,
    order: usize,
}

/// Beyond this point the normal density is below 1e-31.
const Z_MAX: f64 = 12.0;
const BASE_PANEL: f64 = 0.75;

impl PanelQuadrature {
    /// `order` sets the resolution: each panel carries `order / 8` nodes
    /// (at least 4), so order 96 gives 12-point panels.
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("quadrature order must be positive"));
        }
        let per_panel = (order / 8).clamp(4, 64);
        let (ref_nodes, ref_weights) = gauss_legendre(per_panel);
        Ok(PanelQuadrature {
            ref_nodes,
            ref_weights,
            order,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rule(&self, transition: Option<Transition>) -> EvenRule {
        let mut rule = EvenRule::default();
        self.fill(transition, &mut rule);
        rule
    }

    /// Rebuilds `rule` in place (reusing its allocations).
    pub fn fill(&self, transition: Option<Transition>, rule: &mut EvenRule) {
        let mut breaks: Vec<f64> = (0..=(Z_MAX / BASE_PANEL).round() as usize)
            .map(|i| i as f64 * BASE_PANEL)
            .collect();
        if let Some(t) = transition {
            if t.center > 0.0 && t.center < Z_MAX && t.width > 0.0 && t.width < BASE_PANEL {
                breaks.push(t.center);
                let mut d = t.width;
                while d < BASE_PANEL {
                    breaks.push(t.center - d);
                    breaks.push(t.center + d);
                    d *= 2.0;
                }
            }
        }
        breaks.retain(|&b| (0.0..=Z_MAX).contains(&b));
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

        rule.nodes.clear();
        rule.weights.clear();
        let norm = (2.0 / PI).sqrt();
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&x, &wt) in self.ref_nodes.iter().zip(&self.ref_weights) {
                let z = mid + half * x;
                rule.nodes.push(z);
                rule.weights.push(half * wt * norm * (-0.5 * z * z).exp());
            }
        }
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().cloned().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let weights = nodes
        .iter_mut()
        .map(|x| {
            // Newton polish on P_n, then w = 2 / ((1 - x^2) P_n'(x)^2)
            let mut dp = 0.0;
            for _ in 0..3 {
                let (p, d) = legendre(n, *x);
                dp = d;
                *x -= p / d;
            }
            let (_, d) = legendre(n, *x);
            dp = if d != 0.0 { d } else { dp };
            2.0 / ((1.0 - *x * *x) * dp * dp)
        })
        .collect();
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
