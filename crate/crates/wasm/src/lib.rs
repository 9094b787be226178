//! wasm-bindgen bindings behind the static page in `www/`.
//!
//! Each exported function has a plain Rust counterpart returning
//! `ric_core::Result`, so the logic is testable off the browser.

use ric_core::dos::{enumerate_spectra, ln_binomial};
use ric_core::emc::{run, BinGrid, EmcOptions, Ladder};
use ric_core::ensemble::{generate, mp_support_edges, EnsembleSpec, Normalization};
use ric_core::ric::{ric, RicOptions};
use ric_core::rs::{mu_grid, RsSolver, SolverOptions};
use ric_core::{Branch, Error, Result};
use wasm_bindgen::prelude::*;

/// Largest `C(N, S)` for which the page gets the exact distribution.
const EXACT_LIMIT: f64 = 2e5;

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Both branches of the RS entropy curve, each ordered by increasing `|mu|`.
#[wasm_bindgen]
#[derive(Clone, Debug, Default)]
pub struct EntropyCurves {
    min_lambda: Vec<f64>,
    min_sigma: Vec<f64>,
    max_lambda: Vec<f64>,
    max_sigma: Vec<f64>,
    edges: (f64, f64),
    plateau: f64,
    failures: usize,
}

#[wasm_bindgen]
impl EntropyCurves {
    pub fn min_lambda(&self) -> Vec<f64> {
        self.min_lambda.clone()
    }

    pub fn min_sigma(&self) -> Vec<f64> {
        self.min_sigma.clone()
    }

    pub fn max_lambda(&self) -> Vec<f64> {
        self.max_lambda.clone()
    }

    pub fn max_sigma(&self) -> Vec<f64> {
        self.max_sigma.clone()
    }

    /// Lower Marchenko-Pastur edge.
    pub fn edge_lo(&self) -> f64 {
        self.edges.0
    }

    pub fn edge_hi(&self) -> f64 {
        self.edges.1
    }

    /// Zero-bias entropy `H(rho)`.
    pub fn plateau(&self) -> f64 {
        self.plateau
    }

    /// Grid points where the saddle-point solver did not converge.
    pub fn failures(&self) -> usize {
        self.failures
    }
}

fn binary_entropy(r: f64) -> f64 {
    -r * r.ln() - (1.0 - r) * (1.0 - r).ln()
}

pub fn entropy_curves_native(alpha: f64, rho: f64, mu_max: f64, steps: usize) -> Result<EntropyCurves> {
    let solver = RsSolver::new(SolverOptions::default())?;
    let mut out = EntropyCurves {
        edges: mp_support_edges(alpha, rho)?,
        plateau: binary_entropy(rho),
        ..Default::default()
    };
    for branch in [Branch::Min, Branch::Max] {
        let grid = mu_grid(branch, 1e-3, mu_max, steps)?;
        for (_, point) in solver.trace(alpha, rho, &grid)? {
            match (point, branch) {
                (Ok(p), Branch::Min) => {
                    out.min_lambda.push(p.lambda);
                    out.min_sigma.push(p.sigma);
                }
                (Ok(p), Branch::Max) => {
                    out.max_lambda.push(p.lambda);
                    out.max_sigma.push(p.sigma);
                }
                (Err(_), _) => out.failures += 1,
            }
        }
    }
    Ok(out)
}

/// RS entropy curves at `(alpha, rho)` over `steps` values of `|mu|` up to `mu_max`.
#[wasm_bindgen]
pub fn entropy_curves(alpha: f64, rho: f64, mu_max: f64, steps: usize) -> std::result::Result<EntropyCurves, JsError> {
    entropy_curves_native(alpha, rho, mu_max, steps).map_err(js)
}

#[wasm_bindgen]
#[derive(Clone, Copy, Debug)]
pub struct Rics {
    pub lambda_star_min: f64,
    pub lambda_star_max: f64,
    pub delta_min: f64,
    pub delta_max: f64,
}

pub fn rics_native(alpha: f64, rho: f64) -> Result<Rics> {
    let r = ric(alpha, rho, &RicOptions::default())?;
    Ok(Rics {
        lambda_star_min: r.lambda_star_min,
        lambda_star_max: r.lambda_star_max,
        delta_min: r.delta_min,
        delta_max: r.delta_max,
    })
}

/// RS restricted isometry constants at `(alpha, rho)`.
#[wasm_bindgen]
pub fn rics(alpha: f64, rho: f64) -> std::result::Result<Rics, JsError> {
    rics_native(alpha, rho).map_err(js)
}

/// Sampled and exact distributions of the extreme eigenvalue at one bias `mu`.
#[wasm_bindgen]
#[derive(Clone, Debug)]
pub struct SubsetSample {
    centers: Vec<f64>,
    sampled: Vec<f64>,
    exact: Vec<f64>,
    acceptance: f64,
    extreme: f64,
}

#[wasm_bindgen]
impl SubsetSample {
    pub fn centers(&self) -> Vec<f64> {
        self.centers.clone()
    }

    /// Empirical probability per bin.
    pub fn sampled(&self) -> Vec<f64> {
        self.sampled.clone()
    }

    /// Exact Boltzmann probability per bin; empty when enumeration is too large.
    pub fn exact(&self) -> Vec<f64> {
        self.exact.clone()
    }

    /// Metropolis acceptance rate of the swap moves.
    pub fn acceptance(&self) -> f64 {
        self.acceptance
    }

    /// Most extreme eigenvalue visited.
    pub fn extreme(&self) -> f64 {
        self.extreme
    }
}

pub fn sample_subsets_native(
    n: usize,
    alpha: f64,
    s: usize,
    mu: f64,
    sweeps: usize,
    seed: u64,
) -> Result<SubsetSample> {
    let a = generate(&EnsembleSpec::new(n, alpha, Normalization::Raw, seed)?)?;
    let branch = Branch::of_mu(mu).unwrap_or(Branch::Min);
    let ladder = Ladder::new(branch, vec![mu], 1)?;
    let mut opts = EmcOptions::new(sweeps, seed);
    opts.grid = BinGrid::uniform(0.0, 4.0, 80)?;
    let emc = run(&a, s, &ladder, &opts)?;
    let h = &emc.histograms[0];
    let total = h.total_samples.max(1) as f64;

    let mut exact = Vec::new();
    if ln_binomial(n, s) <= EXACT_LIMIT.ln() {
        exact = vec![0.0; h.grid.count];
        let spectra = enumerate_spectra(&a, s)?;
        let pick = |&(lo, hi): &(f64, f64)| if branch == Branch::Min { lo } else { hi };
        // shift exponents by the best state to avoid overflow at large |mu|
        let shift = spectra
            .iter()
            .map(pick)
            .map(|l| -(n as f64) * mu * l / 2.0)
            .fold(f64::MIN, f64::max);
        for sp in &spectra {
            let l = pick(sp);
            if let Some(b) = h.grid.index(l) {
                exact[b] += (-(n as f64) * mu * l / 2.0 - shift).exp();
            }
        }
        let z: f64 = exact.iter().sum();
        exact.iter_mut().for_each(|p| *p /= z);
    }
    Ok(SubsetSample {
        centers: h.grid.centers(),
        sampled: h.counts.iter().map(|&c| c as f64 / total).collect(),
        exact,
        acceptance: emc.swap_acceptance[0],
        extreme: emc.extreme.0,
    })
}

/// Single-chain Metropolis sampling of `S`-column subsets of an `N`-column
/// matrix at bias `mu` (`mu >= 0` samples `lambda_min`, `mu < 0` `lambda_max`).
#[wasm_bindgen]
pub fn sample_subsets(
    n: usize,
    alpha: f64,
    s: usize,
    mu: f64,
    sweeps: usize,
    seed: u64,
) -> std::result::Result<SubsetSample, JsError> {
    sample_subsets_native(n, alpha, s, mu, sweeps, seed).map_err(js)
}
