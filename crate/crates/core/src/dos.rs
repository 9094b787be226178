//! Density of states `W(lambda)`: multihistogram reconstruction from exchange
//! Monte Carlo histograms, conversion to entropy and free-entropy densities,
//! and exhaustive enumeration for small instances.

use std::io::{BufRead, Write};

use rand::Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::emc::{BinGrid, EnergyHistogram};
use crate::ensemble::{MeasurementMatrix, SubsetSelection};
use crate::linalg::eigen_range;
use crate::rng::{stream_rng, BOOTSTRAP_STREAM};
use crate::{Branch, Error, Result};

/// Largest number of subsets [`enumerate_exact`] will visit.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// `ln C(n, k)`.
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k {
        c = c * (n - k + i) as u128 / i as u128;
    }
    c.min(u64::MAX as u128) as u64
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Absolute subset counts per eigenvalue bin.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOfStates {
    pub branch: Branch,
    pub grid: BinGrid,
    /// `ln W_b`, normalized so that `sum_b W_b = C(N, S)`; `-inf` on empty bins.
    pub log_counts: Vec<f64>,
    /// Raw samples behind each bin (exact counts for enumerations).
    pub samples: Vec<u64>,
    pub n_cols: usize,
    pub subset_size: usize,
}

impl DensityOfStates {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.grid.centers()
    }

    /// `ln C(N, S)`.
    pub fn log_total(&self) -> f64 {
        ln_binomial(self.n_cols, self.subset_size)
    }

    /// Bins with at least `min_samples` samples.
    pub fn support_mask(&self, min_samples: u64) -> Vec<bool> {
        self.samples.iter().map(|&s| s > 0 && s >= min_samples).collect()
    }

    /// `Sigma(lambda_b) = ln W_b / N`.
    pub fn entropy(&self) -> Vec<f64> {
        self.log_counts.iter().map(|l| l / self.n_cols as f64).collect()
    }

    /// Occupied bins as `(lambda, ln W)`.
    fn occupied(&self) -> impl Iterator<Item = (f64, f64)> + Clone + '_ {
        self.log_counts
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_finite())
            .map(|(b, &l)| (self.grid.center(b), l))
    }

    fn normalize(&mut self) {
        let z = log_sum_exp(self.log_counts.iter().copied());
        let shift = self.log_total() - z;
        for l in self.log_counts.iter_mut() {
            *l += shift;
        }
    }

    fn validate(&self) -> Result<()> {
        if self.log_counts.len() != self.grid.count || self.samples.len() != self.grid.count {
            return Err(Error::invalid("density of states arrays do not match its grid"));
        }
        if self.subset_size == 0 || self.subset_size > self.n_cols {
            return Err(Error::invalid("density of states needs 0 < S <= N"));
        }
        if !self.log_counts.iter().any(|l| l.is_finite()) {
            return Err(Error::invalid("density of states is empty"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WhamOptions {
    /// Convergence threshold on `max_i |delta f_i|`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WhamOptions {
    fn default() -> Self {
        WhamOptions {
            tol: 1e-10,
            max_iter: 200_000,
        }
    }
}

/// Multihistogram output: the density of states and per-rung free entropies.
#[derive(Clone, Debug)]
pub struct WhamSolution {
    pub dos: DensityOfStates,
    /// `f_i = (1/N) ln sum_b W_b exp(-N mu_i lambda_b / 2)` under the final normalization.
    pub free_entropies: Vec<f64>,
    pub iters: usize,
}

/// Ferrenberg-Swendsen reconstruction of `W(lambda)` on the histograms' common grid.
///
/// Iterates `W_b = sum_i H_i(b) / sum_i n_i exp(-N mu_i lambda_b / 2 - N f_i)` and
/// `f_i = (1/N) ln sum_b W_b exp(-N mu_i lambda_b / 2)` in log space, then rescales
/// to `sum_b W_b = C(N, S)`.
pub fn wham_solve(
    histograms: &[EnergyHistogram],
    branch: Branch,
    n_cols: usize,
    subset_size: usize,
    opts: &WhamOptions,
) -> Result<WhamSolution> {
    let first = histograms
        .first()
        .ok_or_else(|| Error::invalid("no histograms to combine"))?;
    let grid = first.grid;
    for h in histograms {
        if h.grid != grid || h.counts.len() != grid.count {
            return Err(Error::invalid(format!(
                "histogram of rung {} is on a different grid",
                h.rung
            )));
        }
        if !h.mu.is_finite() || !branch.admits(h.mu) {
            return Err(Error::invalid(format!(
                "rung {} has mu = {} off the {branch} branch",
                h.rung, h.mu
            )));
        }
    }
    if subset_size == 0 || subset_size > n_cols {
        return Err(Error::invalid("need 0 < S <= N"));
    }
    let used: Vec<&EnergyHistogram> = histograms.iter().filter(|h| h.counts.iter().any(|&c| c > 0)).collect();
    if used.is_empty() {
        return Err(Error::invalid("all histograms are empty"));
    }

    // adjacent rungs in |mu| order must share at least one bin
    let mut order: Vec<&EnergyHistogram> = used.clone();
    order.sort_by(|a, b| a.mu.abs().total_cmp(&b.mu.abs()));
    for w in order.windows(2) {
        let overlap = w[0].counts.iter().zip(&w[1].counts).any(|(&a, &b)| a > 0 && b > 0);
        if !overlap {
            return Err(Error::LadderGap(w[0].rung, w[1].rung));
        }
    }

    let nf = n_cols as f64;
    let lambdas = grid.centers();
    let total: Vec<u64> = (0..grid.count)
        .map(|b| used.iter().map(|h| h.counts[b]).sum())
        .collect();
    let occupied: Vec<usize> = (0..grid.count).filter(|&b| total[b] > 0).collect();
    let log_n: Vec<f64> = used.iter().map(|h| (h.total_samples.max(1) as f64).ln()).collect();
    // bias[i][k] = -N mu_i lambda_b / 2 for the k-th occupied bin
    let bias: Vec<Vec<f64>> = used
        .iter()
        .map(|h| occupied.iter().map(|&b| -nf * h.mu * lambdas[b] / 2.0).collect())
        .collect();
    let log_h: Vec<f64> = occupied.iter().map(|&b| (total[b] as f64).ln()).collect();

    let k = used.len();
    let mut g = vec![0.0; k]; // N f_i
    let mut log_w = vec![0.0; occupied.len()];
    let mut iters = 0;
    loop {
        for (j, lw) in log_w.iter_mut().enumerate() {
            *lw = log_h[j] - log_sum_exp((0..k).map(|i| log_n[i] + bias[i][j] - g[i]));
        }
        let mut next: Vec<f64> = (0..k)
            .map(|i| log_sum_exp(log_w.iter().zip(&bias[i]).map(|(w, b)| w + b)))
            .collect();
        let gauge = next[0];
        for v in next.iter_mut() {
            *v -= gauge;
        }
        let change = next.iter().zip(&g).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / nf;
        g = next;
        iters += 1;
        if change < opts.tol {
            break;
        }
        if iters >= opts.max_iter {
            return Err(Error::SolverFailed {
                mu: used[0].mu,
                iters,
                reason: format!("multihistogram iteration stalled at max |df| = {change:e}"),
            });
        }
    }

    let mut log_counts = vec![f64::NEG_INFINITY; grid.count];
    for (j, &b) in occupied.iter().enumerate() {
        log_counts[b] = log_w[j];
    }
    let mut dos = DensityOfStates {
        branch,
        grid,
        log_counts,
        samples: total,
        n_cols,
        subset_size,
    };
    dos.normalize();
    let free_entropies = histograms
        .iter()
        .map(|h| free_entropy_from_dos(&dos, h.mu).map(|f| f.value))
        .collect::<Result<_>>()?;
    Ok(WhamSolution {
        dos,
        free_entropies,
        iters,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEntropy {
    pub value: f64,
    /// The dominant term sits in the first or last occupied bin, so the sum is
    /// likely truncated by the sampled support.
    pub edge_dominated: bool,
}

/// `phi(mu) = (1/N) ln sum_b W_b exp(-N mu lambda_b / 2)`.
pub fn free_entropy_from_dos(dos: &DensityOfStates, mu: f64) -> Result<FreeEntropy> {
    dos.validate()?;
    if !mu.is_finite() {
        return Err(Error::NonFinite("mu".into()));
    }
    let nf = dos.n_cols as f64;
    let terms = dos.occupied().map(|(l, w)| w - nf * mu * l / 2.0);
    let value = log_sum_exp(terms.clone()) / nf;
    let n = terms.clone().count();
    let argmax = terms
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, t)| if t > best.1 { (i, t) } else { best },
        )
        .0;
    Ok(FreeEntropy {
        value,
        edge_dominated: n > 1 && (argmax == 0 || argmax == n - 1),
    })
}

/// Mean `lambda` under `W(lambda) exp(-N mu lambda / 2)`, i.e. `-2 dphi/dmu`.
fn mean_lambda(dos: &DensityOfStates, mu: f64) -> f64 {
    let nf = dos.n_cols as f64;
    let terms: Vec<(f64, f64)> = dos.occupied().map(|(l, w)| (l, w - nf * mu * l / 2.0)).collect();
    let m = terms.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let (num, den) = terms.iter().fold((0.0, 0.0), |(n, d), &(l, t)| {
        let e = (t - m).exp();
        (n + l * e, d + e)
    });
    num / den
}

/// Entropy from both routes.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyCurve {
    /// `(lambda_b, ln W_b / N)` on occupied bins.
    pub direct: Vec<(f64, f64)>,
    /// `(lambda(mu), phi(mu) + mu lambda(mu) / 2)` over a `mu` grid.
    pub legendre: Vec<(f64, f64)>,
}

/// Inverse Legendre transform of the free entropy over `mus`.
pub fn legendre_entropy(dos: &DensityOfStates, mus: &[f64]) -> Result<Vec<(f64, f64)>> {
    mus.iter()
        .map(|&mu| {
            let phi = free_entropy_from_dos(dos, mu)?.value;
            let l = mean_lambda(dos, mu);
            Ok((l, phi + mu * l / 2.0))
        })
        .collect()
}

/// `|mu|` large enough that the biased mean sits within half a bin of the
/// occupied edge in the direction of `sign`.
fn legendre_reach(dos: &DensityOfStates, sign: f64) -> f64 {
    let occ: Vec<f64> = dos.occupied().map(|(l, _)| l).collect();
    let target = if sign > 0.0 { occ[0] } else { occ[occ.len() - 1] };
    let mut mu = 1.0 / dos.n_cols as f64;
    for _ in 0..60 {
        if (mean_lambda(dos, sign * mu) - target).abs() < 0.5 * dos.grid.width {
            break;
        }
        mu *= 1.5;
    }
    mu
}

/// Direct `ln W / N` and the Legendre route over `points` values of `mu`
/// spanning the occupied support.
pub fn entropy_curve_from_dos(dos: &DensityOfStates, points: usize) -> Result<EntropyCurve> {
    dos.validate()?;
    let nf = dos.n_cols as f64;
    let direct = dos.occupied().map(|(l, w)| (l, w / nf)).collect();
    let (lo, hi) = (legendre_reach(dos, -1.0), legendre_reach(dos, 1.0));
    let half = points.max(2) / 2;
    let mut mus: Vec<f64> = (0..half).map(|i| -lo * (1.0 - i as f64 / half as f64)).collect();
    mus.extend((0..=half).map(|i| hi * i as f64 / half as f64));
    Ok(EntropyCurve {
        direct,
        legendre: legendre_entropy(dos, &mus)?,
    })
}

/// Exhaustive enumeration result.
#[derive(Clone, Debug)]
pub struct Enumeration {
    pub dos: DensityOfStates,
    /// `min_c lambda_min(c)`.
    pub lambda_min_star: f64,
    /// `max_c lambda_max(c)`.
    pub lambda_max_star: f64,
    pub subsets: u64,
}

/// `rank`-th `k`-subset of `0..n` in lexicographic order.
fn unrank(mut rank: u64, n: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut c = 0;
    for i in 0..k {
        loop {
            let count = binomial(n - c - 1, k - i - 1);
            if rank < count {
                break;
            }
            rank -= count;
            c += 1;
        }
        out.push(c);
        c += 1;
    }
    out
}

/// Advances to the next `k`-subset in lexicographic order.
fn next_subset(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

const CHUNK: u64 = 4096;

/// `(lambda_min, lambda_max)` of every `S`-subset in lexicographic order.
pub fn enumerate_spectra(a: &MeasurementMatrix, s: usize) -> Result<Vec<(f64, f64)>> {
    let n = a.n_cols();
    if s == 0 || s > n {
        return Err(Error::invalid(format!("need 0 < S <= N, got S = {s}, N = {n}")));
    }
    let count = ln_binomial(n, s).exp();
    if count > ENUMERATION_LIMIT * (1.0 + 1e-12) {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let total = binomial(n, s);
    let products = a.column_products();
    let chunk = |c: u64| -> Result<Vec<(f64, f64)>> {
        let start = c * CHUNK;
        let len = CHUNK.min(total - start);
        let mut idx = unrank(start, n, s);
        let mut g = nalgebra::DMatrix::zeros(s, s);
        let mut vals = Vec::with_capacity(len as usize);
        for k in 0..len {
            if k > 0 {
                next_subset(&mut idx, n);
            }
            for p in 0..s {
                for q in 0..s {
                    g[(p, q)] = products[(idx[p], idx[q])];
                }
            }
            vals.push(eigen_range(&g)?);
        }
        Ok(vals)
    };
    let chunks = total.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    let parts: Vec<Result<Vec<(f64, f64)>>> = (0..chunks).into_par_iter().map(chunk).collect();
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<Result<Vec<(f64, f64)>>> = (0..chunks).map(chunk).collect();
    let mut out = Vec::with_capacity(total as usize);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Extreme eigenvalues of every `S`-subset, binned on `grid` for `branch`
/// (the grid grows to cover all values).
pub fn enumerate_exact(a: &MeasurementMatrix, s: usize, branch: Branch, grid: BinGrid) -> Result<Enumeration> {
    let spectra = enumerate_spectra(a, s)?;
    let lo = spectra.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = spectra.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let values: Vec<f64> = spectra
        .iter()
        .map(|&(a, b)| match branch {
            Branch::Min => a,
            Branch::Max => b,
        })
        .collect();
    let (vmin, vmax) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let grid = cover(grid, vmin, vmax);
    let mut samples = vec![0u64; grid.count];
    for v in &values {
        samples[grid.index(*v).expect("grid covers all values")] += 1;
    }
    let log_counts = samples
        .iter()
        .map(|&c| if c > 0 { (c as f64).ln() } else { f64::NEG_INFINITY })
        .collect();
    Ok(Enumeration {
        dos: DensityOfStates {
            branch,
            grid,
            log_counts,
            samples,
            n_cols: a.n_cols(),
            subset_size: s,
        },
        lambda_min_star: lo,
        lambda_max_star: hi,
        subsets: values.len() as u64,
    })
}

/// Smallest extension of `grid` by whole bins containing `[lo, hi]`.
fn cover(grid: BinGrid, lo: f64, hi: f64) -> BinGrid {
    let below = ((grid.lo - lo) / grid.width).ceil().max(0.0) as usize;
    let start = grid.lo - below as f64 * grid.width;
    let mut g = BinGrid {
        lo: start,
        width: grid.width,
        count: grid.count + below,
    };
    while g.index(hi).is_none() {
        g.count += 1;
    }
    if g.index(lo).is_none() {
        g.lo -= g.width;
        g.count += 1;
    }
    if g != grid {
        log::warn!(
            "enumerated eigenvalues span [{lo}, {hi}]; histogram grid extended to [{}, {}]",
            g.lo,
            g.hi()
        );
    }
    g
}

/// Maps a selection to its eigenvalue on `branch` (used by oracle checks).
pub fn subset_lambda(a: &MeasurementMatrix, sel: &SubsetSelection, branch: Branch) -> Result<f64> {
    Ok(2.0 * crate::emc::energy(a, sel, branch)?)
}

/// Block-bootstrap standard errors of `ln W_b / N`.
///
/// `blocks[rung][block][bin]`; each resample draws block indices with
/// replacement (the same indices for every rung, preserving exchange
/// correlations) and redoes the multihistogram solve. Bins occupied in fewer
/// than two resamples get `NaN`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_entropy_errors(
    blocks: &[Vec<Vec<u64>>],
    mus: &[f64],
    grid: BinGrid,
    branch: Branch,
    n_cols: usize,
    subset_size: usize,
    resamples: usize,
    seed: u64,
    opts: &WhamOptions,
) -> Result<Vec<f64>> {
    if blocks.len() != mus.len() || blocks.is_empty() {
        return Err(Error::invalid("need one block set per rung"));
    }
    let n_blocks = blocks[0].len();
    if n_blocks < 2 || blocks.iter().any(|r| r.len() != n_blocks) {
        return Err(Error::invalid(
            "every rung needs the same number (at least two) of blocks",
        ));
    }
    let mut rng = stream_rng(seed, BOOTSTRAP_STREAM);
    let nb = grid.count;
    let mut sum = vec![0.0; nb];
    let mut sum_sq = vec![0.0; nb];
    let mut hits = vec![0usize; nb];
    for _ in 0..resamples {
        let picks: Vec<usize> = (0..n_blocks).map(|_| rng.random_range(0..n_blocks)).collect();
        let hists: Vec<EnergyHistogram> = blocks
            .iter()
            .enumerate()
            .map(|(r, rb)| {
                let mut counts = vec![0u64; nb];
                for &p in &picks {
                    for (c, v) in counts.iter_mut().zip(&rb[p]) {
                        *c += v;
                    }
                }
                EnergyHistogram {
                    rung: r,
                    mu: mus[r],
                    grid,
                    total_samples: counts.iter().sum(),
                    counts,
                }
            })
            .collect();
        // a resample can open a ladder gap; it is skipped
        let sol = match wham_solve(&hists, branch, n_cols, subset_size, opts) {
            Ok(s) => s,
            Err(Error::LadderGap(..)) => continue,
            Err(e) => return Err(e),
        };
        for (b, s) in sol.dos.entropy().iter().enumerate() {
            if s.is_finite() {
                sum[b] += s;
                sum_sq[b] += s * s;
                hits[b] += 1;
            }
        }
    }
    Ok((0..nb)
        .map(|b| {
            if hits[b] < 2 {
                return f64::NAN;
            }
            let m = sum[b] / hits[b] as f64;
            ((sum_sq[b] / hits[b] as f64 - m * m).max(0.0) * hits[b] as f64 / (hits[b] - 1) as f64).sqrt()
        })
        .collect())
}

/// DOS file: metadata line `branch=.. N=.. S=.. normalization=C(N,S)`, then
/// `lambda,sigma,samples` rows for every bin.
pub fn write_dos<W: Write>(mut w: W, comments: &[String], dos: &DensityOfStates) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(
        w,
        "branch={} N={} S={} normalization=C({},{})",
        dos.branch, dos.n_cols, dos.subset_size, dos.n_cols, dos.subset_size
    )?;
    writeln!(w, "lambda,sigma,samples")?;
    let nf = dos.n_cols as f64;
    for (b, c) in dos.grid.centers().iter().enumerate() {
        writeln!(w, "{c:e},{:e},{}", dos.log_counts[b] / nf, dos.samples[b])?;
    }
    Ok(())
}

pub fn read_dos<R: BufRead>(r: R) -> Result<(Vec<String>, DensityOfStates)> {
    let mut comments = Vec::new();
    let mut lines = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if let Some(c) = t.strip_prefix('#') {
            comments.push(c.trim().to_string());
        } else if !t.is_empty() {
            lines.push(t.to_string());
        }
    }
    let meta = lines
        .first()
        .ok_or_else(|| Error::parse("empty density of states file"))?;
    let field = |key: &str| -> Result<&str> {
        meta.split_whitespace()
            .find_map(|kv| kv.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
            .ok_or_else(|| Error::parse(format!("missing '{key}=' in density of states header")))
    };
    let branch: Branch = field("branch")?.parse()?;
    let n_cols: usize = field("N")?.parse().map_err(|_| Error::parse("bad N"))?;
    let subset_size: usize = field("S")?.parse().map_err(|_| Error::parse("bad S"))?;
    if lines.get(1).map(|l| l.replace(' ', "")) != Some("lambda,sigma,samples".into()) {
        return Err(Error::parse("expected 'lambda,sigma,samples' column header"));
    }
    let nf = n_cols as f64;
    let mut centers = Vec::new();
    let mut log_counts = Vec::new();
    let mut samples = Vec::new();
    for l in &lines[2..] {
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::parse(format!("expected 3 fields in '{l}'")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(format!("bad number '{s}'")));
        centers.push(num(f[0])?);
        log_counts.push(num(f[1])? * nf);
        samples.push(f[2].parse::<u64>().map_err(|_| Error::parse("bad sample count"))?);
    }
    if centers.len() < 2 {
        return Err(Error::parse("density of states needs at least two bins"));
    }
    let width = centers[1] - centers[0];
    let grid = BinGrid {
        lo: centers[0] - 0.5 * width,
        width,
        count: centers.len(),
    };
    let dos = DensityOfStates {
        branch,
        grid,
        log_counts,
        samples,
        n_cols,
        subset_size,
    };
    dos.validate()?;
    Ok((comments, dos))
}
