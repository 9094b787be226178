//! Exchange Monte Carlo (parallel tempering) over `S`-column subsets.
//!
//! Each rung `i` of the ladder samples subsets `c` with weight
//! `exp(-N mu_i Lambda(c))`, where `Lambda = lambda_min / 2` on the `mu > 0`
//! branch and `lambda_max / 2` on the `mu < 0` branch. Moves swap one selected
//! column for one unselected column; neighbouring rungs periodically attempt to
//! exchange their configurations.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::ensemble::{gram, MeasurementMatrix, SubsetSelection};
use crate::linalg::{extreme_eigenvalue, lanczos_extreme, Extreme};
use crate::rng::{stream_rng, StreamRng, EXCHANGE_STREAM, RUNG_BASE};
use crate::{Branch, Error, Result};

/// Above this subset size energies come from warm-started Lanczos iterations.
pub const LANCZOS_THRESHOLD: usize = 128;
const LANCZOS_TOL: f64 = 1e-13;

fn extreme_of(branch: Branch) -> Extreme {
    match branch {
        Branch::Min => Extreme::Min,
        Branch::Max => Extreme::Max,
    }
}

/// `Lambda(c) = lambda_extreme(A_c^T A_c) / 2`.
pub fn energy(a: &MeasurementMatrix, sel: &SubsetSelection, branch: Branch) -> Result<f64> {
    if sel.is_empty() {
        return Err(Error::invalid("energy of an empty subset"));
    }
    let g = gram(a, sel)?;
    Ok(0.5 * extreme_eigenvalue(&g, extreme_of(branch))?)
}

/// Replaces a uniformly chosen selected index by a uniformly chosen unselected one.
pub fn propose_swap<R: Rng + ?Sized>(sel: &SubsetSelection, n_cols: usize, rng: &mut R) -> Result<SubsetSelection> {
    let s = sel.len();
    if s == 0 || s >= n_cols {
        return Err(Error::invalid(format!(
            "swap moves need 0 < S < N, got S = {s}, N = {n_cols}"
        )));
    }
    let inside = sel.indices();
    let i = rng.random_range(0..s);
    let j = rng.random_range(0..n_cols - s);
    // j-th index not in the selection
    let mut skipped = 0;
    let mut out = j;
    for &k in inside {
        if k <= out {
            skipped += 1;
            out = j + skipped;
        } else {
            break;
        }
    }
    let mut next = inside.to_vec();
    next[i] = out;
    SubsetSelection::from_unsorted(next, n_cols)
}

/// `min(1, exp(log_ratio))`.
pub fn acceptance_probability(log_ratio: f64) -> f64 {
    if log_ratio >= 0.0 {
        1.0
    } else {
        log_ratio.exp()
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    log_ratio >= 0.0 || rng.random::<f64>() < log_ratio.exp()
}

/// Metropolis test for a move with `delta = Lambda(c) - Lambda(c')`.
pub fn metropolis_accept<R: Rng + ?Sized>(mu: f64, n: usize, delta: f64, rng: &mut R) -> bool {
    accept(mu * n as f64 * delta, rng)
}

/// Exchange test between rungs at `mu_i`, `mu_j` holding energies `energy_i`, `energy_j`.
pub fn exchange_accept<R: Rng + ?Sized>(
    mu_i: f64,
    mu_j: f64,
    n: usize,
    energy_i: f64,
    energy_j: f64,
    rng: &mut R,
) -> bool {
    accept(n as f64 * (mu_i - mu_j) * (energy_i - energy_j), rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ladder {
    mus: Vec<f64>,
    branch: Branch,
    exchange_interval: usize,
}

impl Ladder {
    /// `mus` must be strictly monotone and carry the branch sign (zero allowed).
    pub fn new(branch: Branch, mus: Vec<f64>, exchange_interval: usize) -> Result<Self> {
        if mus.is_empty() {
            return Err(Error::invalid("ladder needs at least one rung"));
        }
        if exchange_interval == 0 {
            return Err(Error::invalid("exchange interval must be at least one sweep"));
        }
        if mus.iter().any(|&m| !m.is_finite() || !branch.admits(m)) {
            return Err(Error::invalid(format!(
                "all ladder values must be finite with the {branch} branch sign"
            )));
        }
        let up = mus.windows(2).all(|w| w[1] > w[0]);
        let down = mus.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::invalid("ladder values must be strictly monotone"));
        }
        Ok(Ladder {
            mus,
            branch,
            exchange_interval,
        })
    }

    /// `rungs` values of `|mu|` from `abs_lo` to `abs_hi`: geometric, or
    /// linear when `abs_lo` is zero.
    pub fn geometric(branch: Branch, abs_lo: f64, abs_hi: f64, rungs: usize, exchange_interval: usize) -> Result<Self> {
        if rungs == 0 || !(abs_lo >= 0.0 && abs_hi >= abs_lo && abs_hi.is_finite()) {
            return Err(Error::invalid(format!(
                "bad ladder range [{abs_lo}, {abs_hi}] with {rungs} rungs"
            )));
        }
        let s = branch.sign();
        let mus = if rungs == 1 {
            vec![s * abs_lo]
        } else if abs_lo == 0.0 {
            (0..rungs).map(|i| s * abs_hi * i as f64 / (rungs - 1) as f64).collect()
        } else {
            let r = (abs_hi / abs_lo).ln() / (rungs - 1) as f64;
            (0..rungs).map(|i| s * abs_lo * (r * i as f64).exp()).collect()
        };
        Ladder::new(branch, mus, exchange_interval)
    }

    pub fn mus(&self) -> &[f64] {
        &self.mus
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn exchange_interval(&self) -> usize {
        self.exchange_interval
    }

    pub fn len(&self) -> usize {
        self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mus.is_empty()
    }
}

/// Uniform bins `[lo + k w, lo + (k + 1) w)` over the eigenvalue axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinGrid {
    pub lo: f64,
    pub width: f64,
    pub count: usize,
}

impl BinGrid {
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count == 0 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("bad bin grid [{lo}, {hi}] with {count} bins")));
        }
        Ok(BinGrid {
            lo,
            width: (hi - lo) / count as f64,
            count,
        })
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.width * self.count as f64
    }

    pub fn center(&self, b: usize) -> f64 {
        self.lo + (b as f64 + 0.5) * self.width
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.count).map(|b| self.center(b)).collect()
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.count).map(|b| self.lo + b as f64 * self.width).collect()
    }

    pub fn index(&self, lambda: f64) -> Option<usize> {
        let k = ((lambda - self.lo) / self.width).floor();
        if k >= 0.0 && k < self.count as f64 {
            Some(k as usize)
        } else {
            None
        }
    }

    /// Grid grown by whole bins to cover `lambda`, with the number of bins prepended.
    fn extended_to(&self, lambda: f64) -> (BinGrid, usize) {
        let k = ((lambda - self.lo) / self.width).floor();
        if k < 0.0 {
            let extra = (-k) as usize;
            (
                BinGrid {
                    lo: self.lo - extra as f64 * self.width,
                    width: self.width,
                    count: self.count + extra,
                },
                extra,
            )
        } else {
            let count = (k as usize + 1).max(self.count);
            (BinGrid { count, ..*self }, 0)
        }
    }
}

impl Default for BinGrid {
    fn default() -> Self {
        BinGrid::uniform(0.0, 4.0, 200).expect("valid default grid")
    }
}

/// Post-burn-in eigenvalue histogram of one rung.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyHistogram {
    pub rung: usize,
    pub mu: f64,
    pub grid: BinGrid,
    pub counts: Vec<u64>,
    pub total_samples: u64,
}

impl EnergyHistogram {
    pub fn bin_edges(&self) -> Vec<f64> {
        self.grid.edges()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        self.grid.centers()
    }
}

fn pad(counts: &mut Vec<u64>, prepend: usize, new_len: usize) {
    if prepend > 0 {
        counts.splice(0..0, std::iter::repeat_n(0, prepend));
    }
    counts.resize(new_len, 0);
}

/// One Markov chain's current configuration.
#[derive(Clone, Debug)]
pub struct Walker {
    inside: Vec<usize>,
    outside: Vec<usize>,
    gram: DMatrix<f64>,
    energy: f64,
    branch: Branch,
    warm: Option<DVector<f64>>,
    best: (f64, Vec<usize>),
}

impl Walker {
    /// `products` is the full `A^T A`.
    pub fn new(products: &DMatrix<f64>, sel: &SubsetSelection, branch: Branch) -> Result<Self> {
        let n = products.nrows();
        let s = sel.len();
        if s == 0 || s >= n {
            return Err(Error::invalid(format!("walkers need 0 < S < N, got S = {s}, N = {n}")));
        }
        let inside = sel.indices().to_vec();
        let mask = sel.indicator(n);
        let outside = (0..n).filter(|&i| !mask[i]).collect();
        let gram = DMatrix::from_fn(s, s, |p, r| products[(inside[p], inside[r])]);
        let mut w = Walker {
            inside,
            outside,
            gram,
            energy: 0.0,
            branch,
            warm: None,
            best: (0.0, Vec::new()),
        };
        let (e, v) = w.evaluate()?;
        w.energy = e;
        w.warm = v;
        w.best = (e, w.inside.clone());
        Ok(w)
    }

    fn evaluate(&self) -> Result<(f64, Option<DVector<f64>>)> {
        let which = extreme_of(self.branch);
        if self.gram.nrows() > LANCZOS_THRESHOLD {
            let (v, vec) = lanczos_extreme(&self.gram, which, self.warm.as_ref(), LANCZOS_TOL)?;
            Ok((0.5 * v, Some(vec)))
        } else {
            Ok((0.5 * extreme_eigenvalue(&self.gram, which)?, None))
        }
    }

    pub fn selection(&self) -> SubsetSelection {
        SubsetSelection::from_unsorted(self.inside.clone(), self.inside.len() + self.outside.len())
            .expect("walker holds distinct in-range indices")
    }

    /// Current energy `Lambda`.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Current extreme eigenvalue `2 Lambda`.
    pub fn lambda(&self) -> f64 {
        2.0 * self.energy
    }

    /// Most extreme `lambda` visited and the subset achieving it.
    pub fn best(&self) -> (f64, SubsetSelection) {
        let n = self.inside.len() + self.outside.len();
        (
            2.0 * self.best.0,
            SubsetSelection::from_unsorted(self.best.1.clone(), n).expect("valid subset"),
        )
    }

    /// `|Lambda_tracked - Lambda_recomputed|` from a fresh Gram matrix.
    pub fn audit(&self, a: &MeasurementMatrix) -> Result<f64> {
        Ok((self.energy - energy(a, &self.selection(), self.branch)?).abs())
    }

    fn set_slot(&mut self, slot: usize, col: usize, products: &DMatrix<f64>) {
        for (k, &c) in self.inside.iter().enumerate() {
            if k != slot {
                let v = products[(col, c)];
                self.gram[(slot, k)] = v;
                self.gram[(k, slot)] = v;
            }
        }
        self.gram[(slot, slot)] = products[(col, col)];
    }

    /// One swap proposal; returns whether it was accepted.
    pub fn step<R: Rng + ?Sized>(&mut self, products: &DMatrix<f64>, mu: f64, rng: &mut R) -> Result<bool> {
        let i = rng.random_range(0..self.inside.len());
        let j = rng.random_range(0..self.outside.len());
        let (old, new) = (self.inside[i], self.outside[j]);
        self.set_slot(i, new, products);
        let (e, vec) = match self.evaluate() {
            Ok(v) => v,
            Err(err) => {
                self.set_slot(i, old, products);
                return Err(err);
            }
        };
        let n = self.inside.len() + self.outside.len();
        if metropolis_accept(mu, n, self.energy - e, rng) {
            self.inside[i] = new;
            self.outside[j] = old;
            self.energy = e;
            if vec.is_some() {
                self.warm = vec;
            }
            let better = match self.branch {
                Branch::Min => e < self.best.0,
                Branch::Max => e > self.best.0,
            };
            if better {
                self.best = (e, self.inside.clone());
            }
            Ok(true)
        } else {
            self.set_slot(i, old, products);
            Ok(false)
        }
    }

    /// `N` swap proposals; returns the number accepted.
    pub fn sweep<R: Rng + ?Sized>(&mut self, products: &DMatrix<f64>, mu: f64, rng: &mut R) -> Result<usize> {
        let n = self.inside.len() + self.outside.len();
        let mut accepted = 0;
        for _ in 0..n {
            accepted += self.step(products, mu, rng)? as usize;
        }
        Ok(accepted)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmcOptions {
    pub sweeps: usize,
    /// Sweeps discarded before recording.
    pub burn_in: usize,
    pub grid: BinGrid,
    pub seed: u64,
    /// Recorded sweeps are split into this many consecutive blocks for error bars.
    pub blocks: usize,
}

impl EmcOptions {
    /// Defaults: 20% burn-in, 200 bins over `[0, 4]`, 20 blocks.
    pub fn new(sweeps: usize, seed: u64) -> Self {
        EmcOptions {
            sweeps,
            burn_in: sweeps / 5,
            grid: BinGrid::default(),
            seed,
            blocks: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EmcRun {
    pub n_cols: usize,
    pub subset_size: usize,
    pub ladder: Ladder,
    pub histograms: Vec<EnergyHistogram>,
    /// `[rung][block][bin]` counts over consecutive blocks of recorded sweeps.
    pub block_counts: Vec<Vec<Vec<u64>>>,
    /// Metropolis acceptance rate per rung.
    pub swap_acceptance: Vec<f64>,
    /// Exchange acceptance rate per adjacent pair `(i, i + 1)`.
    pub exchange_acceptance: Vec<f64>,
    /// Most extreme `lambda` visited on the ladder's branch and its subset.
    pub extreme: (f64, SubsetSelection),
    pub grid_extended: bool,
}

impl EmcRun {
    /// Adjacent pairs whose exchange acceptance is below `threshold`.
    pub fn weak_exchanges(&self, threshold: f64) -> Vec<usize> {
        self.exchange_acceptance
            .iter()
            .enumerate()
            .filter(|(_, &r)| r < threshold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Flat key/value summary for run manifests.
    pub fn summary(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(",");
        vec![
            ("rungs".into(), self.ladder.len().to_string()),
            (
                "ladder_mus".into(),
                self.ladder
                    .mus()
                    .iter()
                    .map(|m| format!("{m:e}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("swap_acceptance".into(), join(&self.swap_acceptance)),
            ("exchange_acceptance".into(), join(&self.exchange_acceptance)),
            ("extreme_lambda".into(), format!("{:e}", self.extreme.0)),
            (
                "extreme_subset".into(),
                self.extreme
                    .1
                    .indices()
                    .iter()
                    .map(|i| i.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
            ),
            ("grid_extended".into(), self.grid_extended.to_string()),
        ]
    }
}

/// Runs the exchange Monte Carlo for `opts.sweeps` sweeps.
///
/// Every rung draws from its own stream `(seed, RUNG_BASE + rung)` and
/// exchanges from `(seed, EXCHANGE_STREAM)`, so results are identical for any
/// thread count.
pub fn run(a: &MeasurementMatrix, subset_size: usize, ladder: &Ladder, opts: &EmcOptions) -> Result<EmcRun> {
    let n = a.n_cols();
    if subset_size == 0 || subset_size >= n {
        return Err(Error::invalid(format!(
            "need 0 < S < N, got S = {subset_size}, N = {n}"
        )));
    }
    if opts.sweeps <= opts.burn_in {
        return Err(Error::invalid(format!(
            "sweeps ({}) must exceed burn_in ({})",
            opts.sweeps, opts.burn_in
        )));
    }
    if opts.blocks == 0 || opts.blocks > opts.sweeps - opts.burn_in {
        return Err(Error::invalid(
            "block count must lie between 1 and the number of recorded sweeps",
        ));
    }
    let products = a.column_products();
    let k = ladder.len();
    let branch = ladder.branch();
    let mus = ladder.mus().to_vec();

    let mut rngs: Vec<StreamRng> = (0..k).map(|r| stream_rng(opts.seed, RUNG_BASE + r as u64)).collect();
    let mut walkers = Vec::with_capacity(k);
    for rng in rngs.iter_mut() {
        let start = index::sample(rng, n, subset_size).into_vec();
        walkers.push(Walker::new(
            &products,
            &SubsetSelection::from_unsorted(start, n)?,
            branch,
        )?);
    }
    let mut xrng = stream_rng(opts.seed, EXCHANGE_STREAM);

    let recorded = opts.sweeps - opts.burn_in;
    let mut grid = opts.grid;
    let mut grid_extended = false;
    let mut counts = vec![vec![0u64; grid.count]; k];
    let mut blocks = vec![vec![vec![0u64; grid.count]; opts.blocks]; k];
    let mut accepted = vec![0u64; k];
    let mut x_tries = vec![0u64; k.saturating_sub(1)];
    let mut x_accepts = vec![0u64; k.saturating_sub(1)];

    let interval = ladder.exchange_interval();
    let mut done = 0;
    let mut parity = 0;
    while done < opts.sweeps {
        let chunk = interval.min(opts.sweeps - done);
        let advance = |((w, rng), &mu): ((&mut Walker, &mut StreamRng), &f64)| -> Result<(Vec<f64>, u64)> {
            let mut trace = Vec::with_capacity(chunk);
            let mut acc = 0u64;
            for _ in 0..chunk {
                acc += w.sweep(&products, mu, rng)? as u64;
                trace.push(w.lambda());
            }
            Ok((trace, acc))
        };
        #[cfg(feature = "parallel")]
        let results: Vec<Result<(Vec<f64>, u64)>> = walkers
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .zip(mus.par_iter())
            .map(advance)
            .collect();
        #[cfg(not(feature = "parallel"))]
        let results: Vec<Result<(Vec<f64>, u64)>> = walkers
            .iter_mut()
            .zip(rngs.iter_mut())
            .zip(mus.iter())
            .map(advance)
            .collect();

        for (r, res) in results.into_iter().enumerate() {
            let (trace, acc) = res?;
            accepted[r] += acc;
            for (off, &lambda) in trace.iter().enumerate() {
                let sweep = done + off;
                if sweep < opts.burn_in {
                    continue;
                }
                let bin = match grid.index(lambda) {
                    Some(b) => b,
                    None => {
                        let (wider, prepend) = grid.extended_to(lambda);
                        if !grid_extended {
                            log::warn!(
                                "lambda = {lambda} outside [{}, {}); extending the histogram grid",
                                grid.lo,
                                grid.hi()
                            );
                        }
                        grid_extended = true;
                        grid = wider;
                        for rung in 0..k {
                            pad(&mut counts[rung], prepend, grid.count);
                            for b in blocks[rung].iter_mut() {
                                pad(b, prepend, grid.count);
                            }
                        }
                        grid.index(lambda).expect("grid extended to cover lambda")
                    }
                };
                let block = (sweep - opts.burn_in) * opts.blocks / recorded;
                counts[r][bin] += 1;
                blocks[r][block][bin] += 1;
            }
        }
        done += chunk;

        // exchanges on alternating even / odd pairings
        let mut i = parity;
        while i + 1 < k {
            x_tries[i] += 1;
            if exchange_accept(
                mus[i],
                mus[i + 1],
                n,
                walkers[i].energy(),
                walkers[i + 1].energy(),
                &mut xrng,
            ) {
                walkers.swap(i, i + 1);
                x_accepts[i] += 1;
            }
            i += 2;
        }
        parity ^= 1;
    }

    let proposals = (opts.sweeps * n) as f64;
    let exchange_acceptance: Vec<f64> = x_tries
        .iter()
        .zip(&x_accepts)
        .map(|(&t, &a)| if t > 0 { a as f64 / t as f64 } else { 0.0 })
        .collect();
    for (i, r) in exchange_acceptance.iter().enumerate() {
        if *r < 0.1 {
            log::warn!("exchange acceptance between rungs {i} and {} is {r:.3}", i + 1);
        }
    }
    let extreme = walkers
        .iter()
        .map(Walker::best)
        .reduce(|x, y| match branch {
            Branch::Min if y.0 < x.0 => y,
            Branch::Max if y.0 > x.0 => y,
            _ => x,
        })
        .expect("at least one walker");

    Ok(EmcRun {
        n_cols: n,
        subset_size,
        ladder: ladder.clone(),
        histograms: counts
            .into_iter()
            .enumerate()
            .map(|(r, c)| EnergyHistogram {
                rung: r,
                mu: mus[r],
                grid,
                total_samples: c.iter().sum(),
                counts: c,
            })
            .collect(),
        block_counts: blocks,
        swap_acceptance: accepted.iter().map(|&a| a as f64 / proposals).collect(),
        exchange_acceptance,
        extreme,
        grid_extended,
    })
}

/// Histogram as read back from a file, with its run metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramRecord {
    pub histogram: EnergyHistogram,
    pub n_cols: usize,
    pub subset_size: usize,
    pub branch: Branch,
}

/// Per-rung histogram file: metadata header `mu N S branch total_samples`, its
/// values, then `bin_center,count` rows for every bin.
pub fn write_histogram<W: Write>(mut w: W, comments: &[String], rec: &HistogramRecord) -> Result<()> {
    let h = &rec.histogram;
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "mu N S branch total_samples")?;
    writeln!(
        w,
        "{:e} {} {} {} {}",
        h.mu, rec.n_cols, rec.subset_size, rec.branch, h.total_samples
    )?;
    writeln!(w, "bin_center,count")?;
    for (c, n) in h.grid.centers().iter().zip(&h.counts) {
        writeln!(w, "{c:e},{n}")?;
    }
    Ok(())
}

fn data_lines<R: BufRead>(r: R) -> Result<(Vec<String>, Vec<String>)> {
    let mut comments = Vec::new();
    let mut lines = Vec::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(c) = t.strip_prefix('#') {
            comments.push(c.trim().to_string());
        } else {
            lines.push(t.to_string());
        }
    }
    Ok((comments, lines))
}

/// Grid from consecutive bin centers.
fn grid_from_centers(centers: &[f64]) -> Result<BinGrid> {
    let width = match centers {
        [] => return Err(Error::parse("histogram has no bins")),
        [_] => 1.0,
        [a, b, ..] => b - a,
    };
    if !(width > 0.0) {
        return Err(Error::parse("bin centers must increase"));
    }
    for (k, c) in centers.iter().enumerate() {
        let expect = centers[0] + k as f64 * width;
        if (c - expect).abs() > 1e-6 * width.max(c.abs()) {
            return Err(Error::parse("bin centers are not uniformly spaced"));
        }
    }
    Ok(BinGrid {
        lo: centers[0] - 0.5 * width,
        width,
        count: centers.len(),
    })
}

pub fn read_histogram<R: BufRead>(r: R, rung: usize) -> Result<(Vec<String>, HistogramRecord)> {
    let (comments, lines) = data_lines(r)?;
    if lines.len() < 3 || lines[0].split_whitespace().collect::<Vec<_>>() != ["mu", "N", "S", "branch", "total_samples"]
    {
        return Err(Error::parse("missing histogram metadata header"));
    }
    let meta: Vec<&str> = lines[1].split_whitespace().collect();
    if meta.len() != 5 {
        return Err(Error::parse("histogram metadata needs 5 fields"));
    }
    let bad = |what: &str| Error::parse(format!("bad histogram {what}"));
    let mu: f64 = meta[0].parse().map_err(|_| bad("mu"))?;
    let n_cols: usize = meta[1].parse().map_err(|_| bad("N"))?;
    let subset_size: usize = meta[2].parse().map_err(|_| bad("S"))?;
    let branch: Branch = meta[3].parse()?;
    let total: u64 = meta[4].parse().map_err(|_| bad("total_samples"))?;
    if lines[2].replace(' ', "") != "bin_center,count" {
        return Err(Error::parse("expected 'bin_center,count' column header"));
    }
    let mut centers = Vec::new();
    let mut counts = Vec::new();
    for l in &lines[3..] {
        let (c, n) = l.split_once(',').ok_or_else(|| bad("row"))?;
        centers.push(c.trim().parse::<f64>().map_err(|_| bad("bin center"))?);
        counts.push(n.trim().parse::<u64>().map_err(|_| bad("count"))?);
    }
    let grid = grid_from_centers(&centers)?;
    if counts.iter().sum::<u64>() != total {
        return Err(Error::parse("histogram counts do not add up to total_samples"));
    }
    Ok((
        comments,
        HistogramRecord {
            histogram: EnergyHistogram {
                rung,
                mu,
                grid,
                counts,
                total_samples: total,
            },
            n_cols,
            subset_size,
            branch,
        },
    ))
}

/// Block histograms of one rung: `bin_center,block_0,...` rows.
pub fn write_blocks<W: Write>(mut w: W, comments: &[String], grid: &BinGrid, blocks: &[Vec<u64>]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let names: Vec<String> = (0..blocks.len()).map(|b| format!("block_{b}")).collect();
    writeln!(w, "bin_center,{}", names.join(","))?;
    for (bin, c) in grid.centers().iter().enumerate() {
        let row: Vec<String> = blocks.iter().map(|b| b[bin].to_string()).collect();
        writeln!(w, "{c:e},{}", row.join(","))?;
    }
    Ok(())
}

pub fn read_blocks<R: BufRead>(r: R) -> Result<(BinGrid, Vec<Vec<u64>>)> {
    let (_, lines) = data_lines(r)?;
    let header = lines.first().ok_or_else(|| Error::parse("empty block file"))?;
    let n_blocks = header.split(',').count().saturating_sub(1);
    if n_blocks == 0 || !header.starts_with("bin_center") {
        return Err(Error::parse("bad block file header"));
    }
    let mut centers = Vec::new();
    let mut blocks = vec![Vec::new(); n_blocks];
    for l in &lines[1..] {
        let f: Vec<&str> = l.split(',').map(str::trim).collect();
        if f.len() != n_blocks + 1 {
            return Err(Error::parse("ragged block file row"));
        }
        centers.push(f[0].parse::<f64>().map_err(|_| Error::parse("bad bin center"))?);
        for (b, v) in f[1..].iter().enumerate() {
            blocks[b].push(v.parse::<u64>().map_err(|_| Error::parse("bad block count"))?);
        }
    }
    Ok((grid_from_centers(&centers)?, blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{generate, EnsembleSpec, Normalization};
    use crate::rng::stream_rng;

    fn matrix(n: usize, alpha: f64, seed: u64) -> MeasurementMatrix {
        generate(&EnsembleSpec::new(n, alpha, Normalization::Raw, seed).unwrap()).unwrap()
    }

    fn identity(n: usize) -> MeasurementMatrix {
        let spec = EnsembleSpec::new(n, 1.0, Normalization::UnitColumns, 0).unwrap();
        MeasurementMatrix::from_parts(DMatrix::identity(n, n), spec).unwrap()
    }

    #[test]
    fn energies() {
        let id = identity(5);
        let sel = SubsetSelection::new(vec![0, 2, 4], 5).unwrap();
        for b in [Branch::Min, Branch::Max] {
            assert!((energy(&id, &sel, b).unwrap() - 0.5).abs() < 1e-15);
        }
        let unit = generate(&EnsembleSpec::new(10, 0.5, Normalization::UnitColumns, 3).unwrap()).unwrap();
        let one = SubsetSelection::new(vec![7], 10).unwrap();
        assert!((energy(&unit, &one, Branch::Max).unwrap() - 0.5).abs() < 1e-14);
        let a = matrix(20, 0.5, 9);
        let sel = SubsetSelection::new(vec![1, 5, 6, 11, 19], 20).unwrap();
        assert!(energy(&a, &sel, Branch::Min).unwrap() <= energy(&a, &sel, Branch::Max).unwrap());
    }

    #[test]
    fn swap_proposals() {
        let mut rng = stream_rng(1, 99);
        let sel = SubsetSelection::new(vec![0], 2).unwrap();
        assert_eq!(propose_swap(&sel, 2, &mut rng).unwrap().indices(), &[1]);
        assert!(propose_swap(&sel, 1, &mut rng).is_err());

        let sel = SubsetSelection::new(vec![1, 4, 5, 8], 10).unwrap();
        for _ in 0..200 {
            let next = propose_swap(&sel, 10, &mut rng).unwrap();
            assert_eq!(next.len(), 4);
            let (a, b) = (sel.indicator(10), next.indicator(10));
            assert_eq!(a.iter().zip(&b).filter(|(x, y)| x != y).count(), 2);
        }

        // N = 4, S = 2 has S (N - S) = 4 equally likely neighbours
        let sel = SubsetSelection::new(vec![0, 2], 4).unwrap();
        let mut counts = std::collections::HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            *counts.entry(propose_swap(&sel, 4, &mut rng).unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 4);
        let sd = (draws as f64 * 0.25 * 0.75).sqrt();
        for &c in counts.values() {
            assert!((c as f64 - draws as f64 / 4.0).abs() < 3.0 * sd, "{counts:?}");
        }
    }

    fn frequency(mut f: impl FnMut(&mut StreamRng) -> bool, draws: usize) -> f64 {
        let mut rng = stream_rng(5, 7);
        (0..draws).filter(|_| f(&mut rng)).count() as f64 / draws as f64
    }

    #[test]
    fn acceptance_rules() {
        let n = 10;
        let ln2 = 2f64.ln();
        assert_eq!(frequency(|r| metropolis_accept(0.7, n, 0.0, r), 1000), 1.0);
        assert_eq!(frequency(|r| metropolis_accept(0.5, n, 1.0, r), 1000), 1.0);
        let p = frequency(|r| metropolis_accept(1.0, n, -ln2 / n as f64, r), 100_000);
        assert!((p - 0.5).abs() < 3.0 * (0.25f64 / 1e5).sqrt(), "{p}");

        assert_eq!(frequency(|r| exchange_accept(0.3, 0.3, n, 0.1, 0.9, r), 1000), 1.0);
        assert_eq!(frequency(|r| exchange_accept(0.3, 0.6, n, 0.4, 0.4, r), 1000), 1.0);
        let ln4 = 4f64.ln();
        let p = frequency(|r| exchange_accept(1.0, 0.0, n, -ln4 / n as f64, 0.0, r), 100_000);
        assert!((p - 0.25).abs() < 3.0 * (0.1875f64 / 1e5).sqrt(), "{p}");
        assert_eq!(acceptance_probability(5.0), 1.0);
        assert_eq!(acceptance_probability(-ln2), 0.5);
    }

    #[test]
    fn detailed_balance_of_the_acceptance_rule() {
        let mut rng = stream_rng(11, 0);
        let n = 12;
        for _ in 0..1000 {
            let mu: f64 = rng.random_range(-3.0..3.0);
            let (e1, e2): (f64, f64) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
            let pi = |e: f64| (-(n as f64) * mu * e).exp();
            let fwd = pi(e1) * acceptance_probability(mu * n as f64 * (e1 - e2));
            let rev = pi(e2) * acceptance_probability(mu * n as f64 * (e2 - e1));
            assert!((fwd - rev).abs() <= 1e-12 * fwd.max(rev));
        }
    }

    #[test]
    fn ladders() {
        let l = Ladder::geometric(Branch::Max, 0.1, 10.0, 3, 1).unwrap();
        assert!((l.mus()[1] + 1.0).abs() < 1e-12);
        let l = Ladder::geometric(Branch::Min, 0.0, 2.0, 3, 1).unwrap();
        assert_eq!(l.mus(), &[0.0, 1.0, 2.0]);
        assert!(Ladder::new(Branch::Min, vec![0.1, -0.2], 1).is_err());
        assert!(Ladder::new(Branch::Min, vec![0.1, 0.1], 1).is_err());
        assert!(Ladder::new(Branch::Min, vec![0.1], 0).is_err());
        assert!(Ladder::new(Branch::Max, vec![], 1).is_err());
    }

    #[test]
    fn walker_tracks_energy_and_cardinality() {
        let a = matrix(30, 0.5, 2);
        let products = a.column_products();
        let mut rng = stream_rng(3, 3);
        for branch in [Branch::Min, Branch::Max] {
            let sel = SubsetSelection::new(vec![0, 3, 7, 9, 20], 30).unwrap();
            let mut w = Walker::new(&products, &sel, branch).unwrap();
            for _ in 0..50 {
                w.sweep(&products, branch.sign() * 1.5, &mut rng).unwrap();
                assert_eq!(w.selection().len(), 5);
                assert!(w.audit(&a).unwrap() < 1e-10);
            }
            let (best, subset) = w.best();
            assert!((2.0 * energy(&a, &subset, branch).unwrap() - best).abs() < 1e-12);
        }
    }

    #[test]
    fn lanczos_walkers_agree_with_dense() {
        let a = matrix(300, 0.8, 4);
        let products = a.column_products();
        let sel = SubsetSelection::new((0..140).map(|i| 2 * i).collect(), 300).unwrap();
        let mut w = Walker::new(&products, &sel, Branch::Max).unwrap();
        let mut rng = stream_rng(8, 1);
        for _ in 0..40 {
            w.step(&products, -1.0, &mut rng).unwrap();
        }
        assert!(w.audit(&a).unwrap() < 1e-9);
    }

    #[test]
    fn zero_bias_marginal_is_uniform() {
        let a = matrix(8, 0.5, 6);
        let products = a.column_products();
        let mut rng = stream_rng(17, 0);
        let mut w = Walker::new(&products, &SubsetSelection::new(vec![0, 1], 8).unwrap(), Branch::Min).unwrap();
        let mut counts = std::collections::HashMap::new();
        let sweeps = 1_000_000;
        for _ in 0..sweeps {
            w.sweep(&products, 0.0, &mut rng).unwrap();
            *counts.entry(w.selection()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 28);
        let expect = sweeps as f64 / 28.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
        // 99th percentile of chi-square with 27 degrees of freedom
        assert!(chi2 < 46.96, "chi2 = {chi2}");
    }

    #[test]
    fn runs_are_deterministic() {
        let a = matrix(12, 0.5, 1);
        let ladder = Ladder::geometric(Branch::Min, 0.5, 3.0, 4, 1).unwrap();
        let mut opts = EmcOptions::new(2000, 42);
        opts.blocks = 10;
        let r1 = run(&a, 3, &ladder, &opts).unwrap();
        let r2 = run(&a, 3, &ladder, &opts).unwrap();
        assert_eq!(r1.histograms, r2.histograms);
        assert_eq!(r1.block_counts, r2.block_counts);
        for h in &r1.histograms {
            assert_eq!(h.total_samples, 1600);
            assert_eq!(h.counts.iter().sum::<u64>(), 1600);
        }
        for (r, blocks) in r1.block_counts.iter().enumerate() {
            let summed: Vec<u64> = (0..r1.histograms[r].counts.len())
                .map(|b| blocks.iter().map(|blk| blk[b]).sum())
                .collect();
            assert_eq!(summed, r1.histograms[r].counts);
        }
        assert_eq!(r1.exchange_acceptance.len(), 3);
        let other = run(&a, 3, &ladder, &EmcOptions { seed: 43, ..opts }).unwrap();
        assert_ne!(other.histograms, r1.histograms);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn results_do_not_depend_on_thread_count() {
        let a = matrix(16, 0.5, 2);
        let ladder = Ladder::geometric(Branch::Max, 0.2, 2.0, 5, 2).unwrap();
        let opts = EmcOptions::new(500, 9);
        let go = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run(&a, 4, &ladder, &opts).unwrap())
        };
        assert_eq!(go(1).histograms, go(3).histograms);
    }

    #[test]
    fn grid_extends_to_cover_samples() {
        let a = matrix(12, 0.25, 1);
        let ladder = Ladder::new(Branch::Max, vec![0.0], 1).unwrap();
        let mut opts = EmcOptions::new(300, 1);
        opts.grid = BinGrid::uniform(1.0, 1.2, 4).unwrap();
        let r = run(&a, 3, &ladder, &opts).unwrap();
        assert!(r.grid_extended);
        let h = &r.histograms[0];
        assert_eq!(h.counts.iter().sum::<u64>(), h.total_samples);
        assert!((h.grid.width - 0.05).abs() < 1e-15);
    }

    #[test]
    fn run_preconditions() {
        let a = matrix(12, 0.5, 1);
        let ladder = Ladder::new(Branch::Min, vec![1.0], 1).unwrap();
        assert!(run(&a, 0, &ladder, &EmcOptions::new(100, 1)).is_err());
        assert!(run(&a, 12, &ladder, &EmcOptions::new(100, 1)).is_err());
        let mut o = EmcOptions::new(100, 1);
        o.burn_in = 100;
        assert!(run(&a, 3, &ladder, &o).is_err());
    }

    #[test]
    fn histogram_files_round_trip() {
        let a = matrix(12, 0.5, 1);
        let ladder = Ladder::new(Branch::Min, vec![1.0, 2.0], 1).unwrap();
        let r = run(&a, 3, &ladder, &EmcOptions::new(400, 2)).unwrap();
        let rec = HistogramRecord {
            histogram: r.histograms[1].clone(),
            n_cols: 12,
            subset_size: 3,
            branch: Branch::Min,
        };
        let mut buf = Vec::new();
        write_histogram(&mut buf, &["hello".into()], &rec).unwrap();
        let (comments, back) = read_histogram(buf.as_slice(), 1).unwrap();
        assert_eq!(comments, vec!["hello".to_string()]);
        assert_eq!(back.histogram.counts, rec.histogram.counts);
        assert!((back.histogram.grid.lo - rec.histogram.grid.lo).abs() < 1e-12);
        assert_eq!((back.n_cols, back.subset_size, back.branch), (12, 3, Branch::Min));

        let mut buf = Vec::new();
        write_blocks(&mut buf, &[], &r.histograms[0].grid, &r.block_counts[0]).unwrap();
        let (grid, blocks) = read_blocks(buf.as_slice()).unwrap();
        assert_eq!(grid.count, r.histograms[0].grid.count);
        assert_eq!(blocks, r.block_counts[0]);
    }
}
