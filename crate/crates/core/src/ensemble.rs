//! Gaussian measurement matrices, column-subset Gram matrices and the
//! Marchenko–Pastur reference edges.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{stream_rng, MATRIX_STREAM};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Normalization {
    /// i.i.d. entries with variance `1/M`; column norms are 1 only on average.
    #[default]
    Raw,
    /// Raw entries with every column rescaled to unit Euclidean norm.
    UnitColumns,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Normalization::Raw => "raw",
            Normalization::UnitColumns => "unit_columns",
        })
    }
}

impl FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "raw" => Ok(Normalization::Raw),
            "unit_columns" => Ok(Normalization::UnitColumns),
            other => Err(Error::parse(format!("unknown normalization '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub n_cols: usize,
    pub alpha: f64,
    pub normalization: Normalization,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn new(n_cols: usize, alpha: f64, normalization: Normalization, seed: u64) -> Result<Self> {
        let spec = EnsembleSpec {
            n_cols,
            alpha,
            normalization,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cols < 2 {
            return Err(Error::invalid(format!("N must be >= 2, got {}", self.n_cols)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if self.n_rows() < 1 {
            return Err(Error::invalid(format!(
                "M = round(N * alpha) is zero for N = {}, alpha = {}",
                self.n_cols, self.alpha
            )));
        }
        Ok(())
    }

    /// `M = round(N * alpha)`.
    pub fn n_rows(&self) -> usize {
        (self.n_cols as f64 * self.alpha).round() as usize
    }
}

/// An `M x N` measurement matrix together with the ensemble parameters that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementMatrix {
    entries: DMatrix<f64>,
    spec: EnsembleSpec,
}

impl MeasurementMatrix {
    pub fn from_parts(entries: DMatrix<f64>, spec: EnsembleSpec) -> Result<Self> {
        spec.validate()?;
        if entries.ncols() != spec.n_cols || entries.nrows() != spec.n_rows() {
            return Err(Error::invalid(format!(
                "matrix is {}x{}, ensemble requires {}x{}",
                entries.nrows(),
                entries.ncols(),
                spec.n_rows(),
                spec.n_cols
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement matrix entry".into()));
        }
        Ok(MeasurementMatrix { entries, spec })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn n_rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Full `N x N` matrix of column inner products, `A^T A`.
    pub fn column_products(&self) -> DMatrix<f64> {
        self.entries.tr_mul(&self.entries)
    }

    pub fn write_to(&self, path: &Path, format: MatrixFormat) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        let spec = &self.spec;
        writeln!(
            out,
            "{} {} {} {} {}",
            spec.n_cols,
            spec.n_rows(),
            spec.alpha,
            spec.normalization,
            spec.seed
        )?;
        match format {
            MatrixFormat::Binary => {
                for i in 0..self.n_rows() {
                    for j in 0..self.n_cols() {
                        out.write_all(&self.entries[(i, j)].to_le_bytes())?;
                    }
                }
            }
            MatrixFormat::Csv => {
                for i in 0..self.n_rows() {
                    let row: Vec<String> = (0..self.n_cols())
                        .map(|j| format!("{:e}", self.entries[(i, j)]))
                        .collect();
                    writeln!(out, "{}", row.join(","))?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`MeasurementMatrix::write_to`]; the format
    /// is detected from the body.
    pub fn read_from(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(Error::parse(format!(
                "matrix header needs 5 fields, got '{}'",
                header.trim()
            )));
        }
        let n_cols: usize = fields[0].parse().map_err(|_| Error::parse("matrix header: N"))?;
        let n_rows: usize = fields[1].parse().map_err(|_| Error::parse("matrix header: M"))?;
        let alpha: f64 = fields[2].parse().map_err(|_| Error::parse("matrix header: alpha"))?;
        let normalization: Normalization = fields[3].parse()?;
        let seed: u64 = fields[4].parse().map_err(|_| Error::parse("matrix header: seed"))?;
        let spec = EnsembleSpec::new(n_cols, alpha, normalization, seed)?;
        if spec.n_rows() != n_rows {
            return Err(Error::parse(format!(
                "header M = {n_rows} disagrees with round(N * alpha)"
            )));
        }

        let mut body = Vec::new();
        reader.read_to_end(&mut body)?;
        let expected_bytes = n_rows * n_cols * 8;
        let mut entries = DMatrix::zeros(n_rows, n_cols);
        if body.len() == expected_bytes {
            for (k, chunk) in body.chunks_exact(8).enumerate() {
                let bytes: [u8; 8] = chunk.try_into().expect("chunk of 8");
                entries[(k / n_cols, k % n_cols)] = f64::from_le_bytes(bytes);
            }
        } else {
            let text = String::from_utf8(body).map_err(|_| Error::parse("matrix body is neither binary nor text"))?;
            let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            if rows.len() != n_rows {
                return Err(Error::parse(format!("expected {n_rows} rows, found {}", rows.len())));
            }
            for (i, line) in rows.iter().enumerate() {
                let values: Vec<&str> = line.split(',').collect();
                if values.len() != n_cols {
                    return Err(Error::parse(format!(
                        "row {i} has {} values, expected {n_cols}",
                        values.len()
                    )));
                }
                for (j, v) in values.iter().enumerate() {
                    entries[(i, j)] = v.trim().parse().map_err(|_| Error::parse(format!("bad entry '{v}'")))?;
                }
            }
        }
        MeasurementMatrix::from_parts(entries, spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFormat {
    /// Little-endian `f64`, row-major, after the text header line.
    Binary,
    Csv,
}

/// Sorted set of selected column indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubsetSelection {
    indices: Vec<usize>,
}

impl SubsetSelection {
    pub fn new(indices: Vec<usize>, n_cols: usize) -> Result<Self> {
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid("subset indices must be strictly increasing"));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= n_cols {
                return Err(Error::IndexOutOfRange { index: last, n_cols });
            }
        }
        Ok(SubsetSelection { indices })
    }

    /// Builds a selection from arbitrary-order distinct indices.
    pub fn from_unsorted(mut indices: Vec<usize>, n_cols: usize) -> Result<Self> {
        indices.sort_unstable();
        SubsetSelection::new(indices, n_cols)
    }

    pub fn from_indicator(c: &[bool]) -> Self {
        SubsetSelection {
            indices: c.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
        }
    }

    pub fn indicator(&self, n_cols: usize) -> Vec<bool> {
        let mut c = vec![false; n_cols];
        for &i in &self.indices {
            c[i] = true;
        }
        c
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Draws `A` with i.i.d. `N(0, 1/M)` entries (row-major draw order), then
/// applies the requested column normalization.
pub fn generate(spec: &EnsembleSpec) -> Result<MeasurementMatrix> {
    spec.validate()?;
    let (m, n) = (spec.n_rows(), spec.n_cols);
    let scale = (1.0 / m as f64).sqrt();
    let mut rng = stream_rng(spec.seed, MATRIX_STREAM);
    let mut entries = DMatrix::zeros(m, n);
    for i in 0..m {
        for j in 0..n {
            let z: f64 = StandardNormal.sample(&mut rng);
            entries[(i, j)] = scale * z;
        }
    }
    if spec.normalization == Normalization::UnitColumns {
        for mut col in entries.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
    }
    MeasurementMatrix::from_parts(entries, *spec)
}

/// `A_T^T A_T` for the selected columns `T`.
pub fn gram(mat: &MeasurementMatrix, sel: &SubsetSelection) -> Result<DMatrix<f64>> {
    let n = mat.n_cols();
    if let Some(&bad) = sel.indices().iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, n_cols: n });
    }
    let a = mat.entries();
    let s = sel.len();
    let mut g = DMatrix::zeros(s, s);
    for (p, &i) in sel.indices().iter().enumerate() {
        for (r, &j) in sel.indices().iter().enumerate().skip(p) {
            let v = a.column(i).dot(&a.column(j));
            g[(p, r)] = v;
            g[(r, p)] = v;
        }
    }
    Ok(g)
}

/// Support `[(1 - sqrt(rho/alpha))^2, (1 + sqrt(rho/alpha))^2]` of the
/// Marchenko–Pastur law for an `M x S` Gaussian matrix with entry variance `1/M`.
pub fn mp_support_edges(alpha: f64, rho: f64) -> Result<(f64, f64)> {
    if !(rho > 0.0 && rho <= alpha && alpha <= 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < rho <= alpha <= 1, got alpha = {alpha}, rho = {rho}"
        )));
    }
    let r = (rho / alpha).sqrt();
    Ok(((1.0 - r).powi(2), (1.0 + r).powi(2)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(EnsembleSpec::new(1, 0.5, Normalization::Raw, 0).is_err());
        assert!(EnsembleSpec::new(10, 0.0, Normalization::Raw, 0).is_err());
        assert!(EnsembleSpec::new(10, 1.5, Normalization::Raw, 0).is_err());
        assert!(EnsembleSpec::new(10, 0.01, Normalization::Raw, 0).is_err());
        assert_eq!(EnsembleSpec::new(10, 0.25, Normalization::Raw, 0).unwrap().n_rows(), 3);
    }

    #[test]
    fn entry_variance_is_one_over_m() {
        let spec = EnsembleSpec::new(100, 0.5, Normalization::Raw, 7).unwrap();
        let a = generate(&spec).unwrap();
        assert_eq!((a.n_rows(), a.n_cols()), (50, 100));
        let n = 5000.0;
        let mean = a.entries().iter().sum::<f64>() / n;
        let var = a.entries().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // standard error of the sample variance of a Gaussian: sigma^2 sqrt(2/(n-1))
        let se = 0.02 * (2.0 / (n - 1.0)).sqrt();
        assert!((var - 0.02).abs() < 3.0 * se, "variance {var}");
    }

    #[test]
    fn unit_columns_have_unit_norm() {
        let spec = EnsembleSpec::new(4, 1.0, Normalization::UnitColumns, 0).unwrap();
        let a = generate(&spec).unwrap();
        for col in a.entries().column_iter() {
            assert!((col.norm_squared() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = EnsembleSpec::new(30, 0.4, Normalization::Raw, 99).unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let other = generate(&EnsembleSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn gram_of_orthonormal_columns_is_identity() {
        let spec = EnsembleSpec::new(4, 1.0, Normalization::Raw, 0).unwrap();
        let a = MeasurementMatrix::from_parts(DMatrix::identity(4, 4), spec).unwrap();
        let sel = SubsetSelection::new(vec![0, 2, 3], 4).unwrap();
        assert_eq!(gram(&a, &sel).unwrap(), DMatrix::identity(3, 3));
    }

    #[test]
    fn single_unit_column_gram() {
        let spec = EnsembleSpec::new(6, 0.5, Normalization::UnitColumns, 3).unwrap();
        let a = generate(&spec).unwrap();
        let g = gram(&a, &SubsetSelection::new(vec![4], 6).unwrap()).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert!((g[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gram_matches_naive_dot_products() {
        let spec = EnsembleSpec::new(20, 0.6, Normalization::Raw, 11).unwrap();
        let a = generate(&spec).unwrap();
        let idx = vec![1, 4, 5, 9, 17];
        let g = gram(&a, &SubsetSelection::new(idx.clone(), 20).unwrap()).unwrap();
        let e = a.entries();
        for (p, &i) in idx.iter().enumerate() {
            for (r, &j) in idx.iter().enumerate() {
                let mut dot = 0.0;
                for k in 0..e.nrows() {
                    dot += e[(k, i)] * e[(k, j)];
                }
                assert!((g[(p, r)] - dot).abs() < 1e-12);
            }
        }
        assert_eq!(g, g.transpose());
    }

    #[test]
    fn gram_rejects_out_of_range() {
        let spec = EnsembleSpec::new(5, 0.6, Normalization::Raw, 11).unwrap();
        let a = generate(&spec).unwrap();
        assert!(SubsetSelection::new(vec![1, 5], 5).is_err());
        let sel = SubsetSelection { indices: vec![1, 7] };
        assert!(matches!(gram(&a, &sel), Err(Error::IndexOutOfRange { index: 7, .. })));
    }

    #[test]
    fn selection_validation() {
        assert!(SubsetSelection::new(vec![2, 1], 4).is_err());
        assert!(SubsetSelection::new(vec![1, 1], 4).is_err());
        let sel = SubsetSelection::from_unsorted(vec![3, 0], 4).unwrap();
        assert_eq!(sel.indices(), &[0, 3]);
        assert_eq!(sel.indicator(4), vec![true, false, false, true]);
        assert_eq!(SubsetSelection::from_indicator(&sel.indicator(4)), sel);
    }

    #[test]
    fn marchenko_pastur_edges() {
        let (lo, hi) = mp_support_edges(0.5, 0.1).unwrap();
        assert!((lo - 0.305_572_809).abs() < 1e-8);
        assert!((hi - 2.094_427_191).abs() < 1e-8);
        assert_eq!(mp_support_edges(0.5, 0.5).unwrap(), (0.0, 4.0));
        let (lo, hi) = mp_support_edges(1.0, 0.25).unwrap();
        assert!((lo - 0.25).abs() < 1e-15 && (hi - 2.25).abs() < 1e-15);
        assert!(mp_support_edges(0.5, 0.6).is_err());
        assert!(mp_support_edges(0.5, 0.0).is_err());
    }

    #[test]
    fn matrix_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = EnsembleSpec::new(7, 0.6, Normalization::UnitColumns, 5).unwrap();
        let a = generate(&spec).unwrap();
        for (name, format) in [("a.bin", MatrixFormat::Binary), ("a.csv", MatrixFormat::Csv)] {
            let path = dir.path().join(name);
            a.write_to(&path, format).unwrap();
            let b = MeasurementMatrix::read_from(&path).unwrap();
            assert_eq!(a, b, "{name}");
        }
    }
}
