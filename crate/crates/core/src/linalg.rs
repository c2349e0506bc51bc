//! Dense linear-algebra substrate shared by the solvers and the recovery
//! conditions: dictionaries, supports, subdictionary pseudoinverses and the
//! orthogonal projector onto the complement of a subdictionary's range.
//!
//! Indices are 0-based throughout.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance below which singular values are treated as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// An `L x N` matrix whose columns are the atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    entries: DMatrix<f64>,
}

impl Dictionary {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "dictionary must be at least 1x1, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary"));
        }
        for (j, col) in entries.column_iter().enumerate() {
            if col.norm() == 0.0 {
                return Err(Error::ZeroAtom(j));
            }
        }
        Ok(Self { entries })
    }

    /// Builds a dictionary from atoms given as columns.
    pub fn from_atoms(atoms: &[DVector<f64>]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::DimensionMismatch("no atoms".into()));
        }
        let l = atoms[0].len();
        if atoms.iter().any(|a| a.len() != l) {
            return Err(Error::DimensionMismatch("atoms differ in length".into()));
        }
        Self::new(DMatrix::from_columns(atoms))
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
        }
    }

    /// Number of rows (bands), `L`.
    pub fn num_rows(&self) -> usize {
        self.entries.nrows()
    }

    /// Number of atoms, `N`.
    pub fn num_cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn atom(&self, j: usize) -> DVector<f64> {
        self.entries.column(j).into_owned()
    }

    /// Largest absolute cosine between two distinct atoms.
    pub fn coherence(&self) -> f64 {
        let n = self.num_cols();
        let norms: Vec<f64> = self.entries.column_iter().map(|c| c.norm()).collect();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let c = self.entries.column(i).dot(&self.entries.column(j)) / (norms[i] * norms[j]);
                worst = worst.max(c.abs());
            }
        }
        worst
    }
}

/// Strictly increasing list of atom indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Support(Vec<usize>);

impl Support {
    /// Validates that `indices` is strictly increasing and below `n`.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidSupport(format!(
                    "indices must be strictly increasing, got {:?}",
                    indices
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= n {
                return Err(Error::InvalidSupport(format!(
                    "index {} out of range for {} atoms",
                    last, n
                )));
            }
        }
        Ok(Self(indices))
    }

    /// Sorts the indices first; duplicates are still rejected.
    pub fn from_unsorted(mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        Self::new(indices, n)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// Indices `i` with `x[i] > threshold`.
    pub fn above(x: &DVector<f64>, threshold: f64) -> Self {
        Self(
            x.iter()
                .enumerate()
                .filter(|(_, &v)| v > threshold)
                .map(|(i, _)| i)
                .collect(),
        )
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    pub fn is_subset_of(&self, other: &Support) -> bool {
        self.0.iter().all(|&j| other.contains(j))
    }

    /// Indices in `0..n` that are not in the support.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        (0..n).filter(|&j| !self.contains(j)).collect()
    }

    /// Errors if any index is out of range for `n` atoms.
    pub fn check_against(&self, n: usize) -> Result<()> {
        match self.0.last() {
            Some(&last) if last >= n => Err(Error::InvalidSupport(format!(
                "index {} out of range for {} atoms",
                last, n
            ))),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for Support {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{{")?;
        for (k, j) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", j)?;
        }
        write!(f, "}}")
    }
}

/// The measured signal `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(DVector<f64>);

impl Observation {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation"));
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(values))
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Generating coefficients and additive distortion of a synthetic signal.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    coefficients: DVector<f64>,
    distortion: DVector<f64>,
}

impl GroundTruth {
    pub fn new(coefficients: DVector<f64>, distortion: DVector<f64>) -> Result<Self> {
        if coefficients
            .iter()
            .chain(distortion.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("ground truth"));
        }
        if coefficients.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument(
                "ground-truth coefficients must be non-negative".into(),
            ));
        }
        Ok(Self {
            coefficients,
            distortion,
        })
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn distortion(&self) -> &DVector<f64> {
        &self.distortion
    }

    /// Exact nonzero set of the coefficients.
    pub fn support(&self) -> Support {
        Support::above(&self.coefficients, 0.0)
    }
}

/// Columns of `dict` at `support`, order preserved.
pub fn subdictionary(dict: &Dictionary, support: &Support) -> Result<DMatrix<f64>> {
    support.check_against(dict.num_cols())?;
    let cols: Vec<_> = support
        .indices()
        .iter()
        .map(|&j| dict.matrix().column(j))
        .collect();
    if cols.is_empty() {
        return Ok(DMatrix::zeros(dict.num_rows(), 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// SVD-derived quantities of a subdictionary `A_Λ`.
///
/// `project_out` applies the projector onto the orthogonal complement of
/// `range(A_Λ)` without materialising the `L x L` matrix.
#[derive(Debug, Clone)]
pub struct SubdictionaryCache {
    support: Support,
    atoms: DMatrix<f64>,
    range_basis: DMatrix<f64>,
    pseudoinverse: DMatrix<f64>,
    gram_inverse: Option<DMatrix<f64>>,
    rank: usize,
}

/// Builds the cache for `support`. A rank-deficient subdictionary still
/// yields a usable pseudoinverse and projector; only the Gram inverse is
/// withheld.
pub fn build_cache(
    dict: &Dictionary,
    support: &Support,
    rank_tol: f64,
) -> Result<SubdictionaryCache> {
    if support.is_empty() {
        return Err(Error::InvalidSupport("support must be nonempty".into()));
    }
    let atoms = subdictionary(dict, support)?;
    let (l, j) = atoms.shape();
    let svd = atoms.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > rank_tol * smax)
        .collect();
    let rank = keep.len();

    let mut range_basis = DMatrix::zeros(l, rank);
    let mut pseudoinverse = DMatrix::zeros(j, l);
    for (c, &k) in keep.iter().enumerate() {
        let uk = u.column(k);
        let vk = v_t.row(k).transpose();
        range_basis.set_column(c, &uk);
        pseudoinverse += (&vk * uk.transpose()) / svd.singular_values[k];
    }
    let gram_inverse = (rank == j).then(|| {
        let mut g = DMatrix::zeros(j, j);
        for &k in &keep {
            let vk = v_t.row(k).transpose();
            let s = svd.singular_values[k];
            g += (&vk * vk.transpose()) / (s * s);
        }
        g
    });

    Ok(SubdictionaryCache {
        support: support.clone(),
        atoms,
        range_basis,
        pseudoinverse,
        gram_inverse,
        rank,
    })
}

impl SubdictionaryCache {
    pub fn support(&self) -> &Support {
        &self.support
    }

    /// `A_Λ`, `L x J`.
    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    /// `A_Λ†`, `J x L`.
    pub fn pseudoinverse(&self) -> &DMatrix<f64> {
        &self.pseudoinverse
    }

    /// `(A_Λᵀ A_Λ)⁻¹`, present only at full column rank.
    pub fn gram_inverse(&self) -> Option<&DMatrix<f64>> {
        self.gram_inverse.as_ref()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn size(&self) -> usize {
        self.support.len()
    }

    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.size()
    }

    /// Gram inverse, or a rank-deficiency error.
    pub fn require_full_rank(&self) -> Result<&DMatrix<f64>> {
        self.gram_inverse.as_ref().ok_or(Error::RankDeficient {
            rank: self.rank,
            size: self.size(),
        })
    }

    /// `A_Λ† v`.
    pub fn coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.pseudoinverse * v
    }

    /// `P⊥_Λ v = v − A_Λ A_Λ† v`.
    pub fn project_out(&self, v: &DVector<f64>) -> DVector<f64> {
        let c = self.range_basis.tr_mul(v);
        v - &self.range_basis * c
    }
}

/// Maximum absolute row sum (the `∞ → ∞` operator norm).
pub fn inf_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
