//! Linear mixed model `y = Xb + Σ Z_l ν_l + e` assembled for sparse
//! factorization.
//!
//! Unknowns are ordered random blocks first (innermost level first) and the
//! fixed columns last, so the leading pivots of the factor belong to
//! `Z'Z/σ² + G⁻¹` alone. Symbolic structures are cached per set of active
//! levels; a level whose variance is effectively zero is left out.

use std::sync::{Arc, Mutex};

use crate::hierarchy::{DesignMatrix, GroupIndex, Level};
use crate::sparse::{LdlFactor, SparseError, SymbolicLdl};

/// Variances at or below this are treated as exactly zero.
pub const ZERO_VARIANCE: f64 = 1e-12;

/// Sparse row storage of the fixed-effect columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedDesign {
    pub labels: Vec<String>,
    rowptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl FixedDesign {
    pub fn from_design(d: &DesignMatrix) -> Self {
        Self::from_rows(d.labels.clone(), (0..d.n()).map(|i| d.row(i).collect::<Vec<_>>()))
    }

    /// A leading all-ones `mu` column, with the first crop's intercept
    /// removed so the intercepts of the other crops become contrasts.
    pub fn with_grand_mean(d: &DesignMatrix) -> Self {
        let mut labels = vec!["mu".to_string()];
        labels.extend(d.labels.iter().skip(1).cloned());
        Self::from_rows(
            labels,
            (0..d.n()).map(|i| {
                let mut row = vec![(0, 1.0)];
                row.extend(d.row(i).filter(|&(c, _)| c != 0));
                row
            }),
        )
    }

    pub fn from_rows<I: IntoIterator<Item = Vec<(usize, f64)>>>(labels: Vec<String>, rows: I) -> Self {
        let mut rowptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in row {
                assert!(c < labels.len());
                cols.push(c as u32);
                vals.push(v);
            }
            rowptr.push(cols.len());
        }
        Self { labels, rowptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.rowptr.len() - 1
    }

    pub fn p(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.rowptr[i]..self.rowptr[i + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.vals[r].iter().copied())
    }

    /// Removes column `j`, returning the reduced design and the removed column.
    pub fn without_column(&self, j: usize) -> (Self, Vec<f64>) {
        let mut removed = vec![0.0; self.n()];
        let mut labels = self.labels.clone();
        labels.remove(j);
        let rows: Vec<Vec<(usize, f64)>> = (0..self.n())
            .map(|i| {
                self.row(i)
                    .filter_map(|(c, v)| {
                        if c == j {
                            removed[i] += v;
                            None
                        } else {
                            Some((if c > j { c - 1 } else { c }, v))
                        }
                    })
                    .collect()
            })
            .collect();
        (Self::from_rows(labels, rows), removed)
    }
}

/// Symbolic structure and precomputed cross-products for one set of
/// active levels.
#[derive(Debug)]
pub struct Structure {
    pub active: Vec<bool>,
    pub sym: Arc<SymbolicLdl>,
    /// Lower triangle of W'W in factor storage layout.
    pub ww: Vec<f64>,
    /// Column offset of each modelled level, if active.
    pub offsets: Vec<Option<usize>>,
    /// Number of random-effect unknowns.
    pub k: usize,
    pub dim: usize,
}

impl Structure {
    pub fn fixed_offset(&self) -> usize {
        self.k
    }
}

/// Response, group memberships and fixed design of a mixed model.
#[derive(Debug)]
pub struct MixedModel {
    pub y: Vec<f64>,
    pub levels: Vec<Level>,
    pub groups: Vec<Vec<u32>>,
    pub sizes: Vec<usize>,
    pub fixed: FixedDesign,
    cache: Arc<Mutex<Vec<Option<Arc<Structure>>>>>,
}

impl Clone for MixedModel {
    fn clone(&self) -> Self {
        Self {
            y: self.y.clone(),
            levels: self.levels.clone(),
            groups: self.groups.clone(),
            sizes: self.sizes.clone(),
            fixed: self.fixed.clone(),
            cache: Arc::clone(&self.cache),
        }
    }
}

impl MixedModel {
    pub fn new(y: Vec<f64>, levels: Vec<Level>, groups: Vec<Vec<u32>>, sizes: Vec<usize>, fixed: FixedDesign) -> Self {
        assert_eq!(levels.len(), groups.len());
        assert_eq!(levels.len(), sizes.len());
        assert_eq!(y.len(), fixed.n());
        let n_masks = 1usize << levels.len();
        Self { y, levels, groups, sizes, fixed, cache: Arc::new(Mutex::new(vec![None; n_masks])) }
    }

    pub fn from_index(y: Vec<f64>, index: &GroupIndex, fixed: FixedDesign) -> Self {
        let levels = index.modelled.clone();
        let groups = levels.iter().map(|&l| index.level(l).obs_group.iter().map(|&g| g as u32).collect()).collect();
        let sizes = levels.iter().map(|&l| index.count(l)).collect();
        Self::new(y, levels, groups, sizes, fixed)
    }

    /// Same memberships and design with a different response. Cached
    /// structures are shared.
    pub fn with_response(&self, y: Vec<f64>) -> Self {
        assert_eq!(y.len(), self.n());
        Self { y, ..self.clone() }
    }

    /// `W'y` in the column order of `st`.
    pub fn wty(&self, st: &Structure) -> Vec<f64> {
        let mut out = vec![0.0; st.dim];
        let mut cols = Vec::new();
        for i in 0..self.n() {
            self.row_columns(i, &st.offsets, st.k, &mut cols);
            for &(c, v) in &cols {
                out[c] += v * self.y[i];
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn p(&self) -> usize {
        self.fixed.p()
    }

    pub fn yty(&self) -> f64 {
        self.y.iter().map(|v| v * v).sum()
    }

    pub fn active_from(&self, level_vars: &[f64]) -> Vec<bool> {
        level_vars.iter().map(|&v| v > ZERO_VARIANCE).collect()
    }

    fn row_columns(&self, i: usize, offsets: &[Option<usize>], k: usize, out: &mut Vec<(usize, f64)>) {
        out.clear();
        for (l, off) in offsets.iter().enumerate() {
            if let Some(o) = off {
                out.push((o + self.groups[l][i] as usize, 1.0));
            }
        }
        out.extend(self.fixed.row(i).map(|(c, v)| (k + c, v)));
    }

    pub fn structure(&self, active: &[bool]) -> Arc<Structure> {
        let mask = active.iter().enumerate().fold(0usize, |m, (l, &a)| if a { m | (1 << l) } else { m });
        if let Some(s) = &self.cache.lock().expect("cache lock")[mask] {
            return Arc::clone(s);
        }
        let built = Arc::new(self.build_structure(active));
        let mut cache = self.cache.lock().expect("cache lock");
        Arc::clone(cache[mask].get_or_insert(built))
    }

    fn build_structure(&self, active: &[bool]) -> Structure {
        let mut offsets = Vec::with_capacity(self.n_levels());
        let mut k = 0;
        for (l, &a) in active.iter().enumerate() {
            if a {
                offsets.push(Some(k));
                k += self.sizes[l];
            } else {
                offsets.push(None);
            }
        }
        let dim = k + self.p();
        let mut lower: Vec<Vec<usize>> = vec![Vec::new(); dim];
        let mut cols = Vec::new();
        for i in 0..self.n() {
            self.row_columns(i, &offsets, k, &mut cols);
            cols.sort_unstable_by_key(|c| c.0);
            for a in 0..cols.len() {
                for b in 0..a {
                    if cols[a].0 != cols[b].0 {
                        lower[cols[b].0].push(cols[a].0);
                    }
                }
            }
        }
        for col in &mut lower {
            col.sort_unstable();
            col.dedup();
        }
        let sym = Arc::new(SymbolicLdl::analyze(&lower));
        drop(lower);
        let mut ww = vec![0.0; sym.nnz()];
        for i in 0..self.n() {
            self.row_columns(i, &offsets, k, &mut cols);
            for a in 0..cols.len() {
                let (ca, va) = cols[a];
                for &(cb, vb) in &cols[..=a] {
                    let (r, c) = if ca >= cb { (ca, cb) } else { (cb, ca) };
                    let pos = sym.position(r, c).expect("pattern covers W'W");
                    ww[pos] += va * vb;
                }
            }
        }
        Structure { active: active.to_vec(), sym, ww, offsets, k, dim }
    }

    /// Factorizes `W'W/σ² + diag(1/τ_l for active levels, fixed_precision)`.
    pub fn factorize(
        &self,
        st: &Structure,
        sigma2: f64,
        level_vars: &[f64],
        fixed_precision: &[f64],
    ) -> Result<LdlFactor, SparseError> {
        let inv = 1.0 / sigma2;
        let mut vals: Vec<f64> = st.ww.iter().map(|v| v * inv).collect();
        for (l, off) in st.offsets.iter().enumerate() {
            if let Some(o) = off {
                let prec = 1.0 / level_vars[l];
                for g in 0..self.sizes[l] {
                    vals[st.sym.diag_position(o + g)] += prec;
                }
            }
        }
        for (c, &prec) in fixed_precision.iter().enumerate() {
            vals[st.sym.diag_position(st.k + c)] += prec;
        }
        LdlFactor::factorize(Arc::clone(&st.sym), vals)
    }

    /// `y - W θ`.
    pub fn residuals(&self, st: &Structure, theta: &[f64]) -> Vec<f64> {
        let mut cols = Vec::new();
        (0..self.n())
            .map(|i| {
                self.row_columns(i, &st.offsets, st.k, &mut cols);
                self.y[i] - cols.iter().map(|&(c, v)| v * theta[c]).sum::<f64>()
            })
            .collect()
    }

    /// Slice of `theta` holding the effects of modelled level `l`.
    pub fn level_effects<'a>(&self, st: &Structure, theta: &'a [f64], l: usize) -> Option<&'a [f64]> {
        st.offsets[l].map(|o| &theta[o..o + self.sizes[l]])
    }

    pub fn fixed_effects<'a>(&self, st: &Structure, theta: &'a [f64]) -> &'a [f64] {
        &theta[st.k..st.dim]
    }
}
