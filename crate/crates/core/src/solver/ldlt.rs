//! Sparse symmetric LDLᵀ without pivoting.
//!
//! The matrix is given once as a list of upper-triangle coordinates (duplicates
//! are summed). A fill-reducing AMD permutation and the elimination tree are
//! computed in [`SparseLdlt::analyze`]; each [`SparseLdlt::factor`] call reuses
//! them. The inertia follows from the signs of `D`.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::amd;
use faer::sparse::SymbolicSparseColMatRef;

const NONE: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LdltError {
    #[error("coordinate ({row}, {col}) lies below the diagonal")]
    LowerEntry { row: usize, col: usize },
    #[error("coordinate ({row}, {col}) out of range for dimension {n}")]
    OutOfRange { row: usize, col: usize, n: usize },
    #[error("value vector has {got} entries, pattern has {expected}")]
    ValueLength { expected: usize, got: usize },
    #[error("zero or non-finite pivot at column {0}")]
    SingularPivot(usize),
    #[error("ordering failed: {0}")]
    Ordering(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone)]
pub struct SparseLdlt {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    perm_inv: Vec<usize>,
    // permuted upper triangle in CSC form
    ap: Vec<usize>,
    ai: Vec<usize>,
    /// destination slot in `ax` of each input coordinate
    slot: Vec<usize>,
    ax: Vec<f64>,
    etree: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    factored: bool,
}

impl SparseLdlt {
    /// Symbolic analysis of the pattern `coords` (each `(row, col)` with `row <= col`).
    pub fn analyze(n: usize, coords: &[(usize, usize)]) -> Result<Self, LdltError> {
        for &(r, c) in coords {
            if r >= n || c >= n {
                return Err(LdltError::OutOfRange { row: r, col: c, n });
            }
            if r > c {
                return Err(LdltError::LowerEntry { row: r, col: c });
            }
        }
        let (perm, perm_inv) = amd_order(n, coords)?;

        // permuted coordinates, folded into the upper triangle
        let pc: Vec<(usize, usize)> = coords
            .iter()
            .map(|&(r, c)| {
                let (a, b) = (perm_inv[r], perm_inv[c]);
                (a.min(b), a.max(b))
            })
            .collect();
        // every diagonal must exist for the factorisation
        let mut order: Vec<usize> = (0..pc.len()).collect();
        order.sort_unstable_by_key(|&k| (pc[k].1, pc[k].0));
        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(pc.len() + n);
        let mut slot = vec![0usize; pc.len()];
        let mut it = order.iter().peekable();
        for col in 0..n {
            let mut has_diag = false;
            let mut last_row = NONE;
            while let Some(&&k) = it.peek() {
                let (r, c) = pc[k];
                if c != col {
                    break;
                }
                it.next();
                has_diag |= r == col;
                if r != last_row {
                    ai.push(r);
                    last_row = r;
                }
                slot[k] = ai.len() - 1;
            }
            if !has_diag {
                ai.push(col);
            }
            ap[col + 1] = ai.len();
        }
        let nnz = ai.len();

        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &ai[ap[j]..ap[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + lnz[i];
        }
        let l_nnz = lp[n];
        Ok(Self {
            n,
            perm,
            perm_inv,
            ap,
            ai,
            slot,
            ax: vec![0.0; nnz],
            etree,
            lp,
            li: vec![0; l_nnz],
            lx: vec![0.0; l_nnz],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            factored: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lp[self.n]
    }

    /// Numeric factorisation; `values[k]` belongs to coordinate `k` of the pattern.
    pub fn factor(&mut self, values: &[f64]) -> Result<Inertia, LdltError> {
        if values.len() != self.slot.len() {
            return Err(LdltError::ValueLength {
                expected: self.slot.len(),
                got: values.len(),
            });
        }
        self.factored = false;
        self.ax.iter_mut().for_each(|v| *v = 0.0);
        for (k, &v) in values.iter().enumerate() {
            self.ax[self.slot[k]] += v;
        }
        let n = self.n;
        let mut y_vals = vec![0.0; n];
        let mut y_marked = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_slot: Vec<usize> = self.lp[..n].to_vec();
        let mut inertia = Inertia::default();

        for k in 0..n {
            let mut nnz_y = 0;
            self.d[k] = 0.0;
            for p in self.ap[k]..self.ap[k + 1] {
                let b = self.ai[p];
                if b == k {
                    self.d[k] = self.ax[p];
                    continue;
                }
                y_vals[b] = self.ax[p];
                if !y_marked[b] {
                    y_marked[b] = true;
                    elim[0] = b;
                    let mut n_e = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_marked[next] {
                            break;
                        }
                        y_marked[next] = true;
                        elim[n_e] = next;
                        n_e += 1;
                        next = self.etree[next];
                    }
                    while n_e > 0 {
                        n_e -= 1;
                        y_idx[nnz_y] = elim[n_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let tmp = next_slot[c];
                let yc = y_vals[c];
                for j in self.lp[c]..tmp {
                    y_vals[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[tmp] = k;
                self.lx[tmp] = yc * self.dinv[c];
                self.d[k] -= yc * self.lx[tmp];
                next_slot[c] += 1;
                y_vals[c] = 0.0;
                y_marked[c] = false;
            }
            let dk = self.d[k];
            if dk == 0.0 || !dk.is_finite() {
                return Err(LdltError::SingularPivot(k));
            }
            if dk > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            self.dinv[k] = 1.0 / dk;
        }
        self.factored = true;
        Ok(inertia)
    }

    /// Solves `A x = b` in place. Panics if no successful factorisation exists.
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "solve called without a valid factorisation");
        assert_eq!(b.len(), self.n);
        let mut x: Vec<f64> = self.perm.iter().map(|&o| b[o]).collect();
        for i in 0..self.n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..self.n {
            x[i] *= self.dinv[i];
        }
        for i in (0..self.n).rev() {
            let mut xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                xi -= self.lx[j] * x[self.li[j]];
            }
            x[i] = xi;
        }
        for (new, &old) in self.perm.iter().enumerate() {
            b[old] = x[new];
        }
    }

    pub fn permutation(&self) -> (&[usize], &[usize]) {
        (&self.perm, &self.perm_inv)
    }
}

/// `y = A x` for a symmetric matrix stored as upper-triangle coordinates.
pub fn sym_matvec(n: usize, coords: &[(usize, usize)], values: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; n];
    for (&(r, c), &v) in coords.iter().zip(values) {
        y[r] += v * x[c];
        if r != c {
            y[c] += v * x[r];
        }
    }
    y
}

fn amd_order(n: usize, coords: &[(usize, usize)]) -> Result<(Vec<usize>, Vec<usize>), LdltError> {
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    // off-diagonal upper pattern, sorted and deduplicated per column
    let mut cols: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(r, c) in coords {
        if r != c {
            cols[c].push(r);
        }
    }
    let mut col_ptr = Vec::with_capacity(n + 1);
    let mut row_idx = Vec::new();
    col_ptr.push(0usize);
    for c in cols.iter_mut() {
        c.sort_unstable();
        c.dedup();
        row_idx.extend_from_slice(c);
        col_ptr.push(row_idx.len());
    }
    let a = SymbolicSparseColMatRef::new_checked(n, n, &col_ptr, None, &row_idx);
    let mut perm = vec![0usize; n];
    let mut perm_inv = vec![0usize; n];
    let mut buf = MemBuffer::new(amd::order_scratch::<usize>(n, row_idx.len()));
    let stack = MemStack::new(&mut buf);
    amd::order(&mut perm, &mut perm_inv, a, amd::Control::default(), stack)
        .map_err(|e| LdltError::Ordering(format!("{e:?}")))?;
    Ok((perm, perm_inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn dense_upper(a: &DMatrix<f64>) -> (Vec<(usize, usize)>, Vec<f64>) {
        let mut coords = Vec::new();
        let mut vals = Vec::new();
        for c in 0..a.ncols() {
            for r in 0..=c {
                if a[(r, c)] != 0.0 || r == c {
                    coords.push((r, c));
                    vals.push(a[(r, c)]);
                }
            }
        }
        (coords, vals)
    }

    #[test]
    fn solves_small_spd_system() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let (coords, vals) = dense_upper(&a);
        let mut f = SparseLdlt::analyze(3, &coords).unwrap();
        let inertia = f.factor(&vals).unwrap();
        assert_eq!(inertia, Inertia { positive: 3, negative: 0 });
        let mut b = vec![1.0, 2.0, 3.0];
        f.solve(&mut b);
        let r = &a * nalgebra::DVector::from_vec(b) - nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn duplicate_coordinates_are_summed() {
        let coords = vec![(0, 0), (0, 0), (0, 1), (1, 1)];
        let mut f = SparseLdlt::analyze(2, &coords).unwrap();
        f.factor(&[1.0, 1.0, 1.0, 3.0]).unwrap();
        let mut b = vec![3.0, 4.0];
        f.solve(&mut b);
        // [[2,1],[1,3]] x = [3,4] -> x = [1, 1]
        assert!((b[0] - 1.0).abs() < 1e-14 && (b[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn saddle_point_inertia() {
        // [[I, A^T], [A, -eps I]] with A 1x2
        let coords = vec![(0, 0), (1, 1), (2, 2), (0, 2), (1, 2)];
        let vals = vec![1.0, 1.0, -1e-8, 1.0, 1.0];
        let mut f = SparseLdlt::analyze(3, &coords).unwrap();
        assert_eq!(f.factor(&vals).unwrap(), Inertia { positive: 2, negative: 1 });
    }

    #[test]
    fn missing_diagonal_and_singular_pivot() {
        let coords = vec![(0, 1)];
        let mut f = SparseLdlt::analyze(2, &coords).unwrap();
        assert!(matches!(f.factor(&[1.0]), Err(LdltError::SingularPivot(_))));
        assert!(matches!(
            SparseLdlt::analyze(2, &[(1, 0)]),
            Err(LdltError::LowerEntry { .. })
        ));
        assert!(matches!(
            SparseLdlt::analyze(2, &[(0, 2)]),
            Err(LdltError::OutOfRange { .. })
        ));
    }

    proptest! {
        #[test]
        fn random_quasi_definite_systems(seed in 0u64..500, n1 in 1usize..12, n2 in 0usize..8) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = n1 + n2;
            let mut a = DMatrix::<f64>::zeros(n, n);
            for i in 0..n1 {
                a[(i, i)] = 1.0 + rng.random::<f64>() * 4.0;
            }
            for i in n1..n {
                a[(i, i)] = -(0.1 + rng.random::<f64>());
            }
            for _ in 0..(2 * n) {
                let i = rng.random_range(0..n);
                let j = rng.random_range(0..n);
                if i != j && (i < n1) != (j < n1) {
                    let v = rng.random::<f64>() - 0.5;
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let (coords, vals) = dense_upper(&a);
            let mut f = SparseLdlt::analyze(n, &coords).unwrap();
            let inertia = f.factor(&vals).unwrap();
            prop_assert_eq!(inertia, Inertia { positive: n1, negative: n2 });
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
            let mut x = b.clone();
            f.solve(&mut x);
            let ax = sym_matvec(n, &coords, &vals, &x);
            for i in 0..n {
                prop_assert!((ax[i] - b[i]).abs() < 1e-9);
            }
        }
    }
}
