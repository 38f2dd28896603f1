//! Sparse LU factorization of a simplex basis with product-form updates.
//!
//! The basis is factored by right-looking Gaussian elimination with a
//! Markowitz-style pivot choice and threshold partial pivoting. Column
//! replacements after a simplex pivot are appended as eta transformations
//! until the next refactorization.

/// Entries below this magnitude are never chosen as pivots.
const PIVOT_ZERO: f64 = 1e-11;
/// Threshold for partial pivoting relative to the largest entry in a column.
const PIVOT_THRESHOLD: f64 = 0.01;

#[derive(Debug)]
pub(crate) struct Singular {
    /// Basis positions that could not be pivoted.
    pub positions: Vec<usize>,
    /// Rows left without a pivot, same length as `positions`.
    pub rows: Vec<usize>,
}

#[derive(Debug, Default, Clone)]
pub(crate) struct Factor {
    m: usize,
    piv_row: Vec<usize>,
    piv_pos: Vec<usize>,
    piv_val: Vec<f64>,
    l_start: Vec<usize>,
    l_idx: Vec<usize>,
    l_val: Vec<f64>,
    u_start: Vec<usize>,
    u_idx: Vec<usize>,
    u_val: Vec<f64>,
    eta_pos: Vec<usize>,
    eta_piv: Vec<f64>,
    eta_start: Vec<usize>,
    eta_idx: Vec<usize>,
    eta_val: Vec<f64>,
    work: Vec<f64>,
}

impl Factor {
    /// Factors the `m x m` matrix whose columns (indexed by basis position)
    /// are given as sparse `(row, value)` lists.
    pub fn new(m: usize, cols: &[Vec<(usize, f64)>]) -> Result<Self, Singular> {
        debug_assert_eq!(cols.len(), m);
        let mut a = Active {
            cols: cols.to_vec(),
            rows: vec![Vec::new(); m],
            col_active: vec![true; m],
            row_active: vec![true; m],
            col_buckets: vec![Vec::new(); m + 1],
            row_buckets: vec![Vec::new(); m + 1],
        };
        for (c, col) in a.cols.iter().enumerate() {
            for &(r, _) in col {
                a.rows[r].push(c);
            }
        }
        for c in 0..m {
            a.col_buckets[a.cols[c].len()].push(c);
            a.row_buckets[a.rows[c].len()].push(c);
        }

        let mut f = Factor {
            m,
            l_start: vec![0],
            u_start: vec![0],
            eta_start: vec![0],
            work: vec![0.0; m],
            ..Default::default()
        };
        let mut mults: Vec<(usize, f64)> = Vec::new();
        let mut urow: Vec<(usize, f64)> = Vec::new();

        for _step in 0..m {
            let Some((r, c)) = choose_pivot(&mut a) else {
                let positions: Vec<usize> = (0..m).filter(|&c| a.col_active[c]).collect();
                let rows: Vec<usize> = (0..m).filter(|&r| a.row_active[r]).collect();
                return Err(Singular { positions, rows });
            };
            let pivot = a.cols[c].iter().find(|e| e.0 == r).map(|e| e.1).unwrap();
            a.col_active[c] = false;
            a.row_active[r] = false;

            // L multipliers from the pivot column.
            let pivot_col = std::mem::take(&mut a.cols[c]);
            mults.clear();
            for &(i, v) in &pivot_col {
                if i != r {
                    mults.push((i, v / pivot));
                }
                if let Some(k) = a.rows[i].iter().position(|&j| j == c) {
                    a.rows[i].swap_remove(k);
                }
            }

            // U row: remaining entries of the pivot row.
            let urow_cols = std::mem::take(&mut a.rows[r]);
            urow.clear();
            for &j in &urow_cols {
                let col = &mut a.cols[j];
                if let Some(k) = col.iter().position(|e| e.0 == r) {
                    urow.push((j, col[k].1));
                    col.swap_remove(k);
                }
            }

            // Schur complement update.
            for &(j, u) in &urow {
                for &(i, l) in &mults {
                    let delta = l * u;
                    let col = &mut a.cols[j];
                    match col.iter_mut().find(|e| e.0 == i) {
                        Some(e) => e.1 -= delta,
                        None => {
                            col.push((i, -delta));
                            a.rows[i].push(j);
                        }
                    }
                }
            }
            for &j in &urow_cols {
                a.col_buckets[a.cols[j].len()].push(j);
            }
            for &(i, _) in &mults {
                a.row_buckets[a.rows[i].len()].push(i);
            }

            f.piv_row.push(r);
            f.piv_pos.push(c);
            f.piv_val.push(pivot);
            for &(i, l) in &mults {
                f.l_idx.push(i);
                f.l_val.push(l);
            }
            f.l_start.push(f.l_idx.len());
            for &(j, u) in &urow {
                f.u_idx.push(j);
                f.u_val.push(u);
            }
            f.u_start.push(f.u_idx.len());
        }
        Ok(f)
    }

    /// Nonzeros stored in the L and U factors.
    pub fn lu_nonzeros(&self) -> usize {
        self.l_idx.len() + self.u_idx.len()
    }

    /// Nonzeros stored in the eta file.
    pub fn eta_nonzeros(&self) -> usize {
        self.eta_idx.len()
    }

    pub fn num_etas(&self) -> usize {
        self.eta_pos.len()
    }

    /// Solves `B x = b`. `b` is indexed by row and is consumed; the result
    /// is written to `x`, indexed by basis position.
    pub fn ftran(&mut self, b: &mut [f64], x: &mut [f64]) {
        let steps = self.piv_row.len();
        for k in 0..steps {
            let t = b[self.piv_row[k]];
            if t != 0.0 {
                for e in self.l_start[k]..self.l_start[k + 1] {
                    b[self.l_idx[e]] -= self.l_val[e] * t;
                }
            }
        }
        for k in (0..steps).rev() {
            let mut s = b[self.piv_row[k]];
            for e in self.u_start[k]..self.u_start[k + 1] {
                s -= self.u_val[e] * x[self.u_idx[e]];
            }
            x[self.piv_pos[k]] = s / self.piv_val[k];
        }
        for k in 0..self.eta_pos.len() {
            let p = self.eta_pos[k];
            let xp = x[p] / self.eta_piv[k];
            x[p] = xp;
            if xp != 0.0 {
                for e in self.eta_start[k]..self.eta_start[k + 1] {
                    x[self.eta_idx[e]] -= self.eta_val[e] * xp;
                }
            }
        }
    }

    /// Solves `y' B = c'`. `c` is indexed by basis position and is consumed;
    /// the result is written to `y`, indexed by row.
    pub fn btran(&mut self, c: &mut [f64], y: &mut [f64]) {
        for k in (0..self.eta_pos.len()).rev() {
            let p = self.eta_pos[k];
            let mut s = c[p];
            for e in self.eta_start[k]..self.eta_start[k + 1] {
                s -= self.eta_val[e] * c[self.eta_idx[e]];
            }
            c[p] = s / self.eta_piv[k];
        }
        let steps = self.piv_row.len();
        for k in 0..steps {
            let w = c[self.piv_pos[k]] / self.piv_val[k];
            y[self.piv_row[k]] = w;
            if w != 0.0 {
                for e in self.u_start[k]..self.u_start[k + 1] {
                    c[self.u_idx[e]] -= self.u_val[e] * w;
                }
            }
        }
        for k in (0..steps).rev() {
            let mut s = 0.0;
            for e in self.l_start[k]..self.l_start[k + 1] {
                s += self.l_val[e] * y[self.l_idx[e]];
            }
            if s != 0.0 {
                y[self.piv_row[k]] -= s;
            }
        }
    }

    /// Records the replacement of the basic column at `pos`; `alpha` is the
    /// entering column already transformed by [`Factor::ftran`].
    pub fn push_eta(&mut self, pos: usize, alpha: &[f64]) {
        self.eta_pos.push(pos);
        self.eta_piv.push(alpha[pos]);
        for (i, &a) in alpha.iter().enumerate() {
            if i != pos && a != 0.0 {
                self.eta_idx.push(i);
                self.eta_val.push(a);
            }
        }
        self.eta_start.push(self.eta_idx.len());
    }

    /// Scratch buffer of length `m`, zeroed.
    pub fn scratch(&mut self) -> Vec<f64> {
        let mut w = std::mem::take(&mut self.work);
        w.clear();
        w.resize(self.m, 0.0);
        w
    }

    pub fn return_scratch(&mut self, w: Vec<f64>) {
        self.work = w;
    }
}

/// Active submatrix during elimination. Columns and rows are also kept in
/// buckets by entry count; bucket entries go stale when a count changes or
/// the line is eliminated and are dropped when met.
struct Active {
    cols: Vec<Vec<(usize, f64)>>,
    rows: Vec<Vec<usize>>,
    col_active: Vec<bool>,
    row_active: Vec<bool>,
    col_buckets: Vec<Vec<usize>>,
    row_buckets: Vec<Vec<usize>>,
}

impl Active {
    /// Up to `limit` distinct active columns in increasing count order.
    fn sparsest_cols(&mut self, limit: usize, out: &mut Vec<usize>) {
        out.clear();
        for k in 0..self.col_buckets.len() {
            let mut idx = 0;
            while idx < self.col_buckets[k].len() {
                let c = self.col_buckets[k][idx];
                if !self.col_active[c] || self.cols[c].len() != k || out.contains(&c) {
                    self.col_buckets[k].swap_remove(idx);
                    continue;
                }
                out.push(c);
                if out.len() >= limit {
                    return;
                }
                idx += 1;
            }
        }
    }

    /// Active rows with exactly one entry.
    fn row_singletons(&mut self) -> impl Iterator<Item = usize> + '_ {
        let bucket = &mut self.row_buckets[1];
        let (rows, active) = (&self.rows, &self.row_active);
        bucket.retain(|&r| active[r] && rows[r].len() == 1);
        bucket.dedup();
        bucket.iter().copied()
    }
}

fn choose_pivot(a: &mut Active) -> Option<(usize, usize)> {
    let col_max = |a: &Active, c: usize| a.cols[c].iter().fold(0.0f64, |m, e| m.max(e.1.abs()));
    let mut sparse = Vec::with_capacity(4);
    a.sparsest_cols(1, &mut sparse);
    let &first = sparse.first()?;

    // Column singletons cost nothing.
    if a.cols[first].len() <= 1 {
        let &(r, v) = a.cols[first].first()?;
        if v.abs() <= PIVOT_ZERO {
            return None;
        }
        return Some((r, first));
    }

    // Row singletons produce no fill.
    let singles: Vec<usize> = a.row_singletons().collect();
    for r in singles {
        let c = a.rows[r][0];
        if let Some(e) = a.cols[c].iter().find(|e| e.0 == r) {
            if e.1.abs() > PIVOT_ZERO && e.1.abs() >= PIVOT_THRESHOLD * col_max(a, c) {
                return Some((r, c));
            }
        }
    }

    // Markowitz search over the sparsest columns, widened until a
    // numerically acceptable pivot turns up.
    let mut limit = 4;
    loop {
        a.sparsest_cols(limit, &mut sparse);
        let mut best: Option<(usize, f64, usize, usize)> = None;
        for &c in &sparse {
            let cc = a.cols[c].len();
            let cmax = col_max(a, c);
            for &(r, v) in &a.cols[c] {
                if v.abs() <= PIVOT_ZERO || v.abs() < PIVOT_THRESHOLD * cmax {
                    continue;
                }
                let cost = (a.rows[r].len() - 1) * (cc - 1);
                let better = match best {
                    None => true,
                    Some((bc, ba, _, _)) => cost < bc || (cost == bc && v.abs() > ba),
                };
                if better {
                    best = Some((cost, v.abs(), r, c));
                }
            }
        }
        if best.is_some() || sparse.len() < limit {
            return best.map(|(_, _, r, c)| (r, c));
        }
        limit *= 4;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<(usize, f64)>> {
        // Diagonally dominant sparse matrix with a random column permutation.
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        (0..m)
            .map(|c| {
                let d = perm[c];
                let mut col = vec![(d, 4.0 + rng.random::<f64>())];
                for _ in 0..2 {
                    let r = rng.random_range(0..m);
                    if r != d && !col.iter().any(|e| e.0 == r) {
                        col.push((r, rng.random_range(-1.0..1.0)));
                    }
                }
                col
            })
            .collect()
    }

    fn mul(cols: &[Vec<(usize, f64)>], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; cols.len()];
        for (c, col) in cols.iter().enumerate() {
            for &(r, a) in col {
                out[r] += a * x[c];
            }
        }
        out
    }

    #[test]
    fn ftran_and_btran_solve_with_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [1, 2, 5, 17, 40] {
            let mut cols = random_matrix(m, &mut rng);
            let mut f = Factor::new(m, &cols).unwrap();
            for round in 0..6 {
                let b: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut rhs = b.clone();
                let mut x = vec![0.0; m];
                f.ftran(&mut rhs, &mut x);
                let bx = mul(&cols, &x);
                for i in 0..m {
                    assert!((bx[i] - b[i]).abs() < 1e-9, "ftran m={m} round={round}");
                }
                let c: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
                let mut cc = c.clone();
                let mut y = vec![0.0; m];
                f.btran(&mut cc, &mut y);
                for (p, col) in cols.iter().enumerate() {
                    let v: f64 = col.iter().map(|&(r, a)| a * y[r]).sum();
                    assert!((v - c[p]).abs() < 1e-9, "btran m={m} round={round}");
                }
                // Replace a random column.
                let pos = rng.random_range(0..m);
                let mut newcol = cols[pos].clone();
                newcol[0].1 += 1.0;
                let mut dense = vec![0.0; m];
                for &(r, a) in &newcol {
                    dense[r] = a;
                }
                let mut alpha = vec![0.0; m];
                f.ftran(&mut dense, &mut alpha);
                f.push_eta(pos, &alpha);
                cols[pos] = newcol;
            }
        }
    }

    #[test]
    fn singular_matrix_reports_positions() {
        let cols = vec![
            vec![(0, 1.0), (1, 1.0)],
            vec![(0, 2.0), (1, 2.0)],
            vec![(2, 1.0)],
        ];
        let err = Factor::new(3, &cols).unwrap_err();
        assert_eq!(err.positions.len(), 1);
        assert_eq!(err.rows.len(), 1);
    }
}
