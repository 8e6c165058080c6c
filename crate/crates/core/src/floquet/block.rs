//! Block-tridiagonal solver over the harmonic index.
//!
//! The harmonic generator only couples order l to l-1, l and l+1, so after
//! grouping unknowns by l the system is block tridiagonal. Elimination runs
//! from both outer ends toward the central block, which keeps the pivots on
//! the strongly damped outer harmonics.

use num_complex::Complex64 as C64;

use super::dense::{Dense, Lu};
use crate::error::{Error, Result};

/// Sparse rows keyed by global lattice index.
pub type SparseRow = Vec<(usize, C64)>;

/// Which global unknowns take part in a solve and where they sit.
#[derive(Debug, Clone)]
pub struct Layout {
    blocks: Vec<Vec<usize>>,
    pos: Vec<Option<(usize, usize)>>,
    center: usize,
}

impl Layout {
    /// `blocks[b]` lists the global indices of block b in order. `center` is
    /// the block eliminated last.
    pub fn new(n_global: usize, blocks: Vec<Vec<usize>>, center: usize) -> Self {
        let mut pos = vec![None; n_global];
        for (b, idx) in blocks.iter().enumerate() {
            for (k, &g) in idx.iter().enumerate() {
                pos[g] = Some((b, k));
            }
        }
        assert!(center < blocks.len());
        Self { blocks, pos, center }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn position(&self, global: usize) -> Option<(usize, usize)> {
        self.pos[global]
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, full: &[C64]) -> Vec<Vec<C64>> {
        self.blocks.iter().map(|b| b.iter().map(|&g| full[g]).collect()).collect()
    }

    pub fn scatter(&self, parts: &[Vec<C64>], full: &mut [C64]) {
        for (b, idx) in self.blocks.iter().enumerate() {
            for (k, &g) in idx.iter().enumerate() {
                full[g] = parts[b][k];
            }
        }
    }

    fn flatten(&self, parts: &[Vec<C64>]) -> Vec<C64> {
        parts.iter().flatten().copied().collect()
    }

    fn split(&self, flat: &[C64]) -> Vec<Vec<C64>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut off = 0;
        for b in &self.blocks {
            out.push(flat[off..off + b.len()].to_vec());
            off += b.len();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct BlockSystem {
    diag: Vec<Dense>,
    /// `upper[b]`: rows of block b, columns of block b+1.
    upper: Vec<Dense>,
    /// `lower[b]`: rows of block b+1, columns of block b.
    lower: Vec<Dense>,
    center: usize,
}

impl BlockSystem {
    /// Restricts `rows` to the unknowns in `layout`. Any coupling that leaves
    /// the layout, or jumps more than one block, is an error.
    pub fn assemble(rows: &[SparseRow], layout: &Layout) -> Result<Self> {
        let sizes: Vec<usize> = layout.blocks.iter().map(Vec::len).collect();
        let nb = sizes.len();
        let mut diag: Vec<Dense> = sizes.iter().map(|&n| Dense::zeros(n, n)).collect();
        let mut upper: Vec<Dense> = (0..nb.saturating_sub(1)).map(|b| Dense::zeros(sizes[b], sizes[b + 1])).collect();
        let mut lower: Vec<Dense> = (0..nb.saturating_sub(1)).map(|b| Dense::zeros(sizes[b + 1], sizes[b])).collect();
        for (b, idx) in layout.blocks.iter().enumerate() {
            for (i, &g) in idx.iter().enumerate() {
                for &(col, v) in &rows[g] {
                    let Some((cb, j)) = layout.pos[col] else {
                        if v != C64::new(0.0, 0.0) {
                            return Err(Error::InvalidParameter(format!(
                                "row {g} couples to index {col} outside the solve layout"
                            )));
                        }
                        continue;
                    };
                    if cb == b {
                        *diag[b].at_mut(i, j) += v;
                    } else if cb == b + 1 {
                        *upper[b].at_mut(i, j) += v;
                    } else if cb + 1 == b {
                        *lower[cb].at_mut(i, j) += v;
                    } else {
                        return Err(Error::InvalidParameter(format!(
                            "row {g} couples blocks {b} and {cb}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            diag,
            upper,
            lower,
            center: layout.center,
        })
    }

    /// Adds `s` to every diagonal entry.
    pub fn shift_diagonal(&mut self, s: C64) {
        for d in &mut self.diag {
            for i in 0..d.rows {
                *d.at_mut(i, i) += s;
            }
        }
    }

    /// Adds `s` to the diagonal of block b only.
    pub fn shift_block(&mut self, b: usize, s: C64) {
        let d = &mut self.diag[b];
        for i in 0..d.rows {
            *d.at_mut(i, i) += s;
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn transpose(&self) -> Self {
        Self {
            diag: self.diag.iter().map(Dense::transpose).collect(),
            upper: self.lower.iter().map(Dense::transpose).collect(),
            lower: self.upper.iter().map(Dense::transpose).collect(),
            center: self.center,
        }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let nb = self.diag.len();
        let mut best = 0.0f64;
        for b in 0..nb {
            for j in 0..self.diag[b].cols {
                let mut s = 0.0;
                for i in 0..self.diag[b].rows {
                    s += self.diag[b].at(i, j).norm();
                }
                if b > 0 {
                    // column j of block b appears in upper[b-1] (rows of block b-1)
                    let u = &self.upper[b - 1];
                    for i in 0..u.rows {
                        s += u.at(i, j).norm();
                    }
                }
                if b + 1 < nb {
                    let l = &self.lower[b];
                    for i in 0..l.rows {
                        s += l.at(i, j).norm();
                    }
                }
                best = best.max(s);
            }
        }
        best
    }

    pub fn factor(&self) -> Result<BlockFactor<'_>> {
        let nb = self.diag.len();
        let c = self.center;
        let mut lus: Vec<Option<Lu>> = (0..nb).map(|_| None).collect();
        for b in (c + 1..nb).rev() {
            let mut s = self.diag[b].clone();
            if b + 1 < nb {
                let w = lus[b + 1].as_ref().unwrap().solve_mat(&self.lower[b]);
                s.sub_mul(&self.upper[b], &w);
            }
            lus[b] = Some(Lu::factor(s)?);
        }
        for b in 0..c {
            let mut s = self.diag[b].clone();
            if b > 0 {
                let w = lus[b - 1].as_ref().unwrap().solve_mat(&self.upper[b - 1]);
                s.sub_mul(&self.lower[b - 1], &w);
            }
            lus[b] = Some(Lu::factor(s)?);
        }
        let mut s = self.diag[c].clone();
        if c + 1 < nb {
            let w = lus[c + 1].as_ref().unwrap().solve_mat(&self.lower[c]);
            s.sub_mul(&self.upper[c], &w);
        }
        if c > 0 {
            let w = lus[c - 1].as_ref().unwrap().solve_mat(&self.upper[c - 1]);
            s.sub_mul(&self.lower[c - 1], &w);
        }
        lus[c] = Some(Lu::factor(s)?);
        Ok(BlockFactor {
            sys: self,
            lus: lus.into_iter().map(Option::unwrap).collect(),
        })
    }
}

pub struct BlockFactor<'a> {
    sys: &'a BlockSystem,
    lus: Vec<Lu>,
}

impl BlockFactor<'_> {
    /// Solves in place; `r[b]` is the right-hand side of block b.
    pub fn solve(&self, r: &mut [Vec<C64>]) {
        let sys = self.sys;
        let nb = sys.diag.len();
        let c = sys.center;
        for b in (c + 1..nb).rev() {
            if b + 1 < nb {
                let mut t = r[b + 1].clone();
                self.lus[b + 1].solve_in_place(&mut t);
                sys.upper[b].sub_mul_vec(&t, &mut r[b]);
            }
        }
        for b in 0..c {
            if b > 0 {
                let mut t = r[b - 1].clone();
                self.lus[b - 1].solve_in_place(&mut t);
                sys.lower[b - 1].sub_mul_vec(&t, &mut r[b]);
            }
        }
        if c + 1 < nb {
            let mut t = r[c + 1].clone();
            self.lus[c + 1].solve_in_place(&mut t);
            sys.upper[c].sub_mul_vec(&t, &mut r[c]);
        }
        if c > 0 {
            let mut t = r[c - 1].clone();
            self.lus[c - 1].solve_in_place(&mut t);
            sys.lower[c - 1].sub_mul_vec(&t, &mut r[c]);
        }
        self.lus[c].solve_in_place(&mut r[c]);
        for b in c + 1..nb {
            let (done, rest) = r.split_at_mut(b);
            sys.lower[b - 1].sub_mul_vec(&done[b - 1], &mut rest[0]);
            self.lus[b].solve_in_place(&mut rest[0]);
        }
        for b in (0..c).rev() {
            let (head, tail) = r.split_at_mut(b + 1);
            sys.upper[b].sub_mul_vec(&tail[0], &mut head[b]);
            self.lus[b].solve_in_place(&mut head[b]);
        }
    }
}

/// Reciprocal 1-norm condition estimate using Hager's method with Higham's
/// complex refinement: a handful of solves with `A` and `A^H`.
pub fn rcond_estimate(sys: &BlockSystem, layout: &Layout) -> Result<f64> {
    let n = layout.len();
    if n == 0 {
        return Ok(1.0);
    }
    let anorm = sys.norm1();
    if anorm == 0.0 {
        return Ok(0.0);
    }
    let fac = sys.factor()?;
    let sys_t = sys.transpose();
    let fac_t = sys_t.factor()?;
    let solve = |f: &BlockFactor, x: &[C64]| {
        let mut parts = layout.split(x);
        f.solve(&mut parts);
        layout.flatten(&parts)
    };
    let mut x = vec![C64::new(1.0 / n as f64, 0.0); n];
    let mut est = 0.0;
    let mut last_j = usize::MAX;
    for _ in 0..5 {
        let y = solve(&fac, &x);
        est = y.iter().map(|v| v.norm()).sum::<f64>();
        let xi: Vec<C64> = y
            .iter()
            .map(|v| {
                let a = v.norm();
                if a == 0.0 {
                    C64::new(1.0, 0.0)
                } else {
                    v / a
                }
            })
            .collect();
        // z = A^{-H} xi = conj(A^{-T} conj(xi))
        let xi_c: Vec<C64> = xi.iter().map(|v| v.conj()).collect();
        let z: Vec<C64> = solve(&fac_t, &xi_c).into_iter().map(|v| v.conj()).collect();
        let (j, zmax) = z
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.norm()))
            .fold((0, -1.0), |acc, v| if v.1 > acc.1 { v } else { acc });
        let ztx: f64 = z.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
        if zmax <= ztx || j == last_j {
            break;
        }
        last_j = j;
        x = vec![C64::new(0.0, 0.0); n];
        x[j] = C64::new(1.0, 0.0);
    }
    // Higham's alternative vector guards against pathological cases.
    let alt: Vec<C64> = (0..n)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            C64::new(s * (1.0 + i as f64 / (n as f64 - 1.0).max(1.0)), 0.0)
        })
        .collect();
    let y = solve(&fac, &alt);
    let alt_est = 2.0 * y.iter().map(|v| v.norm()).sum::<f64>() / (3.0 * n as f64);
    let inv_norm = est.max(alt_est);
    if !inv_norm.is_finite() {
        return Ok(0.0);
    }
    Ok(1.0 / (anorm * inv_norm))
}
