//! Least squares via Householder QR with column pivoting.
//!
//! Columns are scaled to unit norm before factorization so the rank decision
//! (|R_ii| <= tol * |R_00|) does not depend on the units of each regressor.

use nalgebra::DMatrix;

/// Relative tolerance on the pivoted R diagonal below which a column is
/// considered linearly dependent on the preceding ones.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PivotedQr {
    n: usize,
    k: usize,
    /// Column-major n×k working matrix; R lives in the upper triangle.
    a: Vec<f64>,
    reflectors: Vec<Option<(Vec<f64>, f64)>>,
    perm: Vec<usize>,
    scale: Vec<f64>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let (n, k) = x.shape();
        let mut a = x.as_slice().to_vec();
        let mut scale = vec![1.0; k];
        for j in 0..k {
            let col = &mut a[j * n..(j + 1) * n];
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 && norm.is_finite() {
                scale[j] = norm;
                col.iter_mut().for_each(|v| *v /= norm);
            }
        }
        let mut perm: Vec<usize> = (0..k).collect();
        let mut reflectors = Vec::with_capacity(k.min(n));
        let steps = k.min(n);
        for i in 0..steps {
            // pivot: largest remaining column norm over rows i..n
            let mut best = i;
            let mut best_norm = -1.0;
            for j in i..k {
                let s: f64 = a[j * n + i..(j + 1) * n].iter().map(|v| v * v).sum();
                if s > best_norm {
                    best_norm = s;
                    best = j;
                }
            }
            if best != i {
                for r in 0..n {
                    a.swap(i * n + r, best * n + r);
                }
                perm.swap(i, best);
                scale.swap(i, best);
            }
            let norm = best_norm.max(0.0).sqrt();
            if norm == 0.0 {
                reflectors.push(None);
                continue;
            }
            let x0 = a[i * n + i];
            let alpha = if x0 >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = a[i * n + i..(i + 1) * n].to_vec();
            v[0] -= alpha;
            let vnorm2: f64 = v.iter().map(|t| t * t).sum();
            if vnorm2 == 0.0 {
                reflectors.push(None);
                continue;
            }
            for j in i + 1..k {
                let col = &mut a[j * n + i..(j + 1) * n];
                let dot: f64 = v.iter().zip(col.iter()).map(|(p, q)| p * q).sum();
                let f = 2.0 * dot / vnorm2;
                col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= f * vi);
            }
            a[i * n + i] = alpha;
            for r in i + 1..n {
                a[i * n + r] = 0.0;
            }
            reflectors.push(Some((v, vnorm2)));
        }
        let r00 = if steps > 0 { a[0].abs() } else { 0.0 };
        let rank = (0..steps).take_while(|&i| a[i * n + i].abs() > RANK_TOL * r00).count();
        Self { n, k, a, reflectors, perm, scale, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.k
    }

    /// Original indices of the columns that fell below the rank tolerance.
    pub fn deficient_columns(&self) -> Vec<usize> {
        let mut cols: Vec<usize> = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    fn r(&self, i: usize, j: usize) -> f64 {
        self.a[j * self.n + i]
    }

    fn apply_qt(&self, y: &mut [f64]) {
        for (i, refl) in self.reflectors.iter().enumerate() {
            if let Some((v, vnorm2)) = refl {
                let seg = &mut y[i..];
                let dot: f64 = v.iter().zip(seg.iter()).map(|(p, q)| p * q).sum();
                let f = 2.0 * dot / vnorm2;
                seg.iter_mut().zip(v).for_each(|(s, vi)| *s -= f * vi);
            }
        }
    }

    /// Least-squares solution of X b = y. The factorization must be full rank.
    pub fn solve(&self, y: &[f64]) -> Vec<f64> {
        debug_assert!(self.is_full_rank());
        let mut c = y.to_vec();
        self.apply_qt(&mut c);
        let k = self.k;
        let mut z = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = c[i];
            for j in i + 1..k {
                s -= self.r(i, j) * z[j];
            }
            z[i] = s / self.r(i, i);
        }
        let mut beta = vec![0.0; k];
        for (pos, &orig) in self.perm.iter().enumerate() {
            beta[orig] = z[pos] / self.scale[pos];
        }
        beta
    }

    /// (XᵀX)⁻¹ from R⁻¹R⁻ᵀ, mapped back to the original column order and units.
    pub fn xtx_inverse(&self) -> DMatrix<f64> {
        let k = self.k;
        let mut rinv = DMatrix::<f64>::zeros(k, k);
        for j in 0..k {
            rinv[(j, j)] = 1.0 / self.r(j, j);
            for i in (0..j).rev() {
                let mut s = 0.0;
                for m in i + 1..=j {
                    s += self.r(i, m) * rinv[(m, j)];
                }
                rinv[(i, j)] = -s / self.r(i, i);
            }
        }
        let m = &rinv * rinv.transpose();
        let mut out = DMatrix::<f64>::zeros(k, k);
        for p in 0..k {
            for q in 0..k {
                out[(self.perm[p], self.perm[q])] = m[(p, q)] / (self.scale[p] * self.scale[q]);
            }
        }
        out
    }
}
