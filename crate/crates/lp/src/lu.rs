use crate::error::LpError;

/// Dense LU factorization with partial pivoting, `P A = L U`, stored
/// row-major in place.
#[derive(Debug, Clone)]
pub(crate) struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

const SINGULAR_REL: f64 = 1e-13;

impl DenseLu {
    pub(crate) fn factor(n: usize, mut a: Vec<f64>) -> Result<Self, LpError> {
        debug_assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = a[k * n + k].abs();
            for i in k + 1..n {
                let v = a[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= SINGULAR_REL * scale {
                return Err(LpError::Numerical(format!("singular basis kernel at pivot {k} of {n}")));
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let piv = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / piv;
                if f != 0.0 {
                    a[i * n + k] = f;
                    for c in k + 1..n {
                        a[i * n + c] -= f * a[k * n + c];
                    }
                } else {
                    a[i * n + k] = 0.0;
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    /// Solves `A x = b` in place.
    pub(crate) fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = y[i];
            for c in 0..i {
                s -= self.lu[i * n + c] * y[c];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for c in i + 1..n {
                s -= self.lu[i * n + c] * y[c];
            }
            y[i] = s / self.lu[i * n + i];
        }
        b.copy_from_slice(&y);
    }

    /// Solves `A^T x = b` in place.
    #[cfg(test)]
    pub(crate) fn solve_transpose(&self, b: &mut [f64]) {
        let n = self.n;
        let mut z = b.to_vec();
        // U^T z = b
        for i in 0..n {
            let mut s = z[i];
            for c in 0..i {
                s -= self.lu[c * n + i] * z[c];
            }
            z[i] = s / self.lu[i * n + i];
        }
        // L^T w = z
        for i in (0..n).rev() {
            let mut s = z[i];
            for c in i + 1..n {
                s -= self.lu[c * n + i] * z[c];
            }
            z[i] = s;
        }
        for i in 0..n {
            b[self.perm[i]] = z[i];
        }
    }
}

/// Explicit inverse of the basis kernel with O(k²) updates for the four
/// kernel changes a bounded simplex pivot can cause.
#[derive(Debug, Clone)]
pub(crate) struct KernelInverse {
    k: usize,
    inv: Vec<f64>,
    updates: usize,
}

const UPDATE_PIVOT_REL: f64 = 1e-9;

impl KernelInverse {
    pub(crate) fn empty() -> Self {
        Self { k: 0, inv: Vec::new(), updates: 0 }
    }

    pub(crate) fn factor(k: usize, a: Vec<f64>) -> Result<Self, LpError> {
        let lu = DenseLu::factor(k, a)?;
        let mut inv = vec![0.0; k * k];
        let mut e = vec![0.0; k];
        for c in 0..k {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            lu.solve(&mut e);
            for r in 0..k {
                inv[r * k + c] = e[r];
            }
        }
        Ok(Self { k, inv, updates: 0 })
    }

    pub(crate) fn updates(&self) -> usize {
        self.updates
    }

    /// `b <- A^{-1} b`.
    pub(crate) fn solve(&self, b: &mut [f64]) {
        let k = self.k;
        let x: Vec<f64> = (0..k).map(|r| dot(&self.inv[r * k..(r + 1) * k], b)).collect();
        b.copy_from_slice(&x);
    }

    /// `b <- A^{-T} b`.
    pub(crate) fn solve_transpose(&self, b: &mut [f64]) {
        let k = self.k;
        let mut y = vec![0.0; k];
        for (r, &br) in b.iter().enumerate() {
            if br != 0.0 {
                axpy(&mut y, br, &self.inv[r * k..(r + 1) * k]);
            }
        }
        b.copy_from_slice(&y);
    }

    fn check(&self, piv: f64, scale: f64) -> Result<(), LpError> {
        if !(piv.abs() > UPDATE_PIVOT_REL * scale.max(1.0)) {
            return Err(LpError::Numerical(format!("unstable kernel update (pivot {piv:e})")));
        }
        Ok(())
    }

    /// Column `s` of the kernel becomes `u`.
    pub(crate) fn replace_col(&mut self, s: usize, u: &[f64]) -> Result<(), LpError> {
        let k = self.k;
        let mut w = u.to_vec();
        self.solve(&mut w);
        let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.check(w[s], scale)?;
        let row_s: Vec<f64> = self.inv[s * k..(s + 1) * k].iter().map(|v| v / w[s]).collect();
        for r in 0..k {
            if r == s {
                self.inv[r * k..(r + 1) * k].copy_from_slice(&row_s);
            } else if w[r] != 0.0 {
                axpy(&mut self.inv[r * k..(r + 1) * k], -w[r], &row_s);
            }
        }
        self.updates += 1;
        Ok(())
    }

    /// Row `t` of the kernel becomes `r`.
    pub(crate) fn replace_row(&mut self, t: usize, r: &[f64]) -> Result<(), LpError> {
        let k = self.k;
        let mut z = r.to_vec();
        self.solve_transpose(&mut z);
        let scale = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        self.check(z[t], scale)?;
        let zt = z[t];
        for row in 0..k {
            let base = row * k;
            let c = self.inv[base + t] / zt;
            if c != 0.0 {
                axpy(&mut self.inv[base..base + k], -c, &z);
            }
            self.inv[base + t] = c;
        }
        self.updates += 1;
        Ok(())
    }

    /// Appends column `u` and row `r` with corner `c`.
    pub(crate) fn grow(&mut self, u: &[f64], r: &[f64], c: f64) -> Result<(), LpError> {
        let k = self.k;
        let mut w = u.to_vec();
        self.solve(&mut w);
        let mut z = r.to_vec();
        self.solve_transpose(&mut z);
        let schur = c - dot(r, &w);
        let scale = c.abs().max(dot(r, &w).abs());
        self.check(schur, scale)?;
        let k1 = k + 1;
        let mut inv = vec![0.0; k1 * k1];
        for i in 0..k {
            let wi = w[i] / schur;
            let src = &self.inv[i * k..(i + 1) * k];
            let dst = &mut inv[i * k1..i * k1 + k];
            for j in 0..k {
                dst[j] = src[j] + wi * z[j];
            }
            inv[i * k1 + k] = -wi;
        }
        for j in 0..k {
            inv[k * k1 + j] = -z[j] / schur;
        }
        inv[k * k1 + k] = 1.0 / schur;
        self.k = k1;
        self.inv = inv;
        self.updates += 1;
        Ok(())
    }

    /// Drops kernel row `t` and column `s`, then moves the last row into
    /// slot `t` and the last column into slot `s` (swap-remove order).
    pub(crate) fn shrink(&mut self, t: usize, s: usize) -> Result<(), LpError> {
        let k = self.k;
        // rows of the inverse follow kernel columns, columns follow kernel rows
        let piv = self.inv[s * k + t];
        let col_t: Vec<f64> = (0..k).map(|i| self.inv[i * k + t]).collect();
        self.check(piv, col_t.iter().fold(0.0f64, |m, v| m.max(v.abs())))?;
        let row_s: Vec<f64> = self.inv[s * k..(s + 1) * k].to_vec();
        for i in 0..k {
            if i == s || col_t[i] == 0.0 {
                continue;
            }
            let f = col_t[i] / piv;
            axpy(&mut self.inv[i * k..(i + 1) * k], -f, &row_s);
        }
        let last = k - 1;
        let k1 = last;
        let mut inv = vec![0.0; k1 * k1];
        let map = |i: usize, drop: usize| if i == drop { last } else { i };
        for i in 0..k1 {
            let si = map(i, s);
            for j in 0..k1 {
                inv[i * k1 + j] = self.inv[si * k + map(j, t)];
            }
        }
        self.k = k1;
        self.inv = inv;
        self.updates += 1;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system_and_transpose() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let lu = DenseLu::factor(3, a.clone()).unwrap();
        let x = [1.0, -2.0, 0.5];
        let mut b = vec![0.0; 3];
        let mut bt = vec![0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                b[i] += a[i * 3 + j] * x[j];
                bt[j] += a[i * 3 + j] * x[i];
            }
        }
        lu.solve(&mut b);
        lu.solve_transpose(&mut bt);
        for i in 0..3 {
            assert!((b[i] - x[i]).abs() < 1e-12);
            assert!((bt[i] - x[i]).abs() < 1e-12);
        }
    }

    fn mat(k: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
        (0..k * k).map(|i| f(i / k, i % k)).collect()
    }

    fn assert_inverse(inv: &KernelInverse, a: &[f64]) {
        let k = inv.k;
        for i in 0..k {
            for j in 0..k {
                let v: f64 = (0..k).map(|l| a[i * k + l] * inv.inv[l * k + j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-10, "entry {i},{j} = {v}");
            }
        }
    }

    #[test]
    fn kernel_updates_match_refactor() {
        let f = |i: usize, j: usize| if i == j { 4.0 + i as f64 } else { ((i * 7 + j * 3) % 5) as f64 * 0.3 };
        let a = mat(4, f);
        let mut inv = KernelInverse::factor(4, a.clone()).unwrap();
        assert_inverse(&inv, &a);

        let u = [1.0, -2.0, 0.5, 3.0];
        inv.replace_col(2, &u).unwrap();
        let mut a1 = a.clone();
        for i in 0..4 {
            a1[i * 4 + 2] = u[i];
        }
        assert_inverse(&inv, &a1);

        let r = [0.2, 1.0, -1.0, 5.0];
        inv.replace_row(1, &r).unwrap();
        a1[4..8].copy_from_slice(&r);
        assert_inverse(&inv, &a1);

        let (uc, rr, c) = ([0.1, 0.0, 0.3, -0.2], [1.0, 0.5, 0.0, 0.25], 6.0);
        inv.grow(&uc, &rr, c).unwrap();
        let a2 = mat(5, |i, j| match (i < 4, j < 4) {
            (true, true) => a1[i * 4 + j],
            (true, false) => uc[i],
            (false, true) => rr[j],
            (false, false) => c,
        });
        assert_inverse(&inv, &a2);

        // drop row 1 and column 3; last row moves to 1, last column to 3
        inv.shrink(1, 3).unwrap();
        let rows = [0, 4, 2, 3];
        let cols = [0, 1, 2, 4];
        let a3 = mat(4, |i, j| a2[rows[i] * 5 + cols[j]]);
        assert_inverse(&inv, &a3);
    }

    #[test]
    fn rejects_singular() {
        assert!(DenseLu::factor(2, vec![1.0, 2.0, 2.0, 4.0]).is_err());
    }
}
