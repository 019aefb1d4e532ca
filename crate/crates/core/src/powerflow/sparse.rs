/// Compressed sparse row matrix.
pub(super) struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    /// Reduced weighted Laplacian. Each triplet is `(i, j, y)` for a branch of
    /// admittance `y`; `usize::MAX` marks the eliminated slack node.
    pub(super) fn laplacian_reduced(n: usize, branches: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut add = |i: usize, j: usize, v: f64| {
            if let Some(e) = rows[i].iter_mut().find(|e| e.0 == j) {
                e.1 += v;
            } else {
                rows[i].push((j, v));
            }
        };
        for &(a, b, y) in branches {
            let (a_in, b_in) = (a != usize::MAX, b != usize::MAX);
            if a_in {
                add(a, a, y);
            }
            if b_in {
                add(b, b, y);
            }
            if a_in && b_in {
                add(a, b, -y);
                add(b, a, -y);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (j, v) in r {
                col.push(j);
                val.push(v);
            }
            row_ptr.push(col.len());
        }
        Csr { n, row_ptr, col, val }
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            out[i] = (self.row_ptr[i]..self.row_ptr[i + 1]).map(|k| self.val[k] * x[self.col[k]]).sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                (self.row_ptr[i]..self.row_ptr[i + 1])
                    .find(|&k| self.col[k] == i)
                    .map_or(0.0, |k| self.val[k])
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients. Returns the iterate and whether
/// the relative residual dropped below 1e-13.
pub(super) fn pcg(a: &Csr, b: &[f64]) -> (Vec<f64>, bool) {
    let n = a.n;
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return (x, true);
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for _ in 0..(10 * n).max(100) {
        a.mul(&p, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= 1e-13 * b_norm {
            return (x, true);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, false)
}
