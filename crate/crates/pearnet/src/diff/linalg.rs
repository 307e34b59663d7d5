//! Small dense LU routines backing the determinant primitive.

/// LU factorisation with partial pivoting, in place. Returns the pivot sign,
/// or `None` when a pivot is exactly zero.
fn lu_in_place(a: &mut [f64], n: usize, perm: &mut [usize]) -> Option<f64> {
    let mut sign = 1.0;
    for (i, p) in perm.iter_mut().enumerate() {
        *p = i;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs())).unwrap();
        if a[pivot * n + col] == 0.0 {
            return None;
        }
        if pivot != col {
            for j in 0..n {
                a.swap(col * n + j, pivot * n + j);
            }
            perm.swap(col, pivot);
            sign = -sign;
        }
        let d = a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] / d;
            a[r * n + col] = f;
            if f != 0.0 {
                for j in col + 1..n {
                    a[r * n + j] -= f * a[col * n + j];
                }
            }
        }
    }
    Some(sign)
}

pub fn determinant(m: &[f64], n: usize) -> f64 {
    let mut a = m.to_vec();
    let mut perm = vec![0; n];
    match lu_in_place(&mut a, n, &mut perm) {
        None => 0.0,
        Some(sign) => sign * (0..n).map(|i| a[i * n + i]).product::<f64>(),
    }
}

/// Inverse via LU, `None` if singular.
pub fn inverse(m: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = m.to_vec();
    let mut perm = vec![0; n];
    lu_in_place(&mut a, n, &mut perm)?;
    let mut inv = vec![0.0; n * n];
    for col in 0..n {
        // solve A x = e_col, with PA = LU
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = if perm[i] == col { 1.0 } else { 0.0 };
            for j in 0..i {
                s -= a[i * n + j] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= a[i * n + j] * inv[j * n + col];
            }
            inv[i * n + col] = s / a[i * n + i];
        }
    }
    Some(inv)
}

/// `∂|A|/∂A = |A|·A⁻ᵀ`, falling back to explicit cofactors when `A` is
/// singular or too ill-conditioned for the inverse identity.
pub fn det_gradient(m: &[f64], n: usize, det: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    if det != 0.0 && det.is_finite() {
        if let Some(inv) = inverse(m, n) {
            if inv.iter().all(|v| v.is_finite()) {
                let mut g = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        g[i * n + j] = det * inv[j * n + i];
                    }
                }
                return g;
            }
        }
    }
    cofactors(m, n)
}

fn cofactors(m: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    let mut minor = vec![0.0; (n - 1) * (n - 1)];
    for i in 0..n {
        for j in 0..n {
            let mut k = 0;
            for r in (0..n).filter(|&r| r != i) {
                for c in (0..n).filter(|&c| c != j) {
                    minor[k] = m[r * n + c];
                    k += 1;
                }
            }
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            out[i * n + j] = sign * determinant(&minor, n - 1);
        }
    }
    out
}
