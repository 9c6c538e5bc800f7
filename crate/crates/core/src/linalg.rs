//! Dense linear-algebra helpers shared by the realization code.

use nalgebra::{DMatrix, DVector, Schur, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Singular values in decreasing order. Empty matrices have none.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol * σ_max`.
pub fn numeric_rank(m: &Mat, tol: f64) -> usize {
    rank_of(&singular_values(m), tol)
}

pub fn rank_of(sv: &[f64], tol: f64) -> usize {
    match sv.first() {
        Some(&smax) if smax > 0.0 => sv.iter().filter(|&&s| s > tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the column space, cut at `tol * σ_max`.
/// Each basis column has its first non-negligible entry positive.
pub fn orth_basis(m: &Mat, tol: f64) -> Mat {
    let rows = m.nrows();
    if rows == 0 || m.ncols() == 0 {
        return Mat::zeros(rows, 0);
    }
    // work on the smaller Gram side when the matrix is very wide
    let svd = if m.ncols() > 4 * rows {
        let g = m * m.transpose();
        let eig = SymmetricEigen::new(sym(&g));
        let mut idx: Vec<usize> = (0..rows).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let smax = eig.eigenvalues[idx[0]].max(0.0).sqrt();
        let keep: Vec<usize> = idx
            .into_iter()
            .filter(|&i| smax > 0.0 && eig.eigenvalues[i].max(0.0).sqrt() > tol * smax)
            .collect();
        let mut q = Mat::zeros(rows, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            q.set_column(c, &eig.eigenvectors.column(i));
        }
        return fix_signs(reorthonormalize(q));
    } else {
        m.clone().svd(true, false)
    };
    let u = svd.u.expect("requested U");
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[idx[0]];
    let keep: Vec<usize> = idx.into_iter().filter(|&i| smax > 0.0 && svd.singular_values[i] > tol * smax).collect();
    let mut q = Mat::zeros(rows, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        q.set_column(c, &u.column(i));
    }
    fix_signs(q)
}

fn reorthonormalize(q: Mat) -> Mat {
    if q.ncols() == 0 {
        return q;
    }
    let qr = q.clone().qr();
    let mut out = qr.q();
    // keep the original column orientation
    for c in 0..out.ncols() {
        if out.column(c).dot(&q.column(c)) < 0.0 {
            out.column_mut(c).neg_mut();
        }
    }
    out
}

/// Flip each column so its first entry with magnitude above 1e-12 is positive.
pub fn fix_signs(mut q: Mat) -> Mat {
    for c in 0..q.ncols() {
        let cmax = q.column(c).amax();
        if let Some(v) = q.column(c).iter().copied().find(|x| x.abs() > 1e-9 * cmax.max(f64::MIN_POSITIVE)) {
            if v < 0.0 {
                q.column_mut(c).neg_mut();
            }
        }
    }
    q
}

/// Moore–Penrose pseudo-inverse with relative cutoff `tol * σ_max`.
pub fn pinv(m: &Mat, tol: f64) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut out = Mat::zeros(c, r);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > tol * smax {
            out += (vt.row(i).transpose() / s) * u.column(i).transpose();
        }
    }
    out
}

pub fn sym(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

/// Factor `L` with `L Lᵀ = m` for symmetric PSD `m`; negative eigenvalues are clipped.
pub fn psd_factor(m: &Mat) -> Mat {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = SymmetricEigen::new(sym(m));
    let mut l = eig.eigenvectors.clone();
    for (c, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(c).scale_mut(s);
    }
    l
}

pub fn min_sym_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Spectral radius of a general square matrix.
pub fn spectral_radius(m: &Mat) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        return schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    // fall back to Gelfand's formula on repeated squaring
    let mut p = m.clone();
    let mut scale_log = 0.0f64;
    let mut k = 1.0f64;
    for _ in 0..40 {
        let nrm = p.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        scale_log = 2.0 * (scale_log + nrm.ln());
        p /= nrm;
        p = &p * &p;
        k *= 2.0;
    }
    ((scale_log + p.norm().ln()) / k).exp()
}

/// Spectral radius of `X ↦ Σ c_i A_iᵀ X A_i`, i.e. of `Σ c_i A_iᵀ⊗A_iᵀ`.
///
/// Uses an explicit eigenvalue computation when `n² ≤ 400` and power iteration
/// on the (positive) operator otherwise.
pub fn kron_spectral_radius(a: &[Mat], c: &[f64]) -> f64 {
    let n = a.first().map_or(0, |m| m.nrows());
    if n == 0 {
        return 0.0;
    }
    if n * n <= 400 {
        return spectral_radius(&weighted_kron_sum(a, c));
    }
    let mut x = Mat::identity(n, n);
    let mut rho = 0.0;
    for it in 0..20_000 {
        let mut y = Mat::zeros(n, n);
        for (ai, &ci) in a.iter().zip(c) {
            y += (ai.transpose() * &x * ai) * ci;
        }
        let nx = x.trace();
        let ny = y.trace();
        if ny <= 0.0 || nx <= 0.0 {
            return 0.0;
        }
        let next = ny / nx;
        x = sym(&(y / ny));
        if it > 10 && (next - rho).abs() <= 1e-13 * next {
            return next;
        }
        rho = next;
    }
    rho
}

/// `Σ c_i A_iᵀ⊗A_iᵀ`.
pub fn weighted_kron_sum(a: &[Mat], c: &[f64]) -> Mat {
    let n = a.first().map_or(0, |m| m.nrows());
    let mut out = Mat::zeros(n * n, n * n);
    for (ai, &ci) in a.iter().zip(c) {
        let at = ai.transpose();
        out += kron(&at, &at) * ci;
    }
    out
}

/// `‖x − y‖_F / max(‖x‖_F, ‖y‖_F)`, zero when both vanish.
pub fn relative_diff(x: &Mat, y: &Mat) -> f64 {
    let d = (x - y).norm();
    let s = x.norm().max(y.norm());
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

/// Horizontal concatenation; all blocks must share a row count.
pub fn hcat(blocks: &[Mat], rows: usize) -> Mat {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(b);
        c0 += b.ncols();
    }
    out
}

/// Vertical concatenation; all blocks must share a column count.
pub fn vcat(blocks: &[Mat], cols: usize) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(b);
        r0 += b.nrows();
    }
    out
}

/// Greedy column pivoting: indices of up to `r` columns picked by largest
/// residual norm after projecting out the already chosen ones.
pub fn pivot_columns(m: &Mat, r: usize) -> Vec<usize> {
    let mut work = m.clone();
    let mut chosen: Vec<usize> = Vec::with_capacity(r);
    let mut norms: Vec<f64> = (0..work.ncols()).map(|j| work.column(j).norm_squared()).collect();
    for _ in 0..r.min(m.ncols()) {
        let mut best = None;
        let mut best_norm = 0.0;
        for (j, &nj) in norms.iter().enumerate() {
            if !chosen.contains(&j) && nj > best_norm {
                best_norm = nj;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        let q = work.column(j) / best_norm.sqrt();
        chosen.push(j);
        for k in 0..work.ncols() {
            if chosen.contains(&k) {
                continue;
            }
            let proj = q.dot(&work.column(k));
            work.column_mut(k).axpy(-proj, &q, 1.0);
            norms[k] = work.column(k).norm_squared();
        }
    }
    chosen
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rank_and_basis() {
        let m = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        assert_eq!(numeric_rank(&m, 1e-8), 2);
        let q = orth_basis(&m, 1e-8);
        assert_eq!(q.ncols(), 2);
        assert_relative_eq!(q.transpose() * &q, Mat::identity(2, 2), epsilon = 1e-12);
        // projector onto the basis reproduces the columns
        assert_relative_eq!(&q * q.transpose() * &m, m.clone(), epsilon = 1e-12);
        assert_eq!(numeric_rank(&Mat::zeros(3, 2), 1e-8), 0);
    }

    #[test]
    fn wide_basis_uses_gram_path() {
        let mut m = Mat::zeros(2, 20);
        for j in 0..20 {
            m[(0, j)] = j as f64;
            m[(1, j)] = -2.0 * j as f64;
        }
        let q = orth_basis(&m, 1e-8);
        assert_eq!(q.ncols(), 1);
        assert!(q[(0, 0)] > 0.0);
        assert_relative_eq!(q[(1, 0)] / q[(0, 0)], -2.0, epsilon = 1e-12);
    }

    #[test]
    fn pseudo_inverse() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pinv(&m, 1e-10);
        assert_relative_eq!(p, Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn radii() {
        let m = Mat::from_row_slice(2, 2, &[0.0, -0.9, 0.9, 0.0]);
        assert_relative_eq!(spectral_radius(&m), 0.9, epsilon = 1e-12);
        let a = vec![Mat::from_element(1, 1, 0.6), Mat::from_element(1, 1, 0.7)];
        assert_relative_eq!(kron_spectral_radius(&a, &[1.0, 1.0]), 0.85, epsilon = 1e-14);
        assert_relative_eq!(kron_spectral_radius(&a, &[0.5, 0.5]), 0.425, epsilon = 1e-14);
    }

    #[test]
    fn power_iteration_agrees_with_eigenvalues() {
        // n = 21 triggers the power-iteration path
        let n = 21;
        let a: Vec<Mat> = (0..2)
            .map(|s| Mat::from_fn(n, n, |i, j| ((i * 7 + j * 3 + s * 5) % 11) as f64 / 60.0 - 0.08))
            .collect();
        let c = [0.3, 0.7];
        let direct = spectral_radius(&weighted_kron_sum(&a, &c));
        let power = kron_spectral_radius(&a, &c);
        assert_relative_eq!(direct, power, max_relative = 1e-8);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let l = psd_factor(&m);
        assert_relative_eq!(&l * l.transpose(), m, epsilon = 1e-12);
    }

    #[test]
    fn pivoting_picks_independent_columns() {
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let p = pivot_columns(&m, 2);
        assert_eq!(p, vec![1, 2]);
        assert_eq!(pivot_columns(&Mat::zeros(2, 2), 1), Vec::<usize>::new());
    }
}
