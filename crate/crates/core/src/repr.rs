//! Representations of rational families of formal power series, their Hankel
//! matrices, partial realization from a Hankel block, minimization,
//! isomorphism and stability.
//!
//! A representation `(n, {A_σ}, {B_j}, C)` generates the coefficients
//! `S_j(σ1⋯σk) = C·A_σk⋯A_σ1·B_j`.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::linalg::{
    self, hcat, kron_spectral_radius, numeric_rank, orth_basis, pinv, pivot_columns, relative_diff,
    singular_values, vcat, Mat, Vector,
};
use crate::words::{Alphabet, Letter, LetterWeights, Word, WordsUpTo};

pub const DEFAULT_RANK_TOL: f64 = 1e-8;
pub const DEFAULT_STABILITY_MARGIN: f64 = 1e-10;
pub const DEFAULT_ISOMORPHISM_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Representation {
    alphabet: Alphabet,
    a: Vec<Mat>,
    b: Vec<Vector>,
    b_labels: Vec<String>,
    c: Mat,
}

impl Representation {
    pub fn new(alphabet: Alphabet, a: Vec<Mat>, b: Vec<Vector>, b_labels: Vec<String>, c: Mat) -> Result<Self> {
        let n = c.ncols();
        if a.len() != alphabet.len() {
            return Err(Error::Dimension(format!("{} A matrices for {} letters", a.len(), alphabet.len())));
        }
        if let Some(m) = a.iter().find(|m| m.shape() != (n, n)) {
            return Err(Error::Dimension(format!("A matrix {:?}, expected {n}x{n}", m.shape())));
        }
        if b.is_empty() {
            return Err(Error::Dimension("index set J must be non-empty".into()));
        }
        if let Some(v) = b.iter().find(|v| v.len() != n) {
            return Err(Error::Dimension(format!("B vector of length {}, expected {n}", v.len())));
        }
        if b_labels.len() != b.len() {
            return Err(Error::Dimension("one label per B vector required".into()));
        }
        Ok(Self { alphabet, a, b, b_labels, c })
    }

    /// Labels `"1".."K"` for the index set.
    pub fn numbered_labels(k: usize) -> Vec<String> {
        (1..=k).map(|j| j.to_string()).collect()
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    pub fn index_count(&self) -> usize {
        self.b.len()
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn a(&self, l: Letter) -> &Mat {
        &self.a[l.index()]
    }

    pub fn a_all(&self) -> &[Mat] {
        &self.a
    }

    pub fn b(&self, j: usize) -> &Vector {
        &self.b[j]
    }

    pub fn b_all(&self) -> &[Vector] {
        &self.b
    }

    pub fn b_labels(&self) -> &[String] {
        &self.b_labels
    }

    /// `B̃ = [B_1 … B_K]`.
    pub fn b_matrix(&self) -> Mat {
        let mut m = Mat::zeros(self.dim(), self.b.len());
        for (j, v) in self.b.iter().enumerate() {
            m.set_column(j, v);
        }
        m
    }

    pub fn c(&self) -> &Mat {
        &self.c
    }

    /// Change of state basis `x ↦ T x`: `(T A T⁻¹, T B, C T⁻¹)`.
    pub fn transform(&self, t: &Mat) -> Result<Self> {
        let tinv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Invalid("change of basis is singular".into()))?;
        Ok(Self {
            alphabet: self.alphabet.clone(),
            a: self.a.iter().map(|a| t * a * &tinv).collect(),
            b: self.b.iter().map(|b| t * b).collect(),
            b_labels: self.b_labels.clone(),
            c: &self.c * &tinv,
        })
    }

    /// `(Vᵀ A V, Vᵀ B, C V)` for a matrix `V` with orthonormal columns.
    pub fn project(&self, v: &Mat) -> Self {
        let vt = v.transpose();
        Self {
            alphabet: self.alphabet.clone(),
            a: self.a.iter().map(|a| &vt * a * v).collect(),
            b: self.b.iter().map(|b| &vt * b).collect(),
            b_labels: self.b_labels.clone(),
            c: &self.c * v,
        }
    }
}

/// `A_σk ⋯ A_σ1` for `w = σ1⋯σk`; identity for ε.
pub fn word_matrix(rep: &Representation, w: &Word) -> Mat {
    word_product(rep.a_all(), rep.dim(), w)
}

pub(crate) fn word_product(a: &[Mat], n: usize, w: &Word) -> Mat {
    let mut m = Mat::identity(n, n);
    for &l in w.letters() {
        m = &a[l.index()] * m;
    }
    m
}

pub fn series_coefficient(rep: &Representation, j: usize, w: &Word) -> Vector {
    rep.c() * (word_matrix(rep, w) * rep.b(j))
}

/// Coefficient oracle: `(j, w) ↦ S_j(w)`.
pub trait SeriesSource {
    fn alphabet(&self) -> &Alphabet;
    fn output_dim(&self) -> usize;
    fn index_labels(&self) -> Vec<String>;

    /// All coefficients of `w` as a `p × |J|` matrix (column `j` is `S_j(w)`).
    fn coefficient_block(&self, w: &Word) -> Result<Mat>;

    fn coefficient(&self, j: usize, w: &Word) -> Result<Vector> {
        Ok(self.coefficient_block(w)?.column(j).into_owned())
    }
}

impl SeriesSource for Representation {
    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn index_labels(&self) -> Vec<String> {
        self.b_labels.clone()
    }

    fn coefficient_block(&self, w: &Word) -> Result<Mat> {
        Ok(&self.c * word_matrix(self, w) * self.b_matrix())
    }
}

/// Row key `(u, i)` or column key `(v, j)` of a Hankel block.
pub type HankelKey = (Word, usize);

/// Finite block of the Hankel matrix with explicit index maps.
#[derive(Clone, Debug)]
pub struct HankelBlock {
    pub matrix: Mat,
    pub rows: Vec<HankelKey>,
    pub cols: Vec<HankelKey>,
    pub alphabet: Alphabet,
    pub index_labels: Vec<String>,
    row_pos: HashMap<HankelKey, usize>,
    col_pos: HashMap<HankelKey, usize>,
}

impl HankelBlock {
    pub fn row_of(&self, key: &HankelKey) -> Option<usize> {
        self.row_pos.get(key).copied()
    }

    pub fn col_of(&self, key: &HankelKey) -> Option<usize> {
        self.col_pos.get(key).copied()
    }

    pub fn output_dim(&self) -> usize {
        self.rows.iter().filter(|(u, _)| u.is_empty()).count()
    }

    pub fn singular_values(&self) -> Vec<f64> {
        singular_values(&self.matrix)
    }
}

/// Hankel block with rows `(u,i)`, `|u| ≤ row_len`, columns `(v,j)`, `|v| ≤ col_len`,
/// entry `S_j(vu)_i`.
pub fn build_hankel(src: &dyn SeriesSource, row_len: usize, col_len: usize) -> Result<HankelBlock> {
    let d = src.alphabet().len();
    let p = src.output_dim();
    let labels = src.index_labels();
    let k = labels.len();
    let row_words: Vec<Word> = WordsUpTo::new(d, row_len).collect();
    let col_words: Vec<Word> = WordsUpTo::new(d, col_len).collect();
    let mut cache: HashMap<Word, Mat> = HashMap::new();
    let mut matrix = Mat::zeros(row_words.len() * p, col_words.len() * k);
    for (ci, v) in col_words.iter().enumerate() {
        for (ri, u) in row_words.iter().enumerate() {
            let vu = v.concat(u);
            let block = match cache.get(&vu) {
                Some(b) => b,
                None => {
                    let b = src.coefficient_block(&vu)?;
                    if b.shape() != (p, k) {
                        return Err(Error::Dimension(format!("coefficient block {:?}, expected {p}x{k}", b.shape())));
                    }
                    cache.entry(vu).or_insert(b)
                }
            };
            matrix.view_mut((ri * p, ci * k), (p, k)).copy_from(block);
        }
    }
    let rows: Vec<HankelKey> = row_words.iter().flat_map(|u| (0..p).map(move |i| (u.clone(), i))).collect();
    let cols: Vec<HankelKey> = col_words.iter().flat_map(|v| (0..k).map(move |j| (v.clone(), j))).collect();
    Ok(hankel_from_parts(matrix, rows, cols, src.alphabet().clone(), labels))
}

pub(crate) fn hankel_from_parts(
    matrix: Mat,
    rows: Vec<HankelKey>,
    cols: Vec<HankelKey>,
    alphabet: Alphabet,
    index_labels: Vec<String>,
) -> HankelBlock {
    let row_pos = rows.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    let col_pos = cols.iter().cloned().enumerate().map(|(i, k)| (k, i)).collect();
    HankelBlock { matrix, rows, cols, alphabet, index_labels, row_pos, col_pos }
}

/// `r` rows and `r` columns of a Hankel block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub rows: Vec<HankelKey>,
    pub cols: Vec<HankelKey>,
}

impl Selection {
    pub fn size(&self) -> usize {
        self.rows.len()
    }
}

/// Selection using any rows and columns of the block.
pub fn choose_selection(h: &HankelBlock, r: usize, tol: f64) -> Result<Selection> {
    choose_selection_within(h, r, usize::MAX, usize::MAX, tol)
}

/// Selection restricted to row words of length `≤ max_row_len` and column words
/// of length `≤ max_col_len`. Columns are picked by greedy pivoting on the
/// allowed block, then rows by pivoting on the chosen columns.
pub fn choose_selection_within(
    h: &HankelBlock,
    r: usize,
    max_row_len: usize,
    max_col_len: usize,
    tol: f64,
) -> Result<Selection> {
    let row_ix: Vec<usize> = (0..h.rows.len()).filter(|&i| h.rows[i].0.len() <= max_row_len).collect();
    let col_ix: Vec<usize> = (0..h.cols.len()).filter(|&j| h.cols[j].0.len() <= max_col_len).collect();
    let sub = h.matrix.select_rows(&row_ix).select_columns(&col_ix);
    let sv = singular_values(&sub);
    let rank = linalg::rank_of(&sv, tol);
    if r > rank {
        return Err(Error::RankDeficient { requested: r, rank });
    }
    if r == 0 {
        return Ok(Selection { rows: vec![], cols: vec![] });
    }
    let cols = pivot_columns(&sub, r);
    let tall = sub.select_columns(&cols);
    let rows = pivot_columns(&tall.transpose(), r);
    let minor = tall.select_rows(&rows);
    let msv = singular_values(&minor);
    let smallest = msv.last().copied().unwrap_or(0.0);
    if rows.len() < r || cols.len() < r || smallest <= tol * sv[0] {
        return Err(Error::RankDeficient { requested: r, rank: linalg::rank_of(&msv, tol) });
    }
    let mut rows: Vec<usize> = rows.into_iter().map(|i| row_ix[i]).collect();
    let mut cols: Vec<usize> = cols.into_iter().map(|j| col_ix[j]).collect();
    rows.sort_unstable();
    cols.sort_unstable();
    Ok(Selection {
        rows: rows.into_iter().map(|i| h.rows[i].clone()).collect(),
        cols: cols.into_iter().map(|j| h.cols[j].clone()).collect(),
    })
}

fn positions(keys: &[HankelKey], lookup: impl Fn(&HankelKey) -> Option<usize>, what: &str) -> Result<Vec<usize>> {
    keys.iter()
        .map(|k| lookup(k).ok_or_else(|| Error::Invalid(format!("{what} key ({}, {}) not in Hankel block", k.0, k.1))))
        .collect()
}

/// Partial realization from a Hankel block over rows `|u| ≤ N+1`, columns `|v| ≤ N`.
///
/// `A_σ` solves `A_σ·H_{α,β} = Z_σ` in the least-squares sense, where `Z_σ` is read
/// from the rows `(σu, i)` for `(u, i) ∈ α` (equal to the entries `(u,i),(vσ,j)`).
pub fn ho_kalman(h: &HankelBlock, sel: &Selection, tol: f64) -> Result<Representation> {
    let r = sel.size();
    if sel.cols.len() != r {
        return Err(Error::Invalid("selection must have as many rows as columns".into()));
    }
    let p = h.output_dim();
    let k = h.index_labels.len();
    let alpha = positions(&sel.rows, |x| h.row_of(x), "row")?;
    let beta = positions(&sel.cols, |x| h.col_of(x), "column")?;
    let hab = h.matrix.select_rows(&alpha).select_columns(&beta);
    let sv = singular_values(&hab);
    if r > 0 {
        let smallest = *sv.last().unwrap();
        if !(smallest > tol * sv[0]) {
            return Err(Error::SingularSelection { smallest, threshold: tol * sv[0] });
        }
    }
    let hinv = pinv(&hab, tol);
    let mut a = Vec::with_capacity(h.alphabet.len());
    for s in h.alphabet.letters() {
        let shifted: Vec<HankelKey> = sel.rows.iter().map(|(u, i)| (u.prepend(s), *i)).collect();
        let zr = positions(&shifted, |x| h.row_of(x), "shifted row")?;
        let z = h.matrix.select_rows(&zr).select_columns(&beta);
        a.push(z * &hinv);
    }
    let mut b = Vec::with_capacity(k);
    for j in 0..k {
        let col = h.col_of(&(Word::empty(), j)).ok_or_else(|| Error::Invalid("Hankel lacks ε columns".into()))?;
        b.push(Vector::from_iterator(r, alpha.iter().map(|&i| h.matrix[(i, col)])));
    }
    // state coordinates are the α rows, so C = H_{ε,β}·H_αβ⁺
    let mut c = Mat::zeros(p, r);
    for i in 0..p {
        let row = h.row_of(&(Word::empty(), i)).ok_or_else(|| Error::Invalid("Hankel lacks ε rows".into()))?;
        for (cc, &bj) in beta.iter().enumerate() {
            c[(i, cc)] = h.matrix[(row, bj)];
        }
    }
    let c = c * &hinv;
    Representation::new(h.alphabet.clone(), a, b, h.index_labels.clone(), c)
}

/// `W_R = [A_{v_i}·B̃]` over all words `v_i` of length `≤ n−1`.
pub fn reachability_matrix(rep: &Representation) -> Mat {
    let n = rep.dim();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let bt = rep.b_matrix();
    let blocks: Vec<Mat> = WordsUpTo::new(rep.alphabet().len(), n - 1).map(|w| word_matrix(rep, &w) * &bt).collect();
    hcat(&blocks, n)
}

/// `O_R` stacking `C·A_{v_i}` over all words `v_i` of length `≤ n−1`.
pub fn observability_matrix(rep: &Representation) -> Mat {
    let n = rep.dim();
    if n == 0 {
        return Mat::zeros(0, 0);
    }
    let blocks: Vec<Mat> = WordsUpTo::new(rep.alphabet().len(), n - 1).map(|w| rep.c() * word_matrix(rep, &w)).collect();
    vcat(&blocks, n)
}

/// Orthonormal basis of the smallest `{A_σ}`-invariant subspace containing `range(start)`.
/// Equals `range(W_R)` when `start = B̃`.
pub fn invariant_span(a: &[Mat], start: &Mat, tol: f64) -> Mat {
    let n = start.nrows();
    let mut basis = orth_basis(start, tol);
    loop {
        if basis.ncols() == n || basis.ncols() == 0 {
            return basis;
        }
        let mut blocks = vec![basis.clone()];
        blocks.extend(a.iter().map(|m| m * &basis));
        let next = orth_basis(&hcat(&blocks, n), tol);
        if next.ncols() == basis.ncols() {
            return basis;
        }
        basis = next;
    }
}

/// Orthonormal basis of `range(W_R)`.
pub fn reachable_basis(rep: &Representation, tol: f64) -> Mat {
    invariant_span(rep.a_all(), &rep.b_matrix(), tol)
}

/// Orthonormal basis of `range(O_Rᵀ)`, the orthogonal complement of `ker O_R`.
pub fn observable_basis(rep: &Representation, tol: f64) -> Mat {
    let at: Vec<Mat> = rep.a_all().iter().map(|m| m.transpose()).collect();
    invariant_span(&at, &rep.c().transpose(), tol)
}

pub fn is_reachable(rep: &Representation, tol: f64) -> bool {
    reachable_basis(rep, tol).ncols() == rep.dim()
}

pub fn is_observable(rep: &Representation, tol: f64) -> bool {
    observable_basis(rep, tol).ncols() == rep.dim()
}

pub fn is_minimal(rep: &Representation, tol: f64) -> bool {
    is_reachable(rep, tol) && is_observable(rep, tol)
}

/// Restrict to the reachable subspace, then quotient out the unobservable part.
pub fn reduce_minimal(rep: &Representation, tol: f64) -> Representation {
    let reach = rep.project(&reachable_basis(rep, tol));
    let obs = observable_basis(&reach, tol);
    reach.project(&obs)
}

/// Change of basis `T` with `T·A1 = A2·T`, `T·B1 = B2`, `C1 = C2·T`.
#[derive(Clone, Debug)]
pub struct Isomorphism {
    pub t: Mat,
    /// Relative residuals of the A, B and C relations.
    pub residuals: [f64; 3],
}

pub fn find_isomorphism(r1: &Representation, r2: &Representation, tol: f64) -> Result<Isomorphism> {
    let n = r1.dim();
    if n != r2.dim() {
        return Err(Error::NotIsomorphic(format!("dimensions differ ({} vs {})", n, r2.dim())));
    }
    if r1.alphabet().len() != r2.alphabet().len()
        || r1.index_count() != r2.index_count()
        || r1.output_dim() != r2.output_dim()
    {
        return Err(Error::NotIsomorphic("alphabet, index set or output dimension differ".into()));
    }
    if n == 0 {
        return Ok(Isomorphism { t: Mat::zeros(0, 0), residuals: [0.0; 3] });
    }
    let o1 = observability_matrix(r1);
    let o2 = observability_matrix(r2);
    let t = pinv(&o2, DEFAULT_RANK_TOL) * o1;
    if numeric_rank(&t, DEFAULT_RANK_TOL) < n {
        return Err(Error::NotIsomorphic("candidate transformation is singular".into()));
    }
    let lhs_a = hcat(&r1.a_all().iter().map(|a| &t * a).collect::<Vec<_>>(), n);
    let rhs_a = hcat(&r2.a_all().iter().map(|a| a * &t).collect::<Vec<_>>(), n);
    let res = [
        relative_diff(&lhs_a, &rhs_a),
        relative_diff(&(&t * r1.b_matrix()), &r2.b_matrix()),
        relative_diff(r1.c(), &(r2.c() * &t)),
    ];
    if res.iter().any(|&x| !(x <= tol)) {
        return Err(Error::NotIsomorphic(format!(
            "relation residuals A {:.3e}, B {:.3e}, C {:.3e} exceed {tol:e}",
            res[0], res[1], res[2]
        )));
    }
    Ok(Isomorphism { t, residuals: res })
}

fn kron_weights(count: usize, weights: Option<&LetterWeights>) -> Vec<f64> {
    match weights {
        Some(w) => w.as_slice().to_vec(),
        None => vec![1.0; count],
    }
}

/// `Σ_σ c_σ A_σᵀ⊗A_σᵀ` with `c_σ = 1` or `c_σ = p_σ`.
pub fn stability_matrix(a: &[Mat], weights: Option<&LetterWeights>) -> Mat {
    linalg::weighted_kron_sum(a, &kron_weights(a.len(), weights))
}

/// Spectral radius of the stability matrix.
pub fn stability_radius(a: &[Mat], weights: Option<&LetterWeights>) -> f64 {
    kron_spectral_radius(a, &kron_weights(a.len(), weights))
}

pub fn is_stable(a: &[Mat], weights: Option<&LetterWeights>, margin: f64) -> bool {
    stability_radius(a, weights) < 1.0 - margin
}

/// `L_k = Σ_{|w| ≤ k} ‖S_j(w)‖²` for `k = 0..=k_max`.
pub fn square_sum_partial(rep: &Representation, j: usize, k_max: usize) -> Vec<f64> {
    let b = rep.b(j);
    let mut z = rep.c().transpose() * rep.c();
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        acc += b.dot(&(&z * b));
        out.push(acc);
        if k < k_max {
            let mut next = Mat::zeros(z.nrows(), z.ncols());
            for a in rep.a_all() {
                next += a.transpose() * &z * a;
            }
            z = next;
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_rep() -> Representation {
        Representation::new(
            Alphabet::indexed(1),
            vec![Mat::from_element(1, 1, 0.5)],
            vec![Vector::from_element(1, 1.0)],
            Representation::numbered_labels(1),
            Mat::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn two_by_two() -> Representation {
        let aa = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let ab = Mat::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        Representation::new(
            Alphabet::new(["a", "b"]).unwrap(),
            vec![aa, ab],
            vec![Vector::from_vec(vec![1.0, 1.0])],
            Representation::numbered_labels(1),
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
        )
        .unwrap()
    }

    pub(crate) fn random_rep(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, p: usize, scale: f64) -> Representation {
        let mut g = |r, c| Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
        let a = (0..d).map(|_| g(n, n) * (scale / (n as f64).sqrt())).collect();
        let b = (0..k).map(|_| g(n, 1).column(0).into_owned()).collect();
        let c = g(p, n);
        Representation::new(Alphabet::indexed(d), a, b, Representation::numbered_labels(k), c).unwrap()
    }

    #[test]
    fn word_matrix_order() {
        let r = two_by_two();
        let ab = Word::from_indices(&[0, 1]);
        let ba = Word::from_indices(&[1, 0]);
        assert_eq!(word_matrix(&r, &ab), Mat::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));
        assert_eq!(word_matrix(&r, &ba), Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(word_matrix(&r, &Word::empty()), Mat::identity(2, 2));
        assert_eq!(series_coefficient(&r, 0, &ab)[0], 1.0);
    }

    #[test]
    fn scalar_coefficients_and_hankel() {
        let r = scalar_rep();
        assert_eq!(series_coefficient(&r, 0, &Word::from_indices(&[0, 0, 0]))[0], 0.125);
        let h = build_hankel(&r, 2, 2).unwrap();
        for (i, (u, _)) in h.rows.iter().enumerate() {
            for (j, (v, _)) in h.cols.iter().enumerate() {
                assert_eq!(h.matrix[(i, j)], 0.5f64.powi((u.len() + v.len()) as i32));
            }
        }
        assert_eq!(numeric_rank(&h.matrix, 1e-9), 1);
        let sel = choose_selection(&h, 1, 1e-8).unwrap();
        assert_eq!(sel.rows, vec![(Word::empty(), 0)]);
        assert_eq!(sel.cols, vec![(Word::empty(), 0)]);
    }

    #[test]
    fn zero_hankel_is_rank_deficient() {
        let mut r = scalar_rep();
        r.c = Mat::zeros(1, 1);
        let h = build_hankel(&r, 1, 1).unwrap();
        assert!(matches!(choose_selection(&h, 1, 1e-8), Err(Error::RankDeficient { .. })));
        let sel = Selection { rows: vec![(Word::empty(), 0)], cols: vec![(Word::empty(), 0)] };
        assert!(matches!(ho_kalman(&h, &sel, 1e-8), Err(Error::SingularSelection { .. })));
    }

    #[test]
    fn epsilon_block_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = random_rep(&mut rng, 2, 2, 3, 2, 0.7);
        let h = build_hankel(&r, 0, 0).unwrap();
        assert_eq!(h.matrix.shape(), (2, 3));
        assert_relative_eq!(h.matrix.clone(), r.c() * r.b_matrix(), epsilon = 1e-15);
    }

    #[test]
    fn ho_kalman_scalar() {
        let r = scalar_rep();
        let h = build_hankel(&r, 2, 1).unwrap();
        let sel = choose_selection_within(&h, 1, 1, 1, 1e-8).unwrap();
        let got = ho_kalman(&h, &sel, 1e-8).unwrap();
        for w in WordsUpTo::new(1, 3) {
            assert!((series_coefficient(&got, 0, &w)[0] - 0.5f64.powi(w.len() as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn ho_kalman_random_two_dim() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = random_rep(&mut rng, 2, 2, 1, 1, 0.8);
        let h = build_hankel(&r, 3, 2).unwrap();
        let sel = choose_selection_within(&h, 2, 2, 2, 1e-8).unwrap();
        assert!(singular_values(&h.matrix.select_rows(&sel.rows.iter().map(|k| h.row_of(k).unwrap()).collect::<Vec<_>>())
            .select_columns(&sel.cols.iter().map(|k| h.col_of(k).unwrap()).collect::<Vec<_>>()))[1] > 0.0);
        let got = ho_kalman(&h, &sel, 1e-8).unwrap();
        for w in WordsUpTo::new(2, 5) {
            let (x, y) = (series_coefficient(&got, 0, &w), series_coefficient(&r, 0, &w));
            assert!((x - y).amax() < 1e-9, "{w}");
        }
        find_isomorphism(&r, &got, 1e-8).unwrap();
    }

    #[test]
    fn reach_obs_scalar_and_padding() {
        let r = scalar_rep();
        // n = 1: only the empty word enters
        assert_eq!(reachability_matrix(&r), Mat::from_element(1, 1, 1.0));
        assert_eq!(observability_matrix(&r), Mat::from_element(1, 1, 1.0));
        assert!(is_minimal(&r, 1e-8));
        let padded = Representation::new(
            Alphabet::indexed(1),
            vec![Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.3])],
            vec![Vector::from_vec(vec![1.0, 0.0])],
            Representation::numbered_labels(1),
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
        )
        .unwrap();
        let w = reachability_matrix(&padded);
        assert_eq!(w, Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 0.0]));
        assert_eq!(numeric_rank(&w, 1e-8), 1);
        assert!(!is_reachable(&padded, 1e-8));
        assert!(is_observable(&padded, 1e-8));
        assert_eq!(reduce_minimal(&padded, 1e-8).dim(), 1);
    }

    #[test]
    fn zero_output_reduces_to_dimension_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = random_rep(&mut rng, 3, 2, 1, 1, 0.7);
        r.c = Mat::zeros(1, 3);
        assert_eq!(observability_matrix(&r), Mat::zeros(7, 3));
        assert!(!is_observable(&r, 1e-8));
        let m = reduce_minimal(&r, 1e-8);
        assert_eq!(m.dim(), 0);
        assert_eq!(series_coefficient(&m, 0, &Word::from_indices(&[1, 0]))[0], 0.0);
        assert_eq!(square_sum_partial(&r, 0, 5), vec![0.0; 6]);
    }

    #[test]
    fn isomorphism_recovers_change_of_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = random_rep(&mut rng, 3, 2, 2, 1, 0.7);
        let t0 = Mat::from_fn(3, 3, |i, j| if i == j { 2.0 } else { rng.random_range(-0.5..0.5) });
        let r2 = r.transform(&t0).unwrap();
        let iso = find_isomorphism(&r, &r2, 1e-8).unwrap();
        assert_relative_eq!(iso.t, t0, epsilon = 1e-8);
        let same = find_isomorphism(&r, &r, 1e-8).unwrap();
        assert_relative_eq!(same.t, Mat::identity(3, 3), epsilon = 1e-10);
        let small = random_rep(&mut rng, 2, 2, 2, 1, 0.7);
        assert!(matches!(find_isomorphism(&r, &small, 1e-8), Err(Error::NotIsomorphic(_))));
    }

    #[test]
    fn stability_examples() {
        let a = vec![Mat::from_element(1, 1, 0.6), Mat::from_element(1, 1, 0.7)];
        assert_relative_eq!(stability_matrix(&a, None)[(0, 0)], 0.85, epsilon = 1e-15);
        let w = LetterWeights::new(vec![0.5, 0.5]).unwrap();
        assert_relative_eq!(stability_matrix(&a, Some(&w))[(0, 0)], 0.425, epsilon = 1e-15);
        assert!(is_stable(&a, None, DEFAULT_STABILITY_MARGIN));
        assert!(!is_stable(&[Mat::from_element(1, 1, 1.0)], None, DEFAULT_STABILITY_MARGIN));
    }

    #[test]
    fn square_sums_scalar() {
        let l = square_sum_partial(&scalar_rep(), 0, 40);
        assert_relative_eq!(l[1], 1.25);
        assert_relative_eq!(l[40], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn square_sums_random_stable_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_rep(&mut rng, 2, 2, 1, 1, 0.6);
        assert!(is_stable(r.a_all(), None, DEFAULT_STABILITY_MARGIN));
        let l = square_sum_partial(&r, 0, 200);
        assert!(l.windows(2).any(|w| w[1] - w[0] < 1e-6));
        assert!(l.windows(2).all(|w| w[1] >= w[0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn word_matrix_anti_homomorphism(seed in any::<u64>(), d in 1usize..4,
            v in proptest::collection::vec(0usize..3, 0..4), w in proptest::collection::vec(0usize..3, 0..4)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rep(&mut rng, 3, d, 1, 1, 1.0);
            let v = Word::from_indices(&v.iter().map(|x| x % d).collect::<Vec<_>>());
            let w = Word::from_indices(&w.iter().map(|x| x % d).collect::<Vec<_>>());
            let lhs = word_matrix(&r, &v.concat(&w));
            let rhs = word_matrix(&r, &w) * word_matrix(&r, &v);
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn hankel_rank_bounded_by_dim(seed in any::<u64>(), n in 1usize..4, d in 1usize..3, nn in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rep(&mut rng, n, d, 2, 2, 0.8);
            let h = build_hankel(&r, nn, nn).unwrap();
            prop_assert!(numeric_rank(&h.matrix, 1e-9) <= n);
        }

        #[test]
        fn reduction_idempotent(seed in any::<u64>(), n in 1usize..4, pad in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let base = random_rep(&mut rng, n, 2, 1, 1, 0.7);
            let big = pad_rep(&base, pad);
            let once = reduce_minimal(&big, 1e-8);
            let twice = reduce_minimal(&once, 1e-8);
            prop_assert_eq!(once.dim(), twice.dim());
            prop_assert!(find_isomorphism(&once, &twice, 1e-8).is_ok());
        }

        #[test]
        fn isomorphism_relations_hold(seed in any::<u64>(), n in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = random_rep(&mut rng, n, 2, 1, 1, 0.7);
            prop_assume!(is_minimal(&r, 1e-8));
            let t0 = Mat::from_fn(n, n, |i, j| if i == j { 1.5 } else { rng.random_range(-0.3..0.3) });
            let r2 = r.transform(&t0).unwrap();
            let iso = find_isomorphism(&r, &r2, 1e-8).unwrap();
            for s in r.alphabet().letters() {
                prop_assert!(relative_diff(&(&iso.t * r.a(s)), &(r2.a(s) * &iso.t)) < 1e-8);
            }
            prop_assert!(relative_diff(r.c(), &(r2.c() * &iso.t)) < 1e-8);
        }
    }

    /// Block-diagonal embedding with an unreachable, unobservable zero block.
    pub(crate) fn pad_rep(r: &Representation, extra: usize) -> Representation {
        let n = r.dim();
        let m = n + extra;
        let a = r
            .a_all()
            .iter()
            .map(|a| {
                let mut big = Mat::zeros(m, m);
                big.view_mut((0, 0), (n, n)).copy_from(a);
                for i in n..m {
                    big[(i, i)] = 0.3;
                }
                big
            })
            .collect();
        let b = r.b_all().iter().map(|b| b.clone().resize_vertically(m, 0.0)).collect();
        let c = r.c().clone().resize_horizontally(m, 0.0);
        Representation::new(r.alphabet().clone(), a, b, r.b_labels().to_vec(), c).unwrap()
    }
}
