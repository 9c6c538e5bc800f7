//! Generalized jump-Markov linear systems
//!
//! ```text
//! x(t+1) = M_{θ(t),θ(t+1)} x(t) + B_{θ(t),θ(t+1)} v(t)
//! y(t)   = C_{θ(t)} x(t) + D_{θ(t)} v(t)
//! ```
//!
//! with mode-dependent state dimensions `n_q` and a stationary Markov chain θ.
//! Modes are 0-based here and 1-based in names and files.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimate::{pair_language, pair_name, Inputs, TimeSeries};
use crate::gbs::{self, draw_noise, sample_categorical, GbsModel};
use crate::linalg::{self, orth_basis, psd_factor, relative_diff, sym, Mat, Vector};
use crate::repr::{find_isomorphism, DEFAULT_RANK_TOL, DEFAULT_STABILITY_MARGIN};
use crate::words::{Alphabet, LetterWeights, Word};

#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    p: Mat,
    pi: Vec<f64>,
}

impl MarkovChain {
    pub fn new(p: Mat) -> Result<Self> {
        let pi = stationary_distribution(&p)?;
        Ok(Self { p, pi })
    }

    pub fn len(&self) -> usize {
        self.p.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.nrows() == 0
    }

    pub fn transition(&self) -> &Mat {
        &self.p
    }

    pub fn prob(&self, q1: usize, q2: usize) -> f64 {
        self.p[(q1, q2)]
    }

    pub fn stationary(&self) -> &[f64] {
        &self.pi
    }

    /// Transitions with positive probability, row-major.
    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        let d = self.len();
        (0..d).flat_map(|a| (0..d).map(move |b| (a, b))).filter(|&(a, b)| self.p[(a, b)] > 0.0).collect()
    }

    /// Path of `len` modes started from the stationary distribution.
    pub fn sample_path(&self, rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        if len == 0 {
            return out;
        }
        let rows: Vec<Vec<f64>> = (0..self.len()).map(|q| self.p.row(q).iter().copied().collect()).collect();
        let mut q = sample_categorical(rng, &self.pi);
        out.push(q as u32);
        for _ in 1..len {
            q = sample_categorical(rng, &rows[q]);
            out.push(q as u32);
        }
        out
    }
}

/// Stationary distribution of an irreducible stochastic matrix.
pub fn stationary_distribution(p: &Mat) -> Result<Vec<f64>> {
    let d = p.nrows();
    if d == 0 || p.ncols() != d {
        return Err(Error::Dimension("transition matrix must be square and non-empty".into()));
    }
    for q in 0..d {
        if p.row(q).iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
            return Err(Error::Invalid(format!("row {} has a negative or non-finite entry", q + 1)));
        }
        let s: f64 = p.row(q).sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("row {} sums to {s}", q + 1)));
        }
    }
    if !strongly_connected(p) {
        return Err(Error::Reducible);
    }
    // (Pᵀ − I)π = 0 with the last equation replaced by Σπ = 1
    let mut sys = p.transpose() - Mat::identity(d, d);
    let mut rhs = Vector::zeros(d);
    for j in 0..d {
        sys[(d - 1, j)] = 1.0;
    }
    rhs[d - 1] = 1.0;
    let pi = sys.lu().solve(&rhs).ok_or(Error::Reducible)?;
    let mut pi: Vec<f64> = pi.iter().map(|&x| x.max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= s);
    Ok(pi)
}

fn strongly_connected(p: &Mat) -> bool {
    let d = p.nrows();
    let reach = |forward: bool| {
        let mut seen = vec![false; d];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(a) = stack.pop() {
            for b in 0..d {
                let w = if forward { p[(a, b)] } else { p[(b, a)] };
                if w > 0.0 && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    reach(true) && reach(false)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GjmlsModel {
    chain: MarkovChain,
    dims: Vec<usize>,
    /// `M_{q1,q2}` at `q1·d + q2`, shape `n_q2 × n_q1`.
    m: Vec<Mat>,
    /// `B_{q1,q2}` at `q1·d + q2`, shape `n_q2 × m`.
    b: Vec<Mat>,
    c: Vec<Mat>,
    d: Vec<Mat>,
    q: Vec<Mat>,
}

impl GjmlsModel {
    pub fn new(chain: MarkovChain, dims: Vec<usize>, m: Vec<Mat>, b: Vec<Mat>, c: Vec<Mat>, d: Vec<Mat>, q: Vec<Mat>) -> Result<Self> {
        let nq = chain.len();
        if dims.len() != nq || m.len() != nq * nq || b.len() != nq * nq || c.len() != nq || d.len() != nq || q.len() != nq {
            return Err(Error::Dimension(format!("per-mode data must match {nq} modes")));
        }
        let p = c[0].nrows();
        let mdim = d[0].ncols();
        for q1 in 0..nq {
            if c[q1].shape() != (p, dims[q1]) {
                return Err(Error::Dimension(format!("C_{} is {:?}, expected {p}x{}", q1 + 1, c[q1].shape(), dims[q1])));
            }
            if d[q1].shape() != (p, mdim) {
                return Err(Error::Dimension(format!("D_{} is {:?}, expected {p}x{mdim}", q1 + 1, d[q1].shape())));
            }
            if q[q1].shape() != (mdim, mdim) {
                return Err(Error::Dimension(format!("Q_{} is {:?}, expected {mdim}x{mdim}", q1 + 1, q[q1].shape())));
            }
            let scale = q[q1].norm().max(1.0);
            if (&q[q1] - q[q1].transpose()).norm() > 1e-10 * scale || (mdim > 0 && linalg::min_sym_eigenvalue(&q[q1]) < -1e-10 * scale) {
                return Err(Error::Invalid(format!("Q_{} is not symmetric positive semidefinite", q1 + 1)));
            }
            for q2 in 0..nq {
                let i = q1 * nq + q2;
                if m[i].shape() != (dims[q2], dims[q1]) {
                    return Err(Error::Dimension(format!("M_{},{} is {:?}, expected {}x{}", q1 + 1, q2 + 1, m[i].shape(), dims[q2], dims[q1])));
                }
                if b[i].shape() != (dims[q2], mdim) {
                    return Err(Error::Dimension(format!("B_{},{} is {:?}, expected {}x{mdim}", q1 + 1, q2 + 1, b[i].shape(), dims[q2])));
                }
            }
        }
        Ok(Self { chain, dims, m, b, c, d, q })
    }

    pub fn chain(&self) -> &MarkovChain {
        &self.chain
    }
    pub fn modes(&self) -> usize {
        self.chain.len()
    }
    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn total_dim(&self) -> usize {
        self.dims.iter().sum()
    }
    pub fn output_dim(&self) -> usize {
        self.c[0].nrows()
    }
    pub fn noise_dim(&self) -> usize {
        self.d[0].ncols()
    }
    pub fn m(&self, q1: usize, q2: usize) -> &Mat {
        &self.m[q1 * self.modes() + q2]
    }
    pub fn b(&self, q1: usize, q2: usize) -> &Mat {
        &self.b[q1 * self.modes() + q2]
    }
    pub fn c(&self, q: usize) -> &Mat {
        &self.c[q]
    }
    pub fn d(&self, q: usize) -> &Mat {
        &self.d[q]
    }
    pub fn q(&self, q: usize) -> &Mat {
        &self.q[q]
    }

    /// Offset of mode `q` in the stacked state.
    pub fn offset(&self, q: usize) -> usize {
        self.dims[..q].iter().sum()
    }

    /// Per-mode change of basis `x_q ↦ T_q x_q`.
    pub fn transform(&self, t: &[Mat]) -> Result<Self> {
        let nq = self.modes();
        let inv: Vec<Mat> = t
            .iter()
            .map(|x| x.clone().try_inverse().ok_or_else(|| Error::Invalid("singular change of basis".into())))
            .collect::<Result<_>>()?;
        let mut out = self.clone();
        for q1 in 0..nq {
            out.c[q1] = &self.c[q1] * &inv[q1];
            for q2 in 0..nq {
                let i = q1 * nq + q2;
                out.m[i] = &t[q2] * &self.m[i] * &inv[q1];
                out.b[i] = &t[q2] * &self.b[i];
            }
        }
        Ok(out)
    }

    fn embedded_a(&self) -> (Vec<Mat>, Vec<f64>) {
        let n = self.total_dim();
        let mut a = Vec::new();
        let mut w = Vec::new();
        for (q1, q2) in self.chain.positive_pairs() {
            let mut big = Mat::zeros(n, n);
            big.view_mut((self.offset(q2), self.offset(q1)), (self.dims[q2], self.dims[q1])).copy_from(self.m(q1, q2));
            a.push(big);
            w.push(self.chain.prob(q1, q2));
        }
        (a, w)
    }

    pub fn stability_radius(&self) -> f64 {
        let (a, w) = self.embedded_a();
        linalg::kron_spectral_radius(&a, &w)
    }

    pub fn is_stable(&self) -> bool {
        self.stability_radius() < 1.0 - DEFAULT_STABILITY_MARGIN
    }
}

/// `M̃ = Σ p_{q1,q2} J_{q1}(Mᵀ⊗Mᵀ)J_{q2}ᵀ` with `J_q = I_q ⊗ I_q`.
pub fn jmls_stability_matrix(model: &GjmlsModel) -> Mat {
    let n = model.total_dim();
    let mut out = Mat::zeros(n * n, n * n);
    for (q1, q2) in model.chain.positive_pairs() {
        let mt = model.m(q1, q2).transpose();
        let kk = mt.kronecker(&mt) * model.chain.prob(q1, q2);
        let (o1, n1, o2, n2) = (model.offset(q1), model.dims[q1], model.offset(q2), model.dims[q2]);
        for a in 0..n1 * n1 {
            let row = (o1 + a / n1) * n + o1 + a % n1;
            for b in 0..n2 * n2 {
                let col = (o2 + b / n2) * n + o2 + b % n2;
                out[(row, col)] += kk[(a, b)];
            }
        }
    }
    out
}

pub fn is_jmls_stable(model: &GjmlsModel) -> bool {
    model.is_stable()
}

fn require_stable(model: &GjmlsModel) -> Result<f64> {
    let radius = model.stability_radius();
    if radius < 1.0 - DEFAULT_STABILITY_MARGIN {
        Ok(radius)
    } else {
        Err(Error::UnstableModel { radius })
    }
}

/// `P_q = E[x xᵀ χ(θ = q)]` solving
/// `P_q = Σ_s p_{s,q}(M_{s,q} P_s M_{s,q}ᵀ + B_{s,q} Q_s B_{s,q}ᵀ)`.
pub fn gjmls_state_covariance(model: &GjmlsModel) -> Result<Vec<Mat>> {
    require_stable(model)?;
    let nq = model.modes();
    let offs: Vec<usize> = {
        let mut o = vec![0];
        for q in 0..nq {
            o.push(o[q] + model.dims[q] * model.dims[q]);
        }
        o
    };
    let total = offs[nq];
    if total == 0 {
        return Ok(model.dims.iter().map(|_| Mat::zeros(0, 0)).collect());
    }
    let mut sys = Mat::identity(total, total);
    let mut rhs = Vector::zeros(total);
    for (s, q) in model.chain.positive_pairs() {
        let p = model.chain.prob(s, q);
        let m = model.m(s, q);
        let f = model.b(s, q) * &model.q[s] * model.b(s, q).transpose() * p;
        let mut r = rhs.rows_mut(offs[q], offs[q + 1] - offs[q]);
        r += Vector::from_column_slice(f.as_slice());
        let mut blk = sys.view_mut((offs[q], offs[s]), (offs[q + 1] - offs[q], offs[s + 1] - offs[s]));
        blk -= m.kronecker(m) * p;
    }
    let sol = sys.lu().solve(&rhs).ok_or_else(|| Error::UnstableModel { radius: model.stability_radius() })?;
    Ok((0..nq).map(|q| sym(&Mat::from_column_slice(model.dims[q], model.dims[q], &sol.as_slice()[offs[q]..offs[q + 1]]))).collect())
}

/// Relative residual `‖P − F(P)‖ / (1 + ‖P‖)` of the mode covariance equation.
pub fn gjmls_covariance_residual(model: &GjmlsModel, p: &[Mat]) -> f64 {
    let nq = model.modes();
    let mut img: Vec<Mat> = model.dims.iter().map(|&n| Mat::zeros(n, n)).collect();
    for (s, q) in model.chain.positive_pairs() {
        let w = model.chain.prob(s, q);
        let m = model.m(s, q);
        img[q] += (m * &p[s] * m.transpose() + model.b(s, q) * &model.q[s] * model.b(s, q).transpose()) * w;
    }
    let num: f64 = (0..nq).map(|q| (&p[q] - &img[q]).norm_squared()).sum::<f64>().sqrt();
    let den: f64 = p.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
    num / (1.0 + den)
}

/// Trajectory of a GJMLS. `x` is row-major `T × N` with mode `θ(t)`'s block filled.
#[derive(Clone, Debug, PartialEq)]
pub struct GjmlsTrace {
    pub theta: Vec<u32>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

/// Run the recursion from zero on a mode path of length `T + 1` and noise `T × m`.
pub fn propagate_gjmls(model: &GjmlsModel, theta: &[u32], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let steps = theta.len().saturating_sub(1);
    let (p, m, n) = (model.output_dim(), model.noise_dim(), model.total_dim());
    assert_eq!(v.len(), steps * m, "noise length");
    let mut x = Vector::zeros(model.dims[theta[0] as usize]);
    let mut ys = Vec::with_capacity(steps * p);
    let mut xs = vec![0.0; steps * n];
    for t in 0..steps {
        let (q1, q2) = (theta[t] as usize, theta[t + 1] as usize);
        let vt = Vector::from_column_slice(&v[t * m..(t + 1) * m]);
        let o = model.offset(q1);
        xs[t * n + o..t * n + o + x.len()].copy_from_slice(x.as_slice());
        let y = &model.c[q1] * &x + &model.d[q1] * &vt;
        ys.extend_from_slice(y.as_slice());
        x = model.m(q1, q2) * &x + model.b(q1, q2) * &vt;
    }
    (ys, xs)
}

/// Simulate with `v | θ = q ~ N(0, Q_q / π_q)`.
pub fn simulate_gjmls_trace(model: &GjmlsModel, horizon: usize, burn_in: Option<usize>, seed: u64) -> Result<GjmlsTrace> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let radius = require_stable(model)?;
    let burn = burn_in.unwrap_or_else(|| gbs::default_burn_in(radius));
    let total = burn + horizon;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = model.chain.sample_path(&mut rng, total + 1);
    let pi = model.chain.stationary();
    let factors: Vec<Mat> = (0..model.modes())
        .map(|q| if pi[q] > 0.0 { psd_factor(&(&model.q[q] / pi[q])) } else { Mat::zeros(model.noise_dim(), model.noise_dim()) })
        .collect();
    let mut v = Vec::with_capacity(total * model.noise_dim());
    for t in 0..total {
        draw_noise(&mut rng, &factors[theta[t] as usize], &mut v);
    }
    let (y, x) = propagate_gjmls(model, &theta, &v);
    let (p, n) = (model.output_dim(), model.total_dim());
    Ok(GjmlsTrace { theta: theta[burn..total].to_vec(), y: y[burn * p..].to_vec(), x: x[burn * n..].to_vec() })
}

/// θ-form series `(y, θ)`.
pub fn simulate_gjmls(model: &GjmlsModel, horizon: usize, burn_in: Option<usize>, seed: u64) -> Result<TimeSeries> {
    let tr = simulate_gjmls_trace(model, horizon, burn_in, seed)?;
    TimeSeries::new(model.output_dim(), tr.y, Inputs::Modes { states: model.modes(), theta: tr.theta })
}

/// Selectors relating the stacked GBS to the GJMLS.
#[derive(Clone, Debug, PartialEq)]
pub struct Extraction {
    /// `E = [I_p … I_p]`, so `y = E ỹ`.
    pub e: Mat,
    /// `M_q`: `p × pd` selecting output block `q`.
    pub output_selectors: Vec<Mat>,
    /// `S_q`: `m × md` selecting noise block `q`.
    pub noise_selectors: Vec<Mat>,
    /// Pair `(q1, q2)` of each GBS letter.
    pub pairs: Vec<(usize, usize)>,
}

impl Extraction {
    /// Pair-indicator inputs `u_(q1,q2)(t)` for a mode path of length `T + 1`, row-major `T × |Σ|`.
    pub fn lift_inputs(&self, theta: &[u32]) -> Vec<f64> {
        let steps = theta.len().saturating_sub(1);
        let mut u = Vec::with_capacity(steps * self.pairs.len());
        for t in 0..steps {
            for &(a, b) in &self.pairs {
                u.push((theta[t] as usize == a && theta[t + 1] as usize == b) as u8 as f64);
            }
        }
        u
    }

    /// Stacked noise `ṽ(t)` with block `θ(t)` equal to `v(t)`.
    pub fn lift_noise(&self, theta: &[u32], v: &[f64]) -> Vec<f64> {
        let d = self.noise_selectors.len();
        let m = self.noise_selectors.first().map_or(0, |s| s.nrows());
        let steps = theta.len().saturating_sub(1);
        let mut out = vec![0.0; steps * m * d];
        for t in 0..steps {
            let q = theta[t] as usize;
            out[t * m * d + q * m..t * m * d + (q + 1) * m].copy_from_slice(&v[t * m..(t + 1) * m]);
        }
        out
    }

    /// The same GBS with output `y = E ỹ` instead of the stacked `ỹ`.
    pub fn output_gbs(&self, stacked: &GbsModel) -> Result<GbsModel> {
        GbsModel::new(
            stacked.alphabet().clone(),
            stacked.a().to_vec(),
            stacked.k().to_vec(),
            &self.e * stacked.c(),
            &self.e * stacked.d(),
            stacked.weights().clone(),
            stacked.q().to_vec(),
            stacked.language().clone(),
        )
    }
}

/// GBS over the positive transitions with stacked output `ỹ` (dimension `p·d`)
/// and stacked noise `ṽ` (dimension `m·d`).
pub fn gbs_from_gjmls(model: &GjmlsModel) -> Result<(GbsModel, Extraction)> {
    let nq = model.modes();
    let (n, p, m) = (model.total_dim(), model.output_dim(), model.noise_dim());
    let pairs = model.chain.positive_pairs();
    let alphabet = Alphabet::new(pairs.iter().map(|&(a, b)| pair_name(a, b)))?;
    let mut a = Vec::new();
    let mut k = Vec::new();
    let mut q = Vec::new();
    let mut w = Vec::new();
    for &(q1, q2) in &pairs {
        let (o1, o2) = (model.offset(q1), model.offset(q2));
        let mut am = Mat::zeros(n, n);
        am.view_mut((o2, o1), (model.dims[q2], model.dims[q1])).copy_from(model.m(q1, q2));
        let mut km = Mat::zeros(n, m * nq);
        km.view_mut((o2, q1 * m), (model.dims[q2], m)).copy_from(model.b(q1, q2));
        let pr = model.chain.prob(q1, q2);
        let mut qm = Mat::zeros(m * nq, m * nq);
        qm.view_mut((q1 * m, q1 * m), (m, m)).copy_from(&(&model.q[q1] * pr));
        a.push(am);
        k.push(km);
        q.push(qm);
        w.push(pr);
    }
    let mut c = Mat::zeros(p * nq, n);
    let mut d = Mat::zeros(p * nq, m * nq);
    let mut e = Mat::zeros(p, p * nq);
    let mut out_sel = Vec::new();
    let mut noise_sel = Vec::new();
    for q1 in 0..nq {
        c.view_mut((q1 * p, model.offset(q1)), (p, model.dims[q1])).copy_from(&model.c[q1]);
        d.view_mut((q1 * p, q1 * m), (p, m)).copy_from(&model.d[q1]);
        e.view_mut((0, q1 * p), (p, p)).copy_from(&Mat::identity(p, p));
        let mut sq = Mat::zeros(p, p * nq);
        sq.view_mut((0, q1 * p), (p, p)).copy_from(&Mat::identity(p, p));
        out_sel.push(sq);
        let mut sn = Mat::zeros(m, m * nq);
        sn.view_mut((0, q1 * m), (m, m)).copy_from(&Mat::identity(m, m));
        noise_sel.push(sn);
    }
    let gbs = GbsModel::new(alphabet, a, k, c, d, LetterWeights::new(w)?, q, pair_language(&pairs))?;
    Ok((gbs, Extraction { e, output_selectors: out_sel, noise_selectors: noise_sel, pairs }))
}

/// GBS over the positive transitions with output `y` itself (dimension `p`).
pub fn output_gbs_from_gjmls(model: &GjmlsModel) -> Result<GbsModel> {
    let (g, ex) = gbs_from_gjmls(model)?;
    ex.output_gbs(&g)
}

/// How the GBS output and noise relate to the GJMLS being recovered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Output `ỹ` of dimension `p·d` and noise of dimension `m·d`, stacked per mode.
    Stacked,
    /// Output `y` and noise used as they are.
    Direct,
}

/// Parse letter names `"q1,q2"` (1-based) into 0-based pairs.
pub fn parse_pair_names(alphabet: &Alphabet) -> Result<Vec<(usize, usize)>> {
    alphabet
        .names()
        .iter()
        .map(|s| {
            let bad = || Error::InconsistentAlphabet(format!("letter {s:?} is not a mode pair \"q1,q2\""));
            let (a, b) = s.split_once(',').ok_or_else(bad)?;
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if a == 0 || b == 0 {
                return Err(bad());
            }
            Ok((a - 1, b - 1))
        })
        .collect()
}

/// GJMLS associated with a GBS over mode pairs, via the mode subspaces
/// `X_q = span{K_(q1,q) S_q1ᵀ, A_(q1,q) A_w K_(q2,q3) S_q2ᵀ}`.
pub fn gjmls_from_gbs(gbs: &GbsModel, chain: &MarkovChain, layout: Layout, tol: f64) -> Result<GjmlsModel> {
    let pairs = parse_pair_names(gbs.alphabet())?;
    let nq = chain.len();
    for (s, &(a, b)) in pairs.iter().enumerate() {
        if a >= nq || b >= nq {
            return Err(Error::InconsistentAlphabet(format!("pair ({}, {}) outside {nq} modes", a + 1, b + 1)));
        }
        let (w, pr) = (gbs.weights().as_slice()[s], chain.prob(a, b));
        if (w - pr).abs() > 1e-6 * pr.max(1e-12) + 1e-9 {
            return Err(Error::InconsistentAlphabet(format!("weight {w} of letter {} differs from transition probability {pr}", pair_name(a, b))));
        }
    }
    for pair in chain.positive_pairs() {
        if !pairs.contains(&pair) {
            return Err(Error::InconsistentAlphabet(format!("transition {} has no letter", pair_name(pair.0, pair.1))));
        }
    }
    let n = gbs.dim();
    let (p, m) = match layout {
        Layout::Stacked => {
            if gbs.output_dim() % nq != 0 || gbs.noise_dim() % nq != 0 {
                return Err(Error::Dimension("stacked output and noise must split into one block per mode".into()));
            }
            (gbs.output_dim() / nq, gbs.noise_dim() / nq)
        }
        Layout::Direct => (gbs.output_dim(), gbs.noise_dim()),
    };
    let noise_sel = |q: usize| -> Mat {
        match layout {
            Layout::Stacked => {
                let mut s = Mat::zeros(m, m * nq);
                s.view_mut((0, q * m), (m, m)).copy_from(&Mat::identity(m, m));
                s
            }
            Layout::Direct => Mat::identity(m, m),
        }
    };
    let out_sel = |q: usize| -> Mat {
        match layout {
            Layout::Stacked => {
                let mut s = Mat::zeros(p, p * nq);
                s.view_mut((0, q * p), (p, p)).copy_from(&Mat::identity(p, p));
                s
            }
            Layout::Direct => Mat::identity(p, p),
        }
    };
    // grow X_q until stable: X_q ← X_q + Σ_{q1} A_(q1,q) X_q1
    let mut span: Vec<Mat> = (0..nq)
        .map(|q| {
            let cols: Vec<Mat> = pairs
                .iter()
                .enumerate()
                .filter(|(_, &(_, b))| b == q)
                .map(|(s, &(a, _))| &gbs.k()[s] * noise_sel(a).transpose())
                .collect();
            orth_basis(&linalg::hcat(&cols, n), tol)
        })
        .collect();
    for _ in 0..=n {
        let next: Vec<Mat> = (0..nq)
            .map(|q| {
                let mut cols = vec![span[q].clone()];
                for (s, &(a, b)) in pairs.iter().enumerate() {
                    if b == q {
                        cols.push(&gbs.a()[s] * &span[a]);
                    }
                }
                orth_basis(&linalg::hcat(&cols, n), tol)
            })
            .collect();
        let grew = next.iter().zip(&span).any(|(x, y)| x.ncols() != y.ncols());
        span = next;
        if !grew {
            break;
        }
    }
    let dims: Vec<usize> = span.iter().map(|x| x.ncols()).collect();
    let mut mm = Vec::with_capacity(nq * nq);
    let mut bb = Vec::with_capacity(nq * nq);
    for q1 in 0..nq {
        for q2 in 0..nq {
            match pairs.iter().position(|&x| x == (q1, q2)) {
                Some(s) => {
                    mm.push(span[q2].transpose() * &gbs.a()[s] * &span[q1]);
                    bb.push(span[q2].transpose() * &gbs.k()[s] * noise_sel(q1).transpose());
                }
                None => {
                    mm.push(Mat::zeros(dims[q2], dims[q1]));
                    bb.push(Mat::zeros(dims[q2], m));
                }
            }
        }
    }
    let cc: Vec<Mat> = (0..nq).map(|q| out_sel(q) * gbs.c() * &span[q]).collect();
    let dd: Vec<Mat> = (0..nq).map(|q| out_sel(q) * gbs.d() * noise_sel(q).transpose()).collect();
    let qq: Vec<Mat> = (0..nq)
        .map(|q| {
            let mut acc = Mat::zeros(m, m);
            for (s, &(a, _)) in pairs.iter().enumerate() {
                if a == q {
                    acc += noise_sel(q) * &gbs.q()[s] * noise_sel(q).transpose();
                }
            }
            sym(&acc)
        })
        .collect();
    GjmlsModel::new(chain.clone(), dims, mm, bb, cc, dd, qq)
}

/// `G_{q1,q2} = p_{q1,q2}(M P_q1 C_q1ᵀ + B Q_q1 D_q1ᵀ)`, indexed `q1·d + q2`.
pub fn gjmls_gains(model: &GjmlsModel, p: &[Mat]) -> Vec<Mat> {
    let nq = model.modes();
    let mut out = Vec::with_capacity(nq * nq);
    for q1 in 0..nq {
        for q2 in 0..nq {
            let pr = model.chain.prob(q1, q2);
            out.push((model.m(q1, q2) * &p[q1] * model.c[q1].transpose() + model.b(q1, q2) * &model.q[q1] * model.d[q1].transpose()) * pr);
        }
    }
    out
}

fn mode_words(model: &GjmlsModel) -> (Vec<(usize, usize)>, Vec<Word>) {
    let pairs = model.chain.positive_pairs();
    let words = pair_language(&pairs).words_up_to(model.total_dim());
    (pairs, words)
}

fn path_matrix(model: &GjmlsModel, pairs: &[(usize, usize)], w: &[crate::words::Letter], start: usize) -> Mat {
    let mut m = Mat::identity(model.dims[start], model.dims[start]);
    for l in w {
        let (a, b) = pairs[l.index()];
        m = model.m(a, b) * m;
    }
    m
}

/// Per-mode reachability matrices `R_{H,q} = [M_v G_{q1,q2}]` and whether all have rank `n_q`.
pub fn gjmls_reach(model: &GjmlsModel, tol: f64) -> Result<(Vec<Mat>, bool)> {
    let p = gjmls_state_covariance(model)?;
    let g = gjmls_gains(model, &p);
    let nq = model.modes();
    let (pairs, words) = mode_words(model);
    let mut blocks: Vec<Vec<Mat>> = vec![Vec::new(); nq];
    for w in words.iter().filter(|w| !w.is_empty()) {
        let (q1, q2) = pairs[w.letters()[0].index()];
        let rest = &w.letters()[1..];
        let end = rest.last().map_or(q2, |l| pairs[l.index()].1);
        blocks[end].push(path_matrix(model, &pairs, rest, q2) * &g[q1 * nq + q2]);
    }
    let mats: Vec<Mat> = (0..nq).map(|q| linalg::hcat(&blocks[q], model.dims[q])).collect();
    let ok = mats.iter().zip(&model.dims).all(|(r, &n)| linalg::numeric_rank(r, tol) == n);
    Ok((mats, ok))
}

/// Per-mode observability matrices stacking `C_{q_k} M_v` over paths starting in `q`
/// (the empty path included), and whether all have rank `n_q`.
pub fn gjmls_obs(model: &GjmlsModel, tol: f64) -> (Vec<Mat>, bool) {
    let nq = model.modes();
    let (pairs, words) = mode_words(model);
    let mut blocks: Vec<Vec<Mat>> = (0..nq).map(|q| vec![model.c[q].clone()]).collect();
    for w in words.iter().filter(|w| !w.is_empty() && w.len() < model.total_dim().max(1)) {
        let start = pairs[w.letters()[0].index()].0;
        let end = pairs[w.last().unwrap().index()].1;
        blocks[start].push(&model.c[end] * path_matrix(model, &pairs, w.letters(), start));
    }
    let mats: Vec<Mat> = (0..nq).map(|q| linalg::vcat(&blocks[q], model.dims[q])).collect();
    let ok = mats.iter().zip(&model.dims).all(|(o, &n)| linalg::numeric_rank(o, tol) == n);
    (mats, ok)
}

/// Per-mode `T_q` with `T_q2 M1 = M2 T_q1`, `C1_q = C2_q T_q`, `T_q2 G1 = G2`.
pub fn gjmls_isomorphism(h1: &GjmlsModel, h2: &GjmlsModel, tol: f64) -> Result<Vec<Mat>> {
    if h1.dims != h2.dims {
        return Err(Error::NotIsomorphic(format!("mode dimensions {:?} vs {:?}", h1.dims, h2.dims)));
    }
    if h1.chain.positive_pairs() != h2.chain.positive_pairs() || h1.output_dim() != h2.output_dim() {
        return Err(Error::NotIsomorphic("transition structure or output dimension differ".into()));
    }
    for h in [h1, h2] {
        if !(gjmls_reach(h, DEFAULT_RANK_TOL)?.1 && gjmls_obs(h, DEFAULT_RANK_TOL).1) {
            return Err(Error::NotMinimal("model is not reachable and observable".into()));
        }
    }
    let r1 = gbs::associated_representation(&gbs_from_gjmls(h1)?.0)?;
    let r2 = gbs::associated_representation(&gbs_from_gjmls(h2)?.0)?;
    let iso = find_isomorphism(&r1, &r2, tol.max(1e-8))?;
    let nq = h1.modes();
    let t: Vec<Mat> = (0..nq).map(|q| iso.t.view((h1.offset(q), h1.offset(q)), (h1.dims[q], h1.dims[q])).into_owned()).collect();
    let g1 = gjmls_gains(h1, &gjmls_state_covariance(h1)?);
    let g2 = gjmls_gains(h2, &gjmls_state_covariance(h2)?);
    let mut lhs_m = Vec::new();
    let mut rhs_m = Vec::new();
    let mut lhs_g = Vec::new();
    let mut rhs_g = Vec::new();
    for (q1, q2) in h1.chain.positive_pairs() {
        lhs_m.push(Mat::from_column_slice(1, h2.dims[q2] * h1.dims[q1], (&t[q2] * h1.m(q1, q2)).as_slice()));
        rhs_m.push(Mat::from_column_slice(1, h2.dims[q2] * h1.dims[q1], (h2.m(q1, q2) * &t[q1]).as_slice()));
        let i = q1 * nq + q2;
        lhs_g.push(Mat::from_column_slice(1, g1[i].len(), (&t[q2] * &g1[i]).as_slice()));
        rhs_g.push(Mat::from_column_slice(1, g2[i].len(), g2[i].as_slice()));
    }
    let flat = |v: Vec<Mat>| linalg::hcat(&v, 1);
    let lhs_c = flat((0..nq).map(|q| Mat::from_column_slice(1, h1.c[q].len(), h1.c[q].as_slice())).collect());
    let rhs_c = flat((0..nq).map(|q| Mat::from_column_slice(1, h1.c[q].len(), (&h2.c[q] * &t[q]).as_slice())).collect());
    let res = [
        relative_diff(&flat(lhs_m), &flat(rhs_m)),
        relative_diff(&lhs_c, &rhs_c),
        relative_diff(&flat(lhs_g), &flat(rhs_g)),
    ];
    if res.iter().any(|&r| !(r <= tol)) {
        return Err(Error::NotIsomorphic(format!("relation residuals M {:.3e}, C {:.3e}, G {:.3e}", res[0], res[1], res[2])));
    }
    Ok(t)
}
