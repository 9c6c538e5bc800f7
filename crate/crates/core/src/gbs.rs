//! Generalized bilinear stochastic systems
//!
//! ```text
//! x(t+1) = Σ_σ (A_σ x(t) + K_σ v(t)) u_σ(t)
//! y(t)   = C x(t) + D v(t)
//! ```
//!
//! with letter weights `p_σ`, noise moments `Q_σ = E[v vᵀ u_σ²]` and an
//! admissible-word language. Covers simulation, the stationary state
//! covariance, the associated representation of the output covariances and
//! the innovation-form construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimate::{Inputs, TimeSeries};
use crate::jmls::MarkovChain;
use crate::linalg::{self, min_sym_eigenvalue, psd_factor, sym, Mat, Vector};
use crate::repr::{Representation, DEFAULT_STABILITY_MARGIN};
use crate::words::{AdmissibleLanguage, Alphabet, Letter, LetterWeights};

/// Lyapunov systems with more unknowns than this use fixed-point iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 2500;

#[derive(Clone, Debug, PartialEq)]
pub struct GbsModel {
    alphabet: Alphabet,
    a: Vec<Mat>,
    k: Vec<Mat>,
    c: Mat,
    d: Mat,
    weights: LetterWeights,
    q: Vec<Mat>,
    language: AdmissibleLanguage,
}

impl GbsModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        alphabet: Alphabet,
        a: Vec<Mat>,
        k: Vec<Mat>,
        c: Mat,
        d: Mat,
        weights: LetterWeights,
        q: Vec<Mat>,
        language: AdmissibleLanguage,
    ) -> Result<Self> {
        let nl = alphabet.len();
        let n = c.ncols();
        let p = c.nrows();
        let m = d.ncols();
        if a.len() != nl || k.len() != nl || q.len() != nl || weights.len() != nl || language.alphabet_size() != nl {
            return Err(Error::Dimension(format!("per-letter data must have {nl} entries")));
        }
        if d.nrows() != p {
            return Err(Error::Dimension(format!("D has {} rows, C has {p}", d.nrows())));
        }
        for s in 0..nl {
            if a[s].shape() != (n, n) {
                return Err(Error::Dimension(format!("A[{s}] is {:?}, expected {n}x{n}", a[s].shape())));
            }
            if k[s].shape() != (n, m) {
                return Err(Error::Dimension(format!("K[{s}] is {:?}, expected {n}x{m}", k[s].shape())));
            }
            if q[s].shape() != (m, m) {
                return Err(Error::Dimension(format!("Q[{s}] is {:?}, expected {m}x{m}", q[s].shape())));
            }
            let scale = q[s].norm().max(1.0);
            if (&q[s] - q[s].transpose()).norm() > 1e-10 * scale {
                return Err(Error::Invalid(format!("Q[{s}] is not symmetric")));
            }
            if m > 0 && min_sym_eigenvalue(&q[s]) < -1e-10 * scale {
                return Err(Error::Invalid(format!("Q[{s}] is not positive semidefinite")));
            }
        }
        let all = a.iter().chain(&k).chain(&q).chain([&c, &d]);
        if all.into_iter().any(|x| x.iter().any(|v| !v.is_finite())) {
            return Err(Error::Invalid("non-finite matrix entry".into()));
        }
        Ok(Self { alphabet, a, k, c, d, weights, q, language })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }
    pub fn dim(&self) -> usize {
        self.c.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    pub fn noise_dim(&self) -> usize {
        self.d.ncols()
    }
    pub fn a(&self) -> &[Mat] {
        &self.a
    }
    pub fn k(&self) -> &[Mat] {
        &self.k
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn d(&self) -> &Mat {
        &self.d
    }
    pub fn q(&self) -> &[Mat] {
        &self.q
    }
    pub fn weights(&self) -> &LetterWeights {
        &self.weights
    }
    pub fn language(&self) -> &AdmissibleLanguage {
        &self.language
    }

    /// Spectral radius of `Σ p_σ A_σᵀ⊗A_σᵀ`.
    pub fn stability_radius(&self) -> f64 {
        linalg::kron_spectral_radius(&self.a, self.weights.as_slice())
    }

    pub fn is_stable(&self) -> bool {
        self.stability_radius() < 1.0 - DEFAULT_STABILITY_MARGIN
    }

    fn require_stable(&self) -> Result<f64> {
        let radius = self.stability_radius();
        if radius < 1.0 - DEFAULT_STABILITY_MARGIN {
            Ok(radius)
        } else {
            Err(Error::UnstableModel { radius })
        }
    }

    /// Letter pairs `(σ1, σ2)` with `σ1σ2 ∉ L` where `A_σ2 A_σ1` or `A_σ2 K_σ1 Q_σ1`
    /// exceeds `tol` in max-norm.
    pub fn structural_zero_violations(&self, tol: f64) -> Vec<(Letter, Letter)> {
        let mut out = Vec::new();
        for s1 in self.alphabet.letters() {
            for s2 in self.alphabet.letters() {
                if self.language.allows(s1, s2) {
                    continue;
                }
                let (i, j) = (s1.index(), s2.index());
                let aa = &self.a[j] * &self.a[i];
                let ak = &self.a[j] * &self.k[i] * &self.q[i];
                if aa.amax() > tol || ak.amax() > tol {
                    out.push((s1, s2));
                }
            }
        }
        out
    }
}

/// Generative law of the inputs `u_σ(t)`.
#[derive(Clone, Debug, PartialEq)]
pub enum InputProcess {
    /// Single letter, `u ≡ 1`.
    Linear,
    /// Two letters, `u_0 ≡ 1`, `u_1 ~ N(0, p_1)` i.i.d.
    BilinearGaussian,
    /// `u_σ = χ(θ = σ)` with `θ` i.i.d., `P(θ = σ) = p_σ`.
    IidIndicator,
    /// `u_(q1,q2)(t) = χ(θ(t) = q1, θ(t+1) = q2)`; `pairs[σ]` is the pair of letter `σ`.
    MarkovPair { chain: MarkovChain, pairs: Vec<(usize, usize)> },
}

impl InputProcess {
    /// Pair letters for every transition of `chain` with positive probability.
    pub fn markov_pairs(chain: &MarkovChain) -> Self {
        InputProcess::MarkovPair { chain: chain.clone(), pairs: chain.positive_pairs() }
    }

    fn validate(&self, model: &GbsModel) -> Result<()> {
        let d = model.alphabet.len();
        let p = model.weights.as_slice();
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1.0);
        match self {
            InputProcess::Linear => {
                if d != 1 || !close(p[0], 1.0) {
                    return Err(Error::Invalid("linear input needs one letter with weight 1".into()));
                }
            }
            InputProcess::BilinearGaussian => {
                if d != 2 || !close(p[0], 1.0) {
                    return Err(Error::Invalid("bilinear input needs two letters, the first with weight 1".into()));
                }
            }
            InputProcess::IidIndicator => {
                if !close(p.iter().sum(), 1.0) {
                    return Err(Error::Invalid("indicator weights must sum to 1".into()));
                }
            }
            InputProcess::MarkovPair { chain, pairs } => {
                if pairs.len() != d {
                    return Err(Error::InconsistentAlphabet(format!("{} pairs for {d} letters", pairs.len())));
                }
                for (s, &(q1, q2)) in pairs.iter().enumerate() {
                    if q1 >= chain.len() || q2 >= chain.len() || !close(p[s], chain.prob(q1, q2)) {
                        return Err(Error::InconsistentAlphabet(format!(
                            "letter {} does not match transition ({}, {})",
                            model.alphabet.names()[s],
                            q1 + 1,
                            q2 + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Full simulated trajectory for `t = 0..T`, row-major per time step.
#[derive(Clone, Debug, PartialEq)]
pub struct GbsTrace {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub theta: Option<Vec<u32>>,
}

/// `⌈10 / (1 − ρ)⌉`.
pub fn default_burn_in(radius: f64) -> usize {
    (10.0 / (1.0 - radius.clamp(0.0, 1.0 - 1e-12))).ceil() as usize
}

/// Run the recursion from `x(0) = 0` on explicit inputs (`steps × d`) and
/// noise (`steps × m`). Returns `(y, x)` row-major, `steps` rows each.
pub fn propagate(model: &GbsModel, u: &[f64], v: &[f64], steps: usize) -> (Vec<f64>, Vec<f64>) {
    let (n, p, m, d) = (model.dim(), model.output_dim(), model.noise_dim(), model.alphabet.len());
    assert_eq!(u.len(), steps * d, "input length");
    assert_eq!(v.len(), steps * m, "noise length");
    let rm = |x: &Mat| -> Vec<f64> { x.transpose().iter().copied().collect() };
    let a: Vec<Vec<f64>> = model.a.iter().map(rm).collect();
    let k: Vec<Vec<f64>> = model.k.iter().map(rm).collect();
    let c = rm(&model.c);
    let dd = rm(&model.d);
    let mut x = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut ys = Vec::with_capacity(steps * p);
    let mut xs = Vec::with_capacity(steps * n);
    for t in 0..steps {
        let vt = &v[t * m..(t + 1) * m];
        xs.extend_from_slice(&x);
        for i in 0..p {
            let mut acc = 0.0;
            for j in 0..n {
                acc += c[i * n + j] * x[j];
            }
            for j in 0..m {
                acc += dd[i * m + j] * vt[j];
            }
            ys.push(acc);
        }
        next.iter_mut().for_each(|z| *z = 0.0);
        for s in 0..d {
            let us = u[t * d + s];
            if us == 0.0 {
                continue;
            }
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a[s][i * n + j] * x[j];
                }
                for j in 0..m {
                    acc += k[s][i * m + j] * vt[j];
                }
                next[i] += us * acc;
            }
        }
        std::mem::swap(&mut x, &mut next);
    }
    (ys, xs)
}

/// Draw `v ~ N(0, L Lᵀ)` into `out`.
pub(crate) fn draw_noise(rng: &mut ChaCha8Rng, factor: &Mat, out: &mut Vec<f64>) {
    let m = factor.nrows();
    let xi: Vec<f64> = (0..factor.ncols()).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..m {
        let mut acc = 0.0;
        for (j, x) in xi.iter().enumerate() {
            acc += factor[(i, j)] * x;
        }
        out.push(acc);
    }
}

/// Simulate including states and raw inputs; `burn_in = None` uses [`default_burn_in`].
pub fn simulate_trace(
    model: &GbsModel,
    input: &InputProcess,
    horizon: usize,
    burn_in: Option<usize>,
    seed: u64,
) -> Result<GbsTrace> {
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    let radius = model.require_stable()?;
    input.validate(model)?;
    let burn = burn_in.unwrap_or_else(|| default_burn_in(radius));
    let total = burn + horizon;
    let (d, m) = (model.alphabet.len(), model.noise_dim());
    let p = model.weights.as_slice();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = Vec::with_capacity(total * d);
    let mut v = Vec::with_capacity(total * m);
    let mut theta_all: Option<Vec<u32>> = None;
    match input {
        InputProcess::Linear => {
            let f = psd_factor(&model.q[0]);
            for _ in 0..total {
                u.push(1.0);
                draw_noise(&mut rng, &f, &mut v);
            }
        }
        InputProcess::BilinearGaussian => {
            let f = psd_factor(&model.q[0]);
            let sd = p[1].sqrt();
            for _ in 0..total {
                let g: f64 = rng.sample(StandardNormal);
                u.push(1.0);
                u.push(sd * g);
                draw_noise(&mut rng, &f, &mut v);
            }
        }
        InputProcess::IidIndicator => {
            // v | θ=σ ~ N(0, Q_σ/p_σ); equals Q_base when Q_σ = p_σ Q_base
            let f: Vec<Mat> = (0..d).map(|s| psd_factor(&(&model.q[s] / p[s]))).collect();
            let mut th = Vec::with_capacity(total);
            for _ in 0..total {
                let s = sample_categorical(&mut rng, p);
                for j in 0..d {
                    u.push(if j == s { 1.0 } else { 0.0 });
                }
                draw_noise(&mut rng, &f[s], &mut v);
                th.push(s as u32);
            }
            theta_all = Some(th);
        }
        InputProcess::MarkovPair { chain, pairs } => {
            let nq = chain.len();
            // mixed moment Q_q = Σ_{q2} Q_(q,q2); v | θ=q ~ N(0, Q_q/π_q)
            let mut mixed = vec![Mat::zeros(m, m); nq];
            for (s, &(q1, _)) in pairs.iter().enumerate() {
                mixed[q1] += &model.q[s];
            }
            let pi = chain.stationary();
            let f: Vec<Mat> = (0..nq)
                .map(|q| if pi[q] > 0.0 { psd_factor(&(&mixed[q] / pi[q])) } else { Mat::zeros(m, m) })
                .collect();
            let mut letter_of = vec![usize::MAX; nq * nq];
            for (s, &(q1, q2)) in pairs.iter().enumerate() {
                letter_of[q1 * nq + q2] = s;
            }
            let th = chain.sample_path(&mut rng, total + 1);
            for t in 0..total {
                let (q1, q2) = (th[t] as usize, th[t + 1] as usize);
                let s = letter_of[q1 * nq + q2];
                if s == usize::MAX {
                    return Err(Error::InconsistentAlphabet(format!("transition ({}, {}) has no letter", q1 + 1, q2 + 1)));
                }
                for j in 0..d {
                    u.push(if j == s { 1.0 } else { 0.0 });
                }
                draw_noise(&mut rng, &f[q1], &mut v);
            }
            theta_all = Some(th);
        }
    }
    let (y, x) = propagate(model, &u, &v, total);
    let (n, pp) = (model.dim(), model.output_dim());
    Ok(GbsTrace {
        y: y[burn * pp..].to_vec(),
        x: x[burn * n..].to_vec(),
        u: u[burn * d..].to_vec(),
        theta: theta_all.map(|th| th[burn..burn + horizon].to_vec()),
    })
}

pub(crate) fn sample_categorical(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let total: f64 = p.iter().sum();
    let r: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if r < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

/// Simulate `horizon` samples after `burn_in` (default `⌈10/(1−ρ)⌉`).
///
/// Markov-pair inputs produce a θ-form series; all other kinds a u-form series.
pub fn simulate(model: &GbsModel, input: &InputProcess, horizon: usize, burn_in: Option<usize>, seed: u64) -> Result<TimeSeries> {
    let tr = simulate_trace(model, input, horizon, burn_in, seed)?;
    let inputs = match input {
        InputProcess::MarkovPair { chain, .. } => Inputs::Modes { states: chain.len(), theta: tr.theta.unwrap() },
        _ => Inputs::Letters { alphabet: model.alphabet.clone(), u: tr.u },
    };
    TimeSeries::new(model.output_dim(), tr.y, inputs)
}

fn vec_cm(m: &Mat) -> Vector {
    Vector::from_column_slice(m.as_slice())
}

fn unvec_cm(v: &[f64], n: usize) -> Mat {
    Mat::from_column_slice(n, n, v)
}

/// Right-hand sides `p_σ Σ_{σ1σ ∈ L} K_σ1 Q_σ1 K_σ1ᵀ`.
fn forcing(model: &GbsModel) -> Vec<Mat> {
    let n = model.dim();
    let kqk: Vec<Mat> = (0..model.alphabet.len()).map(|s| &model.k[s] * &model.q[s] * model.k[s].transpose()).collect();
    model
        .alphabet
        .letters()
        .map(|s| {
            let mut f = Mat::zeros(n, n);
            for s1 in model.alphabet.letters() {
                if model.language.allows(s1, s) {
                    f += &kqk[s1.index()];
                }
            }
            f * model.weights.get(s)
        })
        .collect()
}

fn lyapunov_map(model: &GbsModel, p: &[Mat], f: &[Mat]) -> Vec<Mat> {
    let apa: Vec<Mat> = (0..p.len()).map(|s| &model.a[s] * &p[s] * model.a[s].transpose()).collect();
    model
        .alphabet
        .letters()
        .map(|s| {
            let mut acc = f[s.index()].clone();
            for s1 in model.alphabet.letters() {
                if model.language.allows(s1, s) {
                    acc += &apa[s1.index()] * model.weights.get(s);
                }
            }
            acc
        })
        .collect()
}

/// `‖P − F(P)‖_F / (1 + ‖P‖_F)` for the stacked covariance equation.
pub fn lyapunov_residual(model: &GbsModel, p: &[Mat]) -> f64 {
    let f = forcing(model);
    let img = lyapunov_map(model, p, &f);
    let num: f64 = p.iter().zip(&img).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
    let den: f64 = p.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt();
    num / (1.0 + den)
}

/// Stationary `P_σ = E[x xᵀ u_σ²]`; direct solve for small systems, fixed point otherwise.
pub fn solve_state_covariance(model: &GbsModel) -> Result<Vec<Mat>> {
    let n = model.dim();
    if model.alphabet.len() * n * n <= DIRECT_SOLVE_LIMIT {
        solve_state_covariance_direct(model)
    } else {
        solve_state_covariance_iterative(model, 1e-14, 1_000_000)
    }
}

/// Stacked linear solve on `vec(P_σ)`.
pub fn solve_state_covariance_direct(model: &GbsModel) -> Result<Vec<Mat>> {
    model.require_stable()?;
    let (n, d) = (model.dim(), model.alphabet.len());
    let nn = n * n;
    if n == 0 {
        return Ok(vec![Mat::zeros(0, 0); d]);
    }
    let kron: Vec<Mat> = model.a.iter().map(|a| a.kronecker(a)).collect();
    let mut sys = Mat::identity(d * nn, d * nn);
    let mut rhs = Vector::zeros(d * nn);
    let f = forcing(model);
    for s in model.alphabet.letters() {
        let i = s.index();
        rhs.rows_mut(i * nn, nn).copy_from(&vec_cm(&f[i]));
        for s1 in model.alphabet.letters() {
            if model.language.allows(s1, s) {
                let j = s1.index();
                let mut blk = sys.view_mut((i * nn, j * nn), (nn, nn));
                blk -= &kron[j] * model.weights.get(s);
            }
        }
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::UnstableModel { radius: model.stability_radius() })?;
    Ok((0..d).map(|i| sym(&unvec_cm(&sol.as_slice()[i * nn..(i + 1) * nn], n))).collect())
}

/// Plain fixed-point iteration from zero until the relative change drops below `tol`.
pub fn solve_state_covariance_iterative(model: &GbsModel, tol: f64, max_iter: usize) -> Result<Vec<Mat>> {
    model.require_stable()?;
    let n = model.dim();
    let f = forcing(model);
    let mut p = vec![Mat::zeros(n, n); model.alphabet.len()];
    let mut change = f64::INFINITY;
    for _ in 0..max_iter {
        let next: Vec<Mat> = lyapunov_map(model, &p, &f).iter().map(sym).collect();
        let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let size: f64 = next.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt();
        p = next;
        change = if size > 0.0 { diff / size } else { diff };
        if change < tol {
            return Ok(p);
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, change })
}

/// `B_σ = (1/√p_σ)(A_σ P_σ Cᵀ + K_σ Q_σ Dᵀ)` for each letter.
pub fn input_blocks(model: &GbsModel, p: &[Mat]) -> Vec<Mat> {
    model
        .alphabet
        .letters()
        .map(|s| {
            let i = s.index();
            (&model.a[i] * &p[i] * model.c.transpose() + &model.k[i] * &model.q[i] * model.d.transpose())
                / model.weights.get(s).sqrt()
        })
        .collect()
}

/// Index labels `j@σ`, letter-major, matching the column order of [`Representation::b_matrix`].
pub fn pair_index_labels(alphabet: &Alphabet, p: usize) -> Vec<String> {
    alphabet.names().iter().flat_map(|s| (1..=p).map(move |j| format!("{j}@{s}"))).collect()
}

/// Representation `(n, {√p_σ A_σ}, B, C)` whose coefficients are the output covariances.
pub fn associated_representation(model: &GbsModel) -> Result<Representation> {
    let p = solve_state_covariance(model)?;
    Ok(representation_from_blocks(model.alphabet(), &scaled_a(model.a(), model.weights()), &input_blocks(model, &p), model.c()))
}

pub(crate) fn scaled_a(a: &[Mat], w: &LetterWeights) -> Vec<Mat> {
    a.iter().zip(w.as_slice()).map(|(a, &p)| a * p.sqrt()).collect()
}

pub(crate) fn representation_from_blocks(alphabet: &Alphabet, a: &[Mat], blocks: &[Mat], c: &Mat) -> Representation {
    let p = c.nrows();
    let n = c.ncols();
    let mut b = Vec::with_capacity(blocks.len() * p);
    for blk in blocks {
        for j in 0..p {
            b.push(blk.column(j).into_owned());
        }
    }
    if b.is_empty() {
        // p = 0 keeps J non-empty with a single zero column
        b.push(Vector::zeros(n));
        return Representation::new(alphabet.clone(), a.to_vec(), b, vec!["0".into()], c.clone()).expect("consistent");
    }
    Representation::new(alphabet.clone(), a.to_vec(), b, pair_index_labels(alphabet, p), c.clone()).expect("consistent")
}

/// `T_σσ = (C P_σ Cᵀ + D Q_σ Dᵀ) / p_σ`.
pub fn exact_tee_diagonal(model: &GbsModel, p: &[Mat]) -> Vec<Mat> {
    model
        .alphabet
        .letters()
        .map(|s| {
            let i = s.index();
            sym(&((&model.c * &p[i] * model.c.transpose() + &model.d * &model.q[i] * model.d.transpose()) / model.weights.get(s)))
        })
        .collect()
}

/// `K_σ = (√p_σ B_σ − (1/√p_σ) A_σ P_σ Cᵀ)(p_σ T_σσ − C P_σ Cᵀ)⁻¹` with `A_σ` in scaled form.
pub fn innovation_gain(b: &Mat, a_scaled: &Mat, p_cov: &Mat, c: &Mat, t_ss: &Mat, weight: f64) -> Result<Mat> {
    let (gain, _) = gain_and_innovation(b, a_scaled, p_cov, c, t_ss, weight)?;
    Ok(gain)
}

fn gain_and_innovation(b: &Mat, a_scaled: &Mat, p_cov: &Mat, c: &Mat, t_ss: &Mat, weight: f64) -> Result<(Mat, Mat)> {
    let sq = weight.sqrt();
    let q = sym(&(t_ss * weight - c * p_cov * c.transpose()));
    let num = b * sq - a_scaled * p_cov * c.transpose() / sq;
    let scale = (t_ss * weight).norm().max(f64::MIN_POSITIVE);
    let min_eig = min_sym_eigenvalue(&q);
    if q.nrows() > 0 && !(min_eig > 1e-12 * scale) {
        return Err(Error::InnovationNotFullRank { letter: String::new(), min_eig });
    }
    let chol = q.clone().cholesky().ok_or(Error::InnovationNotFullRank { letter: String::new(), min_eig })?;
    let gain = chol.solve(&num.transpose()).transpose();
    Ok((gain, q))
}

fn name_letter(e: Error, name: &str) -> Error {
    match e {
        Error::InnovationNotFullRank { min_eig, .. } => Error::InnovationNotFullRank { letter: name.to_string(), min_eig },
        other => other,
    }
}

/// Identified model tuple `({A_σ, K_σ, P_σ, Q_σ}, C, D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeakRealization {
    pub alphabet: Alphabet,
    pub weights: LetterWeights,
    pub language: AdmissibleLanguage,
    pub a: Vec<Mat>,
    pub k: Vec<Mat>,
    pub p: Vec<Mat>,
    pub q: Vec<Mat>,
    pub c: Mat,
    pub d: Mat,
}

impl WeakRealization {
    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// The tuple read as a GBS driven by its innovation.
    pub fn to_gbs(&self) -> Result<GbsModel> {
        GbsModel::new(
            self.alphabet.clone(),
            self.a.clone(),
            self.k.clone(),
            self.c.clone(),
            self.d.clone(),
            self.weights.clone(),
            self.q.iter().map(sym).collect(),
            self.language.clone(),
        )
    }

    /// Covariance representation built from the stored `P_σ`, `Q_σ`
    /// (no Lyapunov re-solve): `(√p A, (1/√p)(A P Cᵀ + K Q Dᵀ), C)`.
    pub fn covariance_representation(&self) -> Representation {
        let blocks: Vec<Mat> = (0..self.a.len())
            .map(|s| (&self.a[s] * &self.p[s] * self.c.transpose() + &self.k[s] * &self.q[s] * self.d.transpose()) / self.weights.as_slice()[s].sqrt())
            .collect();
        representation_from_blocks(&self.alphabet, &scaled_a(&self.a, &self.weights), &blocks, &self.c)
    }

    /// Same realization in coordinates `x ↦ T x`.
    pub fn transform(&self, t: &Mat) -> Result<Self> {
        let ti = t.clone().try_inverse().ok_or_else(|| Error::Invalid("change of basis is singular".into()))?;
        Ok(Self {
            a: self.a.iter().map(|a| t * a * &ti).collect(),
            k: self.k.iter().map(|k| t * k).collect(),
            p: self.p.iter().map(|p| t * p * t.transpose()).collect(),
            c: &self.c * &ti,
            ..self.clone()
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RiccatiOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self { max_iter: 100_000, tol: 1e-10 }
    }
}

/// Innovation-form realization from a minimal representation in scaled form and `T_σσ`.
///
/// The representation's index set is `(j, σ)`, letter-major with `p` entries per letter.
pub fn innovation_realization(
    rep: &Representation,
    t_diag: &[Mat],
    weights: &LetterWeights,
    language: &AdmissibleLanguage,
    opts: RiccatiOptions,
) -> Result<WeakRealization> {
    let alphabet = rep.alphabet().clone();
    let nl = alphabet.len();
    let (n, p) = (rep.dim(), rep.output_dim());
    if rep.index_count() != nl * p || t_diag.len() != nl || weights.len() != nl {
        return Err(Error::Dimension(format!(
            "expected {} series indices and {nl} diagonal blocks",
            nl * p
        )));
    }
    let bm = rep.b_matrix();
    let g: Vec<Mat> = (0..nl).map(|s| bm.columns(s * p, p).into_owned()).collect();
    let c = rep.c().clone();
    let w = weights.as_slice();
    let step = |pc: &[Mat]| -> Result<(Vec<Mat>, Vec<Mat>, Vec<Mat>)> {
        let mut ks = Vec::with_capacity(nl);
        let mut qs = Vec::with_capacity(nl);
        let mut terms = Vec::with_capacity(nl);
        for s in 0..nl {
            let (k, q) = gain_and_innovation(&g[s], &rep.a_all()[s], &pc[s], &c, &t_diag[s], w[s])
                .map_err(|e| name_letter(e, &alphabet.names()[s]))?;
            let a = &rep.a_all()[s] / w[s].sqrt();
            terms.push(&a * &pc[s] * a.transpose() + &k * &q * k.transpose());
            ks.push(k);
            qs.push(q);
        }
        let next = (0..nl)
            .map(|s| {
                let mut acc = Mat::zeros(n, n);
                for s1 in 0..nl {
                    if language.allows(Letter(s1 as u16), Letter(s as u16)) {
                        acc += &terms[s1];
                    }
                }
                sym(&(acc * w[s]))
            })
            .collect();
        Ok((next, ks, qs))
    };
    let mut pc = vec![Mat::zeros(n, n); nl];
    let mut change = f64::INFINITY;
    let mut converged = n == 0;
    for _ in 0..opts.max_iter {
        if converged {
            break;
        }
        let (next, _, _) = step(&pc)?;
        let diff: f64 = next.iter().zip(&pc).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let size: f64 = next.iter().map(|a| a.norm_squared()).sum::<f64>().sqrt();
        change = if size > 0.0 { diff / size } else { diff };
        pc = next;
        converged = change < opts.tol;
    }
    if !converged {
        return Err(Error::NoConvergence { iterations: opts.max_iter, change });
    }
    let (_, k, q) = step(&pc)?;
    Ok(WeakRealization {
        alphabet: alphabet.clone(),
        weights: weights.clone(),
        language: language.clone(),
        a: rep.a_all().iter().zip(w).map(|(a, &ws)| a / ws.sqrt()).collect(),
        k,
        p: pc,
        q,
        c,
        d: Mat::identity(p, p),
    })
}

/// Residuals `(covariance equation, gain equation)` of a weak realization against
/// a scaled representation and `T_σσ`.
pub fn innovation_residuals(w: &WeakRealization, rep: &Representation, t_diag: &[Mat]) -> (f64, f64) {
    let model = match w.to_gbs() {
        Ok(m) => m,
        Err(_) => return (f64::INFINITY, f64::INFINITY),
    };
    let lyap = lyapunov_residual(&model, &w.p);
    let p = w.output_dim();
    let bm = rep.b_matrix();
    let mut gain_res: f64 = 0.0;
    for s in 0..w.a.len() {
        let ws = w.weights.as_slice()[s];
        let g = bm.columns(s * p, p).into_owned();
        let q = &t_diag[s] * ws - &w.c * &w.p[s] * w.c.transpose();
        let lhs = &w.k[s] * &q;
        let rhs = g * ws.sqrt() - &rep.a_all()[s] * &w.p[s] * w.c.transpose() / ws.sqrt();
        gain_res = gain_res.max((lhs - &rhs).norm() / (1.0 + rhs.norm()));
    }
    (lyap, gain_res)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn scalar(a: f64, k: f64, c: f64, d: f64, q: f64) -> GbsModel {
        let m = |x| Mat::from_element(1, 1, x);
        GbsModel::new(
            Alphabet::indexed(1),
            vec![m(a)],
            vec![m(k)],
            m(c),
            m(d),
            LetterWeights::new(vec![1.0]).unwrap(),
            vec![m(q)],
            AdmissibleLanguage::full(1),
        )
        .unwrap()
    }

    #[test]
    fn scalar_lyapunov() {
        let m = scalar(0.5, 1.0, 1.0, 1.0, 1.0);
        let p = solve_state_covariance(&m).unwrap();
        assert_relative_eq!(p[0][(0, 0)], 4.0 / 3.0, epsilon = 1e-14);
        let z = scalar(0.5, 0.0, 1.0, 1.0, 1.0);
        assert_eq!(solve_state_covariance(&z).unwrap()[0][(0, 0)], 0.0);
        assert!(matches!(solve_state_covariance(&scalar(1.0, 1.0, 1.0, 1.0, 1.0)), Err(Error::UnstableModel { .. })));
    }

    #[test]
    fn two_letter_lyapunov_closed_form() {
        let m = |x| Mat::from_element(1, 1, x);
        let model = GbsModel::new(
            Alphabet::indexed(2),
            vec![m(0.8), m(0.8)],
            vec![m(1.0), m(1.0)],
            m(1.0),
            m(1.0),
            LetterWeights::new(vec![0.5, 0.5]).unwrap(),
            vec![m(1.0), m(1.0)],
            AdmissibleLanguage::full(2),
        )
        .unwrap();
        // P_a = P_b = P with P = 0.5 (0.64·2P + 2)  ⇒  P = 1/0.36
        let p = solve_state_covariance_direct(&model).unwrap();
        let it = solve_state_covariance_iterative(&model, 1e-15, 100_000).unwrap();
        assert_relative_eq!(p[0][(0, 0)], 1.0 / 0.36, epsilon = 1e-12);
        assert_relative_eq!(p[1][(0, 0)], 1.0 / 0.36, epsilon = 1e-12);
        assert_relative_eq!(it[0][(0, 0)], p[0][(0, 0)], epsilon = 1e-12);
    }

    #[test]
    fn scalar_chain() {
        let m = scalar(0.5, 1.0, 1.0, 1.0, 1.0);
        let rep = associated_representation(&m).unwrap();
        assert_relative_eq!(rep.b(0)[0], 5.0 / 3.0, epsilon = 1e-14);
        let p = solve_state_covariance(&m).unwrap();
        let t = exact_tee_diagonal(&m, &p);
        assert_relative_eq!(t[0][(0, 0)], 7.0 / 3.0, epsilon = 1e-14);
        let k = innovation_gain(&rep.b_matrix(), &rep.a_all()[0], &p[0], rep.c(), &t[0], 1.0).unwrap();
        assert_relative_eq!(k[(0, 0)], 1.0, epsilon = 1e-14);
        let w = innovation_realization(&rep, &t, m.weights(), m.language(), RiccatiOptions::default()).unwrap();
        assert_relative_eq!(w.a[0][(0, 0)], 0.5, epsilon = 1e-8);
        assert_relative_eq!(w.k[0][(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(w.c[(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(w.p[0][(0, 0)], 4.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(w.q[0][(0, 0)], 1.0, epsilon = 1e-8);
        let (r1, r2) = innovation_residuals(&w, &rep, &t);
        assert!(r1 < 1e-8 && r2 < 1e-8);
    }

    #[test]
    fn gain_edge_cases() {
        let one = Mat::from_element(1, 1, 1.0);
        let a = Mat::from_element(1, 1, 0.5);
        let p = Mat::from_element(1, 1, 2.0);
        // B = A P Cᵀ (p_σ = 1) ⇒ K = 0
        let k = innovation_gain(&(&a * &p), &a, &p, &one, &Mat::from_element(1, 1, 3.0), 1.0).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
        let e = innovation_gain(&one, &a, &p, &one, &p, 1.0);
        assert!(matches!(e, Err(Error::InnovationNotFullRank { .. })));
    }

    #[test]
    fn zero_series_realization() {
        let m = scalar(0.5, 1.0, 0.0, 0.0, 1.0);
        let rep = associated_representation(&m).unwrap();
        assert!(rep.b_all().iter().all(|b| b.iter().all(|&x| x == 0.0)));
        let min = crate::repr::reduce_minimal(&rep, 1e-8);
        assert_eq!(min.dim(), 0);
        let t = vec![Mat::from_element(1, 1, 2.0)];
        let w = innovation_realization(&min, &t, m.weights(), m.language(), RiccatiOptions::default()).unwrap();
        assert_eq!(w.dim(), 0);
        assert_eq!(w.q[0][(0, 0)], 2.0);
    }

    #[test]
    fn white_noise_passthrough_and_determinism() {
        let m = scalar(0.0, 1.0, 0.0, 1.0, 1.0);
        let ts = simulate(&m, &InputProcess::Linear, 100_000, None, 4).unwrap();
        let var = (0..ts.len()).map(|t| ts.y(t)[0].powi(2)).sum::<f64>() / ts.len() as f64;
        assert!((var - 1.0).abs() < 0.05);
        let again = simulate(&m, &InputProcess::Linear, 100_000, None, 4).unwrap();
        assert_eq!(ts, again);
    }

    #[test]
    fn scalar_output_variance() {
        let m = scalar(0.5, 1.0, 1.0, 0.0, 1.0);
        let ts = simulate(&m, &InputProcess::Linear, 100_000, Some(100), 9).unwrap();
        let var = (0..ts.len()).map(|t| ts.y(t)[0].powi(2)).sum::<f64>() / ts.len() as f64;
        assert!((var - 4.0 / 3.0).abs() < 0.05 * 4.0 / 3.0, "{var}");
        assert!(matches!(
            simulate(&scalar(1.2, 1.0, 1.0, 0.0, 1.0), &InputProcess::Linear, 10, None, 0),
            Err(Error::UnstableModel { .. })
        ));
    }

    #[test]
    fn burn_in_default() {
        assert_eq!(default_burn_in(0.0), 10);
        assert_eq!(default_burn_in(0.5), 20);
    }
}
