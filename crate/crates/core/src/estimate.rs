//! Empirical output covariances and the data-driven weak realization.
//!
//! For a word `w = σ1⋯σk` the lagged product is
//! `z_w(t) = y(t−k)·u_σ1(t−k)⋯u_σk(t−1) / √p_w`. Estimates
//! `Λ_w ≈ E[y(t) z_wᵀ(t)]` and `T_{v,w} ≈ E[z_v(t) z_wᵀ(t)]` are plain sample
//! means over every `t` where all factors exist, summed in increasing `t`.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::gbs::{self, GbsModel, WeakRealization};
use crate::linalg::{singular_values, sym, Mat};
use crate::par::{self, ExecMode};
use crate::repr::{
    build_hankel, choose_selection_within, ho_kalman, word_product, HankelBlock, Representation, Selection,
    SeriesSource, DEFAULT_RANK_TOL,
};
use crate::words::{AdmissibleLanguage, Alphabet, Letter, LetterWeights, Word};

/// Observed inputs of a [`TimeSeries`].
#[derive(Clone, Debug, PartialEq)]
pub enum Inputs {
    /// `u_σ(t)` per letter, row-major `T × d`.
    Letters { alphabet: Alphabet, u: Vec<f64> },
    /// Discrete path `θ(t) ∈ {0..states}`; pair inputs are derived from it.
    Modes { states: usize, theta: Vec<u32> },
}

/// Outputs `y(t)` (row-major `T × p`) with their inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    p: usize,
    y: Vec<f64>,
    inputs: Inputs,
}

impl TimeSeries {
    pub fn new(p: usize, y: Vec<f64>, inputs: Inputs) -> Result<Self> {
        if p == 0 || y.len() % p != 0 {
            return Err(Error::Dimension(format!("{} output values do not form rows of {p}", y.len())));
        }
        let t = y.len() / p;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite output value".into()));
        }
        match &inputs {
            Inputs::Letters { alphabet, u } => {
                if u.len() != t * alphabet.len() {
                    return Err(Error::Dimension(format!("{} input values for {t} samples", u.len())));
                }
                if u.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid("non-finite input value".into()));
                }
            }
            Inputs::Modes { states, theta } => {
                if theta.len() != t {
                    return Err(Error::Dimension(format!("{} modes for {t} samples", theta.len())));
                }
                if let Some(q) = theta.iter().find(|&&q| q as usize >= *states) {
                    return Err(Error::OutOfRange(format!("mode {} exceeds {states} states", q + 1)));
                }
            }
        }
        Ok(Self { p, y, inputs })
    }

    pub fn len(&self) -> usize {
        self.y.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    pub fn y(&self, t: usize) -> &[f64] {
        &self.y[t * self.p..(t + 1) * self.p]
    }

    pub fn outputs(&self) -> &[f64] {
        &self.y
    }

    pub fn inputs(&self) -> &Inputs {
        &self.inputs
    }

    /// First `len` samples.
    pub fn truncate(&self, len: usize) -> Self {
        let len = len.min(self.len());
        let inputs = match &self.inputs {
            Inputs::Letters { alphabet, u } => Inputs::Letters { alphabet: alphabet.clone(), u: u[..len * alphabet.len()].to_vec() },
            Inputs::Modes { states, theta } => Inputs::Modes { states: *states, theta: theta[..len].to_vec() },
        };
        Self { p: self.p, y: self.y[..len * self.p].to_vec(), inputs }
    }
}

/// Where a letter's input value comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputSource {
    /// Column of a u-form series.
    Column(usize),
    /// `χ(θ(t) = q1, θ(t+1) = q2)` of a θ-form series (0-based modes).
    Pair(usize, usize),
}

/// Letters, weights, language and input sources used for estimation.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub alphabet: Alphabet,
    pub weights: LetterWeights,
    pub language: AdmissibleLanguage,
    pub sources: Vec<InputSource>,
    /// Letters dropped because their estimated weight fell below the floor.
    pub unidentifiable: Vec<String>,
}

/// Name of the pair letter `(q1, q2)` (1-based in the name).
pub fn pair_name(q1: usize, q2: usize) -> String {
    format!("{},{}", q1 + 1, q2 + 1)
}

/// Language of chained pairs: `(a,b)(c,e)` is allowed iff `b = c`.
pub fn pair_language(pairs: &[(usize, usize)]) -> AdmissibleLanguage {
    let mut allowed = Vec::new();
    for (i, a) in pairs.iter().enumerate() {
        for (j, b) in pairs.iter().enumerate() {
            if a.1 == b.0 {
                allowed.push((Letter(i as u16), Letter(j as u16)));
            }
        }
    }
    AdmissibleLanguage::from_pairs(pairs.len(), allowed).expect("indices in range")
}

impl Design {
    /// u-form design over the given letters, all read from matching columns.
    pub fn letters(alphabet: Alphabet, weights: LetterWeights, language: AdmissibleLanguage) -> Result<Self> {
        if weights.len() != alphabet.len() || language.alphabet_size() != alphabet.len() {
            return Err(Error::Dimension("weights and language must match the alphabet".into()));
        }
        let sources = (0..alphabet.len()).map(InputSource::Column).collect();
        Ok(Self { alphabet, weights, language, sources, unidentifiable: vec![] })
    }

    /// θ-form design over the given transitions with their probabilities.
    pub fn pairs(pairs: Vec<(usize, usize)>, weights: LetterWeights) -> Result<Self> {
        if weights.len() != pairs.len() || pairs.is_empty() {
            return Err(Error::Dimension("one weight per pair required".into()));
        }
        let alphabet = Alphabet::new(pairs.iter().map(|&(a, b)| pair_name(a, b)))?;
        let language = pair_language(&pairs);
        let sources = pairs.iter().map(|&(a, b)| InputSource::Pair(a, b)).collect();
        Ok(Self { alphabet, weights, language, sources, unidentifiable: vec![] })
    }

    /// Weights estimated from the data. u-form: `p̂_σ = mean u_σ²`, all words admissible.
    /// θ-form: `p̂_(q1,q2) = #(q1→q2) / #q1`, pairs below `10/T` dropped.
    pub fn estimate_from(ts: &TimeSeries) -> Result<Self> {
        let t = ts.len();
        if t < 2 {
            return Err(Error::InsufficientData { needed: 2, got: t });
        }
        let floor = 10.0 / t as f64;
        match ts.inputs() {
            Inputs::Letters { alphabet, u } => {
                let d = alphabet.len();
                let mut p = vec![0.0; d];
                for row in u.chunks(d) {
                    for (s, &x) in row.iter().enumerate() {
                        p[s] += x * x;
                    }
                }
                p.iter_mut().for_each(|x| *x /= t as f64);
                let keep: Vec<usize> = (0..d).filter(|&s| p[s] >= floor).collect();
                if keep.is_empty() {
                    return Err(Error::InsufficientData { needed: 10, got: 0 });
                }
                let names: Vec<String> = keep.iter().map(|&s| alphabet.names()[s].clone()).collect();
                let unidentifiable = (0..d).filter(|s| !keep.contains(s)).map(|s| alphabet.names()[s].clone()).collect();
                Ok(Self {
                    alphabet: Alphabet::new(names)?,
                    weights: LetterWeights::new(keep.iter().map(|&s| p[s]).collect())?,
                    language: AdmissibleLanguage::full(keep.len()),
                    sources: keep.into_iter().map(InputSource::Column).collect(),
                    unidentifiable,
                })
            }
            Inputs::Modes { states, theta } => {
                let nq = *states;
                let mut from = vec![0usize; nq];
                let mut pair = vec![0usize; nq * nq];
                for w in theta.windows(2) {
                    from[w[0] as usize] += 1;
                    pair[w[0] as usize * nq + w[1] as usize] += 1;
                }
                let mut pairs = Vec::new();
                let mut weights = Vec::new();
                let mut unidentifiable = Vec::new();
                for a in 0..nq {
                    for b in 0..nq {
                        let c = pair[a * nq + b];
                        if c == 0 {
                            continue;
                        }
                        let ph = c as f64 / from[a] as f64;
                        if ph >= floor {
                            pairs.push((a, b));
                            weights.push(ph);
                        } else {
                            unidentifiable.push(pair_name(a, b));
                        }
                    }
                }
                let mut d = Self::pairs(pairs, LetterWeights::new(weights)?)?;
                d.unidentifiable = unidentifiable;
                Ok(d)
            }
        }
    }

    fn check_compatible(&self, ts: &TimeSeries) -> Result<()> {
        for src in &self.sources {
            match (src, ts.inputs()) {
                (InputSource::Column(c), Inputs::Letters { alphabet, .. }) if *c < alphabet.len() => {}
                (InputSource::Pair(a, b), Inputs::Modes { states, .. }) if *a < *states && *b < *states => {}
                _ => return Err(Error::InconsistentAlphabet("design does not match the series inputs".into())),
            }
        }
        Ok(())
    }

    /// `u_σ(t)`; pair inputs need `t + 1 < T`.
    fn input(&self, ts: &TimeSeries, s: Letter, t: usize) -> f64 {
        match (self.sources[s.index()], ts.inputs()) {
            (InputSource::Column(c), Inputs::Letters { alphabet, u }) => u[t * alphabet.len() + c],
            (InputSource::Pair(a, b), Inputs::Modes { theta, .. }) => {
                (theta[t] as usize == a && theta[t + 1] as usize == b) as u8 as f64
            }
            _ => 0.0,
        }
    }
}

/// `z_w(t)`; zero for inadmissible words.
pub fn lagged_product(ts: &TimeSeries, design: &Design, w: &Word, t: usize) -> Result<Vec<f64>> {
    design.check_compatible(ts)?;
    let k = w.len();
    if t < k || t >= ts.len() {
        return Err(Error::OutOfRange(format!("t = {t} with |w| = {k} and T = {}", ts.len())));
    }
    let pw = design.weights.path_weight(w, &design.language);
    if pw == 0.0 {
        return Ok(vec![0.0; ts.output_dim()]);
    }
    let s = word_gain(ts, design, w, t) / pw.sqrt();
    Ok(ts.y(t - k).iter().map(|&y| y * s).collect())
}

fn word_gain(ts: &TimeSeries, design: &Design, w: &Word, t: usize) -> f64 {
    let k = w.len();
    let mut g = 1.0;
    for (i, &l) in w.letters().iter().enumerate() {
        g *= design.input(ts, l, t - k + i);
    }
    g
}

fn min_samples(ts: &TimeSeries, lag: usize) -> Result<()> {
    if ts.len() <= lag + 10 {
        return Err(Error::InsufficientData { needed: lag + 10, got: ts.len() });
    }
    Ok(())
}

/// Sample estimate of `Λ_w = E[y(t) z_wᵀ(t)]`.
pub fn estimate_lambda(ts: &TimeSeries, design: &Design, w: &Word) -> Result<Mat> {
    design.check_compatible(ts)?;
    let k = w.len();
    min_samples(ts, k)?;
    let p = ts.output_dim();
    let pw = design.weights.path_weight(w, &design.language);
    let mut acc = vec![0.0; p * p];
    if pw > 0.0 {
        let sq = pw.sqrt();
        for t in k..ts.len() {
            let g = word_gain(ts, design, w, t);
            if g == 0.0 {
                continue;
            }
            accumulate_lambda(&mut acc, ts.y(t), ts.y(t - k), g / sq);
        }
    }
    Ok(finish(acc, p, ts.len() - k))
}

/// Sample estimate of `T_{v,w} = E[z_v(t) z_wᵀ(t)]`; symmetrized when `v = w`.
pub fn estimate_tee(ts: &TimeSeries, design: &Design, v: &Word, w: &Word) -> Result<Mat> {
    design.check_compatible(ts)?;
    let lag = v.len().max(w.len());
    min_samples(ts, lag)?;
    let p = ts.output_dim();
    let pv = design.weights.path_weight(v, &design.language);
    let pw = design.weights.path_weight(w, &design.language);
    let mut acc = vec![0.0; p * p];
    if pv > 0.0 && pw > 0.0 {
        let (sv, sw) = (pv.sqrt(), pw.sqrt());
        for t in lag..ts.len() {
            let gv = word_gain(ts, design, v, t);
            if gv == 0.0 {
                continue;
            }
            let gw = word_gain(ts, design, w, t);
            if gw == 0.0 {
                continue;
            }
            accumulate_tee(&mut acc, ts.y(t - v.len()), gv / sv, ts.y(t - w.len()), gw / sw);
        }
    }
    let m = finish(acc, p, ts.len() - lag);
    Ok(if v == w { sym(&m) } else { m })
}

#[inline]
fn accumulate_lambda(acc: &mut [f64], yt: &[f64], ylag: &[f64], s: f64) {
    let p = yt.len();
    for i in 0..p {
        for j in 0..p {
            acc[i * p + j] += yt[i] * (ylag[j] * s);
        }
    }
}

#[inline]
fn accumulate_tee(acc: &mut [f64], yv: &[f64], sv: f64, yw: &[f64], sw: f64) {
    let p = yv.len();
    for i in 0..p {
        for j in 0..p {
            acc[i * p + j] += (yv[i] * sv) * (yw[j] * sw);
        }
    }
}

fn finish(acc: Vec<f64>, p: usize, count: usize) -> Mat {
    Mat::from_row_slice(p, p, &acc) / count as f64
}

/// Estimated or exact `Λ_w` and `T_{v,w}` with their design.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceTable {
    pub design: Design,
    pub output_dim: usize,
    pub lambda: BTreeMap<Word, Mat>,
    /// Pairs stored with `v ≤ w`.
    pub tee: BTreeMap<(Word, Word), Mat>,
    pub meta: TableMeta,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct TableMeta {
    /// `"exact"` or `"sample"`.
    pub source: String,
    pub horizon: Option<usize>,
    pub lambda_len: usize,
    pub tee_len: usize,
    /// Number of summed terms per lag.
    pub counts: BTreeMap<usize, usize>,
}

impl CovarianceTable {
    pub fn alphabet(&self) -> &Alphabet {
        &self.design.alphabet
    }

    pub fn lambda(&self, w: &Word) -> Result<Mat> {
        if !self.design.language.is_admissible(w) {
            return Ok(Mat::zeros(self.output_dim, self.output_dim));
        }
        self.lambda
            .get(w)
            .cloned()
            .ok_or_else(|| Error::MissingCovariance(format!("Λ for word {:?}", self.design.alphabet.format_word(w))))
    }

    pub fn tee(&self, v: &Word, w: &Word) -> Result<Mat> {
        let lang = &self.design.language;
        if !lang.is_admissible(v) || !lang.is_admissible(w) {
            return Ok(Mat::zeros(self.output_dim, self.output_dim));
        }
        if v <= w {
            if let Some(m) = self.tee.get(&(v.clone(), w.clone())) {
                return Ok(m.clone());
            }
        } else if let Some(m) = self.tee.get(&(w.clone(), v.clone())) {
            return Ok(m.transpose());
        }
        let al = &self.design.alphabet;
        Err(Error::MissingCovariance(format!("T for words {:?}, {:?}", al.format_word(v), al.format_word(w))))
    }
}

impl SeriesSource for CovarianceTable {
    fn alphabet(&self) -> &Alphabet {
        &self.design.alphabet
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn index_labels(&self) -> Vec<String> {
        gbs::pair_index_labels(&self.design.alphabet, self.output_dim)
    }

    /// Column `(j, σ)` of the block for `v` is column `j` of `Λ_{σv}`.
    fn coefficient_block(&self, v: &Word) -> Result<Mat> {
        let p = self.output_dim;
        let d = self.design.alphabet.len();
        let mut out = Mat::zeros(p, p * d);
        for s in self.design.alphabet.letters() {
            let lam = self.lambda(&v.prepend(s))?;
            out.view_mut((0, s.index() * p), (p, p)).copy_from(&lam);
        }
        Ok(out)
    }
}

/// Sparse `g_w(t) = u_σ1(t−k)⋯u_σk(t−1)`: nonzero `(t, g)` in increasing `t`.
struct Products {
    entries: Vec<(u32, f64)>,
}

fn extend(ts: &TimeSeries, design: &Design, parent: &Products, s: Letter) -> Products {
    let last = ts.len() - 1;
    let mut entries = Vec::with_capacity(parent.entries.len() / 2);
    for &(t, g) in &parent.entries {
        let t = t as usize;
        if t >= last {
            break;
        }
        let val = g * design.input(ts, s, t);
        if val != 0.0 {
            entries.push(((t + 1) as u32, val));
        }
    }
    Products { entries }
}

fn lambda_from_products(ts: &TimeSeries, design: &Design, w: &Word, g: &Products) -> Mat {
    let p = ts.output_dim();
    let k = w.len();
    let sq = design.weights.path_weight(w, &design.language).sqrt();
    let mut acc = vec![0.0; p * p];
    for &(t, gv) in &g.entries {
        let t = t as usize;
        accumulate_lambda(&mut acc, ts.y(t), ts.y(t - k), gv / sq);
    }
    finish(acc, p, ts.len() - k)
}

fn tee_from_products(ts: &TimeSeries, design: &Design, v: &Word, gv: &Products, w: &Word, gw: &Products) -> Mat {
    let p = ts.output_dim();
    let lag = v.len().max(w.len()) as u32;
    let sv = design.weights.path_weight(v, &design.language).sqrt();
    let sw = design.weights.path_weight(w, &design.language).sqrt();
    let mut acc = vec![0.0; p * p];
    let (a, b) = (&gv.entries, &gw.entries);
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (ta, tb) = (a[i].0, b[j].0);
        if ta < tb {
            i += 1;
        } else if tb < ta {
            j += 1;
        } else {
            if ta >= lag {
                let t = ta as usize;
                accumulate_tee(&mut acc, ts.y(t - v.len()), a[i].1 / sv, ts.y(t - w.len()), b[j].1 / sw);
            }
            i += 1;
            j += 1;
        }
    }
    let m = finish(acc, p, ts.len() - lag as usize);
    if v == w {
        sym(&m)
    } else {
        m
    }
}

/// Estimate `Λ_w` for admissible `|w| ≤ lambda_len` and `T_{v,w}` for admissible
/// `|v|, |w| ≤ tee_len`. Per-word work runs through [`par::map`].
pub fn estimate_table(ts: &TimeSeries, design: &Design, lambda_len: usize, tee_len: usize, mode: ExecMode) -> Result<CovarianceTable> {
    design.check_compatible(ts)?;
    let deepest = lambda_len.max(tee_len);
    min_samples(ts, deepest)?;
    let lang = &design.language;
    let letters: Vec<Letter> = design.alphabet.letters().collect();
    let root = Products { entries: (0..ts.len() as u32).map(|t| (t, 1.0)).collect() };

    // stored product sequences for all admissible words up to the T horizon
    let stored_len = tee_len;
    let mut stored: Vec<(Word, Products)> = Vec::new();
    let mut layer: Vec<(Word, Products)> = vec![(Word::empty(), root)];
    for _ in 0..stored_len {
        let children: Vec<(Word, Letter)> = layer
            .iter()
            .flat_map(|(w, _)| letters.iter().filter(move |&&s| w.last().is_none_or(|l| lang.allows(l, s))).map(move |&s| (w.clone(), s)))
            .collect();
        let index: HashMap<&Word, usize> = layer.iter().enumerate().map(|(i, (w, _))| (w, i)).collect();
        let next: Vec<(Word, Products)> = par::map(mode, &children, |(w, s)| (w.push(*s), extend(ts, design, &layer[index[w]].1, *s)));
        stored.extend(layer.drain(..).filter(|(w, _)| !w.is_empty()));
        layer = next;
    }
    stored.extend(layer.into_iter().filter(|(w, _)| !w.is_empty()));
    stored.sort_by(|a, b| a.0.cmp(&b.0));

    // Λ for stored words, then depth-first below the deepest stored layer
    let mut lambda: BTreeMap<Word, Mat> = BTreeMap::new();
    let stored_lams: Vec<Mat> = par::map(mode, &stored, |(w, g)| lambda_from_products(ts, design, w, g));
    for ((w, _), m) in stored.iter().zip(stored_lams) {
        if w.len() <= lambda_len {
            lambda.insert(w.clone(), m);
        }
    }
    if lambda_len > stored_len {
        let roots: Vec<usize> = if stored_len == 0 {
            vec![usize::MAX]
        } else {
            (0..stored.len()).filter(|&i| stored[i].0.len() == stored_len).collect()
        };
        let deep: Vec<Vec<(Word, Mat)>> = par::map(mode, &roots, |&i| {
            let mut out = Vec::new();
            let root_products;
            let (w0, g0) = if i == usize::MAX {
                root_products = Products { entries: (0..ts.len() as u32).map(|t| (t, 1.0)).collect() };
                (Word::empty(), &root_products)
            } else {
                (stored[i].0.clone(), &stored[i].1)
            };
            descend(ts, design, &letters, &w0, g0, lambda_len, &mut out);
            out
        });
        for (w, m) in deep.into_iter().flatten() {
            lambda.insert(w, m);
        }
    }

    // T for all stored pairs v ≤ w with both lengths ≤ tee_len
    let tee_words: Vec<usize> = (0..stored.len()).filter(|&i| stored[i].0.len() <= tee_len).collect();
    let pairs: Vec<(usize, usize)> = tee_words
        .iter()
        .enumerate()
        .flat_map(|(a, &i)| tee_words[a..].iter().map(move |&j| (i, j)))
        .collect();
    let tees: Vec<Mat> = par::map(mode, &pairs, |&(i, j)| tee_from_products(ts, design, &stored[i].0, &stored[i].1, &stored[j].0, &stored[j].1));
    let tee: BTreeMap<(Word, Word), Mat> =
        pairs.iter().zip(tees).map(|(&(i, j), m)| ((stored[i].0.clone(), stored[j].0.clone()), m)).collect();

    let counts = (1..=deepest).map(|k| (k, ts.len() - k)).collect();
    Ok(CovarianceTable {
        design: design.clone(),
        output_dim: ts.output_dim(),
        lambda,
        tee,
        meta: TableMeta { source: "sample".into(), horizon: Some(ts.len()), lambda_len, tee_len, counts },
    })
}

fn descend(ts: &TimeSeries, design: &Design, letters: &[Letter], w: &Word, g: &Products, max_len: usize, out: &mut Vec<(Word, Mat)>) {
    if w.len() >= max_len {
        return;
    }
    for &s in letters {
        if let Some(l) = w.last() {
            if !design.language.allows(l, s) {
                continue;
            }
        }
        let child = w.push(s);
        let gc = extend(ts, design, g, s);
        out.push((child.clone(), lambda_from_products(ts, design, &child, &gc)));
        descend(ts, design, letters, &child, &gc, max_len, out);
    }
}

/// Exact table of a GBS: `Λ_{σv} = C Ã_v B_σ` from the associated representation
/// and `T_{v,w}` from the covariance recursion
/// (`T_{v'σ,w'σ} = T_{v',w'}`, `T_{v'σ,σ} = Λ_{v'}ᵀ`, different last letters give 0).
pub fn exact_covariance_table(model: &GbsModel, lambda_len: usize, tee_len: usize) -> Result<CovarianceTable> {
    let pcov = gbs::solve_state_covariance(model)?;
    let rep = gbs::representation_from_blocks(
        model.alphabet(),
        &gbs::scaled_a(model.a(), model.weights()),
        &gbs::input_blocks(model, &pcov),
        model.c(),
    );
    let tdiag = gbs::exact_tee_diagonal(model, &pcov);
    let design = Design::letters(model.alphabet().clone(), model.weights().clone(), model.language().clone())?;
    exact_table_from_parts(&rep, &tdiag, design, lambda_len, tee_len)
}

/// Exact table from a scaled representation (index set `(j,σ)`) and `T_σσ`.
pub fn exact_table_from_parts(rep: &Representation, tdiag: &[Mat], design: Design, lambda_len: usize, tee_len: usize) -> Result<CovarianceTable> {
    let p = rep.output_dim();
    let n = rep.dim();
    let lang = design.language.clone();
    let bm = rep.b_matrix();
    let mut lambda = BTreeMap::new();
    for w in lang.words_up_to(lambda_len.max(tee_len)).into_iter().skip(1) {
        let s = w.first().expect("non-empty");
        let rest = w.suffix();
        let m = rep.c() * word_product(rep.a_all(), n, &rest) * bm.columns(s.index() * p, p);
        lambda.insert(w, m);
    }
    let words: Vec<Word> = lang.words_up_to(tee_len).into_iter().skip(1).collect();
    let mut tee = BTreeMap::new();
    for (i, v) in words.iter().enumerate() {
        for w in &words[i..] {
            tee.insert((v.clone(), w.clone()), exact_tee(v, w, &lambda, tdiag, p));
        }
    }
    let lambda = lambda.into_iter().filter(|(w, _)| w.len() <= lambda_len).collect();
    Ok(CovarianceTable {
        design,
        output_dim: p,
        lambda,
        tee,
        meta: TableMeta { source: "exact".into(), horizon: None, lambda_len, tee_len, counts: BTreeMap::new() },
    })
}

fn exact_tee(v: &Word, w: &Word, lambda: &BTreeMap<Word, Mat>, tdiag: &[Mat], p: usize) -> Mat {
    let (mut v, mut w) = (v.clone(), w.clone());
    loop {
        if v.last() != w.last() {
            return Mat::zeros(p, p);
        }
        match (v.len(), w.len()) {
            (1, 1) => return tdiag[v.letters()[0].index()].clone(),
            (_, 1) => return lambda[&v.prefix()].transpose(),
            (1, _) => return lambda[&w.prefix()].clone(),
            _ => {
                v = v.prefix();
                w = w.prefix();
            }
        }
    }
}

/// Settings for the data-driven realization.
#[derive(Clone, Debug)]
pub struct RealizeConfig {
    /// Target state dimension.
    pub dim: usize,
    /// Past window: words of length `≤ past` enter the finite-past Gram matrix.
    pub past: usize,
    pub rank_tol: f64,
    /// Pinned Hankel selection; chosen by pivoting when `None`.
    pub selection: Option<Selection>,
    /// Ridge added to the Gram matrix diagonal (0 = off).
    pub ridge: f64,
    pub mode: ExecMode,
}

impl RealizeConfig {
    pub fn new(dim: usize, past: usize) -> Self {
        Self { dim, past, rank_tol: DEFAULT_RANK_TOL, selection: None, ridge: 0.0, mode: ExecMode::Auto }
    }
}

/// Numerical diagnostics of a realization run.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub hankel_singular_values: Vec<f64>,
    pub selection: Selection,
    pub selection_condition: f64,
    pub gram_singular_values: Vec<f64>,
    pub gram_condition: f64,
    /// Gram coordinates removed because they are identically zero.
    pub pruned: usize,
    pub sample_counts: BTreeMap<usize, usize>,
    pub unidentifiable: Vec<String>,
}

fn condition(sv: &[f64]) -> f64 {
    match (sv.first(), sv.last()) {
        (Some(&a), Some(&b)) if b > 0.0 => a / b,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Hankel block `H_{row_len, col_len}` of the table's series family.
pub fn build_empirical_hankel(table: &CovarianceTable, row_len: usize, col_len: usize) -> Result<HankelBlock> {
    build_hankel(table, row_len, col_len)
}

/// Weak realization from a covariance table.
pub fn realize_from_table(table: &CovarianceTable, cfg: &RealizeConfig) -> Result<(WeakRealization, Diagnostics)> {
    let n = cfg.dim;
    if cfg.past == 0 {
        return Err(Error::Invalid("past window must be at least 1".into()));
    }
    let design = &table.design;
    let p = table.output_dim;
    let h = build_empirical_hankel(table, n + 1, n)?;
    let sel = match &cfg.selection {
        Some(s) => s.clone(),
        None => choose_selection_within(&h, n, n, n, cfg.rank_tol)?,
    };
    let rep = ho_kalman(&h, &sel, cfg.rank_tol)?;
    let alpha_ix: Vec<usize> = sel.rows.iter().filter_map(|k| h.row_of(k)).collect();
    let beta_ix: Vec<usize> = sel.cols.iter().filter_map(|k| h.col_of(k)).collect();
    let sel_sv = singular_values(&h.matrix.select_rows(&alpha_ix).select_columns(&beta_ix));

    let words: Vec<Word> = design.language.words_up_to(cfg.past).into_iter().skip(1).collect();
    let m = words.len() * p;
    let mut gram = Mat::zeros(m, m);
    for (i, v) in words.iter().enumerate() {
        for (j, w) in words.iter().enumerate().skip(i) {
            let blk = table.tee(v, w)?;
            gram.view_mut((i * p, j * p), (p, p)).copy_from(&blk);
            if i != j {
                gram.view_mut((j * p, i * p), (p, p)).copy_from(&blk.transpose());
            }
        }
    }
    let bm = rep.b_matrix();
    let g: Vec<Mat> = (0..design.alphabet.len()).map(|s| bm.columns(s * p, p).into_owned()).collect();
    let mut lam = Mat::zeros(n, m);
    for (i, w) in words.iter().enumerate() {
        let s = w.first().expect("non-empty");
        let blk = word_product(rep.a_all(), n, &w.suffix()) * &g[s.index()];
        lam.view_mut((0, i * p), (n, p)).copy_from(&blk);
    }
    let keep: Vec<usize> = (0..m).filter(|&i| gram[(i, i)] != 0.0).collect();
    let pruned = m - keep.len();
    let mut gram_k = gram.select_rows(&keep).select_columns(&keep);
    let lam_k = lam.select_columns(&keep);
    if cfg.ridge > 0.0 {
        for i in 0..gram_k.nrows() {
            gram_k[(i, i)] += cfg.ridge;
        }
    }
    let gram_sv = singular_values(&gram_k);
    let gram_cond = condition(&gram_sv);
    if let (Some(&a), Some(&b)) = (gram_sv.first(), gram_sv.last()) {
        if !(b > cfg.rank_tol * a) {
            return Err(Error::SingularGram(format!("condition number {gram_cond:.3e}")));
        }
    }
    let chol = sym(&gram_k).cholesky().ok_or_else(|| Error::SingularGram("not positive definite".into()))?;
    let alpha = chol.solve(&lam_k.transpose()).transpose();

    let mut a = Vec::new();
    let mut k = Vec::new();
    let mut pc = Vec::new();
    let mut q = Vec::new();
    for s in design.alphabet.letters() {
        let ws = design.weights.get(s);
        let mask: Vec<f64> = keep
            .iter()
            .map(|&i| {
                let w = &words[i / p];
                design.language.allows(w.last().expect("non-empty"), s) as u8 as f64
            })
            .collect();
        let mut masked = gram_k.clone();
        for i in 0..masked.nrows() {
            for j in 0..masked.ncols() {
                masked[(i, j)] *= mask[i] * mask[j];
            }
        }
        let ps = sym(&(&alpha * masked * alpha.transpose() * ws));
        let tss = table.tee(&Word::single(s), &Word::single(s))?;
        let (ks, qs) = gain_for(&g[s.index()], &rep.a_all()[s.index()], &ps, rep.c(), &tss, ws)
            .map_err(|e| match e {
                Error::InnovationNotFullRank { min_eig, .. } => {
                    Error::InnovationNotFullRank { letter: design.alphabet.name(s).to_string(), min_eig }
                }
                other => other,
            })?;
        a.push(&rep.a_all()[s.index()] / ws.sqrt());
        k.push(ks);
        pc.push(ps);
        q.push(qs);
    }
    let wr = WeakRealization {
        alphabet: design.alphabet.clone(),
        weights: design.weights.clone(),
        language: design.language.clone(),
        a,
        k,
        p: pc,
        q,
        c: rep.c().clone(),
        d: Mat::identity(p, p),
    };
    let diag = Diagnostics {
        hankel_singular_values: h.singular_values(),
        selection: sel,
        selection_condition: condition(&sel_sv),
        gram_singular_values: gram_sv,
        gram_condition: gram_cond,
        pruned,
        sample_counts: table.meta.counts.clone(),
        unidentifiable: design.unidentifiable.clone(),
    };
    Ok((wr, diag))
}

fn gain_for(g: &Mat, a: &Mat, pc: &Mat, c: &Mat, tss: &Mat, w: f64) -> Result<(Mat, Mat)> {
    let k = gbs::innovation_gain(g, a, pc, c, tss, w)?;
    let q = sym(&(tss * w - c * pc * c.transpose()));
    Ok((k, q))
}

/// Estimate the covariances from data and realize: `Λ` up to length `2n+2`, `T` up to `past`.
pub fn realize_from_data(ts: &TimeSeries, design: &Design, cfg: &RealizeConfig) -> Result<(WeakRealization, Diagnostics)> {
    let table = estimate_table(ts, design, 2 * cfg.dim + 2, cfg.past, cfg.mode)?;
    realize_from_table(&table, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbs::tests::scalar;
    use crate::gbs::{simulate, InputProcess};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn linear_design() -> Design {
        Design::letters(Alphabet::indexed(1), LetterWeights::new(vec![1.0]).unwrap(), AdmissibleLanguage::full(1)).unwrap()
    }

    fn series(y: Vec<f64>, u: Vec<f64>, d: usize) -> TimeSeries {
        TimeSeries::new(1, y, Inputs::Letters { alphabet: Alphabet::indexed(d), u }).unwrap()
    }

    #[test]
    fn lagged_products() {
        let ts = series((0..20).map(|x| x as f64).collect(), vec![1.0; 20], 1);
        let z = lagged_product(&ts, &linear_design(), &Word::from_indices(&[0]), 5).unwrap();
        assert_eq!(z, vec![4.0]);
        assert!(lagged_product(&ts, &linear_design(), &Word::from_indices(&[0, 0]), 1).is_err());

        let ts2 = series((0..20).map(|x| x as f64).collect(), vec![0.5; 40], 2);
        let d2 = Design::letters(Alphabet::indexed(2), LetterWeights::new(vec![0.25, 0.25]).unwrap(), AdmissibleLanguage::full(2)).unwrap();
        let z = lagged_product(&ts2, &d2, &Word::from_indices(&[0, 1]), 7).unwrap();
        assert_eq!(z, vec![5.0]);
    }

    #[test]
    fn indicator_kills_product() {
        let ts = TimeSeries::new(1, vec![1.0; 6], Inputs::Modes { states: 2, theta: vec![0, 1, 1, 0, 0, 1] }).unwrap();
        let d = Design::pairs(vec![(0, 1), (1, 0)], LetterWeights::new(vec![0.5, 0.5]).unwrap()).unwrap();
        // θ(2) = 1 ≠ 0, so (1,2) at t−1 = 2 is off
        assert_eq!(lagged_product(&ts, &d, &Word::from_indices(&[0]), 3).unwrap(), vec![0.0]);
        assert_relative_eq!(lagged_product(&ts, &d, &Word::from_indices(&[0]), 1).unwrap()[0], 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn constant_data() {
        let ts = series(vec![3.0; 50], vec![1.0; 50], 1);
        let l = estimate_lambda(&ts, &linear_design(), &Word::from_indices(&[0])).unwrap();
        assert_eq!(l[(0, 0)], 9.0);
        let short = series(vec![3.0; 5], vec![1.0; 5], 1);
        assert!(matches!(estimate_lambda(&short, &linear_design(), &Word::from_indices(&[0])), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn white_noise_lambda_small() {
        let m = scalar(0.0, 0.0, 0.0, 1.0, 1.0);
        let ts = simulate(&m, &InputProcess::Linear, 1_000_000, Some(0), 3).unwrap();
        let l = estimate_lambda(&ts, &linear_design(), &Word::from_indices(&[0])).unwrap();
        assert!(l[(0, 0)].abs() < 4e-3);
    }

    #[test]
    fn table_matches_direct_estimators_bitwise() {
        let m = crate::jmls::tests::two_mode_scalar();
        let ts = crate::jmls::simulate_gjmls(&m, 3000, Some(50), 1).unwrap();
        let design = Design::estimate_from(&ts).unwrap();
        for mode in [ExecMode::Serial, ExecMode::Auto] {
            let table = estimate_table(&ts, &design, 4, 2, mode).unwrap();
            for (w, lam) in &table.lambda {
                assert_eq!(lam, &estimate_lambda(&ts, &design, w).unwrap());
            }
            for ((v, w), t) in &table.tee {
                assert_eq!(t, &estimate_tee(&ts, &design, v, w).unwrap());
                if v.last() != w.last() {
                    assert_eq!(t.amax(), 0.0);
                }
            }
            assert_eq!(table.lambda.len(), design.language.words_up_to(4).len() - 1);
        }
    }

    #[test]
    fn exact_table_hankel_matches_representation() {
        let m = scalar(0.5, 1.0, 1.0, 1.0, 1.0);
        let table = exact_covariance_table(&m, 5, 2).unwrap();
        let rep = gbs::associated_representation(&m).unwrap();
        let h1 = build_empirical_hankel(&table, 2, 2).unwrap();
        let h2 = build_hankel(&rep, 2, 2).unwrap();
        assert_relative_eq!(h1.matrix, h2.matrix, epsilon = 1e-15);
        assert_relative_eq!(table.tee(&Word::from_indices(&[0]), &Word::from_indices(&[0])).unwrap()[(0, 0)], 7.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn hankel_zero_blocks_for_inadmissible_words() {
        let l = AdmissibleLanguage::from_pairs(2, []).unwrap();
        let mm = |x| Mat::from_element(1, 1, x);
        let model = GbsModel::new(
            Alphabet::indexed(2),
            vec![mm(0.0), mm(0.0)],
            vec![mm(1.0), mm(1.0)],
            mm(1.0),
            mm(1.0),
            LetterWeights::new(vec![0.5, 0.5]).unwrap(),
            vec![mm(0.5), mm(0.5)],
            l,
        )
        .unwrap();
        let table = exact_covariance_table(&model, 3, 1).unwrap();
        let h = build_empirical_hankel(&table, 1, 1).unwrap();
        for (i, (u, _)) in h.rows.iter().enumerate() {
            for (j, (v, _)) in h.cols.iter().enumerate() {
                if !u.is_empty() && !v.is_empty() {
                    assert_eq!(h.matrix[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn exact_scalar_realization() {
        let m = scalar(0.5, 1.0, 1.0, 1.0, 1.0);
        let table = exact_covariance_table(&m, 4, 20).unwrap();
        let (w, diag) = realize_from_table(&table, &RealizeConfig::new(1, 20)).unwrap();
        // bring to the generator's coordinates (x̃ = c̃·x)
        let t = Mat::from_element(1, 1, 1.0 / w.c[(0, 0)]);
        let w = w.transform(&t.try_inverse().unwrap()).unwrap();
        assert_relative_eq!(w.a[0][(0, 0)], 0.5, epsilon = 1e-8);
        assert_relative_eq!(w.k[0][(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(w.c[(0, 0)], 1.0, epsilon = 1e-8);
        assert_relative_eq!(w.p[0][(0, 0)], 4.0 / 3.0, epsilon = 1e-8);
        assert_relative_eq!(w.q[0][(0, 0)], 1.0, epsilon = 1e-8);
        assert_eq!(diag.pruned, 0);
        let wide = exact_covariance_table(&m, 6, 3).unwrap();
        assert!(matches!(realize_from_table(&wide, &RealizeConfig::new(2, 3)), Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn realization_is_deterministic() {
        let m = scalar(0.5, 1.0, 1.0, 1.0, 1.0);
        let ts = simulate(&m, &InputProcess::Linear, 20_000, None, 12).unwrap();
        let cfg = RealizeConfig::new(1, 3);
        let a = realize_from_data(&ts, &linear_design(), &cfg).unwrap();
        let b = realize_from_data(&ts, &linear_design(), &RealizeConfig { mode: ExecMode::Serial, ..cfg }).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn tee_diagonal_symmetric_psd(seed in any::<u64>()) {
            let m = crate::jmls::tests::two_mode_scalar();
            let ts = crate::jmls::simulate_gjmls(&m, 500, Some(20), seed).unwrap();
            let design = Design::estimate_from(&ts).unwrap();
            let table = estimate_table(&ts, &design, 2, 2, ExecMode::Serial).unwrap();
            for ((v, w), t) in &table.tee {
                if v == w {
                    prop_assert_eq!(t, &t.transpose());
                    prop_assert!(crate::linalg::min_sym_eigenvalue(t) >= -1e-12);
                }
            }
        }
    }
}
