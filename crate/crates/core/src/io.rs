//! JSON and CSV formats.
//!
//! Matrices are row-major nested arrays. Letters and words are written by name,
//! words joined with `.`; modes are 1-based.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::estimate::{CovarianceTable, Design, Diagnostics, InputSource, Inputs, TableMeta, TimeSeries};
use crate::gbs::{GbsModel, WeakRealization};
use crate::jmls::{GjmlsModel, MarkovChain};
use crate::linalg::{Mat, Vector};
use crate::repr::{HankelKey, Representation, Selection};
use crate::words::{AdmissibleLanguage, Alphabet, Letter, LetterWeights};

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &Mat) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &Rows, r: usize, c: usize, what: &str) -> Result<Mat> {
    if rows.len() != r || rows.iter().any(|x| x.len() != c) {
        let got_c = rows.first().map_or(0, |x| x.len());
        return Err(Error::Dimension(format!("{what} is {}x{got_c}, expected {r}x{c}", rows.len())));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Invalid(format!("{what} has a non-finite entry")));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

/// Shape of a nested array whose row count is known.
fn cols_of(rows: &Rows, fallback: usize) -> usize {
    rows.first().map_or(fallback, |x| x.len())
}

fn keyed<'a, T>(map: &'a IndexMap<String, T>, key: &str, what: &str) -> Result<&'a T> {
    map.get(key).ok_or_else(|| Error::Invalid(format!("{what} has no entry for {key:?}")))
}

fn no_extra_keys<T>(map: &IndexMap<String, T>, allowed: &[String], what: &str) -> Result<()> {
    match map.keys().find(|k| !allowed.contains(k)) {
        Some(k) => Err(Error::InconsistentAlphabet(format!("{what} has unknown key {k:?}"))),
        None => Ok(()),
    }
}

#[derive(Serialize, Deserialize)]
struct RepJson {
    alphabet: Vec<String>,
    dim: usize,
    #[serde(rename = "A")]
    a: IndexMap<String, Rows>,
    #[serde(rename = "B")]
    b: IndexMap<String, Vec<f64>>,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<usize>,
}

pub fn representation_to_json(rep: &Representation) -> Value {
    let al = rep.alphabet();
    let j = RepJson {
        alphabet: al.names().to_vec(),
        dim: rep.dim(),
        a: al.letters().map(|l| (al.name(l).to_string(), to_rows(rep.a(l)))).collect(),
        b: rep.b_labels().iter().zip(rep.b_all()).map(|(k, v)| (k.clone(), v.iter().copied().collect())).collect(),
        c: to_rows(rep.c()),
        p: Some(rep.output_dim()),
    };
    serde_json::to_value(j).expect("plain data")
}

pub fn representation_from_json(v: &Value) -> Result<Representation> {
    let j: RepJson = serde_json::from_value(v.clone())?;
    let alphabet = Alphabet::new(j.alphabet)?;
    let n = j.dim;
    let p = j.p.unwrap_or(j.c.len());
    no_extra_keys(&j.a, alphabet.names(), "A")?;
    let a = alphabet
        .names()
        .iter()
        .map(|s| from_rows(keyed(&j.a, s, "A")?, n, n, &format!("A[{s}]")))
        .collect::<Result<Vec<_>>>()?;
    let mut labels = Vec::new();
    let mut b = Vec::new();
    for (k, col) in &j.b {
        if col.len() != n {
            return Err(Error::Dimension(format!("B[{k}] has {} entries, expected {n}", col.len())));
        }
        labels.push(k.clone());
        b.push(Vector::from_column_slice(col));
    }
    let c = from_rows(&j.c, p, n, "C")?;
    Representation::new(alphabet, a, b, labels, c)
}

#[derive(Serialize, Deserialize)]
struct GbsJson {
    alphabet: Vec<String>,
    dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    m: Option<usize>,
    weights: IndexMap<String, f64>,
    #[serde(rename = "A")]
    a: IndexMap<String, Rows>,
    #[serde(rename = "K")]
    k: IndexMap<String, Rows>,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "D")]
    d: Rows,
    #[serde(rename = "Q")]
    q: IndexMap<String, Rows>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pcov: Option<IndexMap<String, Rows>>,
    /// Allowed consecutive letter pairs; absent means every word is admissible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    language_pairs: Option<Vec<(String, String)>>,
}

fn language_to_json(al: &Alphabet, lang: &AdmissibleLanguage) -> Option<Vec<(String, String)>> {
    (!lang.is_full()).then(|| lang.pairs().into_iter().map(|(a, b)| (al.name(a).to_string(), al.name(b).to_string())).collect())
}

fn language_from_json(al: &Alphabet, pairs: &Option<Vec<(String, String)>>) -> Result<AdmissibleLanguage> {
    match pairs {
        None => Ok(AdmissibleLanguage::full(al.len())),
        Some(ps) => {
            let letters: Vec<(Letter, Letter)> = ps.iter().map(|(a, b)| Ok((name_letter(al, a)?, name_letter(al, b)?))).collect::<Result<_>>()?;
            AdmissibleLanguage::from_pairs(al.len(), letters)
        }
    }
}

fn name_letter(al: &Alphabet, s: &str) -> Result<Letter> {
    al.letter(s).ok_or_else(|| Error::InconsistentAlphabet(format!("unknown letter {s:?}")))
}

#[allow(clippy::too_many_arguments)]
fn gbs_json(
    al: &Alphabet,
    weights: &LetterWeights,
    lang: &AdmissibleLanguage,
    a: &[Mat],
    k: &[Mat],
    c: &Mat,
    d: &Mat,
    q: &[Mat],
    pcov: Option<&[Mat]>,
) -> Value {
    let per = |ms: &[Mat]| -> IndexMap<String, Rows> { al.names().iter().cloned().zip(ms.iter().map(to_rows)).collect() };
    let j = GbsJson {
        alphabet: al.names().to_vec(),
        dim: c.ncols(),
        p: Some(c.nrows()),
        m: Some(d.ncols()),
        weights: al.names().iter().cloned().zip(weights.as_slice().iter().copied()).collect(),
        a: per(a),
        k: per(k),
        c: to_rows(c),
        d: to_rows(d),
        q: per(q),
        pcov: pcov.map(per),
        language_pairs: language_to_json(al, lang),
    };
    serde_json::to_value(j).expect("plain data")
}

pub fn gbs_to_json(model: &GbsModel) -> Value {
    gbs_json(model.alphabet(), model.weights(), model.language(), model.a(), model.k(), model.c(), model.d(), model.q(), None)
}

pub fn weak_realization_to_json(w: &WeakRealization) -> Value {
    gbs_json(&w.alphabet, &w.weights, &w.language, &w.a, &w.k, &w.c, &w.d, &w.q, Some(&w.p))
}

struct GbsParts {
    alphabet: Alphabet,
    weights: LetterWeights,
    language: AdmissibleLanguage,
    a: Vec<Mat>,
    k: Vec<Mat>,
    c: Mat,
    d: Mat,
    q: Vec<Mat>,
    pcov: Option<Vec<Mat>>,
}

fn gbs_parts(v: &Value) -> Result<GbsParts> {
    let j: GbsJson = serde_json::from_value(v.clone())?;
    let alphabet = Alphabet::new(j.alphabet)?;
    let n = j.dim;
    let p = j.p.unwrap_or(j.c.len());
    let m = j.m.unwrap_or_else(|| cols_of(&j.d, 0));
    let names = alphabet.names().to_vec();
    for (map_name, keys) in [("A", j.a.keys()), ("K", j.k.keys()), ("Q", j.q.keys())] {
        if let Some(k) = keys.into_iter().find(|k| !names.contains(k)) {
            return Err(Error::InconsistentAlphabet(format!("{map_name} has unknown key {k:?}")));
        }
    }
    let per = |map: &IndexMap<String, Rows>, r: usize, c: usize, what: &str| -> Result<Vec<Mat>> {
        names.iter().map(|s| from_rows(keyed(map, s, what)?, r, c, &format!("{what}[{s}]"))).collect()
    };
    let weights = LetterWeights::new(names.iter().map(|s| keyed(&j.weights, s, "weights").copied()).collect::<Result<_>>()?)?;
    let language = language_from_json(&alphabet, &j.language_pairs)?;
    Ok(GbsParts {
        a: per(&j.a, n, n, "A")?,
        k: per(&j.k, n, m, "K")?,
        c: from_rows(&j.c, p, n, "C")?,
        d: from_rows(&j.d, p, m, "D")?,
        q: per(&j.q, m, m, "Q")?,
        pcov: j.pcov.as_ref().map(|x| per(x, n, n, "P")).transpose()?,
        alphabet,
        weights,
        language,
    })
}

pub fn gbs_from_json(v: &Value) -> Result<GbsModel> {
    let g = gbs_parts(v)?;
    GbsModel::new(g.alphabet, g.a, g.k, g.c, g.d, g.weights, g.q, g.language)
}

pub fn weak_realization_from_json(v: &Value) -> Result<WeakRealization> {
    let g = gbs_parts(v)?;
    let p = g.pcov.ok_or_else(|| Error::Invalid("weak realization needs state covariances \"P\"".into()))?;
    Ok(WeakRealization { alphabet: g.alphabet, weights: g.weights, language: g.language, a: g.a, k: g.k, p, q: g.q, c: g.c, d: g.d })
}

#[derive(Serialize, Deserialize)]
struct GjmlsJson {
    states: usize,
    #[serde(rename = "P")]
    transition: Rows,
    dims: Vec<usize>,
    #[serde(rename = "M")]
    m: IndexMap<String, Rows>,
    #[serde(rename = "B")]
    b: IndexMap<String, Rows>,
    #[serde(rename = "C")]
    c: IndexMap<String, Rows>,
    #[serde(rename = "D")]
    d: IndexMap<String, Rows>,
    #[serde(rename = "Q")]
    q: IndexMap<String, Rows>,
}

pub fn gjmls_to_json(h: &GjmlsModel) -> Value {
    let nq = h.modes();
    let mut m = IndexMap::new();
    let mut b = IndexMap::new();
    for (q1, q2) in h.chain().positive_pairs() {
        let key = crate::estimate::pair_name(q1, q2);
        m.insert(key.clone(), to_rows(h.m(q1, q2)));
        b.insert(key, to_rows(h.b(q1, q2)));
    }
    let per = |ms: Vec<&Mat>| -> IndexMap<String, Rows> { ms.into_iter().enumerate().map(|(q, x)| ((q + 1).to_string(), to_rows(x))).collect() };
    let j = GjmlsJson {
        states: nq,
        transition: to_rows(h.chain().transition()),
        dims: h.dims().to_vec(),
        m,
        b,
        c: per((0..nq).map(|q| h.c(q)).collect()),
        d: per((0..nq).map(|q| h.d(q)).collect()),
        q: per((0..nq).map(|q| h.q(q)).collect()),
    };
    serde_json::to_value(j).expect("plain data")
}

pub fn gjmls_from_json(v: &Value) -> Result<GjmlsModel> {
    let j: GjmlsJson = serde_json::from_value(v.clone())?;
    let nq = j.states;
    if j.dims.len() != nq {
        return Err(Error::Dimension(format!("{} dims for {nq} states", j.dims.len())));
    }
    let chain = MarkovChain::new(from_rows(&j.transition, nq, nq, "P")?)?;
    let mode = |q: usize| (q + 1).to_string();
    let p = j.c.get("1").map_or(0, |r| r.len());
    let m = j.d.get("1").map_or(0, |r| cols_of(r, 0));
    let pair_keys: Vec<String> = (0..nq).flat_map(|a| (0..nq).map(move |b| crate::estimate::pair_name(a, b))).collect();
    let mode_keys: Vec<String> = (0..nq).map(mode).collect();
    no_extra_keys(&j.m, &pair_keys, "M")?;
    no_extra_keys(&j.b, &pair_keys, "B")?;
    for (what, map) in [("C", &j.c), ("D", &j.d), ("Q", &j.q)] {
        no_extra_keys(map, &mode_keys, what)?;
    }
    let mut mm = Vec::new();
    let mut bb = Vec::new();
    for q1 in 0..nq {
        for q2 in 0..nq {
            let key = crate::estimate::pair_name(q1, q2);
            let (r, c) = (j.dims[q2], j.dims[q1]);
            let required = chain.prob(q1, q2) > 0.0;
            let get = |map: &IndexMap<String, Rows>, cols: usize, what: &str| -> Result<Mat> {
                match map.get(&key) {
                    Some(rows) => from_rows(rows, r, cols, &format!("{what}[{key}]")),
                    None if !required => Ok(Mat::zeros(r, cols)),
                    None => Err(Error::Invalid(format!("{what} has no entry for transition {key:?}"))),
                }
            };
            mm.push(get(&j.m, c, "M")?);
            bb.push(get(&j.b, m, "B")?);
        }
    }
    let per = |map: &IndexMap<String, Rows>, r: &dyn Fn(usize) -> usize, c: &dyn Fn(usize) -> usize, what: &str| -> Result<Vec<Mat>> {
        (0..nq).map(|q| from_rows(keyed(map, &mode(q), what)?, r(q), c(q), &format!("{what}[{}]", q + 1))).collect()
    };
    let c = per(&j.c, &|_| p, &|q| j.dims[q], "C")?;
    let d = per(&j.d, &|_| p, &|_| m, "D")?;
    let q = per(&j.q, &|_| m, &|_| m, "Q")?;
    GjmlsModel::new(chain, j.dims, mm, bb, c, d, q)
}

/// Any of the model files, told apart by their keys.
#[derive(Clone, Debug)]
pub enum Model {
    Representation(Representation),
    Gbs(GbsModel),
    Weak(WeakRealization),
    Gjmls(GjmlsModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Representation(_) => "representation",
            Model::Gbs(_) => "gbs",
            Model::Weak(_) => "weak_realization",
            Model::Gjmls(_) => "gjmls",
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Model::Representation(r) => representation_to_json(r),
            Model::Gbs(g) => gbs_to_json(g),
            Model::Weak(w) => weak_realization_to_json(w),
            Model::Gjmls(h) => gjmls_to_json(h),
        }
    }
}

/// `"states"` marks a GJMLS, `"K"` a GBS (a weak realization if it also carries `"P"`).
pub fn model_from_json(v: &Value) -> Result<Model> {
    let obj = v.as_object().ok_or_else(|| Error::Invalid("model file must hold a JSON object".into()))?;
    if obj.contains_key("states") {
        Ok(Model::Gjmls(gjmls_from_json(v)?))
    } else if obj.contains_key("K") {
        if obj.contains_key("P") {
            Ok(Model::Weak(weak_realization_from_json(v)?))
        } else {
            Ok(Model::Gbs(gbs_from_json(v)?))
        }
    } else {
        Ok(Model::Representation(representation_from_json(v)?))
    }
}

pub fn parse_json(text: &str) -> Result<Value> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_json_file(path: &std::path::Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)?;
    parse_json(&text)
}

pub fn write_json_file(path: &std::path::Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SourceJson {
    Column(usize),
    Pair(usize, usize),
}

#[derive(Serialize, Deserialize)]
struct DesignJson {
    alphabet: Vec<String>,
    weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    language_pairs: Option<Vec<(String, String)>>,
    sources: Vec<SourceJson>,
    #[serde(default)]
    unidentifiable: Vec<String>,
}

fn design_to_json(d: &Design) -> DesignJson {
    DesignJson {
        alphabet: d.alphabet.names().to_vec(),
        weights: d.weights.as_slice().to_vec(),
        language_pairs: language_to_json(&d.alphabet, &d.language),
        sources: d
            .sources
            .iter()
            .map(|s| match *s {
                InputSource::Column(c) => SourceJson::Column(c),
                InputSource::Pair(a, b) => SourceJson::Pair(a + 1, b + 1),
            })
            .collect(),
        unidentifiable: d.unidentifiable.clone(),
    }
}

fn design_from_json(j: DesignJson) -> Result<Design> {
    let alphabet = Alphabet::new(j.alphabet)?;
    let language = language_from_json(&alphabet, &j.language_pairs)?;
    let sources = j
        .sources
        .into_iter()
        .map(|s| match s {
            SourceJson::Column(c) => Ok(InputSource::Column(c)),
            SourceJson::Pair(a, b) if a >= 1 && b >= 1 => Ok(InputSource::Pair(a - 1, b - 1)),
            SourceJson::Pair(..) => Err(Error::OutOfRange("modes are 1-based".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    if sources.len() != alphabet.len() || j.weights.len() != alphabet.len() {
        return Err(Error::Dimension("design needs one weight and one source per letter".into()));
    }
    Ok(Design { weights: LetterWeights::new(j.weights)?, alphabet, language, sources, unidentifiable: j.unidentifiable })
}

#[derive(Serialize, Deserialize)]
struct MetaJson {
    source: String,
    #[serde(default)]
    horizon: Option<usize>,
    lambda_len: usize,
    tee_len: usize,
    output_dim: usize,
    #[serde(default)]
    counts: BTreeMap<usize, usize>,
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    design: DesignJson,
    lambda: IndexMap<String, Rows>,
    tee: IndexMap<String, Rows>,
    meta: MetaJson,
}

pub fn table_to_json(t: &CovarianceTable) -> Value {
    let al = &t.design.alphabet;
    let j = TableJson {
        design: design_to_json(&t.design),
        lambda: t.lambda.iter().map(|(w, m)| (al.format_word(w), to_rows(m))).collect(),
        tee: t.tee.iter().map(|((v, w), m)| (format!("{}|{}", al.format_word(v), al.format_word(w)), to_rows(m))).collect(),
        meta: MetaJson {
            source: t.meta.source.clone(),
            horizon: t.meta.horizon,
            lambda_len: t.meta.lambda_len,
            tee_len: t.meta.tee_len,
            output_dim: t.output_dim,
            counts: t.meta.counts.clone(),
        },
    };
    serde_json::to_value(j).expect("plain data")
}

pub fn table_from_json(v: &Value) -> Result<CovarianceTable> {
    let j: TableJson = serde_json::from_value(v.clone())?;
    let design = design_from_json(j.design)?;
    let p = j.meta.output_dim;
    let al = design.alphabet.clone();
    let mut lambda = BTreeMap::new();
    for (k, rows) in &j.lambda {
        let w = al.parse_word(k)?;
        lambda.insert(w, from_rows(rows, p, p, &format!("lambda[{k}]"))?);
    }
    let mut tee = BTreeMap::new();
    for (k, rows) in &j.tee {
        let (a, b) = k.split_once('|').ok_or_else(|| Error::Invalid(format!("tee key {k:?} must read \"v|w\"")))?;
        let (mut v, mut w) = (al.parse_word(a)?, al.parse_word(b)?);
        let mut m = from_rows(rows, p, p, &format!("tee[{k}]"))?;
        if w < v {
            std::mem::swap(&mut v, &mut w);
            m = m.transpose();
        }
        tee.insert((v, w), m);
    }
    Ok(CovarianceTable {
        design,
        output_dim: p,
        lambda,
        tee,
        meta: TableMeta {
            source: j.meta.source,
            horizon: j.meta.horizon,
            lambda_len: j.meta.lambda_len,
            tee_len: j.meta.tee_len,
            counts: j.meta.counts,
        },
    })
}

fn keys_to_json(al: &Alphabet, keys: &[HankelKey]) -> Vec<(String, usize)> {
    keys.iter().map(|(w, i)| (al.format_word(w), *i)).collect()
}

pub fn selection_to_json(al: &Alphabet, s: &Selection) -> Value {
    serde_json::json!({ "rows": keys_to_json(al, &s.rows), "cols": keys_to_json(al, &s.cols) })
}

pub fn selection_from_json(al: &Alphabet, v: &Value) -> Result<Selection> {
    #[derive(Deserialize)]
    struct SelJson {
        rows: Vec<(String, usize)>,
        cols: Vec<(String, usize)>,
    }
    let j: SelJson = serde_json::from_value(v.clone())?;
    let conv = |ks: &[(String, usize)]| -> Result<Vec<HankelKey>> { ks.iter().map(|(w, i)| Ok((al.parse_word(w)?, *i))).collect() };
    Ok(Selection { rows: conv(&j.rows)?, cols: conv(&j.cols)? })
}

pub fn diagnostics_to_json(al: &Alphabet, d: &Diagnostics) -> Value {
    // infinite condition numbers are written as null
    let finite = |x: f64| if x.is_finite() { Value::from(x) } else { Value::Null };
    serde_json::json!({
        "hankel_singular_values": d.hankel_singular_values,
        "selection": selection_to_json(al, &d.selection),
        "selection_condition": finite(d.selection_condition),
        "gram_singular_values": d.gram_singular_values,
        "gram_condition": finite(d.gram_condition),
        "pruned": d.pruned,
        "sample_counts": d.sample_counts,
        "unidentifiable": d.unidentifiable,
    })
}

/// Header `t,y_1..y_p,theta` (1-based modes) or `t,y_1..y_p,u_<letter>...`.
pub fn write_series_csv<W: Write>(ts: &TimeSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let p = ts.output_dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=p).map(|i| format!("y_{i}")));
    match ts.inputs() {
        Inputs::Modes { .. } => header.push("theta".into()),
        Inputs::Letters { alphabet, .. } => header.extend(alphabet.names().iter().map(|s| format!("u_{s}"))),
    }
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(header.len());
    for t in 0..ts.len() {
        rec.clear();
        rec.push(t.to_string());
        rec.extend(ts.y(t).iter().map(|x| x.to_string()));
        match ts.inputs() {
            Inputs::Modes { theta, .. } => rec.push((theta[t] + 1).to_string()),
            Inputs::Letters { alphabet, u } => {
                let d = alphabet.len();
                rec.extend(u[t * d..(t + 1) * d].iter().map(|x| x.to_string()));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a series; `states` fixes the mode count of a θ-form file (default: largest mode seen).
pub fn read_series_csv<R: Read>(input: R, states: Option<usize>) -> Result<TimeSeries> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if header.first().map(String::as_str) != Some("t") {
        return Err(Error::Invalid("first column must be \"t\"".into()));
    }
    let p = header[1..].iter().take_while(|h| h.starts_with("y_")).count();
    let ycols: Vec<usize> = (1..=p).collect();
    for (i, h) in header[1..=p].iter().enumerate() {
        if *h != format!("y_{}", i + 1) {
            return Err(Error::Invalid(format!("unexpected output column {h:?}")));
        }
    }
    let rest = &header[1 + p..];
    let theta_form = rest.len() == 1 && rest[0] == "theta";
    let letters: Vec<String> = if theta_form {
        vec![]
    } else {
        rest.iter()
            .map(|h| h.strip_prefix("u_").map(str::to_string).ok_or_else(|| Error::Invalid(format!("unexpected column {h:?}"))))
            .collect::<Result<_>>()?
    };
    let mut y = Vec::new();
    let mut u = Vec::new();
    let mut theta = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::Invalid(format!("row {}: column {} is not a number", line + 2, i + 1)))
        };
        for &c in &ycols {
            y.push(num(c)?);
        }
        if theta_form {
            let q: u32 = rec
                .get(1 + p)
                .and_then(|s| s.trim().parse().ok())
                .filter(|&q| q >= 1)
                .ok_or_else(|| Error::Invalid(format!("row {}: theta must be a positive integer", line + 2)))?;
            theta.push(q - 1);
        } else {
            for c in 0..letters.len() {
                u.push(num(1 + p + c)?);
            }
        }
    }
    let inputs = if theta_form {
        let seen = theta.iter().max().map_or(0, |&q| q as usize + 1);
        Inputs::Modes { states: states.unwrap_or(seen).max(seen), theta }
    } else {
        Inputs::Letters { alphabet: Alphabet::new(letters)?, u }
    };
    TimeSeries::new(p, y, inputs)
}
