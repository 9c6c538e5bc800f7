//! Random model generators shared by the integration targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jmls_realize::gbs::GbsModel;
use jmls_realize::jmls::{GjmlsModel, MarkovChain};
use jmls_realize::linalg::{Mat, Vector};
use jmls_realize::repr::{stability_radius, Representation};
use jmls_realize::words::{AdmissibleLanguage, Alphabet, Letter, LetterWeights};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

/// Random matrix `G + 2I`, comfortably invertible.
pub fn basis_change(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    rmat(rng, n, n) * 0.5 + Mat::identity(n, n) * 2.0
}

pub fn random_psd(rng: &mut ChaCha8Rng, m: usize) -> Mat {
    let g = rmat(rng, m, m);
    &g * g.transpose() / m as f64 + Mat::identity(m, m) * 0.1
}

pub fn rep_from(alphabet: Alphabet, a: Vec<Mat>, b: Vec<Vector>, c: Mat) -> Representation {
    let k = b.len();
    Representation::new(alphabet, a, b, Representation::numbered_labels(k), c).unwrap()
}

pub fn random_rep(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, p: usize) -> Representation {
    let scale = 0.9 / ((n * d) as f64).sqrt();
    let a = (0..d).map(|_| rmat(rng, n, n) * scale).collect();
    let b = (0..k).map(|_| rmat(rng, n, 1).column(0).into_owned()).collect();
    let c = rmat(rng, p, n);
    rep_from(Alphabet::indexed(d), a, b, c)
}

pub fn random_language(rng: &mut ChaCha8Rng, d: usize) -> AdmissibleLanguage {
    if d == 1 || rng.random_bool(0.5) {
        return AdmissibleLanguage::full(d);
    }
    let mut pairs = Vec::new();
    for a in 0..d {
        for b in 0..d {
            if rng.random_bool(0.7) || b == a {
                pairs.push((Letter(a as u16), Letter(b as u16)));
            }
        }
    }
    AdmissibleLanguage::from_pairs(d, pairs).unwrap()
}

/// Random GBS scaled so the stability radius equals `radius`.
#[allow(clippy::too_many_arguments)]
pub fn random_gbs(rng: &mut ChaCha8Rng, n: usize, d: usize, p: usize, m: usize, weights: Vec<f64>, language: AdmissibleLanguage, radius: f64) -> GbsModel {
    let a: Vec<Mat> = (0..d).map(|_| rmat(rng, n, n)).collect();
    let w = LetterWeights::new(weights).unwrap();
    let rho = stability_radius(&a, Some(&w));
    let s = (radius / rho).sqrt();
    let a = a.into_iter().map(|x| x * s).collect();
    let k = (0..d).map(|_| rmat(rng, n, m)).collect();
    let q0 = random_psd(rng, m);
    let q = w.as_slice().iter().map(|&pw| &q0 * pw).collect();
    GbsModel::new(Alphabet::indexed(d), a, k, rmat(rng, p, n), rmat(rng, p, m), w, q, language).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, d: usize, normalized: bool) -> Vec<f64> {
    let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..1.0)).collect();
    if normalized {
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
    }
    w
}

pub fn random_chain(rng: &mut ChaCha8Rng, d: usize) -> MarkovChain {
    loop {
        let mut p = Mat::from_fn(d, d, |_, _| if rng.random_bool(0.75) { rng.random_range(0.1..1.0) } else { 0.0 });
        for q in 0..d {
            let s: f64 = p.row(q).sum();
            if s == 0.0 {
                p[(q, (q + 1) % d)] = 1.0;
            } else {
                for j in 0..d {
                    p[(q, j)] /= s;
                }
            }
        }
        if let Ok(c) = MarkovChain::new(p) {
            return c;
        }
    }
}

pub fn random_gjmls(rng: &mut ChaCha8Rng, d: usize, dims: Vec<usize>, p: usize, m: usize, radius: f64) -> GjmlsModel {
    let chain = random_chain(rng, d);
    let build = |rng: &mut ChaCha8Rng, scale: f64| {
        let mm: Vec<Mat> = (0..d * d).map(|i| rmat(rng, dims[i % d], dims[i / d]) * scale).collect();
        let bb: Vec<Mat> = (0..d * d).map(|i| rmat(rng, dims[i % d], m)).collect();
        (mm, bb)
    };
    let mut seed_rng = rng.clone();
    let (mm, bb) = build(rng, 1.0);
    let c: Vec<Mat> = (0..d).map(|q| rmat(rng, p, dims[q])).collect();
    let dd: Vec<Mat> = (0..d).map(|_| rmat(rng, p, m)).collect();
    let q0 = random_psd(rng, m);
    let qq: Vec<Mat> = chain.stationary().iter().map(|&pi| &q0 * pi).collect();
    let h = GjmlsModel::new(chain.clone(), dims.clone(), mm, bb.clone(), c.clone(), dd.clone(), qq.clone()).unwrap();
    let s = (radius / h.stability_radius()).sqrt();
    let (mm, _) = build(&mut seed_rng, s);
    GjmlsModel::new(chain, dims, mm, bb, c, dd, qq).unwrap()
}
