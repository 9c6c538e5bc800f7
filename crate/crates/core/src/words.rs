//! Finite alphabets, words over them, pair-induced admissible languages and
//! multiplicative path weights.
//!
//! Words are ordered by length first and then by the first differing letter,
//! so `enumerate_words` yields `ε, a, b, aa, ab, ba, bb, ...`.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// A letter, stored as its position in the owning [`Alphabet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Letter(pub u16);

impl Letter {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Ordered set of distinct letter names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Alphabet {
    names: Vec<String>,
}

impl Alphabet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Invalid("alphabet must contain at least one letter".into()));
        }
        if names.len() > u16::MAX as usize {
            return Err(Error::Invalid("alphabet too large".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains('.') || n.contains('|') {
                return Err(Error::Invalid(format!("letter name {n:?} is empty or contains '.' or '|'")));
            }
            if names[..i].contains(n) {
                return Err(Error::Invalid(format!("duplicate letter {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Alphabet `{0, 1, ..., d-1}`.
    pub fn indexed(d: usize) -> Self {
        Self::new((0..d.max(1)).map(|i| i.to_string())).expect("indexed alphabet is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, l: Letter) -> &str {
        &self.names[l.index()]
    }

    pub fn letter(&self, name: &str) -> Option<Letter> {
        self.names.iter().position(|n| n == name).map(|i| Letter(i as u16))
    }

    pub fn letters(&self) -> impl Iterator<Item = Letter> + '_ {
        (0..self.names.len()).map(|i| Letter(i as u16))
    }

    /// Render a word as letter names joined by `.`; the empty word is `""`.
    pub fn format_word(&self, w: &Word) -> String {
        w.letters().iter().map(|&l| self.name(l)).collect::<Vec<_>>().join(".")
    }

    /// Inverse of [`Alphabet::format_word`]. Accepts `""` or `"ε"` for the empty word.
    pub fn parse_word(&self, s: &str) -> Result<Word> {
        if s.is_empty() || s == "ε" {
            return Ok(Word::empty());
        }
        s.split('.')
            .map(|t| {
                self.letter(t)
                    .ok_or_else(|| Error::InconsistentAlphabet(format!("unknown letter {t:?}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Word::from_letters)
    }
}

/// Finite sequence of letters. Ordered by length, then lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Word(Vec<Letter>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn from_letters(letters: Vec<Letter>) -> Self {
        Word(letters)
    }

    pub fn from_indices(ix: &[usize]) -> Self {
        Word(ix.iter().map(|&i| Letter(i as u16)).collect())
    }

    pub fn single(l: Letter) -> Self {
        Word(vec![l])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> &[Letter] {
        &self.0
    }

    pub fn first(&self) -> Option<Letter> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<Letter> {
        self.0.last().copied()
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Word) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        Word(v)
    }

    pub fn push(&self, l: Letter) -> Word {
        let mut v = self.0.clone();
        v.push(l);
        Word(v)
    }

    pub fn prepend(&self, l: Letter) -> Word {
        let mut v = Vec::with_capacity(self.0.len() + 1);
        v.push(l);
        v.extend_from_slice(&self.0);
        Word(v)
    }

    /// Word without its last letter (ε stays ε).
    pub fn prefix(&self) -> Word {
        let n = self.0.len().saturating_sub(1);
        Word(self.0[..n].to_vec())
    }

    /// Word without its first letter (ε stays ε).
    pub fn suffix(&self) -> Word {
        Word(self.0.get(1..).unwrap_or(&[]).to_vec())
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return write!(f, "ε");
        }
        let s: Vec<String> = self.0.iter().map(|l| l.0.to_string()).collect();
        write!(f, "{}", s.join("."))
    }
}

/// Lazy enumeration of all words of length `<= max_len` in increasing order.
#[derive(Clone, Debug)]
pub struct WordsUpTo {
    d: usize,
    max_len: usize,
    next: Option<Vec<Letter>>,
}

impl WordsUpTo {
    pub fn new(d: usize, max_len: usize) -> Self {
        Self { d, max_len, next: Some(Vec::new()) }
    }
}

impl Iterator for WordsUpTo {
    type Item = Word;

    fn next(&mut self) -> Option<Word> {
        let cur = self.next.take()?;
        let mut succ = cur.clone();
        // odometer increment; roll over to the next length when exhausted
        let mut pos = succ.len();
        loop {
            if pos == 0 {
                let len = succ.len() + 1;
                self.next = (len <= self.max_len && self.d > 0).then(|| vec![Letter(0); len]);
                break;
            }
            pos -= 1;
            if succ[pos].index() + 1 < self.d {
                succ[pos].0 += 1;
                self.next = Some(succ);
                break;
            }
            succ[pos] = Letter(0);
        }
        Some(Word(cur))
    }
}

/// All words over `alphabet` of length at most `max_len`, ε first.
pub fn enumerate_words(alphabet: &Alphabet, max_len: usize) -> Vec<Word> {
    WordsUpTo::new(alphabet.len(), max_len).collect()
}

/// `Σ_{k=1..n} d^k`, the number of non-empty words of length at most `n`.
pub fn count_nonempty(d: usize, n: usize) -> usize {
    let mut total = 0usize;
    let mut pow = 1usize;
    for _ in 0..n {
        pow *= d;
        total += pow;
    }
    total
}

/// Language induced by a set of allowed consecutive letter pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdmissibleLanguage {
    d: usize,
    allowed: Vec<bool>,
}

impl AdmissibleLanguage {
    /// Every word is admissible.
    pub fn full(d: usize) -> Self {
        Self { d, allowed: vec![true; d * d] }
    }

    pub fn from_pairs(d: usize, pairs: impl IntoIterator<Item = (Letter, Letter)>) -> Result<Self> {
        let mut allowed = vec![false; d * d];
        for (a, b) in pairs {
            if a.index() >= d || b.index() >= d {
                return Err(Error::OutOfRange(format!("pair ({}, {}) outside alphabet of size {d}", a.0, b.0)));
            }
            allowed[a.index() * d + b.index()] = true;
        }
        Ok(Self { d, allowed })
    }

    pub fn alphabet_size(&self) -> usize {
        self.d
    }

    pub fn allows(&self, a: Letter, b: Letter) -> bool {
        self.allowed[a.index() * self.d + b.index()]
    }

    pub fn is_full(&self) -> bool {
        self.allowed.iter().all(|&x| x)
    }

    pub fn pairs(&self) -> Vec<(Letter, Letter)> {
        let mut out = Vec::new();
        for a in 0..self.d {
            for b in 0..self.d {
                if self.allowed[a * self.d + b] {
                    out.push((Letter(a as u16), Letter(b as u16)));
                }
            }
        }
        out
    }

    /// ε and single letters are admissible; longer words need every consecutive pair allowed.
    pub fn is_admissible(&self, w: &Word) -> bool {
        w.letters().iter().all(|l| l.index() < self.d)
            && w.letters().windows(2).all(|p| self.allows(p[0], p[1]))
    }

    /// Admissible words of length `<= max_len` in increasing order, ε included.
    pub fn words_up_to(&self, max_len: usize) -> Vec<Word> {
        // breadth-first by length keeps the order without filtering all d^k words
        let mut out = vec![Word::empty()];
        let mut layer: Vec<Word> = Vec::new();
        for len in 1..=max_len {
            let next: Vec<Word> = if len == 1 {
                (0..self.d).map(|i| Word::from_indices(&[i])).collect()
            } else {
                let mut v = Vec::new();
                for w in &layer {
                    let last = w.last().expect("non-empty");
                    for b in 0..self.d {
                        let b = Letter(b as u16);
                        if self.allows(last, b) {
                            v.push(w.push(b));
                        }
                    }
                }
                v.sort();
                v
            };
            out.extend(next.iter().cloned());
            layer = next;
        }
        out
    }
}

/// Strictly positive weight per letter.
#[derive(Clone, Debug, PartialEq)]
pub struct LetterWeights(Vec<f64>);

impl LetterWeights {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some(bad) = p.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
            return Err(Error::Invalid(format!("letter weight {bad} is not strictly positive")));
        }
        Ok(Self(p))
    }

    pub fn uniform(d: usize, value: f64) -> Self {
        Self(vec![value; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, l: Letter) -> f64 {
        self.0[l.index()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Product of letter weights for admissible words, 0 otherwise; ε has weight 1.
    pub fn path_weight(&self, w: &Word, lang: &AdmissibleLanguage) -> f64 {
        if !lang.is_admissible(w) {
            return 0.0;
        }
        w.letters().iter().fold(1.0, |acc, &l| acc * self.get(l))
    }
}
