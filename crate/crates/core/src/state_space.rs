//! Token sequences over `[S]^d`, the mixed-radix index codec, Hamming
//! geometry and dense probability mass functions.
//!
//! Indices are little-endian: token 0 is the least significant digit, so
//! `encode(x) = sum_i x[i] * S^i`. Every module shares this convention.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};

/// Default cap on the number of states for which dense operations are allowed.
pub const DEFAULT_ENUMERABLE_CAP: u64 = 1 << 20;

/// Tolerance used when validating that a mass vector is normalized.
const NORMALIZATION_TOL: f64 = 1e-9;

/// Dimensions of the token space `[S]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateSpace {
    d: usize,
    s: usize,
    cap: u64,
}

impl StateSpace {
    pub fn new(d: usize, s: usize) -> Result<Self> {
        Self::with_cap(d, s, DEFAULT_ENUMERABLE_CAP)
    }

    pub fn with_cap(d: usize, s: usize, cap: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidConfig("d must be at least 1".into()));
        }
        if s < 2 {
            return Err(Error::InvalidConfig("vocabulary size must be at least 2".into()));
        }
        Ok(Self { d, s, cap })
    }

    /// Number of tokens per sequence.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Vocabulary size.
    pub fn s(&self) -> usize {
        self.s
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    /// `S^d`, or `None` when it overflows `u64`.
    pub fn num_states(&self) -> Option<u64> {
        (self.s as u64).checked_pow(u32::try_from(self.d).ok()?)
    }

    pub fn is_enumerable(&self) -> bool {
        self.num_states().is_some_and(|n| n <= self.cap)
    }

    /// Number of states, refusing spaces above the enumeration cap.
    pub fn size(&self) -> Result<usize> {
        match self.num_states() {
            Some(n) if n <= self.cap => Ok(n as usize),
            Some(n) => Err(Error::TooLarge(n.to_string())),
            None => Err(Error::TooLarge(format!("{}^{}", self.s, self.d))),
        }
    }

    /// `S^i` for every position.
    pub fn strides(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.d);
        let mut acc = 1usize;
        for _ in 0..self.d {
            out.push(acc);
            acc = acc.saturating_mul(self.s);
        }
        out
    }

    pub fn check(&self, seq: &Sequence) -> Result<()> {
        if seq.len() != self.d {
            return Err(Error::SpecMismatch(format!("sequence length {} but d = {}", seq.len(), self.d)));
        }
        if let Some((i, &a)) = seq.0.iter().enumerate().find(|(_, &a)| a >= self.s) {
            return Err(Error::InvalidSequence(format!("token {a} at position {i} outside [0, {})", self.s)));
        }
        Ok(())
    }

    pub fn encode(&self, seq: &Sequence) -> Result<usize> {
        if seq.len() != self.d {
            return Err(Error::InvalidSequence(format!("sequence length {} but d = {}", seq.len(), self.d)));
        }
        self.check(seq)?;
        if self.num_states().is_none_or(|n| n > usize::MAX as u64) {
            return Err(Error::TooLarge(format!("{}^{}", self.s, self.d)));
        }
        Ok(self.encode_unchecked(seq.tokens()))
    }

    /// Encode without range checks. Callers guarantee validity.
    pub(crate) fn encode_unchecked(&self, tokens: &[usize]) -> usize {
        tokens.iter().rev().fold(0usize, |acc, &a| acc * self.s + a)
    }

    pub fn decode(&self, index: usize) -> Result<Sequence> {
        let n = self.num_states().ok_or_else(|| Error::TooLarge(format!("{}^{}", self.s, self.d)))?;
        if index as u64 >= n {
            return Err(Error::InvalidIndex(format!("{index} not below {n}")));
        }
        let mut tokens = vec![0; self.d];
        self.decode_into(index, &mut tokens);
        Ok(Sequence(tokens))
    }

    /// Decode into a caller-provided buffer of length `d`. No range check.
    pub(crate) fn decode_into(&self, mut index: usize, out: &mut [usize]) {
        for slot in out.iter_mut() {
            *slot = index % self.s;
            index /= self.s;
        }
    }

    /// Uniform random sequence.
    pub fn random_sequence<R: Rng + ?Sized>(&self, rng: &mut R) -> Sequence {
        Sequence((0..self.d).map(|_| rng.random_range(0..self.s)).collect())
    }

    /// Iterator over all sequences in index order.
    pub fn sequences(&self) -> Result<impl Iterator<Item = Sequence> + '_> {
        let n = self.size()?;
        Ok((0..n).map(move |idx| {
            let mut tokens = vec![0; self.d];
            self.decode_into(idx, &mut tokens);
            Sequence(tokens)
        }))
    }
}

/// A length-`d` token sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Sequence(Vec<usize>);

impl Sequence {
    pub fn new(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0; d])
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn tokens_mut(&mut self) -> &mut [usize] {
        &mut self.0
    }

    pub fn into_tokens(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `x^{-i} (+)_i a`: a copy with position `i` replaced.
    pub fn with_token(&self, i: usize, a: usize) -> Self {
        let mut out = self.clone();
        out.0[i] = a;
        out
    }
}

impl std::ops::Index<usize> for Sequence {
    type Output = usize;
    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

impl From<Vec<usize>> for Sequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

impl std::fmt::Display for Sequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "]")
    }
}

/// Number of positions where `x` and `y` differ.
pub fn hamming(x: &Sequence, y: &Sequence) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::SpecMismatch(format!("lengths {} and {} differ", x.len(), y.len())));
    }
    Ok(x.0.iter().zip(&y.0).filter(|(a, b)| a != b).count())
}

/// The `S - 1` Hamming-1 neighbors of `x` along position `i`, paired with
/// the replacement token.
pub fn neighbors(space: &StateSpace, x: &Sequence, i: usize) -> Result<Vec<(usize, Sequence)>> {
    space.check(x)?;
    if i >= space.d() {
        return Err(Error::InvalidIndex(format!("position {i} not below d = {}", space.d())));
    }
    Ok((0..space.s()).filter(|&a| a != x[i]).map(|a| (a, x.with_token(i, a))).collect())
}

/// Dense probability mass function over an enumerable `[S]^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    space: StateSpace,
    mass: Vec<f64>,
}

impl Pmf {
    /// Validates a normalized mass vector; the residual is absorbed by an
    /// exact renormalization.
    pub fn new(space: StateSpace, mass: Vec<f64>) -> Result<Self> {
        let n = space.size()?;
        if mass.len() != n {
            return Err(Error::InvalidPmf(format!("expected {n} entries, got {}", mass.len())));
        }
        if let Some(bad) = mass.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidPmf(format!("entry {bad} is negative or not finite")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::InvalidPmf(format!("mass sums to {total}")));
        }
        Ok(Self::renormalized(space, mass, total))
    }

    /// Normalizes nonnegative weights with positive total.
    pub fn from_weights(space: StateSpace, weights: Vec<f64>) -> Result<Self> {
        let n = space.size()?;
        if weights.len() != n {
            return Err(Error::InvalidPmf(format!("expected {n} entries, got {}", weights.len())));
        }
        if let Some(bad) = weights.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::InvalidPmf(format!("weight {bad} is negative or not finite")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidPmf("weights sum to zero".into()));
        }
        Ok(Self::renormalized(space, weights, total))
    }

    fn renormalized(space: StateSpace, mut mass: Vec<f64>, total: f64) -> Self {
        if total != 1.0 {
            mass.iter_mut().for_each(|m| *m /= total);
        }
        Self { space, mass }
    }

    pub fn uniform(space: StateSpace) -> Result<Self> {
        let n = space.size()?;
        Ok(Self { space, mass: vec![1.0 / n as f64; n] })
    }

    pub fn point(space: StateSpace, index: usize) -> Result<Self> {
        let n = space.size()?;
        if index >= n {
            return Err(Error::InvalidIndex(format!("{index} not below {n}")));
        }
        let mut mass = vec![0.0; n];
        mass[index] = 1.0;
        Ok(Self { space, mass })
    }

    /// Empirical distribution of a sample set.
    pub fn empirical(space: StateSpace, samples: &[Sequence]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut counts = vec![0.0; space.size()?];
        for x in samples {
            counts[space.encode(x)?] += 1.0;
        }
        Self::from_weights(space, counts)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_mass(self) -> Vec<f64> {
        self.mass
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.mass[index]
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    /// `|sum - 1|`.
    pub fn normalization_residual(&self) -> f64 {
        (self.mass.iter().sum::<f64>() - 1.0).abs()
    }

    /// `q^i(. | x^{-i})` for the state with the given index.
    pub fn conditional(&self, index: usize, i: usize) -> Result<Vec<f64>> {
        let s = self.space.s();
        let stride = self.space.strides()[i];
        let digit = (index / stride) % s;
        let base = index - digit * stride;
        let fiber: Vec<f64> = (0..s).map(|a| self.mass[base + a * stride]).collect();
        let total: f64 = fiber.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroDensity(index));
        }
        Ok(fiber.into_iter().map(|m| m / total).collect())
    }

    /// Marginal law of token `i`.
    pub fn token_marginal(&self, i: usize) -> Vec<f64> {
        let s = self.space.s();
        let stride = self.space.strides()[i];
        let mut out = vec![0.0; s];
        for (idx, m) in self.mass.iter().enumerate() {
            out[(idx / stride) % s] += m;
        }
        out
    }

    /// Token histogram pooled over all positions (averaged marginals).
    pub fn pooled_token_histogram(&self) -> Vec<f64> {
        let d = self.space.d();
        let mut out = vec![0.0; self.space.s()];
        for i in 0..d {
            for (o, m) in out.iter_mut().zip(self.token_marginal(i)) {
                *o += m / d as f64;
            }
        }
        out
    }

    /// Writes the plain-text pmf format: header `d S`, then one
    /// `index probability` line per state in index order.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.space.d(), self.space.s())?;
        for (idx, m) in self.mass.iter().enumerate() {
            writeln!(w, "{idx} {m}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines =
            r.lines().map(|l| l.map_err(Error::from)).filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()));
        let header = lines.next().ok_or_else(|| Error::Parse("missing header".into()))??;
        let mut fields = header.split_whitespace();
        let parse_usize = |f: Option<&str>, what: &str| -> Result<usize> {
            f.ok_or_else(|| Error::Parse(format!("missing {what}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad {what}: {e}")))
        };
        let d = parse_usize(fields.next(), "d")?;
        let s = parse_usize(fields.next(), "S")?;
        let space = StateSpace::new(d, s)?;
        let n = space.size()?;
        let mut mass = vec![0.0; n];
        let mut seen = 0usize;
        for (expected, line) in lines.enumerate() {
            let line = line?;
            let mut f = line.split_whitespace();
            let idx = parse_usize(f.next(), "index")?;
            if idx != expected || idx >= n {
                return Err(Error::Parse(format!("line for index {idx} out of order")));
            }
            mass[idx] = f
                .next()
                .ok_or_else(|| Error::Parse("missing probability".into()))?
                .parse()
                .map_err(|e| Error::Parse(format!("bad probability: {e}")))?;
            seen += 1;
        }
        if seen != n {
            return Err(Error::Parse(format!("expected {n} entries, found {seen}")));
        }
        Self::new(space, mass)
    }
}

/// `(1/2) sum |p - q|`.
pub fn tv_distance(p: &Pmf, q: &Pmf) -> Result<f64> {
    if p.space != q.space {
        return Err(Error::SpecMismatch(format!(
            "({}, {}) vs ({}, {})",
            p.space.d(),
            p.space.s(),
            q.space.d(),
            q.space.s()
        )));
    }
    Ok(tv_slices(&p.mass, &q.mass))
}

pub(crate) fn tv_slices(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}
