//! Exact Wick calculus for words in independent GUE matrices and
//! deterministic separators.
//!
//! A word `x¹a¹x²a²⋯xⁿaⁿ` expands over color-respecting pairings `π` of the
//! Gaussian letters. With `γ = (1 2 ⋯ n)`, each pairing contributes
//!
//! ```text
//! (Nσ_N²)^{n/2} N^{|πγ| - n/2 - 1} Π_{c ∈ πγ} tr(a^{c₁} a^{c₂} ⋯)
//! ```
//!
//! where `tr` is the normalized trace and each cycle of `πγ` is read in the
//! order `t ↦ π(t+1)`. Non-crossing pairings are exactly those with
//! `|πγ| = n/2 + 1`; their cycles are the blocks of the Kreweras complement,
//! so the same cycle routine gives both the exact moment and the free one.
//!
//! Words are written as whitespace separated tokens, e.g. `w1 a w2 b^2`:
//! `w` or `wK` is a Gaussian letter of color `K`, anything else names a
//! generator, and `^k` repeats a token.

use std::collections::BTreeMap;
use std::fmt;

use faer::Mat;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{Deformation, EnsembleParams, Sampler};
use crate::error::{Error, Result};
use crate::stats::{mean_estimate, pairwise_sum_complex, ComplexEstimate};

/// Largest word length enumerated exhaustively.
pub const MAX_LETTERS: usize = 16;
/// Minimum sample count for the Monte Carlo cross-check.
pub const MIN_CROSS_CHECK_SAMPLES: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PairedWord {
    colors: Vec<usize>,
    /// Generator names following each Gaussian letter, up to the next one.
    separators: Vec<Vec<String>>,
}

impl PairedWord {
    pub fn new(colors: Vec<usize>, separators: Vec<Vec<String>>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::Input("a word needs at least one Gaussian letter".into()));
        }
        if colors.len() != separators.len() {
            return Err(Error::Dimension(format!(
                "{} colors but {} separators",
                colors.len(),
                separators.len()
            )));
        }
        if colors.contains(&0) {
            return Err(Error::Input("colors are numbered from 1".into()));
        }
        if let Some(bad) = separators.iter().flatten().find(|g| !valid_generator(g)) {
            return Err(Error::Input(format!("invalid generator name {bad:?}")));
        }
        Ok(Self { colors, separators })
    }

    /// `W^n` with identity separators.
    pub fn power(n: usize) -> Result<Self> {
        Self::new(vec![1; n], vec![Vec::new(); n])
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = Vec::new();
        for raw in text.split_whitespace() {
            let (name, reps) = match raw.split_once('^') {
                Some((name, k)) => (
                    name,
                    k.parse::<usize>()
                        .map_err(|_| Error::Input(format!("bad exponent in {raw:?}")))?,
                ),
                None => (raw, 1),
            };
            if name.is_empty() {
                return Err(Error::Input(format!("empty token in {raw:?}")));
            }
            tokens.extend(std::iter::repeat_n(name, reps));
        }
        let Some(first) = tokens.iter().position(|t| letter_color(t).is_some()) else {
            return Err(Error::Input(format!("word {text:?} has no Gaussian letter")));
        };
        // separators before the first letter close the cycle
        tokens.rotate_left(first);
        let mut colors = Vec::new();
        let mut separators: Vec<Vec<String>> = Vec::new();
        for t in tokens {
            match letter_color(t) {
                Some(Ok(c)) => {
                    colors.push(c);
                    separators.push(Vec::new());
                }
                Some(Err(e)) => return Err(e),
                None => separators.last_mut().expect("word starts with a letter").push(t.to_string()),
            }
        }
        Self::new(colors, separators)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn colors(&self) -> &[usize] {
        &self.colors
    }

    pub fn separators(&self) -> &[Vec<String>] {
        &self.separators
    }

    pub fn color_count(&self) -> usize {
        self.colors.iter().copied().max().unwrap_or(0)
    }

    /// The word read from its second letter, `x²a²⋯xⁿaⁿx¹a¹`.
    pub fn rotated(&self) -> Self {
        let mut colors = self.colors.clone();
        let mut separators = self.separators.clone();
        colors.rotate_left(1);
        separators.rotate_left(1);
        Self { colors, separators }
    }

    /// Generator names in order of first appearance.
    pub fn generator_names(&self) -> Vec<&str> {
        let mut names: Vec<&str> = Vec::new();
        for g in self.separators.iter().flatten() {
            if !names.contains(&g.as_str()) {
                names.push(g);
            }
        }
        names
    }
}

fn valid_generator(name: &str) -> bool {
    !name.is_empty() && letter_color(name).is_none() && name.chars().all(|c| c.is_alphanumeric() || c == '_')
}

fn letter_color(token: &str) -> Option<Result<usize>> {
    let rest = token.strip_prefix('w')?;
    if rest.is_empty() {
        return Some(Ok(1));
    }
    if !rest.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(match rest.parse::<usize>() {
        Ok(c) if c >= 1 => Ok(c),
        _ => Err(Error::Input(format!("bad color in {token:?}"))),
    })
}

impl fmt::Display for PairedWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (c, sep) in self.colors.iter().zip(&self.separators) {
            if !first {
                f.write_str(" ")?;
            }
            first = false;
            write!(f, "w{c}")?;
            for g in sep {
                write!(f, " {g}")?;
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for PairedWord {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl TryFrom<String> for PairedWord {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Self::parse(&s)
    }
}

impl From<PairedWord> for String {
    fn from(w: PairedWord) -> String {
        w.to_string()
    }
}

/// Fixed-point-free involution, 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pairing {
    partner: Vec<usize>,
}

impl Pairing {
    pub fn from_partner(partner: Vec<usize>) -> Result<Self> {
        let n = partner.len();
        for (t, &s) in partner.iter().enumerate() {
            if s >= n || s == t || partner[s] != t {
                return Err(Error::Input(format!("{partner:?} is not a fixed-point-free involution")));
            }
        }
        Ok(Self { partner })
    }

    /// From 1-based pairs, e.g. `[(1, 3), (2, 4)]`.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut partner = vec![usize::MAX; n];
        for &(a, b) in pairs {
            if a == 0 || b == 0 || a > n || b > n {
                return Err(Error::Input(format!("pair ({a}, {b}) out of range 1..={n}")));
            }
            partner[a - 1] = b - 1;
            partner[b - 1] = a - 1;
        }
        Self::from_partner(partner)
    }

    pub fn partner(&self, t: usize) -> usize {
        self.partner[t]
    }

    pub fn len(&self) -> usize {
        self.partner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partner.is_empty()
    }

    /// 1-based pairs `(s, t)` with `s < t`, sorted.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.len())
            .filter(|&t| t < self.partner[t])
            .map(|t| (t + 1, self.partner[t] + 1))
            .collect()
    }

    /// `t ↦ π(t + 1 mod n)`
    pub fn with_gamma(&self, t: usize) -> usize {
        self.partner[(t + 1) % self.len()]
    }

    /// Conjugate by `γ`: pairs `{s, t}` become `{s+1, t+1}` mod `n`.
    pub fn rotated(&self) -> Self {
        let n = self.len();
        let mut partner = vec![0; n];
        for t in 0..n {
            partner[(t + n - 1) % n] = (self.partner[t] + n - 1) % n;
        }
        Self { partner }
    }
}

/// All color-respecting pairings, in lexicographic order of partner arrays.
pub fn enumerate_pairings(colors: &[usize]) -> Vec<Pairing> {
    let n = colors.len();
    let mut out = Vec::new();
    if n % 2 == 1 {
        return out;
    }
    let mut partner = vec![usize::MAX; n];
    fn rec(colors: &[usize], partner: &mut Vec<usize>, out: &mut Vec<Pairing>) {
        let Some(i) = partner.iter().position(|&p| p == usize::MAX) else {
            out.push(Pairing {
                partner: partner.clone(),
            });
            return;
        };
        for j in i + 1..colors.len() {
            if partner[j] == usize::MAX && colors[j] == colors[i] {
                partner[i] = j;
                partner[j] = i;
                rec(colors, partner, out);
                partner[i] = usize::MAX;
                partner[j] = usize::MAX;
            }
        }
    }
    rec(colors, &mut partner, &mut out);
    out
}

/// Cycles of `πγ`, each starting at its smallest element, ordered by it.
pub fn cycle_structure(pi: &Pairing) -> Vec<Vec<usize>> {
    let n = pi.len();
    let mut seen = vec![false; n];
    let mut cycles = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut cycle = Vec::new();
        let mut t = start;
        while !seen[t] {
            seen[t] = true;
            cycle.push(t);
            t = pi.with_gamma(t);
        }
        cycles.push(cycle);
    }
    cycles
}

/// `n/2 + 1 - |πγ|`, always even and nonnegative.
pub fn genus_defect(pi: &Pairing) -> usize {
    let cycles = cycle_structure(pi).len();
    pi.len() / 2 + 1 - cycles
}

pub fn is_noncrossing(pi: &Pairing) -> bool {
    genus_defect(pi) == 0
}

/// Direct test: no `s < t < s' < t'` with `{s, s'}` and `{t, t'}` paired.
pub fn has_crossing_arcs(pi: &Pairing) -> bool {
    let arcs = pi.pairs();
    arcs.iter().any(|&(s, s2)| arcs.iter().any(|&(t, t2)| s < t && t < s2 && s2 < t2))
}

/// Normalized-trace moments of ordered generator products.
pub trait MomentFunctional: Sync {
    /// `tr(g₁ g₂ ⋯ g_k)`; the empty word gives 1.
    fn moment(&self, word: &[String]) -> Result<Complex64>;
}

/// Concrete generator matrices, all of the same dimension.
#[derive(Debug, Clone, Default)]
pub struct Generators {
    dim: Option<usize>,
    matrices: BTreeMap<String, Mat<Complex64>>,
}

impl Generators {
    pub fn new() -> Self {
        Self::default()
    }

    /// Generators for a word without separators.
    pub fn identity(dim: usize) -> Self {
        Self {
            dim: Some(dim),
            matrices: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, m: Mat<Complex64>) -> Result<()> {
        if !valid_generator(name) {
            return Err(Error::Input(format!("invalid generator name {name:?}")));
        }
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension(format!("generator {name} is {}x{}", m.nrows(), m.ncols())));
        }
        if let Some(d) = self.dim {
            if d != m.nrows() {
                return Err(Error::Dimension(format!("generator {name} has dimension {}, expected {d}", m.nrows())));
            }
        }
        self.dim = Some(m.nrows());
        self.matrices.insert(name.to_string(), m);
        Ok(())
    }

    pub fn insert_diagonal(&mut self, name: &str, diagonal: &[f64]) -> Result<()> {
        let n = diagonal.len();
        self.insert(
            name,
            Mat::from_fn(n, n, |i, j| if i == j { Complex64::new(diagonal[i], 0.0) } else { Complex64::new(0.0, 0.0) }),
        )
    }

    /// Real symmetric generator given row by row.
    pub fn insert_real_rows(&mut self, name: &str, rows: &[Vec<f64>]) -> Result<()> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::Dimension(format!("generator {name}: row of length {} in a {n}-row matrix", r.len())));
        }
        for i in 0..n {
            for j in 0..i {
                if rows[i][j] != rows[j][i] {
                    return Err(Error::Input(format!("generator {name} is not symmetric at ({i}, {j})")));
                }
            }
        }
        self.insert(name, Mat::from_fn(n, n, |i, j| Complex64::new(rows[i][j], 0.0)))
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn get(&self, name: &str) -> Result<&Mat<Complex64>> {
        self.matrices
            .get(name)
            .ok_or_else(|| Error::Input(format!("unknown generator {name:?}")))
    }

    fn product(&self, word: &[String], dim: usize) -> Result<Mat<Complex64>> {
        let mut acc: Option<Mat<Complex64>> = None;
        for g in word {
            let m = self.get(g)?;
            acc = Some(match acc {
                None => m.clone(),
                Some(a) => &a * m,
            });
        }
        Ok(acc.unwrap_or_else(|| Mat::identity(dim, dim)))
    }
}

fn normalized_trace(m: &Mat<Complex64>) -> Complex64 {
    let n = m.nrows();
    let diag: Vec<Complex64> = (0..n).map(|i| m[(i, i)]).collect();
    pairwise_sum_complex(&diag) / n as f64
}

impl MomentFunctional for Generators {
    fn moment(&self, word: &[String]) -> Result<Complex64> {
        let dim = self
            .dim
            .ok_or_else(|| Error::Input("generator set has no dimension".into()))?;
        Ok(normalized_trace(&self.product(word, dim)?))
    }
}

/// Abstract moments `tr(g₁⋯g_k)`, keyed by space-separated words; a lookup
/// tries every cyclic rotation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MomentTable {
    entries: BTreeMap<String, f64>,
}

impl MomentTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, value: f64) {
        self.entries.insert(word.split_whitespace().collect::<Vec<_>>().join(" "), value);
    }
}

impl MomentFunctional for MomentTable {
    fn moment(&self, word: &[String]) -> Result<Complex64> {
        if word.is_empty() {
            return Ok(Complex64::new(1.0, 0.0));
        }
        let mut w = word.to_vec();
        for _ in 0..w.len() {
            if let Some(v) = self.entries.get(&w.join(" ")) {
                return Ok(Complex64::new(*v, 0.0));
            }
            w.rotate_left(1);
        }
        Err(Error::Input(format!("moment table has no entry for {:?}", word.join(" "))))
    }
}

/// Exact and free moments at one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentResult {
    pub n: usize,
    /// `E[N⁻¹ Tr(word)]`
    pub xi: Complex64,
    pub free_moment: Complex64,
    pub correction: Complex64,
    /// Contributions grouped by genus `g`, where `n/2 + 1 - |πγ| = 2g`.
    pub genus_terms: Vec<Complex64>,
}

fn separator_word(word: &PairedWord, cycle: &[usize]) -> Vec<String> {
    cycle.iter().flat_map(|&t| word.separators[t].iter().cloned()).collect()
}

fn check_letters(word: &PairedWord) -> Result<()> {
    if word.len() > MAX_LETTERS {
        return Err(Error::Input(format!(
            "word has {} letters; exhaustive enumeration is capped at {MAX_LETTERS}",
            word.len()
        )));
    }
    Ok(())
}

/// Exact `E[N⁻¹ Tr(x¹a¹⋯xⁿaⁿ)]` for independent GUE letters with entry
/// variance `sigma_n2`, split by genus.
pub fn xi_exact_by_genus(word: &PairedWord, sigma_n2: f64, generators: &Generators) -> Result<Vec<Complex64>> {
    check_letters(word)?;
    let dim = generators
        .dim()
        .ok_or_else(|| Error::Input("generator set has no dimension".into()))?;
    let separators: Vec<Mat<Complex64>> = word
        .separators
        .iter()
        .map(|s| generators.product(s, dim))
        .collect::<Result<_>>()?;
    let n = word.len();
    let nf = dim as f64;
    let pairings = enumerate_pairings(&word.colors);
    let terms: Vec<(usize, Complex64)> = pairings
        .par_iter()
        .map(|pi| {
            let cycles = cycle_structure(pi);
            let mut value = Complex64::new(1.0, 0.0);
            for c in &cycles {
                let mut m = separators[c[0]].clone();
                for &t in &c[1..] {
                    m = &m * &separators[t];
                }
                value *= normalized_trace(&m);
            }
            let power = cycles.len() as i32 - n as i32 / 2 - 1;
            let scale = (nf * sigma_n2).powi(n as i32 / 2) * nf.powi(power);
            (genus_defect(pi) / 2, value * scale)
        })
        .collect();
    let mut by_genus: Vec<Vec<Complex64>> = vec![Vec::new(); n / 4 + 1];
    for (g, v) in terms {
        by_genus[g].push(v);
    }
    Ok(by_genus.iter().map(|v| pairwise_sum_complex(v)).collect())
}

pub fn xi_exact(word: &PairedWord, sigma_n2: f64, generators: &Generators) -> Result<Complex64> {
    let parts = xi_exact_by_genus(word, sigma_n2, generators)?;
    Ok(pairwise_sum_complex(&parts))
}

/// `Σ_{π ∈ NC₂} (Nσ_N²)^{n/2} φ_{K(π)}(a¹, …, aⁿ)`
pub fn free_moment(word: &PairedWord, n_sigma2: f64, moments: &dyn MomentFunctional) -> Result<Complex64> {
    check_letters(word)?;
    let n = word.len();
    let terms: Vec<Complex64> = enumerate_pairings(&word.colors)
        .iter()
        .filter(|pi| is_noncrossing(pi))
        .map(|pi| {
            cycle_structure(pi)
                .iter()
                .map(|c| moments.moment(&separator_word(word, c)))
                .product::<Result<Complex64>>()
        })
        .collect::<Result<_>>()?;
    Ok(n_sigma2.powi(n as i32 / 2) * pairwise_sum_complex(&terms))
}

pub fn moment_result(word: &PairedWord, n_sigma2: f64, generators: &Generators) -> Result<MomentResult> {
    let dim = generators
        .dim()
        .ok_or_else(|| Error::Input("generator set has no dimension".into()))?;
    let genus_terms = xi_exact_by_genus(word, n_sigma2 / dim as f64, generators)?;
    let xi = pairwise_sum_complex(&genus_terms);
    let free = free_moment(word, n_sigma2, generators)?;
    Ok(MomentResult {
        n: dim,
        xi,
        free_moment: free,
        correction: xi - free,
        genus_terms,
    })
}

/// Recipes for generators that can be built at any dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `diag(+1, -1, +1, …)`
    AlternatingSign,
    /// Diagonal with entries at the quantiles `(i + ½)/N` of `[lo, hi]`.
    UniformDiagonal { lo: f64, hi: f64 },
    /// Diagonal with a fixed spectrum; only valid at its own dimension.
    Diagonal { values: Vec<f64> },
}

impl GeneratorSpec {
    pub fn diagonal(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            Self::AlternatingSign => Ok((0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect()),
            Self::UniformDiagonal { lo, hi } => {
                if !(lo <= hi) {
                    return Err(Error::Param(format!("empty interval [{lo}, {hi}]")));
                }
                Ok((0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect())
            }
            Self::Diagonal { values } => {
                if values.len() != n {
                    return Err(Error::Dimension(format!("diagonal has {} entries, need {n}", values.len())));
                }
                Ok(values.clone())
            }
        }
    }
}

pub fn build_generators(specs: &BTreeMap<String, GeneratorSpec>, n: usize) -> Result<Generators> {
    let mut g = Generators::identity(n);
    for (name, spec) in specs {
        g.insert_diagonal(name, &spec.diagonal(n)?)?;
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfinitesimalReport {
    pub word: PairedWord,
    pub n_sigma2: f64,
    pub results: Vec<MomentResult>,
    /// Least-squares slope of `log|correction|` against `log N`.
    pub slope: Option<f64>,
    pub identically_zero: bool,
    pub passes: bool,
}

/// Largest accepted correction slope.
pub const SLOPE_LIMIT: f64 = -2.0 + 0.1;

/// Evaluates the word at each dimension and fits the decay of the
/// correction `xi - free_moment`.
pub fn infinitesimal_check(
    word: &PairedWord,
    dims: &[usize],
    n_sigma2: f64,
    generators: &dyn Fn(usize) -> Result<Generators>,
) -> Result<InfinitesimalReport> {
    if dims.len() < 3 {
        return Err(Error::Input(format!("need at least 3 dimensions, got {}", dims.len())));
    }
    let results: Vec<MomentResult> = dims
        .iter()
        .map(|&n| moment_result(word, n_sigma2, &generators(n)?))
        .collect::<Result<_>>()?;
    let identically_zero = results
        .iter()
        .all(|r| r.correction.norm() <= 1e-12 * (1.0 + r.xi.norm()));
    let slope = if identically_zero {
        None
    } else {
        let pts: Vec<(f64, f64)> = results
            .iter()
            .map(|r| ((r.n as f64).ln(), r.correction.norm().ln()))
            .collect();
        Some(least_squares_slope(&pts))
    };
    let passes = identically_zero || slope.is_some_and(|s| s <= SLOPE_LIMIT);
    Ok(InfinitesimalReport {
        word: word.clone(),
        n_sigma2,
        results,
        slope,
        identically_zero,
        passes,
    })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub word: PairedWord,
    pub n: usize,
    pub samples: usize,
    pub mean: ComplexEstimate,
    pub exact: Complex64,
    /// `|mean - exact| / SE`
    pub z_score: f64,
    pub passes: bool,
}

/// Compares the sample mean of `N⁻¹ Tr(word)` over sampled GUE letters with
/// the exact value. Sample `m` draws color `c` from stream `m·k + c - 1`.
pub fn monte_carlo_cross_check(
    word: &PairedWord,
    sigma2: f64,
    generators: &Generators,
    samples: usize,
    master_seed: u64,
    threads: usize,
) -> Result<CrossCheck> {
    if samples < MIN_CROSS_CHECK_SAMPLES {
        return Err(Error::Input(format!(
            "cross-check needs at least {MIN_CROSS_CHECK_SAMPLES} samples, got {samples}"
        )));
    }
    let n = generators
        .dim()
        .ok_or_else(|| Error::Input("generator set has no dimension".into()))?;
    let params = EnsembleParams::gue(n, sigma2, Deformation::zeros(n))?;
    let exact = xi_exact(word, params.sigma_n2(), generators)?;
    let sampler = Sampler::new(params)?;
    let k = word.color_count() as u64;
    // empty separators are skipped rather than multiplied as identities
    let separators: Vec<Option<Mat<Complex64>>> = word
        .separators
        .iter()
        .map(|s| (!s.is_empty()).then(|| generators.product(s, n)).transpose())
        .collect::<Result<_>>()?;
    let one = |m: u64| -> Complex64 {
        let letters: Vec<Mat<Complex64>> = (0..k)
            .map(|c| sampler.sample(master_seed, m * k + c).matrix.to_complex())
            .collect();
        let mut acc: Option<Mat<Complex64>> = None;
        for (t, &c) in word.colors.iter().enumerate() {
            let mut next = match acc {
                None => letters[c - 1].clone(),
                Some(a) => &a * &letters[c - 1],
            };
            if let Some(s) = &separators[t] {
                next = &next * s;
            }
            acc = Some(next);
        }
        normalized_trace(&acc.expect("word has a letter"))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let values: Vec<Complex64> = pool.install(|| (0..samples as u64).into_par_iter().map(one).collect());
    let mean = mean_estimate(&values);
    let z_score = mean.z_score(exact);
    Ok(CrossCheck {
        word: word.clone(),
        n,
        samples,
        mean,
        exact,
        z_score,
        passes: z_score <= 4.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn double_factorial_odd(n: usize) -> usize {
        (1..n).step_by(2).product()
    }

    fn catalan(m: usize) -> usize {
        let mut c = 1usize;
        for i in 0..m {
            c = c * 2 * (2 * i + 1) / (i + 2);
        }
        c
    }

    #[test]
    fn pairing_counts() {
        for n in (2..=12).step_by(2) {
            let all = enumerate_pairings(&vec![1; n]);
            assert_eq!(all.len(), double_factorial_odd(n), "n = {n}");
            let nc = all.iter().filter(|p| is_noncrossing(p)).count();
            assert_eq!(nc, catalan(n / 2), "n = {n}");
        }
        assert!(enumerate_pairings(&[1, 1, 1]).is_empty());
        assert!(enumerate_pairings(&[1, 2]).is_empty());
        let two = enumerate_pairings(&[1, 2, 1, 2]);
        assert_eq!(two.len(), 1);
        assert_eq!(two[0].pairs(), vec![(1, 3), (2, 4)]);
    }

    #[test]
    fn cycle_counts_by_hand() {
        let p = Pairing::from_pairs(2, &[(1, 2)]).unwrap();
        assert_eq!(cycle_structure(&p).len(), 2);
        let p = Pairing::from_pairs(4, &[(1, 2), (3, 4)]).unwrap();
        assert_eq!(cycle_structure(&p).len(), 3);
        assert!(is_noncrossing(&p));
        let p = Pairing::from_pairs(4, &[(1, 3), (2, 4)]).unwrap();
        assert_eq!(cycle_structure(&p).len(), 1);
        assert_eq!(genus_defect(&p), 2);
        assert!(!is_noncrossing(&p));
        assert!(Pairing::from_partner(vec![1, 2, 0]).is_err());
    }

    #[test]
    fn genus_parity_and_crossing_agree() {
        for n in (2..=10).step_by(2) {
            for p in enumerate_pairings(&vec![1; n]) {
                let d = genus_defect(&p);
                assert_eq!(d % 2, 0);
                assert_eq!(d == 0, !has_crossing_arcs(&p), "{:?}", p.pairs());
            }
        }
    }

    #[test]
    fn word_grammar() {
        let w = PairedWord::parse("a w1 b w2^2 a").unwrap();
        assert_eq!(w.colors(), &[1, 2, 2]);
        assert_eq!(w.separators()[0], vec!["b".to_string()]);
        assert!(w.separators()[1].is_empty());
        assert_eq!(w.separators()[2], vec!["a".to_string(), "a".to_string()]);
        assert_eq!(w.to_string(), "w1 b w2 w2 a a");
        assert_eq!(PairedWord::parse(&w.to_string()).unwrap(), w);
        assert_eq!(PairedWord::parse("w^4").unwrap(), PairedWord::power(4).unwrap());
        assert!(PairedWord::parse("a b").is_err());
        assert!(PairedWord::parse("w0 a").is_err());
        assert!(PairedWord::parse("w a^x").is_err());
    }

    fn alternating(n: usize) -> Generators {
        let mut g = Generators::identity(n);
        g.insert_diagonal("a", &GeneratorSpec::AlternatingSign.diagonal(n).unwrap()).unwrap();
        g
    }

    #[test]
    fn closed_forms() {
        let n = 7;
        let s = 0.3;
        let id = Generators::identity(n);
        let nf = n as f64;
        let w2 = xi_exact(&PairedWord::power(2).unwrap(), s, &id).unwrap();
        assert_relative_eq!(w2.re, nf * s, max_relative = 1e-14);
        let w4 = xi_exact(&PairedWord::power(4).unwrap(), s, &id).unwrap();
        assert_relative_eq!(w4.re, (nf * s).powi(2) * (2.0 + nf.powi(-2)), max_relative = 1e-14);

        let mut g = Generators::identity(n);
        let d: Vec<f64> = (0..n).map(|i| i as f64 - 1.5).collect();
        g.insert_diagonal("a", &d).unwrap();
        let tr: f64 = d.iter().sum();
        let waw = xi_exact(&PairedWord::parse("w a w a").unwrap(), s, &g).unwrap();
        assert_relative_eq!(waw.re, s * tr * tr / nf, max_relative = 1e-13);
        let free = free_moment(&PairedWord::parse("w a w a").unwrap(), nf * s, &g).unwrap();
        assert_relative_eq!(free.re, nf * s * (tr / nf).powi(2), max_relative = 1e-13);

        let two = xi_exact(&PairedWord::parse("w1 w2 w1 w2").unwrap(), s, &id).unwrap();
        assert_relative_eq!(two.re, (nf * s).powi(2) / (nf * nf), max_relative = 1e-13);
    }

    #[test]
    fn w4_correction_decays_exactly_like_n_minus_two() {
        let word = PairedWord::power(4).unwrap();
        let r = infinitesimal_check(&word, &[8, 16, 32, 64], 1.0, &|n| Ok(Generators::identity(n))).unwrap();
        for m in &r.results {
            assert_relative_eq!(m.correction.re, (m.n as f64).powi(-2), max_relative = 1e-12);
        }
        assert_relative_eq!(r.slope.unwrap(), -2.0, epsilon = 1e-9);
        assert!(r.passes);
        let w2 = infinitesimal_check(&PairedWord::power(2).unwrap(), &[8, 16, 32], 1.0, &|n| Ok(Generators::identity(n)))
            .unwrap();
        assert!(w2.identically_zero && w2.passes);
    }

    #[test]
    fn free_moment_from_table_matches_matrices() {
        let word = PairedWord::parse("w a w a w a w a").unwrap();
        let mut table = MomentTable::new();
        table.insert("a a", 1.0);
        table.insert("a", 0.0);
        table.insert("a a a a", 1.0);
        table.insert("a a a", 0.0);
        let from_table = free_moment(&word, 1.0, &table).unwrap();
        let from_matrices = free_moment(&word, 1.0, &alternating(16)).unwrap();
        assert_relative_eq!(from_table.re, from_matrices.re, epsilon = 1e-14);
        assert!(free_moment(&PairedWord::parse("w b w").unwrap(), 1.0, &table).is_err());
    }

    #[test]
    fn semicircle_moments_from_genus_zero() {
        let g = Generators::identity(10);
        for m in 1..=5 {
            let parts = xi_exact_by_genus(&PairedWord::power(2 * m).unwrap(), 0.1, &g).unwrap();
            assert_relative_eq!(parts[0].re, catalan(m) as f64, max_relative = 1e-13);
        }
    }

    #[test]
    fn cross_check_needs_enough_samples() {
        let g = Generators::identity(4);
        assert!(monte_carlo_cross_check(&PairedWord::power(2).unwrap(), 1.0, &g, 10, 1, 1).is_err());
    }

    proptest! {
        #[test]
        fn rotation_preserves_xi(n in 2usize..=8, seed in any::<u64>()) {
            let n = 2 * (n / 2);
            let dim = 5;
            let mut g = Generators::identity(dim);
            let mut x = seed;
            let mut next = || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5 };
            let d: Vec<f64> = (0..dim).map(|_| next()).collect();
            g.insert_diagonal("a", &d).unwrap();
            let tokens: Vec<String> = (0..n).map(|t| if t % 2 == 0 { "w a".into() } else { "w".into() }).collect();
            let word = PairedWord::parse(&tokens.join(" ")).unwrap();
            let a = xi_exact(&word, 0.2, &g).unwrap();
            let b = xi_exact(&word.rotated(), 0.2, &g).unwrap();
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }

        #[test]
        fn rotating_a_pairing_preserves_cycle_type(n in 1usize..=4, pick in any::<prop::sample::Index>()) {
            let all = enumerate_pairings(&vec![1; 2 * n]);
            let p = &all[pick.index(all.len())];
            let r = p.rotated();
            prop_assert!(all.contains(&r));
            let mut a: Vec<usize> = cycle_structure(p).iter().map(Vec::len).collect();
            let mut b: Vec<usize> = cycle_structure(&r).iter().map(Vec::len).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
        }
    }
}
