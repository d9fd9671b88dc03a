//! Test-vector generation.
//!
//! Continuous coordinates come from the Halton sequence (one prime base per
//! continuous parameter, assigned 2, 3, 5, ... in declaration order, indices
//! starting at 1) or from uniform draws; discrete coordinates are always drawn
//! uniformly from a seeded ChaCha stream. On top of a scored base set,
//! [`local_search`] runs short simulated-annealing chains from the best
//! samples.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Error, Result};
use crate::param_space::{ParameterSpace, TestVector};

/// Standard deviation of the Gaussian neighbour step, as a fraction of each range.
pub const NEIGHBOR_SIGMA: f64 = 0.05;
/// Probability that a discrete coordinate is resampled in a neighbour step.
pub const DISCRETE_RESAMPLE_P: f64 = 0.2;
/// Initial temperature as a fraction of the base set's score range.
pub const INITIAL_TEMPERATURE_FRACTION: f64 = 0.1;
pub const COOLING: f64 = 0.5;

/// Digit reversal of `index` in `base`, read as a base-`base` fraction.
pub fn radical_inverse(base: u64, index: u64) -> Result<f64> {
    if base < 2 {
        return Err(domain(format!("radical inverse base must be >= 2, got {base}")));
    }
    if index == 0 {
        return Err(domain("Halton indices start at 1"));
    }
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut result = 0.0;
    let mut i = index;
    while i > 0 {
        result += (i % base) as f64 * scale;
        i /= base;
        scale *= inv;
    }
    Ok(result)
}

/// The first `count` primes.
pub fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= candidate).all(|&p| candidate % p != 0) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

fn is_prime(n: u64) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| n % d != 0)
}

pub fn halton_point(index: u64, bases: &[u64]) -> Result<Vec<f64>> {
    for (i, b) in bases.iter().enumerate() {
        if !is_prime(*b) {
            return Err(config(format!("Halton base {b} is not prime")));
        }
        if bases[..i].contains(b) {
            return Err(config(format!("duplicate Halton base {b}")));
        }
    }
    bases.iter().map(|&b| radical_inverse(b, index)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "halton")]
    Halton,
    #[serde(rename = "random+opt")]
    RandomOpt,
    #[serde(rename = "halton+opt")]
    HaltonOpt,
}

impl StrategyKind {
    pub fn is_search(self) -> bool {
        matches!(self, StrategyKind::RandomOpt | StrategyKind::HaltonOpt)
    }

    /// The plain sampling kind underneath a search strategy.
    pub fn base(self) -> StrategyKind {
        match self {
            StrategyKind::RandomOpt => StrategyKind::Random,
            StrategyKind::HaltonOpt => StrategyKind::Halton,
            k => k,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Random => "random",
            StrategyKind::Halton => "halton",
            StrategyKind::RandomOpt => "random+opt",
            StrategyKind::HaltonOpt => "halton+opt",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(StrategyKind::Random),
            "halton" => Ok(StrategyKind::Halton),
            "random+opt" => Ok(StrategyKind::RandomOpt),
            "halton+opt" => Ok(StrategyKind::HaltonOpt),
            other => Err(config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    #[default]
    Maximize,
    Minimize,
}

impl Objective {
    /// Positive when `candidate` improves on `current`.
    fn gain(self, current: f64, candidate: f64) -> f64 {
        match self {
            Objective::Maximize => candidate - current,
            Objective::Minimize => current - candidate,
        }
    }

    pub fn better(self, a: f64, b: f64) -> bool {
        self.gain(b, a) > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub objective: Objective,
    pub budget: usize,
    pub base_count: usize,
    pub top_m: usize,
    pub sa_iters: usize,
}

impl Strategy {
    pub fn plain(kind: StrategyKind, n: usize) -> Self {
        Self {
            kind: kind.base(),
            objective: Objective::Maximize,
            budget: n,
            base_count: n,
            top_m: 0,
            sa_iters: 0,
        }
    }

    pub fn search(
        kind: StrategyKind,
        objective: Objective,
        base_count: usize,
        top_m: usize,
        sa_iters: usize,
    ) -> Self {
        let kind = match kind {
            StrategyKind::Random => StrategyKind::RandomOpt,
            StrategyKind::Halton => StrategyKind::HaltonOpt,
            k => k,
        };
        Self {
            kind,
            objective,
            budget: base_count + top_m * sa_iters,
            base_count,
            top_m,
            sa_iters,
        }
    }

    /// The defaults used for the pedestrian study: 85 base samples, 5 chains of 3 steps.
    pub fn default_search(kind: StrategyKind, objective: Objective) -> Self {
        Self::search(kind, objective, 85, 5, 3)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = if self.kind.is_search() {
            self.base_count + self.top_m * self.sa_iters
        } else {
            self.base_count
        };
        if self.budget != expected {
            return Err(config(format!(
                "strategy {}: budget {} does not equal base_count {} + top_m {} x sa_iters {}",
                self.kind, self.budget, self.base_count, self.top_m, self.sa_iters
            )));
        }
        Ok(())
    }
}

/// Where a sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum Origin {
    /// Halton sequence index (continuous coordinates).
    Halton { halton_index: u64 },
    /// Uniform draw; `draw` counts RNG draws consumed before this vector.
    Random { draw: u64 },
    /// Annealing candidate: chain number, step within the chain, and the sample it perturbed.
    Search { chain: usize, step: usize, parent: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// 1-based position in the set.
    pub index: usize,
    pub vector: TestVector,
    pub origin: Origin,
    pub kind: StrategyKind,
    pub score: Option<f64>,
    /// The evaluator failed on this vector.
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub space: ParameterSpace,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(space: ParameterSpace) -> Self {
        Self {
            space,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn vectors(&self) -> impl Iterator<Item = &TestVector> {
        self.samples.iter().map(|s| &s.vector)
    }

    /// Continuous projections in unit coordinates.
    pub fn unit_points(&self) -> Result<Vec<Vec<f64>>> {
        self.vectors()
            .map(|v| self.space.normalize(v).map(|e| e.unit))
            .collect()
    }

    pub fn bit_vectors(&self) -> Result<Vec<Vec<bool>>> {
        self.vectors()
            .map(|v| self.space.normalize(v).map(|e| e.bits))
            .collect()
    }

    fn push(&mut self, vector: TestVector, origin: Origin, kind: StrategyKind, score: Option<f64>, failed: bool) {
        let index = self.samples.len() + 1;
        self.samples.push(Sample {
            index,
            vector,
            origin,
            kind,
            score,
            failed,
        });
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// `index` then one column per parameter in declaration order; reals with 6 decimals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["index".to_owned()];
        header.extend(self.space.names().into_iter().map(str::to_owned));
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let mut row = vec![s.index.to_string()];
            row.extend(
                self.space
                    .order()
                    .iter()
                    .map(|slot| self.space.format_value(&s.vector, *slot)),
            );
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads vectors from any CSV holding one column per parameter of `space`
/// (a sample file or a campaign report). Other columns are ignored.
pub fn read_points_csv<R: std::io::Read>(space: &ParameterSpace, input: R) -> Result<SampleSet> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    let columns: Vec<usize> = space
        .names()
        .iter()
        .map(|n| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| config(format!("points file has no column for parameter `{n}`")))
        })
        .collect::<Result<_>>()?;
    let index_col = header.iter().position(|h| h == "index");
    let mut set = SampleSet::new(space.clone());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let mut v = TestVector::default();
        for (&slot, &c) in space.order().iter().zip(&columns) {
            let name = space.name_of(slot);
            let cell = rec.get(c).unwrap_or_default();
            v = match slot {
                crate::param_space::ParamSlot::Discrete(_) => v.with_discrete(name, cell),
                crate::param_space::ParamSlot::Continuous(_) => v.with_continuous(
                    name,
                    cell.parse()
                        .map_err(|_| config(format!("row {}: `{name}` is not a number: {cell:?}", row + 1)))?,
                ),
            };
        }
        space.validate(&v)?;
        let index = match index_col.and_then(|c| rec.get(c)).and_then(|x| x.parse().ok()) {
            Some(i) => i,
            None => row + 1,
        };
        set.samples.push(Sample {
            index,
            vector: v,
            origin: Origin::Halton { halton_index: index as u64 },
            kind: StrategyKind::Halton,
            score: None,
            failed: false,
        });
    }
    Ok(set)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Draws a plain (non-search) sample set of `strategy.base_count` vectors.
///
/// Continuous coordinates depend only on the Halton index for `halton`;
/// discrete coordinates, and continuous ones for `random`, come from a
/// ChaCha8 stream seeded with `seed`. Per vector the continuous draws are
/// taken first, then the discrete ones, both in declaration order.
pub fn sample_mixed(space: &ParameterSpace, strategy: &Strategy, seed: u64) -> Result<SampleSet> {
    let n = strategy.base_count;
    let kind = strategy.kind.base();
    let bases = primes(space.continuous().len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws = 0u64;
    let mut set = SampleSet::new(space.clone());
    for i in 1..=n as u64 {
        let draw_before = draws;
        let unit = match kind {
            StrategyKind::Halton => halton_point(i, &bases)?,
            _ => {
                draws += bases.len() as u64;
                (0..bases.len()).map(|_| rng.random::<f64>()).collect()
            }
        };
        let indices: Vec<usize> = space
            .discrete()
            .iter()
            .map(|p| {
                draws += 1;
                rng.random_range(0..p.values.len())
            })
            .collect();
        let vector = space.from_indices(&indices, &unit)?;
        let origin = match kind {
            StrategyKind::Halton => Origin::Halton { halton_index: i },
            _ => Origin::Random { draw: draw_before },
        };
        set.push(vector, origin, kind, None, false);
    }
    Ok(set)
}

/// Result of evaluating one candidate; `Err` marks a failed evaluation.
pub type Evaluation = std::result::Result<f64, String>;

#[derive(Clone, Copy)]
enum Parent {
    Base(usize),
    Step(usize),
}

struct ChainStep {
    vector: TestVector,
    parent: Parent,
    step: usize,
    outcome: Evaluation,
}

/// Simulated-annealing refinement around the best-scored samples of `base`.
///
/// Selects the `top_m` best samples by the strategy's objective and runs
/// `sa_iters` Metropolis steps from each. Every evaluated candidate is
/// appended with its score. Chains use independent RNG streams, so running
/// them concurrently does not change the result.
pub fn local_search<F>(base: &SampleSet, score_of: F, strategy: &Strategy, seed: u64) -> Result<SampleSet>
where
    F: Fn(&TestVector) -> Evaluation + Sync,
{
    if !strategy.kind.is_search() {
        return Err(config(format!(
            "local search needs a +opt strategy, got {}",
            strategy.kind
        )));
    }
    if let Some(s) = base.samples.iter().find(|s| s.score.is_none() && !s.failed) {
        return Err(config(format!("base sample {} has no score", s.index)));
    }
    let mut out = base.clone();
    if strategy.sa_iters == 0 || strategy.top_m == 0 {
        return Ok(out);
    }

    let scored: Vec<(usize, f64)> = base
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.score.filter(|x| x.is_finite() && !s.failed).map(|x| (i, x)))
        .collect();
    let mut ranked = scored.clone();
    // Stable sort keeps the earlier sample first on ties.
    ranked.sort_by(|a, b| match strategy.objective {
        Objective::Maximize => b.1.total_cmp(&a.1),
        Objective::Minimize => a.1.total_cmp(&b.1),
    });
    ranked.truncate(strategy.top_m);

    let (lo, hi) = scored
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, x)| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    let t0 = if range.is_finite() && range > 0.0 {
        INITIAL_TEMPERATURE_FRACTION * range
    } else {
        1.0
    };

    let space = &base.space;
    let chains: Vec<Result<Vec<ChainStep>>> = ranked
        .par_iter()
        .enumerate()
        .map(|(chain, &(start, start_score))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chain as u64 + 1);
            let mut current = base.samples[start].vector.clone();
            let mut current_score = start_score;
            let mut current_from = Parent::Base(base.samples[start].index);
            let mut steps = Vec::with_capacity(strategy.sa_iters);
            for step in 0..strategy.sa_iters {
                let candidate = neighbor(space, &current, &mut rng)?;
                let outcome = score_of(&candidate);
                let temperature = t0 * COOLING.powi(step as i32);
                let parent = current_from;
                if let Ok(score) = outcome {
                    let gain = strategy.objective.gain(current_score, score);
                    let u: f64 = rng.random();
                    if score.is_finite() && (gain >= 0.0 || u < (gain / temperature).exp()) {
                        current = candidate.clone();
                        current_score = score;
                        current_from = Parent::Step(step);
                    }
                }
                steps.push(ChainStep {
                    vector: candidate,
                    parent,
                    step,
                    outcome,
                });
            }
            Ok(steps)
        })
        .collect();

    for (chain, steps) in chains.into_iter().enumerate() {
        let steps = steps?;
        let first = out.samples.len() + 1;
        for s in steps {
            let parent = match s.parent {
                Parent::Base(index) => index,
                Parent::Step(step) => first + step,
            };
            let origin = Origin::Search {
                chain,
                step: s.step,
                parent,
            };
            match s.outcome {
                Ok(score) => out.push(s.vector, origin, strategy.kind, Some(score), false),
                Err(_) => out.push(s.vector, origin, strategy.kind, None, true),
            }
        }
    }
    Ok(out)
}

/// Gaussian step on each continuous unit coordinate (clamped to the cube) and
/// independent resampling of each discrete coordinate.
fn neighbor(space: &ParameterSpace, v: &TestVector, rng: &mut ChaCha8Rng) -> Result<TestVector> {
    let normal = Normal::new(0.0, NEIGHBOR_SIGMA).expect("valid sigma");
    let enc = space.normalize(v)?;
    let unit: Vec<f64> = enc
        .unit
        .iter()
        .map(|u| (u + normal.sample(rng)).clamp(0.0, 1.0))
        .collect();
    let mut indices = space.indices(v)?;
    for (idx, p) in indices.iter_mut().zip(space.discrete()) {
        if rng.random::<f64>() < DISCRETE_RESAMPLE_P {
            *idx = rng.random_range(0..p.values.len());
        }
    }
    space.from_indices(&indices, &unit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param_space::ParamDecl;

    fn two_d() -> ParameterSpace {
        ParameterSpace::new([
            ParamDecl::Interval {
                name: "a".into(),
                low: 0.0,
                high: 1.0,
            },
            ParamDecl::Interval {
                name: "b".into(),
                low: 0.0,
                high: 1.0,
            },
        ])
        .unwrap()
    }

    #[test]
    fn radical_inverse_values() {
        assert_eq!(radical_inverse(2, 1).unwrap(), 0.5);
        assert!((radical_inverse(3, 2).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((radical_inverse(5, 5).unwrap() - 0.04).abs() < 1e-15);
        assert!((radical_inverse(5, 6).unwrap() - 0.24).abs() < 1e-15);
        assert!(radical_inverse(2, 0).is_err());
    }

    #[test]
    fn first_terms_are_multiples_of_inverse_base() {
        for b in [2u64, 3, 5, 7, 11] {
            for i in 1..b {
                let r = radical_inverse(b, i).unwrap();
                assert!((r - i as f64 / b as f64).abs() < 1e-15);
            }
            for i in 1..500 {
                let r = radical_inverse(b, i).unwrap();
                assert!(r > 0.0 && r < 1.0);
            }
        }
    }

    #[test]
    fn halton_points() {
        let p = halton_point(1, &[2, 3, 5]).unwrap();
        assert_eq!(p[0], 0.5);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p[2] - 0.2).abs() < 1e-15);
        assert_eq!(halton_point(4, &[2]).unwrap(), vec![0.125]);
        assert!(halton_point(7, &[]).unwrap().is_empty());
        assert!(halton_point(1, &[2, 2]).is_err());
        assert!(halton_point(1, &[4]).is_err());
    }

    #[test]
    fn primes_in_order() {
        assert_eq!(primes(6), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn halton_two_dims() {
        let set = sample_mixed(&two_d(), &Strategy::plain(StrategyKind::Halton, 2), 9).unwrap();
        let pts = set.unit_points().unwrap();
        assert!((pts[0][0] - 0.5).abs() < 1e-12 && (pts[0][1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((pts[1][0] - 0.25).abs() < 1e-12 && (pts[1][1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn halton_continuous_independent_of_seed() {
        let space = ParameterSpace::new([
            ParamDecl::Interval {
                name: "x".into(),
                low: 0.0,
                high: 5.0,
            },
            ParamDecl::Enum {
                name: "e".into(),
                values: vec!["p".into(), "q".into(), "r".into()],
            },
        ])
        .unwrap();
        let s = Strategy::plain(StrategyKind::Halton, 50);
        let a = sample_mixed(&space, &s, 1).unwrap();
        let b = sample_mixed(&space, &s, 2).unwrap();
        assert_eq!(a.unit_points().unwrap(), b.unit_points().unwrap());
        assert_ne!(a.bit_vectors().unwrap(), b.bit_vectors().unwrap());
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = Strategy::plain(StrategyKind::Random, 40);
        let a = sample_mixed(&two_d(), &s, 77).unwrap();
        let b = sample_mixed(&two_d(), &s, 77).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = sample_mixed(&two_d(), &s, 78).unwrap();
        assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn zero_budget_is_empty() {
        let set = sample_mixed(&two_d(), &Strategy::plain(StrategyKind::Halton, 0), 0).unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn discrete_draws_are_uniform() {
        let space = ParameterSpace::new([ParamDecl::Enum {
            name: "c".into(),
            values: vec!["a".into(), "b".into(), "c".into(), "d".into()],
        }])
        .unwrap();
        let set = sample_mixed(&space, &Strategy::plain(StrategyKind::Halton, 1000), 2024).unwrap();
        let mut counts = [0usize; 4];
        for v in set.vectors() {
            counts[space.discrete()[0].index_of(v.symbol("c").unwrap()).unwrap()] += 1;
        }
        // Binomial(1000, 1/4): sigma = sqrt(1000 * 0.25 * 0.75).
        let sigma = (1000.0f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 250.0).abs() < 4.0 * sigma, "{counts:?}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - 250.0).powi(2) / 250.0).sum();
        // 3 degrees of freedom, p = 0.001 critical value.
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn strategy_budget_rule() {
        let s = Strategy::default_search(StrategyKind::Halton, Objective::Maximize);
        assert_eq!(s.budget, 100);
        assert!(s.validate().is_ok());
        let mut bad = s;
        bad.budget = 99;
        assert!(bad.validate().is_err());
        assert!(Strategy::plain(StrategyKind::Random, 10).validate().is_ok());
        assert_eq!("halton+opt".parse::<StrategyKind>().unwrap(), StrategyKind::HaltonOpt);
    }

    fn scored(set: &SampleSet, f: impl Fn(&TestVector) -> f64) -> SampleSet {
        let mut out = set.clone();
        for s in &mut out.samples {
            s.score = Some(f(&s.vector));
        }
        out
    }

    #[test]
    fn no_annealing_steps_is_identity() {
        let base = sample_mixed(&two_d(), &Strategy::plain(StrategyKind::Halton, 20), 0).unwrap();
        let base = scored(&base, |v| v.real("a").unwrap());
        let s = Strategy::search(StrategyKind::Halton, Objective::Maximize, 20, 5, 0);
        let out = local_search(&base, |v| Ok(v.real("a").unwrap()), &s, 3).unwrap();
        assert_eq!(out, base);
    }

    #[test]
    fn annealing_keeps_incumbent() {
        let target = [0.31, 0.77];
        let f = |v: &TestVector| {
            let a = v.real("a").unwrap() - target[0];
            let b = v.real("b").unwrap() - target[1];
            -(a * a + b * b)
        };
        for seed in 0..20 {
            let base = sample_mixed(&two_d(), &Strategy::plain(StrategyKind::Random, 85), seed).unwrap();
            let base = scored(&base, f);
            let s = Strategy::default_search(StrategyKind::Random, Objective::Maximize);
            let out = local_search(&base, |v| Ok(f(v)), &s, seed).unwrap();
            assert_eq!(out.len(), 100);
            let best = |set: &SampleSet| {
                set.samples
                    .iter()
                    .filter_map(|s| s.score)
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            assert!(best(&out) >= best(&base));
            assert!(out.samples.windows(2).all(|w| w[0].index < w[1].index));
        }
    }

    #[test]
    fn failed_evaluations_are_recorded() {
        let base = sample_mixed(&two_d(), &Strategy::plain(StrategyKind::Halton, 10), 0).unwrap();
        let base = scored(&base, |v| v.real("a").unwrap());
        let s = Strategy::search(StrategyKind::Halton, Objective::Minimize, 10, 2, 4);
        let out = local_search(&base, |_| Err("boom".into()), &s, 1).unwrap();
        assert_eq!(out.len(), 18);
        assert!(out.samples[10..].iter().all(|s| s.failed && s.score.is_none()));
        // All steps of a failing chain perturb the chain's seed sample.
        for s in &out.samples[10..] {
            let Origin::Search { parent, .. } = s.origin else { panic!() };
            assert!(parent <= 10);
        }
    }

    #[test]
    fn unscored_base_is_rejected() {
        let base = sample_mixed(&two_d(), &Strategy::plain(StrategyKind::Halton, 5), 0).unwrap();
        let s = Strategy::search(StrategyKind::Halton, Objective::Maximize, 5, 1, 1);
        assert!(local_search(&base, |_| Ok(0.0), &s, 0).is_err());
    }

    #[test]
    fn search_is_deterministic_across_thread_counts() {
        let base = sample_mixed(&two_d(), &Strategy::plain(StrategyKind::Halton, 30), 0).unwrap();
        let f = |v: &TestVector| (v.real("a").unwrap() * 7.0).sin() + v.real("b").unwrap();
        let base = scored(&base, f);
        let s = Strategy::search(StrategyKind::Halton, Objective::Maximize, 30, 4, 5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| local_search(&base, |v| Ok(f(v)), &s, 11).unwrap())
        };
        assert_eq!(run(1).to_json().unwrap(), run(4).to_json().unwrap());
    }

    #[test]
    fn csv_layout() {
        let set = sample_mixed(&two_d(), &Strategy::plain(StrategyKind::Halton, 2), 0).unwrap();
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "index,a,b\n1,0.500000,0.333333\n2,0.250000,0.666667\n");
    }
}
