//! Test-set quality: k-wise coverage of the discrete bits and dispersion of the
//! continuous unit projections.
//!
//! Dispersion is the volume of the largest axis-parallel box inside the unit
//! cube with no sample strictly in its interior. Points on a box boundary do
//! not count, so the supremum is attained by a box whose sides lie on point
//! coordinates or on the cube faces.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::param_space::bits_to_string;
use crate::sampler::SampleSet;

/// Probes used by [`k_epsilon_report`] when the continuous dimension exceeds 2.
pub const DEFAULT_PROBES: usize = 20_000;
pub const DEFAULT_PROBE_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MissingInteraction {
    pub positions: Vec<usize>,
    /// Bit values at `positions`, most significant first.
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwiseReport {
    pub k: usize,
    pub n_bits: usize,
    pub total_combinations: u64,
    pub covered: u64,
    pub missing: Vec<MissingInteraction>,
    pub is_covering_family: bool,
}

/// Visits every k-subset of `0..n` in lexicographic order.
fn for_each_subset(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i as u64 + 1))
}

/// Exhaustive k-wise interaction coverage of binary vectors.
pub fn kwise_coverage(bits: &[Vec<bool>], k: usize) -> Result<KwiseReport> {
    let Some(first) = bits.first() else {
        return Err(domain("k-wise coverage of an empty test set"));
    };
    let n = first.len();
    if bits.iter().any(|b| b.len() != n) {
        return Err(domain("bit vectors differ in length"));
    }
    if k == 0 || k > n {
        return Err(domain(format!("k = {k} must lie in 1..={n}")));
    }
    if k > 20 {
        return Err(domain(format!("k = {k} is too large to enumerate")));
    }
    let patterns = 1usize << k;
    let mut covered = 0u64;
    let mut missing = Vec::new();
    let mut seen = vec![false; patterns];
    for_each_subset(n, k, |positions| {
        seen.iter_mut().for_each(|s| *s = false);
        for v in bits {
            let p = positions.iter().fold(0usize, |acc, &i| (acc << 1) | v[i] as usize);
            seen[p] = true;
        }
        for (p, &hit) in seen.iter().enumerate() {
            if hit {
                covered += 1;
            } else {
                let pattern: Vec<bool> = (0..k).rev().map(|b| (p >> b) & 1 == 1).collect();
                missing.push(MissingInteraction {
                    positions: positions.to_vec(),
                    pattern: bits_to_string(&pattern),
                });
            }
        }
    });
    Ok(KwiseReport {
        k,
        n_bits: n,
        total_combinations: binomial(n, k) * patterns as u64,
        covered,
        is_covering_family: missing.is_empty(),
        missing,
    })
}

/// Number of uniformly random `{0,1}^n` vectors that form a k-wise covering
/// family with probability at least `1 - delta`: `ceil(2^k (k ln n - ln delta))`.
pub fn covering_family_size(k: usize, n: usize, delta: f64) -> Result<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if n < 2 || k == 0 || k > n {
        return Err(domain(format!("need n >= 2 and 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let size = (2f64).powi(k as i32) * (k as f64 * (n as f64).ln() - delta.ln());
    Ok(size.ceil() as u64)
}

/// Axis-parallel box in the unit cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitBox {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl UnitBox {
    pub fn full(d: usize) -> Self {
        Self {
            low: vec![0.0; d],
            high: vec![1.0; d],
        }
    }

    pub fn volume(&self) -> f64 {
        self.low.iter().zip(&self.high).map(|(l, h)| h - l).product()
    }

    /// True when `p` lies strictly inside the box.
    pub fn contains_interior(&self, p: &[f64]) -> bool {
        p.iter()
            .zip(self.low.iter().zip(&self.high))
            .all(|(x, (l, h))| l < x && x < h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum DispersionMethod {
    Exact,
    /// Randomized lower bound from `probe_budget` box-growth probes.
    Estimated {
        probe_budget: usize,
        seed: u64,
        note: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionResult {
    pub value: f64,
    pub witness_box: UnitBox,
    #[serde(flatten)]
    pub method: DispersionMethod,
}

fn check_points(points: &[Vec<f64>], d: usize) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if p.len() != d {
            return Err(domain(format!("point {i} has {} coordinates, expected {d}", p.len())));
        }
        if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(domain(format!("point {i} lies outside the unit cube: {p:?}")));
        }
    }
    Ok(())
}

/// Exact dispersion for `d` in {1, 2}.
///
/// For d = 2, every x-interval between candidate coordinates (point x values
/// and the cube faces) is paired with the tallest y-gap among points strictly
/// inside it. O(n^3) worst case, with pruning once no wider box can win.
pub fn dispersion_exact(points: &[Vec<f64>], d: usize) -> Result<DispersionResult> {
    if !(1..=2).contains(&d) {
        return Err(domain(format!("exact dispersion supports d in {{1, 2}}, got {d}")));
    }
    check_points(points, d)?;
    let exact = |value, witness_box| DispersionResult {
        value,
        witness_box,
        method: DispersionMethod::Exact,
    };
    if points.is_empty() {
        return Ok(exact(1.0, UnitBox::full(d)));
    }
    if d == 1 {
        let mut xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
        xs.extend([0.0, 1.0]);
        xs.sort_by(f64::total_cmp);
        let (lo, hi) = xs
            .windows(2)
            .map(|w| (w[0], w[1]))
            .fold((0.0, 0.0), |best, (a, b)| if b - a > best.1 - best.0 { (a, b) } else { best });
        return Ok(exact(
            hi - lo,
            UnitBox {
                low: vec![lo],
                high: vec![hi],
            },
        ));
    }

    let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut xs: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    xs.extend([0.0, 1.0]);
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut best = 0.0;
    let mut witness = UnitBox::full(2);
    let mut ys: Vec<f64> = Vec::with_capacity(sorted.len() + 2);
    for a in 0..xs.len() - 1 {
        let left = xs[a];
        ys.clear();
        ys.extend([0.0, 1.0]);
        // First point with x > left.
        let mut next = sorted.partition_point(|p| p.0 <= left);
        for &right in &xs[a + 1..] {
            // Insert the points strictly between left and right.
            while next < sorted.len() && sorted[next].0 < right {
                let y = sorted[next].1;
                let at = ys.partition_point(|&v| v < y);
                ys.insert(at, y);
                next += 1;
            }
            let (y_lo, y_hi) = ys
                .windows(2)
                .map(|w| (w[0], w[1]))
                .fold((0.0, 0.0), |g, (u, v)| if v - u > g.1 - g.0 { (u, v) } else { g });
            let width = right - left;
            let height = y_hi - y_lo;
            let area = width * height;
            if area > best {
                best = area;
                witness = UnitBox {
                    low: vec![left, y_lo],
                    high: vec![right, y_hi],
                };
            }
            // Gaps only shrink as the interval widens.
            if height * (1.0 - left) <= best {
                break;
            }
        }
    }
    Ok(exact(best, witness))
}

/// Randomized lower bound on the dispersion in any dimension.
///
/// Each probe picks a random seed point and random growth rates for the 2d
/// faces, then inflates a box around the seed, freezing each face when it
/// reaches a point or the cube boundary. The result is a maximal empty box;
/// the largest over all probes is returned. Deterministic for a fixed seed,
/// independent of the thread count.
pub fn dispersion_estimate(points: &[Vec<f64>], d: usize, probe_budget: usize, seed: u64) -> Result<DispersionResult> {
    if d == 0 {
        return Err(domain("dispersion needs at least one dimension"));
    }
    check_points(points, d)?;
    let method = DispersionMethod::Estimated {
        probe_budget,
        seed,
        note: "lower bound: largest maximal empty box found by randomized growth".into(),
    };
    if points.is_empty() {
        return Ok(DispersionResult {
            value: 1.0,
            witness_box: UnitBox::full(d),
            method,
        });
    }
    const CHUNK: usize = 256;
    let chunks = probe_budget.div_ceil(CHUNK);
    let best = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = CHUNK.min(probe_budget - c * CHUNK);
            let mut best: Option<UnitBox> = None;
            let mut best_volume = -1.0;
            for _ in 0..count {
                let b = grow_probe(points, d, &mut rng);
                let v = b.volume();
                if v > best_volume {
                    best_volume = v;
                    best = Some(b);
                }
            }
            (best_volume, c, best)
        })
        .reduce(
            || (-1.0, usize::MAX, None),
            |a, b| {
                if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            },
        );
    let witness_box = best.2.unwrap_or_else(|| UnitBox {
        low: vec![0.0; d],
        high: vec![0.0; d],
    });
    Ok(DispersionResult {
        value: witness_box.volume(),
        witness_box,
        method,
    })
}

/// Grows one maximal empty box from a random seed point.
fn grow_probe(points: &[Vec<f64>], d: usize, rng: &mut ChaCha8Rng) -> UnitBox {
    let seed: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let mut low = seed.clone();
    let mut high = seed;
    // Rates log-uniform in [1/4, 4]; index 2j is the low face of dim j, 2j+1 the high face.
    let mut rate: Vec<f64> = (0..2 * d)
        .map(|_| (rng.random_range(-1.0..1.0f64) * 4f64.ln()).exp())
        .collect();
    // Points that can no longer enter the interior.
    let mut excluded = vec![false; points.len()];
    while rate.iter().any(|&r| r > 0.0) {
        // Earliest time a face reaches the cube boundary.
        let mut event_t = f64::INFINITY;
        let mut event_face = usize::MAX;
        let mut event_coord = 0.0;
        for j in 0..d {
            if rate[2 * j] > 0.0 {
                let t = low[j] / rate[2 * j];
                if t < event_t {
                    (event_t, event_face, event_coord) = (t, 2 * j, 0.0);
                }
            }
            if rate[2 * j + 1] > 0.0 {
                let t = (1.0 - high[j]) / rate[2 * j + 1];
                if t < event_t {
                    (event_t, event_face, event_coord) = (t, 2 * j + 1, 1.0);
                }
            }
        }
        // Earliest time a point becomes interior: the latest of its per-dimension entry times.
        for (i, p) in points.iter().enumerate() {
            if excluded[i] {
                continue;
            }
            let mut entry = -1.0f64;
            let mut hit: Option<(usize, f64)> = None;
            for j in 0..d {
                let (t, f) = if p[j] <= low[j] {
                    let r = rate[2 * j];
                    (if r > 0.0 { (low[j] - p[j]) / r } else { f64::INFINITY }, Some(2 * j))
                } else if p[j] >= high[j] {
                    let r = rate[2 * j + 1];
                    (if r > 0.0 { (p[j] - high[j]) / r } else { f64::INFINITY }, Some(2 * j + 1))
                } else {
                    (0.0, None)
                };
                // On ties prefer a moving face over an already-satisfied dimension.
                if t > entry || (t == entry && hit.is_none() && f.is_some()) {
                    entry = t;
                    hit = f.map(|f| (f, p[j]));
                }
            }
            if entry.is_infinite() {
                excluded[i] = true;
            } else if let Some((face, coord)) = hit {
                if entry < event_t {
                    (event_t, event_face, event_coord) = (entry, face, coord);
                }
            }
        }
        for j in 0..d {
            low[j] = (low[j] - rate[2 * j] * event_t).max(0.0);
            high[j] = (high[j] + rate[2 * j + 1] * event_t).min(1.0);
        }
        let j = event_face / 2;
        if event_face % 2 == 0 {
            low[j] = event_coord;
        } else {
            high[j] = event_coord;
        }
        rate[event_face] = 0.0;
    }
    UnitBox { low, high }
}

/// Combined k-wise and dispersion summary of a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub kwise: Option<KwiseReport>,
    pub dispersion: Option<DispersionResult>,
}

/// k-wise coverage of the pooled discrete bits (k clamped to the bit count)
/// and dispersion of the pooled continuous projections: exact up to two
/// continuous dimensions, estimated above.
pub fn k_epsilon_report(samples: &SampleSet, k: usize) -> Result<CoverageReport> {
    if samples.is_empty() {
        return Err(domain("coverage of an empty sample set"));
    }
    let n_bits = samples.space.bit_width();
    let kwise = if n_bits == 0 {
        None
    } else {
        Some(kwise_coverage(&samples.bit_vectors()?, k.clamp(1, n_bits))?)
    };
    let d = samples.space.continuous().len();
    let dispersion = if d == 0 {
        None
    } else {
        Some(dispersion_of(&samples.unit_points()?, d)?)
    };
    Ok(CoverageReport { kwise, dispersion })
}

/// Exact dispersion where available, otherwise the default estimate.
pub fn dispersion_of(points: &[Vec<f64>], d: usize) -> Result<DispersionResult> {
    if d <= 2 {
        dispersion_exact(points, d)
    } else {
        dispersion_estimate(points, d, DEFAULT_PROBES, DEFAULT_PROBE_SEED)
    }
}
