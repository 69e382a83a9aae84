//! Closed-form bounds and the Monte Carlo processes they describe.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

/// Values below this are reported as exact zero.
const UNDERFLOW: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OverlapParams {
    pub n: usize,
    /// Fraction of coordinates on which the two patterns agree.
    pub r: f64,
    pub level: u32,
}

impl OverlapParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::Params(format!("overlap r={} outside [0,1]", self.r)));
        }
        if self.level == 0 {
            return Err(Error::Params("level must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleEstimate {
    pub mean: f64,
    /// Half width of the 95% normal confidence interval.
    pub half_width: f64,
    pub trials: usize,
    pub seed: u64,
    pub min: f64,
    pub max: f64,
}

impl OracleEstimate {
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let k = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / k;
        let var =
            if samples.len() > 1 { samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0) } else { 0.0 };
        Self {
            mean,
            half_width: 1.96 * (var / k).sqrt(),
            trials: samples.len(),
            seed,
            min: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.mean - x).abs() <= self.half_width
    }
}

/// `r^(2^k)`, evaluated as `exp(2^k ln r)` and flushed to zero on underflow.
pub fn pow2k(r: f64, k: u32) -> f64 {
    if r == 0.0 {
        return 0.0;
    }
    let v = (2f64.powi(k as i32) * r.ln()).exp();
    if v < UNDERFLOW {
        0.0
    } else {
        v
    }
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FValue {
    pub ln_value: f64,
    /// Set when `r = 0`, where the recursion is evaluated at its algebraic limit.
    pub limit: bool,
}

impl FValue {
    pub fn value(&self) -> f64 {
        self.ln_value.exp()
    }
}

/// `f(1) = 1 + 1/(1+r)^2`, `f(l) = 1 + (f(l-1) / (1 + r^(2^(l-1))))^2`,
/// carried in log space so deep levels at small `r` stay finite.
pub fn f_recursion(r: f64, level: u32) -> Result<FValue> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Params(format!("r={r} outside [0,1]")));
    }
    if level == 0 {
        return Err(Error::Params("f is defined from level 1".into()));
    }
    let mut ln_f = (1.0 + 1.0 / (1.0 + r).powi(2)).ln();
    for l in 2..=level {
        let x = 2.0 * (ln_f - pow2k(r, l - 1).ln_1p());
        ln_f = softplus(x);
    }
    Ok(FValue { ln_value: ln_f, limit: r == 0.0 })
}

/// `ln(1 + r^(-2^l))`, the right side of the pointwise bound on `f`.
pub fn ln_f_upper_bound(r: f64, level: u32) -> f64 {
    if r == 0.0 {
        return f64::INFINITY;
    }
    softplus(-(2f64.powi(level as i32)) * r.ln())
}

/// Expected number of level-`l` items valid for both patterns.
pub fn expected_shared_pjoins(params: &OverlapParams) -> Result<f64> {
    params.validate()?;
    let OverlapParams { n, r, level } = *params;
    if r == 0.0 {
        return Ok(0.0);
    }
    let scale = n as f64 / 2f64.powi(level as i32);
    let a = pow2k(r, level);
    let b = pow2k(r, level + 1);
    let f = f_recursion(r, level)?;
    let mixed =
        if a == 0.0 || a == 1.0 { 0.0 } else { (2f64.powi(level as i32) * r.ln() + (-a).ln_1p() + f.ln_value).exp() };
    Ok(scale * (b + mixed))
}

/// One run of the two-pattern process: counts of level-`l` items valid for
/// both patterns, for `l = 1..=max_level`.
pub fn shared_pjoins_trial(n: usize, r: f64, max_level: u32, rng: &mut rng::Rng) -> Vec<usize> {
    #[derive(Clone, Copy)]
    struct Node {
        both: bool,
        covered: bool,
    }
    let levels = max_level as usize;

    // First pattern: a balanced random pairing tree over its n basis items.
    let mut first: Vec<Vec<Node>> = vec![(0..n).map(|_| Node { both: rng.gen_bool(r), covered: false }).collect()];
    for l in 1..=levels {
        let mut order: Vec<usize> = (0..first[l - 1].len()).collect();
        order.shuffle(rng);
        let mut next = Vec::with_capacity(order.len() / 2);
        for pair in order.chunks_exact(2) {
            let (a, b) = (first[l - 1][pair[0]], first[l - 1][pair[1]]);
            let both = a.both && b.both;
            if both {
                first[l - 1][pair[0]].covered = true;
                first[l - 1][pair[1]].covered = true;
            }
            next.push(Node { both, covered: false });
        }
        first.push(next);
    }

    // Second pattern: items without a parent it would fire pair up at random.
    let fresh_basis = first[0].iter().filter(|x| !x.both).count();
    let mut pool: Vec<bool> = first[0].iter().filter(|x| x.both && !x.covered).map(|_| true).collect();
    pool.extend(std::iter::repeat_n(false, fresh_basis));
    let mut counts = Vec::with_capacity(levels);
    for l in 1..=levels {
        pool.shuffle(rng);
        let created: Vec<bool> = pool.chunks_exact(2).map(|p| p[0] && p[1]).collect();
        let from_first = first[l].iter().filter(|x| x.both).count();
        counts.push(from_first + created.iter().filter(|&&b| b).count());
        pool = first[l].iter().filter(|x| x.both && !x.covered).map(|_| true).collect();
        pool.extend(created);
    }
    counts
}

pub fn monte_carlo_shared_pjoins(params: &OverlapParams, trials: usize, seed: u64) -> Result<OracleEstimate> {
    params.validate()?;
    if trials < 30 {
        return Err(Error::Params("need at least 30 trials".into()));
    }
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::seeded(rng::derive(seed, t as u64));
            shared_pjoins_trial(params.n, params.r, params.level, &mut rng)[params.level as usize - 1] as f64
        })
        .collect();
    Ok(OracleEstimate::from_samples(&samples, seed))
}

/// Height of a fixed leaf after merging `n` roots pairwise, uniformly at random,
/// until one root is left.
pub fn level_height_trial(n: usize, rng: &mut rng::Rng) -> u32 {
    // Only the position of the tracked root among the k live roots matters.
    let mut pos = 0usize;
    let mut height = 0;
    for k in (2..=n).rev() {
        let i = rng.gen_range(0..k);
        let mut j = rng.gen_range(0..k - 1);
        if j >= i {
            j += 1;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        if pos == lo || pos == hi {
            height += 1;
            pos = lo;
        } else if pos == k - 1 {
            // the root at `hi` is removed by moving the last root into its slot
            pos = hi;
        }
    }
    height
}

/// Histogram indexed by height.
pub fn level_height_distribution(n: usize, trials: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Params("need at least 2 leaves".into()));
    }
    let heights: Vec<u32> = (0..trials)
        .into_par_iter()
        .map(|t| level_height_trial(n, &mut rng::seeded(rng::derive(seed, t as u64))))
        .collect();
    let max = heights.iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0usize; max + 1];
    for h in heights {
        hist[h as usize] += 1;
    }
    Ok(hist)
}

pub fn harmonic(n: usize) -> f64 {
    (1..=n).map(|j| 1.0 / j as f64).sum()
}

/// Mean and sample standard deviation of a height histogram.
pub fn histogram_moments(hist: &[usize]) -> (f64, f64) {
    let k: usize = hist.iter().sum();
    let mean = hist.iter().enumerate().map(|(h, &c)| h as f64 * c as f64).sum::<f64>() / k as f64;
    let var = hist.iter().enumerate().map(|(h, &c)| c as f64 * (h as f64 - mean).powi(2)).sum::<f64>()
        / (k as f64 - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Exact expected height of the merging process: each of the `n - 1`
/// merges involves the tracked root with probability `2/k`.
pub fn exact_height_mean(n: usize) -> f64 {
    (2..=n).map(|k| 2.0 / k as f64).sum()
}

/// Per-presentation round bound `4 ln n + 2 ln n / p`.
pub fn sensor_round_bound(n: f64, p: f64) -> Result<f64> {
    if n < 2.0 || !(p > 0.0 && p <= 1.0) {
        return Err(Error::Params(format!("need n >= 2 and p in (0,1], got n={n} p={p}")));
    }
    Ok(4.0 * n.ln() + 2.0 * n.ln() / p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn f_at_r_one() {
        assert!(close(f_recursion(1.0, 1).unwrap().value(), 1.25, 1e-15));
        assert!(close(f_recursion(1.0, 2).unwrap().value(), 1.390625, 1e-14));
    }

    #[test]
    fn f_matches_unrolled_expression() {
        let r: f64 = 0.9;
        let f1 = 1.0 + 1.0 / (1.0 + r).powi(2);
        let f2 = 1.0 + (f1 / (1.0 + r * r)).powi(2);
        let f3 = 1.0 + (f2 / (1.0 + r.powi(4))).powi(2);
        assert!(close(f_recursion(r, 3).unwrap().value(), f3, 1e-13));
        // frozen: 1.8179338654...
        assert!(close(f3, 1.817_933_865_455, 1e-11), "{f3}");
    }

    #[test]
    fn f_at_zero_is_flagged_limit() {
        let f = f_recursion(0.0, 3).unwrap();
        assert!(f.limit);
        // f(1)=2, f(2)=5, f(3)=26 when every r-power vanishes
        assert!(close(f.value(), 26.0, 1e-12));
        assert!(!f_recursion(0.3, 3).unwrap().limit);
    }

    #[test]
    fn shared_pjoins_closed_form_values() {
        let v = expected_shared_pjoins(&OverlapParams { n: 1000, r: 0.5, level: 1 }).unwrap();
        assert!(close(v, 500.0 * (0.0625 + 0.1875 * (1.0 + 1.0 / 2.25)), 1e-12));
        assert!(close(v, 166.666_666_666_7, 1e-10), "{v}");
        let full = expected_shared_pjoins(&OverlapParams { n: 1000, r: 1.0, level: 1 }).unwrap();
        assert!(close(full, 500.0, 1e-12));
        for level in 1..6 {
            assert_eq!(expected_shared_pjoins(&OverlapParams { n: 64, r: 0.0, level }).unwrap(), 0.0);
        }
    }

    #[test]
    fn level_two_closed_form_agrees_with_expanded_proof_expression() {
        for r in [0.25f64, 0.5, 0.75, 0.9] {
            let g = (1.0 + 1.0 / (1.0 + r).powi(2)) / (1.0 + r * r);
            let eligible = r.powi(4) - r.powi(8) + r.powi(4) * (1.0 - r.powi(4)) * g * g;
            let want = 256.0 * (r.powi(8) + eligible);
            let got = expected_shared_pjoins(&OverlapParams { n: 1024, r, level: 2 }).unwrap();
            assert!(close(got, want, 1e-12), "r={r}: {got} vs {want}");
        }
    }

    #[test]
    fn pow2k_underflows_to_zero() {
        assert_eq!(pow2k(0.5, 20), 0.0);
        assert!(close(pow2k(0.5, 3), 0.5f64.powi(8), 1e-14));
    }

    #[test]
    fn identical_patterns_share_every_level_one_item() {
        let est = monte_carlo_shared_pjoins(&OverlapParams { n: 256, r: 1.0, level: 1 }, 30, 3).unwrap();
        assert_eq!(est.min, 128.0);
        assert_eq!(est.max, 128.0);
    }

    #[test]
    fn monte_carlo_tracks_closed_form_at_level_one() {
        let p = OverlapParams { n: 1024, r: 0.75, level: 1 };
        let est = monte_carlo_shared_pjoins(&p, 200, 99).unwrap();
        let want = expected_shared_pjoins(&p).unwrap();
        assert!(est.contains(want), "{est:?} vs {want}");
        assert!(est.max <= 4.0 * want);
    }

    #[test]
    fn monte_carlo_rejects_few_trials() {
        assert!(monte_carlo_shared_pjoins(&OverlapParams { n: 8, r: 0.5, level: 1 }, 10, 0).is_err());
    }

    #[test]
    fn two_leaves_always_height_one() {
        let hist = level_height_distribution(2, 100, 1).unwrap();
        assert_eq!(hist, vec![0, 100]);
    }

    #[test]
    fn height_process_matches_exact_mean() {
        let n = 256;
        let hist = level_height_distribution(n, 4000, 5).unwrap();
        let (mean, sd) = histogram_moments(&hist);
        let se = sd / (4000f64).sqrt();
        let exact = exact_height_mean(n);
        assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact}");
        // 2(H_n - 1)
        assert!(close(exact, 2.0 * (harmonic(n) - 1.0), 1e-12));
    }

    #[test]
    fn height_never_exceeds_merges() {
        let mut r = rng::seeded(0);
        for _ in 0..50 {
            let h = level_height_trial(9, &mut r);
            assert!((1..=8).contains(&h));
        }
    }

    #[test]
    fn round_bound_values() {
        let e2 = std::f64::consts::E.powi(2);
        assert!(close(sensor_round_bound(e2, 1.0).unwrap(), 12.0, 1e-12));
        let b = sensor_round_bound(100.0, 0.1).unwrap();
        assert!((b - 110.52).abs() < 0.01, "{b}");
        assert!(sensor_round_bound(1.0, 0.5).is_err());
        assert!(sensor_round_bound(10.0, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn f_respects_pointwise_bound(r in 1e-3f64..=1.0, level in 2u32..=8) {
            let f = f_recursion(r, level).unwrap();
            prop_assert!(f.ln_value <= ln_f_upper_bound(r, level) + 1e-12);
        }

        #[test]
        fn chained_inequality(r in 1e-3f64..=1.0, level in 1u32..=8) {
            let a = pow2k(r, level);
            let f = f_recursion(r, level).unwrap().value();
            prop_assert!(a * (1.0 - a) * f <= 1.0 - pow2k(r, level + 1) + 1e-12);
        }

        #[test]
        fn shared_below_level_size(r in 0.0f64..0.999, level in 1u32..=6) {
            let n = 1024;
            let v = expected_shared_pjoins(&OverlapParams { n, r, level }).unwrap();
            prop_assert!(v < n as f64 / 2f64.powi(level as i32));
        }

        #[test]
        fn round_bound_decreasing_in_p(p in 0.01f64..0.99, dp in 0.001f64..0.01) {
            prop_assert!(sensor_round_bound(500.0, p + dp).unwrap() < sensor_round_bound(500.0, p).unwrap());
        }
    }
}
