//! Statistical toolkit used by the experiment drivers and the test suite.
//!
//! Everything here is deliberately plain: one-sample Kolmogorov-Smirnov with
//! the asymptotic p-value, Pearson chi-square tests (goodness of fit and
//! two-sample homogeneity) with automatic merging of thin bins, and the
//! Mann-Kendall trend test (exact null for short series, normal
//! approximation otherwise). Pass/fail thresholds live in one place so every
//! experiment quotes the same numbers.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Central thresholds. A test "passes" when its p-value exceeds the listed
/// floor (the null is retained), and Monte Carlo point estimates must land
/// within `sigma` standard errors of their targets.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Thresholds {
    /// Floor for goodness-of-fit / homogeneity p-values.
    pub p_value: f64,
    /// Floor for trend-test p-values.
    pub trend_p: f64,
    /// Width of Monte Carlo confidence intervals in standard errors.
    pub sigma: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            p_value: 0.01,
            trend_p: 0.05,
            sigma: 3.0,
        }
    }
}

/// Standard normal CDF, computed through the complementary error function
/// so the tails do not lose precision to cancellation.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// CDF of |Z| for Z ~ N(0, sigma^2). Equal to 2 Phi(x / sigma) - 1, which
/// collapses to a single erf evaluation.
pub fn reflected_normal_cdf(x: f64, sigma: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        erf(x / (sigma * std::f64::consts::SQRT_2))
    }
}

// Error function by the classic three-region rational approximation
// (Cody, "Rational Chebyshev approximation for the error function").
// Absolute error is below 1e-16 across the line, comfortably inside the
// 1e-12 budget the acceptance checks assume.

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_6e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_5e3,
    1.857_777_061_846_031_5e-1,
];
const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_7e2,
    1.282_616_526_077_372_3e3,
    2.844_236_833_439_170_6e3,
];
const ERF_C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_376e0,
    6.611_919_063_714_163e1,
    2.986_351_381_974_001_3e2,
    8.819_522_212_417_691e2,
    1.712_047_612_634_070_6e3,
    2.051_078_377_826_071_5e3,
    1.230_339_354_797_997_2e3,
    2.153_115_354_744_038_5e-8,
];
const ERF_D: [f64; 8] = [
    1.574_492_611_070_983_5e1,
    1.176_939_508_913_125e2,
    5.371_811_018_620_099e2,
    1.621_389_574_566_690_2e3,
    3.290_799_235_733_459_7e3,
    4.362_619_090_143_247e3,
    3.439_367_674_143_721_6e3,
    1.230_339_354_803_749_4e3,
];
const ERF_P: [f64; 6] = [
    3.053_266_349_612_323_4e-1,
    3.603_448_999_498_044_4e-1,
    1.257_817_261_112_292_5e-1,
    1.608_378_514_874_227_6e-2,
    6.587_491_615_298_378e-4,
    1.631_538_713_730_209_8e-2,
];
const ERF_Q: [f64; 5] = [
    2.568_520_192_289_822_4e0,
    1.872_952_849_923_460_5e0,
    5.279_051_029_514_284e-1,
    6.051_834_131_244_132e-2,
    2.335_204_976_268_691_8e-3,
];
const INV_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;

/// Error function.
pub fn erf(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = y * y;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else if x < 0.0 {
        erfc(y) - 1.0
    } else {
        1.0 - erfc(y)
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let result = if y <= 0.46875 {
        return 1.0 - erf(x);
    } else if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        exp_split(y) * (num + ERF_C[7]) / (den + ERF_D[7])
    } else if y < 26.5 {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        exp_split(y) * (INV_SQRT_PI - r) / y
    } else {
        0.0
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// exp(-y^2) evaluated as exp(-hi^2) * exp(-(y-hi)(y+hi)) with hi a short
/// prefix of y, which keeps the argument reduction exact.
fn exp_split(y: f64) -> f64 {
    let hi = (y * 16.0).trunc() / 16.0;
    let del = (y - hi) * (y + hi);
    (-hi * hi).exp() * (-del).exp()
}

/// Survival function of the Kolmogorov distribution:
/// 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 t^2), clamped to [0, 1].
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.05 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = 2.0 * (-2.0 * (j as f64) * (j as f64) * t * t).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct KsReport {
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov-Smirnov test of `sample` against the CDF `f`.
/// The p-value is the asymptotic one (fine for the sample sizes used here).
pub fn ks_test(sample: &[f64], f: impl Fn(f64) -> f64) -> KsReport {
    assert!(!sample.is_empty(), "ks_test needs a nonempty sample");
    let mut xs = sample.to_vec();
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let cdf = f(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    KsReport {
        n: xs.len(),
        statistic: d,
        p_value: kolmogorov_survival(n.sqrt() * d),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Bins actually used after merging thin ones.
    pub bins: usize,
}

const MIN_EXPECTED: f64 = 5.0;

/// Pearson goodness-of-fit test of observed counts against cell
/// probabilities. Cells whose expected count falls below 5 are pooled into
/// one remainder cell (and into the largest cell if the remainder is still
/// too thin).
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquareReport {
    assert_eq!(observed.len(), probs.len());
    let n: u64 = observed.iter().sum();
    let nf = n as f64;
    let mut big: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut pool = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = nf * p;
        if e >= MIN_EXPECTED {
            big.push((o as f64, e));
        } else {
            pool.0 += o as f64;
            pool.1 += e;
        }
    }
    if pool.1 > 0.0 || pool.0 > 0.0 {
        if pool.1 >= MIN_EXPECTED {
            big.push(pool);
        } else if let Some(largest) = big
            .iter_mut()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        {
            largest.0 += pool.0;
            largest.1 += pool.1;
        }
    }
    finish_chi_square(&big)
}

/// Two-sample chi-square homogeneity test on parallel category counts.
/// Categories are pooled exactly like in `chi_square_gof`, based on the
/// smaller of the two expected counts.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareReport {
    assert_eq!(a.len(), b.len());
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let (naf, nbf) = (na as f64, nb as f64);
    let total = naf + nbf;
    // Per category, expected counts under homogeneity.
    let mut big: Vec<(f64, f64, f64, f64)> = Vec::new(); // (oa, ea, ob, eb)
    let mut pool = (0.0, 0.0, 0.0, 0.0);
    for (&oa, &ob) in a.iter().zip(b) {
        let both = (oa + ob) as f64;
        let ea = naf * both / total;
        let eb = nbf * both / total;
        if ea.min(eb) >= MIN_EXPECTED {
            big.push((oa as f64, ea, ob as f64, eb));
        } else {
            pool.0 += oa as f64;
            pool.1 += ea;
            pool.2 += ob as f64;
            pool.3 += eb;
        }
    }
    if pool.1 + pool.3 > 0.0 {
        if pool.1.min(pool.3) >= MIN_EXPECTED {
            big.push(pool);
        } else if let Some(largest) = big
            .iter_mut()
            .max_by(|x, y| (x.1 + x.3).partial_cmp(&(y.1 + y.3)).unwrap())
        {
            largest.0 += pool.0;
            largest.1 += pool.1;
            largest.2 += pool.2;
            largest.3 += pool.3;
        }
    }
    let pairs: Vec<(f64, f64)> = big
        .iter()
        .flat_map(|&(oa, ea, ob, eb)| [(oa, ea), (ob, eb)])
        .collect();
    let mut report = finish_chi_square(&pairs);
    // dof for homogeneity with k categories is k - 1, not 2k - 1.
    report.bins = big.len();
    report.dof = big.len().saturating_sub(1);
    report.p_value = chi_square_p(report.statistic, report.dof);
    report
}

fn finish_chi_square(cells: &[(f64, f64)]) -> ChiSquareReport {
    let statistic: f64 = cells
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = cells.len().saturating_sub(1);
    ChiSquareReport {
        statistic,
        dof,
        p_value: chi_square_p(statistic, dof),
        bins: cells.len(),
    }
}

fn chi_square_p(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrendReport {
    pub s: i64,
    pub n: usize,
    /// P(trend statistic >= observed) under the no-trend null: small values
    /// indicate an upward trend.
    pub p_upward: f64,
    /// Same for downward.
    pub p_downward: f64,
}

/// Mann-Kendall trend test. Exact permutation null for n <= 8 (assuming no
/// ties), normal approximation with tie correction beyond that.
pub fn trend_test(series: &[f64]) -> TrendReport {
    let n = series.len();
    assert!(n >= 3, "trend test needs at least 3 points");
    let s = mk_statistic(series);
    let has_ties = {
        let mut v = series.to_vec();
        v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        v.windows(2).any(|w| w[0] == w[1])
    };
    if n <= 8 && !has_ties {
        let (ge, le, total) = exact_mk_tail(n, s);
        TrendReport {
            s,
            n,
            p_upward: ge as f64 / total as f64,
            p_downward: le as f64 / total as f64,
        }
    } else {
        let mut var = (n * (n - 1) * (2 * n + 5)) as f64 / 18.0;
        // Tie correction: subtract t(t-1)(2t+5)/18 per tie group.
        let mut v = series.to_vec();
        v.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && v[j] == v[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            if t > 1.0 {
                var -= t * (t - 1.0) * (2.0 * t + 5.0) / 18.0;
            }
            i = j;
        }
        let sd = var.max(0.0).sqrt();
        let z_up = if sd == 0.0 {
            0.0
        } else if s > 0 {
            (s as f64 - 1.0) / sd
        } else {
            s as f64 / sd
        };
        let z_down = if sd == 0.0 {
            0.0
        } else if s < 0 {
            (s as f64 + 1.0) / sd
        } else {
            s as f64 / sd
        };
        TrendReport {
            s,
            n,
            p_upward: 1.0 - phi(z_up),
            p_downward: phi(z_down),
        }
    }
}

fn mk_statistic(series: &[f64]) -> i64 {
    let mut s = 0i64;
    for i in 0..series.len() {
        for j in i + 1..series.len() {
            s += match series[j].partial_cmp(&series[i]).unwrap() {
                std::cmp::Ordering::Greater => 1,
                std::cmp::Ordering::Less => -1,
                std::cmp::Ordering::Equal => 0,
            };
        }
    }
    s
}

/// Counts permutations of n distinct values with MK statistic >= s and
/// <= s. Returns (count_ge, count_le, n!).
fn exact_mk_tail(n: usize, s: i64) -> (u64, u64, u64) {
    let mut perm: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut ge = 0u64;
    let mut le = 0u64;
    let mut total = 0u64;
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    let mut tally = |p: &[f64]| {
        let stat = mk_statistic(p);
        if stat >= s {
            ge += 1;
        }
        if stat <= s {
            le += 1;
        }
        total += 1;
    };
    tally(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            tally(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (ge, le, total)
}

/// Mean and standard error of a sample.
pub fn mean_and_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_values() {
        assert!((phi(0.0) - 0.5).abs() < 1e-15);
        assert!((phi(1.96) - 0.975_002_104_851_779_5).abs() < 1e-12);
        assert!((reflected_normal_cdf(1.0, 1.0) - 0.682_689_492_137_085_9).abs() < 1e-12);
        assert!((reflected_normal_cdf(2.0, 1.0) - 0.954_499_736_103_641_6).abs() < 1e-12);
        assert!((reflected_normal_cdf(1.0, 0.5) - 0.954_499_736_103_641_6).abs() < 1e-12);
        assert_eq!(reflected_normal_cdf(-0.3, 1.0), 0.0);
    }

    #[test]
    fn kolmogorov_survival_reference_value() {
        assert!((kolmogorov_survival(1.0) - 0.269_999_671_647_849).abs() < 1e-8);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(3.0) < 1e-7);
    }

    #[test]
    fn ks_statistic_by_hand() {
        let r = ks_test(&[0.25, 0.75], |x| x.clamp(0.0, 1.0));
        assert!((r.statistic - 0.25).abs() < 1e-15);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn ks_detects_wrong_distribution() {
        // Squashed uniforms against the uniform CDF.
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 / 1000.0).powi(2)).collect();
        let r = ks_test(&xs, |x| x.clamp(0.0, 1.0));
        assert!(r.p_value < 1e-6, "p {}", r.p_value);
    }

    #[test]
    fn chi_square_reference_values() {
        let even = chi_square_gof(&[50, 50], &[0.5, 0.5]);
        assert!(even.statistic.abs() < 1e-12);
        assert!((even.p_value - 1.0).abs() < 1e-12);

        let off = chi_square_gof(&[60, 40], &[0.5, 0.5]);
        assert!((off.statistic - 4.0).abs() < 1e-12);
        assert!((off.p_value - 0.045_500_263_896_358_57).abs() < 1e-9);
    }

    #[test]
    fn chi_square_pools_thin_cells() {
        // Two cells expect 1 each; they pool into the big cell and the test
        // degenerates to a single cell with p = 1.
        let r = chi_square_gof(&[98, 1, 1], &[0.98, 0.01, 0.01]);
        assert_eq!(r.bins, 1);
        assert_eq!(r.dof, 0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn two_sample_chi_square_is_fair_to_identical_counts() {
        let r = chi_square_two_sample(&[30, 40, 30], &[30, 40, 30]);
        assert!(r.statistic.abs() < 1e-12);
        assert_eq!(r.dof, 2);
        let r2 = chi_square_two_sample(&[300, 100], &[100, 300]);
        assert!(r2.p_value < 1e-9);
    }

    #[test]
    fn mann_kendall_exact_small_n() {
        let up = trend_test(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(up.s, 6);
        assert!((up.p_upward - 1.0 / 24.0).abs() < 1e-12);

        let mixed = trend_test(&[3.0, 1.0, 2.0, 0.0]);
        assert_eq!(mixed.s, -4);
        assert!((mixed.p_upward - 23.0 / 24.0).abs() < 1e-12);
        // P(S <= -4) = (1 + 3) / 24.
        assert!((mixed.p_downward - 4.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn mann_kendall_approximate_large_n() {
        let up: Vec<f64> = (0..20).map(|i| i as f64 + 0.1 * ((i * 7 % 5) as f64)).collect();
        let r = trend_test(&up);
        assert!(r.p_upward < 1e-3);

        let flat: Vec<f64> = (0..20)
            .map(|i| ((i * 2_654_435_761_u64) % 97) as f64)
            .collect();
        let r2 = trend_test(&flat);
        assert!(r2.p_upward > 0.05, "p {}", r2.p_upward);
    }
}
