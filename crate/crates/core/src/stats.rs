//! Statistics used to check simulated keys: chi-squared uniformity, plug-in
//! mutual information, total variation, and binary entropy.

use std::collections::BTreeMap;
use std::hash::Hash;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Shannon entropy of a Bernoulli(p) variable in bits; `h2(0) = h2(1) = 0`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

/// Pearson test of `counts` against the uniform distribution over
/// `counts.len()` categories.
pub fn chi_squared_uniformity(counts: &[u64]) -> ChiSquaredResult {
    let k = counts.len();
    assert!(k >= 2, "need at least two categories");
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / k as f64;
    let statistic = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((k - 1) as f64).expect("positive degrees of freedom");
    ChiSquaredResult {
        statistic,
        degrees_of_freedom: k - 1,
        p_value: dist.sf(statistic),
    }
}

/// Plug-in estimate of `I(X;Y)` in bits from paired samples.
pub fn mutual_information<X, Y>(pairs: impl IntoIterator<Item = (X, Y)>) -> f64
where
    X: Ord + Clone + Hash,
    Y: Ord + Clone + Hash,
{
    let mut joint: BTreeMap<(X, Y), f64> = BTreeMap::new();
    let mut n = 0.0;
    for (x, y) in pairs {
        *joint.entry((x, y)).or_default() += 1.0;
        n += 1.0;
    }
    if n == 0.0 {
        return 0.0;
    }
    let mut px: BTreeMap<X, f64> = BTreeMap::new();
    let mut py: BTreeMap<Y, f64> = BTreeMap::new();
    for ((x, y), c) in &joint {
        *px.entry(x.clone()).or_default() += c;
        *py.entry(y.clone()).or_default() += c;
    }
    joint
        .iter()
        .map(|((x, y), &c)| {
            let pxy = c / n;
            pxy * (pxy / ((px[x] / n) * (py[y] / n))).log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Half the L1 distance between two distributions given as maps.
pub fn total_variation<K: Ord>(p: &BTreeMap<K, f64>, q: &BTreeMap<K, f64>) -> f64 {
    let mut sum = 0.0;
    for (k, a) in p {
        sum += (a - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, b) in q {
        if !p.contains_key(k) {
            sum += b.abs();
        }
    }
    sum / 2.0
}

/// Standard deviation of a sample proportion.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert!((binary_entropy(0.5) - 1.0).abs() < 1e-15);
        assert!((binary_entropy(0.11) - 0.49991596).abs() < 1e-6);
    }

    #[test]
    fn chi_squared_perfectly_uniform() {
        let r = chi_squared_uniformity(&[100, 100, 100, 100]);
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let skew = chi_squared_uniformity(&[1000, 0]);
        assert!(skew.p_value < 1e-10);
    }

    #[test]
    fn chi_squared_matches_closed_form_for_one_dof() {
        // With one degree of freedom, sf(x) = erfc(sqrt(x/2)); for x = 3.841459
        // this is the familiar 5% point.
        let r = chi_squared_uniformity(&[540, 460]);
        assert!((r.statistic - 6.4).abs() < 1e-12);
        let five = ChiSquared::new(1.0).unwrap().sf(3.841_458_820_694_124);
        assert!((five - 0.05).abs() < 1e-9);
    }

    #[test]
    fn mutual_information_extremes() {
        let same: Vec<(u8, u8)> = (0..1000).map(|i| ((i % 2) as u8, (i % 2) as u8)).collect();
        assert!((mutual_information(same) - 1.0).abs() < 1e-12);
        let indep: Vec<(u8, u8)> = (0..1000).map(|i| ((i % 2) as u8, ((i / 2) % 2) as u8)).collect();
        assert!(mutual_information(indep).abs() < 1e-12);
    }

    #[test]
    fn tv_distance() {
        let p = BTreeMap::from([(0, 0.5), (1, 0.5)]);
        let q = BTreeMap::from([(0, 1.0)]);
        assert!((total_variation(&p, &q) - 0.5).abs() < 1e-15);
    }
}
