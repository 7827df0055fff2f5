//! Pearson chi-squared tests used by the harness.

use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Minimum expected count per cell after pooling.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquaredResult {
    fn degenerate() -> Self {
        ChiSquaredResult {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        }
    }

    fn new(statistic: f64, dof: usize) -> Self {
        if dof == 0 {
            return Self::degenerate();
        }
        let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
        ChiSquaredResult {
            statistic,
            dof,
            p_value: dist.sf(statistic).clamp(0.0, 1.0),
        }
    }
}

/// Upper-tail probability of a chi-squared statistic.
pub fn chi_squared_sf(statistic: f64, dof: usize) -> f64 {
    ChiSquaredResult::new(statistic, dof).p_value
}

/// Goodness of fit of `observed` counts against `expected` counts.
pub fn goodness_of_fit(observed: &[u64], expected: &[f64]) -> ChiSquaredResult {
    assert_eq!(observed.len(), expected.len());
    let statistic = observed
        .iter()
        .zip(expected)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum();
    ChiSquaredResult::new(statistic, observed.len().saturating_sub(1))
}

/// Goodness of fit of `counts` against the discrete uniform distribution.
pub fn uniformity(counts: &[u64]) -> ChiSquaredResult {
    let total: u64 = counts.iter().sum();
    let e = total as f64 / counts.len() as f64;
    goodness_of_fit(counts, &vec![e; counts.len()])
}

/// Pearson test of independence on an `r x c` contingency table. Empty
/// rows and columns are dropped before counting degrees of freedom.
pub fn independence(table: &[Vec<u64>]) -> ChiSquaredResult {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    if rows.is_empty() {
        return ChiSquaredResult::degenerate();
    }
    let n_cols = rows[0].len();
    let col_tot: Vec<u64> = (0..n_cols).map(|c| rows.iter().map(|r| r[c]).sum()).collect();
    let cols: Vec<usize> = (0..n_cols).filter(|&c| col_tot[c] > 0).collect();
    let total: f64 = col_tot.iter().sum::<u64>() as f64;
    let mut statistic = 0.0;
    for row in &rows {
        let rt: f64 = row.iter().sum::<u64>() as f64;
        for &c in &cols {
            let e = rt * col_tot[c] as f64 / total;
            let d = row[c] as f64 - e;
            statistic += d * d / e;
        }
    }
    let dof = (rows.len() - 1) * cols.len().saturating_sub(1);
    ChiSquaredResult::new(statistic, dof)
}

/// Two-sample chi-squared test of homogeneity on categorical counts.
///
/// Categories are visited in key order and merged with their neighbours
/// until every pooled cell has expected count at least [`MIN_EXPECTED`] on
/// both sides; a short tail is folded into the last pooled cell. For
/// ordered keys (lengths) this keeps pooled cells contiguous.
pub fn two_sample<K: Ord>(a: &BTreeMap<K, u64>, b: &BTreeMap<K, u64>) -> ChiSquaredResult {
    let n_a: u64 = a.values().sum();
    let n_b: u64 = b.values().sum();
    if n_a == 0 || n_b == 0 {
        return ChiSquaredResult::degenerate();
    }
    let n = (n_a + n_b) as f64;
    let min_side = n_a.min(n_b) as f64;

    let mut keys: Vec<&K> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();

    let mut cells: Vec<(u64, u64)> = Vec::new();
    let mut open = (0u64, 0u64);
    for k in keys {
        open.0 += a.get(k).copied().unwrap_or(0);
        open.1 += b.get(k).copied().unwrap_or(0);
        if min_side * (open.0 + open.1) as f64 / n >= MIN_EXPECTED {
            cells.push(open);
            open = (0, 0);
        }
    }
    if open.0 + open.1 > 0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += open.0;
                last.1 += open.1;
            }
            None => cells.push(open),
        }
    }
    if cells.len() < 2 {
        return ChiSquaredResult::degenerate();
    }
    let mut statistic = 0.0;
    for &(ca, cb) in &cells {
        let tot = (ca + cb) as f64;
        for (obs, side) in [(ca, n_a), (cb, n_b)] {
            let e = side as f64 * tot / n;
            let d = obs as f64 - e;
            statistic += d * d / e;
        }
    }
    ChiSquaredResult::new(statistic, cells.len() - 1)
}

/// Bonferroni-combined p-value of a family of tests.
pub fn bonferroni(p_values: &[f64]) -> f64 {
    let min = p_values.iter().copied().fold(1.0, f64::min);
    (min * p_values.len().max(1) as f64).min(1.0)
}

/// Build a count histogram.
pub fn histogram<K: Ord, I: IntoIterator<Item = K>>(items: I) -> BTreeMap<K, u64> {
    let mut h = BTreeMap::new();
    for k in items {
        *h.entry(k).or_insert(0) += 1;
    }
    h
}
