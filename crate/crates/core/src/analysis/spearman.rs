use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    /// `None` when either input is constant or there are too few observations.
    pub rho: Option<f64>,
    /// Two-sided, from the t approximation. `None` below three observations.
    pub p_value: Option<f64>,
    pub n: usize,
}

impl CorrelationResult {
    pub fn undefined(n: usize) -> Self {
        CorrelationResult { rho: None, p_value: None, n }
    }
}

/// Average ranks, 1-based; tied values share the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) hold equal values
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn check(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Validation(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::Validation("need at least two observations".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Validation("NaN in correlation input".into()));
    }
    Ok(())
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of `rho` against a t distribution with `n - 2` degrees of freedom.
pub fn t_test_p_value(rho: f64, n: usize) -> Option<f64> {
    if n < 3 {
        return None;
    }
    if rho.abs() >= 1.0 {
        return Some(0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).ok()?;
    Some((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// Spearman's rank correlation with midranks for ties: the product-moment
/// correlation of the two rank vectors.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<CorrelationResult> {
    check(x, y)?;
    let n = x.len();
    let rho = pearson(&midranks(x), &midranks(y));
    Ok(CorrelationResult { rho, p_value: rho.and_then(|r| t_test_p_value(r, n)), n })
}

/// `1 - 6 Σ d² / (n (n² - 1))`. Exact only without ties; with ties it
/// disagrees with [`spearman_rho`].
pub fn spearman_closed_form(x: &[f64], y: &[f64]) -> Result<f64> {
    check(x, y)?;
    let n = x.len() as f64;
    let d2: f64 = midranks(x)
        .iter()
        .zip(midranks(y))
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

/// Exact two-sided permutation p-value by enumerating every reordering of `y`.
/// Limited to `n <= 10`.
pub fn permutation_p_value(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    check(x, y)?;
    if x.len() > 10 {
        return Err(Error::Validation("exact permutation test limited to n <= 10".into()));
    }
    let rx = midranks(x);
    let ry = midranks(y);
    let Some(observed) = pearson(&rx, &ry) else {
        return Ok(None);
    };
    let mut perm = ry.clone();
    let (mut extreme, mut total) = (0u64, 0u64);
    heap_permutations(&mut perm, &mut |p| {
        total += 1;
        if pearson(&rx, p).is_some_and(|r| r.abs() >= observed.abs() - 1e-12) {
            extreme += 1;
        }
    });
    Ok(Some(extreme as f64 / total as f64))
}

fn heap_permutations(v: &mut [f64], visit: &mut impl FnMut(&[f64])) {
    let n = v.len();
    let mut c = vec![0usize; n];
    visit(v);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                v.swap(0, i);
            } else {
                v.swap(c[i], i);
            }
            visit(v);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}
