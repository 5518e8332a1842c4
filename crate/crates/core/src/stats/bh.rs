use crate::error::{Error, Result};

/// Benjamini-Hochberg adjusted p-values, returned in input order.
///
/// `q_(i) = min_{j ≥ i} p_(j)·m/j`, capped at 1. Ties in raw p are ordered by
/// input position, which does not affect the result.
pub fn bh_adjust(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = pvals.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
        return Err(Error::InvalidInput(format!("p-value {p} outside (0, 1]")));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut out = vec![0.0; m];
    let mut running = 1.0f64;
    for (pos, &i) in order.iter().enumerate().rev() {
        // m/m is kept exact; (p·m)/m can round below p
        let q = if pos + 1 == m { pvals[i] } else { pvals[i] * m as f64 / (pos + 1) as f64 };
        running = running.min(q);
        out[i] = running;
    }
    Ok(out)
}
