//! Small summary statistics over per-seed results.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (`n - 1`); zero for a single value.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Pooled standard deviation of two equally sized groups.
pub fn pooled_sd(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    if na + nb <= 2.0 {
        return 0.0;
    }
    let (sa, sb) = (sample_sd(a), sample_sd(b));
    (((na - 1.0) * sa * sa + (nb - 1.0) * sb * sb) / (na + nb - 2.0)).sqrt()
}

/// Mean of the last `window` values (all of them if fewer).
pub fn tail_mean(xs: &[f64], window: usize) -> f64 {
    mean(&xs[xs.len().saturating_sub(window)..])
}
