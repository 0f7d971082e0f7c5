use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Mean and floored population standard deviation of the `top_n` highest
/// cohort scores. The flag reports whether the floor was hit.
pub fn top_n_stats(cohort: &[f64], top_n: usize) -> Result<(f64, f64, bool)> {
    if top_n == 0 {
        return Err(Error::config("top_n must be at least 1"));
    }
    if top_n > cohort.len() {
        return Err(Error::config(format!(
            "top_n = {top_n} exceeds the cohort size {}",
            cohort.len()
        )));
    }
    let mut sorted = cohort.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = &sorted[..top_n];
    let n = top_n as f64;
    let mean = top.iter().sum::<f64>() / n;
    let std = (top.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(if std < STD_FLOOR {
        (mean, STD_FLOOR, true)
    } else {
        (mean, std, false)
    })
}

/// Adaptive symmetric normalisation of one raw score.
pub fn asnorm_score(raw: f64, enroll_cohort: &[f64], test_cohort: &[f64], top_n: usize) -> Result<f64> {
    let (me, se, fe) = top_n_stats(enroll_cohort, top_n)?;
    let (mt, st, ft) = top_n_stats(test_cohort, top_n)?;
    if fe || ft {
        log::warn!("degenerate cohort: standard deviation floored at {STD_FLOOR}");
    }
    Ok(0.5 * ((raw - me) / se + (raw - mt) / st))
}
