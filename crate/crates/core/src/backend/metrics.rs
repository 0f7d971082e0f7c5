//! Equal error rate and minimum detection cost.
//!
//! Candidate thresholds are `-inf`, the midpoints between consecutive unique
//! scores, and `+inf`; a trial is accepted when `score >= threshold`.

use crate::error::{Error, Result};

/// Operating point of the detection cost function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

/// One ROC vertex with integer error counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub misses: u64,
    pub false_accepts: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    pub targets: u64,
    pub nontargets: u64,
    /// Ordered by increasing threshold: false accepts fall, misses rise.
    pub points: Vec<RocPoint>,
}

/// Builds the ROC from `(score, is_target)` pairs in one sorted sweep.
pub fn roc(trials: &[(f64, bool)]) -> Result<Roc> {
    if trials.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::input("scores must be finite"));
    }
    let targets = trials.iter().filter(|t| t.1).count() as u64;
    let nontargets = trials.len() as u64 - targets;
    if targets == 0 || nontargets == 0 {
        return Err(Error::input("need at least one target and one nontarget trial"));
    }
    let mut sorted = trials.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::with_capacity(sorted.len() + 1);
    let (mut misses, mut fas) = (0u64, nontargets);
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        misses,
        false_accepts: fas,
    });
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                misses += 1;
            } else {
                fas -= 1;
            }
            i += 1;
        }
        let threshold = if i < sorted.len() {
            s + (sorted[i].0 - s) / 2.0
        } else {
            f64::INFINITY
        };
        points.push(RocPoint {
            threshold,
            misses,
            false_accepts: fas,
        });
    }
    Ok(Roc {
        targets,
        nontargets,
        points,
    })
}

/// Diagonal crossing of the segment between two ROC vertices, as the exact
/// rational `num / den` of integer counts.
pub(crate) fn crossing(a1: u64, b1: u64, a2: u64, b2: u64, nt: u64, nn: u64) -> Option<(i128, i128)> {
    let (a1, b1, a2, b2, nt, nn) = (a1 as i128, b1 as i128, a2 as i128, b2 as i128, nt as i128, nn as i128);
    let num = b1 * a2 - a1 * b2;
    let den = (a2 - a1) * nt - (b2 - b1) * nn;
    (den != 0).then_some((num, den))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub rate: f64,
    pub threshold: f64,
}

/// EER on the ROC convex hull: the point where the hull meets `P_miss = P_fa`,
/// interpolating linearly along the hull edge that crosses it.
pub fn eer(trials: &[(f64, bool)]) -> Result<Eer> {
    let roc = roc(trials)?;
    let (nt, nn) = (roc.targets as i128, roc.nontargets as i128);
    // Work in coordinates scaled by nt*nn: x = fa*nt, y = miss*nn.
    let scaled = |p: &RocPoint| (p.false_accepts as i128 * nt, p.misses as i128 * nn);
    // points ordered by increasing fa
    let mut hull: Vec<&RocPoint> = Vec::new();
    for p in roc.points.iter().rev() {
        while hull.len() >= 2 {
            let (ox, oy) = scaled(hull[hull.len() - 2]);
            let (ax, ay) = scaled(hull[hull.len() - 1]);
            let (bx, by) = scaled(p);
            // keep strictly convex lower turns only
            if (ax - ox) * (by - oy) - (ay - oy) * (bx - ox) <= 0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(p);
    }
    let diff = |p: &RocPoint| p.misses as i128 * nn - p.false_accepts as i128 * nt;
    for w in hull.windows(2) {
        let (p, q) = (w[0], w[1]);
        if diff(p) >= 0 && diff(q) <= 0 {
            let (num, den) = crossing(
                p.false_accepts,
                p.misses,
                q.false_accepts,
                q.misses,
                roc.targets,
                roc.nontargets,
            )
            .expect("a sign-changing hull edge is not parallel to the diagonal");
            let rate = num as f64 / den as f64;
            let lambda = (diff(p) as f64) / ((diff(p) - diff(q)) as f64);
            let threshold = match (p.threshold.is_finite(), q.threshold.is_finite()) {
                (true, true) => p.threshold + lambda * (q.threshold - p.threshold),
                (true, false) => p.threshold,
                (false, true) => q.threshold,
                (false, false) => 0.0,
            };
            return Ok(Eer { rate, threshold });
        }
    }
    unreachable!("hull runs from P_fa = 0 to P_fa = 1 and must cross the diagonal")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinDcf {
    pub value: f64,
    pub threshold: f64,
}

/// Minimum normalised detection cost over all candidate thresholds.
pub fn min_dcf(trials: &[(f64, bool)], params: DcfParams) -> Result<MinDcf> {
    if !(params.p_target > 0.0 && params.p_target < 1.0) || params.c_miss <= 0.0 || params.c_fa <= 0.0 {
        return Err(Error::config("need 0 < p_target < 1 and positive costs"));
    }
    let roc = roc(trials)?;
    let norm = (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target));
    let mut best = MinDcf {
        value: f64::INFINITY,
        threshold: 0.0,
    };
    for p in &roc.points {
        let p_miss = p.misses as f64 / roc.targets as f64;
        let p_fa = p.false_accepts as f64 / roc.nontargets as f64;
        let cost = (params.c_miss * p_miss * params.p_target + params.c_fa * p_fa * (1.0 - params.p_target)) / norm;
        if cost < best.value {
            best = MinDcf {
                value: cost,
                threshold: p.threshold,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Counts errors at each candidate threshold by direct enumeration.
    fn enumerate(trials: &[(f64, bool)]) -> Vec<(u64, u64)> {
        let mut scores: Vec<f64> = trials.iter().map(|t| t.0).collect();
        scores.sort_by(f64::total_cmp);
        scores.dedup();
        let mut thresholds = vec![f64::NEG_INFINITY];
        thresholds.extend(scores.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
        thresholds.push(f64::INFINITY);
        thresholds
            .into_iter()
            .map(|th| {
                let miss = trials.iter().filter(|t| t.1 && t.0 < th).count() as u64;
                let fa = trials.iter().filter(|t| !t.1 && t.0 >= th).count() as u64;
                (miss, fa)
            })
            .collect()
    }

    fn oracle_eer(trials: &[(f64, bool)]) -> f64 {
        let nt = trials.iter().filter(|t| t.1).count() as u64;
        let nn = trials.len() as u64 - nt;
        let pts = enumerate(trials);
        let d = |&(m, f): &(u64, u64)| m as i128 * nn as i128 - f as i128 * nt as i128;
        let mut best: Option<(i128, i128)> = None;
        for p in &pts {
            for q in &pts {
                if d(p) >= 0 && d(q) <= 0 {
                    if let Some((num, den)) = crossing(p.1, p.0, q.1, q.0, nt, nn) {
                        let (num, den) = if den < 0 { (-num, -den) } else { (num, den) };
                        if best.is_none_or(|(bn, bd)| num * bd < bn * den) {
                            best = Some((num, den));
                        }
                    }
                }
            }
        }
        let (num, den) = best.unwrap();
        num as f64 / den as f64
    }

    fn random_trials(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, bool)> {
        let mut t: Vec<(f64, bool)> = (0..n)
            .map(|_| {
                let target = rng.gen_bool(0.3);
                // coarse grid so ties occur
                let s = (rng.gen_range(-3.0..3.0f64) + if target { 1.0 } else { 0.0 }) * 8.0;
                (s.round() / 8.0, target)
            })
            .collect();
        t[0].1 = true;
        t[1].1 = false;
        t
    }

    #[test]
    fn hand_case() {
        let t = [(0.9, true), (0.4, true), (0.6, false), (0.1, false)];
        assert_eq!(eer(&t).unwrap().rate, 0.25);
        assert_eq!(oracle_eer(&t), 0.25);
    }

    #[test]
    fn separated_scores() {
        let t = [(0.9, true), (0.8, true), (0.1, false), (0.2, false)];
        assert_eq!(eer(&t).unwrap().rate, 0.0);
        assert_eq!(min_dcf(&t, DcfParams::default()).unwrap().value, 0.0);
    }

    #[test]
    fn degenerate_sets_are_rejected() {
        assert!(eer(&[(0.1, true), (0.2, true)]).is_err());
        assert!(min_dcf(&[(0.1, true)], DcfParams::default()).is_err());
    }

    #[test]
    fn sweep_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..40 {
            let n = rng.gen_range(2..300);
            let t = random_trials(&mut rng, n);
            assert_eq!(eer(&t).unwrap().rate, oracle_eer(&t));
            let params = DcfParams::default();
            let nt = t.iter().filter(|x| x.1).count() as f64;
            let nn = t.len() as f64 - nt;
            let norm = (params.c_miss * params.p_target).min(params.c_fa * (1.0 - params.p_target));
            let want = enumerate(&t)
                .into_iter()
                .map(|(m, f)| {
                    (params.c_miss * (m as f64 / nt) * params.p_target
                        + params.c_fa * (f as f64 / nn) * (1.0 - params.p_target))
                        / norm
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(min_dcf(&t, params).unwrap().value, want);
        }
    }

    #[test]
    fn invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_trials(&mut rng, 500);
        let u: Vec<(f64, bool)> = t.iter().map(|&(s, l)| ((s * 0.7).exp() + 3.0, l)).collect();
        assert_eq!(eer(&t).unwrap().rate, eer(&u).unwrap().rate);
    }

    #[test]
    fn coin_flip_labels_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t: Vec<(f64, bool)> = (0..100_000).map(|_| (rng.gen::<f64>(), rng.gen_bool(0.5))).collect();
        let e = eer(&t).unwrap().rate;
        assert!((e - 0.5).abs() < 0.01, "{e}");
    }
}
