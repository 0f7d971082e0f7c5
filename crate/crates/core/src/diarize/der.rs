//! Diarization error rate.

use std::collections::{BTreeMap, BTreeSet};

use super::segments::LabeledSegment;
use crate::error::{Error, Result};

/// Error fractions of the scored reference speech time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerReport {
    pub miss: f64,
    pub false_alarm: f64,
    pub confusion: f64,
    pub der: f64,
    /// Scored reference speech in seconds (the denominator).
    pub scored_speech: f64,
}

/// Minimum-cost assignment for a square cost matrix; `result[row] = col`.
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials method, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Elementary scoring intervals of one recording.
struct Scored {
    /// (duration, reference speakers, hypothesis speakers)
    intervals: Vec<(f64, Vec<usize>, Vec<usize>)>,
    ref_count: usize,
    hyp_count: usize,
}

fn active(turns: &[(f64, f64, usize)], t: f64) -> Vec<usize> {
    let set: BTreeSet<usize> = turns.iter().filter(|&&(s, e, _)| s <= t && t < e).map(|t| t.2).collect();
    set.into_iter().collect()
}

fn index_labels(segs: &[&LabeledSegment]) -> (Vec<(f64, f64, usize)>, usize) {
    let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
    let turns = segs
        .iter()
        .map(|s| {
            let next = ids.len();
            let id = *ids.entry(s.label.as_str()).or_insert(next);
            (s.start, s.end, id)
        })
        .collect();
    (turns, ids.len())
}

fn scored_intervals(reference: &[&LabeledSegment], hypothesis: &[&LabeledSegment], collar: f64) -> Scored {
    let (ref_turns, ref_count) = index_labels(reference);
    let (hyp_turns, hyp_count) = index_labels(hypothesis);
    let no_score: Vec<(f64, f64)> = if collar > 0.0 {
        ref_turns
            .iter()
            .flat_map(|&(s, e, _)| [(s - collar, s + collar), (e - collar, e + collar)])
            .collect()
    } else {
        Vec::new()
    };
    let mut cuts: Vec<f64> = ref_turns
        .iter()
        .chain(&hyp_turns)
        .flat_map(|&(s, e, _)| [s, e])
        .chain(no_score.iter().flat_map(|&(s, e)| [s, e]))
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let intervals = cuts
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            if no_score.iter().any(|&(s, e)| s <= mid && mid < e) {
                return None;
            }
            let r = active(&ref_turns, mid);
            let h = active(&hyp_turns, mid);
            (!r.is_empty() || !h.is_empty()).then_some((b - a, r, h))
        })
        .collect();
    Scored {
        intervals,
        ref_count,
        hyp_count,
    }
}

fn overlap_matrix(s: &Scored) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; s.hyp_count]; s.ref_count];
    for (d, r, h) in &s.intervals {
        for &i in r {
            for &j in h {
                m[i][j] += d;
            }
        }
    }
    m
}

/// Reference-to-hypothesis mapping maximising total overlap; `None` marks an
/// unmapped reference speaker.
fn best_mapping(overlap: &[Vec<f64>], hyp_count: usize) -> Vec<Option<usize>> {
    let n = overlap.len().max(hyp_count);
    let big = overlap.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| big - overlap.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0)).collect())
        .collect();
    let assign = hungarian(&cost);
    (0..overlap.len())
        .map(|i| (assign[i] < hyp_count).then_some(assign[i]))
        .collect()
}

/// Error times in seconds: (scored speech, miss, false alarm, confusion).
fn error_times(s: &Scored, mapping: &[Option<usize>]) -> (f64, f64, f64, f64) {
    let (mut total, mut miss, mut fa, mut conf) = (0.0, 0.0, 0.0, 0.0);
    for (d, r, h) in &s.intervals {
        let (nr, nh) = (r.len(), h.len());
        let correct = r.iter().filter(|&&i| mapping[i].is_some_and(|j| h.contains(&j))).count();
        total += d * nr as f64;
        miss += d * nr.saturating_sub(nh) as f64;
        fa += d * nh.saturating_sub(nr) as f64;
        conf += d * (nr.min(nh) - correct) as f64;
    }
    (total, miss, fa, conf)
}

fn group(segs: &[LabeledSegment]) -> BTreeMap<&str, Vec<&LabeledSegment>> {
    let mut m: BTreeMap<&str, Vec<&LabeledSegment>> = BTreeMap::new();
    for s in segs {
        m.entry(s.recording.as_str()).or_default().push(s);
    }
    m
}

fn report(times: (f64, f64, f64, f64)) -> Result<DerReport> {
    let (total, miss, fa, conf) = times;
    if total <= 0.0 {
        return Err(Error::input("reference contains no scored speech"));
    }
    let (miss, false_alarm, confusion) = (miss / total, fa / total, conf / total);
    Ok(DerReport {
        miss,
        false_alarm,
        confusion,
        der: miss + false_alarm + confusion,
        scored_speech: total,
    })
}

fn der_with<F>(reference: &[LabeledSegment], hypothesis: &[LabeledSegment], collar: f64, mut map: F) -> Result<DerReport>
where
    F: FnMut(&[Vec<f64>], usize) -> Vec<Option<usize>>,
{
    if !(collar >= 0.0 && collar.is_finite()) {
        return Err(Error::config("collar must be a non-negative number"));
    }
    let refs = group(reference);
    let hyps = group(hypothesis);
    let recordings: BTreeSet<&str> = refs.keys().chain(hyps.keys()).copied().collect();
    let empty = Vec::new();
    let mut acc = (0.0, 0.0, 0.0, 0.0);
    for rec in recordings {
        let s = scored_intervals(refs.get(rec).unwrap_or(&empty), hyps.get(rec).unwrap_or(&empty), collar);
        let mapping = map(&overlap_matrix(&s), s.hyp_count);
        let t = error_times(&s, &mapping);
        acc = (acc.0 + t.0, acc.1 + t.1, acc.2 + t.2, acc.3 + t.3);
    }
    report(acc)
}

/// DER with an optimal one-to-one speaker mapping per recording. Regions
/// within `collar` seconds of a reference boundary are not scored.
pub fn compute_der(reference: &[LabeledSegment], hypothesis: &[LabeledSegment], collar: f64) -> Result<DerReport> {
    der_with(reference, hypothesis, collar, best_mapping)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(rec: &str, s: f64, e: f64, l: &str) -> LabeledSegment {
        LabeledSegment {
            recording: rec.into(),
            start: s,
            end: e,
            label: l.into(),
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..=p.len() {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }

    /// Tries every injective mapping and keeps the lowest DER.
    fn brute_force_der(r: &[LabeledSegment], h: &[LabeledSegment], collar: f64) -> DerReport {
        der_with(r, h, collar, |overlap, hyp_count| {
            let n = overlap.len().max(hyp_count);
            let mut best = (f64::NEG_INFINITY, Vec::new());
            for p in permutations(n) {
                let m: Vec<Option<usize>> = (0..overlap.len()).map(|i| (p[i] < hyp_count).then_some(p[i])).collect();
                let gain: f64 = m.iter().enumerate().filter_map(|(i, j)| j.map(|j| overlap[i][j])).sum();
                if gain > best.0 {
                    best = (gain, m);
                }
            }
            best.1
        })
        .unwrap()
    }

    fn swap_case() -> (Vec<LabeledSegment>, Vec<LabeledSegment>) {
        let r = vec![seg("r", 0.0, 5.0, "A"), seg("r", 5.0, 10.0, "B")];
        let h = vec![seg("r", 0.0, 4.0, "s1"), seg("r", 4.0, 10.0, "s2")];
        (r, h)
    }

    #[test]
    fn perfect_hypothesis() {
        let (r, _) = swap_case();
        let d = compute_der(&r, &r, 0.0).unwrap();
        assert_eq!(d.der, 0.0);
        let relabeled: Vec<_> = r.iter().map(|s| seg("r", s.start, s.end, &format!("x{}", s.label))).collect();
        assert_eq!(compute_der(&r, &relabeled, 0.25).unwrap().der, 0.0);
    }

    #[test]
    fn empty_hypothesis_is_all_miss() {
        let (r, _) = swap_case();
        let d = compute_der(&r, &[], 0.0).unwrap();
        assert_eq!((d.miss, d.false_alarm, d.confusion), (1.0, 0.0, 0.0));
    }

    #[test]
    fn one_second_swap() {
        let (r, h) = swap_case();
        let d = compute_der(&r, &h, 0.0).unwrap();
        assert_eq!(d.confusion, 0.1);
        assert_eq!((d.miss, d.false_alarm), (0.0, 0.0));
        assert_eq!(brute_force_der(&r, &h, 0.0), d);
    }

    #[test]
    fn collar_excludes_boundaries() {
        let r = vec![seg("r", 0.0, 5.0, "A")];
        let h = vec![seg("r", 0.2, 5.0, "x")];
        assert!(compute_der(&r, &h, 0.0).unwrap().miss > 0.0);
        let d = compute_der(&r, &h, 0.25).unwrap();
        assert_eq!(d.der, 0.0);
        assert_eq!(d.scored_speech, 4.5);
    }

    #[test]
    fn false_alarm_outside_reference() {
        let r = vec![seg("r", 0.0, 4.0, "A")];
        let h = vec![seg("r", 0.0, 5.0, "x")];
        let d = compute_der(&r, &h, 0.0).unwrap();
        assert_eq!(d.false_alarm, 0.25);
        assert!(compute_der(&[], &h, 0.0).is_err());
    }

    #[test]
    fn hungarian_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..=6 {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
                let total = |a: &[usize]| a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
                let best = permutations(n).iter().map(|p| total(p)).fold(f64::INFINITY, f64::min);
                assert!((total(&hungarian(&cost)) - best).abs() < 1e-9);
            }
        }
    }

    fn random_rttm(rng: &mut ChaCha8Rng, rec: &str, speakers: usize, turns: usize) -> Vec<LabeledSegment> {
        (0..turns)
            .map(|_| {
                let s = (rng.gen_range(0.0..30.0f64) * 100.0).round() / 100.0;
                let d = (rng.gen_range(0.1..5.0f64) * 100.0).round() / 100.0;
                seg(rec, s, s + d, &format!("S{}", rng.gen_range(0..speakers)))
            })
            .collect()
    }

    #[test]
    fn random_cases_match_brute_force_and_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..60 {
            let mut r = random_rttm(&mut rng, "a", 3, 8);
            r.extend(random_rttm(&mut rng, "b", 2, 5));
            let mut h = random_rttm(&mut rng, "a", 4, 10);
            h.extend(random_rttm(&mut rng, "c", 2, 3));
            let collar = [0.0, 0.25][rng.gen_range(0..2)];
            let d = compute_der(&r, &h, collar).unwrap();
            let b = brute_force_der(&r, &h, collar);
            assert!((d.der - b.der).abs() < 1e-9, "{d:?} vs {b:?}");
            assert!((d.der - (d.miss + d.false_alarm + d.confusion)).abs() < 1e-9);
            assert!(d.miss >= 0.0 && d.false_alarm >= 0.0 && d.confusion >= 0.0);
            assert_eq!(compute_der(&r, &r, collar).unwrap().der, 0.0);
        }
    }

    #[test]
    fn invariant_under_label_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = random_rttm(&mut rng, "a", 3, 10);
        let h = random_rttm(&mut rng, "a", 3, 10);
        let renamed: Vec<_> = h
            .iter()
            .map(|s| {
                let l = match s.label.as_str() {
                    "S0" => "S2",
                    "S1" => "S0",
                    _ => "S1",
                };
                seg("a", s.start, s.end, l)
            })
            .collect();
        assert_eq!(compute_der(&r, &h, 0.0).unwrap(), compute_der(&r, &renamed, 0.0).unwrap());
    }
}
