//! Band-limited rational resampling with a Hann-windowed sinc kernel.

const LOWPASS_WIDTH: f64 = 6.0;
const ROLLOFF: f64 = 0.99;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Resamples `wave` from `from_rate` to `to_rate`.
///
/// Output length is `round(len * to / from)`. Equal rates return an exact copy.
/// Each polyphase kernel is normalised to unit DC gain and the signal is
/// extended by edge replication, so constant input stays constant.
pub fn resample(wave: &[f64], from_rate: u32, to_rate: u32) -> Vec<f64> {
    assert!(from_rate > 0 && to_rate > 0, "sample rates must be positive");
    if from_rate == to_rate || wave.is_empty() {
        return wave.to_vec();
    }
    let g = gcd(from_rate as u64, to_rate as u64);
    let orig = from_rate as u64 / g;
    let new = to_rate as u64 / g;
    let out_len = ((wave.len() as f64) * to_rate as f64 / from_rate as f64).round() as usize;

    // cutoff in cycles per input sample
    let cutoff = 0.5 * (new as f64 / orig as f64).min(1.0) * ROLLOFF;
    let half_width = LOWPASS_WIDTH / (2.0 * cutoff);
    let reach = half_width.ceil() as i64 + 1;

    // one kernel per output phase r: taps at input offsets k in [-reach, reach]
    let taps = (2 * reach + 1) as usize;
    let mut kernels = vec![0.0; new as usize * taps];
    for r in 0..new as usize {
        let frac = r as f64 / new as f64;
        let kern = &mut kernels[r * taps..(r + 1) * taps];
        let mut sum = 0.0;
        for (j, w) in kern.iter_mut().enumerate() {
            let k = j as i64 - reach;
            let delta = frac - k as f64;
            if delta.abs() > half_width {
                continue;
            }
            let x = 2.0 * cutoff * delta;
            let sinc = if x == 0.0 {
                1.0
            } else {
                (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
            };
            let win = (std::f64::consts::PI * delta / (2.0 * half_width)).cos().powi(2);
            *w = 2.0 * cutoff * sinc * win;
            sum += *w;
        }
        kern.iter_mut().for_each(|w| *w /= sum);
    }

    let last = wave.len() as i64 - 1;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len as u64 {
        let pos = j * orig;
        let base = (pos / new) as i64;
        let r = (pos % new) as usize;
        let kern = &kernels[r * taps..(r + 1) * taps];
        let mut acc = 0.0;
        for (t, &w) in kern.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let idx = (base + t as i64 - reach).clamp(0, last) as usize;
            acc += w * wave[idx];
        }
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn equal_rates_are_bit_identical() {
        let w: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(resample(&w, 16000, 16000), w);
    }

    #[test]
    fn lengths_round() {
        let w = vec![0.1; 16000];
        assert_eq!(resample(&w, 14400, 16000).len(), 17778);
        assert_eq!(resample(&w, 17600, 16000).len(), 14545);
        assert_eq!(resample(&w, 16000, 8000).len(), 8000);
        assert_eq!(resample(&w, 44100, 16000).len(), 5805);
    }

    #[test]
    fn dc_is_preserved() {
        let w = vec![0.3; 4000];
        for (a, b) in [(16000, 8000), (8000, 16000), (14400, 16000), (44100, 16000)] {
            for y in resample(&w, a, b) {
                assert!((y - 0.3).abs() < 1e-6, "{a}->{b}: {y}");
            }
        }
    }

    /// Naive DFT over an interior window holding an integer number of
    /// cycles: the tone must stay in its bin and everything else must be
    /// 40 dB down.
    #[test]
    fn sine_downsample_stays_clean() {
        let wave: Vec<f64> = (0..16000).map(|n| (2.0 * PI * 1000.0 * n as f64 / 16000.0).sin()).collect();
        let out = resample(&wave, 16000, 8000);
        let seg = &out[100..7900];
        let n = seg.len();
        let power: Vec<f64> = (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &x) in seg.iter().enumerate() {
                    let ph = -2.0 * PI * (k * t % n) as f64 / n as f64;
                    re += x * ph.cos();
                    im += x * ph.sin();
                }
                re * re + im * im
            })
            .collect();
        let peak = (0..power.len()).max_by(|&a, &b| power[a].total_cmp(&power[b])).unwrap();
        assert_eq!(peak as f64 * 8000.0 / n as f64, 1000.0);
        let spurious: f64 = power.iter().enumerate().filter(|(k, _)| *k != peak).map(|(_, p)| p).sum();
        let db = 10.0 * (spurious / power[peak]).log10();
        assert!(db < -40.0, "spurious {db} dB");
    }
}
