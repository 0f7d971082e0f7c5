//! Additive noise and reverberation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::resample::resample;
use crate::error::{Error, Result};
use crate::uio::wav::decode_pcm16;

/// SNR range in dB per noise category.
pub type SnrRanges = BTreeMap<String, (f64, f64)>;

pub fn default_snr_ranges() -> SnrRanges {
    [("noise", (0.0, 15.0)), ("music", (5.0, 15.0)), ("babble", (13.0, 20.0))]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseClip {
    pub wave: Vec<f64>,
    pub category: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoiseBank {
    pub clips: Vec<NoiseClip>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RirBank {
    pub rirs: Vec<Vec<f64>>,
}

impl NoiseBank {
    /// Loads a `path<TAB>category` map; relative paths resolve against the
    /// map file's directory. Clips are resampled to `target_rate`.
    pub fn load(map: impl AsRef<Path>, target_rate: u32) -> Result<Self> {
        let clips = load_bank(map.as_ref(), target_rate)?
            .into_iter()
            .map(|(wave, category)| NoiseClip { wave, category })
            .collect();
        Ok(Self { clips })
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

impl RirBank {
    pub fn load(map: impl AsRef<Path>, target_rate: u32) -> Result<Self> {
        Ok(Self {
            rirs: load_bank(map.as_ref(), target_rate)?.into_iter().map(|(w, _)| w).collect(),
        })
    }

    pub fn is_empty(&self) -> bool {
        self.rirs.is_empty()
    }
}

fn load_bank(map: &Path, target_rate: u32) -> Result<Vec<(Vec<f64>, String)>> {
    let text = fs::read_to_string(map).map_err(|e| Error::io_at(map, e))?;
    let base = map.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (path, category) = line.split_once('\t').ok_or_else(|| Error::Parse {
            line: i + 1,
            reason: "expected `path<TAB>category`".into(),
        })?;
        let mut p = PathBuf::from(path.trim());
        if p.is_relative() {
            p = base.join(p);
        }
        let bytes = fs::read(&p).map_err(|e| Error::io_at(&p, e))?;
        let d = decode_pcm16(&bytes).map_err(|reason| Error::Wav {
            key: p.display().to_string(),
            reason,
        })?;
        if d.pcm.is_empty() {
            return Err(Error::Wav {
                key: p.display().to_string(),
                reason: "empty clip".into(),
            });
        }
        let wave: Vec<f64> = d.pcm.iter().map(|&s| s as f64 / 32768.0).collect();
        out.push((resample(&wave, d.sample_rate, target_rate), category.trim().to_string()));
    }
    Ok(out)
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn peak(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Result of [`mix_at_snr`]: `wave = scale * (signal + noise_gain * noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixed {
    pub wave: Vec<f64>,
    pub noise_gain: f64,
    pub scale: f64,
}

/// Adds `noise` (same length as `signal`) scaled so that the signal to added
/// noise power ratio is `snr_db`. If the mixture would clip, the whole mixture
/// is scaled down so the peak is 1.0, which leaves the ratio unchanged.
pub fn mix_at_snr(signal: &[f64], noise: &[f64], snr_db: f64) -> Mixed {
    assert_eq!(signal.len(), noise.len());
    let ps = power(signal);
    let pn = power(noise);
    if ps == 0.0 || pn == 0.0 {
        return Mixed {
            wave: signal.to_vec(),
            noise_gain: 0.0,
            scale: 1.0,
        };
    }
    let gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut wave: Vec<f64> = signal.iter().zip(noise).map(|(s, n)| s + gain * n).collect();
    let p = peak(&wave);
    let scale = if p > 1.0 { 1.0 / p } else { 1.0 };
    if scale != 1.0 {
        wave.iter_mut().for_each(|v| *v *= scale);
    }
    Mixed {
        wave,
        noise_gain: gain,
        scale,
    }
}

/// Linear convolution, full length `a.len() + b.len() - 1`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let n = a.len() + b.len() - 1;
    if a.len().min(b.len()) <= 64 {
        let mut out = vec![0.0; n];
        for (i, &x) in a.iter().enumerate() {
            for (j, &h) in b.iter().enumerate() {
                out[i + j] += x * h;
            }
        }
        return out;
    }
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fa.resize(size, Complex::default());
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fb.resize(size, Complex::default());
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa.truncate(n);
    fa.into_iter().map(|c| c.re / size as f64).collect()
}

/// Convolves with an L2-normalised RIR, truncates to the input length and
/// rescales to the input's peak amplitude.
pub fn reverberate(wave: &[f64], rir: &[f64]) -> Vec<f64> {
    let norm = rir.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || wave.is_empty() {
        return wave.to_vec();
    }
    let rir: Vec<f64> = rir.iter().map(|v| v / norm).collect();
    let mut out = convolve(wave, &rir);
    out.truncate(wave.len());
    let (pin, pout) = (peak(wave), peak(&out));
    if pout > 0.0 {
        let g = pin / pout;
        out.iter_mut().for_each(|v| *v *= g);
    }
    out
}

/// Tiles or crops `clip` to exactly `len` samples. Longer clips are cropped
/// at a random offset.
pub fn fit_noise<R: Rng>(clip: &[f64], len: usize, rng: &mut R) -> Vec<f64> {
    if clip.len() > len {
        let start = rng.gen_range(0..=clip.len() - len);
        clip[start..start + len].to_vec()
    } else {
        clip.iter().copied().cycle().take(len).collect()
    }
}

/// What [`augment`] did to a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    None,
    Noise { clip: usize, snr_db: f64 },
    Reverb { rir: usize },
}

/// With probability `aug_prob` applies exactly one of additive noise or
/// reverberation (uniformly, when both banks are non-empty).
pub fn augment<R: Rng>(
    wave: Vec<f64>,
    noise: &NoiseBank,
    rirs: &RirBank,
    aug_prob: f64,
    snr: &SnrRanges,
    rng: &mut R,
) -> Result<(Vec<f64>, Augmentation)> {
    if noise.is_empty() && rirs.is_empty() {
        return Ok((wave, Augmentation::None));
    }
    if rng.gen::<f64>() >= aug_prob {
        return Ok((wave, Augmentation::None));
    }
    let use_noise = match (noise.is_empty(), rirs.is_empty()) {
        (false, false) => rng.gen_bool(0.5),
        (false, true) => true,
        _ => false,
    };
    if use_noise {
        let idx = rng.gen_range(0..noise.clips.len());
        let clip = &noise.clips[idx];
        let &(lo, hi) = snr
            .get(&clip.category)
            .ok_or_else(|| Error::config(format!("no SNR range for noise category `{}`", clip.category)))?;
        let snr_db = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let fitted = fit_noise(&clip.wave, wave.len(), rng);
        let mixed = mix_at_snr(&wave, &fitted, snr_db);
        Ok((mixed.wave, Augmentation::Noise { clip: idx, snr_db }))
    } else {
        let idx = rng.gen_range(0..rirs.rirs.len());
        Ok((reverberate(&wave, &rirs.rirs[idx]), Augmentation::Reverb { rir: idx }))
    }
}
