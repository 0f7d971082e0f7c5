//! Log mel filterbank features and per-utterance mean/variance normalisation.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Feature matrix, one row per frame.
pub type Features = DMatrix<f64>;

pub const PREEMPHASIS: f64 = 0.97;
pub const LOG_FLOOR: f64 = 1e-10;
pub const LOW_FREQ: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    Hamming,
    Hann,
    Povey,
    Rectangular,
}

impl FromStr for WindowKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hamming" => Ok(Self::Hamming),
            "hann" | "hanning" => Ok(Self::Hann),
            "povey" => Ok(Self::Povey),
            "rectangular" => Ok(Self::Rectangular),
            other => Err(format!("unknown window `{other}`")),
        }
    }
}

impl WindowKind {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        let denom = (n.max(2) - 1) as f64;
        (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / denom;
                match self {
                    Self::Hamming => 0.54 - 0.46 * a.cos(),
                    Self::Hann => 0.5 - 0.5 * a.cos(),
                    Self::Povey => (0.5 - 0.5 * a.cos()).powf(0.85),
                    Self::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbankConfig {
    pub num_mels: usize,
    pub frame_shift_ms: f64,
    pub frame_len_ms: f64,
    /// Standard deviation of Gaussian dither added per sample; 0 disables.
    pub dither: f64,
    pub window: WindowKind,
}

impl Default for FbankConfig {
    fn default() -> Self {
        Self {
            num_mels: 80,
            frame_shift_ms: 10.0,
            frame_len_ms: 25.0,
            dither: 0.0,
            window: WindowKind::Hamming,
        }
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// A prepared extractor for one sample rate.
pub struct Fbank {
    cfg: FbankConfig,
    sample_rate: u32,
    frame_len: usize,
    frame_shift: usize,
    nfft: usize,
    window: Vec<f64>,
    /// Per mel bin: first FFT bin and triangular weights from there.
    filters: Vec<(usize, Vec<f64>)>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fbank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fbank")
            .field("cfg", &self.cfg)
            .field("sample_rate", &self.sample_rate)
            .field("nfft", &self.nfft)
            .finish()
    }
}

impl Fbank {
    pub fn new(cfg: FbankConfig, sample_rate: u32) -> Result<Self> {
        if cfg.num_mels == 0 {
            return Err(Error::config("num_mels must be at least 1"));
        }
        if !(cfg.frame_shift_ms > 0.0 && cfg.frame_len_ms > cfg.frame_shift_ms) {
            return Err(Error::config("need frame_len_ms > frame_shift_ms > 0"));
        }
        if sample_rate == 0 {
            return Err(Error::config("sample rate must be positive"));
        }
        let frame_len = (sample_rate as f64 * cfg.frame_len_ms / 1000.0).round() as usize;
        let frame_shift = (sample_rate as f64 * cfg.frame_shift_ms / 1000.0).round() as usize;
        if frame_shift == 0 {
            return Err(Error::config("frame shift rounds to zero samples"));
        }
        let nfft = frame_len.next_power_of_two();
        let nyquist = sample_rate as f64 / 2.0;
        if LOW_FREQ >= nyquist {
            return Err(Error::config("sample rate too low for the 20 Hz lower mel edge"));
        }
        let mel_lo = hz_to_mel(LOW_FREQ);
        let mel_hi = hz_to_mel(nyquist);
        let step = (mel_hi - mel_lo) / (cfg.num_mels + 1) as f64;
        let bin_hz = sample_rate as f64 / nfft as f64;
        let mut filters = Vec::with_capacity(cfg.num_mels);
        for m in 0..cfg.num_mels {
            let left = mel_lo + m as f64 * step;
            let center = left + step;
            let right = center + step;
            let mut first = None;
            let mut weights = Vec::new();
            for k in 0..=nfft / 2 {
                let mel = hz_to_mel(k as f64 * bin_hz);
                let w = if mel > left && mel <= center {
                    (mel - left) / (center - left)
                } else if mel > center && mel < right {
                    (right - mel) / (right - center)
                } else {
                    0.0
                };
                if w > 0.0 {
                    first.get_or_insert(k);
                    weights.push(w);
                } else if first.is_some() {
                    break;
                }
            }
            filters.push((first.unwrap_or(0), weights));
        }
        let fft = FftPlanner::new().plan_fft_forward(nfft);
        Ok(Self {
            cfg,
            sample_rate,
            frame_len,
            frame_shift,
            nfft,
            window: cfg.window.coefficients(frame_len),
            filters,
            fft,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn frame_shift(&self) -> usize {
        self.frame_shift
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.frame_shift
        }
    }

    /// Centre frequency of each mel bin in Hz.
    pub fn mel_centers_hz(&self) -> Vec<f64> {
        let mel_lo = hz_to_mel(LOW_FREQ);
        let mel_hi = hz_to_mel(self.sample_rate as f64 / 2.0);
        let step = (mel_hi - mel_lo) / (self.cfg.num_mels + 1) as f64;
        (1..=self.cfg.num_mels).map(|m| mel_to_hz(mel_lo + m as f64 * step)).collect()
    }

    /// Computes a `T x num_mels` matrix with no edge padding. `rng` drives the
    /// dither and is only touched when dither is non-zero.
    pub fn compute<R: Rng>(&self, wave: &[f64], rng: &mut R) -> Result<Features> {
        let frames = self.num_frames(wave.len());
        if frames == 0 {
            return Err(Error::input(format!(
                "wave of {} samples is shorter than one {}-sample frame",
                wave.len(),
                self.frame_len
            )));
        }
        let mut feats = DMatrix::zeros(frames, self.cfg.num_mels);
        let mut frame = vec![0.0; self.frame_len];
        let mut buf = vec![Complex::default(); self.nfft];
        let mut spectrum = vec![0.0; self.nfft / 2 + 1];
        for t in 0..frames {
            let start = t * self.frame_shift;
            frame.copy_from_slice(&wave[start..start + self.frame_len]);
            if self.cfg.dither > 0.0 {
                for v in frame.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += self.cfg.dither * z;
                }
            }
            for i in (1..frame.len()).rev() {
                frame[i] -= PREEMPHASIS * frame[i - 1];
            }
            frame[0] -= PREEMPHASIS * frame[0];
            for (b, (x, w)) in buf.iter_mut().zip(frame.iter().zip(&self.window)) {
                *b = Complex::new(x * w, 0.0);
            }
            buf[self.frame_len..].fill(Complex::default());
            self.fft.process(&mut buf);
            for (p, c) in spectrum.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            for (m, (first, weights)) in self.filters.iter().enumerate() {
                let e: f64 = weights.iter().zip(&spectrum[*first..]).map(|(w, p)| w * p).sum();
                feats[(t, m)] = e.max(LOG_FLOOR).ln();
            }
        }
        Ok(feats)
    }
}

/// One-shot convenience wrapper around [`Fbank`].
pub fn compute_fbank<R: Rng>(wave: &[f64], sample_rate: u32, cfg: FbankConfig, rng: &mut R) -> Result<Features> {
    Fbank::new(cfg, sample_rate)?.compute(wave, rng)
}

/// Subtracts each column's mean; with `variance_norm` also divides columns
/// whose standard deviation exceeds 1e-8 by it.
pub fn cmvn(mut feats: Features, variance_norm: bool) -> Features {
    let t = feats.nrows();
    if t == 0 {
        return feats;
    }
    for mut col in feats.column_iter_mut() {
        let mean = col.iter().sum::<f64>() / t as f64;
        col.iter_mut().for_each(|v| *v -= mean);
        if variance_norm {
            let std = (col.iter().map(|v| v * v).sum::<f64>() / t as f64).sqrt();
            if std > 1e-8 {
                col.iter_mut().for_each(|v| *v /= std);
            }
        }
    }
    feats
}
