use rand::Rng;

use super::resample::resample;
use super::{Sample, SampleData};
use crate::error::{Error, Result};

/// Speed factors with sampling weights. Every factor other than 1.0 opens a
/// new block of `num_speakers` class ids, in list order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedPerturb {
    pub factors: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Default for SpeedPerturb {
    fn default() -> Self {
        Self {
            factors: vec![0.9, 1.0, 1.1],
            weights: vec![1.0, 1.0, 1.0],
        }
    }
}

impl SpeedPerturb {
    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() || self.factors.len() != self.weights.len() {
            return Err(Error::config("speed factors and weights must be non-empty and equal length"));
        }
        if self.factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::config("speed factors must be positive"));
        }
        if self.weights.iter().any(|&w| !(w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("speed weights must be non-negative with positive sum"));
        }
        Ok(())
    }

    /// Id offset block for `factor`: 0 for 1.0, then 1, 2, ... for the other
    /// factors in list order.
    pub fn block_of(&self, factor: f64) -> Option<usize> {
        if factor == 1.0 {
            return Some(0);
        }
        self.factors
            .iter()
            .filter(|&&f| f != 1.0)
            .position(|&f| f == factor)
            .map(|p| p + 1)
    }

    /// Size of the label space after perturbation.
    pub fn label_space(&self, num_speakers: usize) -> usize {
        num_speakers * (1 + self.factors.iter().filter(|&&f| f != 1.0).count())
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (&f, &w) in self.factors.iter().zip(&self.weights) {
            if u < w {
                return f;
            }
            u -= w;
        }
        *self.factors.last().expect("validated non-empty")
    }
}

/// Changes tempo and pitch together by resampling: the wave is treated as
/// recorded at `rate * factor` and resampled back to `rate`, so duration
/// becomes `len / factor`. The speaker id moves to the factor's id block.
pub fn speed_perturb(sample: Sample, factor: f64, num_speakers: usize, cfg: &SpeedPerturb) -> Result<Sample> {
    let block = cfg
        .block_of(factor)
        .ok_or_else(|| Error::config(format!("speed factor {factor} is not configured")))?;
    let Sample {
        key,
        speaker,
        speaker_id,
        sample_rate,
        data,
    } = sample;
    let wave = data.into_wave(&key)?;
    let wave = if factor == 1.0 {
        wave
    } else {
        let virtual_rate = (sample_rate as f64 * factor).round() as u32;
        resample(&wave, virtual_rate, sample_rate)
    };
    Ok(Sample {
        key,
        speaker,
        speaker_id: speaker_id + block * num_speakers,
        sample_rate,
        data: SampleData::Wave(wave),
    })
}

/// Samples needed so that framing yields exactly `frames` frames.
pub fn chunk_samples(frames: usize, frame_len: usize, frame_shift: usize) -> usize {
    (frames - 1) * frame_shift + frame_len
}

/// Takes a uniformly placed window of `target` samples; shorter input is
/// tiled (wrap-around repetition) up to the target length.
pub fn random_chunk<R: Rng>(wave: &[f64], target: usize, rng: &mut R) -> Result<Vec<f64>> {
    if wave.is_empty() {
        return Err(Error::input("cannot chunk an empty wave"));
    }
    if wave.len() >= target {
        let start = rng.gen_range(0..=wave.len() - target);
        Ok(wave[start..start + target].to_vec())
    } else {
        Ok(wave.iter().copied().cycle().take(target).collect())
    }
}
