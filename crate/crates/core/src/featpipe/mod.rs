//! On-the-fly feature preparation.
//!
//! Stages run as a lazy iterator chain, in this order:
//!
//! local shuffle → spk2id → resample → speed perturb → random chunk →
//! noise/reverb → Fbank → CMVN → SpecAug → batch
//!
//! Every random stage owns a ChaCha8 generator derived from the pipeline seed,
//! so the output is a pure function of input order, seed and configuration.

mod augment;
mod fbank;
mod perturb;
mod resample;
mod shuffle;
mod specaug;
mod speakers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{FlatConfig, KeyDoc};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::uio::UtteranceRecord;

pub use augment::{
    augment, convolve, default_snr_ranges, fit_noise, mix_at_snr, reverberate, Augmentation, Mixed, NoiseBank,
    NoiseClip, RirBank, SnrRanges,
};
pub use fbank::{
    cmvn, compute_fbank, hz_to_mel, mel_to_hz, Fbank, FbankConfig, Features, WindowKind, LOG_FLOOR, LOW_FREQ,
    PREEMPHASIS,
};
pub use perturb::{chunk_samples, random_chunk, speed_perturb, SpeedPerturb};
pub use resample::resample;
pub use shuffle::{local_shuffle, LocalShuffle};
pub use specaug::{apply_masks, draw_masks, spec_augment, Mask, MaskAxis, SpecAugConfig};
pub use speakers::SpeakerTable;

#[derive(Debug, Clone, PartialEq)]
pub enum SampleData {
    /// Mono samples in [-1, 1].
    Wave(Vec<f64>),
    Feats(Features),
}

impl SampleData {
    pub fn wave(&self) -> Option<&[f64]> {
        match self {
            SampleData::Wave(w) => Some(w),
            SampleData::Feats(_) => None,
        }
    }

    pub fn feats(&self) -> Option<&Features> {
        match self {
            SampleData::Feats(f) => Some(f),
            SampleData::Wave(_) => None,
        }
    }

    pub(crate) fn into_wave(self, key: &str) -> Result<Vec<f64>> {
        match self {
            SampleData::Wave(w) => Ok(w),
            SampleData::Feats(_) => Err(Error::input(format!("{key}: expected a wave, found features"))),
        }
    }

    pub(crate) fn into_feats(self, key: &str) -> Result<Features> {
        match self {
            SampleData::Feats(f) => Ok(f),
            SampleData::Wave(_) => Err(Error::input(format!("{key}: expected features, found a wave"))),
        }
    }
}

/// PCM16 to floats in [-1, 1).
pub fn pcm_to_wave(pcm: &[i16]) -> Vec<f64> {
    pcm.iter().map(|&s| s as f64 / 32768.0).collect()
}

/// The unit flowing through the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub key: String,
    pub speaker: String,
    pub speaker_id: usize,
    pub sample_rate: u32,
    pub data: SampleData,
}

impl Sample {
    pub fn from_record(rec: UtteranceRecord, speakers: &SpeakerTable) -> Result<Self> {
        let speaker_id = speakers.id(&rec.speaker)?;
        Ok(Self::with_id(rec, speaker_id))
    }

    /// Converts PCM16 to floats in [-1, 1] and attaches `speaker_id`.
    pub fn with_id(rec: UtteranceRecord, speaker_id: usize) -> Self {
        Self {
            data: SampleData::Wave(pcm_to_wave(&rec.pcm)),
            key: rec.key,
            speaker: rec.speaker,
            speaker_id,
            sample_rate: rec.sample_rate,
        }
    }

    fn map_wave(self, f: impl FnOnce(Vec<f64>) -> Result<Vec<f64>>) -> Result<Self> {
        let Sample {
            key,
            speaker,
            speaker_id,
            sample_rate,
            data,
        } = self;
        let wave = f(data.into_wave(&key)?)?;
        Ok(Sample {
            key,
            speaker,
            speaker_id,
            sample_rate,
            data: SampleData::Wave(wave),
        })
    }

    fn map_feats(self, f: impl FnOnce(Features) -> Result<Features>) -> Result<Self> {
        let Sample {
            key,
            speaker,
            speaker_id,
            sample_rate,
            data,
        } = self;
        let feats = f(data.into_feats(&key)?)?;
        Ok(Sample {
            key,
            speaker,
            speaker_id,
            sample_rate,
            data: SampleData::Feats(feats),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub shuffle_buffer: usize,
    pub target_rate: u32,
    pub speed_perturb: bool,
    pub speed: SpeedPerturb,
    pub chunk_frames: usize,
    pub aug_prob: f64,
    pub snr_ranges: SnrRanges,
    pub fbank: FbankConfig,
    pub cmvn_variance: bool,
    pub specaug: bool,
    pub specaug_cfg: SpecAugConfig,
    pub batch_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            shuffle_buffer: 1000,
            target_rate: 16000,
            speed_perturb: true,
            speed: SpeedPerturb::default(),
            chunk_frames: 200,
            aug_prob: 0.6,
            snr_ranges: default_snr_ranges(),
            fbank: FbankConfig::default(),
            cmvn_variance: false,
            specaug: false,
            specaug_cfg: SpecAugConfig::default(),
            batch_size: 32,
        }
    }
}

pub const PIPELINE_KEYS: &[KeyDoc] = &[
    KeyDoc { key: "shuffle_buffer", default: "1000", help: "local shuffle buffer size" },
    KeyDoc { key: "target_rate", default: "16000", help: "resample target in Hz" },
    KeyDoc { key: "speed_perturb", default: "true", help: "enable speed perturbation" },
    KeyDoc { key: "speed_factors", default: "0.9,1.0,1.1", help: "speed factors" },
    KeyDoc { key: "speed_weights", default: "1,1,1", help: "sampling weights of speed_factors" },
    KeyDoc { key: "chunk_frames", default: "200", help: "frames per training chunk" },
    KeyDoc { key: "aug_prob", default: "0.6", help: "probability of noise or reverb" },
    KeyDoc { key: "snr_noise", default: "0,15", help: "SNR range (dB) for category `noise`" },
    KeyDoc { key: "snr_music", default: "5,15", help: "SNR range (dB) for category `music`" },
    KeyDoc { key: "snr_babble", default: "13,20", help: "SNR range (dB) for category `babble`" },
    KeyDoc { key: "num_mels", default: "80", help: "mel bins" },
    KeyDoc { key: "frame_shift_ms", default: "10", help: "frame shift in ms" },
    KeyDoc { key: "frame_len_ms", default: "25", help: "frame length in ms" },
    KeyDoc { key: "dither", default: "0", help: "Gaussian dither std on [-1,1] samples" },
    KeyDoc { key: "window", default: "hamming", help: "hamming | hann | povey | rectangular" },
    KeyDoc { key: "cmvn_variance", default: "false", help: "also normalise variance (CVN)" },
    KeyDoc { key: "specaug", default: "false", help: "enable SpecAug masking" },
    KeyDoc { key: "specaug_t_masks", default: "1", help: "time masks per sample" },
    KeyDoc { key: "specaug_max_t", default: "10", help: "max time-mask width (frames)" },
    KeyDoc { key: "specaug_f_masks", default: "1", help: "frequency masks per sample" },
    KeyDoc { key: "specaug_max_f", default: "8", help: "max frequency-mask width (bins)" },
    KeyDoc { key: "batch_size", default: "32", help: "samples per batch" },
];

impl PipelineConfig {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        let d = Self::default();
        let mut snr_ranges = d.snr_ranges.clone();
        for cat in ["noise", "music", "babble"] {
            let key = format!("snr_{cat}");
            if c.raw(&key).is_some() {
                let v: Vec<f64> = c.get_list(&key, vec![])?;
                let [lo, hi] = v[..] else {
                    return Err(Error::config(format!("{key} needs `lo,hi`")));
                };
                snr_ranges.insert(cat.to_string(), (lo, hi));
            }
        }
        let cfg = Self {
            shuffle_buffer: c.get("shuffle_buffer", d.shuffle_buffer)?,
            target_rate: c.get("target_rate", d.target_rate)?,
            speed_perturb: c.get_bool("speed_perturb", d.speed_perturb)?,
            speed: SpeedPerturb {
                factors: c.get_list("speed_factors", d.speed.factors)?,
                weights: c.get_list("speed_weights", d.speed.weights)?,
            },
            chunk_frames: c.get("chunk_frames", d.chunk_frames)?,
            aug_prob: c.get("aug_prob", d.aug_prob)?,
            snr_ranges,
            fbank: FbankConfig {
                num_mels: c.get("num_mels", d.fbank.num_mels)?,
                frame_shift_ms: c.get("frame_shift_ms", d.fbank.frame_shift_ms)?,
                frame_len_ms: c.get("frame_len_ms", d.fbank.frame_len_ms)?,
                dither: c.get("dither", d.fbank.dither)?,
                window: c.get("window", d.fbank.window)?,
            },
            cmvn_variance: c.get_bool("cmvn_variance", d.cmvn_variance)?,
            specaug: c.get_bool("specaug", d.specaug)?,
            specaug_cfg: SpecAugConfig {
                num_t_masks: c.get("specaug_t_masks", d.specaug_cfg.num_t_masks)?,
                max_t: c.get("specaug_max_t", d.specaug_cfg.max_t)?,
                num_f_masks: c.get("specaug_f_masks", d.specaug_cfg.num_f_masks)?,
                max_f: c.get("specaug_max_f", d.specaug_cfg.max_f)?,
            },
            batch_size: c.get("batch_size", d.batch_size)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.aug_prob) {
            return Err(Error::config("aug_prob must be in [0, 1]"));
        }
        if self.chunk_frames == 0 {
            return Err(Error::config("chunk_frames must be at least 1"));
        }
        if self.fbank.num_mels == 0 {
            return Err(Error::config("num_mels must be at least 1"));
        }
        if !(self.fbank.frame_len_ms > self.fbank.frame_shift_ms && self.fbank.frame_shift_ms > 0.0) {
            return Err(Error::config("need frame_len_ms > frame_shift_ms > 0"));
        }
        if self.shuffle_buffer == 0 || self.batch_size == 0 || self.target_rate == 0 {
            return Err(Error::config("shuffle_buffer, batch_size and target_rate must be positive"));
        }
        for (cat, (lo, hi)) in &self.snr_ranges {
            if lo > hi {
                return Err(Error::config(format!("snr range for `{cat}` has lo > hi")));
            }
        }
        self.speed.validate()
    }
}

/// Fixed-size group of equal-length feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub keys: Vec<String>,
    pub labels: Vec<usize>,
    pub feats: Vec<Features>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// `(B, T, F)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        let (t, f) = self.feats.first().map_or((0, 0), |m| m.shape());
        (self.len(), t, f)
    }

    /// Row-major `B x T x F` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (b, t, f) = self.shape();
        let mut data = Vec::with_capacity(b * t * f);
        for m in &self.feats {
            for r in 0..t {
                data.extend(m.row(r).iter().map(|&v| v as f32));
            }
        }
        Tensor { shape: vec![b, t, f], data }
    }
}

/// Groups samples into batches of `batch_size`. In training mode the short
/// trailing batch is dropped; otherwise it is emitted.
pub struct Batcher<I> {
    inner: I,
    batch_size: usize,
    drop_remainder: bool,
    done: bool,
}

impl<I> Batcher<I> {
    pub fn new(inner: I, batch_size: usize, drop_remainder: bool) -> Self {
        Self {
            inner,
            batch_size: batch_size.max(1),
            drop_remainder,
            done: false,
        }
    }
}

impl<I: Iterator<Item = Result<Sample>>> Iterator for Batcher<I> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Result<Batch>> {
        if self.done {
            return None;
        }
        let mut batch = Batch {
            keys: Vec::with_capacity(self.batch_size),
            labels: Vec::with_capacity(self.batch_size),
            feats: Vec::with_capacity(self.batch_size),
        };
        while batch.len() < self.batch_size {
            match self.inner.next() {
                None => {
                    self.done = true;
                    break;
                }
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(s)) => {
                    let feats = match s.data.into_feats(&s.key) {
                        Ok(f) => f,
                        Err(e) => return Some(Err(e)),
                    };
                    if let Some(first) = batch.feats.first() {
                        if first.shape() != feats.shape() {
                            return Some(Err(Error::input(format!(
                                "{}: shape {:?} differs from batch shape {:?}",
                                s.key,
                                feats.shape(),
                                first.shape()
                            ))));
                        }
                    }
                    batch.keys.push(s.key);
                    batch.labels.push(s.speaker_id);
                    batch.feats.push(feats);
                }
            }
        }
        if batch.is_empty() || (self.drop_remainder && batch.len() < self.batch_size) {
            return None;
        }
        Some(Ok(batch))
    }
}

pub fn batch<I>(samples: I, batch_size: usize, drop_remainder: bool) -> Batcher<I::IntoIter>
where
    I: IntoIterator<Item = Result<Sample>>,
{
    Batcher::new(samples.into_iter(), batch_size, drop_remainder)
}

const STAGE_SHUFFLE: u64 = 1;
const STAGE_SPEED: u64 = 2;
const STAGE_CHUNK: u64 = 3;
const STAGE_AUGMENT: u64 = 4;
const STAGE_FBANK: u64 = 5;
const STAGE_SPECAUG: u64 = 6;

pub fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// The full training pipeline over a record stream.
#[derive(Debug)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub speakers: SpeakerTable,
    pub noise: NoiseBank,
    pub rirs: RirBank,
    pub seed: u64,
    fbank: Fbank,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, speakers: SpeakerTable, noise: NoiseBank, rirs: RirBank, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let fbank = Fbank::new(cfg.fbank, cfg.target_rate)?;
        Ok(Self {
            cfg,
            speakers,
            noise,
            rirs,
            seed,
            fbank,
        })
    }

    pub fn fbank(&self) -> &Fbank {
        &self.fbank
    }

    /// Class count seen by the loss: speakers times active speed blocks.
    pub fn num_classes(&self) -> usize {
        if self.cfg.speed_perturb {
            self.cfg.speed.label_space(self.speakers.len())
        } else {
            self.speakers.len()
        }
    }

    /// Chunk length in samples at the target rate.
    pub fn chunk_len(&self) -> usize {
        chunk_samples(self.cfg.chunk_frames, self.fbank.frame_len(), self.fbank.frame_shift())
    }

    /// Every stage up to and including SpecAug.
    pub fn samples<'a, I>(&'a self, records: I) -> impl Iterator<Item = Result<Sample>> + 'a
    where
        I: IntoIterator<Item = Result<UtteranceRecord>>,
        I::IntoIter: 'a,
    {
        let cfg = &self.cfg;
        let n_spk = self.speakers.len();
        let target = cfg.target_rate;
        let chunk = self.chunk_len();
        let mut speed_rng = stage_rng(self.seed, STAGE_SPEED);
        let mut chunk_rng = stage_rng(self.seed, STAGE_CHUNK);
        let mut aug_rng = stage_rng(self.seed, STAGE_AUGMENT);
        let mut fbank_rng = stage_rng(self.seed, STAGE_FBANK);
        let mut spec_rng = stage_rng(self.seed, STAGE_SPECAUG);

        local_shuffle(records, cfg.shuffle_buffer, stage_rng(self.seed, STAGE_SHUFFLE))
            .map(move |r| r.and_then(|rec| Sample::from_record(rec, &self.speakers)))
            .map(move |s| {
                s.and_then(|s| {
                    let from = s.sample_rate;
                    let mut s = s.map_wave(|w| Ok(resample(&w, from, target)))?;
                    s.sample_rate = target;
                    Ok(s)
                })
            })
            .map(move |s| {
                s.and_then(|s| {
                    if !cfg.speed_perturb {
                        return Ok(s);
                    }
                    let factor = cfg.speed.draw(&mut speed_rng);
                    speed_perturb(s, factor, n_spk, &cfg.speed)
                })
            })
            .map(move |s| s.and_then(|s| s.map_wave(|w| random_chunk(&w, chunk, &mut chunk_rng))))
            .map(move |s| {
                s.and_then(|s| {
                    s.map_wave(|w| {
                        augment(w, &self.noise, &self.rirs, cfg.aug_prob, &cfg.snr_ranges, &mut aug_rng)
                            .map(|(w, _)| w)
                    })
                })
            })
            .map(move |s| s.and_then(|s| self.to_features(s, &mut fbank_rng)))
            .map(move |s| {
                s.and_then(|s| {
                    if !cfg.specaug {
                        return Ok(s);
                    }
                    s.map_feats(|f| Ok(spec_augment(f, &cfg.specaug_cfg, &mut spec_rng)))
                })
            })
    }

    /// Training batches (trailing remainder dropped).
    pub fn batches<'a, I>(&'a self, records: I) -> Batcher<impl Iterator<Item = Result<Sample>> + 'a>
    where
        I: IntoIterator<Item = Result<UtteranceRecord>>,
        I::IntoIter: 'a,
    {
        Batcher::new(self.samples(records), self.cfg.batch_size, true)
    }

    /// Fbank then CMVN.
    fn to_features(&self, s: Sample, rng: &mut ChaCha8Rng) -> Result<Sample> {
        let variance = self.cfg.cmvn_variance;
        s.map_feats_from_wave(|w| Ok(cmvn(self.fbank.compute(&w, rng)?, variance)))
    }

    /// Evaluation path used for embedding extraction: resample, Fbank, CMVN.
    /// No shuffling, perturbation, chunking or augmentation.
    pub fn eval_features(&self, wave: &[f64], sample_rate: u32) -> Result<Features> {
        eval_features(&self.cfg, wave, sample_rate)
    }
}

/// Features for inference: resample, undithered Fbank, CMVN.
pub fn eval_features(cfg: &PipelineConfig, wave: &[f64], sample_rate: u32) -> Result<Features> {
    if sample_rate == 0 {
        return Err(Error::input("sample rate must be positive"));
    }
    let wave = resample(wave, sample_rate, cfg.target_rate);
    // dither is a training-time perturbation
    let fbank = Fbank::new(
        FbankConfig {
            dither: 0.0,
            ..cfg.fbank
        },
        cfg.target_rate,
    )?;
    let mut unused = stage_rng(0, 0);
    Ok(cmvn(fbank.compute(&wave, &mut unused)?, cfg.cmvn_variance))
}

impl Sample {
    fn map_feats_from_wave(self, f: impl FnOnce(Vec<f64>) -> Result<Features>) -> Result<Self> {
        let Sample {
            key,
            speaker,
            speaker_id,
            sample_rate,
            data,
        } = self;
        let feats = f(data.into_wave(&key)?)?;
        Ok(Sample {
            key,
            speaker,
            speaker_id,
            sample_rate,
            data: SampleData::Feats(feats),
        })
    }
}
