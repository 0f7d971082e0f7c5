//! Load-once inference handle: embed waveforms and score embedding pairs.
//!
//! A [`Session`] is `Sync`; `embed` and `score` take `&self` and may run
//! concurrently, while `close` needs exclusive access.

use std::path::Path;
use std::str::FromStr;

use nalgebra::DVector;

use crate::backend::{cosine_score, plda_input, plda_length_norm, PldaModel, PldaScorer, PLDA_KEYS};
use crate::config::{FlatConfig, KeyDoc};
use crate::embedder::{Embedder, TdnnSpec, EMBEDDER_KEYS};
use crate::error::{Error, Result};
use crate::featpipe::{eval_features, PipelineConfig, PIPELINE_KEYS};
use crate::tensor::TensorFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMethod {
    Cosine,
    Plda,
}

impl FromStr for ScoreMethod {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "plda" => Ok(Self::Plda),
            other => Err(format!("unknown scoring method `{other}`")),
        }
    }
}

/// Every key a session config file may contain.
pub fn session_keys() -> Vec<KeyDoc> {
    let extra = PIPELINE_KEYS.iter().filter(|k| !EMBEDDER_KEYS.iter().any(|e| e.key == k.key));
    EMBEDDER_KEYS.iter().chain(extra).chain(PLDA_KEYS).copied().collect()
}

struct Loaded {
    embedder: Embedder,
    features: PipelineConfig,
    plda: Option<PldaScorer>,
    length_norm: bool,
}

pub struct Session {
    inner: Option<Loaded>,
}

impl Session {
    /// Reads embedder weights and an optional flat config. PLDA parameters
    /// stored in the same weights file are picked up when present.
    pub fn load(weights: impl AsRef<Path>, config: Option<&Path>) -> Result<Self> {
        let cfg = match config {
            Some(p) => FlatConfig::load(p)?,
            None => FlatConfig::new(),
        };
        cfg.reject_unknown(&session_keys())?;
        let file = TensorFile::load(weights)?;
        let mut s = Self::from_parts(TdnnSpec::from_flat(&cfg)?, &file, PipelineConfig::from_flat(&cfg)?)?;
        s.set_plda_length_norm(plda_length_norm(&cfg)?)?;
        if file.get("mu").is_some() {
            s.attach_plda(&PldaModel::from_tensors(&file)?)?;
        }
        Ok(s)
    }

    pub fn from_parts(spec: TdnnSpec, weights: &TensorFile, features: PipelineConfig) -> Result<Self> {
        features.validate()?;
        if features.fbank.num_mels != spec.input_dim {
            return Err(Error::config(format!(
                "num_mels = {} but the embedder expects {} inputs",
                features.fbank.num_mels, spec.input_dim
            )));
        }
        Ok(Self {
            inner: Some(Loaded {
                embedder: Embedder::new(spec, weights)?,
                features,
                plda: None,
                length_norm: true,
            }),
        })
    }

    pub fn attach_plda(&mut self, model: &PldaModel) -> Result<()> {
        let inner = self.inner.as_mut().ok_or(Error::SessionClosed)?;
        if model.dim() != inner.embedder.embed_dim() {
            return Err(Error::config(format!(
                "PLDA dimension {} does not match embedding dimension {}",
                model.dim(),
                inner.embedder.embed_dim()
            )));
        }
        inner.plda = Some(PldaScorer::new(model)?);
        Ok(())
    }

    /// Whether PLDA scoring length-normalises its inputs (on by default).
    pub fn set_plda_length_norm(&mut self, on: bool) -> Result<()> {
        self.inner.as_mut().ok_or(Error::SessionClosed)?.length_norm = on;
        Ok(())
    }

    fn loaded(&self) -> Result<&Loaded> {
        self.inner.as_ref().ok_or(Error::SessionClosed)
    }

    pub fn is_open(&self) -> bool {
        self.inner.is_some()
    }

    pub fn embed_dim(&self) -> Result<usize> {
        Ok(self.loaded()?.embedder.embed_dim())
    }

    /// Embeds a mono waveform scaled to [-1, 1].
    pub fn embed(&self, wave: &[f64], sample_rate: u32) -> Result<DVector<f64>> {
        let inner = self.loaded()?;
        if wave.is_empty() {
            return Err(Error::input("empty waveform"));
        }
        if wave.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("waveform contains non-finite samples"));
        }
        let feats = eval_features(&inner.features, wave, sample_rate)?;
        inner.embedder.forward(&feats)
    }

    pub fn score(&self, e1: &DVector<f64>, e2: &DVector<f64>, method: ScoreMethod) -> Result<f64> {
        let inner = self.loaded()?;
        match method {
            ScoreMethod::Cosine => cosine_score(e1, e2),
            ScoreMethod::Plda => {
                let plda = inner.plda.as_ref().ok_or_else(|| Error::config("session has no PLDA model"))?;
                if e1.len() != e2.len() || e1.len() != inner.embedder.embed_dim() {
                    return Err(Error::input("embedding dimension mismatch"));
                }
                Ok(plda.score(&plda_input(e1, inner.length_norm)?, &plda_input(e2, inner.length_norm)?))
            }
        }
    }

    /// Releases the model. Closing twice is an error.
    pub fn close(&mut self) -> Result<()> {
        self.inner.take().map(drop).ok_or(Error::SessionClosed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedder::{random_weights, FrameLayer, Pooling};
    use crate::featpipe::FbankConfig;
    use nalgebra::DMatrix;

    fn parts() -> (TdnnSpec, TensorFile, PipelineConfig) {
        let spec = TdnnSpec {
            input_dim: 24,
            layers: vec![FrameLayer::new(32, vec![-2, -1, 0, 1, 2], 1), FrameLayer::new(48, vec![0], 1)],
            pooling: Pooling::Statistics,
            embed_dim: 16,
            attention_hidden: 8,
        };
        let w = random_weights(&spec, 3).unwrap();
        let feats = PipelineConfig {
            fbank: FbankConfig {
                num_mels: 24,
                ..Default::default()
            },
            ..Default::default()
        };
        (spec, w, feats)
    }

    fn wave(n: usize) -> Vec<f64> {
        (0..n).map(|i| ((i as f64) * 0.013).sin() * 0.3 + ((i * 7919) % 101) as f64 / 1000.0).collect()
    }

    #[test]
    fn embed_matches_direct_path() {
        let (spec, w, feats) = parts();
        let s = Session::from_parts(spec.clone(), &w, feats.clone()).unwrap();
        let x = wave(16000);
        let direct = Embedder::new(spec, &w).unwrap().forward(&eval_features(&feats, &x, 16000).unwrap()).unwrap();
        assert_eq!(s.embed(&x, 16000).unwrap(), direct);
        assert_eq!(s.embed(&x, 16000).unwrap(), s.embed(&x, 16000).unwrap());
    }

    #[test]
    fn errors_instead_of_crashing() {
        let (spec, w, feats) = parts();
        let mut s = Session::from_parts(spec, &w, feats).unwrap();
        assert!(s.embed(&[], 16000).is_err());
        assert!(s.embed(&[0.1; 10], 16000).is_err());
        assert!(s.embed(&wave(8000), 0).is_err());
        let e = s.embed(&wave(8000), 16000).unwrap();
        assert!(s.score(&e, &e, ScoreMethod::Plda).is_err());
        assert!((s.score(&e, &e, ScoreMethod::Cosine).unwrap() - 1.0).abs() < 1e-15);
        s.close().unwrap();
        assert!(matches!(s.embed(&wave(8000), 16000), Err(Error::SessionClosed)));
        assert!(matches!(s.score(&e, &e, ScoreMethod::Cosine), Err(Error::SessionClosed)));
        assert!(s.close().is_err());
    }

    #[test]
    fn plda_scoring() {
        let (spec, w, feats) = parts();
        let mut s = Session::from_parts(spec, &w, feats).unwrap();
        let model = PldaModel {
            mu: DVector::zeros(16),
            sigma_b: DMatrix::identity(16, 16),
            sigma_w: DMatrix::identity(16, 16) * 0.5,
        };
        s.attach_plda(&model).unwrap();
        let e1 = s.embed(&wave(8000), 16000).unwrap();
        let e2 = s.embed(&wave(9000), 16000).unwrap();
        let want = PldaScorer::new(&model).unwrap().score(&e1.normalize(), &e2.normalize());
        assert_eq!(s.score(&e1, &e2, ScoreMethod::Plda).unwrap(), want);
        let bad = PldaModel {
            mu: DVector::zeros(3),
            sigma_b: DMatrix::identity(3, 3),
            sigma_w: DMatrix::identity(3, 3),
        };
        assert!(s.attach_plda(&bad).is_err());
    }

    #[test]
    fn load_from_files() {
        let (spec, mut w, _) = parts();
        let dir = tempfile::tempdir().unwrap();
        let model = PldaModel {
            mu: DVector::zeros(16),
            sigma_b: DMatrix::identity(16, 16),
            sigma_w: DMatrix::identity(16, 16),
        };
        for (name, t) in model.to_tensors().iter() {
            w.insert(name, t.clone());
        }
        w.save(dir.path().join("w.wstn")).unwrap();
        let cfg = dir.path().join("s.conf");
        std::fs::write(&cfg, "num_mels = 24\ntdnn_dims = 32,48\ntdnn_context = -2:2,0:0\ntdnn_dilation = 1,1\nembed_dim = 16\nattention_hidden = 8\n").unwrap();
        let s = Session::load(dir.path().join("w.wstn"), Some(&cfg)).unwrap();
        assert_eq!(s.loaded().unwrap().embedder.spec(), &spec);
        let e = s.embed(&wave(8000), 16000).unwrap();
        assert!(s.score(&e, &e, ScoreMethod::Plda).is_ok());
        std::fs::write(&cfg, "bogus = 1\n").unwrap();
        assert!(Session::load(dir.path().join("w.wstn"), Some(&cfg)).is_err());
    }

    #[test]
    fn session_is_shareable() {
        fn assert_sync<T: Sync + Send>() {}
        assert_sync::<Session>();
    }
}
