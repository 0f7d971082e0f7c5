use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use spkit::backend::{
    asnorm_score, cosine_score, eer, join_labels, min_dcf, plda_input, plda_length_norm, plda_train, read_scores,
    read_trials, write_scores, DcfParams, PldaModel, PldaScorer, PldaTrainConfig, ScoredTrial,
};
use spkit::diarize::{
    compute_der, diarize_windows, parse_window_key, read_rttm, read_sad, speech_regions, subsegment, write_rttm,
    DiarizeConfig, LabeledSegment, SpeechSegment,
};
use spkit::embedder::{par_map, random_weights, write_embeddings, Embedding, TdnnSpec};
use spkit::featpipe::{pcm_to_wave, NoiseBank, Pipeline, PipelineConfig, RirBank, SpeakerTable};
use spkit::losses::{accuracy, fit_head, init_head, lmf_config, loss_from_flat, FitConfig, SchedulerConfig, TrainStage};
use spkit::session::Session;
use spkit::tensor::TensorFile;
use spkit::uio::{pack_shards, read_data_list, read_raw, PackOptions, UtteranceRecord};

use crate::inputs::{labelled, output, read_enroll, read_utt2spk, records, resolve, speaker_labels, write_utt2spk, EmbeddingTable};
use crate::{CliError, CliResult, Command, Context, Source};

pub(crate) fn dispatch(cmd: &Command, ctx: &Context) -> CliResult<()> {
    match cmd {
        Command::MakeShards {
            data_list,
            out_dir,
            shard_size,
            gzip,
        } => make_shards(data_list, out_dir, *shard_size, *gzip),
        Command::PipelineDump {
            source,
            noise,
            rir,
            limit,
        } => pipeline_dump(ctx, source, noise.as_deref(), rir.as_deref(), *limit),
        Command::InitWeights { out } => init_weights(ctx, out),
        Command::Extract {
            source,
            weights,
            out,
            utt2spk,
        } => extract(ctx, source, weights, out.as_deref(), utt2spk.as_deref()),
        Command::FitHead {
            embeddings,
            utt2spk,
            out,
            lmf,
        } => fit(ctx, embeddings, utt2spk, out, *lmf),
        Command::ScoreCosine {
            trials,
            embeddings,
            enroll,
            out,
        } => score_cosine(trials, embeddings, enroll.as_deref(), out.as_deref()),
        Command::TrainPlda { embeddings, utt2spk, out } => train_plda(ctx, embeddings, utt2spk, out),
        Command::ScorePlda {
            trials,
            embeddings,
            plda,
            enroll,
            out,
        } => score_plda(ctx, trials, embeddings, plda, enroll.as_deref(), out.as_deref()),
        Command::Asnorm {
            scores,
            embeddings,
            cohort,
            method,
            plda,
            enroll,
            out,
        } => asnorm(ctx, scores, embeddings, cohort, method, plda.as_deref(), enroll.as_deref(), out.as_deref()),
        Command::Metrics { trials, scores } => metrics(ctx, trials, scores),
        Command::Diarize {
            embeddings,
            data_list,
            weights,
            sad,
            oracle_rttm,
            out,
        } => diarize(
            ctx,
            embeddings.as_deref(),
            data_list.as_deref(),
            weights.as_deref(),
            sad.as_deref(),
            oracle_rttm.as_deref(),
            out.as_deref(),
        ),
        Command::Der { reference, hyp } => der(ctx, reference, hyp),
        Command::ScheduleDump { at } => schedule_dump(ctx, *at),
    }
}

fn make_shards(data_list: &Path, out_dir: &Path, shard_size: usize, gzip: bool) -> CliResult<()> {
    let entries = read_data_list(data_list)?;
    let mut failure = None;
    let recs = read_raw(entries).map_while(|r| match r {
        Ok(rec) => Some(rec),
        Err(e) => {
            failure = Some(e);
            None
        }
    });
    let manifest = pack_shards(recs, PackOptions { shard_size, gzip }, out_dir)?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    manifest.save(out_dir.join("shards.list"))?;
    let mut out = output(None)?;
    for s in &manifest.shards {
        writeln!(out, "{} {}", s.path.display(), s.utterances.unwrap_or(0))?;
    }
    out.flush()?;
    Ok(())
}

fn pipeline_dump(ctx: &Context, source: &Source, noise: Option<&Path>, rir: Option<&Path>, limit: usize) -> CliResult<()> {
    let cfg = PipelineConfig::from_flat(&ctx.config)?;
    let speakers = SpeakerTable::from_labels(speaker_labels(source)?);
    let noise = noise.map(|p| NoiseBank::load(p, cfg.target_rate)).transpose()?.unwrap_or_default();
    let rirs = rir.map(|p| RirBank::load(p, cfg.target_rate)).transpose()?.unwrap_or_default();
    let pipe = Pipeline::new(cfg, speakers, noise, rirs, ctx.seed)?;
    let mut out = output(None)?;
    writeln!(out, "classes {}", pipe.num_classes())?;
    for sample in pipe.samples(records(source)?).take(limit) {
        let s = sample?;
        let f = s.data.feats().ok_or_else(|| CliError::Data(spkit::Error::InvalidInput("pipeline ended without features".into())))?;
        let n = f.len() as f64;
        let mean = f.iter().sum::<f64>() / n;
        let std = (f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        writeln!(out, "{} {} {} {} {:.6} {:.6}", s.key, s.speaker_id, f.nrows(), f.ncols(), mean, std)?;
    }
    out.flush()?;
    Ok(())
}

fn init_weights(ctx: &Context, out: &Path) -> CliResult<()> {
    let spec = TdnnSpec::from_flat(&ctx.config)?;
    let w = random_weights(&spec, ctx.seed)?;
    w.save(out)?;
    let mut o = output(None)?;
    writeln!(o, "tensors {}", w.len())?;
    o.flush()?;
    Ok(())
}

fn session(ctx: &Context, weights: &Path) -> CliResult<Session> {
    let spec = TdnnSpec::from_flat(&ctx.config)?;
    let feats = PipelineConfig::from_flat(&ctx.config)?;
    Ok(Session::from_parts(spec, &TensorFile::load(weights)?, feats)?)
}

fn extract(ctx: &Context, source: &Source, weights: &Path, out: Option<&Path>, utt2spk: Option<&Path>) -> CliResult<()> {
    let session = session(ctx, weights)?;
    let recs: Vec<UtteranceRecord> = records(source)?.collect::<spkit::Result<_>>()?;
    let pairs: Vec<(String, String)> = recs.iter().map(|r| (r.key.clone(), r.speaker.clone())).collect();
    let embedded = par_map(recs, ctx.workers, |r| {
        session
            .embed(&pcm_to_wave(&r.pcm), r.sample_rate)
            .map(|vector| Embedding { key: r.key, vector })
    });
    let embeddings = embedded.into_iter().collect::<spkit::Result<Vec<_>>>()?;
    let mut w = output(out)?;
    write_embeddings(&mut w, &embeddings)?;
    w.flush()?;
    if let Some(p) = utt2spk {
        let mut w = output(Some(p))?;
        write_utt2spk(&mut w, &pairs)?;
        w.flush()?;
    }
    Ok(())
}

fn fit(ctx: &Context, embeddings: &Path, utt2spk: &Path, out: &Path, lmf: bool) -> CliResult<()> {
    let table = EmbeddingTable::load(embeddings)?;
    let (speakers, data) = labelled(&table, &read_utt2spk(utt2spk)?)?;
    let dim = data
        .first()
        .map(|d| d.0.len())
        .ok_or_else(|| CliError::Data(spkit::Error::InvalidInput("no labelled embeddings".into())))?;
    let loss = loss_from_flat(&ctx.config, speakers.len(), dim)?;
    let scheduler = SchedulerConfig::from_flat(&ctx.config)?;
    let fit_cfg = FitConfig::from_flat(&ctx.config, ctx.seed)?;
    let mut o = output(None)?;
    let (mut head, trace) = fit_head(&data, init_head(speakers.len(), dim, ctx.seed), &loss, &scheduler, &fit_cfg)?;
    for (i, l) in trace.epoch_loss.iter().enumerate() {
        writeln!(o, "base epoch {} loss {:.6}", i + 1, l)?;
    }
    if lmf {
        let stage = lmf_config(&TrainStage {
            loss,
            scheduler,
            chunk_frames: PipelineConfig::default().chunk_frames,
        });
        let fine = FitConfig {
            seed: ctx.seed.wrapping_add(1),
            ..fit_cfg
        };
        let (tuned, trace) = fit_head(&data, head, &stage.loss, &stage.scheduler, &fine)?;
        head = tuned;
        for (i, l) in trace.epoch_loss.iter().enumerate() {
            writeln!(o, "lmf epoch {} loss {:.6}", i + 1, l)?;
        }
    }
    writeln!(o, "accuracy {:.2}", 100.0 * accuracy(&head, &data)?)?;
    o.flush()?;
    head.to_tensors().save(out)?;
    Ok(())
}

fn score_trials<F>(trials: &Path, embeddings: &Path, enroll: Option<&Path>, out: Option<&Path>, mut score: F) -> CliResult<()>
where
    F: FnMut(&DVector<f64>, &DVector<f64>) -> CliResult<f64>,
{
    let trials = read_trials(trials)?;
    let table = EmbeddingTable::load(embeddings)?;
    let enroll = enroll.map(read_enroll).transpose()?.unwrap_or_default();
    let mut cache: HashMap<String, DVector<f64>> = HashMap::new();
    let mut get = |key: &str| -> CliResult<DVector<f64>> {
        if let Some(v) = cache.get(key) {
            return Ok(v.clone());
        }
        let v = resolve(key, &table, &enroll)?;
        cache.insert(key.to_string(), v.clone());
        Ok(v)
    };
    let mut scored = Vec::with_capacity(trials.len());
    for t in &trials {
        let (e, x) = (get(&t.enroll)?, get(&t.test)?);
        scored.push(ScoredTrial {
            enroll: t.enroll.clone(),
            test: t.test.clone(),
            score: score(&e, &x)?,
        });
    }
    let mut w = output(out)?;
    write_scores(&mut w, &scored)?;
    w.flush()?;
    Ok(())
}

fn score_cosine(trials: &Path, embeddings: &Path, enroll: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    score_trials(trials, embeddings, enroll, out, |a, b| Ok(cosine_score(a, b)?))
}

fn train_plda(ctx: &Context, embeddings: &Path, utt2spk: &Path, out: &Path) -> CliResult<()> {
    let cfg = PldaTrainConfig::from_flat(&ctx.config)?;
    let norm = plda_length_norm(&ctx.config)?;
    let table = EmbeddingTable::load(embeddings)?;
    let (speakers, data) = labelled(&table, &read_utt2spk(utt2spk)?)?;
    let mut groups: Vec<Vec<DVector<f64>>> = vec![Vec::new(); speakers.len()];
    for (v, id) in data {
        groups[id].push(plda_input(&v, norm)?);
    }
    let (model, trace) = plda_train(&groups, &cfg)?;
    model.to_tensors().save(out)?;
    let mut o = output(None)?;
    for (i, ll) in trace.iter().enumerate() {
        writeln!(o, "iter {i} loglik {ll:.6}")?;
    }
    o.flush()?;
    Ok(())
}

fn load_plda(path: &Path) -> CliResult<PldaScorer> {
    Ok(PldaScorer::new(&PldaModel::from_tensors(&TensorFile::load(path)?)?)?)
}

fn plda_score(scorer: &PldaScorer, norm: bool, a: &DVector<f64>, b: &DVector<f64>) -> CliResult<f64> {
    if a.len() != b.len() {
        return Err(CliError::Data(spkit::Error::InvalidInput("embedding dimension mismatch".into())));
    }
    Ok(scorer.score(&plda_input(a, norm)?, &plda_input(b, norm)?))
}

fn score_plda(ctx: &Context, trials: &Path, embeddings: &Path, plda: &Path, enroll: Option<&Path>, out: Option<&Path>) -> CliResult<()> {
    let scorer = load_plda(plda)?;
    let norm = plda_length_norm(&ctx.config)?;
    score_trials(trials, embeddings, enroll, out, |a, b| plda_score(&scorer, norm, a, b))
}

#[allow(clippy::too_many_arguments)]
fn asnorm(
    ctx: &Context,
    scores: &Path,
    embeddings: &Path,
    cohort: &Path,
    method: &str,
    plda: Option<&Path>,
    enroll: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let top_n: usize = ctx.config.get("asnorm_top_n", 300)?;
    let norm = plda_length_norm(&ctx.config)?;
    let scorer = match (method, plda) {
        ("cosine", _) => None,
        ("plda", Some(p)) => Some(load_plda(p)?),
        ("plda", None) => return Err(CliError::Usage("--method plda needs --plda".into())),
        (other, _) => return Err(CliError::Usage(format!("unknown method `{other}`"))),
    };
    let score = |a: &DVector<f64>, b: &DVector<f64>| -> CliResult<f64> {
        match &scorer {
            None => Ok(cosine_score(a, b)?),
            Some(s) => plda_score(s, norm, a, b),
        }
    };
    let raw = read_scores(scores)?;
    let table = EmbeddingTable::load(embeddings)?;
    let cohort = EmbeddingTable::load(cohort)?;
    let enroll = enroll.map(read_enroll).transpose()?.unwrap_or_default();
    let mut cache: HashMap<String, Vec<f64>> = HashMap::new();
    let mut cohort_scores = |key: &str| -> CliResult<Vec<f64>> {
        if let Some(v) = cache.get(key) {
            return Ok(v.clone());
        }
        let e = resolve(key, &table, &enroll)?;
        let v = cohort.items.iter().map(|c| score(&e, &c.vector)).collect::<CliResult<Vec<_>>>()?;
        cache.insert(key.to_string(), v.clone());
        Ok(v)
    };
    let mut normed = Vec::with_capacity(raw.len());
    for t in raw {
        let (ce, ct) = (cohort_scores(&t.enroll)?, cohort_scores(&t.test)?);
        let score = asnorm_score(t.score, &ce, &ct, top_n)?;
        normed.push(ScoredTrial { score, ..t });
    }
    let mut w = output(out)?;
    write_scores(&mut w, &normed)?;
    w.flush()?;
    Ok(())
}

fn metrics(ctx: &Context, trials: &Path, scores: &Path) -> CliResult<()> {
    let params = DcfParams::from_flat(&ctx.config)?;
    let pairs = join_labels(&read_trials(trials)?, &read_scores(scores)?)?;
    let e = eer(&pairs)?;
    let d = min_dcf(&pairs, params)?;
    let mut o = output(None)?;
    writeln!(o, "EER {:.2}", 100.0 * e.rate)?;
    writeln!(o, "minDCF {:.4}", d.value)?;
    o.flush()?;
    Ok(())
}

/// Windows and their embeddings, grouped per recording in key order.
type Recordings = BTreeMap<String, (Vec<SpeechSegment>, Vec<DVector<f64>>)>;

fn windows_from_embeddings(path: &Path) -> CliResult<Recordings> {
    let table = EmbeddingTable::load(path)?;
    let mut recs: Recordings = BTreeMap::new();
    for e in &table.items {
        let w = parse_window_key(&e.key)?;
        let entry = recs.entry(w.recording.clone()).or_default();
        entry.0.push(w);
        entry.1.push(e.vector.clone());
    }
    Ok(recs)
}

fn windows_from_audio(ctx: &Context, data_list: &Path, weights: &Path, sad: Vec<SpeechSegment>, cfg: &DiarizeConfig) -> CliResult<Recordings> {
    let session = session(ctx, weights)?;
    let mut by_rec: BTreeMap<String, Vec<SpeechSegment>> = BTreeMap::new();
    for s in subsegment(&sad, cfg.windows)? {
        by_rec.entry(s.recording.clone()).or_default().push(s);
    }
    let audio: Vec<UtteranceRecord> = read_raw(read_data_list(data_list)?).collect::<spkit::Result<_>>()?;
    let jobs: Vec<(UtteranceRecord, Vec<SpeechSegment>)> = audio
        .into_iter()
        .filter_map(|r| by_rec.remove(&r.key).map(|w| (r, w)))
        .collect();
    for rec in by_rec.keys() {
        log::warn!("no audio for recording `{rec}`; skipped");
    }
    let done = par_map(jobs, ctx.workers, |(rec, windows)| -> spkit::Result<(String, (Vec<SpeechSegment>, Vec<DVector<f64>>))> {
        let wave = pcm_to_wave(&rec.pcm);
        let sr = rec.sample_rate as f64;
        let mut kept = Vec::new();
        let mut vecs = Vec::new();
        for w in windows {
            let a = ((w.start * sr).round() as usize).min(wave.len());
            let b = ((w.end * sr).round() as usize).min(wave.len());
            if b <= a {
                log::warn!("window {w} lies past the end of `{}`", rec.key);
                continue;
            }
            vecs.push(session.embed(&wave[a..b], rec.sample_rate)?);
            kept.push(w);
        }
        Ok((rec.key, (kept, vecs)))
    });
    Ok(done.into_iter().collect::<spkit::Result<Recordings>>()?)
}

#[allow(clippy::too_many_arguments)]
fn diarize(
    ctx: &Context,
    embeddings: Option<&Path>,
    data_list: Option<&Path>,
    weights: Option<&Path>,
    sad: Option<&Path>,
    oracle: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<()> {
    let cfg = DiarizeConfig::from_flat(&ctx.config)?;
    let recs = match (embeddings, data_list, weights) {
        (Some(e), None, None) => windows_from_embeddings(e)?,
        (None, Some(d), Some(w)) => {
            let regions = match (sad, oracle) {
                (Some(s), None) => read_sad(s)?,
                (None, Some(r)) => speech_regions(&read_rttm(r)?),
                _ => return Err(CliError::Usage("give one of --sad or --oracle-rttm".into())),
            };
            windows_from_audio(ctx, d, w, regions, &cfg)?
        }
        _ => return Err(CliError::Usage("give --embeddings, or --data-list with --weights".into())),
    };
    let jobs: Vec<(Vec<SpeechSegment>, Vec<DVector<f64>>)> = recs.into_values().collect();
    let seed = ctx.seed;
    let results = par_map(jobs, ctx.workers, |(w, e)| diarize_windows(&w, &e, &cfg, seed));
    let mut turns: Vec<LabeledSegment> = Vec::new();
    for r in results {
        turns.extend(r?);
    }
    let mut w = output(out)?;
    write_rttm(&mut w, &turns)?;
    w.flush()?;
    Ok(())
}

fn der(ctx: &Context, reference: &PathBuf, hyp: &PathBuf) -> CliResult<()> {
    let collar: f64 = ctx.config.get("collar", DiarizeConfig::default().collar)?;
    let d = compute_der(&read_rttm(reference)?, &read_rttm(hyp)?, collar)?;
    let mut o = output(None)?;
    writeln!(o, "MISS(%) FA(%) SC(%) DER(%)")?;
    writeln!(
        o,
        "{:.2} {:.2} {:.2} {:.2}",
        100.0 * d.miss,
        100.0 * d.false_alarm,
        100.0 * d.confusion,
        100.0 * d.der
    )?;
    o.flush()?;
    Ok(())
}

fn schedule_dump(ctx: &Context, at: Option<usize>) -> CliResult<()> {
    let s = SchedulerConfig::from_flat(&ctx.config)?;
    let ts: Vec<usize> = match at {
        Some(t) => vec![t],
        None => (0..s.total_iters).collect(),
    };
    let mut o = output(None)?;
    for t in ts {
        let (lr, m) = (s.lr(t).map_err(|e| CliError::Usage(e.to_string()))?, s.margin(t)?);
        writeln!(o, "{t} {lr:.6} {m:.6}")?;
    }
    o.flush()?;
    Ok(())
}
