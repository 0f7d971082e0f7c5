//! A small on-disk corpus and the chain of CLI runs that exercises every
//! subcommand on it.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spkit::uio::wav::encode_pcm16;

pub const SPEAKERS: usize = 6;
pub const UTTS_PER_SPEAKER: usize = 4;

const CONFIG: &str = "\
# small network so the chain runs in seconds
num_mels = 24
tdnn_dims = 32,32,32,32,64
embed_dim = 16
attention_hidden = 8
chunk_frames = 50
shuffle_buffer = 8
total_iters = 200
warmup_iters = 5
margin_start_iter = 10
margin_end_iter = 40
epochs = 4
head_batch_size = 8
asnorm_top_n = 5
max_speakers = 4
";

pub struct Output {
    pub code: i32,
    pub stdout: Vec<u8>,
    pub stderr: String,
}

pub fn spkit(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_spkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn spkit");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: out.stdout,
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Speaker-dependent harmonic tone plus noise.
fn voice(speaker: usize, secs: f64, rate: u32, rng: &mut ChaCha8Rng) -> Vec<i16> {
    let f0 = 110.0 + 37.0 * speaker as f64;
    let n = (secs * rate as f64) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let tone: f64 = (1..=5).map(|h| (2.0 * PI * f0 * h as f64 * t).sin() / h as f64).sum();
            let x = 0.25 * tone + 0.02 * rng.gen_range(-1.0..1.0);
            (x.clamp(-1.0, 1.0) * 32767.0) as i16
        })
        .collect()
}

fn write_wav(path: &Path, pcm: &[i16], rate: u32) {
    fs::write(path, encode_pcm16(pcm, rate).unwrap()).unwrap();
}

fn entry(key: &str, wav: &str, speaker: &str) -> String {
    format!("{{\"key\": \"{key}\", \"wav\": \"{wav}\", \"speaker\": \"{speaker}\"}}\n")
}

pub struct Fixture {
    pub dir: PathBuf,
}

impl Fixture {
    pub fn build(dir: &Path) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        fs::create_dir_all(dir.join("wav")).unwrap();
        let mut list = String::new();
        for s in 0..SPEAKERS {
            for u in 0..UTTS_PER_SPEAKER {
                // one speaker recorded at 8 kHz to go through resampling
                let rate = if s == 5 { 8000 } else { 16000 };
                let name = format!("wav/s{s}_u{u}.wav");
                write_wav(&dir.join(&name), &voice(s, 0.8 + 0.1 * u as f64, rate, &mut rng), rate);
                list += &entry(&format!("s{s}_u{u}"), &dir.join(&name).to_string_lossy(), &format!("spk{s}"));
            }
        }
        fs::write(dir.join("data.list"), list).unwrap();

        let noise: Vec<i16> = (0..8000).map(|_| rng.gen_range(-3000..3000)).collect();
        write_wav(&dir.join("wav/noise.wav"), &noise, 16000);
        fs::write(dir.join("noise.map"), "wav/noise.wav\tnoise\n").unwrap();
        let rir: Vec<i16> = (0..800).map(|i| (20000.0 * (-(i as f64) / 120.0).exp()) as i16).collect();
        write_wav(&dir.join("wav/rir.wav"), &rir, 16000);
        fs::write(dir.join("rir.map"), "wav/rir.wav\trir\n").unwrap();

        let mut trials = String::new();
        for a in 0..SPEAKERS {
            for b in 0..SPEAKERS {
                let label = if a == b { "target" } else { "nontarget" };
                trials += &format!("s{a}_u0 s{b}_u{} {label}\n", 1 + (a + b) % 3);
            }
        }
        fs::write(dir.join("trials.txt"), trials).unwrap();
        let enroll: String = (0..SPEAKERS).map(|s| format!("m{s} s{s}_u0 s{s}_u1\n")).collect();
        fs::write(dir.join("enroll.txt"), enroll).unwrap();
        let model_trials: String = (0..SPEAKERS)
            .flat_map(|a| (0..SPEAKERS).map(move |b| (a, b)))
            .map(|(a, b)| format!("m{a} s{b}_u3 {}\n", if a == b { "target" } else { "nontarget" }))
            .collect();
        fs::write(dir.join("model_trials.txt"), model_trials).unwrap();

        // one recording, three speakers taking turns
        let turns = [(0usize, 0.0, 2.0), (1, 2.0, 4.0), (2, 4.0, 6.0), (0, 6.0, 7.5)];
        let mut rec = Vec::new();
        let mut rttm = String::new();
        for &(s, a, b) in &turns {
            rec.extend(voice(s, b - a, 16000, &mut rng));
            rttm += &format!("SPEAKER meeting 1 {a:.3} {:.3} <NA> <NA> S{s} <NA> <NA>\n", b - a);
        }
        write_wav(&dir.join("wav/meeting.wav"), &rec, 16000);
        fs::write(dir.join("meeting.list"), entry("meeting", &dir.join("wav/meeting.wav").to_string_lossy(), "none")).unwrap();
        fs::write(dir.join("meeting.rttm"), rttm).unwrap();
        fs::write(dir.join("meeting.sad"), "meeting 0.1 3.9\nmeeting 4.0 7.4\n").unwrap();

        // window embeddings for the embeddings-only diarization mode
        let mut emb = String::new();
        for w in 0..12 {
            let (start, end) = (750 * w, 750 * w + 1500);
            let spk = w / 4;
            emb += &format!("call_{start:07}_{end:07}");
            for d in 0..8 {
                let v: f64 = if d == spk { 5.0 } else { 0.0 } + rng.gen_range(-1.0..1.0);
                emb += &format!(" {v}");
            }
            emb += "\n";
        }
        fs::write(dir.join("windows.emb"), emb).unwrap();

        fs::write(dir.join("small.conf"), CONFIG).unwrap();
        Fixture { dir: dir.to_path_buf() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

/// One CLI run and the files it writes.
pub struct Step {
    pub name: &'static str,
    pub args: Vec<String>,
    pub outputs: Vec<&'static str>,
}

fn step(name: &'static str, args: &str, outputs: &[&'static str]) -> Step {
    Step {
        name,
        args: args.split_whitespace().map(str::to_string).collect(),
        outputs: outputs.to_vec(),
    }
}

/// Every subcommand in dependency order, all under `--seed seed`.
pub fn chain(seed: u64) -> Vec<Step> {
    let g = format!("--seed {seed} --config small.conf");
    vec![
        step("make-shards", &format!("{g} make-shards --data-list data.list --out-dir shards --shard-size 5 --gzip"), &["shards/shards.list"]),
        step("pipeline-dump", &format!("{g} pipeline-dump --shards shards/shards.list --noise noise.map --rir rir.map --limit 100"), &[]),
        step("init-weights", &format!("{g} init-weights --out weights.bin"), &["weights.bin"]),
        step(
            "extract",
            &format!("{g} --workers 3 extract --shards shards/shards.list --weights weights.bin --out emb.txt --utt2spk utt2spk"),
            &["emb.txt", "utt2spk"],
        ),
        step("fit-head", &format!("{g} fit-head --embeddings emb.txt --utt2spk utt2spk --out head.bin --lmf"), &["head.bin"]),
        step("score-cosine", &format!("{g} score-cosine --trials trials.txt --embeddings emb.txt --out cos.scores"), &["cos.scores"]),
        step(
            "score-cosine-enroll",
            &format!("{g} score-cosine --trials model_trials.txt --embeddings emb.txt --enroll enroll.txt --out model.scores"),
            &["model.scores"],
        ),
        step("train-plda", &format!("{g} train-plda --embeddings emb.txt --utt2spk utt2spk --out plda.bin"), &["plda.bin"]),
        step("score-plda", &format!("{g} score-plda --trials trials.txt --embeddings emb.txt --plda plda.bin --out plda.scores"), &["plda.scores"]),
        step(
            "asnorm",
            &format!("{g} asnorm --scores plda.scores --embeddings emb.txt --cohort emb.txt --method plda --plda plda.bin --out norm.scores"),
            &["norm.scores"],
        ),
        step("metrics", &format!("{g} metrics --trials trials.txt --scores norm.scores"), &[]),
        step(
            "diarize",
            &format!("{g} --workers 2 diarize --data-list meeting.list --weights weights.bin --oracle-rttm meeting.rttm --out hyp.rttm"),
            &["hyp.rttm"],
        ),
        step(
            "diarize-sad",
            &format!("{g} diarize --data-list meeting.list --weights weights.bin --sad meeting.sad --out sad.rttm"),
            &["sad.rttm"],
        ),
        step("diarize-embeddings", &format!("{g} diarize --embeddings windows.emb"), &[]),
        step("der", &format!("{g} der --ref meeting.rttm --hyp hyp.rttm"), &[]),
        step("schedule-dump", &format!("{g} schedule-dump"), &[]),
    ]
}
