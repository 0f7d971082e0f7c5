mod common;

use std::fs;

use common::{chain, spkit, Fixture};

fn stdout(o: &common::Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn metrics_on_hand_case() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("t.txt"), "a x target\nb y target\nc z nontarget\nd w nontarget\n").unwrap();
    fs::write(d.join("s.txt"), "a x 0.9\nb y 0.4\nc z 0.6\nd w 0.1\n").unwrap();
    let o = spkit(d, &["metrics", "--trials", "t.txt", "--scores", "s.txt"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert!(stdout(&o).lines().any(|l| l == "EER 25.00"), "{}", stdout(&o));
}

#[test]
fn schedule_at_end_of_warmup() {
    let dir = tempfile::tempdir().unwrap();
    let o = spkit(
        dir.path(),
        &["--set", "lr_initial=0.1", "--set", "lr_final=1e-4", "--set", "total_iters=1000", "--set", "warmup_iters=100", "schedule-dump", "--at", "100"],
    );
    assert_eq!(o.code, 0, "{}", o.stderr);
    let line = stdout(&o);
    let lr = line.split_whitespace().nth(1).unwrap();
    assert_eq!(lr, "0.050119");
}

#[test]
fn full_schedule_has_one_line_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let o = spkit(dir.path(), &["schedule-dump"]);
    assert_eq!(o.code, 0);
    assert_eq!(stdout(&o).lines().count(), 1000);
    let o = spkit(dir.path(), &["schedule-dump", "--at", "1000"]);
    assert_eq!(o.code, 1, "t = T is outside the schedule");
}

#[test]
fn usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(spkit(d, &[]).code, 1);
    assert_eq!(spkit(d, &["no-such-command"]).code, 1);
    assert_eq!(spkit(d, &["--help"]).code, 0);
    assert_eq!(spkit(d, &["metrics", "--trials", "missing", "--scores", "missing"]).code, 2);
    assert_eq!(spkit(d, &["--set", "bogus=1", "schedule-dump"]).code, 1);
    fs::write(d.join("bad.rttm"), "SPEAKER r 1 -1 2 <NA> <NA> a <NA> <NA>\n").unwrap();
    assert_eq!(spkit(d, &["der", "--ref", "bad.rttm", "--hyp", "bad.rttm"]).code, 2);
}

#[test]
fn help_lists_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let o = spkit(dir.path(), &["diarize", "--help"]);
    let help = stdout(&o);
    for key in ["subseg_window", "affinity_keep", "num_speakers", "num_mels", "window"] {
        assert!(help.contains(key), "missing {key}");
    }
}

#[test]
fn der_of_reference_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::build(dir.path());
    let o = spkit(&fx.dir, &["--set", "collar=0", "der", "--ref", "meeting.rttm", "--hyp", "meeting.rttm"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    assert_eq!(stdout(&o), "MISS(%) FA(%) SC(%) DER(%)\n0.00 0.00 0.00 0.00\n");
}

#[test]
fn chain_runs_and_outputs_are_well_formed() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::build(dir.path());
    for s in chain(3) {
        let args: Vec<&str> = s.args.iter().map(String::as_str).collect();
        let o = spkit(&fx.dir, &args);
        assert_eq!(o.code, 0, "{}: {}", s.name, o.stderr);
        for f in &s.outputs {
            assert!(fx.path(f).exists(), "{}: {f} missing", s.name);
        }
        let text = stdout(&o);
        match s.name {
            "pipeline-dump" => {
                let mut lines = text.lines();
                assert_eq!(lines.next(), Some("classes 18"));
                for l in lines {
                    let f: Vec<&str> = l.split_whitespace().collect();
                    assert_eq!(f[2], "50", "{l}");
                    assert_eq!(f[3], "24", "{l}");
                }
            }
            "fit-head" => assert!(text.lines().last().unwrap().starts_with("accuracy ")),
            "metrics" => {
                assert!(text.starts_with("EER "));
                assert!(text.contains("minDCF "));
            }
            "diarize-embeddings" => {
                // three well separated speakers in four windows each
                let labels: Vec<&str> = text.lines().map(|l| l.split_whitespace().nth(7).unwrap()).collect();
                assert_eq!(labels, ["spk0", "spk1", "spk2"], "{text}");
            }
            _ => {}
        }
    }
    let emb = fs::read_to_string(fx.path("emb.txt")).unwrap();
    assert_eq!(emb.lines().count(), common::SPEAKERS * common::UTTS_PER_SPEAKER);
    assert!(emb.lines().all(|l| l.split_whitespace().count() == 17));
    let hyp = fs::read_to_string(fx.path("hyp.rttm")).unwrap();
    assert!(hyp.lines().all(|l| l.starts_with("SPEAKER meeting 1 ")));
}
