use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use genqa_annosvc::{save_campaign, Campaign, Judgment, Store, SystemAnswer};
use genqa_core::corpus::{write_dataset, Candidate, CandidateSet, Dataset, Label, Question, Split};
use genqa_core::fixtures::{water_pump, WATER_PUMP_ANSWER};
use genqa_core::textproc::canonical_form;
use serde_json::Value;

fn genqa(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_genqa"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("GENQA_OUT_DIR")
        .output()
        .unwrap()
}

/// Run directory printed on the last stdout line.
fn run_dir(o: &Output) -> PathBuf {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8_lossy(&o.stdout).lines().last().unwrap().trim())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pump_dataset(dir: &Path) -> PathBuf {
    let mut cset = water_pump();
    cset.reference_answer = Some(WATER_PUMP_ANSWER.into());
    let path = dir.join("pump_train.jsonl");
    write_dataset(
        &Dataset {
            name: "pump_train".into(),
            split: Split::Train,
            entries: vec![cset],
        },
        &path,
    )
    .unwrap();
    path
}

const SMALL_MODEL: &[&str] = &[
    "--d-model", "16", "--n-layers", "1", "--n-heads", "2", "--d-ff", "32", "--dropout", "0",
    "--lr-preset", "custom", "--lr", "0.1", "--batch-size", "1", "--steps", "150",
];

#[test]
fn memorized_pump_answer_comes_back_and_inputs_are_untouched() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let data = pump_dataset(tmp.path());
    let before = std::fs::read(&data).unwrap();

    let built = run_dir(&genqa(&out, &["build-examples", "--dataset-a", s(&data)]));
    let examples = built.join("examples.jsonl");
    let mut train_args = vec!["train", "--examples", s(&examples)];
    train_args.extend(SMALL_MODEL);
    let trained = run_dir(&genqa(&out, &train_args));
    let (ckpt, vocab) = (trained.join("model.gqck"), trained.join("vocab.txt"));
    let generated = run_dir(&genqa(
        &out,
        &[
            "generate", "--eval-dataset", s(&data), "--checkpoint", s(&ckpt), "--vocab", s(&vocab), "--k", "5",
            "--beam", "4", "--max-len", "100",
        ],
    ));
    let line = std::fs::read_to_string(generated.join("generations.jsonl")).unwrap();
    let rec: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    assert_eq!(rec["answer"], canonical_form(WATER_PUMP_ANSWER));
    assert_eq!(rec["system"], "genqa");
    let sel = std::fs::read_to_string(generated.join("selector.jsonl")).unwrap();
    assert!(sel.contains("A small, electrically powered pump."));

    assert_eq!(std::fs::read(&data).unwrap(), before);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(generated.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert!(manifest["inputs"][s(&ckpt)].is_string());
    assert!(manifest["outputs"]["generations.jsonl"].is_string());
    let log = std::fs::read_to_string(generated.join("run.log")).unwrap();
    assert!(log.contains("\"beam\":4"), "effective config is echoed: {log}");
}

fn one_question(correct_at: usize) -> CandidateSet {
    CandidateSet {
        question: Question {
            id: "q1".into(),
            text: "Which one?".into(),
        },
        candidates: (1..=6)
            .map(|i| Candidate {
                id: format!("c{i}"),
                text: format!("Option number {i}."),
                label: if i == correct_at { Label::Correct } else { Label::Incorrect },
                external_score: Some(10.0 - i as f64),
            })
            .collect(),
        reference_answer: None,
    }
}

#[test]
fn evaluate_reports_hit_and_precision() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let data = tmp.path().join("labels_test.jsonl");
    write_dataset(
        &Dataset {
            name: "labels_test".into(),
            split: Split::Test,
            entries: vec![one_question(3)],
        },
        &data,
    )
    .unwrap();
    let outputs = tmp.path().join("selector.jsonl");
    std::fs::write(&outputs, "{\"qid\":\"q1\",\"answer\":\"Option number 1.\",\"log_score\":null,\"system\":\"selector\"}\n").unwrap();
    let dir = run_dir(&genqa(&out, &["evaluate", "--eval-dataset", s(&data), "--outputs", s(&outputs), "--hit-k", "5"]));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["datasets"][0]["selector_hit"], 1.0);
    assert_eq!(report["datasets"][0]["selector_accuracy"], 0.0);
    assert_eq!(report["systems"][0]["accuracy"], 0.0);
    let text = std::fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(text.contains("Sel. Hit@5"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    assert_eq!(genqa(&out, &["rank", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(genqa(&out, &["rank"]).status.code(), Some(1));
    assert_eq!(genqa(&out, &["frobnicate"]).status.code(), Some(1));

    let cfg = tmp.path().join("bad.json");
    std::fs::write(&cfg, r#"{"beam_width": 4}"#).unwrap();
    assert_eq!(genqa(&out, &["rank", "--config", s(&cfg)]).status.code(), Some(1));

    let broken = tmp.path().join("broken_dev.jsonl");
    std::fs::write(&broken, "{\"qid\":\"a\",\"question\":\"q?\",\"candidates\":[{\"cid\":\"c\",\"text\":\"t\",\"label\":1}]}\nnot json\n").unwrap();
    let o = genqa(&out, &["rank", "--dataset-a", s(&broken)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("broken_dev.jsonl:2"), "{err}");

    let missing = tmp.path().join("absent.jsonl");
    assert_eq!(genqa(&out, &["ingest", "--dataset-a", s(&missing)]).status.code(), Some(2));
    assert_eq!(genqa(&out, &["--help"]).status.code(), Some(0));
}

#[test]
fn ingest_and_rank_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let data = tmp.path().join("pump_dev.jsonl");
    write_dataset(
        &Dataset {
            name: "pump_dev".into(),
            split: Split::Dev,
            entries: vec![water_pump(), one_question(2)],
        },
        &data,
    )
    .unwrap();
    let ingested = run_dir(&genqa(&out, &["ingest", "--dataset-a", s(&data)]));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(ingested.join("validation.json")).unwrap()).unwrap();
    assert_eq!(v[0]["questions"], 2);
    assert_eq!(v[0]["split"], "dev");
    assert_eq!(v[0]["advisories"].as_array().unwrap().len(), 1);

    let ranked = run_dir(&genqa(&out, &["rank", "--dataset-a", s(&data)]));
    let lines = std::fs::read_to_string(ranked.join("ranked.jsonl")).unwrap();
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    let order: Vec<&str> = first["ranking"].as_array().unwrap().iter().map(|r| r["cid"].as_str().unwrap()).collect();
    assert_eq!(order, ["c1", "c2", "c3", "c4", "c5"]);
}

#[test]
fn annotation_report_feeds_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let campaign_dir = tmp.path().join("campaign");
    std::fs::create_dir(&campaign_dir).unwrap();
    let questions = BTreeMap::from([("q1".to_string(), "Which one?".to_string())]);
    let answers = [
        SystemAnswer {
            system_id: "genqa".into(),
            qid: "q1".into(),
            answer: "option three".into(),
        },
        SystemAnswer {
            system_id: "selector".into(),
            qid: "q1".into(),
            answer: "Option number 1.".into(),
        },
    ];
    let c = Campaign::create("c", &questions, &answers, 3).unwrap();
    save_campaign(&c, &campaign_dir.join("campaign.json")).unwrap();
    let mut store = Store::durable(c.clone(), &campaign_dir.join("judgments.jsonl")).unwrap();
    for t in &c.tasks {
        let good = t.hidden[0].system_id == "genqa";
        store
            .submit(Judgment {
                task_id: t.task_id.clone(),
                annotator_id: "a".into(),
                factually_correct: good,
                natural_sounding: true,
                self_contained: true,
                timestamp: "2024-01-01T00:00:00.000Z".into(),
            })
            .unwrap();
    }
    drop(store);
    let reported = run_dir(&genqa(&out, &["annotate-report", "--campaign-dir", s(&campaign_dir)]));
    let annotations = reported.join("annotation_report.json");
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&annotations).unwrap()).unwrap();
    assert_eq!(r["systems"]["genqa"]["accuracy"], 1.0);
    assert_eq!(r["systems"]["selector"]["accuracy"], 0.0);

    let data = tmp.path().join("labels_test.jsonl");
    write_dataset(
        &Dataset {
            name: "labels_test".into(),
            split: Split::Test,
            entries: vec![one_question(3)],
        },
        &data,
    )
    .unwrap();
    let outputs = tmp.path().join("all.jsonl");
    std::fs::write(
        &outputs,
        "{\"qid\":\"q1\",\"answer\":\"Option number 1.\",\"log_score\":null,\"system\":\"selector\"}\n\
         {\"qid\":\"q1\",\"answer\":\"option three\",\"log_score\":-0.5,\"system\":\"genqa\"}\n",
    )
    .unwrap();
    let dir = run_dir(&genqa(
        &out,
        &["evaluate", "--eval-dataset", s(&data), "--outputs", s(&outputs), "--annotations", s(&annotations)],
    ));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["datasets"][0]["genqa_accuracy"], 1.0);
    assert_eq!(report["baseline"], "selector");
}
