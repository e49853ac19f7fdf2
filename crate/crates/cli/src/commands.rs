//! One function per subcommand. Each reads its inputs, writes into the run
//! directory and never touches the input files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use genqa_annosvc::{self as annosvc, AccessLog, AppState, Campaign, Store, SystemAnswer};
use genqa_core::corpus::{load_dataset, validate, Dataset, Format, Label};
use genqa_core::decode::{generate, read_outputs, write_outputs, OutputRecord};
use genqa_core::error::Error as CoreError;
use genqa_core::genbuild::{build_corpus, rank_dataset, read_examples, write_examples, ScorerConfig, TrainingExample};
use genqa_core::metrics::{
    bleu, corpus_rouge_l, hit_at_k, length_stats, precision_at_1, render_report, DatasetRow, GenEvalPair, RankEval,
    Report, SystemRow,
};
use genqa_core::selector::{build_idf, import_scores, LexicalScorer, RankedList, ScoreSource};
use genqa_core::seq2seq::{checkpoint, encode_examples, run_strategy};
use genqa_core::textproc::{build_vocab, Vocab};
use serde::Serialize;

use crate::config::{usage, Config};
use crate::run::Run;

/// BLEU order used in reports.
pub const BLEU_ORDER: usize = 4;

pub const GENQA_SYSTEM: &str = "genqa";
pub const SELECTOR_SYSTEM: &str = "selector";

/// A dataset ready for ranking, with the scorer its scores call for.
pub struct Loaded {
    pub dataset: Dataset,
    pub scorer: ScorerConfig,
}

fn first_field(line: &str) -> &str {
    line.split('\t').next().unwrap_or("")
}

/// Loads `path`. When the scores file names any of its questions, the scores
/// are imported and ranking uses them; so does a dataset whose candidates all
/// carry embedded scores. Anything else is ranked lexically.
pub fn load(run: &mut Run, cfg: &Config, path: &Path) -> Result<Loaded> {
    run.input(path)?;
    let mut dataset = load_dataset(path, Format::As2Jsonl)?;
    let mut scorer = if dataset
        .entries
        .iter()
        .all(|e| e.candidates.iter().all(|c| c.external_score.is_some()))
    {
        ScorerConfig::External
    } else {
        ScorerConfig::Lexical
    };
    if let Some(scores) = &cfg.scores {
        let text = fs::read_to_string(scores).with_context(|| format!("reading {}", scores.display()))?;
        let covers = text.lines().any(|l| {
            let q = first_field(l);
            dataset.entries.iter().any(|e| e.question.id == q)
        });
        if covers {
            run.input(scores)?;
            dataset = import_scores(&dataset, scores)?;
            scorer = ScorerConfig::External;
        }
    }
    run.log(&format!(
        "loaded {} ({} questions, {:?} ranking)",
        path.display(),
        dataset.entries.len(),
        scorer
    ));
    Ok(Loaded { dataset, scorer })
}

fn eval_path(cfg: &Config) -> Result<&Path> {
    match (&cfg.eval_dataset, &cfg.dataset_a) {
        (Some(p), _) | (None, Some(p)) => Ok(p),
        (None, None) => Err(usage("missing eval_dataset (or dataset_a)")),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DatasetSummary {
    key: String,
    path: String,
    name: String,
    split: genqa_core::corpus::Split,
    questions: usize,
    answerable: usize,
    violations: Vec<genqa_core::corpus::Violation>,
    advisories: Vec<genqa_core::corpus::Violation>,
}

pub fn ingest(run: &mut Run, cfg: &Config) -> Result<()> {
    let sets = [("dataset_a", &cfg.dataset_a), ("dataset_b", &cfg.dataset_b), ("eval_dataset", &cfg.eval_dataset)];
    if sets.iter().all(|(_, p)| p.is_none()) {
        return Err(usage("ingest needs at least one of dataset_a, dataset_b, eval_dataset"));
    }
    let mut summaries = Vec::new();
    for (key, path) in sets {
        let Some(path) = path else { continue };
        run.input(path)?;
        let d = load_dataset(path, Format::As2Jsonl)?;
        let report = validate(&d);
        run.log(&format!(
            "{key}: {} questions, {} violations, {} advisories",
            d.entries.len(),
            report.violations.len(),
            report.advisories.len()
        ));
        summaries.push(DatasetSummary {
            key: key.into(),
            path: path.display().to_string(),
            name: d.name.clone(),
            split: d.split,
            questions: d.entries.len(),
            answerable: d.entries.iter().filter(|e| e.has_correct()).count(),
            violations: report.violations,
            advisories: report.advisories,
        });
    }
    write_json(&run.path("validation.json"), &summaries)?;
    let bad: Vec<String> = summaries
        .iter()
        .flat_map(|s| s.violations.iter().map(move |v| format!("{}: {v}", s.path)))
        .collect();
    if !bad.is_empty() {
        return Err(CoreError::Data(bad.join("; ")).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct RankedRow<'a> {
    cid: &'a str,
    score: f64,
    label: Label,
}

#[derive(Serialize)]
struct RankedRecord<'a> {
    qid: &'a str,
    ranking: Vec<RankedRow<'a>>,
}

fn rank_loaded(loaded: &Loaded) -> Result<Vec<RankedList>> {
    Ok(rank_dataset(&loaded.dataset, loaded.scorer)?)
}

fn ranking_scores(lists: &[RankedList], hit_k: usize) -> Result<(f64, f64)> {
    let evals = lists.iter().map(RankEval::from_ranked).collect::<genqa_core::error::Result<Vec<_>>>()?;
    Ok((precision_at_1(&evals)?, hit_at_k(&evals, hit_k)?))
}

pub fn rank(run: &mut Run, cfg: &Config) -> Result<()> {
    let path = cfg.need(&cfg.dataset_a, "dataset_a")?;
    let loaded = load(run, cfg, path)?;
    let lists = rank_loaded(&loaded)?;
    let records: Vec<RankedRecord> = lists
        .iter()
        .map(|l| RankedRecord {
            qid: &l.question.id,
            ranking: l
                .entries
                .iter()
                .map(|e| RankedRow {
                    cid: &e.candidate.id,
                    score: e.score,
                    label: e.candidate.label,
                })
                .collect(),
        })
        .collect();
    write_jsonl(&run.path("ranked.jsonl"), &records)?;
    if !lists.is_empty() {
        let (p1, hit) = ranking_scores(&lists, cfg.hit_k)?;
        run.log(&format!("P@1 {p1:.3}  Hit@{} {hit:.3}", cfg.hit_k));
    }
    Ok(())
}

fn build_one(run: &mut Run, cfg: &Config, path: &Path, suffix: &str) -> Result<PathBuf> {
    let loaded = load(run, cfg, path)?;
    let built = build_corpus(&loaded.dataset, loaded.scorer, cfg.k, cfg.seed)?;
    run.log(&format!(
        "{}: {} examples, {} skipped",
        path.display(),
        built.examples.len(),
        built.skipped.len()
    ));
    let out = run.path(&format!("examples{suffix}.jsonl"));
    write_examples(&built.examples, &out)?;
    write_jsonl(&run.path(&format!("skipped{suffix}.jsonl")), &built.skipped)?;
    Ok(out)
}

/// Returns the example files written for A and, when set, B.
pub fn build_examples(run: &mut Run, cfg: &Config) -> Result<(PathBuf, Option<PathBuf>)> {
    let a = build_one(run, cfg, cfg.need(&cfg.dataset_a, "dataset_a")?, "")?;
    let b = match &cfg.dataset_b {
        Some(p) => Some(build_one(run, cfg, p, "_b")?),
        None => None,
    };
    Ok((a, b))
}

fn read_ex(run: &mut Run, path: &Path) -> Result<Vec<TrainingExample>> {
    run.input(path)?;
    Ok(read_examples(path)?)
}

/// Returns the checkpoint and vocabulary paths.
pub fn train(run: &mut Run, cfg: &Config) -> Result<(PathBuf, PathBuf)> {
    let spec = cfg.strategy_spec()?;
    let a = read_ex(run, cfg.need(&cfg.examples, "examples")?)?;
    let b = match (spec.uses_b(), &cfg.examples_b) {
        (true, Some(p)) => Some(read_ex(run, p)?),
        (true, None) => return Err(usage(format!("strategy {:?} needs examples_b", cfg.strategy))),
        (false, _) => None,
    };
    let vocab_path = run.path("vocab.txt");
    let vocab = match &cfg.vocab {
        Some(p) => {
            run.input(p)?;
            Vocab::read(p)?
        }
        None => {
            let texts = a
                .iter()
                .chain(b.iter().flatten())
                .flat_map(|e| [e.source_text.as_str(), e.target_text.as_str()]);
            build_vocab(texts, cfg.vocab_size, cfg.min_freq)?
        }
    };
    vocab.write(&vocab_path)?;
    let mconf = cfg.model_config(vocab.len());
    mconf.validate()?;
    let enc_a = encode_examples(&a, &vocab, &mconf);
    let enc_b = b.as_ref().map(|b| encode_examples(b, &vocab, &mconf));
    run.log(&format!(
        "training {:?} for {} steps on {} (+{}) examples, vocab {}",
        cfg.strategy,
        spec.total_steps(),
        enc_a.len(),
        enc_b.as_ref().map_or(0, Vec::len),
        vocab.len()
    ));
    let outcome = run_strategy(&spec, &enc_a, enc_b.as_deref(), &mconf, cfg.seed)?;
    if !outcome.params.is_finite() {
        return Err(CoreError::Data("training diverged to non-finite parameters".into()).into());
    }
    let ckpt = run.path("model.gqck");
    checkpoint::save(&outcome.params, &ckpt)?;
    let mut curve = String::from("step\tloss\n");
    for (i, l) in outcome.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{}\t{l:.6}\n", i + 1));
    }
    fs::write(run.path("loss_curve.tsv"), curve)?;
    if let (Some(first), Some(last)) = (outcome.loss_curve.first(), outcome.loss_curve.last()) {
        run.log(&format!("loss {first:.4} -> {last:.4}"));
    }
    Ok((ckpt, vocab_path))
}

/// Returns the selector and GenQA output files.
pub fn generate_outputs(run: &mut Run, cfg: &Config, ckpt: &Path, vocab: &Path) -> Result<(PathBuf, PathBuf)> {
    run.input(ckpt)?;
    run.input(vocab)?;
    let params = checkpoint::load(ckpt)?;
    let vocab = Vocab::read(vocab)?;
    if vocab.len() != params.config.vocab_size {
        return Err(CoreError::Data(format!(
            "vocabulary has {} tokens but the checkpoint expects {}",
            vocab.len(),
            params.config.vocab_size
        ))
        .into());
    }
    let loaded = load(run, cfg, eval_path(cfg)?)?;
    let lexical = match loaded.scorer {
        ScorerConfig::Lexical if !loaded.dataset.entries.is_empty() => {
            Some(LexicalScorer::new(build_idf(&loaded.dataset)?))
        }
        _ => None,
    };
    let source = || match &lexical {
        Some(s) => ScoreSource::Scorer(s),
        None => ScoreSource::External,
    };
    let dcfg = cfg.decode_config();
    let lists = rank_loaded(&loaded)?;
    let mut selector = Vec::new();
    let mut genqa = Vec::new();
    for (cset, ranked) in loaded.dataset.entries.iter().zip(&lists) {
        let best = ranked.best().expect("validated entries have candidates");
        selector.push(OutputRecord {
            qid: cset.question.id.clone(),
            answer: best.text.clone(),
            log_score: None,
            system: SELECTOR_SYSTEM.into(),
        });
        let g = generate(&params, &vocab, cset, source(), cfg.k, &dcfg, cfg.truncate)?;
        genqa.push(OutputRecord::from(&g));
    }
    run.log(&format!("generated {} answers", genqa.len()));
    let sel_path = run.path("selector.jsonl");
    let gen_path = run.path("generations.jsonl");
    write_outputs(&selector, &sel_path)?;
    write_outputs(&genqa, &gen_path)?;
    Ok((sel_path, gen_path))
}

pub fn generate_cmd(run: &mut Run, cfg: &Config) -> Result<()> {
    let ckpt = cfg.need(&cfg.checkpoint, "checkpoint")?.to_path_buf();
    let vocab = cfg.need(&cfg.vocab, "vocab")?.to_path_buf();
    generate_outputs(run, cfg, &ckpt, &vocab)?;
    Ok(())
}

/// Answers grouped by system, in order of first appearance.
fn read_systems(run: &mut Run, paths: &[PathBuf], dataset: &Dataset) -> Result<Vec<(String, Vec<OutputRecord>)>> {
    let qids: HashMap<&str, ()> = dataset.entries.iter().map(|e| (e.question.id.as_str(), ())).collect();
    let mut systems: Vec<(String, Vec<OutputRecord>)> = Vec::new();
    for path in paths {
        run.input(path)?;
        for (i, r) in read_outputs(path)?.into_iter().enumerate() {
            if !qids.contains_key(r.qid.as_str()) {
                return Err(CoreError::Record {
                    path: path.clone(),
                    line: i + 1,
                    message: format!("unknown question {:?}", r.qid),
                }
                .into());
            }
            match systems.iter_mut().find(|(s, _)| *s == r.system) {
                Some((_, rs)) => rs.push(r),
                None => systems.push((r.system.clone(), vec![r])),
            }
        }
    }
    for (s, rs) in &systems {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = rs.iter().find(|r| !seen.insert(r.qid.as_str())) {
            return Err(CoreError::Data(format!("system {s:?} answers {:?} twice", dup.qid)).into());
        }
    }
    Ok(systems)
}

#[derive(serde::Deserialize)]
struct AnnotationReport {
    systems: BTreeMap<String, annosvc::SystemAccuracy>,
}

/// Accuracy of answers that are all verbatim candidates, read off the labels.
fn label_accuracy(records: &[OutputRecord], dataset: &Dataset) -> Option<f64> {
    let by_qid: HashMap<&str, _> = dataset.entries.iter().map(|e| (e.question.id.as_str(), e)).collect();
    let mut correct = 0usize;
    for r in records {
        let cand = by_qid[r.qid.as_str()].candidates.iter().find(|c| c.text == r.answer)?;
        correct += cand.label.is_correct() as usize;
    }
    Some(correct as f64 / records.len() as f64)
}

/// Labeled-correct candidates plus the reference answer, if any.
fn references(dataset: &Dataset) -> HashMap<&str, Vec<String>> {
    dataset
        .entries
        .iter()
        .map(|e| {
            let mut refs: Vec<String> = e
                .candidates
                .iter()
                .filter(|c| c.label.is_correct())
                .map(|c| c.text.clone())
                .collect();
            refs.extend(e.reference_answer.clone());
            (e.question.id.as_str(), refs)
        })
        .collect()
}

pub fn evaluate_outputs(run: &mut Run, cfg: &Config, outputs: &[PathBuf]) -> Result<Report> {
    if outputs.is_empty() {
        return Err(usage("evaluate needs at least one outputs file"));
    }
    let loaded = load(run, cfg, eval_path(cfg)?)?;
    let dataset = &loaded.dataset;
    if dataset.entries.is_empty() {
        return Err(CoreError::Data("evaluation dataset has no questions".into()).into());
    }
    let systems = read_systems(run, outputs, dataset)?;
    let annotations: BTreeMap<String, annosvc::SystemAccuracy> = match &cfg.annotations {
        Some(p) => {
            run.input(p)?;
            let text = fs::read_to_string(p)?;
            serde_json::from_str::<AnnotationReport>(&text)
                .map_err(|e| CoreError::Format(format!("{}: {e}", p.display())))?
                .systems
        }
        None => BTreeMap::new(),
    };
    let refs = references(dataset);
    let mut rows = Vec::new();
    let mut lengths = HashMap::new();
    for (system, records) in &systems {
        let pairs: Vec<GenEvalPair> = records
            .iter()
            .filter(|r| !refs[r.qid.as_str()].is_empty())
            .map(|r| GenEvalPair::new(r.answer.clone(), refs[r.qid.as_str()].clone()))
            .collect::<genqa_core::error::Result<_>>()?;
        let (b, r) = if pairs.is_empty() {
            (None, None)
        } else {
            (Some(bleu(&pairs, BLEU_ORDER)?), Some(corpus_rouge_l(&pairs, 1.0)?))
        };
        let accuracy = annotations
            .get(system)
            .map(|a| a.accuracy)
            .or_else(|| label_accuracy(records, dataset));
        let answers: Vec<&str> = records.iter().map(|r| r.answer.as_str()).collect();
        lengths.insert(system.as_str(), length_stats(&answers)?);
        rows.push(SystemRow {
            system: system.clone(),
            accuracy,
            bleu: b,
            rouge_l: r,
        });
    }
    let lists = rank_loaded(&loaded)?;
    let (p1, hit) = ranking_scores(&lists, cfg.hit_k)?;
    let top1: Vec<&str> = lists.iter().filter_map(|l| l.best()).map(|c| c.text.as_str()).collect();
    let genqa_row = rows.iter().find(|r| r.system == GENQA_SYSTEM);
    let report = Report {
        baseline: systems
            .iter()
            .any(|(s, _)| s == SELECTOR_SYSTEM)
            .then(|| SELECTOR_SYSTEM.to_string()),
        hit_k: cfg.hit_k,
        datasets: vec![DatasetRow {
            dataset: dataset.name.clone(),
            selector_accuracy: Some(p1),
            selector_hit: Some(hit),
            selector_length: Some(length_stats(&top1)?),
            genqa_accuracy: genqa_row.and_then(|r| r.accuracy),
            genqa_length: lengths.get(GENQA_SYSTEM).copied(),
        }],
        systems: rows,
    };
    let text = render_report(&report);
    fs::write(run.path("report.txt"), &text)?;
    write_json(&run.path("report.json"), &report)?;
    print!("{text}");
    Ok(report)
}

pub fn evaluate(run: &mut Run, cfg: &Config) -> Result<()> {
    evaluate_outputs(run, cfg, &cfg.outputs)?;
    Ok(())
}

pub fn pipeline(run: &mut Run, cfg: &Config) -> Result<()> {
    ingest(run, cfg)?;
    rank(run, cfg)?;
    let (a, b) = build_examples(run, cfg)?;
    let staged = Config {
        examples: Some(a),
        examples_b: b,
        ..cfg.clone()
    };
    let (ckpt, vocab) = train(run, &staged)?;
    let (sel, gen) = generate_outputs(run, cfg, &ckpt, &vocab)?;
    evaluate_outputs(run, cfg, &[sel, gen])?;
    Ok(())
}

fn campaign_dir(run: &Run, cfg: &Config) -> PathBuf {
    cfg.campaign_dir.clone().unwrap_or_else(|| run.dir.clone())
}

/// Loads the campaign in `dir` or creates it from the configured outputs.
fn open_campaign(run: &mut Run, cfg: &Config, dir: &Path) -> Result<Campaign> {
    let path = dir.join("campaign.json");
    if path.exists() {
        run.log(&format!("resuming {}", path.display()));
        return Ok(annosvc::load_campaign(&path)?);
    }
    if cfg.outputs.is_empty() {
        return Err(usage("a new campaign needs outputs files"));
    }
    let loaded = load(run, cfg, eval_path(cfg)?)?;
    let questions: BTreeMap<String, String> = loaded
        .dataset
        .entries
        .iter()
        .map(|e| (e.question.id.clone(), e.question.text.clone()))
        .collect();
    let mut answers = Vec::new();
    for (system, records) in read_systems(run, &cfg.outputs, &loaded.dataset)? {
        answers.extend(records.into_iter().map(|r| SystemAnswer {
            system_id: system.clone(),
            qid: r.qid,
            answer: r.answer,
        }));
    }
    let c = Campaign::create(cfg.campaign_id.clone(), &questions, &answers, cfg.seed)?;
    fs::create_dir_all(dir)?;
    annosvc::save_campaign(&c, &path)?;
    run.log(&format!("created campaign {:?} with {} tasks", c.id, c.tasks.len()));
    Ok(c)
}

pub fn annotate_serve(run: &mut Run, cfg: &Config) -> Result<()> {
    let dir = campaign_dir(run, cfg);
    let campaign = open_campaign(run, cfg, &dir)?;
    let id = campaign.id.clone();
    let store = Store::durable(campaign, &dir.join("judgments.jsonl"))?;
    let state = Arc::new(AppState::new(AccessLog::to_file(&dir.join("access.log"))?));
    state.insert(store);
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], cfg.port));
    run.log(&format!("serving campaign {id:?} on http://{addr}/campaigns/{id}/next"));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        tokio::select! {
            r = annosvc::serve(addr, state) => r,
            _ = tokio::signal::ctrl_c() => Ok(()),
        }
    })?;
    Ok(())
}

pub fn annotate_report(run: &mut Run, cfg: &Config) -> Result<()> {
    let dir = cfg.need(&cfg.campaign_dir, "campaign_dir")?;
    let def_path = dir.join("campaign.json");
    run.input(&def_path)?;
    let definition = annosvc::load_campaign(&def_path)?;
    let log = dir.join("judgments.jsonl");
    let c = if log.exists() {
        run.input(&log)?;
        annosvc::replay(&definition, &log)?
    } else {
        definition
    };
    let report = annosvc::Report {
        campaign: c.id.clone(),
        judged: c.judged_count(),
        total: c.tasks.len(),
        systems: c.compute_accuracy()?,
    };
    write_json(&run.path("annotation_report.json"), &report)?;
    let mut text = format!("Campaign {} ({}/{} judged)\n", report.campaign, report.judged, report.total);
    for (s, a) in &report.systems {
        text.push_str(&format!("{s}\t{:.1}\t({} judged)\n", 100.0 * a.accuracy, a.judged));
    }
    fs::write(run.path("annotation_report.txt"), &text)?;
    print!("{text}");
    Ok(())
}
