use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sparqlcopy::copynet::{
    greedy_decode, train as train_model, Checkpoint, CheckpointManifest, ModelFile, ModelKind, Prediction,
    TrainConfig, TrainReport,
};
use sparqlcopy::corpus::synthetic::{self, SyntheticConfig};
use sparqlcopy::corpus::{
    annotate_raw, annotate_tag_end, annotate_tag_within, build_instruction_prompt, enrich_answers, filter_nonempty,
    kb_elements, load_dataset, load_templates, match_bindings, read_jsonl, recover_templates, write_jsonl, Bindings,
    Entry, GlobalTemplate, LabelSource, PromptMode, Scheme,
};
use sparqlcopy::endpoint::{Client, EndpointConfig};
use sparqlcopy::erroranalysis::{error_matrix, render_report, ErrorMatrix};
use sparqlcopy::metrics::{aggregate_runs, evaluate_run, results_csv, results_markdown, RunReport};
use sparqlcopy::sparqltok::{tokenize_query, KbMembership};
use sparqlcopy::vocab::{build_vocabularies, compute_oov, Example, TriVocabulary};
use sparqlcopy::{Error, ModelF64};

use crate::config::{sha256_hex, PipelineConfig};
use crate::{EndpointArgs, TrainArgs};

fn client(args: &EndpointArgs) -> Result<Client> {
    let config = EndpointConfig {
        url: args.endpoint.clone(),
        timeout_secs: args.timeout,
        max_parallel: args.max_parallel,
        cache: args.cache.clone(),
        ..EndpointConfig::default()
    };
    Ok(Client::new(config)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    write_jsonl(path, records).with_context(|| format!("writing {}", path.display()))
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

pub fn synth(out: &Path, config: SyntheticConfig) -> Result<()> {
    let corpus = synthetic::generate(&config)?;
    fs::create_dir_all(out)?;
    write_lines(&out.join("train.jsonl"), &corpus.split.train)?;
    write_lines(&out.join("validation.jsonl"), &corpus.split.validation)?;
    write_lines(&out.join("test.jsonl"), &corpus.split.test)?;
    write_json(&out.join("templates.json"), &corpus.templates)?;
    write_json(&out.join("labels.json"), &corpus.labels)?;
    fs::write(out.join("kb.ttl"), &corpus.turtle)?;
    log::info!(
        "wrote {} / {} / {} entries to {}",
        corpus.split.train.len(),
        corpus.split.validation.len(),
        corpus.split.test.len(),
        out.display()
    );
    Ok(())
}

pub fn enrich(input: &Path, out: &Path, endpoint: &EndpointArgs) -> Result<()> {
    let entries = load_dataset(input)?;
    let enriched = enrich_answers(&entries, &client(endpoint)?)?;
    write_lines(out, &enriched)
}

enum TemplateSource {
    Given(HashMap<String, GlobalTemplate>),
    Recovered(HashMap<String, (GlobalTemplate, Bindings)>),
}

pub fn annotate(
    input: &Path,
    scheme: Scheme,
    out: &Path,
    templates: Option<&Path>,
    labels: Option<&Path>,
    seed: u64,
    lenient: bool,
) -> Result<()> {
    let entries = load_dataset(input)?;
    let labels = match labels {
        Some(p) => LabelSource::load(p)?,
        None => LabelSource::default(),
    };
    let source = match (scheme, templates) {
        (Scheme::TagWithin, Some(p)) => Some(TemplateSource::Given(
            load_templates(p)?.into_iter().map(|t| (t.id.clone(), t)).collect(),
        )),
        (Scheme::TagWithin, None) => {
            let rec = recover_templates(&entries, &labels)?;
            let by_id: HashMap<&str, &GlobalTemplate> = rec.templates.iter().map(|t| (t.id.as_str(), t)).collect();
            let mut map = HashMap::new();
            for (e, a) in entries.iter().zip(&rec.assignments) {
                if let Some((tid, b)) = a {
                    map.insert(e.id.clone(), ((*by_id[tid.as_str()]).clone(), b.clone()));
                }
            }
            Some(TemplateSource::Recovered(map))
        }
        _ => None,
    };
    let mut examples = Vec::with_capacity(entries.len());
    let mut failures = 0usize;
    for entry in &entries {
        let result = (|| -> Result<Example> {
            let question = match scheme {
                Scheme::RawQuestion => annotate_raw(entry),
                Scheme::TagWithin => match source.as_ref().expect("set for tag-within") {
                    TemplateSource::Given(map) => {
                        let tid = entry
                            .template_id
                            .as_ref()
                            .ok_or_else(|| anyhow!("entry has no template id"))?;
                        let t = map.get(tid).ok_or_else(|| anyhow!("unknown template `{tid}`"))?;
                        annotate_tag_within(entry, t, &match_bindings(t, entry, &labels)?)?
                    }
                    TemplateSource::Recovered(map) => {
                        let (t, b) = map.get(&entry.id).ok_or_else(|| anyhow!("no template could be recovered"))?;
                        annotate_tag_within(entry, t, b)?
                    }
                },
                Scheme::TagEnd => annotate_tag_end(entry, &kb_elements(entry, &labels)?, seed),
            };
            question.validate().map_err(|m| anyhow!(m))?;
            Ok(Example {
                id: entry.id.clone(),
                question,
                query: tokenize_query(&entry.query)?,
            })
        })();
        match result {
            Ok(ex) => examples.push(ex),
            Err(e) => {
                failures += 1;
                if lenient {
                    log::warn!("skipping entry `{}`: {e:#}", entry.id);
                } else {
                    log::error!("entry `{}`: {e:#}", entry.id);
                }
            }
        }
    }
    if failures > 0 && !lenient {
        bail!("{failures} entries could not be annotated (use --lenient to skip them)");
    }
    write_lines(out, &examples)?;
    log::info!("annotated {} entries ({failures} skipped)", examples.len());
    Ok(())
}

pub fn vocab(train: &Path, validation: Option<&Path>, test: Option<&Path>, scheme: Scheme, out: &Path) -> Result<()> {
    let train: Vec<Example> = read_lines(train)?;
    let vocab = build_vocabularies(&train, scheme)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    vocab.save(out)?;
    let load = |p: Option<&Path>| -> Result<Vec<Example>> { p.map(read_lines).transpose().map(Option::unwrap_or_default) };
    let stats = compute_oov(&vocab, &load(validation)?, &load(test)?)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

/// Checkpoint with the hash of the configuration that produced it.
#[derive(Serialize, Deserialize)]
struct StoredCheckpoint {
    config_hash: String,
    checkpoint: Checkpoint,
}

#[derive(Serialize)]
struct HashInput<'a> {
    model: ModelKind,
    copy: bool,
    hidden: usize,
    scheme: Scheme,
    train_config: &'a TrainConfig,
    train: String,
    validation: String,
    vocab: String,
}

fn apply_overrides(cfg: &mut PipelineConfig, args: &TrainArgs) {
    if let Some(d) = args.dataset {
        cfg.dataset = d;
    }
    if let Some(s) = args.scheme {
        cfg.scheme = s;
    }
    if let Some(m) = args.model {
        cfg.model = m;
    }
    if args.no_copy {
        cfg.copy = false;
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(p) = &args.train {
        cfg.data.train = Some(p.clone());
    }
    if let Some(p) = &args.validation {
        cfg.data.validation = Some(p.clone());
    }
    if let Some(p) = &args.vocab {
        cfg.data.vocab = Some(p.clone());
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    let t = &mut cfg.training;
    t.epochs = args.epochs.or(t.epochs);
    t.batch_size = args.batch_size.or(t.batch_size);
    t.grad_accum = args.grad_accum.or(t.grad_accum);
    t.hidden = args.hidden.or(t.hidden);
    t.lr = args.lr.or(t.lr);
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    apply_overrides(&mut cfg, &args);
    cfg.validate()?;
    if cfg.model != ModelKind::Toy {
        return Err(Error::UnsupportedBackend(cfg.model.to_string()).into());
    }
    let train_path = cfg.data.train.clone().ok_or_else(|| anyhow!("no training file given"))?;
    let val_path = cfg.data.validation.clone().ok_or_else(|| anyhow!("no validation file given"))?;
    let train_bytes = fs::read(&train_path)?;
    let val_bytes = fs::read(&val_path)?;
    let train_ex: Vec<Example> = read_lines(&train_path)?;
    let val_ex: Vec<Example> = read_lines(&val_path)?;
    if let Some(ex) = train_ex.iter().chain(&val_ex).find(|e| e.question.scheme != cfg.scheme) {
        bail!(
            "example `{}` is annotated with {}, expected {}",
            ex.id,
            ex.question.scheme,
            cfg.scheme
        );
    }
    let vocab = match &cfg.data.vocab {
        Some(p) => TriVocabulary::load(p)?,
        None => build_vocabularies(&train_ex, cfg.scheme)?,
    };
    fs::create_dir_all(&cfg.out)?;
    let vocab_path = cfg.out.join("vocab.json");
    vocab.save(&vocab_path)?;
    let vocab_bytes = fs::read(&vocab_path)?;
    write_json(&cfg.out.join("config.json"), &cfg)?;

    let mut failed = Vec::new();
    for &seed in &cfg.seeds {
        let tc = cfg.train_config(seed);
        let hash = sha256_hex(&serde_json::to_vec(&HashInput {
            model: cfg.model,
            copy: cfg.copy,
            hidden: cfg.hidden(),
            scheme: cfg.scheme,
            train_config: &tc,
            train: sha256_hex(&train_bytes),
            validation: sha256_hex(&val_bytes),
            vocab: sha256_hex(&vocab_bytes),
        })?);
        let dir = seed_dir(&cfg.out, seed);
        match train_seed(&cfg, &tc, &hash, &dir, &vocab, &train_ex, &val_ex, args.stop_after) {
            Ok(SeedOutcome::Done) => {}
            Ok(SeedOutcome::Stopped) => return Ok(()),
            Err(e) => {
                log::error!("seed {seed} failed: {e:#}");
                write_json(&dir.join("failure.json"), &serde_json::json!({ "seed": seed, "error": format!("{e:#}") }))?;
                failed.push(seed);
            }
        }
    }
    if !failed.is_empty() {
        bail!("training failed for seed(s) {failed:?}");
    }
    Ok(())
}

enum SeedOutcome {
    Done,
    Stopped,
}

#[allow(clippy::too_many_arguments)]
fn train_seed(
    cfg: &PipelineConfig,
    tc: &TrainConfig,
    hash: &str,
    dir: &Path,
    vocab: &TriVocabulary,
    train_ex: &[Example],
    val_ex: &[Example],
    stop_after: Option<usize>,
) -> Result<SeedOutcome> {
    let manifest_path = dir.join("manifest.json");
    let model_path = dir.join("model.json");
    let ck_path = dir.join("checkpoint.json");
    if manifest_path.exists() && model_path.exists() {
        let m: CheckpointManifest = read_json(&manifest_path)?;
        if m.config_hash == hash {
            log::info!("seed {}: up to date ({})", tc.seed, dir.display());
            return Ok(SeedOutcome::Done);
        }
    }
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join("failure.json"));
    let resume = if ck_path.exists() {
        let stored: StoredCheckpoint = read_json(&ck_path)?;
        if stored.config_hash == hash {
            log::info!("seed {}: resuming after epoch {}", tc.seed, stored.checkpoint.epoch);
            Some(stored.checkpoint)
        } else {
            log::info!("seed {}: configuration changed, starting over", tc.seed);
            None
        }
    } else {
        None
    };
    let mut model = ModelF64::toy(vocab.clone(), train_ex, cfg.hidden(), cfg.copy, tc.seed);
    let tr = model.encode_all(train_ex)?;
    let va = model.encode_all(val_ex)?;
    let mut this_run = 0usize;
    let outcome = train_model(&mut model, &tr, &va, tc, resume, |ck| {
        let stored = StoredCheckpoint {
            config_hash: hash.to_string(),
            checkpoint: ck.clone(),
        };
        write_json(&ck_path, &stored).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        this_run += 1;
        match stop_after {
            Some(n) if this_run >= n && ck.epoch < tc.epochs => Err(Error::Interrupted(ck.epoch)),
            _ => Ok(()),
        }
    });
    let report: TrainReport = match outcome {
        Ok(r) => r,
        Err(Error::Interrupted(epoch)) => {
            log::info!("seed {}: stopped after epoch {epoch}", tc.seed);
            return Ok(SeedOutcome::Stopped);
        }
        Err(e) => return Err(e.into()),
    };
    write_json(&model_path, &model.to_file())?;
    vocab.save(&dir.join("vocab.json"))?;
    write_json(&dir.join("train_log.json"), &report)?;
    write_json(
        &manifest_path,
        &CheckpointManifest {
            seed: tc.seed,
            epoch: report.best_epoch,
            validation_loss: report.best_validation_loss,
            config_hash: hash.to_string(),
        },
    )?;
    log::info!(
        "seed {}: best epoch {} (validation loss {:.4})",
        tc.seed,
        report.best_epoch,
        report.best_validation_loss
    );
    Ok(SeedOutcome::Done)
}

pub fn load_model(dir: &Path) -> Result<ModelF64> {
    let file: ModelFile = read_json(&dir.join("model.json"))?;
    let vocab = TriVocabulary::load(&dir.join("vocab.json"))?;
    Ok(ModelF64::from_file(file, vocab)?)
}

pub fn generate(model_dir: &Path, input: &Path, out: &Path, max_len: usize) -> Result<()> {
    let model = load_model(model_dir)?;
    let examples: Vec<Example> = read_lines(input)?;
    let predictions = examples
        .iter()
        .map(|ex| greedy_decode(&model, &ex.id, &ex.question, max_len))
        .collect::<sparqlcopy::Result<Vec<Prediction>>>()?;
    let truncated = predictions.iter().filter(|p| p.truncated).count();
    if truncated > 0 {
        log::warn!("{truncated} predictions hit the length limit");
    }
    write_lines(out, &predictions)
}

pub fn evaluate(
    predictions: &Path,
    entries: &Path,
    out: &Path,
    scores: Option<&Path>,
    seed: Option<u64>,
    endpoint: &EndpointArgs,
) -> Result<()> {
    let preds: Vec<Prediction> = read_lines(predictions)?;
    if preds.is_empty() {
        return Err(Error::NoPredictions.into());
    }
    let entries = load_dataset(entries)?;
    let (subset, retention) = filter_nonempty(&entries)?;
    let (mut report, per_entry) = evaluate_run(&preds, &subset, &client(endpoint)?, retention)?;
    if let Some(s) = seed {
        report = report.with_seed(s);
    }
    write_json(out, &report)?;
    if let Some(p) = scores {
        write_lines(p, &per_entry)?;
    }
    if !report.complete {
        log::warn!("report is incomplete");
    }
    print!("{}", results_markdown(&[(seed.map_or("run".into(), |s| format!("seed {s}")), &report)]));
    Ok(())
}

pub fn analyze(predictions: &Path, entries: &Path, kb_from: &[PathBuf], out: &Path) -> Result<()> {
    let preds: Vec<Prediction> = read_lines(predictions)?;
    if preds.is_empty() {
        return Err(Error::NoPredictions.into());
    }
    let entries = load_dataset(entries)?;
    let mut kb_queries: Vec<String> = entries.iter().map(|e| e.query.clone()).collect();
    for p in kb_from {
        kb_queries.extend(load_dataset(p)?.into_iter().map(|e| e.query));
    }
    let kb = KbMembership::from_queries(kb_queries.iter().map(String::as_str));
    let by_id: HashMap<&str, &Entry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let mut triples = Vec::with_capacity(preds.len());
    for p in &preds {
        let e = by_id
            .get(p.id.as_str())
            .ok_or_else(|| anyhow!("prediction `{}` has no matching entry", p.id))?;
        triples.push((p.id.as_str(), tokenize_query(&e.query)?, p.tokens.as_slice()));
    }
    let (matrix, records) = error_matrix(
        triples.iter().map(|(id, r, p)| (*id, r.as_slice(), *p)),
        &kb,
    );
    fs::create_dir_all(out)?;
    write_json(&out.join("matrix.json"), &matrix)?;
    write_lines(&out.join("alignments.jsonl"), &records)?;
    log::info!(
        "{} pairs: {} substitutions, {} insertions, {} deletions",
        matrix.pairs,
        matrix.substitutions(),
        matrix.insertions.iter().sum::<usize>(),
        matrix.deletions.iter().sum::<usize>()
    );
    Ok(())
}

pub fn report(reports: &[PathBuf], matrix: Option<&Path>, label: &str, out: &Path) -> Result<()> {
    let runs = reports.iter().map(|p| read_json::<RunReport>(p)).collect::<Result<Vec<_>>>()?;
    let agg = aggregate_runs(&runs)?;
    let matrix: ErrorMatrix = match matrix {
        Some(p) => read_json(p)?,
        None => ErrorMatrix::default(),
    };
    fs::create_dir_all(out)?;
    write_json(&out.join("aggregate.json"), &agg)?;
    let mut rows: Vec<(String, &RunReport)> = Vec::new();
    let per_seed: Vec<(String, RunReport)> = agg
        .seeds
        .iter()
        .map(|s| {
            let name = s.seed.map_or_else(|| label.to_string(), |seed| format!("{label} (seed {seed})"));
            (
                name,
                RunReport {
                    bleu: s.bleu,
                    accuracy: s.accuracy,
                    f1: s.f1,
                    seeds: Vec::new(),
                    ..agg.clone()
                },
            )
        })
        .collect();
    if per_seed.len() > 1 {
        rows.extend(per_seed.iter().map(|(n, r)| (n.clone(), r)));
    }
    let mean_label = if per_seed.len() > 1 { format!("{label} (mean)") } else { label.to_string() };
    rows.push((mean_label, &agg));
    fs::write(out.join("results.md"), results_markdown(&rows))?;
    fs::write(out.join("results.csv"), results_csv(&rows))?;
    let rendered = render_report(&matrix, &agg);
    fs::write(out.join("errors.md"), &rendered.markdown)?;
    fs::write(out.join("errors.csv"), &rendered.csv)?;
    print!("{}", results_markdown(&rows));
    Ok(())
}

pub fn prompt(entries: &Path, annotated: &Path, mode: PromptMode, out: &Path) -> Result<()> {
    let entries = load_dataset(entries)?;
    let by_id: HashMap<&str, &Entry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let examples: Vec<Example> = read_lines(annotated)?;
    let prompts = examples
        .iter()
        .map(|ex| {
            let e = by_id
                .get(ex.id.as_str())
                .ok_or_else(|| anyhow!("annotated example `{}` has no entry", ex.id))?;
            Ok(build_instruction_prompt(e, &ex.question, mode)?)
        })
        .collect::<Result<Vec<_>>>()?;
    write_lines(out, &prompts)
}
