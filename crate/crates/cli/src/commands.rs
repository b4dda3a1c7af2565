use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use care::corpus::{self, DatasetSplit, EntityCatalog, KgTriple, Speaker, Split, Utterance};
use care::eval::{save_report, summary_table, SweepGrid};
use care::grounding::{ground_list, parse_ranked_list, ItemMatcher};
use care::linker::{extract_sequence, link_utterance, LinkIndex};
use care::llm_client::{HttpProvider, LlmClient, MockProvider, MockScript, SystemClock};
use care::pipeline::{training_sequences, Pipeline};
use care::prompting::PromptTemplates;
use care::seqrec::{self, load_checkpoint, recommend as top_k, save_checkpoint, CandidateSet, RecModel};

use crate::config::RunConfig;
use crate::{CmdResult, Failure};

fn check(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Check(e.into())
}

pub fn load_catalog(cfg: &RunConfig) -> Result<EntityCatalog> {
    let path = cfg.require(&cfg.paths.catalog, "catalog", "--catalog")?;
    Ok(corpus::load_catalog(&path)?)
}

pub struct Data {
    pub catalog: EntityCatalog,
    pub triples: Vec<KgTriple>,
    pub split: DatasetSplit,
}

pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let catalog = load_catalog(cfg)?;
    let dialogues_path = cfg.require(&cfg.paths.dialogues, "dialogues file", "--dialogues")?;
    let triples = match &cfg.paths.kg {
        Some(_) => corpus::load_kg(&cfg.require(&cfg.paths.kg, "knowledge graph", "--kg")?, &catalog)?.triples,
        None => Vec::new(),
    };
    let dialogues = corpus::load_dialogues(&dialogues_path, &catalog)?;
    let [a, b, c] = cfg.split;
    let split = corpus::split_dataset(&dialogues, (a, b, c), cfg.seed)?;
    Ok(Data { catalog, triples, split })
}

pub fn load_model(cfg: &RunConfig, catalog: &EntityCatalog) -> Result<(RecModel<f32>, PathBuf)> {
    let path = cfg.require(&cfg.paths.checkpoint, "checkpoint", "--checkpoint")?;
    let model = load_checkpoint(&path).with_context(|| format!("cannot load checkpoint {}", path.display()))?;
    if model.vocab_size() != catalog.len() || model.item_count() != catalog.item_count() {
        bail!(
            "checkpoint expects {} entities ({} items) but the catalog has {} ({})",
            model.vocab_size(),
            model.item_count(),
            catalog.len(),
            catalog.item_count()
        );
    }
    Ok((model, path))
}

/// Returns the client and the model name placed in requests.
pub fn build_client(cfg: &RunConfig) -> Result<(LlmClient, String)> {
    let (mut client, model_name) = match cfg.mock {
        Some(mode) => {
            let script = MockScript { mode, scripted_replies: cfg.mock_replies.clone() };
            (LlmClient::new(Arc::new(MockProvider::new(script)?)), format!("mock:{}", mode.as_str()))
        }
        None => {
            let p = &cfg.provider;
            let base = p.base_url.as_deref().ok_or_else(|| anyhow!("no LLM endpoint: set CARE_LLM_BASE_URL or pass --mock"))?;
            let model = p.model.clone().ok_or_else(|| anyhow!("no LLM model: set CARE_LLM_MODEL"))?;
            (LlmClient::new(Arc::new(HttpProvider::new(base, p.api_key.as_deref())?)), model)
        }
    };
    client = client.with_concurrency(cfg.provider.concurrency);
    if let Some(rate) = cfg.provider.rate_limit {
        client = client.with_rate_limit(rate, Arc::new(SystemClock::default()));
    }
    if let Some(dir) = &cfg.paths.cache_dir {
        client = client.with_cache(dir);
    }
    Ok((client, model_name))
}

pub fn templates(cfg: &RunConfig) -> Result<PromptTemplates> {
    match &cfg.paths.templates {
        Some(_) => Ok(PromptTemplates::load(&cfg.require(&cfg.paths.templates, "templates file", "--templates")?)?),
        None => Ok(PromptTemplates::default()),
    }
}

pub fn configure<'a>(
    cfg: &RunConfig,
    model: &'a RecModel<f32>,
    catalog: &'a EntityCatalog,
    index: &'a LinkIndex,
    client: &'a LlmClient,
    llm_model: String,
    checkpoint: &Path,
) -> Result<Pipeline<'a>> {
    let mut p = Pipeline::new(model, catalog, index, client);
    p.templates = templates(cfg)?;
    p.matcher_config = cfg.matcher;
    p.provider = cfg.provider.clone();
    p.llm_model = llm_model;
    p.method = cfg.method;
    p.ks = cfg.ks.clone();
    p.recommender_label = checkpoint.display().to_string();
    p.seed = cfg.seed;
    p.resolved_config = serde_json::to_value(cfg)?;
    Ok(p)
}

pub fn ingest(cfg: &RunConfig, out: Option<&Path>) -> CmdResult {
    let data = load_data(cfg)?;
    let c = &data.catalog;
    println!("entities   {} ({} items, {} attributes)", c.len(), c.item_count(), c.attribute_count());
    println!("kg triples {}", data.triples.len());
    for (name, split) in [("train", Split::Train), ("valid", Split::Valid), ("test", Split::Test)] {
        println!("{name:<10} {} dialogues, {} examples", data.split.part(split).len(), data.split.examples(split).len());
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        for (name, split) in [("train", Split::Train), ("valid", Split::Valid), ("test", Split::Test)] {
            let path = dir.join(format!("{name}.jsonl"));
            let file = File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
            corpus::write_dialogues(data.split.part(split), BufWriter::new(file)).map_err(check)?;
        }
        println!("wrote split files to {}", dir.display());
    }
    Ok(())
}

pub fn train(cfg: &RunConfig) -> CmdResult {
    let data = load_data(cfg)?;
    let out = cfg.paths.checkpoint.clone().ok_or_else(|| anyhow!("no checkpoint path given (use --checkpoint)"))?;
    cfg.recommender.validate().map_err(anyhow::Error::from)?;
    let index = LinkIndex::build(&data.catalog);
    let examples = data.split.examples(Split::Train);
    if examples.is_empty() {
        return Err(anyhow!("training split has no examples").into());
    }
    let sequences = training_sequences(&examples, &index, cfg.recommender.max_sequence_length);
    let mut model = RecModel::new(cfg.recommender.clone(), data.catalog.len(), data.catalog.item_count(), &data.triples)
        .map_err(anyhow::Error::from)?;
    if cfg.recommender.epochs == 0 {
        eprintln!("warning: --epochs 0 writes the initial weights unchanged");
    }
    let log = seqrec::train(&mut model, &sequences).map_err(check)?;
    println!("sequences {}", log.sequences_used);
    println!("initial loss {:.6}", log.initial_loss);
    for (i, loss) in log.epoch_losses.iter().enumerate() {
        println!("epoch {:>3} loss {:.6}", i + 1, loss);
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
    }
    save_checkpoint(&model, &out).with_context(|| format!("cannot write {}", out.display())).map_err(check)?;
    println!("checkpoint {}", out.display());
    Ok(())
}

fn user_turns(texts: &[String]) -> Vec<Utterance> {
    texts.iter().enumerate().map(|(i, t)| Utterance { speaker: Speaker::User, text: t.clone(), turn_index: i }).collect()
}

pub fn recommend(cfg: &RunConfig, texts: &[String], k: usize) -> CmdResult {
    let catalog = load_catalog(cfg)?;
    let (model, _) = load_model(cfg, &catalog)?;
    let index = LinkIndex::build(&catalog);
    let seq = extract_sequence(&user_turns(texts), &index, model.config.max_sequence_length);
    let names: Vec<&str> = seq.as_slice().iter().map(|&id| catalog.name(id)).collect();
    eprintln!("sequence [{}]", names.join(", "));
    let cands = top_k(&model, &seq, k).map_err(check)?;
    for (i, c) in cands.entries.iter().enumerate() {
        println!("{}\t{}\t{:.6}\t{}", i + 1, c.item, c.score, catalog.name(c.item));
    }
    Ok(())
}

pub fn evaluate(cfg: &RunConfig) -> CmdResult {
    cfg.strategy.validate().map_err(anyhow::Error::from)?;
    let data = load_data(cfg)?;
    let (model, ckpt) = load_model(cfg, &data.catalog)?;
    let index = LinkIndex::build(&data.catalog);
    let (client, llm_model) = build_client(cfg)?;
    let pipeline = configure(cfg, &model, &data.catalog, &index, &client, llm_model, &ckpt)?;
    let test = data.split.examples(Split::Test);
    let train = data.split.examples(Split::Train);
    if test.is_empty() {
        return Err(anyhow!("test split has no examples").into());
    }
    let report = pipeline.evaluate(&cfg.strategy, &test, &train).map_err(check)?;
    let path = cfg.paths.report.clone().unwrap_or_else(|| PathBuf::from("report.jsonl"));
    save_report(&report, &path).with_context(|| format!("cannot write {}", path.display())).map_err(check)?;
    print!("{}", summary_table(&report));
    println!("report {}", path.display());
    eprintln!("llm dispatches {}", client.dispatch_count());
    let errors = report.records.iter().filter(|r| r.error.is_some()).count();
    if errors == report.records.len() {
        return Err(check(anyhow!("every example failed; first error: {}", report.records[0].error.as_deref().unwrap_or(""))));
    }
    if errors > 0 {
        eprintln!("warning: {errors} of {} examples failed (see error fields in the report)", report.records.len());
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, grid_path: &Path, out_dir: &Path) -> CmdResult {
    let text = fs::read_to_string(grid_path).with_context(|| format!("cannot read grid file {}", grid_path.display()))?;
    let grid: SweepGrid = toml::from_str(&text).with_context(|| format!("invalid grid file {}", grid_path.display()))?;
    let data = load_data(cfg)?;
    let (model, ckpt) = load_model(cfg, &data.catalog)?;
    let index = LinkIndex::build(&data.catalog);
    let (client, llm_model) = build_client(cfg)?;
    let pipeline = configure(cfg, &model, &data.catalog, &index, &client, llm_model, &ckpt)?;
    let test = data.split.examples(Split::Test);
    let train = data.split.examples(Split::Train);
    let cells = pipeline.sweep(&grid, &test, &train).map_err(anyhow::Error::from)?;

    fs::create_dir_all(out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let mut index_lines = Vec::new();
    let mut failures = 0;
    for cell in &cells {
        let line = match &cell.outcome {
            Ok(report) => {
                let file = format!("{}.jsonl", cell.config_id);
                save_report(report, &out_dir.join(&file)).map_err(check)?;
                println!("ok     {}  HIT@{} {:.4}  ood {:.4}", cell.config_id, cfg.ks[0], report.metrics.hit[&cfg.ks[0]], report.ood_ratio);
                serde_json::json!({"config_id": cell.config_id, "status": "ok", "report": file, "metrics": report.metrics, "ood_ratio": report.ood_ratio})
            }
            Err(reason) => {
                failures += 1;
                println!("error  {}  {reason}", cell.config_id);
                serde_json::json!({"config_id": cell.config_id, "status": "error", "error": reason})
            }
        };
        index_lines.push(line.to_string());
    }
    let index_path = out_dir.join("index.jsonl");
    fs::write(&index_path, index_lines.join("\n") + "\n").with_context(|| format!("cannot write {}", index_path.display())).map_err(check)?;
    println!("index {}", index_path.display());
    eprintln!("llm dispatches {}", client.dispatch_count());
    if failures == cells.len() {
        return Err(check(anyhow!("every sweep cell failed")));
    }
    Ok(())
}

fn read_stdin() -> Result<String> {
    let mut text = String::new();
    io::stdin().read_to_string(&mut text).context("cannot read standard input")?;
    Ok(text)
}

pub fn link(cfg: &RunConfig, text: Option<String>) -> CmdResult {
    let catalog = load_catalog(cfg)?;
    let index = LinkIndex::build(&catalog);
    let text = match text {
        Some(t) => t,
        None => read_stdin()?,
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for m in link_utterance(&text, &index) {
        writeln!(out, "{}\t{}\t{}\t{}", m.start, m.end, m.entity_id, &text[m.start..m.end]).map_err(check)?;
    }
    Ok(())
}

pub fn ground(cfg: &RunConfig, candidates: Option<Vec<usize>>) -> CmdResult {
    let catalog = load_catalog(cfg)?;
    let cands = match candidates {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|&&id| !catalog.is_item(id)) {
                return Err(anyhow!("candidate {bad} is not an item id").into());
            }
            Some(CandidateSet::from_ids(&ids))
        }
        None => None,
    };
    let reply = read_stdin()?;
    let titles = parse_ranked_list(&reply, usize::MAX);
    let matcher = ItemMatcher::new(&catalog);
    let list = ground_list(&titles, &matcher, cands.as_ref(), cfg.strategy.engagement, &cfg.matcher, cfg.strategy.n)
        .map_err(anyhow::Error::from)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for (i, e) in list.entries.iter().enumerate() {
        let id = e.matched_item.map_or_else(|| "OOD".to_string(), |id| id.to_string());
        writeln!(out, "{}\t{}\t{}", i + 1, e.raw_title, id).map_err(check)?;
    }
    Ok(())
}
