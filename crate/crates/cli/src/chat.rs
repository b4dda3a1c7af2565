//! Line-oriented chat: each user line is answered with a grounded list.

use std::io::{self, BufRead, Write};

use anyhow::Context;
use care::corpus::{Speaker, Utterance};
use care::linker::{extract_sequence, LinkIndex};

use crate::commands::{build_client, configure, load_catalog, load_model};
use crate::config::RunConfig;
use crate::CmdResult;

const HELP: &str = "commands: /seq shows linked entities, /reset starts over, /quit exits";

pub fn run(cfg: &RunConfig) -> CmdResult {
    cfg.strategy.validate().map_err(anyhow::Error::from)?;
    let catalog = load_catalog(cfg)?;
    let (model, ckpt) = load_model(cfg, &catalog)?;
    let index = LinkIndex::build(&catalog);
    let (client, llm_model) = build_client(cfg)?;
    let pipeline = configure(cfg, &model, &catalog, &index, &client, llm_model, &ckpt)?;

    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut context: Vec<Utterance> = Vec::new();
    writeln!(out, "{HELP}").context("stdout")?;
    loop {
        write!(out, "you> ").context("stdout")?;
        out.flush().context("stdout")?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).context("stdin")? == 0 {
            writeln!(out).context("stdout")?;
            return Ok(());
        }
        let line = line.trim();
        match line {
            "" => continue,
            "/quit" => return Ok(()),
            "/help" => writeln!(out, "{HELP}").context("stdout")?,
            "/reset" => context.clear(),
            "/seq" => {
                let seq = extract_sequence(&context, &index, model.config.max_sequence_length);
                if seq.is_empty() {
                    writeln!(out, "(no entities yet)").context("stdout")?;
                }
                for id in seq.as_slice() {
                    writeln!(out, "{id}\t{}", catalog.name(*id)).context("stdout")?;
                }
            }
            text => {
                context.push(Utterance { speaker: Speaker::User, text: text.to_string(), turn_index: context.len() });
                match pipeline.respond(&context, &cfg.strategy) {
                    Ok(turn) => {
                        for (i, e) in turn.ranked.entries.iter().enumerate() {
                            match e.matched_item {
                                Some(id) => writeln!(out, "{:>3}. {} [{id}]", i + 1, catalog.name(id)),
                                None => writeln!(out, "{:>3}. {} (out of domain)", i + 1, e.raw_title),
                            }
                            .context("stdout")?;
                        }
                        let top: Vec<&str> = turn.ranked.matched_ids().iter().take(3).map(|&id| catalog.name(id)).collect();
                        let reply = if top.is_empty() { "I have no suggestion yet.".to_string() } else { format!("How about {}?", top.join(", ")) };
                        context.push(Utterance { speaker: Speaker::System, text: reply, turn_index: context.len() });
                    }
                    Err(e) => writeln!(out, "error: {e}").context("stdout")?,
                }
            }
        }
    }
}
