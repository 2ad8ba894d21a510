use std::fs;
use std::path::Path;

use clap::ValueEnum;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use hypwalk::experiments::{RunHeader, VERSION};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Json,
    Jsonl,
}

impl Format {
    fn ext(self) -> &'static str {
        match self {
            Format::Text => "txt",
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Jsonl => "jsonl",
        }
    }
}

/// One artifact in every format it supports.
pub struct Output {
    pub name: String,
    pub header: RunHeader,
    pub text: String,
    /// Complete CSV including the header comment.
    pub csv: Option<String>,
    pub json: Value,
    /// JSON lines without the header line.
    pub jsonl: Option<String>,
}

pub fn config_hash(canonical: &str) -> String {
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

pub fn header(canonical: &str, seed: Option<u64>, windows: String) -> RunHeader {
    RunHeader { config_hash: config_hash(canonical), seed, windows, version: VERSION.to_string() }
}

fn render(o: &Output, f: Format) -> Result<String, CliError> {
    let h = &o.header;
    let hv = json!({ "config_hash": h.config_hash, "seed": h.seed, "windows": h.windows, "version": h.version });
    match f {
        Format::Text => Ok(format!("{}{}", h.lines(), o.text)),
        Format::Csv => o
            .csv
            .clone()
            .ok_or_else(|| CliError::Validation(format!("{} has no csv form; use text or json", o.name))),
        Format::Json => {
            let v = json!({ "header": hv, "result": o.json });
            Ok(serde_json::to_string_pretty(&v).expect("serialisable") + "\n")
        }
        Format::Jsonl => {
            let body = o
                .jsonl
                .clone()
                .ok_or_else(|| CliError::Validation(format!("{} has no json-lines form; use json", o.name)))?;
            Ok(format!("{}\n{body}", json!({ "header": hv })))
        }
    }
}

pub fn emit(o: &Output, f: Format, out: Option<&Path>) -> Result<(), CliError> {
    let s = render(o, f)?;
    match out {
        None => print!("{s}"),
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(format!("{}.{}", o.name, f.ext())), s)?;
        }
    }
    Ok(())
}
