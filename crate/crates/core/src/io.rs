//! Artifact formats: JSONL datasets, JSON documents, and checkpoints.
//!
//! JSONL rows:
//!
//! ```text
//! SFT          {"prompt": [..], "response": [..]}
//! preference   {"prompt": [..], "chosen": [..], "rejected": [..], "gap_sigma": 0.93}
//! generation   {"prompt_id": 0, "prompt": [..], "responses": [{"tokens": [..], "reward": 0.4}, ..]}
//! prompt       {"prompt_id": 0, "prompt": [..]}
//! ```
//!
//! Checkpoints are either JSON (`.json` extension) or a little-endian binary
//! layout:
//!
//! ```text
//! magic [8] | version u8 | vocab_size u32 | context_len u32 | n u64 | values f64 × n
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::optim::{SftDataset, SftRecord};
use crate::pdgrs::GenerationRecord;
use crate::reward::{PreferenceDataset, PreferenceTriple, RewardModelParams};
use crate::toylm::{Prompt, ToyLMParams, Vocab};
use crate::optim::Parameters;

const LM_MAGIC: &[u8; 8] = b"RSDPOTLM";
const RM_MAGIC: &[u8; 8] = b"RSDPORWM";
const CKPT_VERSION: u8 = 1;
const HEADER_LEN: usize = 8 + 1 + 4 + 4 + 8;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

/// A JSONL row that can be checked against a vocabulary. The error names the
/// offending field.
pub trait Row: Serialize + DeserializeOwned {
    fn check(&self, vocab: &Vocab) -> std::result::Result<(), (String, Error)>;
}

fn field(name: &str) -> impl Fn(Error) -> (String, Error) + '_ {
    move |e| (name.to_string(), e)
}

impl Row for SftRecord {
    fn check(&self, vocab: &Vocab) -> std::result::Result<(), (String, Error)> {
        self.prompt.validate(vocab).map_err(field("prompt"))?;
        self.response.validate(vocab).map_err(field("response"))
    }
}

impl Row for PreferenceTriple {
    fn check(&self, vocab: &Vocab) -> std::result::Result<(), (String, Error)> {
        self.prompt.validate(vocab).map_err(field("prompt"))?;
        self.chosen.validate(vocab).map_err(field("chosen"))?;
        self.rejected.validate(vocab).map_err(field("rejected"))?;
        if self.chosen == self.rejected {
            return Err(("rejected".into(), Error::input("identical to chosen")));
        }
        if let Some(g) = self.gap_sigma {
            if !(g > 0.0 && g < 1.0) {
                return Err(("gap_sigma".into(), Error::input(format!("{g} not in (0, 1)"))));
            }
        }
        Ok(())
    }
}

impl Row for GenerationRecord {
    fn check(&self, vocab: &Vocab) -> std::result::Result<(), (String, Error)> {
        self.prompt.validate(vocab).map_err(field("prompt"))?;
        if self.responses.len() < 2 {
            return Err(("responses".into(), Error::input("need at least 2 responses")));
        }
        for (j, s) in self.responses.iter().enumerate() {
            s.response
                .validate(vocab)
                .map_err(|e| (format!("responses[{j}].tokens"), e))?;
            if !s.reward.is_finite() {
                return Err((format!("responses[{j}].reward"), Error::input("not finite")));
            }
        }
        Ok(())
    }
}

/// One row of a prompt list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: usize,
    pub prompt: Prompt,
}

impl Row for PromptRecord {
    fn check(&self, vocab: &Vocab) -> std::result::Result<(), (String, Error)> {
        self.prompt.validate(vocab).map_err(|e| ("prompt".to_string(), e))
    }
}

/// Parses every non-blank line; rows are numbered from 1.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        row: 0,
        field: String::new(),
        message: format!("not UTF-8: {e}"),
    })?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(line);
        let row = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            row: i + 1,
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

/// [`read_jsonl`] followed by [`Row::check`] on each row.
pub fn read_rows<T: Row>(path: &Path, vocab: &Vocab) -> Result<Vec<T>> {
    let rows: Vec<T> = read_jsonl(path)?;
    for (i, r) in rows.iter().enumerate() {
        r.check(vocab).map_err(|(field, e)| Error::Schema {
            path: path.to_path_buf(),
            row: i + 1,
            field,
            message: e.to_string(),
        })?;
    }
    Ok(rows)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

pub fn read_sft(path: &Path, vocab: &Vocab) -> Result<SftDataset> {
    SftDataset::new(read_rows(path, vocab)?)
}

pub fn write_sft(path: &Path, data: &SftDataset) -> Result<()> {
    write_jsonl(path, data.records())
}

pub fn read_preferences(path: &Path, vocab: &Vocab) -> Result<PreferenceDataset> {
    Ok(PreferenceDataset::new(read_rows(path, vocab)?))
}

pub fn write_preferences(path: &Path, data: &PreferenceDataset) -> Result<()> {
    write_jsonl(path, data.triples())
}

pub fn read_generations(path: &Path, vocab: &Vocab) -> Result<Vec<GenerationRecord>> {
    let rows: Vec<GenerationRecord> = read_rows(path, vocab)?;
    if rows.is_empty() {
        return Err(Error::input(format!("{}: no generation rows", path.display())));
    }
    Ok(rows)
}

pub fn read_prompts(path: &Path, vocab: &Vocab) -> Result<Vec<Prompt>> {
    let rows: Vec<PromptRecord> = read_rows(path, vocab)?;
    Ok(rows.into_iter().map(|r| r.prompt).collect())
}

pub fn write_prompts(path: &Path, prompts: &[Prompt]) -> Result<()> {
    let rows: Vec<PromptRecord> = prompts
        .iter()
        .enumerate()
        .map(|(prompt_id, p)| PromptRecord {
            prompt_id,
            prompt: p.clone(),
        })
        .collect();
    write_jsonl(path, &rows)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Document {
        path: path.to_path_buf(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    write_bytes(path, &out)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}

fn encode(magic: &[u8; 8], vocab: Vocab, context_len: usize, values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * values.len());
    out.extend_from_slice(magic);
    out.push(CKPT_VERSION);
    out.extend_from_slice(&(vocab.size() as u32).to_le_bytes());
    out.extend_from_slice(&(context_len as u32).to_le_bytes());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(path: &Path, magic: &[u8; 8], bytes: &[u8]) -> Result<(Vocab, usize, Vec<f64>)> {
    let bad = |m: &str| Error::Checkpoint {
        path: path.to_path_buf(),
        message: m.to_string(),
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad("truncated header"));
    }
    if &bytes[..8] != magic {
        return Err(bad("wrong magic bytes for this model kind"));
    }
    if bytes[8] != CKPT_VERSION {
        return Err(bad(&format!("unsupported version {}", bytes[8])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (v, c) = (u32_at(9), u32_at(13));
    let n = u64::from_le_bytes(bytes[17..25].try_into().unwrap()) as usize;
    let body = &bytes[HEADER_LEN..];
    if Some(body.len()) != n.checked_mul(8) {
        return Err(bad(&format!("expected {n} values, found {} bytes", body.len())));
    }
    let values = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let vocab = Vocab::new(v).map_err(|e| bad(&e.to_string()))?;
    Ok((vocab, c, values))
}

fn ckpt_err(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Checkpoint {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn save_lm(path: &Path, m: &ToyLMParams) -> Result<()> {
    if is_json(path) {
        return write_json(path, m);
    }
    write_bytes(path, &encode(LM_MAGIC, m.vocab(), m.context_len(), m.values()))
}

pub fn load_lm(path: &Path) -> Result<ToyLMParams> {
    if is_json(path) {
        return read_json(path);
    }
    let (v, c, values) = decode(path, LM_MAGIC, &read_file(path)?)?;
    ToyLMParams::from_values(v, c, values).map_err(ckpt_err(path))
}

pub fn save_rm(path: &Path, m: &RewardModelParams) -> Result<()> {
    if is_json(path) {
        return write_json(path, m);
    }
    write_bytes(path, &encode(RM_MAGIC, m.vocab(), m.context_len(), m.values()))
}

pub fn load_rm(path: &Path) -> Result<RewardModelParams> {
    if is_json(path) {
        return read_json(path);
    }
    let (v, c, values) = decode(path, RM_MAGIC, &read_file(path)?)?;
    RewardModelParams::from_values(v, c, values).map_err(ckpt_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_file(path)?))
}

/// `dir/name`.
pub fn artifact(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
