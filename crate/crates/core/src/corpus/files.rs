//! Instance and inventory file formats.
//!
//! Instance file: a header `# T=<t> N=<n> P=<p> vocab=<fingerprint>` then one
//! record per line, `<passage ids space-separated>\t<mask_pos>\t<gold>`.
//!
//! Inventory file: a header `# T=<t> P=<p> vocab=<fingerprint>` then one
//! line per candidate, `<id>\t<surface tokens space-separated>\t<padded ids>`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CandidateInventory, ClozeInstance, CorpusError, IdiomCandidate};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceFileHeader {
    pub candidates: usize,
    pub instances: usize,
    pub pad_len: usize,
    pub vocab_fingerprint: String,
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> CorpusError {
    CorpusError::Format {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_header(path: &Path, line: &str) -> Result<HashMap<String, String>, CorpusError> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| format_err(path, 1, "missing header line"))?;
    body.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format_err(path, 1, format!("bad header field {kv:?}")))
        })
        .collect()
}

fn header_usize(path: &Path, map: &HashMap<String, String>, key: &str) -> Result<usize, CorpusError> {
    map.get(key)
        .ok_or_else(|| format_err(path, 1, format!("header lacks {key}")))?
        .parse()
        .map_err(|_| format_err(path, 1, format!("header field {key} is not a number")))
}

fn parse_ids(path: &Path, line: usize, field: &str) -> Result<Vec<TokenId>, CorpusError> {
    field
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format_err(path, line, format!("bad token id {t:?}"))))
        .collect()
}

fn join_ids(ids: &[TokenId]) -> String {
    let mut s = String::with_capacity(ids.len() * 4);
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{id}").unwrap();
    }
    s
}

pub fn write_instances(
    path: &Path,
    instances: &[ClozeInstance],
    inventory: &CandidateInventory,
    vocab_fingerprint: &str,
) -> Result<(), CorpusError> {
    let mut out = format!(
        "# T={} N={} P={} vocab={}\n",
        inventory.len(),
        instances.len(),
        inventory.pad_len(),
        vocab_fingerprint
    );
    for inst in instances {
        writeln!(
            out,
            "{}\t{}\t{}",
            join_ids(&inst.passage_ids),
            inst.mask_pos,
            inst.gold
        )
        .unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read an instance file. Every instance gets the full inventory `0..T` as
/// its candidate set and is validated.
pub fn read_instances(path: &Path) -> Result<(InstanceFileHeader, Vec<ClozeInstance>), CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = parse_header(path, lines.next().unwrap_or(""))?;
    let header = InstanceFileHeader {
        candidates: header_usize(path, &header, "T")?,
        instances: header_usize(path, &header, "N")?,
        pad_len: header_usize(path, &header, "P")?,
        vocab_fingerprint: header
            .get("vocab")
            .cloned()
            .ok_or_else(|| format_err(path, 1, "header lacks vocab"))?,
    };
    let all: Vec<usize> = (0..header.candidates).collect();
    let mut instances = Vec::with_capacity(header.instances);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [ids, mask_pos, gold] = fields.as_slice() else {
            return Err(format_err(path, lineno, "expected 3 tab-separated fields"));
        };
        let num = |s: &str| -> Result<usize, CorpusError> {
            s.trim()
                .parse()
                .map_err(|_| format_err(path, lineno, format!("bad number {s:?}")))
        };
        let inst = ClozeInstance {
            passage_ids: parse_ids(path, lineno, ids)?,
            mask_pos: num(mask_pos)?,
            gold: num(gold)?,
            candidate_ids: all.clone(),
        };
        inst.validate(header.candidates)
            .map_err(|e| format_err(path, lineno, e.to_string()))?;
        instances.push(inst);
    }
    if instances.len() != header.instances {
        return Err(format_err(
            path,
            1,
            format!("header says N={} but file has {} records", header.instances, instances.len()),
        ));
    }
    Ok((header, instances))
}

pub fn write_inventory(
    path: &Path,
    inventory: &CandidateInventory,
    vocab_fingerprint: &str,
) -> Result<(), CorpusError> {
    let mut out = format!(
        "# T={} P={} vocab={}\n",
        inventory.len(),
        inventory.pad_len(),
        vocab_fingerprint
    );
    for c in inventory.candidates() {
        writeln!(out, "{}\t{}\t{}", c.id, c.surface_string(), join_ids(&c.padded_ids)).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Returns the inventory and the vocabulary fingerprint recorded with it.
pub fn read_inventory(path: &Path) -> Result<(CandidateInventory, String), CorpusError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = parse_header(path, lines.next().unwrap_or(""))?;
    let t = header_usize(path, &header, "T")?;
    let p = header_usize(path, &header, "P")?;
    let fingerprint = header
        .get("vocab")
        .cloned()
        .ok_or_else(|| format_err(path, 1, "header lacks vocab"))?;
    let mut candidates = Vec::with_capacity(t);
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, surface, ids] = fields.as_slice() else {
            return Err(format_err(path, lineno, "expected 3 tab-separated fields"));
        };
        let id: usize = id
            .parse()
            .map_err(|_| format_err(path, lineno, "bad candidate id"))?;
        if id != candidates.len() {
            return Err(format_err(path, lineno, "candidate ids must be 0..T in order"));
        }
        let padded_ids = parse_ids(path, lineno, ids)?;
        if padded_ids.len() != p {
            return Err(format_err(path, lineno, format!("padded length {} != P={p}", padded_ids.len())));
        }
        candidates.push(IdiomCandidate {
            id,
            surface: surface.split_whitespace().map(str::to_string).collect(),
            padded_ids,
        });
    }
    if candidates.len() != t || t == 0 {
        return Err(format_err(path, 1, format!("header says T={t} but file has {} candidates", candidates.len())));
    }
    Ok((CandidateInventory::from_padded(candidates, p), fingerprint))
}
