//! BioCreative V CDR (PubTator format) to DocRED-schema conversion.
//!
//! Mapping used here:
//! - text is `title + " " + abstract`, matching PubTator character offsets;
//! - tokens are maximal alphanumeric runs, every other non-space character is
//!   a token of its own;
//! - a sentence ends after a `.`, `?` or `!` token, and after the title;
//! - a mention covers every token overlapping its character range;
//! - mentions are clustered by concept identifier (first id of composite
//!   `a|b` ids); mentions with id `-1` form singleton clusters;
//! - `CID` lines become `CID` relations from chemical to disease cluster.
//!
//! Mentions that would cross a sentence boundary under this tokenization are
//! dropped and counted in [`CdrConversion::dropped_mentions`].

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct CdrConversion {
    /// DocRED-schema documents, ready for [`super::parse_docred`].
    pub documents: Vec<Value>,
    pub dropped_mentions: usize,
    pub dropped_relations: usize,
}

#[derive(Default)]
struct Abstract {
    pmid: String,
    title: String,
    body: String,
    mentions: Vec<(usize, usize, String, String)>,
    relations: Vec<(String, String)>,
}

pub fn convert_pubtator(text: &str) -> Result<CdrConversion> {
    let mut out = CdrConversion::default();
    for block in text.split("\n\n").map(str::trim).filter(|b| !b.is_empty()) {
        let doc = parse_block(block)?;
        convert_one(doc, &mut out);
    }
    Ok(out)
}

fn parse_block(block: &str) -> Result<Abstract> {
    let mut doc = Abstract::default();
    for line in block.lines() {
        if let Some((pmid, rest)) = line.split_once("|t|") {
            doc.pmid = pmid.to_string();
            doc.title = rest.to_string();
        } else if let Some((_, rest)) = line.split_once("|a|") {
            doc.body = rest.to_string();
        } else {
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = || Error::validation(&doc.pmid, format!("unrecognized PubTator line `{line}`"));
            match fields.as_slice() {
                [_, "CID", chem, disease, ..] => doc.relations.push((chem.to_string(), disease.to_string())),
                [_, start, end, _text, kind, id, ..] => {
                    let start = start.parse().map_err(|_| bad())?;
                    let end = end.parse().map_err(|_| bad())?;
                    let id = id.split('|').next().unwrap_or(id).to_string();
                    doc.mentions.push((start, end, kind.to_string(), id));
                }
                _ => return Err(bad()),
            }
        }
    }
    if doc.pmid.is_empty() {
        return Err(Error::validation("<unknown>", "PubTator block without a title line"));
    }
    Ok(doc)
}

/// Tokens with character offsets, plus sentence boundaries (token indices).
fn tokenize(text: &str, title_len: usize) -> (Vec<(usize, usize, String)>, Vec<usize>) {
    let mut tokens = Vec::new();
    let mut current: Option<usize> = None;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, ch)) in chars.iter().enumerate() {
        let end_of = |j: usize| chars.get(j).map_or(text.len(), |&(p, _)| p);
        if ch.is_alphanumeric() {
            if current.is_none() {
                current = Some(pos);
            }
            continue;
        }
        if let Some(s) = current.take() {
            tokens.push((s, pos, text[s..pos].to_string()));
        }
        if !ch.is_whitespace() {
            tokens.push((pos, end_of(i + 1), ch.to_string()));
        }
    }
    if let Some(s) = current {
        tokens.push((s, text.len(), text[s..].to_string()));
    }

    let mut ends = Vec::new();
    for (i, (start, _, tok)) in tokens.iter().enumerate() {
        let next_after_title = tokens.get(i + 1).is_some_and(|t| t.0 >= title_len) && *start < title_len;
        if matches!(tok.as_str(), "." | "?" | "!") || next_after_title {
            ends.push(i + 1);
        }
    }
    if ends.last() != Some(&tokens.len()) {
        ends.push(tokens.len());
    }
    ends.dedup();
    (tokens, ends)
}

fn convert_one(doc: Abstract, out: &mut CdrConversion) {
    let text = format!("{} {}", doc.title, doc.body);
    let (tokens, ends) = tokenize(&text, doc.title.len());
    let mut sents: Vec<Vec<String>> = Vec::new();
    let mut starts = Vec::new();
    let mut prev = 0;
    for &e in &ends {
        starts.push(prev);
        sents.push(tokens[prev..e].iter().map(|t| t.2.clone()).collect());
        prev = e;
    }

    // concept id -> (type, mentions); BTreeMap keeps cluster order stable.
    let mut clusters: BTreeMap<String, (String, Vec<Value>)> = BTreeMap::new();
    for (k, (cs, ce, kind, id)) in doc.mentions.iter().enumerate() {
        let covered: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| t.0 < *ce && t.1 > *cs)
            .map(|(i, _)| i)
            .collect();
        let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
            out.dropped_mentions += 1;
            continue;
        };
        let sent_id = ends.iter().position(|&e| first < e).expect("token inside a sentence");
        if last >= ends[sent_id] {
            out.dropped_mentions += 1;
            continue;
        }
        let key = if id == "-1" { format!("-1#{k}") } else { id.clone() };
        let entry = clusters.entry(key).or_insert_with(|| (kind.clone(), Vec::new()));
        let base = starts[sent_id];
        let mention = json!({
            "name": text[*cs..*ce].to_string(),
            "sent_id": sent_id,
            "pos": [first - base, last + 1 - base],
            "type": kind,
        });
        if !entry.1.contains(&mention) {
            entry.1.push(mention);
        }
    }
    let ids: Vec<&String> = clusters.keys().collect();
    let mut labels = Vec::new();
    for (chem, disease) in &doc.relations {
        match (
            ids.iter().position(|k| *k == chem),
            ids.iter().position(|k| *k == disease),
        ) {
            (Some(h), Some(t)) if h != t => labels.push(json!({"h": h, "t": t, "r": "CID"})),
            _ => out.dropped_relations += 1,
        }
    }
    let vertex_set: Vec<Value> = clusters.into_values().map(|(_, m)| Value::Array(m)).collect();
    out.documents.push(json!({
        "title": doc.pmid,
        "sents": sents,
        "vertexSet": vertex_set,
        "labels": labels,
    }));
}
