//! Line-delimited corpus files.
//!
//! One JSON object per line:
//!
//! ```text
//! {"seq_id":"seq0","seq_type":"AID","items":[
//!   {"obs":"seq0/o0","symbol":0},
//!   {"act":"Approach"},
//!   {"obs":"seq0/o1","raw":[0.12,-1.5, ...]},
//!   {"act":"Insert"},
//!   {"obs":"seq0/o2","symbol":1},
//!   {"act":"Disassemble"},
//!   {"obs":"seq0/o3","symbol":2}]}
//! ```
//!
//! (shown wrapped; each record is a single line). Observation items carry
//! exactly one of `raw` (decimal array) or `symbol` (0, 1, 2 for s0, s1, s2).
//! Blank lines are ignored.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ActionSequence, CorpusError, DemoCorpus, ObsKind, Observation, Symbol};
use crate::action::ActionPrimitive;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    seq_id: String,
    seq_type: String,
    items: Vec<Item>,
}

#[derive(Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct Item {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    obs: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    raw: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    symbol: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    act: Option<ActionPrimitive>,
}

fn to_record(seq: &ActionSequence) -> Record {
    let mut items = Vec::with_capacity(seq.observations().len() * 2);
    for (i, obs) in seq.observations().iter().enumerate() {
        let mut item = Item { obs: Some(obs.id.clone()), ..Item::default() };
        match &obs.kind {
            ObsKind::Raw(v) => item.raw = Some(v.clone()),
            ObsKind::Symbolic(s) => item.symbol = Some(s.id()),
        }
        items.push(item);
        if let Some(a) = seq.actions().get(i) {
            items.push(Item { act: Some(*a), ..Item::default() });
        }
    }
    Record { seq_id: seq.seq_id().to_string(), seq_type: seq.seq_type().to_string(), items }
}

fn from_record(rec: Record) -> Result<ActionSequence, CorpusError> {
    let malformed = |reason: String| CorpusError::Malformed { seq_id: rec.seq_id.clone(), reason };
    let mut observations = Vec::new();
    let mut actions = Vec::new();
    for (i, item) in rec.items.iter().enumerate() {
        let want_obs = i % 2 == 0;
        match (want_obs, &item.obs, item.act) {
            (true, Some(id), None) => {
                let kind = match (&item.raw, item.symbol) {
                    (Some(v), None) => ObsKind::Raw(v.clone()),
                    (None, Some(s)) => ObsKind::Symbolic(
                        Symbol::from_id(s).ok_or_else(|| malformed(format!("item {i}: unknown symbol id {s}")))?,
                    ),
                    _ => return Err(malformed(format!("item {i}: observation needs exactly one of raw/symbol"))),
                };
                observations.push(Observation { id: id.clone(), kind });
            }
            (false, None, Some(a)) => actions.push(a),
            _ => {
                let expected = if want_obs { "an observation" } else { "an action" };
                return Err(malformed(format!("item {i}: expected {expected}")));
            }
        }
    }
    let seq = ActionSequence::new(rec.seq_id.clone(), observations, actions)?;
    if seq.seq_type() != rec.seq_type {
        return Err(malformed(format!("seq_type `{}` does not match actions `{}`", rec.seq_type, seq.seq_type())));
    }
    Ok(seq)
}

pub fn write_corpus<W: Write>(corpus: &DemoCorpus, mut out: W) -> Result<(), CorpusError> {
    for seq in corpus.sequences() {
        let line = serde_json::to_string(&to_record(seq)).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_corpus<R: BufRead>(input: R) -> Result<DemoCorpus, CorpusError> {
    let mut sequences = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| CorpusError::Parse { line: n + 1, message: e.to_string() })?;
        sequences.push(from_record(rec)?);
    }
    DemoCorpus::new(sequences)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{table1_corpus, Prototypes};

    #[test]
    fn round_trip_table1() {
        let corpus = table1_corpus(&Prototypes::default_for_dim(4));
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 6);
        let back = read_corpus(buf.as_slice()).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn rejects_type_mismatch_and_bad_alternation() {
        let line = r#"{"seq_id":"x","seq_type":"AD","items":[{"obs":"a","symbol":0},{"act":"Approach"},{"obs":"b","raw":[1.0]},{"act":"Insert"},{"obs":"c","symbol":1},{"act":"Disassemble"},{"obs":"d","symbol":2}]}"#;
        let err = read_corpus(line.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("does not match"), "{err}");

        let line = r#"{"seq_id":"y","seq_type":"A","items":[{"obs":"a","symbol":0},{"obs":"b","symbol":2}]}"#;
        let err = read_corpus(line.as_bytes()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { ref seq_id, .. } if seq_id == "y"));
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "\n{\"seq_id\":";
        match read_corpus(text.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
