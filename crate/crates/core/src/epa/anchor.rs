use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::oracle::Arbiter;
use super::verdict::{Diagnosis, Label, Verdict};
use crate::error::{Error, Result};
use crate::numkit::RngState;
use crate::world::Dataset;

pub const ANCHOR_SCHEMA: &str = "airknow-anchor-v1";

/// Default anchor size: 40 batches of 256.
pub const DEFAULT_ANCHOR_SIZE: usize = 40 * 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorRecord {
    pub id: String,
    pub verdict: Verdict,
}

/// Draws `m` triplets without replacement and has the arbiter judge each.
///
/// Records come back in draw order. Draw `k` is judged with `rng.derive(k)`,
/// so the result does not depend on how the work is scheduled.
pub fn build_anchor_set(
    dataset: &Dataset,
    arbiter: &dyn Arbiter,
    m: usize,
    rng: RngState,
) -> Result<Vec<AnchorRecord>> {
    let n = dataset.len();
    if m > n {
        return Err(Error::config(format!(
            "anchor size {m} exceeds dataset size {n}"
        )));
    }
    let picks = index::sample(&mut rng.derive(0).generator(), n, m);
    let judge = rng.derive(1);
    picks
        .iter()
        .enumerate()
        .map(|(k, i)| {
            let t = &dataset.triplets[i];
            Ok(AnchorRecord {
                id: t.id.clone(),
                verdict: arbiter.arbitrate(t, judge.derive(k as u64))?,
            })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
    arbiter: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Row {
    id: String,
    label: Label,
    diagnosis: Diagnosis,
    rationale: String,
}

pub fn write_anchor_set(records: &[AnchorRecord], arbiter: &str, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = |line: String| writeln!(w, "{line}").map_err(|e| Error::io(path, e));
    put(serde_json::to_string(&Header {
        schema: ANCHOR_SCHEMA.to_string(),
        arbiter: arbiter.to_string(),
    })
    .expect("header serializes"))?;
    for r in records {
        put(serde_json::to_string(&Row {
            id: r.id.clone(),
            label: r.verdict.label,
            diagnosis: r.verdict.diagnosis,
            rationale: r.verdict.rationale.clone(),
        })
        .expect("record serializes"))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an anchor file; returns the arbiter description and the records.
pub fn read_anchor_set(path: &Path) -> Result<(String, Vec<AnchorRecord>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header: Header = match lines.next() {
        Some(l) => serde_json::from_str(&l.map_err(|e| Error::io(path, e))?)
            .map_err(|e| parse_err(1, format!("bad header: {e}")))?,
        None => return Err(parse_err(1, "missing header".into())),
    };
    if header.schema != ANCHOR_SCHEMA {
        return Err(parse_err(
            1,
            format!("unexpected schema {:?}", header.schema),
        ));
    }
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| parse_err(lineno, e.to_string()))?;
        let verdict = Verdict::new(row.label, row.diagnosis, row.rationale)
            .map_err(|e| parse_err(lineno, e.to_string()))?;
        if !seen.insert(row.id.clone()) {
            return Err(parse_err(lineno, format!("duplicate id {:?}", row.id)));
        }
        records.push(AnchorRecord {
            id: row.id,
            verdict,
        });
    }
    Ok((header.arbiter, records))
}
