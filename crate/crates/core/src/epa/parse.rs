use std::path::PathBuf;

use serde_json::Value;

use super::verdict::{Diagnosis, Label, Verdict};
use crate::error::{Error, Result};

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: PathBuf::from("<arbiter response>"),
        line,
        message: message.into(),
    }
}

fn parse_label(token: &str) -> Result<Label> {
    let t: String = token
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase();
    match t.as_str() {
        "clean" => Ok(Label::Clean),
        "noisy" => Ok(Label::Noisy),
        _ => Err(parse_error(0, format!("unknown label {token:?}"))),
    }
}

/// Maps a free-form cause name onto the taxonomy. Tolerates the usual
/// spelling drift ("Mismatch Reference Imgae").
fn parse_cause(token: &str) -> Option<Diagnosis> {
    let t = token.to_ascii_lowercase();
    if t.contains("reference") || t.contains("ref") {
        Some(Diagnosis::MismatchedReferenceImage)
    } else if t.contains("modification") || t.contains("text") || t.contains("mod") {
        Some(Diagnosis::MismatchedModificationText)
    } else if t.contains("target") || t.contains("tar") {
        Some(Diagnosis::MismatchedTargetImage)
    } else {
        None
    }
}

fn assemble(label: Label, cause: Option<&str>, summary: &str) -> Result<Verdict> {
    match label {
        Label::Clean => Ok(Verdict::clean(summary)),
        Label::Noisy => {
            let token = cause.unwrap_or("");
            let diagnosis = parse_cause(token).ok_or_else(|| {
                parse_error(0, format!("noisy verdict with unknown cause {token:?}"))
            })?;
            Verdict::new(Label::Noisy, diagnosis, summary)
        }
    }
}

fn lookup<'a>(obj: &'a serde_json::Map<String, Value>, names: &[&str]) -> Option<&'a Value> {
    obj.iter().find_map(|(k, v)| {
        let key: String = k
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        names.contains(&key.as_str()).then_some(v)
    })
}

fn from_json(text: &str) -> Option<Result<Verdict>> {
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end < start {
        return None;
    }
    let value: Value = serde_json::from_str(&text[start..=end]).ok()?;
    let obj = value.as_object()?;
    let Some(fj) = lookup(obj, &["finaljudgement", "finaljudgment"]) else {
        return Some(Err(parse_error(
            1,
            "response has no final judgement section",
        )));
    };
    let Some(fj) = fj.as_object() else {
        return Some(Err(parse_error(1, "final judgement is not an object")));
    };
    let text_of = |names: &[&str]| lookup(fj, names).and_then(Value::as_str);
    let Some(label) = text_of(&["label", "judgement", "verdict"]) else {
        return Some(Err(parse_error(1, "final judgement has no label")));
    };
    Some(parse_label(label).and_then(|l| {
        assemble(
            l,
            text_of(&["type", "ntctype", "cause"]),
            text_of(&["summary", "rationale"]).unwrap_or(""),
        )
    }))
}

/// Line-oriented fallback: a "Final Judgement" heading followed by
/// `Label:`, `Type:` and `Summary:` lines. The label may also sit on the
/// heading line itself.
fn from_lines(text: &str) -> Result<Verdict> {
    let lines: Vec<&str> = text.lines().collect();
    let head = lines
        .iter()
        .position(|l| {
            let l = l.to_ascii_lowercase();
            l.contains("final judgement") || l.contains("final judgment")
        })
        .ok_or_else(|| parse_error(0, "response has no final judgement section"))?;
    let mut label = None;
    let mut cause = None;
    let mut summary = String::new();
    let value_after = |line: &str| line.split_once(':').map(|(_, v)| v.trim().to_string());
    if let Some(v) = value_after(lines[head]) {
        if !v.is_empty() {
            label = Some((head + 1, v));
        }
    }
    for (k, line) in lines.iter().enumerate().skip(head + 1) {
        let key = line
            .trim_start_matches(|c: char| !c.is_alphanumeric())
            .to_ascii_lowercase();
        if key.starts_with("label") || key.starts_with("judgement") || key.starts_with("verdict") {
            label = value_after(line).map(|v| (k + 1, v));
        } else if key.starts_with("type") || key.starts_with("ntc type") || key.starts_with("cause")
        {
            cause = value_after(line);
        } else if key.starts_with("summary") || key.starts_with("rationale") {
            summary = value_after(line).unwrap_or_default();
        }
    }
    let (lineno, token) =
        label.ok_or_else(|| parse_error(head + 1, "final judgement has no label"))?;
    let l =
        parse_label(&token).map_err(|_| parse_error(lineno, format!("unknown label {token:?}")))?;
    assemble(l, cause.as_deref(), &summary)
}

/// Extracts the verdict from an arbiter response. JSON responses (optionally
/// wrapped in prose or a code fence) are preferred; otherwise a plain-text
/// final judgement section is accepted.
pub fn parse_verdict(response_text: &str) -> Result<Verdict> {
    if response_text.trim().is_empty() {
        return Err(parse_error(0, "empty response"));
    }
    match from_json(response_text) {
        Some(r) => r,
        None => from_lines(response_text),
    }
}
