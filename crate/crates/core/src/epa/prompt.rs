use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Delimiter wrapping each description inside the prompt.
pub const FIELD_DELIMITER: &str = "\"\"\"";

pub const STEP1_MARKER: &str = "Step 1: Deconstruct Inputs";
pub const STEP2_MARKER: &str = "Step 2: Compare & Reason";
pub const STEP3_MARKER: &str = "Step 3: Judge & Conclude";

/// Textual stand-ins for the reference image, modification text and target
/// image of one triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletDescription {
    pub reference: String,
    pub modification: String,
    pub target: String,
}

/// Which reasoning steps the prompt asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Full,
    NoDeconstruct,
    NoReason,
    EndToEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub response_schema: String,
}

const SYSTEM: &str = "You are an expert annotator for composed image retrieval data. \
Each sample pairs a reference image and a modification text with a target image. \
Decide whether the three components jointly correspond.";

const DECONSTRUCT: &str = "Describe each component on its own before comparing anything. \
State the main objects and attributes of the reference image, the change the \
modification text asks for, and the main objects and attributes of the target image.";

const REASON: &str = "Infer the change that actually separates the reference image from \
the target image. Cross-check that change against the modification text. A partial \
match is acceptable when the primary intent of the text is carried out, even if minor \
details differ. Note any premise conflict between the text and the reference image.";

const JUDGE: &str = "Give a binary verdict. Answer Clean when the components correspond. \
Answer Noisy otherwise and name the cause: Mismatched Reference Image, Mismatched \
Modification Text, or Mismatched Target Image.";

pub const RESPONSE_SCHEMA: &str = r#"{"analysis": {"step1": string, "step2": string}, "final_judgement": {"label": "Clean" | "Noisy", "type": "None" | "Mismatched Reference Image" | "Mismatched Modification Text" | "Mismatched Target Image", "summary": string}}"#;

/// Escapes backslashes and the field delimiter so a description cannot close
/// its own field.
pub fn escape_field(text: &str) -> String {
    text.replace('\\', "\\\\")
        .replace(FIELD_DELIMITER, "\\\"\\\"\\\"")
}

pub fn unescape_field(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            if let Some(next) = chars.next() {
                out.push(next);
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn build_prompt(meta: &TripletDescription) -> Result<PromptBundle> {
    build_prompt_variant(meta, PromptVariant::Full)
}

pub fn build_prompt_variant(
    meta: &TripletDescription,
    variant: PromptVariant,
) -> Result<PromptBundle> {
    for (name, v) in [
        ("reference", &meta.reference),
        ("modification", &meta.modification),
        ("target", &meta.target),
    ] {
        if v.trim().is_empty() {
            return Err(Error::input(format!("{name} description is empty")));
        }
    }
    let d = FIELD_DELIMITER;
    let mut user = format!(
        "Reference image: {d}{}{d}\nModification text: {d}{}{d}\nTarget image: {d}{}{d}\n\n",
        escape_field(&meta.reference),
        escape_field(&meta.modification),
        escape_field(&meta.target),
    );
    let steps: &[(&str, &str)] = match variant {
        PromptVariant::Full => &[
            (STEP1_MARKER, DECONSTRUCT),
            (STEP2_MARKER, REASON),
            (STEP3_MARKER, JUDGE),
        ],
        PromptVariant::NoDeconstruct => &[(STEP2_MARKER, REASON), (STEP3_MARKER, JUDGE)],
        PromptVariant::NoReason => &[(STEP1_MARKER, DECONSTRUCT), (STEP3_MARKER, JUDGE)],
        PromptVariant::EndToEnd => &[(STEP3_MARKER, JUDGE)],
    };
    for (marker, body) in steps {
        user.push_str(&format!("{marker}\n{body}\n\n"));
    }
    user.push_str(
        "Reply with one JSON object. Put your reasoning under \"analysis\" and \
your conclusion under \"final_judgement\".\n",
    );
    Ok(PromptBundle {
        system: SYSTEM.to_string(),
        user,
        response_schema: RESPONSE_SCHEMA.to_string(),
    })
}
