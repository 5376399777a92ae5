//! Expert arbitration: verdict types, the simulated oracle, the prompt chain
//! for a remote expert and its response parser, and anchor-set construction.

pub mod anchor;
pub mod describe;
pub mod oracle;
pub mod parse;
pub mod prompt;
pub mod remote;
pub mod verdict;

pub use anchor::{
    build_anchor_set, read_anchor_set, write_anchor_set, AnchorRecord, ANCHOR_SCHEMA,
    DEFAULT_ANCHOR_SIZE,
};
pub use describe::describe_triplet;
pub use oracle::{oracle_arbitrate, Arbiter, ArbiterKind, ArbiterModel, GPT4O_ACCURACY};
pub use parse::parse_verdict;
pub use prompt::{
    build_prompt, build_prompt_variant, escape_field, unescape_field, PromptBundle, PromptVariant,
    TripletDescription, FIELD_DELIMITER, RESPONSE_SCHEMA, STEP1_MARKER, STEP2_MARKER, STEP3_MARKER,
};
pub use remote::{HttpTransport, RemoteArbiter, RemoteRequest, ReplayTransport, Transport};
pub use verdict::{Diagnosis, Label, Verdict};
