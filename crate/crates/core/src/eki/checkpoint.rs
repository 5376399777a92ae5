use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::EkiHyper;
use crate::error::{Error, Result};
use crate::numkit::{Activation, DenseMatrix, Layer, MlpParams};

pub const CKPT_SCHEMA: &str = "airknow-ckpt-v1";

/// Seventeen significant digits: enough for every f64 to read back exactly.
fn num(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String");
}

fn num_list(out: &mut String, vs: &[f64]) {
    out.push('[');
    for (k, &v) in vs.iter().enumerate() {
        if k > 0 {
            out.push(',');
        }
        num(out, v);
    }
    out.push(']');
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Sigmoid => "sigmoid",
        Activation::Identity => "identity",
    }
}

/// Renders the proxy as a single JSON document.
pub fn checkpoint_json(params: &MlpParams, hyper: &EkiHyper) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "{{\"schema\":\"{CKPT_SCHEMA}\",\"arch\":{},\"input_dropout\":",
        serde_json::to_string(&params.arch()).expect("arch serializes")
    ));
    num(&mut s, params.input_dropout());
    s.push_str(",\"layers\":[");
    for (k, layer) in params.layers().iter().enumerate() {
        if k > 0 {
            s.push(',');
        }
        s.push_str("{\"w\":[");
        for r in 0..layer.weight.rows() {
            if r > 0 {
                s.push(',');
            }
            num_list(&mut s, layer.weight.row(r));
        }
        s.push_str("],\"b\":");
        num_list(&mut s, &layer.bias);
        s.push_str(&format!(
            ",\"activation\":\"{}\",\"dropout\":",
            activation_name(layer.activation)
        ));
        num(&mut s, layer.dropout);
        s.push('}');
    }
    s.push_str("],\"hyper\":");
    s.push_str(&serde_json::to_string(hyper).expect("hyper serializes"));
    s.push_str("}\n");
    s
}

pub fn write_checkpoint(params: &MlpParams, hyper: &EkiHyper, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_json(params, hyper)).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CkptLayer {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    activation: Activation,
    dropout: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CkptFile {
    schema: String,
    arch: Vec<usize>,
    input_dropout: f64,
    layers: Vec<CkptLayer>,
    hyper: EkiHyper,
}

pub fn parse_checkpoint(text: &str) -> Result<(MlpParams, EkiHyper)> {
    let file: CkptFile =
        serde_json::from_str(text).map_err(|e| Error::input(format!("bad checkpoint: {e}")))?;
    if file.schema != CKPT_SCHEMA {
        return Err(Error::input(format!(
            "unexpected checkpoint schema {:?}",
            file.schema
        )));
    }
    let layers = file
        .layers
        .into_iter()
        .map(|l| {
            Ok(Layer {
                weight: DenseMatrix::from_rows(&l.w)?,
                bias: l.b,
                activation: l.activation,
                dropout: l.dropout,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let params = MlpParams::new(layers, file.input_dropout)?;
    if params.arch() != file.arch {
        return Err(Error::shape(format!(
            "checkpoint declares arch {:?} but its layers give {:?}",
            file.arch,
            params.arch()
        )));
    }
    Ok((params, file.hyper))
}

pub fn read_checkpoint(path: &Path) -> Result<(MlpParams, EkiHyper)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text)
}
