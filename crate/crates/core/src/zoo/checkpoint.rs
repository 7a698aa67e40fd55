//! Checkpoint container.
//!
//! ```text
//! MLRISK-CHECKPOINT 1
//! architecture {json}
//! num_classes <usize>
//! seed <u64>
//! train_config {json}
//! history {json}
//! param <name> <dim> <dim> ...      (one line per tensor, declaration order)
//! end
//! <little-endian f64 values of every tensor, concatenated in the same order>
//! ```

use std::fs;
use std::path::Path;

use crate::engine::{Parameters, Tensor};
use crate::error::{Error, Result};

use super::model::TrainedModel;

const MAGIC: &str = "MLRISK-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("checkpoint metadata serializes")
}

pub fn encode_checkpoint(model: &TrainedModel) -> Vec<u8> {
    let mut header = format!("{MAGIC} {FORMAT_VERSION}\n");
    header += &format!("architecture {}\n", json(&model.architecture));
    header += &format!("num_classes {}\n", model.num_classes);
    header += &format!("seed {}\n", model.seed);
    header += &format!("train_config {}\n", json(&model.train_config));
    header += &format!("history {}\n", json(&model.history));
    for (name, t) in model.params.iter() {
        let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
        header += &format!("param {name} {}\n", dims.join(" "));
    }
    header += "end\n";
    let mut out = header.into_bytes();
    for t in model.params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn field<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str> {
    let line = line.ok_or_else(|| bad(format!("checkpoint header ends before {key}")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| bad(format!("expected {key:?} line, found {line:?}")))
}

fn parse_json<T: serde::de::DeserializeOwned>(s: &str, key: &str) -> Result<T> {
    serde_json::from_str(s).map_err(|e| bad(format!("{key}: {e}")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<TrainedModel> {
    const END: &[u8] = b"\nend\n";
    let split = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| bad("checkpoint header has no terminator"))?;
    let header =
        std::str::from_utf8(&bytes[..split]).map_err(|_| bad("checkpoint header is not UTF-8"))?;
    let body = &bytes[split + END.len()..];
    let mut lines = header.lines();

    let version = field(lines.next(), MAGIC)?;
    if version != FORMAT_VERSION.to_string() {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let architecture = parse_json(field(lines.next(), "architecture")?, "architecture")?;
    let num_classes = field(lines.next(), "num_classes")?
        .parse()
        .map_err(|_| bad("num_classes is not an integer"))?;
    let seed = field(lines.next(), "seed")?
        .parse()
        .map_err(|_| bad("seed is not an integer"))?;
    let train_config = parse_json(field(lines.next(), "train_config")?, "train_config")?;
    let history = parse_json(field(lines.next(), "history")?, "history")?;

    let mut params = Parameters::new();
    let mut offset = 0;
    for line in lines {
        let rest = field(Some(line), "param")?;
        let mut parts = rest.split(' ');
        let name = parts
            .next()
            .filter(|n| !n.is_empty())
            .ok_or_else(|| bad("param line without name"))?;
        let shape = parts
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| bad(format!("bad extent {d:?} for {name}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let chunk = body
            .get(offset..offset + 8 * n)
            .ok_or_else(|| bad(format!("checkpoint body truncated in {name}")))?;
        offset += 8 * n;
        let data = chunk
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        params
            .insert(name, Tensor::new(shape, data)?)
            .map_err(|e| bad(e.to_string()))?;
    }
    if offset != body.len() {
        return Err(bad(format!(
            "checkpoint body has {} trailing bytes",
            body.len() - offset
        )));
    }
    Ok(TrainedModel {
        architecture,
        params,
        num_classes,
        history,
        train_config,
        seed,
    })
}

pub fn save_checkpoint(model: &TrainedModel, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthSpec};
    use crate::zoo::{train, Architecture, TrainConfig};

    fn model() -> TrainedModel {
        let ds = synth_generate(&SynthSpec {
            num_classes: 3,
            samples_per_class: 4,
            channels: 1,
            class_separation: 10.0,
            noise_sigma: 0.2,
            attribute_strength: 0.0,
            seed: 1,
        })
        .unwrap();
        let cfg = TrainConfig::default()
            .with_epochs(2)
            .with_learning_rate(0.0123);
        train(&Architecture::tiny_residual(1, 3), &ds, &cfg, 77).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn corruption_is_format_error() {
        let bytes = encode_checkpoint(&model());
        for broken in [
            &bytes[..bytes.len() - 3],
            &bytes[..40],
            &[b"X".as_slice(), &bytes[1..]].concat()[..],
        ] {
            assert!(matches!(decode_checkpoint(broken), Err(Error::Format(_))));
        }
        let mut extra = bytes.clone();
        extra.extend_from_slice(&[0; 8]);
        assert!(matches!(decode_checkpoint(&extra), Err(Error::Format(_))));
    }
}
