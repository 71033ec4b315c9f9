//! Checkpoint file: `u32` little-endian header length, a UTF-8 JSON manifest,
//! then one `EMB1` block per parameter tensor. Manifest offsets are relative to
//! the first byte after the header.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Head, HeadKind, StudentDims, StudentParams, Tensors};
use crate::error::{Error, Result};
use crate::teacher_store::{decode_emb1_prefix, encode_emb1};

const FORMAT: &str = "kdmcse-checkpoint-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dropout_rate: f64,
    hidden: usize,
    grounded: usize,
    teacher_text: usize,
    teacher_visual: usize,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

fn chunk(values: &[f64], cols: usize) -> Vec<Vec<f64>> {
    values.chunks(cols).map(<[f64]>::to_vec).collect()
}

fn numbered(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

pub fn save_checkpoint(params: &StudentParams, path: &Path) -> Result<()> {
    let bytes = encode(params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn encode(params: &StudentParams) -> Result<Vec<u8>> {
    let mut blocks: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    let d = params.dims;
    blocks.push((
        "base".into(),
        vec![params.ids.len(), d.hidden],
        encode_emb1(&params.ids, &chunk(&params.values.base, d.hidden))?,
    ));
    for kind in HeadKind::ALL {
        let h = params.values.head(kind);
        let name = kind.name();
        blocks.push((
            format!("{name}.w1"),
            vec![h.output, h.input],
            encode_emb1(&numbered(h.output), &chunk(&h.w1, h.input))?,
        ));
        blocks.push((
            format!("{name}.b1"),
            vec![h.output],
            encode_emb1(&["0"], std::slice::from_ref(&h.b1))?,
        ));
        blocks.push((
            format!("{name}.w2"),
            vec![h.output, h.output],
            encode_emb1(&numbered(h.output), &chunk(&h.w2, h.output))?,
        ));
        blocks.push((
            format!("{name}.b2"),
            vec![h.output],
            encode_emb1(&["0"], std::slice::from_ref(&h.b2))?,
        ));
    }

    let mut offset = 0;
    let mut tensors = Vec::with_capacity(blocks.len());
    for (name, shape, bytes) in &blocks {
        tensors.push(Entry {
            name: name.clone(),
            shape: shape.clone(),
            offset,
        });
        offset += bytes.len();
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        dropout_rate: params.dropout_rate,
        hidden: d.hidden,
        grounded: d.grounded,
        teacher_text: d.teacher_text,
        teacher_visual: d.teacher_visual,
        tensors,
    };
    let header = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(4 + header.len() + offset);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, _, bytes) in blocks {
        out.extend_from_slice(&bytes);
    }
    Ok(out)
}

pub fn load_checkpoint(path: &Path) -> Result<StudentParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub(crate) fn decode(bytes: &[u8], path: &Path) -> Result<StudentParams> {
    let bad = |reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    };
    let len = bytes
        .get(..4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| bad("missing header length".into()))?;
    let header = bytes
        .get(4..4 + len)
        .ok_or_else(|| bad("truncated header".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(header).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != FORMAT {
        return Err(bad(format!("unsupported format {:?}", manifest.format)));
    }
    let payload = &bytes[4 + len..];
    let tensor = |name: &str| -> Result<(Vec<String>, Vec<f64>)> {
        let entry = manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| bad(format!("missing tensor {name}")))?;
        let block = payload
            .get(entry.offset..)
            .ok_or_else(|| bad(format!("offset of {name} past end")))?;
        let (ids, rows, _) = decode_emb1_prefix(block, path)?;
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        if flat.len() != entry.shape.iter().product::<usize>() {
            return Err(bad(format!(
                "tensor {name} does not match shape {:?}",
                entry.shape
            )));
        }
        Ok((ids, flat))
    };

    let dims = StudentDims {
        hidden: manifest.hidden,
        grounded: manifest.grounded,
        teacher_text: manifest.teacher_text,
        teacher_visual: manifest.teacher_visual,
    };
    let (ids, base) = tensor("base")?;
    let mut heads = Vec::with_capacity(4);
    for kind in HeadKind::ALL {
        let (input, output) = dims.head_shape(kind);
        let name = kind.name();
        let mut head = Head::zeros(input, output);
        head.w1 = tensor(&format!("{name}.w1"))?.1;
        head.b1 = tensor(&format!("{name}.b1"))?.1;
        head.w2 = tensor(&format!("{name}.w2"))?.1;
        head.b2 = tensor(&format!("{name}.b2"))?.1;
        heads.push(head);
    }
    let heads: [Head; 4] = heads.try_into().expect("four heads");
    StudentParams::from_parts(ids, dims, manifest.dropout_rate, Tensors { base, heads })
}
