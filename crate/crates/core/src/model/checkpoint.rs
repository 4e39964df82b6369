//! Binary checkpoint format.
//!
//! ```text
//! SMARTKGE1 <|E|> <|R|> <d> <egt_order> <mode>\n
//! entity_re | entity_im | trans_u_re | trans_u_im | rot_theta | ref_phi | scal_s | logits | frozen_mask
//! ```
//!
//! Every array is little-endian `f64`. `logits` and `frozen_mask` are
//! `|R| x 4` in canonical EGT column order (Trans, Rot, Ref, Scal); the mask is
//! stored as 0.0 / 1.0.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{AttentionMode, AttentionState, EmbeddingState};
use crate::error::{Error, Result};
use crate::geometry::EgtOrder;

pub const CHECKPOINT_MAGIC: &str = "SMARTKGE1";

pub fn write_checkpoint<W: Write>(mut out: W, state: &EmbeddingState, att: &AttentionState) -> std::io::Result<()> {
    assert_eq!(att.num_relations(), state.num_relations, "attention and embeddings disagree on |R|");
    writeln!(
        out,
        "{CHECKPOINT_MAGIC} {} {} {} {} {}",
        state.num_entities,
        state.num_relations,
        state.dim,
        att.egt_order,
        att.mode.name()
    )?;
    let mut bytes = Vec::with_capacity(8 * (2 * state.entity_re.len() + 5 * state.trans_re.len() + 8 * att.num_relations()));
    let banks = [
        &state.entity_re,
        &state.entity_im,
        &state.trans_re,
        &state.trans_im,
        &state.rot_theta,
        &state.ref_phi,
        &state.scal_s,
    ];
    for bank in banks {
        for x in bank.iter() {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    for row in &att.logits {
        for x in row {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
    for row in &att.frozen_mask {
        for &m in row {
            bytes.extend_from_slice(&(if m { 1.0f64 } else { 0.0 }).to_le_bytes());
        }
    }
    out.write_all(&bytes)
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<(EmbeddingState, AttentionState)> {
    let bad = |msg: String| Error::Data(format!("invalid checkpoint: {msg}"));
    let mut reader = BufReader::new(input);
    let mut header = String::new();
    reader
        .read_line(&mut header)
        .map_err(|e| Error::io("reading checkpoint header", e))?;
    let fields: Vec<&str> = header.trim_end_matches('\n').split(' ').collect();
    if fields.len() != 6 || fields[0] != CHECKPOINT_MAGIC {
        return Err(bad(format!("unrecognized header {:?}", header.trim_end())));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("bad count {s:?}")));
    let (num_entities, num_relations, dim) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    let egt_order: EgtOrder = fields[4].parse().map_err(|e| bad(format!("{e}")))?;
    let mode: AttentionMode = fields[5].parse().map_err(|e| bad(format!("{e}")))?;

    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::io("reading checkpoint body", e))?;
    let e = num_entities * dim;
    let r = num_relations * dim;
    let expected = 8 * (2 * e + 5 * r + 8 * num_relations);
    if body.len() != expected {
        return Err(bad(format!("body has {} bytes, header implies {expected}", body.len())));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |n: usize| -> Vec<f64> { values.by_ref().take(n).collect() };

    let state = EmbeddingState {
        dim,
        num_entities,
        num_relations,
        entity_re: take(e),
        entity_im: take(e),
        trans_re: take(r),
        trans_im: take(r),
        rot_theta: take(r),
        ref_phi: take(r),
        scal_s: take(r),
    };
    let logits: Vec<[f64; 4]> = take(4 * num_relations)
        .chunks_exact(4)
        .map(|c| [c[0], c[1], c[2], c[3]])
        .collect();
    let frozen_mask = take(4 * num_relations)
        .chunks_exact(4)
        .map(|c| {
            let mut row = [false; 4];
            for k in 0..4 {
                row[k] = match c[k] {
                    0.0 => false,
                    1.0 => true,
                    other => return Err(bad(format!("mask entry {other} is not binary"))),
                };
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    if mode == AttentionMode::Frozen && frozen_mask.iter().any(|row| !row.contains(&true)) {
        return Err(bad("frozen mask has an empty row".into()));
    }
    Ok((
        state,
        AttentionState {
            logits,
            mode,
            frozen_mask,
            egt_order,
        },
    ))
}

pub fn save_checkpoint(path: impl AsRef<Path>, state: &EmbeddingState, att: &AttentionState) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
    let mut out = std::io::BufWriter::new(file);
    write_checkpoint(&mut out, state, att)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(EmbeddingState, AttentionState)> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    read_checkpoint(file)
}
