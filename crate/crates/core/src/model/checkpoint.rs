//! Plain-text parameter checkpoint.
//!
//! ```text
//! muse-checkpoint v1
//! fusion controller            (or: fusion fixed <lambda>)
//! matrix <name> <rows> <cols>
//! <row 0: cols space-separated reals>
//! ...
//! end
//! ```
//!
//! Matrices appear in [`ModelParams::named`] order. Reals are written in
//! shortest round-trip form, so a read-back checkpoint is bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ControllerParams, EncoderParams, FusionSpec, ModelParams, ProjectorParams};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &str = "muse-checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub fusion: FusionSpec,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        match self.fusion.fixed_lambda {
            Some(v) => writeln!(out, "fusion {} {v}", self.fusion.strategy),
            None => writeln!(out, "fusion {}", self.fusion.strategy),
        }
        .expect("writing to a String");
        for (name, m) in self.params.named() {
            writeln!(out, "matrix {name} {} {}", m.rows(), m.cols()).expect("writing to a String");
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(|v| format!("{v}")).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| Error::Checkpoint(format!("unexpected end of file, expected {what}")))
        };
        let (_, magic) = next("header")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!("line 1: expected `{MAGIC}`")));
        }
        let (ln, fusion_line) = next("fusion line")?;
        let parts: Vec<&str> = fusion_line.split_whitespace().collect();
        let fusion = match parts.as_slice() {
            ["fusion", s] => FusionSpec { strategy: (*s).to_string(), fixed_lambda: None },
            ["fusion", s, v] => FusionSpec {
                strategy: (*s).to_string(),
                fixed_lambda: Some(v.parse().map_err(|_| Error::Checkpoint(format!("line {ln}: bad lambda `{v}`")))?),
            },
            _ => return Err(Error::Checkpoint(format!("line {ln}: expected `fusion <strategy> [lambda]`"))),
        };

        const NAMES: [&str; 12] = [
            "encoder.w1",
            "encoder.w2",
            "projector.w1",
            "projector.b1",
            "projector.w2",
            "projector.b2",
            "controller.filter_s",
            "controller.filter_c",
            "controller.w1",
            "controller.b1",
            "controller.w2",
            "controller.b2",
        ];
        let mut mats = Vec::with_capacity(NAMES.len());
        for expected in NAMES {
            let (ln, header) = next("matrix header")?;
            let parts: Vec<&str> = header.split_whitespace().collect();
            let (rows, cols) = match parts.as_slice() {
                ["matrix", name, r, c] if *name == expected => (
                    r.parse::<usize>().map_err(|_| Error::Checkpoint(format!("line {ln}: bad row count")))?,
                    c.parse::<usize>().map_err(|_| Error::Checkpoint(format!("line {ln}: bad column count")))?,
                ),
                _ => return Err(Error::Checkpoint(format!("line {ln}: expected `matrix {expected} <rows> <cols>`"))),
            };
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = next("matrix row")?;
                let before = data.len();
                for tok in row.split_whitespace() {
                    data.push(
                        tok.parse::<f64>().map_err(|_| Error::Checkpoint(format!("line {ln}: bad real `{tok}`")))?,
                    );
                }
                if data.len() - before != cols {
                    return Err(Error::Checkpoint(format!("line {ln}: expected {cols} values")));
                }
            }
            mats.push(Matrix::from_vec(rows, cols, data)?);
        }
        let (ln, end) = next("end")?;
        if end != "end" {
            return Err(Error::Checkpoint(format!("line {ln}: expected `end`")));
        }

        let mut it = mats.into_iter();
        let mut take = || it.next().expect("twelve matrices parsed");
        let params = ModelParams {
            encoder: EncoderParams { w1: take(), w2: take() },
            projector: ProjectorParams { w1: take(), b1: take(), w2: take(), b2: take() },
            controller: ControllerParams {
                filter_s: take(),
                filter_c: take(),
                w1: take(),
                b1: take(),
                w2: take(),
                b2: take(),
            },
        };
        params.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(Self { params, fusion })
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_text()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_text(&text)
}
