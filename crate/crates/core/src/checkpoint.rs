//! Plain-text model checkpoints.
//!
//! ```text
//! lstm-autoencoder 1
//! feature_dim D
//! hidden H
//! <tensor name> <dim> <dim>...
//! <values, one row per line>
//! ...
//! ```
//!
//! Values use 17 significant digits, which round-trips every `f64` exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::autoencoder::{AutoencoderParams, TENSOR_NAMES};
use crate::error::{Error, Result};

const MAGIC: &str = "lstm-autoencoder 1";

pub fn format_checkpoint(params: &AutoencoderParams) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC}").unwrap();
    writeln!(out, "feature_dim {}", params.feature_dim()).unwrap();
    writeln!(out, "hidden {}", params.hidden()).unwrap();
    for (name, tensor) in TENSOR_NAMES.iter().zip(params.tensors()) {
        let shape: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        writeln!(out, "{name} {}", shape.join(" ")).unwrap();
        let row_len = *tensor.shape().last().unwrap_or(&1);
        for (i, v) in tensor.iter().enumerate() {
            write!(out, "{v:.16e}").unwrap();
            out.push(if (i + 1) % row_len == 0 { '\n' } else { ' ' });
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, params: &AutoencoderParams) -> Result<()> {
    fs::write(path, format_checkpoint(params)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<AutoencoderParams> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, path)
}

pub fn parse_checkpoint(text: &str, origin: &Path) -> Result<AutoencoderParams> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| {
            Error::parse(
                origin,
                0,
                format!("unexpected end of file, expected {what}"),
            )
        })
    };
    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(Error::parse(origin, n, format!("expected `{MAGIC}`")));
    }
    let mut header_value = |key: &str| -> Result<usize> {
        let (n, line) = next(key)?;
        line.strip_prefix(key)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| Error::parse(origin, n, format!("expected `{key} <int>`")))
    };
    let dim = header_value("feature_dim")?;
    let hidden = header_value("hidden")?;
    if dim == 0 || hidden == 0 {
        return Err(Error::parse(origin, 2, "dimensions must be positive"));
    }

    let mut params = AutoencoderParams::zeros(dim, hidden);
    for (name, mut tensor) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
        let (n, header) = next(name)?;
        let mut fields = header.split_whitespace();
        if fields.next() != Some(*name) {
            return Err(Error::parse(origin, n, format!("expected tensor {name}")));
        }
        let shape: Vec<usize> = fields
            .map(|f| {
                f.parse()
                    .map_err(|_| Error::parse(origin, n, format!("bad dimension {f:?}")))
            })
            .collect::<Result<_>>()?;
        if shape != tensor.shape() {
            return Err(Error::parse(
                origin,
                n,
                format!("{name} has shape {shape:?}, expected {:?}", tensor.shape()),
            ));
        }
        let row_len = *shape.last().unwrap_or(&1);
        let mut values = tensor.iter_mut();
        for _ in 0..tensor_rows(&shape) {
            let (n, line) = next(name)?;
            let mut count = 0;
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(origin, n, format!("bad value {tok:?}")))?;
                *values
                    .next()
                    .ok_or_else(|| Error::parse(origin, n, "too many values"))? = v;
                count += 1;
            }
            if count != row_len {
                return Err(Error::parse(
                    origin,
                    n,
                    format!("{count} values, expected {row_len}"),
                ));
            }
        }
    }
    if let Some((n, extra)) = lines.find(|(_, l)| !l.is_empty()) {
        return Err(Error::parse(
            origin,
            n,
            format!("trailing content {extra:?}"),
        ));
    }
    Ok(params)
}

fn tensor_rows(shape: &[usize]) -> usize {
    shape[..shape.len().saturating_sub(1)].iter().product()
}
