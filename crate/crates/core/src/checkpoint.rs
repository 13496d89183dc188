//! Plain-text checkpoints.
//!
//! ```text
//! protograph-checkpoint 1
//! config seed=0
//! gnn <layers> <activation>
//! matrix <rows> <cols>
//! <row-major values, one row per line>
//! bias <len> | nobias
//! <values>
//! encoder identity <dim> | encoder linear
//! ...
//! end
//! ```
//!
//! Values are written with `{:e}` so they read back bit for bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::likelihood::EncoderParams;
use crate::numerics::Mat;
use crate::prior::{GcnLayer, GnnParams};
use crate::trainer::ModelParams;

const MAGIC: &str = "protograph-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Training configuration echo, `key=value` pairs.
    pub config: Vec<(String, String)>,
}

fn push_values(out: &mut String, values: &[f64]) {
    let line: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

fn push_matrix(out: &mut String, m: &Mat<f64>) {
    out.push_str(&format!("matrix {} {}\n", m.rows(), m.cols()));
    for row in m.iter_rows() {
        push_values(out, row);
    }
}

fn push_bias(out: &mut String, bias: &Option<Vec<f64>>) {
    match bias {
        Some(b) => {
            out.push_str(&format!("bias {}\n", b.len()));
            push_values(out, b);
        }
        None => out.push_str("nobias\n"),
    }
}

pub fn render_checkpoint(ckpt: &Checkpoint) -> String {
    let mut out = format!("{MAGIC} {VERSION}\n");
    for (k, v) in &ckpt.config {
        out.push_str(&format!("config {k}={v}\n"));
    }
    let gnn = &ckpt.params.gnn;
    out.push_str(&format!("gnn {} {}\n", gnn.layers.len(), gnn.activation));
    for layer in &gnn.layers {
        push_matrix(&mut out, &layer.weight);
        push_bias(&mut out, &layer.bias);
    }
    match &ckpt.params.encoder {
        EncoderParams::Identity { dim } => out.push_str(&format!("encoder identity {dim}\n")),
        EncoderParams::Linear { weight, bias } => {
            out.push_str("encoder linear\n");
            push_matrix(&mut out, weight);
            push_bias(&mut out, &Some(bias.clone()));
        }
    }
    out.push_str("end\n");
    out
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // Write then rename, so a crash never leaves a truncated checkpoint behind.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, render_checkpoint(ckpt)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::parse(self.path, 0, "unexpected end of checkpoint"))
    }

    fn fail<T>(&self, line: usize, msg: impl Into<String>) -> Result<T> {
        Err(Error::parse(self.path, line, msg))
    }

    fn number<T: std::str::FromStr>(&self, line: usize, tok: Option<&str>) -> Result<T> {
        tok.and_then(|t| t.parse().ok())
            .map_or_else(|| self.fail(line, "expected a number"), Ok)
    }

    fn values(&mut self, expected: usize) -> Result<Vec<f64>> {
        let (no, line) = self.next()?;
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>();
        match vals {
            Ok(v) if v.len() == expected => Ok(v),
            Ok(v) => self.fail(no, format!("expected {expected} values, found {}", v.len())),
            Err(e) => self.fail(no, e.to_string()),
        }
    }

    fn matrix(&mut self) -> Result<Mat<f64>> {
        let (no, line) = self.next()?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some("matrix") {
            return self.fail(no, "expected a matrix header");
        }
        let rows: usize = self.number(no, toks.next())?;
        let cols: usize = self.number(no, toks.next())?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            data.extend(self.values(cols)?);
        }
        Mat::new(rows, cols, data)
    }

    fn bias(&mut self) -> Result<Option<Vec<f64>>> {
        let (no, line) = self.next()?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("nobias") => Ok(None),
            Some("bias") => {
                let len: usize = self.number(no, toks.next())?;
                Ok(Some(self.values(len)?))
            }
            _ => self.fail(no, "expected bias or nobias"),
        }
    }
}

pub fn parse_checkpoint(path: &Path, text: &str) -> Result<Checkpoint> {
    let mut r = Reader {
        path,
        lines: text.lines().enumerate().peekable(),
    };
    let (no, header) = r.next()?;
    if header != format!("{MAGIC} {VERSION}") {
        return r.fail(no, format!("not a version {VERSION} checkpoint"));
    }
    let mut config = Vec::new();
    while let Some((_, line)) = r.lines.peek() {
        let Some(entry) = line.trim().strip_prefix("config ") else { break };
        let (no, _) = r.next()?;
        match entry.split_once('=') {
            Some((k, v)) => config.push((k.to_string(), v.to_string())),
            None => return r.fail(no, "config entry without '='"),
        }
    }

    let (no, line) = r.next()?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some("gnn") {
        return r.fail(no, "expected the gnn header");
    }
    let count: usize = r.number(no, toks.next())?;
    let activation = match toks.next().map(str::parse) {
        Some(Ok(a)) => a,
        _ => return r.fail(no, "expected an activation"),
    };
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let weight = r.matrix()?;
        let bias = r.bias()?;
        layers.push(GcnLayer { weight, bias });
    }

    let (no, line) = r.next()?;
    let mut toks = line.split_whitespace();
    if toks.next() != Some("encoder") {
        return r.fail(no, "expected the encoder header");
    }
    let encoder = match toks.next() {
        Some("identity") => EncoderParams::Identity {
            dim: r.number(no, toks.next())?,
        },
        Some("linear") => {
            let weight = r.matrix()?;
            match r.bias()? {
                Some(bias) => EncoderParams::Linear { weight, bias },
                None => return r.fail(no, "linear encoder without bias"),
            }
        }
        _ => return r.fail(no, "unknown encoder kind"),
    };
    let (no, line) = r.next()?;
    if line != "end" {
        return r.fail(no, "expected end");
    }
    let params = ModelParams {
        gnn: GnnParams { layers, activation },
        encoder,
    };
    params.gnn.check_structure()?;
    params.encoder.check_structure()?;
    if params.gnn.output_dim() != params.encoder.output_dim() {
        return r.fail(no, "graph network and encoder disagree on the prototype dimension");
    }
    Ok(Checkpoint { params, config })
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(path, &text)
}
