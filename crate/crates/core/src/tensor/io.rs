//! Plain-text network files.
//!
//! ```text
//! densenet 1
//! name <tag>
//! layers <L>
//! <in> <out> <activation>      (L lines)
//! <weight row>                 (out lines per layer, `in` values each)
//! <bias>                       (one line per layer)
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! `f64`, so a round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::tensor::net::{Activation, DenseLayer, DenseNet};

pub const FORMAT_VERSION: u32 = 1;

pub fn net_to_string(net: &DenseNet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "densenet {FORMAT_VERSION}");
    let _ = writeln!(out, "name {}", net.name);
    let _ = writeln!(out, "layers {}", net.layers().len());
    for l in net.layers() {
        let _ = writeln!(out, "{} {} {}", l.in_dim(), l.out_dim(), l.activation.code());
    }
    for l in net.layers() {
        for row in l.weight.rows() {
            push_values(&mut out, row.iter());
        }
        push_values(&mut out, l.bias.iter());
    }
    out
}

fn push_values<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(' ');
        }
        first = false;
        let _ = write!(out, "{v}");
    }
    out.push('\n');
}

/// Line-numbered cursor over a text document.
pub(crate) struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    offset: usize,
    pub(crate) last: usize,
}

impl<'a> Lines<'a> {
    pub(crate) fn new(text: &'a str, offset: usize) -> Self {
        Lines {
            inner: text.lines().enumerate(),
            offset,
            last: offset,
        }
    }

    pub(crate) fn next_line(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1 + self.offset;
                Ok((self.last, l))
            }
            None => Err(Error::Parse {
                line: self.last + 1,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_values(line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let values = line
        .split_ascii_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("invalid number '{tok}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.len() != expected {
        return Err(parse_err(
            line_no,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(parse_err(line_no, format!("non-finite value {v}")));
    }
    Ok(values)
}

fn keyed<'a>(line_no: usize, line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| parse_err(line_no, format!("expected '{key} ...'")))
}

pub fn net_from_str(text: &str) -> Result<DenseNet> {
    let mut lines = Lines::new(text, 0);
    read_net(&mut lines)
}

pub(crate) fn read_net(lines: &mut Lines<'_>) -> Result<DenseNet> {
    let (n, l) = lines.next_line("header")?;
    let version: u32 = keyed(n, l, "densenet")?
        .trim()
        .parse()
        .map_err(|_| parse_err(n, "invalid format version"))?;
    if version != FORMAT_VERSION {
        return Err(parse_err(n, format!("unsupported network format version {version}")));
    }
    let (n, l) = lines.next_line("name")?;
    let name = keyed(n, l, "name").unwrap_or("").to_string();
    let (n, l) = lines.next_line("layer count")?;
    let count: usize = keyed(n, l, "layers")?
        .trim()
        .parse()
        .map_err(|_| parse_err(n, "invalid layer count"))?;
    if count == 0 {
        return Err(parse_err(n, "layer count must be positive"));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, l) = lines.next_line("layer shape")?;
        let parts: Vec<&str> = l.split_ascii_whitespace().collect();
        if parts.len() != 3 {
            return Err(parse_err(n, "layer line must be '<in> <out> <activation>'"));
        }
        let din: usize = parts[0].parse().map_err(|_| parse_err(n, "invalid input dim"))?;
        let dout: usize = parts[1].parse().map_err(|_| parse_err(n, "invalid output dim"))?;
        let act = Activation::from_code(parts[2])
            .ok_or_else(|| parse_err(n, format!("unknown activation '{}'", parts[2])))?;
        if din == 0 || dout == 0 {
            return Err(parse_err(n, "layer dimensions must be positive"));
        }
        shapes.push((din, dout, act));
    }
    let mut layers = Vec::with_capacity(count);
    for (din, dout, activation) in shapes {
        let mut weight = Array2::zeros((dout, din));
        for r in 0..dout {
            let (n, l) = lines.next_line("weight row")?;
            let row = parse_values(n, l, din)?;
            weight.row_mut(r).assign(&Array1::from(row));
        }
        let (n, l) = lines.next_line("bias row")?;
        let bias = Array1::from(parse_values(n, l, dout)?);
        layers.push(DenseLayer {
            weight,
            bias,
            activation,
        });
    }
    DenseNet::new(name, layers)
}

pub fn save_net(net: &DenseNet, path: &Path) -> Result<()> {
    std::fs::write(path, net_to_string(net)).map_err(|e| Error::io(path, e))
}

pub fn load_net(path: &Path) -> Result<DenseNet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    net_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_reproduces_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::random(
            "w_3",
            &[5, 7, 6],
            &[Activation::Relu, Activation::Softmax],
            &mut rng,
        )
        .unwrap();
        let back = net_from_str(&net_to_string(&net)).unwrap();
        assert_eq!(back, net);
        let x = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64) * 0.37);
        let a = net.predict(x.view()).unwrap();
        let b = back.predict(x.view()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| (p - q).abs() <= 1e-12));
    }

    #[test]
    fn malformed_rows_report_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNet::random("x", &[2, 2], &[Activation::Linear], &mut rng).unwrap();
        let text = net_to_string(&net).replacen("\n", "\n", 1);
        let mut lines: Vec<&str> = text.lines().collect();
        lines[5] = "1.0";
        let err = net_from_str(&lines.join("\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 6, .. }), "{err}");
        let err = net_from_str("densenet 9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
