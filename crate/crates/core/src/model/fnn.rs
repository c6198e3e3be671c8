//! Plain-text network format.
//!
//! ```text
//! FNN 1
//! L
//! n0 n1 ... nL
//! <n1 rows of n0 weights followed by the bias>
//! ...
//! <nL rows of n(L-1) weights followed by the bias>
//! ```
//!
//! ReLU applies to layers 1..L-1. Numbers are written in shortest round-trip
//! form, so `save(load(text)) == text` for anything `save` produced.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use super::matrix::Matrix;
use super::network::{AffineLayer, Network};
use crate::error::{Error, Result};

const MAGIC: &str = "FNN";
const VERSION: &str = "1";

pub fn load_network<R: BufRead>(source: R) -> Result<Network> {
    let mut lines = source.lines().enumerate().map(|(k, l)| (k + 1, l));
    let mut next_line = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((no, Ok(text))) => Ok((no, text)),
            Some((no, Err(e))) => Err(Error::parse(no, format!("read error: {e}"))),
            None => Err(Error::parse(0, format!("unexpected end of input, expected {what}"))),
        }
    };

    let (no, header) = next_line("header")?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(MAGIC) {
        return Err(Error::parse(no, "missing `FNN` magic"));
    }
    match toks.next() {
        Some(VERSION) => {}
        Some(v) => return Err(Error::parse(no, format!("unsupported version `{v}`"))),
        None => return Err(Error::parse(no, "missing version")),
    }
    if toks.next().is_some() {
        return Err(Error::parse(no, "trailing tokens in header"));
    }

    let (no, count) = next_line("layer count")?;
    let layer_count: usize = count
        .trim()
        .parse()
        .map_err(|_| Error::parse(no, format!("bad layer count `{}`", count.trim())))?;
    if layer_count == 0 {
        return Err(Error::parse(no, "layer count must be positive"));
    }

    let (no, widths_line) = next_line("layer widths")?;
    let widths = widths_line
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(no, format!("bad layer width `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if widths.len() != layer_count + 1 {
        return Err(Error::parse(
            no,
            format!(
                "expected {} widths for {layer_count} layers, found {}",
                layer_count + 1,
                widths.len()
            ),
        ));
    }
    if widths.contains(&0) {
        return Err(Error::parse(no, "layer widths must be positive"));
    }

    let mut layers = Vec::with_capacity(layer_count);
    for l in 1..=layer_count {
        let (rows, cols) = (widths[l], widths[l - 1]);
        let mut data = Vec::with_capacity(rows * cols);
        let mut biases = Vec::with_capacity(rows);
        for _ in 0..rows {
            let (no, row) = next_line(&format!("row of layer {l}"))?;
            let mut count = 0;
            for tok in row.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(no, format!("non-numeric token `{tok}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(no, format!("non-finite value `{tok}`")));
                }
                if count < cols {
                    data.push(v);
                } else {
                    biases.push(v);
                }
                count += 1;
            }
            if count != cols + 1 {
                return Err(Error::parse(
                    no,
                    format!("layer {l}: expected {} values, found {count}", cols + 1),
                ));
            }
        }
        layers.push(AffineLayer::new(
            Matrix::from_row_major(rows, cols, data),
            biases,
            l != layer_count,
        )?);
    }
    if let Some((no, Ok(extra))) = lines.next() {
        if !extra.trim().is_empty() {
            return Err(Error::parse(no, "trailing data after last layer"));
        }
    }
    Network::new(layers)
}

pub fn load_network_str(text: &str) -> Result<Network> {
    load_network(text.as_bytes())
}

pub fn save_network<W: Write>(net: &Network, mut out: W) -> Result<()> {
    out.write_all(network_to_string(net).as_bytes())?;
    Ok(())
}

pub fn network_to_string(net: &Network) -> String {
    let mut s = String::new();
    let widths = net.widths();
    let _ = writeln!(s, "{MAGIC} {VERSION}");
    let _ = writeln!(s, "{}", net.layers().len());
    let _ = writeln!(s, "{}", join(widths.iter()));
    for layer in net.layers() {
        let cols = layer.input_dim();
        for r in 0..layer.output_dim() {
            let mut row = vec![0.0; cols];
            for (c, v) in layer.weights.row(r) {
                row[c] = v;
            }
            row.push(layer.biases[r]);
            let _ = writeln!(s, "{}", join(row.iter()));
        }
    }
    s
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    let mut s = String::new();
    for (k, v) in items.enumerate() {
        if k > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{v}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LAYER: &str = "FNN 1\n2\n3 2 2\n1 0 -1 0.5\n0 2 0 -0.25\n1 1 0\n-1 1 0.125\n";

    #[test]
    fn header_echo() {
        let net = load_network_str(TWO_LAYER).unwrap();
        assert_eq!(net.input_dim(), 3);
        assert_eq!(net.output_dim(), 2);
        assert_eq!(net.layers().len(), 2);
        assert!(net.layers()[0].relu);
        assert!(!net.layers()[1].relu);
        assert_eq!(network_to_string(&net), TWO_LAYER);
    }

    #[test]
    fn fig1_shape() {
        // three inputs, two hidden layers, two outputs
        let text = "FNN 1\n3\n3 2 2 2\n\
                    1 1 1 0\n1 -1 0 0\n\
                    1 0 0\n0 1 0\n\
                    1 0 0\n0 1 0\n";
        let net = load_network_str(text).unwrap();
        assert_eq!(net.layers().len(), 3);
        assert_eq!(net.input_dim(), 3);
        assert_eq!(net.output_dim(), 2);
    }

    fn line_of(err: Error) -> usize {
        match err {
            Error::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(load_network_str("NN 1\n").unwrap_err()), 1);
        assert_eq!(line_of(load_network_str("FNN 1\nx\n").unwrap_err()), 2);
        assert_eq!(line_of(load_network_str("FNN 1\n2\n3 2\n").unwrap_err()), 3);
        let bad_token = TWO_LAYER.replace("0 2 0 -0.25", "0 2 zero -0.25");
        assert_eq!(line_of(load_network_str(&bad_token).unwrap_err()), 5);
        let short_row = TWO_LAYER.replace("1 1 0\n", "1 1\n");
        assert_eq!(line_of(load_network_str(&short_row).unwrap_err()), 6);
    }
}
