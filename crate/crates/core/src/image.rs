//! Images with values in `[0, 1]` and their file formats.
//!
//! Pixel `(i, j)` is column `i` in `1..=n` and row `j` in `1..=m`. The flat
//! vector fed to a classifier groups pixels by column: pixel `(i, j)` channel
//! `ch` lives at `((i - 1) * m + (j - 1)) * c + ch`. Netpbm files are raster
//! (row-by-row) ordered and are transposed on load and save; the `IMG` text
//! format stores the flat vector as-is.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    /// `data` is in flat (column-grouped) order.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage("empty image".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                context: "image data",
                expected: height * width * channels,
                found: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds an image from row-by-row raster data (channel innermost).
    pub fn from_raster(height: usize, width: usize, channels: usize, raster: &[f64]) -> Result<Self> {
        if raster.len() != height * width * channels {
            return Err(Error::DimensionMismatch {
                context: "raster data",
                expected: height * width * channels,
                found: raster.len(),
            });
        }
        let mut data = vec![0.0; raster.len()];
        for row in 0..height {
            for col in 0..width {
                for ch in 0..channels {
                    data[(col * height + row) * channels + ch] = raster[(row * width + col) * channels + ch];
                }
            }
        }
        Image::new(height, width, channels, data)
    }

    pub fn to_raster(&self) -> Vec<f64> {
        let (m, n, c) = (self.height, self.width, self.channels);
        let mut raster = vec![0.0; self.data.len()];
        for row in 0..m {
            for col in 0..n {
                for ch in 0..c {
                    raster[(row * n + col) * c + ch] = self.data[(col * m + row) * c + ch];
                }
            }
        }
        raster
    }

    /// Height `m` (number of rows).
    pub fn height(&self) -> usize {
        self.height
    }

    /// Width `n` (number of columns).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of column `i`, row `j` (both 1-based), channel `ch`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, ch: usize) -> usize {
        debug_assert!((1..=self.width).contains(&i) && (1..=self.height).contains(&j));
        ((i - 1) * self.height + (j - 1)) * self.channels + ch
    }

    pub fn get(&self, i: usize, j: usize, ch: usize) -> f64 {
        self.data[self.index(i, j, ch)]
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Image::decode(&bytes)
    }

    /// Decodes netpbm (P2/P3/P5/P6) or `IMG` text based on the magic bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"IMG") {
            let text = std::str::from_utf8(bytes).map_err(|_| Error::InvalidImage("IMG file is not UTF-8".into()))?;
            parse_img_text(text)
        } else if bytes.len() >= 2 && bytes[0] == b'P' {
            parse_netpbm(bytes)
        } else {
            Err(Error::InvalidImage("unrecognized image format".into()))
        }
    }

    /// Saves by extension: `.pgm`/`.ppm` as binary netpbm, anything else as `IMG` text.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        let bytes = match ext.as_deref() {
            Some("pgm") | Some("ppm") => self.to_netpbm(true)?,
            _ => self.to_img_text().into_bytes(),
        };
        std::fs::write(path, bytes)?;
        Ok(())
    }

    /// Netpbm encoding, 8-bit. Grayscale images become PGM, RGB images PPM.
    pub fn to_netpbm(&self, binary: bool) -> Result<Vec<u8>> {
        let magic = match (self.channels, binary) {
            (1, false) => "P2",
            (1, true) => "P5",
            (3, false) => "P3",
            _ => "P6",
        };
        let samples: Vec<u8> = self
            .to_raster()
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        if binary {
            out.extend_from_slice(&samples);
        } else {
            let per_line = self.width * self.channels;
            let mut text = String::new();
            for line in samples.chunks(per_line) {
                let row: Vec<String> = line.iter().map(u8::to_string).collect();
                let _ = writeln!(text, "{}", row.join(" "));
            }
            out.extend_from_slice(text.as_bytes());
        }
        Ok(out)
    }

    /// `IMG 1`, then `m n c`, then the flat vector, one column of pixels per line.
    pub fn to_img_text(&self) -> String {
        let mut s = format!("IMG 1\n{} {} {}\n", self.height, self.width, self.channels);
        for column in self.data.chunks(self.height * self.channels) {
            let vals: Vec<String> = column.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s
    }
}

fn parse_img_text(text: &str) -> Result<Image> {
    let mut tokens = text.lines().enumerate().flat_map(|(k, l)| {
        let l = l.split('#').next().unwrap_or("");
        l.split_whitespace().map(move |t| (k + 1, t))
    });
    let mut expect = |what: &str| {
        tokens
            .next()
            .ok_or_else(|| Error::parse(0, format!("IMG: missing {what}")))
    };
    let (line, magic) = expect("magic")?;
    if magic != "IMG" {
        return Err(Error::parse(line, "IMG: bad magic"));
    }
    let (line, version) = expect("version")?;
    if version != "1" {
        return Err(Error::parse(line, format!("IMG: unsupported version `{version}`")));
    }
    let mut dims = [0usize; 3];
    for (k, name) in ["height", "width", "channels"].iter().enumerate() {
        let (line, tok) = expect(name)?;
        dims[k] = tok
            .parse()
            .map_err(|_| Error::parse(line, format!("IMG: bad {name} `{tok}`")))?;
    }
    let count = dims[0] * dims[1] * dims[2];
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let (line, tok) = expect("pixel value")?;
        data.push(
            tok.parse::<f64>()
                .map_err(|_| Error::parse(line, format!("IMG: non-numeric value `{tok}`")))?,
        );
    }
    if let Some((line, _)) = tokens.next() {
        return Err(Error::parse(line, "IMG: trailing data"));
    }
    Image::new(dims[0], dims[1], dims[2], data)
}

fn parse_netpbm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let header_token = |pos: &mut usize| -> Result<String> {
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
                continue;
            }
            break;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::InvalidImage("truncated netpbm header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
    };
    let number = |pos: &mut usize, what: &str| -> Result<usize> {
        let tok = header_token(pos)?;
        tok.parse()
            .map_err(|_| Error::InvalidImage(format!("bad netpbm {what} `{tok}`")))
    };

    let magic = header_token(&mut pos)?;
    let (channels, binary) = match magic.as_str() {
        "P2" => (1, false),
        "P5" => (1, true),
        "P3" => (3, false),
        "P6" => (3, true),
        other => return Err(Error::InvalidImage(format!("unsupported netpbm magic `{other}`"))),
    };
    let width = number(&mut pos, "width")?;
    let height = number(&mut pos, "height")?;
    let maxval = number(&mut pos, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::InvalidImage(format!(
            "only 8-bit netpbm is supported (maxval {maxval})"
        )));
    }
    let count = width * height * channels;
    let samples: Vec<usize> = if binary {
        // exactly one whitespace byte separates the header from the samples
        pos += 1;
        let body = bytes
            .get(pos..pos + count)
            .ok_or_else(|| Error::InvalidImage("truncated netpbm pixel data".into()))?;
        body.iter().map(|&b| b as usize).collect()
    } else {
        (0..count).map(|_| number(&mut pos, "sample")).collect::<Result<_>>()?
    };
    if let Some(s) = samples.iter().find(|&&s| s > maxval) {
        return Err(Error::InvalidImage(format!("sample {s} exceeds maxval {maxval}")));
    }
    let raster: Vec<f64> = samples.iter().map(|&s| s as f64 / maxval as f64).collect();
    Image::from_raster(height, width, channels, &raster)
}
