//! Plain-text weight files.
//!
//! ```text
//! pronet-weights 1
//! variant detrend
//! input_len 200
//! conv_channels 16 32 32
//! kernel 5
//! hidden 64 32 16
//! output_scale 1e-2
//! tensor conv1.weight 16 1 5
//! <one value per line>
//! ...
//! end
//! ```
//!
//! Tensors appear in layer order with their shape after the name. Values are
//! written in shortest round-trip exponent form, so loading is exact.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Architecture, Regressor, Variant};
use crate::error::{Error, Result};

const MAGIC: &str = "pronet-weights 1";

pub fn write_weights(model: &Regressor, mut out: impl Write) -> Result<()> {
    let a = &model.arch;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "variant {}", model.variant);
    let _ = writeln!(s, "input_len {}", a.input_len);
    let _ = writeln!(s, "conv_channels {} {} {}", a.conv_channels[0], a.conv_channels[1], a.conv_channels[2]);
    let _ = writeln!(s, "kernel {}", a.kernel);
    let _ = writeln!(s, "hidden {} {} {}", a.hidden[0], a.hidden[1], a.hidden[2]);
    let _ = writeln!(s, "output_scale {:e}", a.output_scale);
    for (name, shape, span) in model.layout.tensors(a) {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        let _ = writeln!(s, "tensor {name} {}", dims.join(" "));
        for v in &model.params[span.start..span.start + span.len] {
            let _ = writeln!(s, "{v:e}");
        }
    }
    s.push_str("end\n");
    out.write_all(s.as_bytes())?;
    Ok(())
}

pub fn save_weights(model: &Regressor, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_weights(model, &mut f)?;
    f.flush()?;
    Ok(())
}

fn parse_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("weights line {line}: {msg}"))
}

struct Lines<R> {
    inner: std::io::Lines<BufReader<R>>,
    n: usize,
}

impl<R: Read> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.n += 1;
        match self.inner.next() {
            Some(l) => Ok(l?.trim().to_string()),
            None => Err(parse_err(self.n, "unexpected end of file")),
        }
    }

    fn field(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(parse_err(self.n, format!("expected `{key}`, found `{line}`")));
        }
        Ok(parts.map(str::to_string).collect())
    }

    fn numbers<T: std::str::FromStr>(&mut self, key: &str, count: usize) -> Result<Vec<T>> {
        let raw = self.field(key)?;
        if raw.len() != count {
            return Err(parse_err(self.n, format!("`{key}` expects {count} values, found {}", raw.len())));
        }
        raw.iter().map(|r| r.parse().map_err(|_| parse_err(self.n, format!("bad number `{r}`")))).collect()
    }
}

pub fn read_weights(input: impl Read) -> Result<Regressor> {
    let mut lines = Lines { inner: BufReader::new(input).lines(), n: 0 };
    if lines.next()? != MAGIC {
        return Err(parse_err(1, "not a weights file"));
    }
    let v = lines.field("variant")?;
    let variant = v
        .first()
        .and_then(|s| Variant::from_name(s))
        .ok_or_else(|| parse_err(lines.n, format!("unknown variant {v:?}")))?;
    let input_len = lines.numbers::<usize>("input_len", 1)?[0];
    let c = lines.numbers::<usize>("conv_channels", 3)?;
    let kernel = lines.numbers::<usize>("kernel", 1)?[0];
    let h = lines.numbers::<usize>("hidden", 3)?;
    let output_scale = lines.numbers::<f64>("output_scale", 1)?[0];
    let arch = Architecture { input_len, conv_channels: [c[0], c[1], c[2]], kernel, hidden: [h[0], h[1], h[2]], output_scale };
    // Validated against the layout before any large allocation.
    let probe = Regressor::from_params(variant, arch, vec![0.0; super::ParamLayout::new(&arch).total])?;
    let mut params = Vec::with_capacity(probe.param_count());
    for (name, shape, span) in probe.layout.tensors(&arch) {
        let header = lines.field("tensor")?;
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        if header.first() != Some(&name) || header[1..] != dims[..] {
            return Err(parse_err(lines.n, format!("expected tensor {name} {}, found {header:?}", dims.join(" "))));
        }
        for _ in 0..span.len {
            let l = lines.next()?;
            params.push(l.parse::<f64>().map_err(|_| parse_err(lines.n, format!("bad number `{l}`")))?);
        }
    }
    if lines.next()? != "end" {
        return Err(parse_err(lines.n, "expected `end`"));
    }
    Regressor::from_params(variant, arch, params)
}

pub fn load_weights(path: &Path) -> Result<Regressor> {
    read_weights(std::fs::File::open(path)?)
}
