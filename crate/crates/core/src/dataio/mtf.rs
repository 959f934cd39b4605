//! MTF: a plain-text motion format.
//!
//! ```text
//! MTF1 joints=<J> fps=<fps> name=<label>
//! x y z x y z ...      (3·J floats per frame, one frame per line)
//! ```
//!
//! Floats are written in shortest round-trip form, so `parse(write(s))`
//! reproduces every coordinate bit for bit.

use std::io::{BufRead, Write};

use super::MotionSequence;
use crate::error::{Error, Result};

pub const MAGIC: &str = "MTF1";

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn header_field<'a>(token: Option<&'a str>, key: &str, line: usize) -> Result<&'a str> {
    let token = token.ok_or_else(|| parse_err(line, format!("missing `{key}=` field")))?;
    token
        .strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| parse_err(line, format!("expected `{key}=...`, found `{token}`")))
}

/// Strict parser; the first malformed line aborts with its 1-based number.
pub fn parse_mtf<R: BufRead>(reader: R) -> Result<MotionSequence> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or_else(|| parse_err(1, "empty input"))??;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(parse_err(1, format!("bad magic, expected `{MAGIC}`")));
    }
    let joints: usize = header_field(tokens.next(), "joints", 1)?
        .parse()
        .map_err(|_| parse_err(1, "joints is not a positive integer"))?;
    let fps: f64 = header_field(tokens.next(), "fps", 1)?
        .parse()
        .map_err(|_| parse_err(1, "fps is not a number"))?;
    let name = header_field(tokens.next(), "name", 1)?.to_string();
    if let Some(extra) = tokens.next() {
        return Err(parse_err(1, format!("unexpected header token `{extra}`")));
    }
    if joints == 0 {
        return Err(parse_err(1, "joints must be positive"));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(parse_err(1, "fps must be positive"));
    }
    if name.is_empty() {
        return Err(parse_err(1, "empty name"));
    }

    let mut frames = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut pose = Vec::with_capacity(joints);
        let mut count = 0;
        let mut triple = [0.0; 3];
        for token in line.split_whitespace() {
            let v: f64 = token
                .parse()
                .map_err(|_| parse_err(line_no, format!("non-numeric token `{token}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line_no, format!("non-finite value `{token}`")));
            }
            triple[count % 3] = v;
            count += 1;
            if count % 3 == 0 {
                pose.push(triple);
            }
        }
        if count != 3 * joints {
            return Err(parse_err(line_no, format!("expected {} values, found {count}", 3 * joints)));
        }
        frames.push(pose);
    }
    if frames.is_empty() {
        return Err(parse_err(2, "no frames"));
    }
    MotionSequence::new(name, fps, joints, frames)
}

pub fn parse_mtf_str(text: &str) -> Result<MotionSequence> {
    parse_mtf(text.as_bytes())
}

fn token_safe(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(char::is_whitespace)
}

/// Canonical serialization. Names must be a single whitespace-free token.
pub fn write_mtf<W: Write>(seq: &MotionSequence, mut out: W) -> Result<()> {
    if !token_safe(&seq.name) {
        return Err(Error::Data(format!("sequence name `{}` is not a single token", seq.name)));
    }
    writeln!(out, "{MAGIC} joints={} fps={} name={}", seq.joints, seq.fps, seq.name)?;
    let mut line = String::new();
    for pose in &seq.frames {
        line.clear();
        for (j, p) in pose.iter().enumerate() {
            for (a, v) in p.iter().enumerate() {
                if j + a > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn to_mtf_string(seq: &MotionSequence) -> Result<String> {
    let mut buf = Vec::new();
    write_mtf(seq, &mut buf)?;
    Ok(String::from_utf8(buf).expect("writer emits ASCII"))
}
