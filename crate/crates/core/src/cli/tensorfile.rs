//! `QT01` tensor files.
//!
//! Layout, all multi-byte integers little-endian:
//!
//! | field       | size        | contents                                    |
//! |-------------|-------------|---------------------------------------------|
//! | magic       | 4           | `QT01`                                      |
//! | bits        | 1           | code width, 2..=8                           |
//! | signedness  | 1           | 0 unsigned, 1 signed                        |
//! | rows        | 4           | u32                                         |
//! | cols        | 4           | u32                                         |
//! | step_kind   | 1           | 0 global, 1 per-channel                     |
//! | step_len    | 4           | u32 byte length of the step text            |
//! | step_values | step_len    | comma-separated decimal step sizes          |
//! | payload     | rows × cols | one byte per code (two's complement), row-major |

use std::path::Path;

use crate::error::{Error, Result};
use crate::msa::{QuantTensor, StepSize};
use crate::quantarith::{CodeRange, Signedness};

pub const MAGIC: &[u8; 4] = b"QT01";

fn parse_err(field: &str, detail: impl Into<String>) -> Error {
    Error::Parse {
        field: field.to_string(),
        detail: detail.into(),
    }
}

pub fn encode(t: &QuantTensor) -> Vec<u8> {
    let (kind, steps): (u8, Vec<f64>) = match &t.step {
        StepSize::Global(s) => (0, vec![*s]),
        StepSize::PerChannel(v) => (1, v.clone()),
    };
    let text = steps.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(",");
    let mut out = Vec::with_capacity(19 + text.len() + t.codes.len());
    out.extend_from_slice(MAGIC);
    out.push(t.bits);
    out.push(matches!(t.signedness, Signedness::Signed) as u8);
    out.extend_from_slice(&(t.rows as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols as u32).to_le_bytes());
    out.push(kind);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend(t.codes.iter().map(|&c| c as i8 as u8));
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| parse_err(field, format!("truncated: need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(buf: &[u8]) -> Result<QuantTensor> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(parse_err("magic", "expected QT01"));
    }
    let bits = r.u8("bits")?;
    if !(2..=8).contains(&bits) {
        return Err(parse_err("bits", format!("{bits} outside [2, 8]")));
    }
    let signedness = match r.u8("signedness")? {
        0 => Signedness::Unsigned,
        1 => Signedness::Signed,
        v => return Err(parse_err("signedness", format!("unknown value {v}"))),
    };
    let rows = r.u32("rows")? as usize;
    let cols = r.u32("cols")? as usize;
    let kind = r.u8("step_kind")?;
    let len = r.u32("step_len")? as usize;
    let text = std::str::from_utf8(r.take(len, "step_values")?).map_err(|_| parse_err("step_values", "not UTF-8"))?;
    let steps = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| parse_err("step_values", e.to_string()))?;
    if let Some(s) = steps.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(parse_err("step_values", format!("step {s} is not a positive finite number")));
    }
    let step = match (kind, steps.len()) {
        (0, 1) => StepSize::Global(steps[0]),
        (0, n) => return Err(parse_err("step_values", format!("global step needs 1 value, got {n}"))),
        (1, n) if n == cols => StepSize::PerChannel(steps),
        (1, n) => return Err(parse_err("step_values", format!("expected {cols} channel steps, got {n}"))),
        (k, _) => return Err(parse_err("step_kind", format!("unknown value {k}"))),
    };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| parse_err("cols", "rows x cols overflows"))?;
    let payload = r.take(count, "payload")?;
    if r.pos != buf.len() {
        return Err(parse_err("payload", format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let range = CodeRange::new(bits, signedness);
    let mut codes = Vec::with_capacity(count);
    for (i, &b) in payload.iter().enumerate() {
        let c = match signedness {
            Signedness::Signed => b as i8 as i32,
            Signedness::Unsigned => b as i32,
        };
        if c < range.min || c > range.max {
            return Err(parse_err("payload", format!("code {c} at index {i} outside [{}, {}]", range.min, range.max)));
        }
        codes.push(c);
    }
    QuantTensor::new(rows, cols, bits, signedness, step, codes)
}

pub fn write(path: &Path, t: &QuantTensor) -> Result<()> {
    std::fs::write(path, encode(t))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<QuantTensor> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> QuantTensor {
        QuantTensor::new(2, 3, 3, Signedness::Signed, StepSize::PerChannel(vec![0.1, 0.25, 1.0 / 3.0]), vec![-3, 0, 3, 1, -1, 2])
            .unwrap()
    }

    #[test]
    fn round_trip() {
        let t = sample();
        assert_eq!(decode(&encode(&t)).unwrap(), t);
        let u = QuantTensor::new(1, 2, 3, Signedness::Unsigned, StepSize::Global(0.125), vec![7, 0]).unwrap();
        assert_eq!(decode(&encode(&u)).unwrap(), u);
    }

    #[test]
    fn header_bytes() {
        let b = encode(&sample());
        assert_eq!(&b[..4], b"QT01");
        assert_eq!(&b[4..10], &[3, 1, 2, 0, 0, 0]);
        assert_eq!(b[b.len() - 6..], [0xfd, 0, 3, 1, 0xff, 2]);
    }

    fn field_of(buf: &[u8]) -> String {
        match decode(buf) {
            Err(Error::Parse { field, .. }) => field,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_fields_are_named() {
        let good = encode(&sample());
        let mut b = good.clone();
        b[0] = b'X';
        assert_eq!(field_of(&b), "magic");
        let mut b = good.clone();
        b[4] = 9;
        assert_eq!(field_of(&b), "bits");
        let mut b = good.clone();
        b[5] = 7;
        assert_eq!(field_of(&b), "signedness");
        let mut b = good.clone();
        b[14] = 4;
        assert_eq!(field_of(&b), "step_kind");
        let mut b = good.clone();
        b[19] = b'x';
        assert_eq!(field_of(&b), "step_values");
        assert_eq!(field_of(&good[..good.len() - 1]), "payload");
        let mut b = good.clone();
        *b.last_mut().unwrap() = 4;
        assert_eq!(field_of(&b), "payload");
        assert_eq!(field_of(&good[..7]), "rows");
    }
}
