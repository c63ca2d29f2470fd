use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{Field, PieceFields, TaskMode};
use crate::geometry::{normalize_angle, Point, CANVAS_SIDE};

/// Upper bound on balanced candidates tried before giving up.
const MAX_CANDIDATES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseErrorKind {
    NoJson,
    InvalidJson,
    WrongShape,
    MissingField,
    WrongArity,
    NonNumeric,
    InvalidSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind:?}: {detail}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub detail: String,
}

impl ParseError {
    fn new(kind: ParseErrorKind, detail: impl Into<String>) -> Self {
        ParseError {
            kind,
            detail: detail.into(),
        }
    }
}

/// A model answer after extraction and validation. Exactly one of `parsed`
/// and `parse_error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalResponse {
    pub raw_text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parsed: Option<Vec<PieceFields>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub parse_error: Option<ParseError>,
    /// Set when a position was pulled back into the canvas.
    #[serde(default)]
    pub clamped: bool,
}

/// Returns the byte range of the next balanced `{...}` or `[...]` span
/// starting at or after `from`, honoring JSON string escapes.
fn next_balanced(s: &[u8], from: usize) -> Option<(usize, usize)> {
    let start = from + s[from..].iter().position(|&b| b == b'{' || b == b'[')?;
    let mut stack = Vec::new();
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in s.iter().enumerate().skip(start) {
        if in_str {
            match (escaped, b) {
                (true, _) => escaped = false,
                (false, b'\\') => escaped = true,
                (false, b'"') => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return Some((start, i + 1));
                }
                if stack.is_empty() {
                    return Some((start, i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// First balanced JSON value embedded in `text`, skipping prose, code
/// fences and spans that fail to parse.
pub fn extract_json(text: &str) -> Result<Value, ParseError> {
    let bytes = text.as_bytes();
    let mut from = 0;
    let mut last_err = None;
    for _ in 0..MAX_CANDIDATES {
        let Some((start, end)) = next_balanced(bytes, from) else {
            break;
        };
        // Brackets are ASCII, so the span sits on char boundaries.
        match serde_json::from_str::<Value>(&text[start..end]) {
            Ok(v) => return Ok(v),
            Err(e) => last_err = Some(e.to_string()),
        }
        from = start + 1;
    }
    Err(match last_err {
        Some(e) => ParseError::new(ParseErrorKind::InvalidJson, e),
        None => ParseError::new(ParseErrorKind::NoJson, "no JSON object or array found"),
    })
}

fn number(v: &Value, what: &str) -> Result<f64, ParseError> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| ParseError::new(ParseErrorKind::NonNumeric, format!("`{what}` is {v}")))
}

fn parse_pos(v: &Value) -> Result<Point, ParseError> {
    match v {
        Value::Array(xs) if xs.len() == 2 => Ok(Point::new(number(&xs[0], "pos.x")?, number(&xs[1], "pos.y")?)),
        Value::Array(xs) => Err(ParseError::new(
            ParseErrorKind::WrongArity,
            format!("`pos` has {} coordinates", xs.len()),
        )),
        Value::Object(m) => match (m.get("x"), m.get("y")) {
            (Some(x), Some(y)) => Ok(Point::new(number(x, "pos.x")?, number(y, "pos.y")?)),
            _ => Err(ParseError::new(ParseErrorKind::MissingField, "`pos` needs x and y")),
        },
        other => Err(ParseError::new(
            ParseErrorKind::NonNumeric,
            format!("`pos` is {other}"),
        )),
    }
}

fn parse_piece(v: &Value, mode: TaskMode, clamped: &mut bool) -> Result<PieceFields, ParseError> {
    let Value::Object(m) = v else {
        return Err(ParseError::new(ParseErrorKind::WrongShape, "piece is not an object"));
    };
    let get = |f: Field| {
        let v = match f {
            Field::Size => m.get("size").or_else(|| m.get("scale")),
            _ => m.get(f.as_str()),
        };
        v.ok_or_else(|| ParseError::new(ParseErrorKind::MissingField, format!("missing `{}`", f.as_str())))
    };
    let mut out = PieceFields::default();
    for &f in mode.target_fields() {
        let v = get(f)?;
        match f {
            Field::Pos => {
                let p = parse_pos(v)?;
                let c = Point::new(p.x.clamp(0.0, CANVAS_SIDE), p.y.clamp(0.0, CANVAS_SIDE));
                if c != p {
                    log::debug!("clamped position ({}, {}) into the canvas", p.x, p.y);
                    *clamped = true;
                }
                out.pos = Some(c);
            }
            Field::Angle => out.angle = Some(normalize_angle(number(v, "angle")?)),
            Field::Size => {
                let s = number(v, "size")?;
                if s <= 0.0 {
                    return Err(ParseError::new(ParseErrorKind::InvalidSize, format!("size {s}")));
                }
                out.size = Some(s);
            }
        }
    }
    Ok(out)
}

fn parse_value(v: &Value, mode: TaskMode, piece_count: usize, clamped: &mut bool) -> Result<Vec<PieceFields>, ParseError> {
    let items: Vec<&Value> = match v {
        Value::Array(xs) => xs.iter().collect(),
        Value::Object(m) => match m.get("pieces") {
            Some(Value::Array(xs)) => xs.iter().collect(),
            Some(_) => return Err(ParseError::new(ParseErrorKind::WrongShape, "`pieces` is not an array")),
            None => vec![v],
        },
        _ => return Err(ParseError::new(ParseErrorKind::WrongShape, "answer is not an object or array")),
    };
    if items.len() != piece_count {
        return Err(ParseError::new(
            ParseErrorKind::WrongArity,
            format!("expected {piece_count} piece(s), got {}", items.len()),
        ));
    }
    items.into_iter().map(|p| parse_piece(p, mode, clamped)).collect()
}

/// Extracts and validates the mode's target fields from free-form model
/// output. Never fails: problems are reported in `parse_error`.
pub fn parse_response(raw_text: &str, mode: TaskMode, piece_count: usize) -> ProposalResponse {
    let mut clamped = false;
    let result = extract_json(raw_text).and_then(|v| parse_value(&v, mode, piece_count, &mut clamped));
    let clamped = clamped && result.is_ok();
    let (parsed, parse_error) = match result {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e)),
    };
    ProposalResponse {
        raw_text: raw_text.to_string(),
        parsed,
        parse_error,
        clamped,
    }
}

/// Serializes fields in the answer format, with `decimals` places.
pub fn format_answer(fields: &[PieceFields], decimals: usize) -> String {
    let num = |x: f64| format!("{x:.decimals$}");
    let piece = |f: &PieceFields| {
        let mut parts = Vec::new();
        if let Some(p) = f.pos {
            parts.push(format!("\"pos\":[{},{}]", num(p.x), num(p.y)));
        }
        if let Some(a) = f.angle {
            parts.push(format!("\"angle\":{}", num(a)));
        }
        if let Some(s) = f.size {
            parts.push(format!("\"size\":{}", num(s)));
        }
        format!("{{{}}}", parts.join(","))
    };
    match fields {
        [one] => piece(one),
        many => format!(
            "{{\"pieces\":[{}]}}",
            many.iter().map(piece).collect::<Vec<_>>().join(",")
        ),
    }
}
