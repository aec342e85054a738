//! Structural loss: the fraction of decoded outputs in a batch that fail to
//! parse as a JSON object, added to a trainer-supplied cross-entropy value.
//!
//! `L_total = L_CE + weight * f / |batch|`, with `weight = 1.0` by default.
//!
//! The same computation is exposed as a line-delimited protocol
//! ([`penalty_service`]) so an out-of-process trainer gets bit-identical
//! numbers.

use std::io::{self, BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::exec::{self, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValidityMode {
    /// The whole trimmed string must be one JSON object.
    #[default]
    Strict,
    /// The first balanced `{...}` span that parses as an object is accepted.
    Extract,
}

impl FromStr for ValidityMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ValidityMode::Strict),
            "extract" => Ok(ValidityMode::Extract),
            other => Err(format!("unknown validity mode `{other}` (expected strict|extract)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PenaltyError {
    #[error("empty batch: the structure penalty is undefined for zero outputs")]
    EmptyBatch,
    #[error("base loss must be finite, got {0}")]
    NonFiniteLoss(f64),
    #[error("base loss must be non-negative, got {0}")]
    NegativeLoss(f64),
    #[error("penalty weight must be finite and non-negative, got {0}")]
    InvalidWeight(f64),
}

/// Iterates balanced top-level `{...}` spans of `s`, skipping braces that
/// occur inside JSON string literals. An opener that never closes encloses
/// the rest of the text, so iteration ends there.
pub fn object_candidates(s: &str) -> ObjectCandidates<'_> {
    ObjectCandidates { text: s, pos: 0 }
}

pub struct ObjectCandidates<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Iterator for ObjectCandidates<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let bytes = self.text.as_bytes();
        let found = bytes.get(self.pos..)?.iter().position(|&b| b == b'{');
        let Some(start) = found.map(|off| self.pos + off) else {
            self.pos = bytes.len();
            return None;
        };
        match balanced_end(&bytes[start..]) {
            Some(len) => {
                self.pos = start + len;
                Some(&self.text[start..start + len])
            }
            None => {
                self.pos = bytes.len();
                None
            }
        }
    }
}

fn balanced_end(bytes: &[u8]) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn parses_as_object(s: &str) -> bool {
    matches!(serde_json::from_str::<Value>(s), Ok(Value::Object(_)))
}

/// Extracts the first JSON object from `s` according to `mode`.
///
/// Returns `None` when no object is found. A string that is entirely some
/// other JSON value (an array, a number) yields `None` in both modes.
pub fn extract_object(s: &str, mode: ValidityMode) -> Option<serde_json::Map<String, Value>> {
    let trimmed = s.trim();
    match serde_json::from_str::<Value>(trimmed) {
        Ok(Value::Object(map)) => return Some(map),
        Ok(_) => return None,
        Err(_) if mode == ValidityMode::Strict => return None,
        Err(_) => {}
    }
    object_candidates(trimmed).find_map(|c| match serde_json::from_str::<Value>(c) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    })
}

pub fn is_valid_json(s: &str, mode: ValidityMode) -> bool {
    let trimmed = s.trim();
    match serde_json::from_str::<Value>(trimmed) {
        Ok(v) => v.is_object(),
        Err(_) => match mode {
            ValidityMode::Strict => false,
            ValidityMode::Extract => object_candidates(trimmed).any(parses_as_object),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyFragment {
    pub failures: usize,
    pub batch_size: usize,
    pub struct_penalty: f64,
}

impl PenaltyFragment {
    fn from_counts(failures: usize, batch_size: usize) -> Result<Self, PenaltyError> {
        if batch_size == 0 {
            return Err(PenaltyError::EmptyBatch);
        }
        Ok(Self {
            failures,
            batch_size,
            struct_penalty: failures as f64 / batch_size as f64,
        })
    }

    /// Fraction of the batch that parsed; `1 - struct_penalty`.
    pub fn validity_rate(&self) -> f64 {
        (self.batch_size - self.failures) as f64 / self.batch_size as f64
    }

    /// Penalty of the concatenated batch.
    pub fn merge(&self, other: &PenaltyFragment) -> PenaltyFragment {
        Self::from_counts(self.failures + other.failures, self.batch_size + other.batch_size)
            .expect("merged batch is non-empty")
    }
}

pub fn structure_penalty<S: AsRef<str> + Sync>(batch: &[S], mode: ValidityMode) -> Result<PenaltyFragment, PenaltyError> {
    structure_penalty_with(batch, mode, Execution::default())
}

pub fn structure_penalty_with<S: AsRef<str> + Sync>(
    batch: &[S],
    mode: ValidityMode,
    exec: Execution,
) -> Result<PenaltyFragment, PenaltyError> {
    if batch.is_empty() {
        return Err(PenaltyError::EmptyBatch);
    }
    let failures = exec::count(batch, exec, |s| !is_valid_json(s.as_ref(), mode));
    PenaltyFragment::from_counts(failures, batch.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce_loss: f64,
    pub batch_size: usize,
    pub failures: usize,
    pub struct_penalty: f64,
    pub weight: f64,
    pub total_loss: f64,
}

pub fn combined_loss(ce_loss: f64, fragment: &PenaltyFragment) -> Result<LossBreakdown, PenaltyError> {
    combined_loss_weighted(ce_loss, fragment, 1.0)
}

pub fn combined_loss_weighted(ce_loss: f64, fragment: &PenaltyFragment, weight: f64) -> Result<LossBreakdown, PenaltyError> {
    if !ce_loss.is_finite() {
        return Err(PenaltyError::NonFiniteLoss(ce_loss));
    }
    if ce_loss < 0.0 {
        return Err(PenaltyError::NegativeLoss(ce_loss));
    }
    if !weight.is_finite() || weight < 0.0 {
        return Err(PenaltyError::InvalidWeight(weight));
    }
    let weighted = weight * fragment.struct_penalty;
    Ok(LossBreakdown {
        ce_loss,
        batch_size: fragment.batch_size,
        failures: fragment.failures,
        struct_penalty: fragment.struct_penalty,
        weight,
        total_loss: ce_loss + weighted,
    })
}

// ---------------------------------------------------------------------------
// Line protocol

#[derive(Debug, Deserialize)]
struct PenaltyRequest {
    id: String,
    #[serde(default)]
    mode: Option<ValidityMode>,
    candidates: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct PenaltyResponse {
    pub id: String,
    pub failures: usize,
    pub batch_size: usize,
    pub penalty: f64,
}

impl PenaltyResponse {
    pub fn new(id: impl Into<String>, fragment: &PenaltyFragment) -> Self {
        Self {
            id: id.into(),
            failures: fragment.failures,
            batch_size: fragment.batch_size,
            penalty: fragment.struct_penalty,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}

#[derive(Debug, Serialize)]
struct ErrorResponse {
    id: Value,
    error: String,
}

/// Answers one request line. Never fails: malformed requests produce an
/// `{"id":..,"error":..}` line.
pub fn handle_request_line(line: &str, default_mode: ValidityMode) -> String {
    answer(line, default_mode).unwrap_or_else(|e| e)
}

fn answer(line: &str, default_mode: ValidityMode) -> Result<String, String> {
    let raw: Value =
        serde_json::from_str(line).map_err(|e| error_line(Value::Null, format!("malformed request: {e}")))?;
    let id = raw.get("id").cloned().unwrap_or(Value::Null);
    let req: PenaltyRequest =
        serde_json::from_value(raw).map_err(|e| error_line(id.clone(), format!("invalid request: {e}")))?;
    let mode = req.mode.unwrap_or(default_mode);
    let frag = structure_penalty(&req.candidates, mode).map_err(|e| error_line(id, e.to_string()))?;
    Ok(PenaltyResponse::new(req.id, &frag).to_line())
}

fn error_line(id: Value, error: String) -> String {
    serde_json::to_string(&ErrorResponse { id, error }).expect("error response serializes")
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ServiceStats {
    pub answered: usize,
    pub errors: usize,
}

/// Reads newline-delimited requests and writes one response per request, in
/// order, flushing after each so a child-process client never stalls.
/// Blank lines are ignored.
pub fn penalty_service<R: BufRead, W: Write>(input: R, mut output: W, default_mode: ValidityMode) -> io::Result<ServiceStats> {
    let mut stats = ServiceStats::default();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = answer(&line, default_mode).unwrap_or_else(|e| {
            stats.errors += 1;
            e
        });
        stats.answered += 1;
        output.write_all(response.as_bytes())?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(stats)
}
