//! Closed answer grammar for backend responses.
//!
//! Single-token steps accept their token case-insensitively, ignoring
//! surrounding whitespace and trailing punctuation. The content step is a
//! block of `key: value` lines.

use thiserror::Error;

use crate::catalog::{Legibility, MarkingKind, Rotation, Stage};

use super::SubMarking;

pub const MAX_SUB_MARKINGS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("expected one of {expected}, got {got:?}")]
    Token { expected: &'static str, got: String },
    #[error("missing field {0:?}")]
    MissingField(&'static str),
    #[error("unknown kind {0:?}")]
    Kind(String),
    #[error("unknown stage {0:?}")]
    Stage(String),
}

fn token(response: &str) -> String {
    response
        .trim()
        .trim_end_matches(['.', '!', ','])
        .trim()
        .to_ascii_lowercase()
}

pub fn presence(response: &str) -> Result<bool, ParseError> {
    match token(response).as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(ParseError::Token {
            expected: "yes, no",
            got: response.to_string(),
        }),
    }
}

pub fn legibility(response: &str) -> Result<Legibility, ParseError> {
    match token(response).as_str() {
        "legible" => Ok(Legibility::Legible),
        "illegible" => Ok(Legibility::Illegible),
        _ => Err(ParseError::Token {
            expected: "legible, illegible",
            got: response.to_string(),
        }),
    }
}

pub fn orientation(response: &str) -> Result<Rotation, ParseError> {
    let t = token(response);
    let digits = t
        .trim_end_matches("degrees")
        .trim_end_matches("deg")
        .trim_end_matches('°')
        .trim();
    digits
        .parse::<u16>()
        .ok()
        .and_then(Rotation::from_degrees)
        .ok_or(ParseError::Token {
            expected: "0, 90, 180, 270",
            got: response.to_string(),
        })
}

pub fn multiplicity(response: &str) -> Result<u32, ParseError> {
    match token(response).parse::<u32>() {
        Ok(n) if (1..=MAX_SUB_MARKINGS).contains(&n) => Ok(n),
        _ => Err(ParseError::Token {
            expected: "a count from 1 to 8",
            got: response.to_string(),
        }),
    }
}

pub fn content(response: &str) -> Result<SubMarking, ParseError> {
    let (mut kind, mut text, mut symbol, mut stage, mut description) = (None, None, None, None, None);
    for line in response.lines() {
        let Some((key, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        let slot = match key.trim().to_ascii_lowercase().as_str() {
            "kind" => &mut kind,
            "text" => &mut text,
            "symbol" => &mut symbol,
            "stage" => &mut stage,
            "description" => &mut description,
            _ => continue,
        };
        if slot.is_none() && !value.is_empty() {
            *slot = Some(value.to_string());
        }
    }
    let kind = match kind.as_deref().map(token).as_deref() {
        Some("textual") => MarkingKind::Textual,
        Some("symbolic") => MarkingKind::Symbolic,
        Some(other) => return Err(ParseError::Kind(other.to_string())),
        None => return Err(ParseError::MissingField("kind")),
    };
    let (text, symbol_name) = match kind {
        MarkingKind::Textual => (Some(text.ok_or(ParseError::MissingField("text"))?), None),
        _ => (None, Some(symbol.ok_or(ParseError::MissingField("symbol"))?)),
    };
    let stage = match stage.as_deref().map(token).as_deref() {
        None | Some("unknown") => None,
        Some(s) => Some(Stage::from_label(s).ok_or_else(|| ParseError::Stage(s.to_string()))?),
    };
    Ok(SubMarking {
        kind,
        text,
        symbol_name,
        description: description.ok_or(ParseError::MissingField("description"))?,
        stage,
    })
}
