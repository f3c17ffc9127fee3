//! Emotion labels, the circular emotion wheel, and free-text label parsing.
//!
//! The wheel stores an explicit cyclic order and a polarity map. Every
//! distance and weight is computed from that configured order; nothing in
//! this crate assumes a particular arrangement beyond the shipped default.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight target emotions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Amusement,
    Awe,
    Contentment,
    Excitement,
    Anger,
    Disgust,
    Fear,
    Sadness,
}

impl EmotionLabel {
    pub const COUNT: usize = 8;

    /// Canonical order, used for matrix indexing and default label lists.
    pub const ALL: [EmotionLabel; 8] = [
        EmotionLabel::Amusement,
        EmotionLabel::Awe,
        EmotionLabel::Contentment,
        EmotionLabel::Excitement,
        EmotionLabel::Anger,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Sadness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Amusement => "amusement",
            EmotionLabel::Awe => "awe",
            EmotionLabel::Contentment => "contentment",
            EmotionLabel::Excitement => "excitement",
            EmotionLabel::Anger => "anger",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sadness => "sadness",
        }
    }

    /// Position in [`EmotionLabel::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Polarity under the standard positive/negative split.
    pub fn canonical_polarity(self) -> Polarity {
        match self {
            EmotionLabel::Amusement
            | EmotionLabel::Awe
            | EmotionLabel::Contentment
            | EmotionLabel::Excitement => Polarity::Positive,
            _ => Polarity::Negative,
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let wanted = s.trim().to_lowercase();
        EmotionLabel::ALL
            .iter()
            .copied()
            .find(|l| l.name() == wanted)
            .ok_or_else(|| Error::Data(format!("unknown emotion label {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Default polarity constant `C` added to cross-polarity distances.
pub const DEFAULT_POLARITY_CONSTANT: u32 = 4;

/// Cyclic arrangement of the emotions plus their polarity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmotionWheel {
    order: Vec<EmotionLabel>,
    /// position of each label (canonical index) on the cycle
    position: [usize; EmotionLabel::COUNT],
    polarity: [Polarity; EmotionLabel::COUNT],
    polarity_constant: u32,
}

impl EmotionWheel {
    /// Shipped default order: the positive arc followed by the negative arc.
    pub const DEFAULT_ORDER: [EmotionLabel; 8] = [
        EmotionLabel::Amusement,
        EmotionLabel::Awe,
        EmotionLabel::Contentment,
        EmotionLabel::Excitement,
        EmotionLabel::Sadness,
        EmotionLabel::Fear,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
    ];

    /// Builds a wheel. `order` must list all eight labels exactly once and
    /// `polarity` must cover every label.
    pub fn new(
        order: Vec<EmotionLabel>,
        polarity: &[(EmotionLabel, Polarity)],
        polarity_constant: u32,
    ) -> Result<Self> {
        if order.len() != EmotionLabel::COUNT {
            return Err(Error::config(
                "wheel.order",
                format!("expected {} labels, got {}", EmotionLabel::COUNT, order.len()),
            ));
        }
        let mut position = [usize::MAX; EmotionLabel::COUNT];
        for (pos, label) in order.iter().enumerate() {
            if position[label.index()] != usize::MAX {
                return Err(Error::config("wheel.order", format!("label {label} listed twice")));
            }
            position[label.index()] = pos;
        }
        let mut pol: [Option<Polarity>; EmotionLabel::COUNT] = [None; EmotionLabel::COUNT];
        for &(label, p) in polarity {
            pol[label.index()] = Some(p);
        }
        let mut resolved = [Polarity::Positive; EmotionLabel::COUNT];
        for label in EmotionLabel::ALL {
            resolved[label.index()] = pol[label.index()].ok_or_else(|| {
                Error::config("wheel.polarity", format!("missing polarity for {label}"))
            })?;
        }
        if polarity_constant == 0 {
            return Err(Error::config("wheel.polarity_constant", "must be at least 1"));
        }
        Ok(EmotionWheel {
            order,
            position,
            polarity: resolved,
            polarity_constant,
        })
    }

    /// Same as [`EmotionWheel::new`] with the standard polarity split.
    pub fn with_order(order: Vec<EmotionLabel>) -> Result<Self> {
        let polarity: Vec<_> = EmotionLabel::ALL
            .iter()
            .map(|&l| (l, l.canonical_polarity()))
            .collect();
        Self::new(order, &polarity, DEFAULT_POLARITY_CONSTANT)
    }

    pub fn order(&self) -> &[EmotionLabel] {
        &self.order
    }

    pub fn polarity(&self, label: EmotionLabel) -> Polarity {
        self.polarity[label.index()]
    }

    pub fn polarity_constant(&self) -> u32 {
        self.polarity_constant
    }

    pub fn position(&self, label: EmotionLabel) -> usize {
        self.position[label.index()]
    }

    /// Minimal number of steps between `a` and `b` along the cycle.
    pub fn distance(&self, a: EmotionLabel, b: EmotionLabel) -> u32 {
        let n = self.order.len();
        let (pa, pb) = (self.position(a), self.position(b));
        let forward = (pa + n - pb) % n;
        forward.min(n - forward) as u32
    }

    /// Emotional weight: `1 + dist` within a polarity, `C + dist` across.
    pub fn weight(&self, a: EmotionLabel, b: EmotionLabel) -> u32 {
        let dist = self.distance(a, b);
        if self.polarity(a) == self.polarity(b) {
            1 + dist
        } else {
            self.polarity_constant + dist
        }
    }
}

impl Default for EmotionWheel {
    fn default() -> Self {
        EmotionWheel::with_order(Self::DEFAULT_ORDER.to_vec()).expect("default wheel is valid")
    }
}

/// Result of parsing a model reply.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsedOutput {
    Label(EmotionLabel),
    /// No target label occurred; carries the raw reply.
    NonTarget(String),
}

impl ParsedOutput {
    pub fn label(&self) -> Option<EmotionLabel> {
        match self {
            ParsedOutput::Label(l) => Some(*l),
            ParsedOutput::NonTarget(_) => None,
        }
    }

    pub fn is_label(&self, label: EmotionLabel) -> bool {
        self.label() == Some(label)
    }
}

impl fmt::Display for ParsedOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParsedOutput::Label(l) => write!(f, "{l}"),
            ParsedOutput::NonTarget(_) => f.write_str("non-target"),
        }
    }
}

/// Finds the earliest whole-word occurrence of any label in `labels`.
///
/// Matching is case-insensitive and synonyms are not mapped, so "happy" or
/// "sad" come back as [`ParsedOutput::NonTarget`].
pub fn parse_label(raw: &str, labels: &[EmotionLabel]) -> ParsedOutput {
    // Tokenize the upper-cased text so that parse(x) == parse(upper(x)).
    let upper = raw.to_uppercase();
    for token in upper.split(|c: char| !c.is_alphabetic()) {
        if token.is_empty() {
            continue;
        }
        let token = token.to_lowercase();
        if let Some(&label) = labels.iter().find(|l| l.name() == token) {
            return ParsedOutput::Label(label);
        }
    }
    ParsedOutput::NonTarget(raw.to_string())
}
