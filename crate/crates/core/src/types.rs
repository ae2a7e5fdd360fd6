use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stable per-sample identifier, unique within a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SampleId(pub u64);

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// `(id, label)` pairs, as taken by [`crate::metrics::confusion_matrix`].
pub type LabelPairs = Vec<(SampleId, Label)>;

/// Binary presence label. `Positive` (1) means a camouflaged target is present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_value(value: u8) -> Result<Self> {
        match value {
            0 => Ok(Label::Negative),
            1 => Ok(Label::Positive),
            other => Err(Error::input(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn value(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn index(self) -> usize {
        self.value() as usize
    }

    pub fn flip(self) -> Self {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.value())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_value(v).map_err(serde::de::Error::custom)
    }
}

/// Tolerance on the sum of a probability vector.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// A discrete distribution over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::input(format!(
                "probability vector needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(Error::input(format!("probability {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::input(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(ProbVector(probs))
    }

    /// Builds a vector from values already known to form a distribution
    /// (softmax output).
    pub(crate) fn from_softmax(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= PROB_SUM_TOL);
        ProbVector(probs)
    }

    pub fn one_hot(class: usize, classes: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::input(format!(
                "class {class} out of range for {classes} classes"
            )));
        }
        let mut v = vec![0.0; classes];
        v[class] = 1.0;
        ProbVector::new(v)
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        ProbVector::new(vec![1.0 / classes as f64; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest entry; ties go to the lower class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate().skip(1) {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Binary prediction. Only meaningful for `C = 2`.
    pub fn predicted_label(&self) -> Label {
        if self.argmax() == 1 {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

impl<'de> Deserialize<'de> for ProbVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        ProbVector::new(v).map_err(serde::de::Error::custom)
    }
}
