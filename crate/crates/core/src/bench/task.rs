use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::synth::{Family, ModalityId};

/// Observed modalities `inputs` → modalities to synthesize `outputs`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskSpec {
    inputs: BTreeSet<ModalityId>,
    outputs: BTreeSet<ModalityId>,
}

fn parse_err(position: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        position,
        message: message.into(),
    }
}

fn parse_side(text: &str, offset: usize) -> Result<BTreeSet<ModalityId>> {
    let mut out = BTreeSet::new();
    let mut pos = offset;
    for part in text.split(',') {
        let lead = part.len() - part.trim_start().len();
        let name = part.trim();
        if name.is_empty() {
            return Err(parse_err(pos + lead, "empty modality name"));
        }
        let m = ModalityId::from_str(name).map_err(|_| parse_err(pos + lead, format!("unknown modality {name:?}")))?;
        if !out.insert(m) {
            return Err(parse_err(pos + lead, format!("{m} listed twice")));
        }
        pos += part.len() + 1;
    }
    Ok(out)
}

impl TaskSpec {
    pub fn new(inputs: impl IntoIterator<Item = ModalityId>, outputs: impl IntoIterator<Item = ModalityId>) -> Result<Self> {
        let t = Self {
            inputs: inputs.into_iter().collect(),
            outputs: outputs.into_iter().collect(),
        };
        t.check(0)?;
        Ok(t)
    }

    fn check(&self, at: usize) -> Result<()> {
        if self.inputs.is_empty() || self.outputs.is_empty() {
            return Err(parse_err(at, "both sides need at least one modality"));
        }
        if let Some(m) = self.inputs.intersection(&self.outputs).next() {
            return Err(parse_err(at, format!("{m} is both input and output")));
        }
        let fam = self.inputs.iter().next().expect("non-empty").family();
        if let Some(m) = self.inputs.iter().chain(&self.outputs).find(|m| m.family() != fam) {
            return Err(parse_err(at, format!("{m} is not in the {} family", fam.name())));
        }
        Ok(())
    }

    /// Parses `A,B->C`. Errors carry the byte offset of the offending token.
    pub fn parse(text: &str) -> Result<Self> {
        let arrow = text.find("->").ok_or_else(|| parse_err(text.len(), "expected \"->\""))?;
        if text[arrow + 2..].contains("->") {
            return Err(parse_err(arrow + 2 + text[arrow + 2..].find("->").unwrap_or(0), "second \"->\""));
        }
        let inputs = parse_side(&text[..arrow], 0)?;
        let outputs = parse_side(&text[arrow + 2..], arrow + 2)?;
        let t = Self { inputs, outputs };
        t.check(arrow)?;
        Ok(t)
    }

    /// Parses a `;`-separated list of tasks.
    pub fn parse_list(text: &str) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for part in text.split(';') {
            if !part.trim().is_empty() {
                let lead = part.len() - part.trim_start().len();
                out.push(Self::parse(part.trim()).map_err(|e| match e {
                    Error::Parse { position, message } => parse_err(offset + lead + position, message),
                    other => other,
                })?);
            }
            offset += part.len() + 1;
        }
        if out.is_empty() {
            return Err(parse_err(0, "no tasks given"));
        }
        Ok(out)
    }

    /// The four default settings: 1→1, 1→1, 1→N and N→1.
    pub fn defaults() -> Vec<Self> {
        ["CT->CTC", "DCE1->DCE2", "DCE1->DCE2,DCE3", "DCE1,DCE3->DCE2"]
            .iter()
            .map(|s| Self::parse(s).expect("valid default"))
            .collect()
    }

    pub fn inputs(&self) -> &BTreeSet<ModalityId> {
        &self.inputs
    }

    pub fn outputs(&self) -> &BTreeSet<ModalityId> {
        &self.outputs
    }

    pub fn family(&self) -> Family {
        self.inputs.iter().next().expect("non-empty").family()
    }
}

impl fmt::Display for TaskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |s: &BTreeSet<ModalityId>| s.iter().map(|m| m.name()).collect::<Vec<_>>().join(",");
        write!(f, "{}->{}", join(&self.inputs), join(&self.outputs))
    }
}

impl FromStr for TaskSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

impl Serialize for TaskSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::parse(&s).map_err(serde::de::Error::custom)
    }
}
