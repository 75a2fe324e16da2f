use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Attack category assigned by the categorizer. The declaration order is the
/// tie-break order for forest votes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackLabel {
    /// Man-in-the-middle that drops traffic (denial of service).
    Ex1,
    /// Sensor spoofing.
    Ex2,
    /// Actuator spoofing.
    Ex3,
    /// Eavesdropping man-in-the-middle.
    Ex4,
    /// Command injection.
    Ex6,
    /// Volumetric flood.
    Ex7,
}

impl AttackLabel {
    pub const ALL: [AttackLabel; 6] = [
        AttackLabel::Ex1,
        AttackLabel::Ex2,
        AttackLabel::Ex3,
        AttackLabel::Ex4,
        AttackLabel::Ex6,
        AttackLabel::Ex7,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackLabel::Ex1 => "EX-1",
            AttackLabel::Ex2 => "EX-2",
            AttackLabel::Ex3 => "EX-3",
            AttackLabel::Ex4 => "EX-4",
            AttackLabel::Ex6 => "EX-6",
            AttackLabel::Ex7 => "EX-7",
        }
    }
}

/// Row label: benign traffic or one of the attack categories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Normal,
    Attack(AttackLabel),
}

impl Label {
    pub const ALL: [Label; 7] = [
        Label::Normal,
        Label::Attack(AttackLabel::Ex1),
        Label::Attack(AttackLabel::Ex2),
        Label::Attack(AttackLabel::Ex3),
        Label::Attack(AttackLabel::Ex4),
        Label::Attack(AttackLabel::Ex6),
        Label::Attack(AttackLabel::Ex7),
    ];

    pub fn is_attack(self) -> bool {
        matches!(self, Label::Attack(_))
    }

    pub fn attack(self) -> Option<AttackLabel> {
        match self {
            Label::Attack(a) => Some(a),
            Label::Normal => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "Normal",
            Label::Attack(a) => a.as_str(),
        }
    }
}

impl From<AttackLabel> for Label {
    fn from(a: AttackLabel) -> Self {
        Label::Attack(a)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for AttackLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AttackLabel::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

impl FromStr for Label {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("normal") {
            return Ok(Label::Normal);
        }
        s.parse().map(Label::Attack)
    }
}

impl fmt::Display for AttackLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

string_serde!(AttackLabel);
string_serde!(Label);
