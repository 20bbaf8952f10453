//! The seven basic highway violation types and a compact set type over them.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Law {
    /// Speed below the lane minimum.
    A,
    /// Speed above the lane maximum.
    B,
    /// Insufficient distance to the vehicle ahead.
    C,
    /// Unsafe left lane.
    D,
    /// Unsafe right lane.
    E,
    /// Lane line occupied for too long.
    F,
    /// Overtaking speed difference too small.
    G,
}

impl Law {
    pub const ALL: [Law; 7] = [Law::A, Law::B, Law::C, Law::D, Law::E, Law::F, Law::G];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        (b'a' + self as u8) as char
    }

    pub fn from_letter(c: char) -> Option<Law> {
        match c.to_ascii_lowercase() {
            'a' => Some(Law::A),
            'b' => Some(Law::B),
            'c' => Some(Law::C),
            'd' => Some(Law::D),
            'e' => Some(Law::E),
            'f' => Some(Law::F),
            'g' => Some(Law::G),
            _ => None,
        }
    }

    /// Whether the law only applies under a lane-change or overtaking trigger.
    pub fn is_triggered(self) -> bool {
        matches!(self, Law::D | Law::E | Law::F | Law::G)
    }
}

impl fmt::Display for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// Set of laws, serialized as a string of letters such as `"acd"`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LawSet(u8);

impl LawSet {
    pub const EMPTY: LawSet = LawSet(0);

    pub fn new() -> Self {
        Self(0)
    }

    pub fn insert(&mut self, law: Law) {
        self.0 |= 1 << law.index();
    }

    pub fn remove(&mut self, law: Law) {
        self.0 &= !(1 << law.index());
    }

    pub fn set(&mut self, law: Law, on: bool) {
        if on {
            self.insert(law)
        } else {
            self.remove(law)
        }
    }

    pub fn contains(&self, law: Law) -> bool {
        self.0 & (1 << law.index()) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(self, other: LawSet) -> LawSet {
        LawSet(self.0 | other.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = Law> + '_ {
        Law::ALL.into_iter().filter(|l| self.contains(*l))
    }
}

impl FromIterator<Law> for LawSet {
    fn from_iter<I: IntoIterator<Item = Law>>(iter: I) -> Self {
        let mut set = LawSet::new();
        for law in iter {
            set.insert(law);
        }
        set
    }
}

impl fmt::Display for LawSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for law in self.iter() {
            write!(f, "{law}")?;
        }
        Ok(())
    }
}

impl Serialize for LawSet {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LawSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.chars()
            .map(|c| Law::from_letter(c).ok_or_else(|| serde::de::Error::custom(format!("unknown law '{c}'"))))
            .collect()
    }
}

/// Per-law state of the violation state machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Phase {
    Violation,
    /// The vehicle is compliant but the planner's reference would violate again.
    DecisionViolation,
    #[default]
    Compliance,
}
