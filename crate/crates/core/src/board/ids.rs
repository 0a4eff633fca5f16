use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::{Reader, WireError, Writer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Mix,
    RoutingEntity,
    Auditor,
    User,
}

impl Role {
    pub fn to_byte(self) -> u8 {
        match self {
            Role::Mix => 1,
            Role::RoutingEntity => 2,
            Role::Auditor => 3,
            Role::User => 4,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            1 => Role::Mix,
            2 => Role::RoutingEntity,
            3 => Role::Auditor,
            4 => Role::User,
            _ => return None,
        })
    }

    fn prefix(self) -> &'static str {
        match self {
            Role::Mix => "mix",
            Role::RoutingEntity => "re",
            Role::Auditor => "as",
            Role::User => "user",
        }
    }
}

/// A party in the protocol: role plus an index unique within the role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ServerId {
    pub role: Role,
    pub index: u32,
}

impl ServerId {
    pub const fn mix(index: u32) -> Self {
        Self { role: Role::Mix, index }
    }

    pub const fn routing_entity(index: u32) -> Self {
        Self {
            role: Role::RoutingEntity,
            index,
        }
    }

    pub const fn auditor(index: u32) -> Self {
        Self {
            role: Role::Auditor,
            index,
        }
    }

    pub const fn user(index: u32) -> Self {
        Self {
            role: Role::User,
            index,
        }
    }

    pub fn write(&self, w: &mut Writer) {
        w.u8(self.role.to_byte()).u32(self.index);
    }

    pub fn read(r: &mut Reader<'_>) -> Result<Self, WireError> {
        let role = Role::from_byte(r.u8("role")?).ok_or(WireError::Invalid("role"))?;
        Ok(Self {
            role,
            index: r.u32("server index")?,
        })
    }
}

impl fmt::Display for ServerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.role.prefix(), self.index)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid server id {0:?}, expected e.g. mix-3, re-1, as-2")]
pub struct ParseIdError(pub String);

impl FromStr for ServerId {
    type Err = ParseIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseIdError(s.to_string());
        let (prefix, index) = s.rsplit_once('-').ok_or_else(err)?;
        let role = [Role::Mix, Role::RoutingEntity, Role::Auditor, Role::User]
            .into_iter()
            .find(|r| r.prefix() == prefix)
            .ok_or_else(err)?;
        let index = index.parse().map_err(|_| err())?;
        Ok(Self { role, index })
    }
}

impl Serialize for ServerId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ServerId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EntryKind {
    PublicKey,
    InputCiphertexts,
    OutputCiphertexts,
    ShuffleProof,
    RandCommitment,
    RandOpening,
    VerificationFailure,
    Reassignment,
}

impl EntryKind {
    pub const ALL: [EntryKind; 8] = [
        EntryKind::PublicKey,
        EntryKind::InputCiphertexts,
        EntryKind::OutputCiphertexts,
        EntryKind::ShuffleProof,
        EntryKind::RandCommitment,
        EntryKind::RandOpening,
        EntryKind::VerificationFailure,
        EntryKind::Reassignment,
    ];

    pub fn to_byte(self) -> u8 {
        Self::ALL.iter().position(|k| *k == self).expect("listed") as u8 + 1
    }
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_text_round_trip() {
        for id in [
            ServerId::mix(3),
            ServerId::routing_entity(0),
            ServerId::auditor(12),
            ServerId::user(4),
        ] {
            assert_eq!(id.to_string().parse::<ServerId>().unwrap(), id);
        }
        assert_eq!(ServerId::routing_entity(2).to_string(), "re-2");
        assert!("mixer-1".parse::<ServerId>().is_err());
        assert!("mix-x".parse::<ServerId>().is_err());
    }

    #[test]
    fn id_binary_round_trip() {
        let mut w = Writer::new();
        ServerId::auditor(7).write(&mut w);
        let bytes = w.finish();
        let mut r = Reader::new(&bytes);
        assert_eq!(ServerId::read(&mut r).unwrap(), ServerId::auditor(7));
    }

    #[test]
    fn kind_bytes_are_distinct() {
        let bytes: Vec<u8> = EntryKind::ALL.iter().map(|k| k.to_byte()).collect();
        assert_eq!(bytes, (1..=8).collect::<Vec<u8>>());
    }
}
