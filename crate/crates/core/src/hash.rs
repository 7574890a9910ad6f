//! Content hashing and the [`SampleId`] newtype built on it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn hash_content(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a value's JSON serialization. Used for config hashes in provenance.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    // serde_json only fails on non-string map keys, which none of our types use.
    let bytes = serde_json::to_vec(value).expect("config types serialize to JSON");
    hash_content(&bytes)
}

/// Identity of a sample: the content hash of its image bytes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SampleId(String);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid sample id {0:?}: expected 64 lowercase hex characters")]
pub struct InvalidSampleId(pub String);

impl SampleId {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        SampleId(hash_content(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SampleId {
    type Error = InvalidSampleId;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        let ok = s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if ok {
            Ok(SampleId(s))
        } else {
            Err(InvalidSampleId(s))
        }
    }
}

impl FromStr for SampleId {
    type Err = InvalidSampleId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SampleId::try_from(s.to_owned())
    }
}

impl From<SampleId> for String {
    fn from(id: SampleId) -> String {
        id.0
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_matches_published_vector() {
        // FIPS 180-2 SHA-256 of the empty message.
        assert_eq!(
            hash_content(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            hash_content(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn deterministic() {
        let data = b"some image bytes";
        assert_eq!(hash_content(data), hash_content(data));
    }

    #[test]
    fn single_byte_changes_digest() {
        let base = vec![7u8; 32];
        let mut digests = vec![hash_content(&base)];
        for pos in 0..base.len() {
            for delta in [1u8, 128] {
                let mut v = base.clone();
                v[pos] = v[pos].wrapping_add(delta);
                digests.push(hash_content(&v));
            }
        }
        let n = digests.len();
        digests.sort();
        digests.dedup();
        assert_eq!(digests.len(), n);
    }

    #[test]
    fn sample_id_validation() {
        assert!(SampleId::from_str(&hash_content(b"x")).is_ok());
        assert!(SampleId::from_str("abc").is_err());
        assert!(SampleId::from_str(&hash_content(b"x").to_uppercase()).is_err());
    }
}
