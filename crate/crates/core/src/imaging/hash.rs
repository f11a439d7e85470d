use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use super::ImageStack;

/// A SHA-256 digest; displayed and serialized as lowercase hex.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(Self(bytes.try_into().ok()?))
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex characters"))
    }
}

pub fn sha256(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// SHA-256 over a shape descriptor followed by the raw samples.
///
/// Descriptor: frames, height, width, channels as u64 LE, then the bit depth
/// byte. Samples are u8 for 8-bit stacks and u16 LE for 16-bit stacks.
pub fn content_hash(stack: &ImageStack) -> Digest {
    let mut hasher = Sha256::new();
    let first = &stack.frames()[0];
    for dim in [stack.len(), first.height(), first.width(), first.channels()] {
        hasher.update((dim as u64).to_le_bytes());
    }
    hasher.update([first.original_bit_depth()]);
    let mut buf = Vec::with_capacity(first.pixels().len() * 2);
    for frame in stack.frames() {
        buf.clear();
        if frame.original_bit_depth() == 8 {
            buf.extend(frame.raw_samples().map(|v| v as u8));
        } else {
            for v in frame.raw_samples() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        hasher.update(&buf);
    }
    Digest(hasher.finalize().into())
}
