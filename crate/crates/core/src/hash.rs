use serde::Serialize;
use sha2::{Digest, Sha256};

/// Short stable hash of a serializable configuration (first 16 hex digits of
/// SHA-256 over its JSON form).
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("configuration serializes to JSON");
    let digest = Sha256::digest(json.as_bytes());
    hex::encode(&digest[..8])
}
