//! Shared framing for the binary formats:
//! magic, u32 LE version, u64 LE header length, JSON header, body.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::FormatError;

pub(crate) fn encode<H: Serialize>(magic: &[u8], version: u32, header: &H, body: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("headers serialize to JSON");
    let mut out = Vec::with_capacity(magic.len() + 12 + header.len() + body.len());
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(body);
    out
}

fn take(bytes: &[u8], at: usize, len: u64) -> Result<&[u8], FormatError> {
    let available = bytes.len().saturating_sub(at) as u64;
    if len > available {
        return Err(FormatError::Truncated { needed: at as u64 + len, available: bytes.len() as u64 });
    }
    Ok(&bytes[at..at + len as usize])
}

/// Splits a framed file into its parsed header and body.
pub(crate) fn decode<'a, H: DeserializeOwned>(
    bytes: &'a [u8],
    magic: &'static [u8],
    version: u32,
) -> Result<(H, &'a [u8]), FormatError> {
    let expected = std::str::from_utf8(magic).unwrap_or("?");
    if bytes.len() < magic.len() {
        return if magic.starts_with(bytes) {
            Err(FormatError::Truncated { needed: magic.len() as u64, available: bytes.len() as u64 })
        } else {
            Err(FormatError::BadMagic { expected })
        };
    }
    if &bytes[..magic.len()] != magic {
        return Err(FormatError::BadMagic { expected });
    }
    let mut at = magic.len();
    let found = u32::from_le_bytes(take(bytes, at, 4)?.try_into().unwrap());
    at += 4;
    if found != version {
        return Err(FormatError::Version { found, expected: version });
    }
    let header_len = u64::from_le_bytes(take(bytes, at, 8)?.try_into().unwrap());
    at += 8;
    let header_bytes = take(bytes, at, header_len)?;
    at += header_len as usize;
    let header = serde_json::from_slice(header_bytes).map_err(|e| FormatError::Header(e.to_string()))?;
    Ok((header, &bytes[at..]))
}

/// Checks that `body` holds exactly `expected` bytes.
pub(crate) fn check_body_len(body: &[u8], expected: u64, prefix: u64) -> Result<(), FormatError> {
    let found = body.len() as u64;
    if found < expected {
        Err(FormatError::Truncated { needed: prefix + expected, available: prefix + found })
    } else if found > expected {
        Err(FormatError::TrailingBytes(found - expected))
    } else {
        Ok(())
    }
}
