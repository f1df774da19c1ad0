use std::fs;
use std::io::{Read, Write};
use std::path::{Component, Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{AsdError, Result};

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn str_salt(s: &str) -> u64 {
    let digest = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub(crate) fn rng_for(seed: u64, salts: &[u64]) -> ChaCha8Rng {
    let s = salts.iter().fold(seed, |acc, &salt| mix_seed(acc, salt));
    ChaCha8Rng::seed_from_u64(s)
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AsdError::json(path.display().to_string(), e))?;
    text.push('\n');
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| AsdError::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| AsdError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| AsdError::json(path.display().to_string(), e))
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| AsdError::io(parent, e))?;
        }
    }
    Ok(())
}

/// Lexical relative path from `base` to `path`. Both must be absolute or both relative.
pub(crate) fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let p: Vec<Component> = path.components().collect();
    let b: Vec<Component> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &p[common..] {
        out.push(c.as_os_str());
    }
    out
}

pub(crate) fn absolute(path: &Path) -> Result<PathBuf> {
    if path.is_absolute() {
        Ok(path.to_path_buf())
    } else {
        let cwd = std::env::current_dir().map_err(|e| AsdError::io(".", e))?;
        Ok(normalize(&cwd.join(path)))
    }
}

pub(crate) fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                let nothing_to_pop = matches!(out.components().next_back(), None | Some(Component::ParentDir));
                if nothing_to_pop && !out.has_root() {
                    out.push("..");
                } else {
                    out.pop();
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

// Framed binary artifact: 8-byte magic, u32 header length, JSON header, f64 LE payload.

pub(crate) fn write_framed<H: Serialize>(
    path: &Path,
    magic: &[u8; 8],
    header: &H,
    payload: &[f64],
) -> Result<()> {
    let header = serde_json::to_vec(header).map_err(|e| AsdError::json("artifact header", e))?;
    let mut buf = Vec::with_capacity(12 + header.len() + payload.len() * 8);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    ensure_parent(path)?;
    let mut f = fs::File::create(path).map_err(|e| AsdError::io(path, e))?;
    f.write_all(&buf).map_err(|e| AsdError::io(path, e))
}

pub(crate) fn read_framed<H: DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(H, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AsdError::io(path, e))?;
    let corrupt = |reason: &str| AsdError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != magic {
        return Err(corrupt("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen || (bytes.len() - 12 - hlen) % 8 != 0 {
        return Err(corrupt("truncated"));
    }
    let header: H = serde_json::from_slice(&bytes[12..12 + hlen])
        .map_err(|e| AsdError::json(path.display().to_string(), e))?;
    let payload = bytes[12 + hlen..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, payload))
}
