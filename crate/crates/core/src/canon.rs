//! Canonical structured-text encoding shared by map files, scenario files,
//! session headers, event streams and the wire protocol.
//!
//! The encoding is JSON with three extra rules: object keys are emitted in
//! sorted order, every real number is written with exactly six decimals,
//! and integers are written verbatim. Two values that compare equal after
//! quantization to 1e-6 therefore serialize to identical bytes, which is
//! what the content digests rely on.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

/// Round a real to the six-decimal grid used by every persisted format.
///
/// The result re-parses bit-exactly from its `{:.6}` rendering.
pub fn quantize(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let q = (x * 1e6).round() / 1e6;
    if q == 0.0 {
        // keep the sign so "-0.000000" round-trips
        if x.is_sign_negative() {
            -0.0
        } else {
            0.0
        }
    } else {
        q
    }
}

/// Fixed six-decimal rendering of a real.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.6}")
}

/// Serialize any value into canonical compact form (single line).
pub fn to_line<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, None, 0);
    Ok(out)
}

/// Serialize any value into canonical pretty form (two-space indent,
/// trailing newline). This is the on-disk form of map and scenario files.
pub fn to_pretty<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, Some(2), 0);
    out.push('\n');
    Ok(out)
}

/// Canonical compact rendering of an already-built `Value`.
pub fn value_to_line(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, None, 0);
    out
}

/// 64-bit content digest: the first eight bytes of SHA-256 over the bytes,
/// rendered as 16 lowercase hex digits.
pub fn digest64(bytes: &[u8]) -> String {
    let full = Sha256::digest(bytes);
    let mut s = String::with_capacity(16);
    for b in &full[..8] {
        let _ = write!(s, "{b:02x}");
    }
    s
}

/// Stable 64-bit hash of a string, used to split seeds per vehicle.
pub fn hash64(text: &str) -> u64 {
    let full = Sha256::digest(text.as_bytes());
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&full[..8]);
    u64::from_le_bytes(buf)
}

fn write_value(out: &mut String, v: &Value, indent: Option<usize>, depth: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_u64() {
                let _ = write!(out, "{i}");
            } else if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else {
                let f = n.as_f64().unwrap_or(f64::NAN);
                out.push_str(&fmt_real(f));
            }
        }
        Value::String(s) => {
            // serde_json's string escaping is already canonical
            out.push_str(&serde_json::to_string(s).unwrap_or_default());
        }
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, indent, depth + 1);
                write_value(out, item, indent, depth + 1);
            }
            newline(out, indent, depth);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(out, indent, depth + 1);
                out.push_str(&serde_json::to_string(k).unwrap_or_default());
                out.push(':');
                if indent.is_some() {
                    out.push(' ');
                }
                write_value(out, &map[k.as_str()], indent, depth + 1);
            }
            newline(out, indent, depth);
            out.push('}');
        }
    }
}

fn newline(out: &mut String, indent: Option<usize>, depth: usize) {
    if let Some(w) = indent {
        out.push('\n');
        for _ in 0..w * depth {
            out.push(' ');
        }
    }
}
