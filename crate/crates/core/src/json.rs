//! JSON documents (architectures, plans, reports) with strict or lenient
//! handling of unknown fields.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{bail, Error, Result};

/// Pretty-printed, newline-terminated JSON.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

fn unknown_keys(input: &Value, known: &Value, path: &str, out: &mut Vec<String>) {
    match (input, known) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in a {
                let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get(k) {
                    Some(kv) => unknown_keys(v, kv, &p, out),
                    None => out.push(p),
                }
            }
        }
        (Value::Array(a), Value::Array(b)) => {
            for (i, (x, y)) in a.iter().zip(b).enumerate() {
                unknown_keys(x, y, &format!("{path}[{i}]"), out);
            }
        }
        _ => {}
    }
}

/// Parses `text` as `T`. Fields the schema does not know are an error when
/// `strict`, otherwise they are dropped and reported as warnings.
pub fn from_json_str<T: Serialize + DeserializeOwned>(text: &str, strict: bool) -> Result<(T, Vec<String>)> {
    let raw: Value =
        serde_json::from_str(text).map_err(|e| Error::Data(format!("invalid JSON: {e}")))?;
    let value: T = serde_json::from_value(raw.clone())
        .map_err(|e| Error::Data(format!("JSON does not match schema: {e}")))?;
    let known = serde_json::to_value(&value)
        .map_err(|e| Error::Internal(format!("serialization failed: {e}")))?;
    let mut extra = Vec::new();
    unknown_keys(&raw, &known, "", &mut extra);
    if strict && !extra.is_empty() {
        bail!(Data, "unknown field(s): {}", extra.join(", "));
    }
    let warnings = extra.into_iter().map(|k| format!("ignoring unknown field {k:?}")).collect();
    Ok((value, warnings))
}

pub fn read_json<T: Serialize + DeserializeOwned>(
    path: impl AsRef<Path>,
    strict: bool,
) -> Result<(T, Vec<String>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json_str(&text, strict).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_resnet, ArchDescriptor};

    #[test]
    fn arch_round_trip() {
        let arch = build_resnet(18, 64).unwrap();
        let s = to_json_string(&arch).unwrap();
        assert!(s.ends_with("}\n"));
        let (back, warn): (ArchDescriptor, _) = from_json_str(&s, true).unwrap();
        assert_eq!(back, arch);
        assert!(warn.is_empty());
        assert_eq!(to_json_string(&back).unwrap(), s);
    }

    #[test]
    fn unknown_fields_strict_vs_lenient() {
        let arch = build_resnet(18, 64).unwrap();
        let mut v = serde_json::to_value(&arch).unwrap();
        v["extra"] = Value::from(1);
        v["layers"][3]["colour"] = Value::from("red");
        let s = v.to_string();
        let e = from_json_str::<ArchDescriptor>(&s, true).unwrap_err();
        assert!(matches!(e, Error::Data(_)));
        assert!(e.to_string().contains("layers[3].colour"), "{e}");
        let (back, warn) = from_json_str::<ArchDescriptor>(&s, false).unwrap();
        assert_eq!(back, arch);
        assert_eq!(warn.len(), 2);
    }

    #[test]
    fn malformed_json_is_data_error() {
        assert!(matches!(
            from_json_str::<ArchDescriptor>("{not json", false),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            from_json_str::<ArchDescriptor>("{\"name\": 3}", false),
            Err(Error::Data(_))
        ));
    }
}
