//! Field-by-field diff of two summary reports. Numeric fields print relative
//! differences; a boolean field changing anywhere is a verdict flip and makes
//! the exit code 1. Reports with different shapes or schema versions do not
//! compare (exit 2).

use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::CompareArgs;

struct NumDiff {
    path: String,
    a: f64,
    b: f64,
    rel: f64,
}

struct Flip {
    path: String,
    a: Value,
    b: Value,
}

fn load(path: &Path) -> Result<Value, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{} is not JSON: {e}", path.display()))
}

fn walk(
    path: &str,
    a: &Value,
    b: &Value,
    diffs: &mut Vec<NumDiff>,
    flips: &mut Vec<Flip>,
) -> Result<(), String> {
    match (a, b) {
        (Value::Object(oa), Value::Object(ob)) => {
            for key in ob.keys() {
                if !oa.contains_key(key) {
                    return Err(format!(
                        "shape mismatch at {path}.{key}: field present in only one report"
                    ));
                }
            }
            for (key, va) in oa {
                let sub = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                let Some(vb) = ob.get(key) else {
                    return Err(format!(
                        "shape mismatch at {sub}: field present in only one report"
                    ));
                };
                walk(&sub, va, vb, diffs, flips)?;
            }
        }
        (Value::Array(xa), Value::Array(xb)) => {
            if xa.len() != xb.len() {
                return Err(format!(
                    "shape mismatch at {path}: array lengths {} vs {}",
                    xa.len(),
                    xb.len()
                ));
            }
            for (i, (va, vb)) in xa.iter().zip(xb).enumerate() {
                walk(&format!("{path}[{i}]"), va, vb, diffs, flips)?;
            }
        }
        (Value::Number(na), Value::Number(nb)) => {
            if na != nb {
                let (x, y) = (na.as_f64().unwrap_or(f64::NAN), nb.as_f64().unwrap_or(f64::NAN));
                let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-300);
                diffs.push(NumDiff {
                    path: path.to_string(),
                    a: x,
                    b: y,
                    rel,
                });
            }
        }
        (Value::Bool(ba), Value::Bool(bb)) => {
            if ba != bb {
                flips.push(Flip {
                    path: path.to_string(),
                    a: a.clone(),
                    b: b.clone(),
                });
            }
        }
        (Value::String(sa), Value::String(sb)) => {
            if sa != sb {
                // label changes (method names, model names) are reported like
                // numeric diffs but carry no magnitude
                diffs.push(NumDiff {
                    path: format!("{path} ({sa:?} vs {sb:?})"),
                    a: f64::NAN,
                    b: f64::NAN,
                    rel: 0.0,
                });
            }
        }
        (Value::Null, Value::Null) => {}
        _ => {
            return Err(format!(
                "shape mismatch at {path}: value kinds differ"
            ))
        }
    }
    Ok(())
}

pub fn compare(args: CompareArgs) -> Result<u8, String> {
    let a = load(&args.a)?;
    let b = load(&args.b)?;
    let (va, vb) = (a.get("schema_version"), b.get("schema_version"));
    if va.is_none() || va != vb {
        return Err(format!(
            "schema versions do not match: {} vs {}",
            va.map(|v| v.to_string()).unwrap_or_else(|| "missing".into()),
            vb.map(|v| v.to_string()).unwrap_or_else(|| "missing".into()),
        ));
    }

    let mut diffs = Vec::new();
    let mut flips = Vec::new();
    walk("", &a, &b, &mut diffs, &mut flips)?;

    for flip in &flips {
        println!("verdict flip {}: {} -> {}", flip.path, flip.a, flip.b);
    }
    const CAP: usize = 200;
    for d in diffs.iter().take(CAP) {
        if d.a.is_nan() && d.b.is_nan() {
            println!("diff {}", d.path);
        } else {
            println!("diff {}: {} vs {} (rel {:.3e})", d.path, d.a, d.b, d.rel);
        }
    }
    if diffs.len() > CAP {
        println!("... and {} more diffs", diffs.len() - CAP);
    }

    if !flips.is_empty() {
        println!("{} verdict flips, {} value diffs", flips.len(), diffs.len());
        return Ok(1);
    }
    if diffs.is_empty() {
        println!("reports identical");
    } else {
        let max = diffs.iter().map(|d| d.rel).fold(0.0f64, f64::max);
        println!(
            "no verdict flips, {} value diffs, max relative difference {:.3e}",
            diffs.len(),
            max
        );
    }
    Ok(0)
}
