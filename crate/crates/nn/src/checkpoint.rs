//! Text checkpoint format.
//!
//! ```text
//! stdn-checkpoint 1
//! <name> <rank> <dim>...
//! <value> <value> ...
//! ```
//!
//! One header line, then two lines per parameter in store order: name, rank
//! and dimensions, followed by the row-major values in shortest round-trip
//! decimal form. Files are written to a temporary sibling and renamed.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{NnError, ParamStore, Result, Tensor};

const MAGIC: &str = "stdn-checkpoint 1";

pub fn to_string(store: &ParamStore) -> String {
    let mut out = String::from(MAGIC);
    out.push('\n');
    for (name, t) in store.iter() {
        write!(out, "{name} {}", t.shape().len()).unwrap();
        for d in t.shape() {
            write!(out, " {d}").unwrap();
        }
        out.push('\n');
        let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
    }
    out
}

pub fn from_str(text: &str) -> Result<ParamStore> {
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(NnError::Format("missing checkpoint header".into()));
    }
    let mut store = ParamStore::new();
    while let Some(head) = lines.next() {
        if head.is_empty() {
            continue;
        }
        let mut parts = head.split_whitespace();
        let name = parts.next().ok_or_else(|| NnError::Format("empty parameter header".into()))?;
        let nums: Vec<usize> = parts
            .map(|p| p.parse().map_err(|_| NnError::Format(format!("bad dimension {p:?} for {name}"))))
            .collect::<Result<_>>()?;
        let Some((&rank, dims)) = nums.split_first() else {
            return Err(NnError::Format(format!("parameter {name} has no rank")));
        };
        if dims.len() != rank {
            return Err(NnError::Format(format!("parameter {name} declares rank {rank} with {} dims", dims.len())));
        }
        let body = lines.next().ok_or_else(|| NnError::Format(format!("parameter {name} has no values")))?;
        let data: Vec<f64> = body
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| NnError::Format(format!("bad value {v:?} in {name}"))))
            .collect::<Result<_>>()?;
        let t = Tensor::new(dims, data).map_err(|e| NnError::Format(format!("{name}: {e}")))?;
        store.add(name, t).map_err(|e| NnError::Format(e.to_string()))?;
    }
    Ok(store)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let io = |e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    fs::write(&tmp, to_string(store)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let text = fs::read_to_string(path).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    from_str(&text)
}

/// Copies values from `saved` into `store`; names and shapes must match exactly.
pub fn restore(store: &mut ParamStore, saved: &ParamStore) -> Result<()> {
    if store.len() != saved.len() {
        return Err(NnError::Format(format!(
            "checkpoint has {} parameters, model expects {}",
            saved.len(),
            store.len()
        )));
    }
    for id in 0..store.len() {
        if store.name(id) != saved.name(id) || store.get(id).shape() != saved.get(id).shape() {
            return Err(NnError::Format(format!(
                "checkpoint parameter {} {:?} does not match {} {:?}",
                saved.name(id),
                saved.get(id).shape(),
                store.name(id),
                store.get(id).shape()
            )));
        }
        *store.get_mut(id) = saved.get(id).clone();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::new(&[2, 2], vec![0.1, -1e-300, 3.0, f64::MAX]).unwrap()).unwrap();
        store.add("b", Tensor::scalar(1.0 / 3.0)).unwrap();
        let back = from_str(&to_string(&store)).unwrap();
        assert_eq!(back, store);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&store, &path).unwrap();
        assert_eq!(load(&path).unwrap(), store);
        assert!(from_str("nope").is_err());
    }
}
