//! Versioned decimal-text dump of the actor-critic parameters.
//!
//! ```text
//! saferl-checkpoint v1
//! meta env goal
//! head categorical 5
//! obs_dim 29
//! hidden 64 64
//! tensor actor.0.weight 29 64
//! <row-major values, space separated>
//! ...
//! end
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::policy::mlp::Mlp;
use crate::policy::network::{MlpParams, PolicyHead};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &str = "saferl-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    /// Free-form run metadata (environment id, seed, ...). Keys and values
    /// must not contain whitespace or newlines.
    pub meta: BTreeMap<String, String>,
}

fn join(values: impl Iterator<Item = f64>) -> String {
    values.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn tensors(params: &MlpParams) -> Vec<(String, Vec<usize>, Vec<f64>)> {
    let mut out = Vec::new();
    for (name, mlp) in [("actor", &params.actor), ("critic", &params.critic)] {
        for (i, l) in mlp.layers.iter().enumerate() {
            let (r, c) = l.weight.dim();
            out.push((format!("{name}.{i}.weight"), vec![r, c], l.weight.iter().copied().collect()));
            out.push((format!("{name}.{i}.bias"), vec![c], l.bias.to_vec()));
        }
    }
    if !params.log_std.is_empty() {
        out.push(("log_std".into(), vec![params.log_std.len()], params.log_std.to_vec()));
    }
    out
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let p = &checkpoint.params;
    let mut text = format!("{MAGIC} v{CHECKPOINT_VERSION}\n");
    for (k, v) in &checkpoint.meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::InvalidArgument(format!("unsupported checkpoint metadata key {k:?}")));
        }
        text.push_str(&format!("meta {k} {v}\n"));
    }
    match p.head {
        PolicyHead::Categorical { actions } => text.push_str(&format!("head categorical {actions}\n")),
        PolicyHead::Gaussian { dim } => text.push_str(&format!("head gaussian {dim}\n")),
    }
    text.push_str(&format!("obs_dim {}\n", p.obs_dim));
    let hidden: Vec<String> = p.hidden_sizes().iter().map(|h| h.to_string()).collect();
    text.push_str(&format!("hidden {}\n", hidden.join(" ")));
    for (name, shape, values) in tensors(p) {
        let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
        text.push_str(&format!("tensor {name} {}\n{}\n", dims.join(" "), join(values.into_iter())));
    }
    text.push_str("end\n");

    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn parse_usize(s: &str, line: usize) -> Result<usize> {
    s.parse().map_err(|_| Error::parse(line, format!("expected an integer, found {s:?}")))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "empty checkpoint"))?;
    if first != format!("{MAGIC} v{CHECKPOINT_VERSION}") {
        return Err(Error::parse(1, format!("unsupported checkpoint header {first:?}")));
    }
    let mut meta = BTreeMap::new();
    let mut head = None;
    let mut obs_dim = None;
    let mut hidden = None;
    let mut values: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    let mut ended = false;
    while let Some((n, line)) = lines.next() {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("meta") => {
                let k = parts.next().ok_or_else(|| Error::parse(n, "meta without key"))?;
                let v = line.splitn(3, ' ').nth(2).unwrap_or("");
                meta.insert(k.to_string(), v.to_string());
            }
            Some("head") => {
                let kind = parts.next();
                let width = parse_usize(parts.next().unwrap_or(""), n)?;
                head = Some(match kind {
                    Some("categorical") => PolicyHead::Categorical { actions: width },
                    Some("gaussian") => PolicyHead::Gaussian { dim: width },
                    other => return Err(Error::parse(n, format!("unknown head {other:?}"))),
                });
            }
            Some("obs_dim") => obs_dim = Some(parse_usize(parts.next().unwrap_or(""), n)?),
            Some("hidden") => hidden = Some(parts.map(|s| parse_usize(s, n)).collect::<Result<Vec<_>>>()?),
            Some("tensor") => {
                let name = parts.next().ok_or_else(|| Error::parse(n, "tensor without name"))?;
                let shape = parts.map(|s| parse_usize(s, n)).collect::<Result<Vec<_>>>()?;
                let (vn, vline) = lines.next().ok_or_else(|| Error::parse(n, "tensor values missing"))?;
                let data = vline
                    .split_whitespace()
                    .map(|s| s.parse::<f64>().map_err(|_| Error::parse(vn, format!("bad number {s:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                if data.len() != shape.iter().product::<usize>() {
                    return Err(Error::parse(vn, format!("tensor {name} has {} values for shape {shape:?}", data.len())));
                }
                values.insert(name.to_string(), (shape, data));
            }
            Some("end") => {
                ended = true;
                break;
            }
            None => {}
            Some(other) => return Err(Error::parse(n, format!("unknown record {other:?}"))),
        }
    }
    if !ended {
        return Err(Error::parse(text.lines().count(), "checkpoint truncated (no end marker)"));
    }
    let missing = |what: &str| Error::Config(format!("checkpoint lacks {what}"));
    let head = head.ok_or_else(|| missing("head"))?;
    let obs_dim = obs_dim.ok_or_else(|| missing("obs_dim"))?;
    let hidden = hidden.ok_or_else(|| missing("hidden"))?;
    let mut params = MlpParams::zeros(obs_dim, head, &hidden);

    let mut fill = |name: &str, mlp: &mut Mlp| -> Result<()> {
        for (i, l) in mlp.layers.iter_mut().enumerate() {
            let (shape, w) = values.remove(&format!("{name}.{i}.weight")).ok_or_else(|| missing(name))?;
            if shape != [l.weight.nrows(), l.weight.ncols()] {
                return Err(Error::Config(format!("{name}.{i}.weight has shape {shape:?}")));
            }
            l.weight = Array2::from_shape_vec(l.weight.dim(), w).expect("checked shape");
            let (shape, b) = values.remove(&format!("{name}.{i}.bias")).ok_or_else(|| missing(name))?;
            if shape != [l.bias.len()] {
                return Err(Error::Config(format!("{name}.{i}.bias has shape {shape:?}")));
            }
            l.bias = Array1::from(b);
        }
        Ok(())
    };
    fill("actor", &mut params.actor)?;
    fill("critic", &mut params.critic)?;
    if let PolicyHead::Gaussian { dim } = head {
        let (shape, s) = values.remove("log_std").ok_or_else(|| missing("log_std"))?;
        if shape != [dim] {
            return Err(Error::Config(format!("log_std has shape {shape:?}")));
        }
        params.log_std = Array1::from(s);
    }
    if let Some(extra) = values.keys().next() {
        return Err(Error::Config(format!("unexpected tensor {extra}")));
    }
    if !params.all_finite() {
        return Err(Error::Numerical("checkpoint holds non-finite parameters".into()));
    }
    Ok(Checkpoint { params, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for head in [PolicyHead::Categorical { actions: 5 }, PolicyHead::Gaussian { dim: 2 }] {
            let params = MlpParams::new(7, head, &[9, 4], 3);
            let mut meta = BTreeMap::new();
            meta.insert("env".to_string(), "goal".to_string());
            let ck = Checkpoint { params, meta };
            let path = dir.path().join("ck.txt");
            save_checkpoint(&path, &ck).unwrap();
            assert_eq!(load_checkpoint(&path).unwrap(), ck);
        }
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        let ck = Checkpoint {
            params: MlpParams::new(3, PolicyHead::Categorical { actions: 2 }, &[4, 4], 0),
            meta: BTreeMap::new(),
        };
        save_checkpoint(&path, &ck).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("end\n", "")).unwrap();
        assert!(load_checkpoint(&path).is_err());
        fs::write(&path, "something else\n").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
