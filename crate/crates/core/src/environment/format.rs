//! Line-based text format for environments.
//!
//! ```text
//! env v=1 model=percolation d=2 L=16 seed=1 params=p=0.7 root=137
//! v 0 -16 -16
//! e 0 1 1.0000000000000000e0
//! ```
//! Reversible environments list each undirected edge once (`e i j w`, i ≤ j);
//! general chains list arcs (`a i j p`).

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{EnvError, EnvMeta, EnvironmentBuilder, RootedEnvironment, VertexId};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid environment: {0}")]
    Invalid(#[from] EnvError),
}

pub fn serialize(env: &RootedEnvironment) -> String {
    let meta = env.meta();
    let params: Vec<String> = meta.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut out = String::new();
    writeln!(
        out,
        "env v=1 model={} d={} L={} seed={} params={} root={}",
        meta.model,
        meta.dim,
        meta.radius,
        meta.seed,
        params.join(","),
        env.root()
    )
    .unwrap();
    for x in 0..env.len() as VertexId {
        write!(out, "v {x}").unwrap();
        if let Some(c) = env.coords(x) {
            for v in c {
                write!(out, " {v}").unwrap();
            }
        }
        out.push('\n');
    }
    if env.is_reversible() {
        for x in 0..env.len() as VertexId {
            for (y, w) in env.weighted_arcs(x) {
                if x <= y {
                    writeln!(out, "e {x} {y} {w:.16e}").unwrap();
                }
            }
        }
    } else {
        for x in 0..env.len() as VertexId {
            for (y, p) in env.arcs(x) {
                writeln!(out, "a {x} {y} {p:.16e}").unwrap();
            }
        }
    }
    out
}

/// Short hex digest of the serialized form.
pub fn env_hash(env: &RootedEnvironment) -> String {
    let digest = Sha256::digest(serialize(env).as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_to_path(env: &RootedEnvironment, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, serialize(env))?;
    Ok(())
}

pub fn read_from_path(path: &Path) -> Result<RootedEnvironment, FormatError> {
    deserialize(&std::fs::read_to_string(path)?)
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T, FormatError> {
    let tok = tok.ok_or_else(|| FormatError::Parse { line, msg: format!("missing {what}") })?;
    tok.parse()
        .map_err(|_| FormatError::Parse { line, msg: format!("bad {what} '{tok}'") })
}

struct Header {
    meta: EnvMeta,
    root: VertexId,
}

fn parse_header(text: &str) -> Result<Header, FormatError> {
    let err = |msg: String| FormatError::Parse { line: 1, msg };
    let mut toks = text.split_whitespace();
    if toks.next() != Some("env") {
        return Err(err("expected 'env' header".into()));
    }
    let mut fields = std::collections::HashMap::new();
    for tok in toks {
        let (k, v) = tok.split_once('=').ok_or_else(|| err(format!("malformed field '{tok}'")))?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| err(format!("missing field {k}")));
    if get("v")? != "1" {
        return Err(err(format!("unsupported version {}", get("v")?)));
    }
    let mut meta = EnvMeta::new(
        get("model")?,
        parse(Some(get("d")?), "d", 1)?,
        parse(Some(get("L")?), "L", 1)?,
        parse(Some(get("seed")?), "seed", 1)?,
    );
    let params = get("params")?;
    if !params.is_empty() {
        for kv in params.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(|| err(format!("malformed param '{kv}'")))?;
            meta.params.push((k.to_string(), v.to_string()));
        }
    }
    Ok(Header { meta, root: parse(Some(get("root")?), "root", 1)? })
}

pub fn deserialize(text: &str) -> Result<RootedEnvironment, FormatError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, first) = lines.next().ok_or(FormatError::Parse { line: 1, msg: "empty file".into() })?;
    let Header { meta, root } = parse_header(first)?;
    let d = meta.dim;
    let mut coords: Vec<i64> = Vec::new();
    let mut has_coords = None;
    let mut n = 0usize;
    let mut entries: Vec<(VertexId, VertexId, f64)> = Vec::new();
    let mut kind = None;
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        let Some(tag) = toks.next() else { continue };
        match tag {
            "v" => {
                let id: usize = parse(toks.next(), "vertex id", ln)?;
                if id != n {
                    return Err(FormatError::Parse { line: ln, msg: format!("expected vertex {n}, got {id}") });
                }
                let c: Vec<i64> = toks.map(|t| parse(Some(t), "coordinate", ln)).collect::<Result<_, _>>()?;
                let present = !c.is_empty();
                if *has_coords.get_or_insert(present) != present || (present && c.len() != d) {
                    return Err(FormatError::Parse { line: ln, msg: "inconsistent coordinates".into() });
                }
                coords.extend(c);
                n += 1;
            }
            "e" | "a" => {
                if *kind.get_or_insert(tag) != tag {
                    return Err(FormatError::Parse { line: ln, msg: "mixed edge and arc lines".into() });
                }
                let i = parse(toks.next(), "source", ln)?;
                let j = parse(toks.next(), "target", ln)?;
                let w = parse(toks.next(), "value", ln)?;
                if toks.next().is_some() {
                    return Err(FormatError::Parse { line: ln, msg: "trailing tokens".into() });
                }
                entries.push((i, j, w));
            }
            other => {
                return Err(FormatError::Parse { line: ln, msg: format!("unknown record '{other}'") });
            }
        }
    }
    let reversible = kind != Some("a");
    let mut b = if reversible {
        EnvironmentBuilder::reversible(meta, n)
    } else {
        EnvironmentBuilder::general(meta, n)
    };
    if has_coords == Some(true) {
        b = b.coords(coords);
    }
    for (i, j, w) in entries {
        if reversible {
            b.edge(i, j, w);
        } else {
            b.arc(i, j, w);
        }
    }
    let env = b.root(root).build()?;
    env.validate()?;
    Ok(env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{gen_balanced, gen_kesten_tree, gen_percolation};

    #[test]
    fn round_trip_is_bit_identical() {
        let env = gen_percolation(2, 16, 0.7, 1).unwrap();
        let back = deserialize(&serialize(&env)).unwrap();
        assert_eq!(env, back);
        assert_eq!(serialize(&back), serialize(&env));
        for x in 0..env.len() as VertexId {
            for ((_, p), (_, q)) in env.arcs(x).zip(back.arcs(x)) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
        }
        let bal = gen_balanced(2, 3, 4).unwrap();
        assert_eq!(bal, deserialize(&serialize(&bal)).unwrap());
        let tree = gen_kesten_tree(&[0.4, 0.3, 0.2, 0.1], 6, 2).unwrap();
        assert_eq!(tree, deserialize(&serialize(&tree)).unwrap());
    }

    #[test]
    fn bad_row_sum_rejected() {
        let text = "env v=1 model=custom d=0 L=0 seed=0 params= root=0\nv 0\nv 1\na 0 1 0.9\na 1 0 1.0\n";
        assert!(matches!(deserialize(text), Err(FormatError::Invalid(EnvError::RowSum { .. }))));
    }

    #[test]
    fn duplicate_coordinates_rejected() {
        let text = "env v=1 model=custom d=1 L=1 seed=0 params= root=0\nv 0 1\nv 1 1\ne 0 1 1.0\n";
        assert!(matches!(
            deserialize(text),
            Err(FormatError::Invalid(EnvError::DuplicateCoordinates { .. }))
        ));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "env v=1 model=custom d=0 L=0 seed=0 params= root=0\nv 0\nv 1\ne 0 x 1.0\n";
        match deserialize(text) {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        match deserialize("graph\n") {
            Err(FormatError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
