//! Small file helpers shared by the artifact readers and writers.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes through a sibling temp file so a failed stage never leaves a
/// half-written artifact under the final name.
pub(crate) fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Scientific notation with nine significant digits.
pub(crate) fn fmt_sig9(x: f64) -> String {
    format!("{x:.8e}")
}

pub(crate) fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| Error::parse(path, line, format!("`{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("`{field}` is not finite")));
    }
    Ok(v)
}

/// Reads a CSV whose first column is an id and the rest are reals,
/// as written by [`write_id_matrix_csv`].
pub(crate) fn read_id_matrix_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let width = match lines.next() {
        Some((_, header)) => header.split(',').count(),
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::parse(
                path,
                i + 1,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        ids.push(fields[0].to_string());
        rows.push(
            fields[1..]
                .iter()
                .map(|f| parse_f64(path, i + 1, f))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((ids, rows))
}

pub(crate) fn write_id_matrix_csv(
    path: &Path,
    column_prefix: &str,
    width: usize,
    rows: impl IntoIterator<Item = (String, Vec<f64>)>,
) -> Result<()> {
    let mut out = String::from("id");
    for i in 0..width {
        out.push_str(&format!(",{column_prefix}{i}"));
    }
    out.push('\n');
    for (id, row) in rows {
        check_id(&id, &[',', '\n', '\r'])?;
        out.push_str(&id);
        for v in row {
            out.push(',');
            out.push_str(&fmt_sig9(v));
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub(crate) fn check_id(id: &str, forbidden: &[char]) -> Result<()> {
    if id.contains(forbidden) {
        return Err(Error::Config(format!(
            "identifier {id:?} contains a character reserved by the artifact format"
        )));
    }
    Ok(())
}
