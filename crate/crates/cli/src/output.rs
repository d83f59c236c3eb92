//! Deterministic file writers. CSV cells use 12 significant digits and start
//! with `#` comment lines carrying the config echo; JSON objects are built
//! from `serde_json::Value`, whose maps keep keys sorted.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;
use zeno::io::sig12;

pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// `# key: value` lines followed by the table.
pub fn csv_text(comments: &[(&str, String)], table: &Table) -> String {
    let mut out = String::new();
    for (k, v) in comments {
        out.push_str(&format!("# {k}: {v}\n"));
    }
    out.push_str(&table.header.join(","));
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(|x| sig12(*x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn json_text(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("values serialize");
    s.push('\n');
    s
}

pub fn write(dir: &Path, name: &str, contents: &str) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path)?;
    f.write_all(contents.as_bytes())?;
    Ok(path)
}

pub fn compact(value: &Value) -> String {
    serde_json::to_string(value).expect("values serialize")
}
