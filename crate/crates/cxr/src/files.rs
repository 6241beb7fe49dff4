//! Reading and writing the text formats: TOML configs, JSON documents and
//! JSON-lines tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cxr_core::atlas::{Atlas, LocationLabel, NormalizedBox};
use cxr_core::nn::Checkpoint;
use cxr_core::report::{Lexicon, LexiconSpec};
use cxr_core::synth::ReportTemplates;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_toml<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::format(origin, e))
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_toml(&read_text(path)?, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::JsonLine {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).expect("serializable row"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::format(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn parse_lexicon(text: &str, origin: &Path) -> Result<Lexicon> {
    if text.trim().is_empty() {
        return Err(Error::format(origin, "empty lexicon file"));
    }
    let spec: LexiconSpec = parse_toml(text, origin)?;
    Ok(Lexicon::from_spec(spec)?)
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon> {
    parse_lexicon(&read_text(path)?, path)
}

/// On-disk atlas: the orientation flag and `label = [x, y, w, h]` entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasFile {
    pub patient_right_on_image_left: bool,
    pub zones: BTreeMap<String, [f64; 4]>,
}

impl AtlasFile {
    pub fn into_atlas(self) -> cxr_core::Result<Atlas> {
        let mut boxes = BTreeMap::new();
        for (name, [x, y, w, h]) in self.zones {
            boxes.insert(LocationLabel::from_name(&name)?, NormalizedBox::new(x, y, w, h)?);
        }
        Atlas::new(boxes, self.patient_right_on_image_left)
    }

    pub fn from_atlas(atlas: &Atlas) -> Self {
        AtlasFile {
            patient_right_on_image_left: atlas.patient_right_on_image_left,
            zones: atlas
                .entries()
                .iter()
                .map(|(l, b)| (l.name().to_string(), b.to_array()))
                .collect(),
        }
    }
}

pub fn parse_atlas(text: &str, origin: &Path) -> Result<Atlas> {
    let file: AtlasFile = parse_toml(text, origin)?;
    Ok(file.into_atlas()?)
}

pub fn load_atlas(path: &Path) -> Result<Atlas> {
    parse_atlas(&read_text(path)?, path)
}

pub fn parse_templates(text: &str, origin: &Path) -> Result<ReportTemplates> {
    let t: ReportTemplates = parse_toml(text, origin)?;
    t.validate()?;
    Ok(t)
}

pub fn load_templates(path: &Path) -> Result<ReportTemplates> {
    parse_templates(&read_text(path)?, path)
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// CSV with a header row taken from the field names of `T`.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::format(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::format(path, e)))
        .collect()
}

pub fn save_checkpoint<C: Serialize>(path: &Path, ckpt: &Checkpoint<C>) -> Result<()> {
    write_json(path, ckpt)
}

/// Reads a checkpoint and checks its format header and model kind.
pub fn load_checkpoint<C: DeserializeOwned>(path: &Path, kind: &str) -> Result<Checkpoint<C>> {
    let ckpt: Checkpoint<C> = read_json(path)?;
    ckpt.check_header(kind).map_err(|e| Error::format(path, e))?;
    Ok(ckpt)
}
