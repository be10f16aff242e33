//! Feature files (`SFNF`) and JSON-lines dataset manifests.
//!
//! A feature file is the 4-byte magic `SFNF`, then little-endian `u32`
//! version (1), `T_raw` and `d_in`, then `T_raw · d_in` little-endian `f32`
//! values in row-major order.
//!
//! A manifest has one JSON object per line:
//!
//! ```text
//! {"id":"seq-0001","class":"class-3","features_file":"features/seq-0001.sfnf","cycles":[[4,20],[20,37]]}
//! ```
//!
//! `features_file` is resolved relative to the manifest's directory. An
//! optional `exemplar_id` names a sequence in the sibling `exemplars.jsonl`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::AnnotatedSequence;
use crate::error::{Error, Result};

const FEATURE_MAGIC: &[u8; 4] = b"SFNF";
const FEATURE_VERSION: u32 = 1;

/// File name of the exemplar manifest written next to split manifests.
pub const EXEMPLAR_MANIFEST: &str = "exemplars.jsonl";

pub fn write_features<W: Write>(out: &mut W, features: &Array2<f32>) -> Result<()> {
    out.write_all(FEATURE_MAGIC)?;
    out.write_all(&FEATURE_VERSION.to_le_bytes())?;
    out.write_all(&(features.nrows() as u32).to_le_bytes())?;
    out.write_all(&(features.ncols() as u32).to_le_bytes())?;
    for &x in features.iter() {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_features<R: Read>(input: &mut R) -> Result<Array2<f32>> {
    let mut header = [0u8; 16];
    input.read_exact(&mut header)?;
    if &header[..4] != FEATURE_MAGIC {
        return Err(Error::Format(format!(
            "bad feature file magic {:?}",
            &header[..4]
        )));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    if word(4) != FEATURE_VERSION {
        return Err(Error::Format(format!(
            "unsupported feature file version {}",
            word(4)
        )));
    }
    let (t, d) = (word(8) as usize, word(12) as usize);
    let mut payload = vec![0u8; t * d * 4];
    input.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Array2::from_shape_vec((t, d), data).expect("payload length matches header"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub class: String,
    pub features_file: String,
    pub cycles: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplar_id: Option<String>,
}

impl ManifestEntry {
    pub fn for_sequence(seq: &AnnotatedSequence, features_file: String) -> Self {
        ManifestEntry {
            id: seq.id.clone(),
            class: seq.class_label.clone(),
            features_file,
            cycles: seq.cycles.iter().map(|&(s, e)| [s, e]).collect(),
            exemplar_id: None,
        }
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        entries.push(entry);
    }
    Ok(entries)
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads one manifest entry's features and validates it.
pub fn load_entry(manifest_path: &Path, entry: &ManifestEntry) -> Result<AnnotatedSequence> {
    let feature_path = manifest_dir(manifest_path).join(&entry.features_file);
    let features = read_features(&mut BufReader::new(File::open(&feature_path)?))?;
    let seq = AnnotatedSequence {
        id: entry.id.clone(),
        class_label: entry.class.clone(),
        features,
        cycles: entry.cycles.iter().map(|c| (c[0], c[1])).collect(),
        source: format!("{}#{}", manifest_path.display(), entry.id),
    };
    seq.validate()?;
    Ok(seq)
}

/// A loaded manifest, with exemplars resolved when the manifest names them.
#[derive(Clone, Debug)]
pub struct LoadedSplit {
    pub items: Vec<AnnotatedSequence>,
    /// Parallel to `items`.
    pub exemplars: Vec<Option<AnnotatedSequence>>,
}

pub fn load_split(manifest_path: &Path) -> Result<LoadedSplit> {
    let entries = read_manifest(manifest_path)?;
    let needs_exemplars = entries.iter().any(|e| e.exemplar_id.is_some());
    let exemplar_pool = if needs_exemplars {
        let path = manifest_dir(manifest_path).join(EXEMPLAR_MANIFEST);
        read_manifest(&path)?
            .iter()
            .map(|e| load_entry(&path, e))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut items = Vec::with_capacity(entries.len());
    let mut exemplars = Vec::with_capacity(entries.len());
    for entry in &entries {
        items.push(load_entry(manifest_path, entry)?);
        let ex = match &entry.exemplar_id {
            None => None,
            Some(id) => {
                let found = exemplar_pool
                    .iter()
                    .find(|s| &s.id == id)
                    .ok_or_else(|| Error::Format(format!("exemplar {id} of {} not found", entry.id)))?;
                if found.class_label != entry.class {
                    return Err(Error::Format(format!(
                        "exemplar {id} has class {} but {} has class {}",
                        found.class_label, entry.id, entry.class
                    )));
                }
                Some(found.clone())
            }
        };
        exemplars.push(ex);
    }
    Ok(LoadedSplit { items, exemplars })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn feature_file_layout() {
        let f = array![[1.0f32, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let mut buf = Vec::new();
        write_features(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], b"SFNF");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &3u32.to_le_bytes());
        assert_eq!(&buf[12..16], &2u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&buf[20..24], &2.0f32.to_le_bytes());
        assert_eq!(buf.len(), 16 + 6 * 4);
        assert_eq!(read_features(&mut buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"XXXX\x01\0\0\0\0\0\0\0\0\0\0\0".to_vec();
        assert!(matches!(
            read_features(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn manifest_line_shape() {
        let e = ManifestEntry {
            id: "a".into(),
            class: "c".into(),
            features_file: "features/a.sfnf".into(),
            cycles: vec![[0, 4], [4, 9]],
            exemplar_id: None,
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"id":"a","class":"c","features_file":"features/a.sfnf","cycles":[[0,4],[4,9]]}"#
        );
        let with: ManifestEntry = serde_json::from_str(
            r#"{"id":"a","class":"c","features_file":"f","cycles":[],"exemplar_id":"e1"}"#,
        )
        .unwrap();
        assert_eq!(with.exemplar_id.as_deref(), Some("e1"));
    }
}
