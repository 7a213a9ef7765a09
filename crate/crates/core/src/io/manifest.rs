//! Corpus manifest (JSON) plus token files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::motion_file::{read_face, read_motion, write_face, write_motion};
use crate::io::wav::{read_wav, write_wav};
use crate::motion::DialogueTurn;
use crate::rvq::TokenizedMotion;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub expression_label: String,
    pub action_label: String,
    pub utterance: String,
    /// Relative paths resolve against the manifest's directory.
    pub audio_path: PathBuf,
    pub motion_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub face_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate manifest id {:?}", r.id)));
            }
        }
        Ok(())
    }

    /// Parses a manifest and checks that every referenced file exists.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_slice(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        m.validate()?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        for r in &m.rows {
            for p in [Some(&r.audio_path), Some(&r.motion_path), r.face_path.as_ref()].into_iter().flatten() {
                let full = base.join(p);
                if !full.is_file() {
                    return Err(Error::io(full, std::io::Error::from(std::io::ErrorKind::NotFound)));
                }
            }
        }
        Ok((m, base))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        super::write_atomic(path, &json)
    }
}

/// Loads every row of a manifest file, in order.
pub fn load_corpus(path: &Path, sample_rate: u32) -> Result<Vec<(String, DialogueTurn)>> {
    let (m, base) = Manifest::load(path)?;
    m.rows
        .par_iter()
        .map(|r| {
            let audio = read_wav(&base.join(&r.audio_path), sample_rate)?;
            let motion = read_motion(&base.join(&r.motion_path))?;
            let face = r.face_path.as_ref().map(|p| read_face(&base.join(p))).transpose()?;
            let turn = DialogueTurn::new(
                r.expression_label.clone(),
                r.action_label.clone(),
                r.utterance.clone(),
                audio,
                motion,
                face,
            )?;
            Ok((r.id.clone(), turn))
        })
        .collect()
}

/// Writes `audio/<id>.wav`, `motion/<id>.samo`, `face/<id>.samo` and the
/// manifest under `dir`.
pub fn write_corpus(dir: &Path, turns: &[(String, DialogueTurn)]) -> Result<Manifest> {
    let rows: Vec<ManifestRow> = turns
        .par_iter()
        .map(|(id, t)| {
            let row = ManifestRow {
                id: id.clone(),
                expression_label: t.expression_label.clone(),
                action_label: t.action_label.clone(),
                utterance: t.utterance.clone(),
                audio_path: PathBuf::from("audio").join(format!("{id}.wav")),
                motion_path: PathBuf::from("motion").join(format!("{id}.samo")),
                face_path: t.face.as_ref().map(|_| PathBuf::from("face").join(format!("{id}.samo"))),
            };
            write_wav(&dir.join(&row.audio_path), &t.audio)?;
            write_motion(&dir.join(&row.motion_path), &t.motion)?;
            if let (Some(f), Some(p)) = (&t.face, &row.face_path) {
                write_face(&dir.join(p), f)?;
            }
            Ok(row)
        })
        .collect::<Result<_>>()?;
    let m = Manifest { rows };
    m.save(&dir.join(MANIFEST_FILE))?;
    Ok(m)
}

pub fn write_tokens(path: &Path, tokens: &TokenizedMotion) -> Result<()> {
    let json = serde_json::to_vec_pretty(tokens).expect("tokens serialize");
    super::write_atomic(path, &json)
}

pub fn read_tokens(path: &Path) -> Result<TokenizedMotion> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}
