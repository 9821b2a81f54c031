//! Sample provenance and the line-oriented manifest formats.
//!
//! Dataset manifest rows are `relative_path<TAB>identity_id<TAB>kind`; morph
//! manifest rows are `relative_path<TAB>id_first<TAB>id_second<TAB>kind`.
//! Both are read into [`DatasetRecord`]; bona fide rows carry the same
//! identity in both slots.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MorphFamily {
    Landmark,
    Latent,
}

impl MorphFamily {
    pub const ALL: [MorphFamily; 2] = [MorphFamily::Landmark, MorphFamily::Latent];

    fn suffix(self) -> &'static str {
        match self {
            MorphFamily::Landmark => "lm",
            MorphFamily::Latent => "latent",
        }
    }
}

impl fmt::Display for MorphFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MorphFamily::Landmark => "landmark",
            MorphFamily::Latent => "latent",
        })
    }
}

impl FromStr for MorphFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "landmark" | "lm" => Ok(MorphFamily::Landmark),
            "latent" => Ok(MorphFamily::Latent),
            _ => Err(Error::Config(format!("unknown morph family `{s}`"))),
        }
    }
}

/// Where an image came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleKind {
    BonaFide,
    SelfMorph(MorphFamily),
    Morph(MorphFamily),
}

impl SampleKind {
    /// Cross-identity morph.
    pub fn is_morph(self) -> bool {
        matches!(self, SampleKind::Morph(_))
    }

    /// Original, unmodified capture.
    pub fn is_original(self) -> bool {
        self == SampleKind::BonaFide
    }

    pub fn family(self) -> Option<MorphFamily> {
        match self {
            SampleKind::BonaFide => None,
            SampleKind::SelfMorph(f) | SampleKind::Morph(f) => Some(f),
        }
    }
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleKind::BonaFide => f.write_str("bonafide"),
            SampleKind::SelfMorph(fam) => write!(f, "selfmorph-{}", fam.suffix()),
            SampleKind::Morph(fam) => write!(f, "morph-{}", fam.suffix()),
        }
    }
}

impl FromStr for SampleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonafide" => Ok(SampleKind::BonaFide),
            "selfmorph-lm" => Ok(SampleKind::SelfMorph(MorphFamily::Landmark)),
            "selfmorph-latent" => Ok(SampleKind::SelfMorph(MorphFamily::Latent)),
            "morph-lm" => Ok(SampleKind::Morph(MorphFamily::Landmark)),
            "morph-latent" => Ok(SampleKind::Morph(MorphFamily::Latent)),
            _ => Err(Error::Config(format!("unknown sample kind `{s}`"))),
        }
    }
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub path: String,
    pub id_first: u32,
    pub id_second: u32,
    pub kind: SampleKind,
}

impl DatasetRecord {
    pub fn bona_fide(path: impl Into<String>, identity: u32) -> Self {
        DatasetRecord {
            path: path.into(),
            id_first: identity,
            id_second: identity,
            kind: SampleKind::BonaFide,
        }
    }

    /// Dataset-manifest form (three columns).
    pub fn dataset_line(&self) -> String {
        format!("{}\t{}\t{}", self.path, self.id_first, self.kind)
    }

    /// Morph-manifest form (four columns).
    pub fn morph_line(&self) -> String {
        format!("{}\t{}\t{}\t{}", self.path, self.id_first, self.id_second, self.kind)
    }
}

/// Renders records as a manifest; bona fides use the three-column form.
pub fn render_manifest(records: &[DatasetRecord]) -> String {
    let mut out = String::new();
    for r in records {
        if r.kind == SampleKind::BonaFide {
            out.push_str(&r.dataset_line());
        } else {
            out.push_str(&r.morph_line());
        }
        out.push('\n');
    }
    out
}

pub fn parse_manifest(text: &str, source: &str) -> Result<Vec<DatasetRecord>> {
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::parse(source, n + 1, msg);
        let id = |s: &str| s.parse::<u32>().map_err(|_| bad(format!("invalid identity id `{s}`")));
        let kind = |s: &str| s.parse::<SampleKind>().map_err(|e| bad(e.to_string()));
        let rec = match cols.as_slice() {
            [path, ident, k] => {
                let ident = id(ident)?;
                DatasetRecord {
                    path: path.to_string(),
                    id_first: ident,
                    id_second: ident,
                    kind: kind(k)?,
                }
            }
            [path, a, b, k] => DatasetRecord {
                path: path.to_string(),
                id_first: id(a)?,
                id_second: id(b)?,
                kind: kind(k)?,
            },
            _ => {
                return Err(bad(format!(
                    "expected 3 or 4 tab-separated columns, got {}",
                    cols.len()
                )))
            }
        };
        records.push(rec);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, &path.display().to_string())
}

pub fn write_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    fs::write(path, render_manifest(records)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_strings_round_trip() {
        let kinds = [
            SampleKind::BonaFide,
            SampleKind::SelfMorph(MorphFamily::Landmark),
            SampleKind::SelfMorph(MorphFamily::Latent),
            SampleKind::Morph(MorphFamily::Landmark),
            SampleKind::Morph(MorphFamily::Latent),
        ];
        for k in kinds {
            assert_eq!(k.to_string().parse::<SampleKind>().unwrap(), k);
        }
        assert!("morph".parse::<SampleKind>().is_err());
    }

    #[test]
    fn manifest_round_trip_mixed_forms() {
        let recs = vec![
            DatasetRecord::bona_fide("images/a.pgm", 3),
            DatasetRecord {
                path: "morphs/m.pgm".into(),
                id_first: 3,
                id_second: 9,
                kind: SampleKind::Morph(MorphFamily::Latent),
            },
        ];
        let text = render_manifest(&recs);
        assert_eq!(text.lines().next().unwrap(), "images/a.pgm\t3\tbonafide");
        assert_eq!(parse_manifest(&text, "m").unwrap(), recs);
    }

    #[test]
    fn bad_rows_report_line_numbers() {
        let err = parse_manifest("# c\na\t1\tbonafide\nb\tx\tbonafide\n", "m.tsv").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(parse_manifest("a\t1\n", "m").is_err());
    }
}
