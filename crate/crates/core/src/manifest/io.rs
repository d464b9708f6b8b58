use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, ManifestError, RunHeader, VideoRecord};

/// Highest schema version this build reads and the one it writes.
pub const SCHEMA_VERSION: u32 = 1;

const FORMAT_TAG: &str = "omnivale-manifest";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    run: Option<RunHeader>,
}

/// Writes the header line followed by one JSON record per line.
///
/// The manifest is validated first; nothing is written if it is invalid.
pub fn write_manifest<W: Write>(manifest: &DatasetManifest, sink: W) -> Result<(), ManifestError> {
    manifest.validate()?;
    let mut out = BufWriter::new(sink);
    let header = Header {
        format: FORMAT_TAG.to_string(),
        schema_version: manifest.schema_version,
        run: manifest.run.clone(),
    };
    serde_json::to_writer(&mut out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for record in &manifest.records {
        serde_json::to_writer(&mut out, record).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a manifest and re-validates every invariant.
///
/// Line numbers in errors are 1-based and count the header.
pub fn read_manifest<R: Read>(source: R) -> Result<DatasetManifest, ManifestError> {
    let reader = BufReader::new(source);
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        None => {
            return Err(ManifestError::Parse {
                line: 1,
                message: "missing schema header".into(),
            })
        }
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| ManifestError::Parse {
            line: 1,
            message: format!("bad header: {e}"),
        })?,
    };
    if header.format != FORMAT_TAG {
        return Err(ManifestError::Parse {
            line: 1,
            message: format!("unexpected format tag {:?}", header.format),
        });
    }
    if header.schema_version > SCHEMA_VERSION || header.schema_version == 0 {
        return Err(ManifestError::UnsupportedSchema {
            found: header.schema_version,
            supported: SCHEMA_VERSION,
        });
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VideoRecord = serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    let manifest = DatasetManifest {
        schema_version: header.schema_version,
        run: header.run,
        records,
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_manifest_file(path: impl AsRef<Path>) -> Result<DatasetManifest, ManifestError> {
    read_manifest(File::open(path)?)
}

/// Writes to a temporary sibling and renames into place.
pub fn write_manifest_file(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<(), ManifestError> {
    let path = path.as_ref();
    manifest.validate()?;
    let tmp = path.with_extension("jsonl.tmp");
    write_manifest(manifest, File::create(&tmp)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::tests::sample_record;
    use crate::manifest::InvariantKind;

    fn to_string(m: &DatasetManifest) -> String {
        let mut buf = Vec::new();
        write_manifest(m, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_manifest_is_header_only() {
        let text = to_string(&DatasetManifest::default());
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("{\"format\":\"omnivale-manifest\",\"schema_version\":1"));
    }

    #[test]
    fn one_video_round_trips() {
        let m = DatasetManifest::new(vec![sample_record()]);
        let text = to_string(&m);
        assert_eq!(text.lines().count(), 2);
        let back = read_manifest(text.as_bytes()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn overlapping_record_is_refused_before_writing() {
        let mut r = sample_record();
        r.omni_events[1].interval = crate::manifest::tests::iv(9.0, 20.0);
        let mut buf = Vec::new();
        let err = write_manifest(&DatasetManifest::new(vec![r]), &mut buf).unwrap_err();
        assert!(matches!(err, ManifestError::Invariant { kind: InvariantKind::NoOverlap, .. }));
        assert!(buf.is_empty());
    }

    #[test]
    fn truncated_line_reports_its_index() {
        let m = DatasetManifest::new(vec![sample_record(), {
            let mut r = sample_record();
            r.video_id = "vid-b".into();
            r
        }]);
        let text = to_string(&m);
        let cut = &text[..text.len() - 20];
        match read_manifest(cut.as_bytes()).unwrap_err() {
            ManifestError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn newer_schema_is_refused() {
        let text = "{\"format\":\"omnivale-manifest\",\"schema_version\":7}\n";
        match read_manifest(text.as_bytes()).unwrap_err() {
            ManifestError::UnsupportedSchema { found, supported } => {
                assert_eq!((found, supported), (7, SCHEMA_VERSION))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_video_ids_rejected_on_load() {
        let m = DatasetManifest::new(vec![sample_record()]);
        let mut text = to_string(&m);
        let record_line = text.lines().nth(1).unwrap().to_string();
        text.push_str(&record_line);
        text.push('\n');
        assert!(matches!(
            read_manifest(text.as_bytes()).unwrap_err(),
            ManifestError::Invariant { kind: InvariantKind::UniqueId, .. }
        ));
    }
}
