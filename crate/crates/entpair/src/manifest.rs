//! CSV files: subject manifests, pair lists and human decision logs.
//!
//! Every file has a header row that must match exactly. Feature paths in a
//! manifest are resolved against the manifest's directory unless absolute.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use entpair_core::data::{format_regions, parse_regions, validate_subjects, Dataset, PairSample, SubjectRecord};
use entpair_core::stats::DecisionRecord;

use crate::fptn::{read_shape, read_tensor};
use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 6] = ["subject_id", "label", "gender", "tags", "feature_file", "regions"];
pub const PAIRS_HEADER: [&str; 3] = ["left_id", "right_id", "target"];
pub const DECISIONS_HEADER: [&str; 5] = ["respondent_id", "group", "pair_id", "correct", "recognized"];

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let got = rdr.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if !got.iter().eq(header.iter().copied()) {
        return Err(Error::format(
            path,
            format!("header must be `{}`, found `{}`", header.join(","), got.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(rdr)
}

/// Iterates data rows with their 1-based line numbers.
fn rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>> {
    let mut rdr = reader(path, header)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec));
    }
    Ok(out)
}

fn at_line(path: &Path, line: u64) -> impl Fn(entpair_core::Error) -> Error + '_ {
    move |e| Error::format(path, format!("line {line}: {e}"))
}

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(w)
}

pub(crate) fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = writer(path, header)?;
    for r in rows {
        w.write_record(r).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a manifest and checks the record invariants. Feature files are
/// not touched.
pub fn read_manifest(path: &Path) -> Result<Vec<SubjectRecord>> {
    let mut subjects = Vec::new();
    for (line, rec) in rows(path, &MANIFEST_HEADER)? {
        let err = at_line(path, line);
        subjects.push(SubjectRecord {
            subject_id: rec[0].to_string(),
            label: rec[1].parse().map_err(&err)?,
            gender: rec[2].parse().map_err(&err)?,
            tags: rec[3].split(';').map(str::trim).filter(|t| !t.is_empty()).map(String::from).collect(),
            feature_path: rec[4].to_string(),
            regions: parse_regions(&rec[5]).map_err(&err)?,
        });
    }
    validate_subjects(&subjects).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(subjects)
}

pub fn feature_path(manifest: &Path, subject: &SubjectRecord) -> PathBuf {
    let p = Path::new(&subject.feature_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new("")).join(p)
    }
}

/// Parses a manifest and checks that every feature file exists, reads as
/// FPTN, and has the same rank-3 shape, with every region inside the grid.
pub fn load_manifest(path: &Path) -> Result<Vec<SubjectRecord>> {
    let subjects = read_manifest(path)?;
    if subjects.is_empty() {
        return Err(Error::format(path, "manifest lists no subjects"));
    }
    let mut first: Option<(Vec<usize>, &str)> = None;
    for s in &subjects {
        let fp = feature_path(path, s);
        if !fp.is_file() {
            return Err(Error::format(
                path,
                format!("feature file {} of subject {} does not exist", fp.display(), s.subject_id),
            ));
        }
        let shape = read_shape(&fp)?;
        if shape.len() != 3 {
            return Err(Error::format(&fp, format!("expected a [height, width, channels] tensor, got shape {shape:?}")));
        }
        match &first {
            None => first = Some((shape.clone(), &s.subject_id)),
            Some((expected, id)) if *expected != shape => {
                return Err(Error::format(
                    path,
                    format!("subject {} has feature shape {shape:?} but {id} has {expected:?}", s.subject_id),
                ))
            }
            _ => {}
        }
        if let Some(r) = s.regions.iter().find(|r| !r.rect.fits(shape[0], shape[1])) {
            return Err(Error::format(
                path,
                format!("region {r} of subject {} lies outside the {}x{} grid", s.subject_id, shape[0], shape[1]),
            ));
        }
    }
    Ok(subjects)
}

/// Loads a manifest together with all feature maps.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let subjects = load_manifest(path)?;
    let features = subjects
        .iter()
        .map(|s| read_tensor(&feature_path(path, s)))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(subjects, features).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_manifest(path: &Path, subjects: &[SubjectRecord]) -> Result<()> {
    write_rows(
        path,
        &MANIFEST_HEADER,
        subjects.iter().map(|s| {
            [
                s.subject_id.clone(),
                s.label.to_string(),
                s.gender.to_string(),
                s.tags.iter().cloned().collect::<Vec<_>>().join(";"),
                s.feature_path.clone(),
                format_regions(&s.regions),
            ]
        }),
    )
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairSample>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, rec) in rows(path, &PAIRS_HEADER)? {
        let target = match &rec[2] {
            "0" => 0,
            "1" => 1,
            t => return Err(Error::format(path, format!("line {line}: target must be 0 or 1, got {t:?}"))),
        };
        let pair = PairSample { left_id: rec[0].to_string(), right_id: rec[1].to_string(), target };
        let key = if pair.left_id < pair.right_id {
            (pair.left_id.clone(), pair.right_id.clone())
        } else {
            (pair.right_id.clone(), pair.left_id.clone())
        };
        if !seen.insert(key) {
            return Err(Error::format(path, format!("line {line}: pair {}/{} repeats", pair.left_id, pair.right_id)));
        }
        out.push(pair);
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[PairSample]) -> Result<()> {
    write_rows(
        path,
        &PAIRS_HEADER,
        pairs.iter().map(|p| [p.left_id.clone(), p.right_id.clone(), p.target.to_string()]),
    )
}

fn flag(path: &Path, line: u64, name: &str, v: &str) -> Result<u8> {
    match v {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::format(path, format!("line {line}: {name} must be 0 or 1, got {v:?}"))),
    }
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let mut out = Vec::new();
    for (line, rec) in rows(path, &DECISIONS_HEADER)? {
        let d = DecisionRecord {
            respondent_id: rec[0].to_string(),
            group: rec[1].parse().map_err(at_line(path, line))?,
            pair_id: rec[2].to_string(),
            correct: flag(path, line, "correct", &rec[3])?,
            recognized: flag(path, line, "recognized", &rec[4])?,
        };
        d.validate().map_err(at_line(path, line))?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_decisions(path: &Path, decisions: &[DecisionRecord]) -> Result<()> {
    write_rows(
        path,
        &DECISIONS_HEADER,
        decisions.iter().map(|d| {
            [
                d.respondent_id.clone(),
                d.group.to_string(),
                d.pair_id.clone(),
                d.correct.to_string(),
                d.recognized.to_string(),
            ]
        }),
    )
}
