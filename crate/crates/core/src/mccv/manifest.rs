use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 3] = ["slide_id", "patient_id", "cohort"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideRecord {
    pub slide_id: String,
    /// `None` when the manifest leaves the cell empty.
    pub patient_id: Option<String>,
    pub cohort: String,
    /// Label column → raw cell text. Empty cells are omitted.
    pub labels: BTreeMap<String, String>,
}

/// Slide inventory: `slide_id,patient_id,cohort,<label columns...>`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SlideManifest {
    pub label_columns: Vec<String>,
    pub slides: Vec<SlideRecord>,
}

impl SlideManifest {
    pub fn get(&self, slide_id: &str) -> Option<&SlideRecord> {
        self.slides.iter().find(|s| s.slide_id == slide_id)
    }

    pub fn has_patients(&self) -> bool {
        self.slides.iter().any(|s| s.patient_id.is_some())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.slides {
            if s.slide_id.is_empty() {
                return Err(Error::InvalidInput("empty slide_id".into()));
            }
            if !seen.insert(&s.slide_id) {
                return Err(Error::InvalidInput(format!("duplicate slide_id {}", s.slide_id)));
            }
            if let Some(c) = s.labels.keys().find(|c| !self.label_columns.contains(c)) {
                return Err(Error::InvalidInput(format!("slide {} has undeclared label {c}", s.slide_id)));
            }
        }
        let mut cols = BTreeSet::new();
        for c in &self.label_columns {
            if FIXED_COLUMNS.contains(&c.as_str()) || !cols.insert(c) {
                return Err(Error::InvalidInput(format!("bad label column name {c}")));
            }
        }
        Ok(())
    }
}

pub fn read_manifest<R: Read>(reader: R) -> Result<SlideManifest> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || header.iter().take(3).ne(FIXED_COLUMNS) {
        return Err(Error::Format(format!(
            "manifest header must start with {}",
            FIXED_COLUMNS.join(",")
        )));
    }
    let label_columns: Vec<String> = header.iter().skip(3).map(str::to_string).collect();
    let mut slides = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let labels = label_columns
            .iter()
            .zip(rec.iter().skip(3))
            .filter(|(_, v)| !v.is_empty())
            .map(|(c, v)| (c.clone(), v.to_string()))
            .collect();
        slides.push(SlideRecord {
            slide_id: rec[0].to_string(),
            patient_id: Some(rec[1].to_string()).filter(|p| !p.is_empty()),
            cohort: rec[2].to_string(),
            labels,
        });
    }
    let m = SlideManifest { label_columns, slides };
    m.validate()?;
    Ok(m)
}

pub fn read_manifest_file(path: &Path) -> Result<SlideManifest> {
    read_manifest(std::fs::File::open(path)?)
}

pub fn write_manifest<W: Write>(m: &SlideManifest, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(m.label_columns.iter().map(String::as_str));
    w.write_record(&header)?;
    for s in &m.slides {
        let mut row = vec![
            s.slide_id.as_str(),
            s.patient_id.as_deref().unwrap_or(""),
            s.cohort.as_str(),
        ];
        row.extend(m.label_columns.iter().map(|c| s.labels.get(c).map_or("", String::as_str)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_manifest_file(m: &SlideManifest, path: &Path) -> Result<()> {
    write_manifest(m, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "slide_id,patient_id,cohort,idh,age\n\
                       s1,p1,glioma,mut,54\n\
                       s2,,glioma,wt,\n\
                       s3,p1,other,, 61\n";

    #[test]
    fn parses_and_roundtrips() {
        let m = read_manifest(CSV.as_bytes()).unwrap();
        assert_eq!(m.label_columns, ["idh", "age"]);
        assert_eq!(m.slides.len(), 3);
        assert_eq!(m.slides[1].patient_id, None);
        assert!(!m.slides[1].labels.contains_key("age"));
        assert_eq!(m.slides[2].labels["age"], "61");
        assert!(m.has_patients());

        let mut buf = Vec::new();
        write_manifest(&m, &mut buf).unwrap();
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn rejects_bad_header_and_duplicates() {
        assert!(matches!(read_manifest("slide,patient,cohort\n".as_bytes()), Err(Error::Format(_))));
        let dup = "slide_id,patient_id,cohort\ns1,,c\ns1,,c\n";
        assert!(matches!(read_manifest(dup.as_bytes()), Err(Error::InvalidInput(_))));
        let clash = "slide_id,patient_id,cohort,cohort\ns1,,c,x\n";
        assert!(read_manifest(clash.as_bytes()).is_err());
    }
}
