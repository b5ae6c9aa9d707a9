use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clean::MAX_COMMENT_CHARS;
use crate::error::{Error, Result};

pub const ANNOTATION_COLUMNS: [&str; 6] = [
    "id",
    "attribute_in_window",
    "comment",
    "phrase",
    "bias_sent",
    "bias_phrase",
];

/// One row of an annotation file. Labels are `None` until annotated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedInstance {
    pub id: String,
    /// Whether the attribute term occurs inside the phrase window.
    pub attribute_in_window: bool,
    pub comment: String,
    pub phrase: String,
    pub bias_sent: Option<bool>,
    pub bias_phrase: Option<bool>,
}

impl AnnotatedInstance {
    pub fn validate(&self) -> Result<()> {
        if self.comment.chars().count() > MAX_COMMENT_CHARS {
            return Err(Error::invalid(
                "comment",
                format!("{}: longer than {MAX_COMMENT_CHARS} characters", self.id),
            ));
        }
        if self.comment != self.comment.to_lowercase() || self.phrase != self.phrase.to_lowercase() {
            return Err(Error::invalid("comment", format!("{}: not lowercase", self.id)));
        }
        let comment: Vec<&str> = self.comment.split_whitespace().collect();
        let phrase: Vec<&str> = self.phrase.split_whitespace().collect();
        let contiguous = phrase.is_empty() || comment.windows(phrase.len()).any(|w| w == phrase.as_slice());
        if !contiguous {
            return Err(Error::invalid(
                "phrase",
                format!("{}: phrase is not a span of the comment", self.id),
            ));
        }
        Ok(())
    }
}

fn label_to_cell(label: Option<bool>) -> &'static str {
    match label {
        None => "",
        Some(false) => "0",
        Some(true) => "1",
    }
}

fn parse_label(cell: &str, column: &str, row: usize) -> Result<Option<bool>> {
    match cell.trim() {
        "" => Ok(None),
        "0" => Ok(Some(false)),
        "1" => Ok(Some(true)),
        other => Err(Error::invalid(
            column,
            format!("row {row}: label must be 0, 1 or empty, got `{other}`"),
        )),
    }
}

fn parse_flag(cell: &str, row: usize) -> Result<bool> {
    match cell.trim().to_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" | "" => Ok(false),
        other => Err(Error::invalid(
            "attribute_in_window",
            format!("row {row}: expected a boolean, got `{other}`"),
        )),
    }
}

/// Reads an annotation CSV. Columns are matched by header name, so any
/// column order is accepted; extra columns are ignored.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotatedInstance>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path.display().to_string(), e))?
        .clone();
    let mut index = [0usize; 6];
    for (slot, name) in index.iter_mut().zip(ANNOTATION_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::invalid(name, "missing column"))?;
    }

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::parse(path.display().to_string(), e))?;
        let cell = |k: usize| record.get(index[k]).unwrap_or("");
        let inst = AnnotatedInstance {
            id: cell(0).to_string(),
            attribute_in_window: parse_flag(cell(1), row)?,
            comment: cell(2).to_string(),
            phrase: cell(3).to_string(),
            bias_sent: parse_label(cell(4), "bias_sent", row)?,
            bias_phrase: parse_label(cell(5), "bias_phrase", row)?,
        };
        inst.validate()?;
        out.push(inst);
    }
    Ok(out)
}

pub fn write_annotations(instances: &[AnnotatedInstance], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::NonNumeric)
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e))?;
    let io_err = |e: csv::Error| Error::parse(path.display().to_string(), e);
    writer.write_record(ANNOTATION_COLUMNS).map_err(io_err)?;
    for inst in instances {
        writer
            .write_record([
                inst.id.as_str(),
                if inst.attribute_in_window { "true" } else { "false" },
                inst.comment.as_str(),
                inst.phrase.as_str(),
                label_to_cell(inst.bias_sent),
                label_to_cell(inst.bias_phrase),
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn inst(i: usize) -> AnnotatedInstance {
        let label = |k: usize| match (i + k) % 3 {
            0 => None,
            1 => Some(false),
            _ => Some(true),
        };
        AnnotatedInstance {
            id: format!("c{i:03}"),
            attribute_in_window: i.is_multiple_of(2),
            comment: format!("well, \"jews are greedy\" said comment {i}"),
            phrase: "\"jews are greedy\" said".to_string(),
            bias_sent: label(0),
            bias_phrase: label(1),
        }
    }

    #[test]
    fn round_trip_100() {
        let data: Vec<_> = (0..100).map(inst).collect();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_annotations(&data, f.path()).unwrap();
        assert_eq!(read_annotations(f.path()).unwrap(), data);
    }

    fn csv_file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn non_binary_label_rejected() {
        let f = csv_file(
            "id,attribute_in_window,comment,phrase,bias_sent,bias_phrase\n\
             x1,true,jews are greedy,jews are,2,1\n",
        );
        let err = read_annotations(f.path()).unwrap_err();
        assert!(err.to_string().contains("bias_sent"), "{err}");
    }

    #[test]
    fn permuted_header_accepted() {
        let f = csv_file(
            "bias_phrase,phrase,id,comment,bias_sent,attribute_in_window\n\
             1,\"jews are greedy\",x1,\"i think jews are greedy\",,False\n",
        );
        let rows = read_annotations(f.path()).unwrap();
        assert_eq!(
            rows,
            vec![AnnotatedInstance {
                id: "x1".into(),
                attribute_in_window: false,
                comment: "i think jews are greedy".into(),
                phrase: "jews are greedy".into(),
                bias_sent: None,
                bias_phrase: Some(true),
            }]
        );
    }

    #[test]
    fn missing_column_rejected() {
        let f = csv_file("id,comment,phrase,bias_sent,bias_phrase\nx,a,a,1,1\n");
        let err = read_annotations(f.path()).unwrap_err();
        assert!(err.to_string().contains("attribute_in_window"), "{err}");
    }

    #[test]
    fn phrase_must_be_span() {
        let mut i = inst(1);
        i.phrase = "greedy jews".into();
        assert!(i.validate().is_err());
    }
}
