use std::io::{Read, Write};

use super::{Density, MetadataRecord};
use crate::error::{Error, Result};

pub const METADATA_HEADER: [&str; 12] = [
    "exam_id",
    "image_id",
    "age",
    "nationality",
    "device_manufacturer",
    "device_model",
    "institution",
    "exam_year",
    "breast_density",
    "birads",
    "label_malignancy",
    "label_calcification",
];

/// One line of the metadata CSV.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetadataRow {
    pub exam_id: String,
    pub image_id: String,
    pub record: MetadataRecord,
    pub label_malignancy: u8,
    pub label_calcification: u8,
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("metadata csv: {e}"))
}

fn opt_num<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_metadata_csv<W: Write>(out: W, rows: &[MetadataRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(METADATA_HEADER).map_err(csv_err)?;
    for row in rows {
        let r = &row.record;
        w.write_record([
            row.exam_id.clone(),
            row.image_id.clone(),
            opt_num(r.age),
            r.nationality.clone().unwrap_or_default(),
            r.device_manufacturer.clone().unwrap_or_default(),
            r.device_model.clone().unwrap_or_default(),
            r.institution.clone().unwrap_or_default(),
            opt_num(r.exam_year),
            r.breast_density.map(|d| d.letter().to_string()).unwrap_or_default(),
            opt_num(r.birads),
            row.label_malignancy.to_string(),
            row.label_calcification.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("metadata csv: {e}")))?;
    Ok(())
}

fn parse_opt<T: std::str::FromStr>(cell: &str, field: &'static str) -> Result<Option<T>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse().map(Some).map_err(|_| Error::Validation { field, detail: format!("cannot parse `{cell}`") })
}

fn parse_label(cell: &str, field: &'static str) -> Result<u8> {
    match cell.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Validation { field, detail: format!("label `{other}` is not 0 or 1") }),
    }
}

fn opt_string(cell: &str) -> Option<String> {
    let cell = cell.trim();
    (!cell.is_empty()).then(|| cell.to_string())
}

pub fn read_metadata_csv<R: Read>(input: R) -> Result<Vec<MetadataRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METADATA_HEADER) {
        return Err(Error::Format(format!("metadata csv header mismatch: {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let density = match rec[8].trim() {
            "" => None,
            s => Some(s.parse::<Density>()?),
        };
        rows.push(MetadataRow {
            exam_id: rec[0].to_string(),
            image_id: rec[1].to_string(),
            record: MetadataRecord {
                age: parse_opt(&rec[2], "age")?,
                nationality: opt_string(&rec[3]),
                device_manufacturer: opt_string(&rec[4]),
                device_model: opt_string(&rec[5]),
                institution: opt_string(&rec[6]),
                exam_year: parse_opt(&rec[7], "exam_year")?,
                breast_density: density,
                birads: parse_opt(&rec[9], "birads")?,
            },
            label_malignancy: parse_label(&rec[10], "label_malignancy")?,
            label_calcification: parse_label(&rec[11], "label_calcification")?,
        });
    }
    Ok(rows)
}
