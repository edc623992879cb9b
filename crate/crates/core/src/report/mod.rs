//! Tabular exam metadata rendered as short synthetic reports.
//!
//! Rendering is plain slot substitution into a fixed sentence skeleton, so a
//! report is a pure function of its record. Missing values render as the word
//! `unknown`; the age slot reads "patient of unknown age".

mod csv_io;
mod vocab;

use std::fmt;
use std::str::FromStr;

pub use csv_io::{read_metadata_csv, write_metadata_csv, MetadataRow, METADATA_HEADER};
pub use vocab::{build_vocab, encode_text, tokenize, Encoded, Vocabulary, PAD_ID, UNK_ID};

use crate::error::{Error, Result};

const DEFAULT_TEMPLATE: &str = include_str!("../../templates/report.txt");

pub const MISSING: &str = "unknown";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Density {
    A,
    B,
    C,
    D,
}

impl Density {
    pub const ALL: [Density; 4] = [Density::A, Density::B, Density::C, Density::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn letter(self) -> &'static str {
        ["A", "B", "C", "D"][self as usize]
    }
}

impl FromStr for Density {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Density::A),
            "B" => Ok(Density::B),
            "C" => Ok(Density::C),
            "D" => Ok(Density::D),
            other => Err(Error::Validation { field: "breast_density", detail: format!("`{other}` is not one of A-D") }),
        }
    }
}

/// Report fields, in template slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Field {
    Age,
    Nationality,
    DeviceManufacturer,
    DeviceModel,
    Institution,
    ExamYear,
    BreastDensity,
    Birads,
}

impl Field {
    pub const ALL: [Field; 8] = [
        Field::Age,
        Field::Nationality,
        Field::DeviceManufacturer,
        Field::DeviceModel,
        Field::Institution,
        Field::ExamYear,
        Field::BreastDensity,
        Field::Birads,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Age => "age",
            Field::Nationality => "nationality",
            Field::DeviceManufacturer => "device_manufacturer",
            Field::DeviceModel => "device_model",
            Field::Institution => "institution",
            Field::ExamYear => "exam_year",
            Field::BreastDensity => "breast_density",
            Field::Birads => "birads",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One exam's tabular covariates; `None` is the explicit missing marker.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MetadataRecord {
    pub age: Option<u32>,
    pub nationality: Option<String>,
    pub device_manufacturer: Option<String>,
    pub device_model: Option<String>,
    pub institution: Option<String>,
    pub exam_year: Option<u32>,
    pub breast_density: Option<Density>,
    pub birads: Option<u8>,
}

impl MetadataRecord {
    pub fn is_missing(&self, field: Field) -> bool {
        match field {
            Field::Age => self.age.is_none(),
            Field::Nationality => self.nationality.is_none(),
            Field::DeviceManufacturer => self.device_manufacturer.is_none(),
            Field::DeviceModel => self.device_model.is_none(),
            Field::Institution => self.institution.is_none(),
            Field::ExamYear => self.exam_year.is_none(),
            Field::BreastDensity => self.breast_density.is_none(),
            Field::Birads => self.birads.is_none(),
        }
    }

    pub fn clear(&mut self, field: Field) {
        match field {
            Field::Age => self.age = None,
            Field::Nationality => self.nationality = None,
            Field::DeviceManufacturer => self.device_manufacturer = None,
            Field::DeviceModel => self.device_model = None,
            Field::Institution => self.institution = None,
            Field::ExamYear => self.exam_year = None,
            Field::BreastDensity => self.breast_density = None,
            Field::Birads => self.birads = None,
        }
    }

    pub fn validate(&self, domains: &Domains) -> Result<()> {
        if let Some(age) = self.age {
            if !(18..=120).contains(&age) {
                return Err(Error::Validation { field: "age", detail: format!("{age} outside [18, 120]") });
            }
        }
        if let Some(year) = self.exam_year {
            if !(1990..=2100).contains(&year) {
                return Err(Error::Validation { field: "exam_year", detail: format!("{year} outside [1990, 2100]") });
            }
        }
        if let Some(b) = self.birads {
            if b > 6 {
                return Err(Error::Validation { field: "birads", detail: format!("{b} outside [0, 6]") });
            }
        }
        let categorical = [
            (Field::Nationality, &self.nationality, &domains.nationality),
            (Field::DeviceManufacturer, &self.device_manufacturer, &domains.device_manufacturer),
            (Field::DeviceModel, &self.device_model, &domains.device_model),
            (Field::Institution, &self.institution, &domains.institution),
        ];
        for (field, value, domain) in categorical {
            if let Some(v) = value {
                if !domain.iter().any(|d| d == v) {
                    return Err(Error::Validation {
                        field: field.name(),
                        detail: format!("`{v}` is not in the configured domain"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Closed value sets of the categorical fields.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Domains {
    pub nationality: Vec<String>,
    pub device_manufacturer: Vec<String>,
    pub device_model: Vec<String>,
    pub institution: Vec<String>,
}

impl Default for Domains {
    fn default() -> Self {
        let own = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        Self {
            nationality: own(&["german", "swiss", "austrian", "french", "italian", "dutch"]),
            device_manufacturer: own(&["hologic", "siemens", "ge", "fujifilm", "philips"]),
            device_model: own(&["selenia", "dimensions", "mammomat", "senographe", "amulet", "microdose"]),
            institution: own(&["northgate", "riverside", "lakeview", "hillcrest"]),
        }
    }
}

impl Domains {
    pub fn empty() -> Self {
        Self { nationality: vec![], device_manufacturer: vec![], device_model: vec![], institution: vec![] }
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.nationality
            .iter()
            .chain(&self.device_manufacturer)
            .chain(&self.device_model)
            .chain(&self.institution)
            .map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Piece {
    Literal(String),
    Slot(Field),
}

/// A piece of rendered text, tagged with the slot that produced it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub text: String,
    pub slot: Option<Field>,
}

/// Sentence skeletons with `{field}` slots, one sentence per line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Template {
    lines: Vec<Vec<Piece>>,
}

impl Default for Template {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template parses")
    }
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut pieces = Vec::new();
            let mut rest = line;
            while let Some(open) = rest.find('{') {
                if open > 0 {
                    pieces.push(Piece::Literal(rest[..open].to_string()));
                }
                let close = rest[open..]
                    .find('}')
                    .ok_or_else(|| Error::Format(format!("template line {}: unclosed slot", no + 1)))?;
                let name = &rest[open + 1..open + close];
                let field = Field::from_name(name)
                    .ok_or_else(|| Error::Format(format!("template line {}: unknown slot `{name}`", no + 1)))?;
                pieces.push(Piece::Slot(field));
                rest = &rest[open + close + 1..];
            }
            if !rest.is_empty() {
                pieces.push(Piece::Literal(rest.to_string()));
            }
            lines.push(pieces);
        }
        if lines.is_empty() {
            return Err(Error::Format("template has no sentences".into()));
        }
        Ok(Self { lines })
    }

    /// Drops every sentence that renders the BI-RADS slot.
    pub fn without_birads(&self) -> Self {
        let lines =
            self.lines.iter().filter(|l| !l.contains(&Piece::Slot(Field::Birads))).cloned().collect();
        Self { lines }
    }

    /// Every word the template and its slot phrases can emit, excluding slot values.
    pub fn lexicon(&self) -> Vec<String> {
        let mut text = String::new();
        for line in &self.lines {
            for piece in line {
                if let Piece::Literal(s) = piece {
                    text.push_str(s);
                    text.push(' ');
                }
            }
        }
        text.push_str(&age_phrase(Some(40)));
        text.push(' ');
        text.push_str(&age_phrase(None));
        text.push_str(" 0 1 2 3 4 5 6 7 8 9");
        for d in Density::ALL {
            text.push(' ');
            text.push_str(d.letter());
        }
        tokenize(&text)
    }

    pub fn segments(&self, record: &MetadataRecord) -> Vec<Segment> {
        let mut out = Vec::new();
        for line in &self.lines {
            for piece in line {
                match piece {
                    Piece::Literal(s) => out.push(Segment { text: s.clone(), slot: None }),
                    Piece::Slot(field) => out.push(Segment { text: slot_text(record, *field), slot: Some(*field) }),
                }
            }
            out.push(Segment { text: " ".into(), slot: None });
        }
        out
    }

    pub fn render(&self, record: &MetadataRecord) -> String {
        let text: String = self.segments(record).into_iter().map(|s| s.text).collect();
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

fn age_phrase(age: Option<u32>) -> String {
    match age {
        Some(a) => format!("{a} year old patient"),
        None => format!("patient of {MISSING} age"),
    }
}

fn slot_text(record: &MetadataRecord, field: Field) -> String {
    fn or_missing(v: &Option<String>) -> String {
        v.as_ref().map(|s| s.to_lowercase()).unwrap_or_else(|| MISSING.to_string())
    }
    match field {
        Field::Age => age_phrase(record.age),
        Field::Nationality => or_missing(&record.nationality),
        Field::DeviceManufacturer => or_missing(&record.device_manufacturer),
        Field::DeviceModel => or_missing(&record.device_model),
        Field::Institution => or_missing(&record.institution),
        Field::ExamYear => record.exam_year.map_or_else(|| MISSING.to_string(), |y| y.to_string()),
        Field::BreastDensity => record.breast_density.map_or_else(|| MISSING.to_string(), |d| d.letter().to_lowercase()),
        Field::Birads => record.birads.map_or_else(|| MISSING.to_string(), |b| b.to_string()),
    }
}

/// Validates `record` and renders it with `template`.
pub fn render_report(record: &MetadataRecord, template: &Template, domains: &Domains) -> Result<String> {
    record.validate(domains)?;
    Ok(template.render(record))
}

#[cfg(test)]
mod tests;
