//! Cohort data model and the long-format predictive samples CSV.
//!
//! One CSV row holds one Monte-Carlo run of one image:
//!
//! ```text
//! patient_id,patient_label,image_id,slice_index,image_label,run,p_stroke
//! P0001,stroke,P0001-s00,0,no_stroke,0,0.0731
//! ```
//!
//! Only the stroke probability is stored; the no-stroke column is rebuilt as
//! `1 - p_stroke`. Rows may come in any order. Patients keep the order of
//! their first appearance, images are ordered by `slice_index` and runs by
//! `run`, which must form the contiguous range `0..T`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::{fsutil, Error, Result};

pub const CSV_HEADER: [&str; 7] = [
    "patient_id",
    "patient_label",
    "image_id",
    "slice_index",
    "image_label",
    "run",
    "p_stroke",
];

const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageLabel {
    NoStroke,
    Stroke,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatientLabel {
    Tia,
    Stroke,
}

impl ImageLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageLabel::NoStroke => "no_stroke",
            ImageLabel::Stroke => "stroke",
        }
    }

    /// Class index: 0 = no-stroke, 1 = stroke.
    pub fn class(self) -> usize {
        self as usize
    }
}

impl PatientLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PatientLabel::Tia => "tia",
            PatientLabel::Stroke => "stroke",
        }
    }

    /// Class index: 0 = TIA, 1 = stroke.
    pub fn class(self) -> usize {
        self as usize
    }

    pub fn from_class(class: usize) -> Self {
        if class == 1 {
            PatientLabel::Stroke
        } else {
            PatientLabel::Tia
        }
    }
}

impl fmt::Display for ImageLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for PatientLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ImageLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "no_stroke" => Ok(ImageLabel::NoStroke),
            "stroke" => Ok(ImageLabel::Stroke),
            other => Err(format!("unknown image label {other:?}")),
        }
    }
}

impl FromStr for PatientLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tia" => Ok(PatientLabel::Tia),
            "stroke" => Ok(PatientLabel::Stroke),
            other => Err(format!("unknown patient label {other:?}")),
        }
    }
}

/// The T x 2 matrix of per-run softmax outputs for one input.
/// Column 0 is no-stroke, column 1 is stroke.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct PredictiveSamples {
    runs: Vec<[f64; 2]>,
}

impl PredictiveSamples {
    pub fn new(runs: Vec<[f64; 2]>) -> Result<Self> {
        if runs.is_empty() {
            return Err(Error::InvalidSamples("at least one run is required".into()));
        }
        for (t, row) in runs.iter().enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidSamples(format!(
                    "run {t}: probability out of range: {row:?}"
                )));
            }
            if (row[0] + row[1] - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidSamples(format!(
                    "run {t}: probabilities sum to {}",
                    row[0] + row[1]
                )));
            }
        }
        Ok(Self { runs })
    }

    /// Builds the matrix from stroke probabilities alone.
    pub fn from_stroke_probs(p_stroke: &[f64]) -> Result<Self> {
        Self::new(p_stroke.iter().map(|&p| [1.0 - p, p]).collect())
    }

    pub fn runs(&self) -> &[[f64; 2]] {
        &self.runs
    }

    /// Number of Monte-Carlo runs T.
    pub fn run_count(&self) -> usize {
        self.runs.len()
    }

    pub fn stroke_probs(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.runs.iter().map(|r| r[1])
    }

    pub fn column(&self, class: usize) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.runs.iter().map(move |r| r[class])
    }
}

impl TryFrom<Vec<[f64; 2]>> for PredictiveSamples {
    type Error = Error;

    fn try_from(runs: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(runs)
    }
}

impl From<PredictiveSamples> for Vec<[f64; 2]> {
    fn from(s: PredictiveSamples) -> Self {
        s.runs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub slice_index: u32,
    pub true_label: ImageLabel,
    pub samples: PredictiveSamples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    patient_id: String,
    patient_label: PatientLabel,
    images: Vec<ImageRecord>,
}

impl PatientRecord {
    /// Validates and sorts the images by slice index.
    pub fn new(
        patient_id: impl Into<String>,
        patient_label: PatientLabel,
        mut images: Vec<ImageRecord>,
    ) -> Result<Self> {
        let patient_id = patient_id.into();
        if images.is_empty() {
            return Err(Error::InvalidCohort(format!("patient {patient_id} has no images")));
        }
        images.sort_by_key(|im| im.slice_index);
        if let Some(w) = images.windows(2).find(|w| w[0].slice_index == w[1].slice_index) {
            return Err(Error::InvalidCohort(format!(
                "patient {patient_id}: duplicate slice_index {}",
                w[0].slice_index
            )));
        }
        if patient_label == PatientLabel::Tia {
            if let Some(im) = images.iter().find(|im| im.true_label == ImageLabel::Stroke) {
                return Err(Error::InvalidCohort(format!(
                    "tia patient {patient_id} contains stroke image {}",
                    im.image_id
                )));
            }
        }
        Ok(Self {
            patient_id,
            patient_label,
            images,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn label(&self) -> PatientLabel {
        self.patient_label
    }

    /// Images in slice order.
    pub fn images(&self) -> &[ImageRecord] {
        &self.images
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CohortDataset {
    patients: Vec<PatientRecord>,
}

impl CohortDataset {
    pub fn new(patients: Vec<PatientRecord>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(Error::InvalidCohort(format!("duplicate patient_id {}", p.patient_id)));
            }
        }
        Ok(Self { patients })
    }

    pub fn patients(&self) -> &[PatientRecord] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn image_count(&self) -> usize {
        self.patients.iter().map(|p| p.images.len()).sum()
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    /// Restricts the cohort to the given ids, in the given order.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Self> {
        let index: std::collections::HashMap<&str, &PatientRecord> =
            self.patients.iter().map(|p| (p.patient_id.as_str(), p)).collect();
        let patients = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_ref())
                    .map(|p| (*p).clone())
                    .ok_or_else(|| Error::InvalidCohort(format!("unknown patient {}", id.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(patients)
    }
}

struct ImageAcc {
    slice_index: u32,
    label: ImageLabel,
    first_line: u64,
    runs: std::collections::BTreeMap<usize, f64>,
}

struct PatientAcc {
    label: PatientLabel,
    first_line: u64,
    images: IndexMap<String, ImageAcc>,
}

fn field(record: &csv::StringRecord, idx: usize, line: u64) -> Result<&str> {
    record
        .get(idx)
        .ok_or_else(|| Error::parse(line, format!("missing column {}", CSV_HEADER[idx])))
}

/// Parses and validates a samples CSV from any reader.
pub fn read_samples<R: Read>(reader: R) -> Result<CohortDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::parse(
            1,
            format!("header must be exactly `{}`", CSV_HEADER.join(",")),
        ));
    }

    let mut patients: IndexMap<String, PatientAcc> = IndexMap::new();
    let mut record = csv::StringRecord::new();
    loop {
        let has_row = rdr.read_record(&mut record).map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            if e.is_io_error() {
                Error::Csv(e)
            } else {
                Error::parse(line, format!("malformed row: {e}"))
            }
        })?;
        if !has_row {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != CSV_HEADER.len() {
            return Err(Error::parse(
                line,
                format!(
                    "malformed row: expected {} fields, found {}",
                    CSV_HEADER.len(),
                    record.len()
                ),
            ));
        }
        let patient_id = field(&record, 0, line)?;
        let patient_label: PatientLabel = field(&record, 1, line)?
            .parse()
            .map_err(|e: String| Error::parse(line, format!("malformed row: {e}")))?;
        let image_id = field(&record, 2, line)?;
        let slice_index: u32 = field(&record, 3, line)?
            .parse()
            .map_err(|_| Error::parse(line, "malformed row: slice_index must be a non-negative integer"))?;
        let image_label: ImageLabel = field(&record, 4, line)?
            .parse()
            .map_err(|e: String| Error::parse(line, format!("malformed row: {e}")))?;
        let run: usize = field(&record, 5, line)?
            .parse()
            .map_err(|_| Error::parse(line, "malformed row: run must be a non-negative integer"))?;
        let p_stroke: f64 = field(&record, 6, line)?
            .parse()
            .map_err(|_| Error::parse(line, "malformed row: p_stroke is not a number"))?;
        if !(0.0..=1.0).contains(&p_stroke) {
            return Err(Error::parse(line, format!("probability out of range: {p_stroke}")));
        }
        if patient_id.is_empty() || image_id.is_empty() {
            return Err(Error::parse(line, "malformed row: empty identifier"));
        }
        if patient_label == PatientLabel::Tia && image_label == ImageLabel::Stroke {
            return Err(Error::parse(
                line,
                format!("tia patient {patient_id} contains a stroke-labeled image"),
            ));
        }

        let patient = patients.entry(patient_id.to_string()).or_insert_with(|| PatientAcc {
            label: patient_label,
            first_line: line,
            images: IndexMap::new(),
        });
        if patient.label != patient_label {
            return Err(Error::parse(
                line,
                format!(
                    "patient {patient_id} labeled {patient_label} here but {} on line {}",
                    patient.label, patient.first_line
                ),
            ));
        }
        let image = patient.images.entry(image_id.to_string()).or_insert_with(|| ImageAcc {
            slice_index,
            label: image_label,
            first_line: line,
            runs: Default::default(),
        });
        if image.slice_index != slice_index || image.label != image_label {
            return Err(Error::parse(
                line,
                format!(
                    "image {image_id} disagrees with line {} on slice_index or image_label",
                    image.first_line
                ),
            ));
        }
        if image.runs.insert(run, p_stroke).is_some() {
            return Err(Error::parse(
                line,
                format!("duplicate (patient_id, image_id, run) = ({patient_id}, {image_id}, {run})"),
            ));
        }
    }

    let mut out = Vec::with_capacity(patients.len());
    for (patient_id, acc) in patients {
        let mut slices: std::collections::HashMap<u32, &str> = Default::default();
        let mut images = Vec::with_capacity(acc.images.len());
        for (image_id, im) in &acc.images {
            if let Some(other) = slices.insert(im.slice_index, image_id) {
                return Err(Error::parse(
                    im.first_line,
                    format!(
                        "patient {patient_id}: images {other} and {image_id} share slice_index {}",
                        im.slice_index
                    ),
                ));
            }
            if let Some((expected, _)) = im.runs.keys().enumerate().find(|(i, r)| i != *r) {
                return Err(Error::parse(
                    im.first_line,
                    format!("image {image_id}: run indices are not contiguous from 0 (missing run {expected})"),
                ));
            }
            let p: Vec<f64> = im.runs.values().copied().collect();
            let samples =
                PredictiveSamples::from_stroke_probs(&p).map_err(|e| Error::parse(im.first_line, e.to_string()))?;
            images.push(ImageRecord {
                image_id: image_id.clone(),
                slice_index: im.slice_index,
                true_label: im.label,
                samples,
            });
        }
        out.push(
            PatientRecord::new(patient_id, acc.label, images)
                .map_err(|e| Error::parse(acc.first_line, e.to_string()))?,
        );
    }
    CohortDataset::new(out)
}

/// Writes the canonical CSV: patients in dataset order, images in slice
/// order, runs ascending, floats in shortest round-trip form.
pub fn write_samples<W: Write>(dataset: &CohortDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for patient in &dataset.patients {
        for image in &patient.images {
            let slice = image.slice_index.to_string();
            for (run, p) in image.samples.stroke_probs().enumerate() {
                w.write_record([
                    patient.patient_id.as_str(),
                    patient.patient_label.as_str(),
                    image.image_id.as_str(),
                    slice.as_str(),
                    image.true_label.as_str(),
                    run.to_string().as_str(),
                    p.to_string().as_str(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn parse_samples_file(path: &Path) -> Result<CohortDataset> {
    let file = std::fs::File::open(path).map_err(Error::file(path))?;
    read_samples(std::io::BufReader::new(file))
}

pub fn serialize_samples_file(dataset: &CohortDataset, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, |w| write_samples(dataset, w))
}

pub fn to_csv_string(dataset: &CohortDataset) -> String {
    let mut buf = Vec::new();
    write_samples(dataset, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}
